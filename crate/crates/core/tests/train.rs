use image::{Rgb, RgbImage};
use proptest::prelude::*;
use synthdetect::dataset::{ClassTaxonomy, GeneratorFamily, GeneratorInfo, ManifestEntry, Manipulation};
use synthdetect::model::{Detector, HeadMode, ModelConfig, Scheme};
use synthdetect::rng::{derive_rng, Draw};
use synthdetect::sha256_hex;
use synthdetect::train::{
    augment, hflip, lr_at, to_input, train_fold_images, train_step, Adam, AugmentConfig, TrainConfig, TrainError,
};

fn taxonomy() -> ClassTaxonomy {
    let gens = (0..4)
        .map(|g| GeneratorInfo::new(format!("g{g}"), GeneratorFamily::Gan, Manipulation::Full, g < 2))
        .collect();
    ClassTaxonomy::from_generators(gens).unwrap()
}

fn noise_image(side: u32, seed: u64, key: &str) -> RgbImage {
    let mut rng = derive_rng(seed, key);
    RgbImage::from_fn(side, side, |_, _| {
        Rgb([rng.uniform_u64(0, 255) as u8, rng.uniform_u64(0, 255) as u8, rng.uniform_u64(0, 255) as u8])
    })
}

fn small_model(classes: usize) -> Detector<f32> {
    let cfg = ModelConfig {
        input_size: 32,
        ..ModelConfig::toy(HeadMode::MultiClass, classes).with_stages(&[1, 1], &[16, 32])
    };
    Detector::new(cfg, taxonomy(), 0).unwrap()
}

#[test]
fn schedule_examples() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_at(0, &cfg), 1e-4);
    assert!((lr_at(1, &cfg) - 9e-5).abs() < 1e-18);
    let flat = TrainConfig {
        decay_gamma: 1.0,
        ..TrainConfig::default()
    };
    assert!((0..50).all(|e| lr_at(e, &flat) == 1e-4));
    assert!((1..60).all(|e| lr_at(e, &cfg) <= lr_at(e - 1, &cfg)));
}

#[test]
fn full_scale_defaults() {
    let cfg = TrainConfig::default();
    assert_eq!((cfg.lr0, cfg.decay_gamma, cfg.label_smoothing), (1e-4, 0.9, 0.05));
    assert_eq!((cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps), (0.9, 0.999, 1e-8));
    assert!(cfg.validate().is_ok());
}

#[test]
fn golden_augment_digest() {
    let img = RgbImage::from_fn(48, 40, |x, y| Rgb([(x * 5) as u8, (y * 6) as u8, ((x * y) % 256) as u8]));
    let cfg = AugmentConfig {
        affine_p: 1.0,
        photometric_p: 1.0,
        hflip_p: 1.0,
        vflip_p: 1.0,
        cutout_p: 1.0,
        ..AugmentConfig::default()
    };
    let out = augment(&img, &cfg, &mut derive_rng(0, "golden"));
    assert_eq!(sha256_hex(out.as_raw()), "24bcc715cfb8506712ab1f6e30252e339580f44e495b1efbb36af92b08ed2703");
}

#[test]
fn forced_hflip_twice_is_identity() {
    let img = noise_image(17, 1, "flip");
    let cfg = AugmentConfig {
        hflip: true,
        hflip_p: 1.0,
        ..AugmentConfig::disabled()
    };
    let once = augment(&img, &cfg, &mut derive_rng(0, "a"));
    assert_eq!(once, hflip(&img));
    assert_eq!(augment(&once, &cfg, &mut derive_rng(0, "b")), img);
}

#[test]
fn adam_with_zero_lr_leaves_weights_bit_identical() {
    let mut model = small_model(taxonomy().num_classes());
    let before: Vec<Vec<u32>> = model.params().iter().map(|p| p.data.iter().map(|v| v.to_bits()).collect()).collect();
    let mut adam = Adam::new(&model, 0.9, 0.999, 1e-8);
    let batch: Vec<RgbImage> = (0..4).map(|i| noise_image(32, 2, &format!("z{i}"))).collect();
    for _ in 0..3 {
        train_step(&mut model, &mut adam, &to_input(&batch), &[0, 1, 2, 3], 0.05, 0.0).unwrap();
    }
    let after: Vec<Vec<u32>> = model.params().iter().map(|p| p.data.iter().map(|v| v.to_bits()).collect()).collect();
    assert_eq!(before, after);
    assert_eq!(adam.steps(), 3);
}

#[test]
fn overfit_fixed_batch() {
    let mut model = small_model(taxonomy().num_classes());
    let mut adam = Adam::new(&model, 0.9, 0.999, 1e-8);
    let batch: Vec<RgbImage> = (0..8).map(|i| noise_image(32, 3, &format!("o{i}"))).collect();
    let x = to_input(&batch);
    let labels = [0, 1, 2, 3, 0, 1, 2, 3];
    let first = train_step(&mut model, &mut adam, &x, &labels, 0.05, 1e-3).unwrap();
    let mut last = first;
    for _ in 1..200 {
        last = train_step(&mut model, &mut adam, &x, &labels, 0.05, 1e-3).unwrap();
    }
    assert!(last <= 0.5 * first, "loss {first} -> {last}");
}

fn entries(per_class: usize) -> (Vec<ManifestEntry>, Vec<RgbImage>) {
    let tax = taxonomy();
    let mut es = Vec::new();
    let mut imgs = Vec::new();
    let sources: [(usize, Option<&str>); 4] = [(0, None), (1, Some("g0")), (2, Some("g1")), (tax.uf_index(), Some("g2"))];
    for (class_index, gen) in sources {
        for i in 0..per_class {
            let id = format!("c{class_index}-{i}");
            imgs.push(noise_image(32, 4, &id));
            es.push(ManifestEntry {
                entry_id: id.clone(),
                path: format!("{id}.png"),
                class_index,
                generator_id: gen.map(String::from),
                category: String::new(),
                source: String::new(),
                fold: None,
            });
        }
    }
    (es, imgs)
}

#[test]
fn log_has_one_row_per_epoch_and_is_deterministic() {
    let (es, imgs) = entries(6);
    let base = ModelConfig {
        input_size: 32,
        ..ModelConfig::toy(HeadMode::MultiClass, 4).with_stages(&[1], &[8])
    };
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let scheme = Scheme::new(HeadMode::MultiClass, true, true);
    let a = train_fold_images(&es, &imgs, &taxonomy(), scheme, &base, &cfg, 0).unwrap();
    assert_eq!(a.log.len(), 3);
    assert_eq!(a.n_train + a.n_val, es.len());
    let b = train_fold_images(&es, &imgs, &taxonomy(), scheme, &base, &cfg, 0).unwrap();
    assert_eq!(a.log, b.log);
    let bits = |c: &synthdetect::model::Checkpoint| c.model.params().iter().flat_map(|p| p.data.iter().map(|v| v.to_bits())).collect::<Vec<u32>>();
    assert_eq!(bits(&a.checkpoint), bits(&b.checkpoint));
}

#[test]
fn multiclass_needs_every_trained_class() {
    let (es, imgs) = entries(4);
    let keep: Vec<usize> = (0..es.len()).filter(|&i| es[i].class_index != 2).collect();
    let es: Vec<_> = keep.iter().map(|&i| es[i].clone()).collect();
    let imgs: Vec<_> = keep.iter().map(|&i| imgs[i].clone()).collect();
    let base = ModelConfig {
        input_size: 32,
        ..ModelConfig::toy(HeadMode::MultiClass, 4).with_stages(&[1], &[8])
    };
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let err = train_fold_images(&es, &imgs, &taxonomy(), Scheme::new(HeadMode::MultiClass, false, false), &base, &cfg, 0)
        .unwrap_err();
    assert!(matches!(err, TrainError::EmptyClass(_)), "{err}");
    let binary = Scheme::new(HeadMode::Binary, false, false);
    assert!(train_fold_images(&es, &imgs, &taxonomy(), binary, &base, &cfg, 0).is_ok());
}

fn arb_config() -> impl Strategy<Value = AugmentConfig> {
    let probs = proptest::array::uniform5(0.0f64..=1.0);
    let flags = proptest::array::uniform5(any::<bool>());
    let mags = (0.0f64..45.0, 0.0f64..0.3, 0.5f64..1.0, 1.0f64..1.6, 0.0f64..20.0);
    let photo = (0.0f64..0.5, 0.0f64..0.9, 0.0f64..0.5, 0usize..4, 0.0f64..=1.0);
    (probs, flags, mags, photo).prop_map(|(p, f, m, ph)| AugmentConfig {
        affine: f[0],
        affine_p: p[0],
        rotate_deg: m.0,
        shift_frac: m.1,
        scale_min: m.2,
        scale_max: m.3,
        shear_deg: m.4,
        photometric: f[1],
        photometric_p: p[1],
        brightness: ph.0,
        contrast: ph.1,
        hue: ph.2,
        hflip: f[2],
        hflip_p: p[2],
        vflip: f[3],
        vflip_p: p[3],
        cutout: f[4],
        cutout_p: p[4],
        cutout_count: ph.3,
        cutout_frac: ph.4,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn augment_keeps_shape_and_is_seeded(cfg in arb_config(), w in 1u32..40, h in 1u32..40, seed in any::<u64>()) {
        prop_assert!(cfg.validate().is_ok());
        let img = noise_image(w.max(h), seed, "src");
        let img = image::imageops::crop_imm(&img, 0, 0, w, h).to_image();
        let a = augment(&img, &cfg, &mut derive_rng(seed, "aug"));
        prop_assert_eq!(a.dimensions(), (w, h));
        prop_assert_eq!(&a, &augment(&img, &cfg, &mut derive_rng(seed, "aug")));
        prop_assert_eq!(augment(&img, &AugmentConfig::disabled(), &mut derive_rng(seed, "aug")), img);
    }
}
