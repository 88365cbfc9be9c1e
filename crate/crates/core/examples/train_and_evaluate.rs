//! Forge a toy dataset, impair it in memory, split it, then train and
//! evaluate one scheme on every fold.
//!
//! cargo run --release --example train_and_evaluate -- [binary|multi] [fsr] [uf]

use std::time::Instant;

use synthdetect::eval::evaluate_images;
use synthdetect::forge::{synth_images, ToySpec};
use synthdetect::impair::{apply_impairment, ImpairmentConfig};
use synthdetect::model::{HeadMode, ModelConfig, Scheme};
use synthdetect::rng::derive_rng;
use synthdetect::split::assign_folds;
use synthdetect::train::{train_fold_images, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let head = if args.iter().any(|a| a == "binary") { HeadMode::Binary } else { HeadMode::MultiClass };
    let scheme = Scheme::new(
        head,
        args.iter().any(|a| a == "fsr"),
        head == HeadMode::MultiClass && args.iter().any(|a| a == "uf"),
    );

    let spec = ToySpec::default();
    let entries = spec.entries()?;
    let taxonomy = spec.taxonomy()?;
    let impair = ImpairmentConfig::scaled_to(spec.image_size).with_seed(spec.seed);
    let t0 = Instant::now();
    let images = synth_images(&spec, &entries, 1)
        .iter()
        .zip(&entries)
        .map(|(img, e)| {
            let out = apply_impairment(img, &impair, &mut derive_rng(impair.master_seed, &e.entry_id), &e.entry_id)?;
            Ok(image::load_from_memory(&out.jpeg)?.to_rgb8())
        })
        .collect::<Result<Vec<_>, Box<dyn std::error::Error>>>()?;
    println!("forged and impaired {} images in {:.1?}", images.len(), t0.elapsed());

    let assignment = assign_folds(&entries, &taxonomy, spec.n_folds, spec.seed)?;
    let base = ModelConfig::toy(HeadMode::MultiClass, taxonomy.num_classes());
    let cfg = TrainConfig::toy();
    for fold in 0..assignment.n_folds {
        let t = Instant::now();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (e, img) in entries.iter().zip(&images) {
            let side = if assignment.fold_of(&e.entry_id) == Some(fold) { &mut test } else { &mut train };
            side.push((e.clone(), img));
        }
        let (train_e, train_i): (Vec<_>, Vec<_>) = train.into_iter().unzip();
        let (test_e, test_i): (Vec<_>, Vec<_>) = test.into_iter().unzip();
        let out = train_fold_images(&train_e, &train_i, &taxonomy, scheme, &base, &cfg, fold)?;
        let report = evaluate_images(&out.checkpoint, &test_e, &test_i, &taxonomy, fold, 64)?;
        println!("fold {fold} trained in {:.1?}", t.elapsed());
        print!("{}", report.to_text());
    }
    Ok(())
}
