//! Fixtures and oracles shared by the integration tests and the
//! acceptance report.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use image::{Rgb, RgbImage};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rand::RngCore;
use synthdetect::dataset::{ClassTaxonomy, GeneratorFamily, GeneratorInfo, Manifest, ManifestEntry, Manipulation};
use synthdetect::model::{Act, Detector, HeadMode, ModelConfig};
use synthdetect::rng::{derive_rng, Draw};
use synthdetect::sha256_hex;
use synthdetect::split::{assign_folds, fold_view};
use synthdetect::train::smoothed_ce_batch;

/// 5 seen generators plus `n_uf` unseen ones. The first six entries of
/// every source are dealt in turn so each class and UF group can fill any
/// fold count up to six; the rest are random, giving uneven class sizes.
pub fn random_dataset(seed: u64, n: usize, n_uf: usize) -> (Vec<ManifestEntry>, ClassTaxonomy) {
    let gens = (0..5 + n_uf)
        .map(|g| GeneratorInfo::new(format!("g{g}"), GeneratorFamily::Diffusion, Manipulation::Full, g < 5))
        .collect();
    let tax = ClassTaxonomy::from_generators(gens).unwrap();
    let mut rng = derive_rng(seed, "dataset");
    let entries = (0..n)
        .map(|i| {
            let sources = 6 + n_uf;
            let g = if i < 6 * sources { i % sources } else { rng.uniform_usize(0, sources - 1) };
            let (class_index, generator_id) = match g {
                0 => (tax.real_index(), None),
                g if g <= 5 => (tax.class_for_generator(&format!("g{}", g - 1)).unwrap(), Some(format!("g{}", g - 1))),
                g => (tax.uf_index(), Some(format!("g{}", g - 1))),
            };
            ManifestEntry {
                entry_id: format!("x{:08x}-{i}", rng.next_u32()),
                path: format!("{i}.png"),
                class_index,
                generator_id,
                category: String::new(),
                source: String::new(),
                fold: None,
            }
        })
        .collect();
    (entries, tax)
}

pub fn check_invariants(entries: &[ManifestEntry], tax: &ClassTaxonomy, folds: usize, seed: u64) {
    let a = assign_folds(entries, tax, folds, seed).unwrap();
    assert_eq!(a.assignment.len(), entries.len());
    assert!(a.assignment.values().all(|&f| f < folds));

    let mut per_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for e in entries.iter().filter(|e| e.class_index != tax.uf_index()) {
        per_class.entry(e.class_index).or_insert_with(|| vec![0; folds])[a.fold_of(&e.entry_id).unwrap()] += 1;
    }
    for (c, counts) in &per_class {
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "class {c}: {counts:?}");
    }

    for fold in 0..folds {
        let (train, test) = fold_view(entries, &a, fold);
        assert_eq!(train.len() + test.len(), entries.len());
        let uf_gens = |side: &[&ManifestEntry]| -> BTreeSet<String> {
            side.iter()
                .filter(|e| e.class_index == tax.uf_index())
                .filter_map(|e| e.generator_id.clone())
                .collect()
        };
        assert!(uf_gens(&train).is_disjoint(&uf_gens(&test)), "fold {fold}");
    }

    assert_eq!(assign_folds(entries, tax, folds, seed).unwrap(), a);
    let mut shuffled = entries.to_vec();
    derive_rng(seed, "shuffle").shuffle(&mut shuffled);
    assert_eq!(assign_folds(&shuffled, tax, folds, seed).unwrap().assignment, a.assignment);
}

pub fn impair_taxonomy() -> ClassTaxonomy {
    let gens = (0..3)
        .map(|g| GeneratorInfo::new(format!("g{g}"), GeneratorFamily::Gan, Manipulation::Full, g < 2))
        .collect();
    ClassTaxonomy::from_generators(gens).unwrap()
}

/// `n` entries with seeded sizes in `[min_side, max_side]`, written as PNGs
/// under `root`.
pub fn synthetic_manifest(root: &Path, n: usize, seed: u64, min_side: u32, max_side: u32) -> Manifest {
    let tax = impair_taxonomy();
    std::fs::create_dir_all(root.join("src")).unwrap();
    let entries = (0..n)
        .map(|i| {
            let id = format!("s{i:04}");
            let mut rng = derive_rng(seed, &id);
            let w = rng.uniform_u64(u64::from(min_side), u64::from(max_side)) as u32;
            let h = rng.uniform_u64(u64::from(min_side), u64::from(max_side)) as u32;
            let tint = rng.uniform_u64(0, 255) as u8;
            let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x * 3 % 256) as u8, (y * 5 % 256) as u8, tint]));
            let path = format!("src/{id}.png");
            img.save(root.join(&path)).unwrap();
            let (class_index, generator_id) = match i % 4 {
                0 | 1 => (tax.real_index(), None),
                2 => (1, Some("g0".to_string())),
                _ => (tax.uf_index(), Some("g2".to_string())),
            };
            ManifestEntry {
                entry_id: id,
                path,
                class_index,
                generator_id,
                category: "test".into(),
                source: "synthetic".into(),
                fold: None,
            }
        })
        .collect();
    Manifest::new(tax, entries)
}

/// SHA-256 over every file under `dir`, in sorted relative-path order.
pub fn tree_digest(dir: &Path) -> String {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut all = Vec::new();
    for f in files {
        all.extend(f.strip_prefix(dir).unwrap().to_string_lossy().as_bytes());
        all.push(0);
        all.extend(std::fs::read(&f).unwrap());
    }
    sha256_hex(&all)
}

pub fn seven_class_taxonomy() -> ClassTaxonomy {
    let gens = (0..7)
        .map(|g| GeneratorInfo::new(format!("g{g}"), GeneratorFamily::Gan, Manipulation::Full, g < 5))
        .collect();
    ClassTaxonomy::from_generators(gens).unwrap()
}

pub fn random_input(n: usize, side: usize, seed: u64) -> Act<f64> {
    let mut rng = derive_rng(seed, "input");
    Act::from_vec(n, side, side, 3, (0..n * side * side * 3).map(|_| rng.normal()).collect())
}

pub fn loss(model: &Detector<f64>, x: &Act<f64>, labels: &[usize]) -> f64 {
    smoothed_ce_batch(&model.forward(x).unwrap(), labels, 0.05).unwrap().0
}

/// Central differences in `f64` on 24 scalars, the first two forced into
/// the stem and head kernels. Layer scale is raised from its tiny default so
/// block weights carry measurable gradient.
pub fn grad_check(fsr: bool) -> f64 {
    let cfg = ModelConfig {
        layer_scale_init: 0.5,
        ..ModelConfig::toy(HeadMode::MultiClass, 7).with_fsr(fsr)
    };
    let mut model = Detector::<f64>::new(cfg, seven_class_taxonomy(), 3).unwrap();
    let x = random_input(8, 32, 1);
    let labels = [0, 1, 2, 3, 4, 5, 6, 0];
    let (logits, cache) = model.forward_train(&x).unwrap();
    let (_, dl) = smoothed_ce_batch(&logits, &labels, 0.05).unwrap();
    let grads = model.backward(&cache, &dl);

    let mut rng = derive_rng(7, "pick");
    let n_params = model.params().len();
    let forced: Vec<usize> = ["stem.conv.weight", "head.fc.weight"]
        .iter()
        .map(|name| model.params().iter().position(|p| p.name == *name).expect("param"))
        .collect();
    let mut worst: f64 = 0.0;
    for k in 0..24 {
        let t = forced.get(k).copied().unwrap_or_else(|| rng.uniform_usize(0, n_params - 1));
        let i = rng.uniform_usize(0, model.params()[t].data.len() - 1);
        let h = 1e-5;
        let orig = model.params()[t].data[i];
        model.params_mut()[t].data[i] = orig + h;
        let up = loss(&model, &x, &labels);
        model.params_mut()[t].data[i] = orig - h;
        let down = loss(&model, &x, &labels);
        model.params_mut()[t].data[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let an = grads.tensors[t][i];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7);
        worst = worst.max(rel);
    }
    worst
}

/// Fixed-point reals with 60 decimal digits, enough that the oracle's own
/// rounding is far below the 1e-6 tolerance.
pub mod fixed {
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::{Signed, ToPrimitive, Zero};

    pub fn scale() -> BigInt {
        BigInt::from(10).pow(60)
    }

    pub fn from_f64(v: f64) -> BigInt {
        let r = BigRational::from_float(v).expect("finite") * BigRational::from_integer(scale());
        r.round().to_integer()
    }

    pub fn to_f64(v: &BigInt) -> f64 {
        BigRational::new(v.clone(), scale()).to_f64().expect("finite")
    }

    fn mul(a: &BigInt, b: &BigInt) -> BigInt {
        a * b / scale()
    }

    fn div(a: &BigInt, b: &BigInt) -> BigInt {
        a * scale() / b
    }

    /// `e^x`: halve the argument until it is below 2^-10, sum the Taylor
    /// series, then square back.
    pub fn exp(x: &BigInt) -> BigInt {
        let s = scale();
        let mut halvings = 0u32;
        let mut r = x.clone();
        while r.abs() > &s >> 10 {
            r /= 2;
            halvings += 1;
        }
        let (mut term, mut sum) = (s.clone(), s.clone());
        for k in 1..60 {
            term = mul(&term, &r) / k;
            if term.is_zero() {
                break;
            }
            sum += &term;
        }
        for _ in 0..halvings {
            sum = mul(&sum, &sum);
        }
        sum
    }

    /// `ln y = k ln 2 + 2 atanh((m-1)/(m+1))` with `y = m 2^k`, `m ∈ [1,2)`.
    pub fn ln(y: &BigInt) -> BigInt {
        let s = scale();
        assert!(y.is_positive());
        let atanh2 = |z: &BigInt| {
            let z2 = mul(z, z);
            let (mut p, mut sum) = (z.clone(), BigInt::zero());
            let mut k = 1u32;
            while !p.is_zero() {
                sum += &p / k;
                p = mul(&p, &z2);
                k += 2;
            }
            sum * 2
        };
        let ln2 = atanh2(&div(&s, &(&s * 3)));
        let (mut m, mut k) = (y.clone(), 0i64);
        while m >= &s * 2 {
            m /= 2;
            k += 1;
        }
        while m < s {
            m *= 2;
            k -= 1;
        }
        let z = div(&(&m - &s), &(&m + &s));
        ln2 * k + atanh2(&z)
    }

    /// `lse(v) - Σ q_c v_c` with `q = (1-ε) onehot + ε/K`.
    pub fn smoothed_ce(logits: &[f64], y: usize, eps: f64) -> f64 {
        let v: Vec<BigInt> = logits.iter().map(|&l| from_f64(l)).collect();
        let k = BigInt::from(v.len());
        let e = from_f64(eps);
        let s = scale();
        let sum = v.iter().map(exp).fold(BigInt::zero(), |a, b| a + b);
        let lse = ln(&sum);
        let mean: BigInt = v.iter().fold(BigInt::zero(), |a, b| a + b) / &k;
        let target = mul(&(&s - &e), &v[y]) + mul(&e, &mean);
        to_f64(&(lse - target))
    }
}

/// Mean recall over classes with support, in exact rational arithmetic.
pub fn recall_mean_oracle(truth: &[usize], pred: &[usize], n: usize) -> BigRational {
    let mut sum = BigRational::zero();
    let mut classes = 0;
    for c in 0..n {
        let support = truth.iter().filter(|&&t| t == c).count();
        if support == 0 {
            continue;
        }
        let hits = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p == c).count();
        sum += BigRational::new(BigInt::from(hits), BigInt::from(support));
        classes += 1;
    }
    sum / BigRational::from_integer(BigInt::from(classes))
}

pub fn random_labels(seed: u64) -> (Vec<usize>, Vec<usize>, usize) {
    let mut rng = derive_rng(seed, "labels");
    let n_classes = rng.uniform_usize(2, 8);
    let len = rng.uniform_usize(n_classes, 300);
    let mut truth: Vec<usize> = (0..len).map(|i| if i < n_classes { i } else { rng.uniform_usize(0, n_classes - 1) }).collect();
    rng.shuffle(&mut truth);
    let pred = truth
        .iter()
        .map(|&t| if rng.bernoulli(0.6) { t } else { rng.uniform_usize(0, n_classes - 1) })
        .collect();
    (truth, pred, n_classes)
}

pub fn random_probs(rng: &mut impl Draw, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.unit_f64() + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}
