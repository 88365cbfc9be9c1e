mod common;

use image::{Rgb, RgbImage};
use proptest::prelude::*;
use common::{synthetic_manifest, tree_digest};
use rand::RngCore;
use synthdetect::impair::{
    apply_impairment, build_dataset, sample_crop, BuildOptions, CropBox, ImpairmentConfig, SKIP_REPORT_FILE,
};
use synthdetect::rng::derive_rng;
use synthdetect::sha256_hex;

fn gradient(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, ((x + y) / 4 % 256) as u8]))
}

#[test]
fn stream_examples() {
    let draws = |seed, key| {
        let mut r = derive_rng(seed, key);
        (0..10).map(|_| r.next_u64()).collect::<Vec<_>>()
    };
    assert_eq!(draws(42, "a"), draws(42, "a"));
    assert_ne!(draws(42, "a"), draws(42, "b"));
    assert_ne!(draws(42, "a"), draws(43, "a"));
}

#[test]
fn golden_crop_box() {
    let b = sample_crop(512, 512, &ImpairmentConfig::default(), &mut derive_rng(0, "e0")).unwrap();
    assert_eq!(b, CropBox { x: 149, y: 285, w: 331, h: 212 });
}

#[test]
fn golden_impairment_digest() {
    let cfg = ImpairmentConfig::default();
    let out = apply_impairment(&gradient(512, 512), &cfg, &mut derive_rng(0, "e0"), "e0").unwrap();
    assert_eq!(sha256_hex(&out.jpeg), "674e2f016f6217ab152416aaf0149aac36d449c725a000fe0311928050190ade");
}

#[test]
fn golden_build_manifest_digest() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic_manifest(dir.path(), 100, 7, 160, 320);
    let cfg = ImpairmentConfig::default().with_seed(7);
    let out = dir.path().join("out");
    build_dataset(&m, dir.path(), &cfg, &out, &BuildOptions { workers: 2, ..Default::default() }).unwrap();
    let text = std::fs::read(out.join("manifest.tsv")).unwrap();
    assert_eq!(sha256_hex(&text), "4b943af77205160b53c232c920470289051804b36ca97f6d72b05b8c844e380e");
    assert_eq!(tree_digest(&out.join("images")), "5a105d2ce1d76690285230d283ce74992b1efcec915abaa77c22729dd52be60c");
}

#[test]
fn crop_law_on_large_frames() {
    let cfg = ImpairmentConfig::default();
    let mut rng = derive_rng(1, "law");
    for _ in 0..10_000 {
        let b = sample_crop(4096, 4096, &cfg, &mut rng).unwrap();
        assert!(b.w.min(b.h) >= 160 && b.w.max(b.h) <= 2048, "{b:?}");
        assert!(f64::from(b.w.min(b.h)) / f64::from(b.w.max(b.h)) >= 5.0 / 8.0 - 1e-9, "{b:?}");
    }
}

#[test]
fn every_output_is_target_sized_and_quality_in_range() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic_manifest(dir.path(), 40, 3, 160, 300);
    let cfg = ImpairmentConfig::default().with_seed(3);
    let out = build_dataset(&m, dir.path(), &cfg, &dir.path().join("out"), &BuildOptions { workers: 1, ..Default::default() })
        .unwrap();
    assert_eq!(out.manifest.entries.len(), 40);
    assert!(out.qualities.iter().all(|q| (65..=100).contains(q)));
    for e in &out.manifest.entries {
        let img = image::open(dir.path().join("out").join(&e.path)).unwrap();
        assert_eq!((img.width(), img.height()), (200, 200));
    }
}

#[test]
fn worker_count_and_reruns_do_not_change_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic_manifest(dir.path(), 50, 5, 160, 260);
    let cfg = ImpairmentConfig::default().with_seed(5);
    let run = |name: &str, workers| {
        let out = dir.path().join(name);
        build_dataset(&m, dir.path(), &cfg, &out, &BuildOptions { workers, ..Default::default() }).unwrap();
        tree_digest(&out)
    };
    let one = run("w1", 1);
    assert_eq!(one, run("w8", 8));
    assert_eq!(one, run("w1", 1));
}

#[test]
fn small_and_unreadable_sources_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = synthetic_manifest(dir.path(), 4, 9, 160, 200);
    gradient(100, 100).save(dir.path().join("src/tiny.png")).unwrap();
    let mut tiny = m.entries[0].clone();
    tiny.entry_id = "tiny".into();
    tiny.path = "src/tiny.png".into();
    let mut missing = m.entries[0].clone();
    missing.entry_id = "missing".into();
    missing.path = "src/nope.png".into();
    m.entries.extend([tiny, missing]);
    let out_dir = dir.path().join("out");
    let out = build_dataset(&m, dir.path(), &ImpairmentConfig::default(), &out_dir, &BuildOptions::default()).unwrap();
    assert_eq!(out.manifest.entries.len(), 4);
    let report = std::fs::read_to_string(out_dir.join(SKIP_REPORT_FILE)).unwrap();
    assert!(report.lines().any(|l| l.starts_with("tiny\timage-too-small")), "{report}");
    assert!(report.lines().any(|l| l.starts_with("missing\t")), "{report}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn crop_box_is_legal(w in 1u32..3000, h in 1u32..3000, lo in 1u32..300, span in 0u32..3000,
                         num in 1u32..8, seed in any::<u64>()) {
        let cfg = ImpairmentConfig { crop_min: lo, crop_max: lo + span, crop_ratio_num: num, crop_ratio_den: 8, ..Default::default() };
        match sample_crop(w, h, &cfg, &mut derive_rng(seed, "p")) {
            Ok(b) => {
                prop_assert!(b.w >= lo && b.h >= lo && b.w <= cfg.crop_max && b.h <= cfg.crop_max);
                prop_assert!(b.x + b.w <= w && b.y + b.h <= h);
                prop_assert!(u64::from(b.w.min(b.h)) * 8 >= u64::from(b.w.max(b.h)) * u64::from(num));
            }
            Err(_) => prop_assert!(w < lo || h < lo),
        }
    }

    #[test]
    fn output_decodes_to_target(w in 48u32..120, h in 48u32..120, target in 8u32..64, seed in any::<u64>()) {
        let cfg = ImpairmentConfig { crop_min: 40, crop_max: 200, target_size: target, ..Default::default() };
        let out = apply_impairment(&gradient(w, h), &cfg, &mut derive_rng(seed, "o"), "o").unwrap();
        let img = image::load_from_memory(&out.jpeg).unwrap();
        prop_assert_eq!((img.width(), img.height()), (target, target));
        prop_assert!((65..=100).contains(&out.quality));
    }
}
