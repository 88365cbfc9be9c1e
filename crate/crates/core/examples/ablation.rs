//! Six-row ablation on the default toy dataset: forge, impair, split, then
//! train and evaluate every scheme on every fold.
//!
//! cargo run --release --example ablation -- [out_dir]

use std::path::PathBuf;
use std::time::Instant;

use synthdetect::eval::{run_ablation, AblationConfig};
use synthdetect::forge::{synth_dataset, ToySpec};
use synthdetect::impair::{build_dataset, BuildOptions, ImpairmentConfig};
use synthdetect::model::{HeadMode, ModelConfig};
use synthdetect::split::assign_folds;
use synthdetect::train::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let tmp = tempfile::tempdir()?;
    let out: PathBuf = std::env::args().nth(1).map_or_else(|| tmp.path().to_path_buf(), PathBuf::from);
    let workers = std::thread::available_parallelism().map_or(1, usize::from);
    let t0 = Instant::now();

    let spec = ToySpec::default();
    let raw = synth_dataset(&spec, &out.join("raw"), workers, &[])?;
    let impair = ImpairmentConfig::scaled_to(spec.image_size).with_seed(spec.seed);
    let built = build_dataset(
        &raw,
        &out.join("raw"),
        &impair,
        &out.join("impaired"),
        &BuildOptions {
            workers,
            extra_meta: Vec::new(),
        },
    )?;
    let assignment = assign_folds(&built.manifest.entries, &built.manifest.taxonomy, spec.n_folds, spec.seed)?;

    let cfg = AblationConfig {
        base_model: ModelConfig::toy(HeadMode::MultiClass, built.manifest.taxonomy.num_classes()),
        train: TrainConfig { workers, ..TrainConfig::toy() },
        folds: None,
        eval_batch: 64,
        workers,
    };
    let table = run_ablation(&built.manifest, &out.join("impaired"), &assignment, &cfg, Vec::new())?;
    print!("{}", table.to_text());
    println!("total {:.1?}", t0.elapsed());
    Ok(())
}
