//! Command-line front end.
//!
//! Every setting lives in one flat, dotted key space (`impair.qmax`,
//! `train.lr0`, `aug.cutout_p`, ...). Values come from the built-in defaults,
//! then an optional `--config` file of `key = value` lines, then flags; each
//! effective value remembers which layer set it. Unknown keys and flags are
//! usage errors (exit 2); runtime failures exit 1.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::dataset::{read_manifest, Manifest, ManifestEntry, MANIFEST_VERSION};
use crate::eval::{evaluate_fold, run_ablation, AblationConfig, ABLATION_SCHEMES};
use crate::forge::{synth_dataset, ToySpec, MANIFEST_FILE};
use crate::impair::{build_dataset, BuildOptions, ChromaSubsampling, ImpairmentConfig};
use crate::model::{load_checkpoint, save_checkpoint, HeadMode, ModelConfig, Scheme, CHECKPOINT_VERSION};
use crate::split::{assign_folds, read_assignment, write_assignment, FoldAssignment, ASSIGNMENT_VERSION};
use crate::train::{log_csv, train_fold, AugmentConfig, TrainConfig};
use crate::TOOL_VERSION;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "SYNTHDETECT_WORKERS";

pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_TEXT: &str = "ablation.txt";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid value for {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Invalid { .. } | CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Default,
    File,
    Flag,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Default => "default",
            Provenance::File => "file",
            Provenance::Flag => "flag",
        }
    }
}

/// Every recognised key with its default value.
fn default_entries() -> Vec<(String, String)> {
    let toy = ToySpec::default();
    let imp = ImpairmentConfig::default();
    let train = TrainConfig::default();
    let model = ModelConfig::toy(HeadMode::MultiClass, 0);
    let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    let mut d: Vec<(String, String)> = vec![
        ("seed".into(), "0".into()),
        ("workers".into(), default_workers().to_string()),
        ("toy.generators".into(), toy.n_generators.to_string()),
        ("toy.seen".into(), toy.n_seen.to_string()),
        ("toy.folds".into(), toy.n_folds.to_string()),
        ("toy.per_class".into(), toy.images_per_class.to_string()),
        ("toy.size".into(), toy.image_size.to_string()),
        ("toy.seed".into(), toy.seed.to_string()),
        ("toy.amplitude".into(), toy.amplitude.to_string()),
        ("toy.texture_std".into(), toy.texture_std.to_string()),
        ("toy.texture_cutoff".into(), toy.texture_cutoff.to_string()),
        ("toy.noise_std".into(), toy.noise_std.to_string()),
        ("toy.partial_every".into(), toy.partial_every.to_string()),
        ("toy.partial_min_frac".into(), toy.partial_min_frac.to_string()),
        ("impair.ratio".into(), format!("{}/{}", imp.crop_ratio_num, imp.crop_ratio_den)),
        ("impair.crop_min".into(), imp.crop_min.to_string()),
        ("impair.crop_max".into(), imp.crop_max.to_string()),
        ("impair.target".into(), imp.target_size.to_string()),
        ("impair.qmin".into(), imp.q_min.to_string()),
        ("impair.qmax".into(), imp.q_max.to_string()),
        ("impair.subsampling".into(), imp.subsampling.to_string()),
        ("split.folds".into(), "4".into()),
        ("model.mode".into(), "multi".into()),
        ("model.fsr".into(), "false".into()),
        ("model.uf".into(), "false".into()),
        ("model.depths".into(), list(&model.stage_depths)),
        ("model.widths".into(), list(&model.stage_widths)),
        ("model.layer_scale_init".into(), model.layer_scale_init.to_string()),
        ("model.init".into(), String::new()),
        ("train.fold".into(), "0".into()),
        ("train.lr0".into(), train.lr0.to_string()),
        ("train.decay_gamma".into(), train.decay_gamma.to_string()),
        ("train.epochs".into(), train.epochs.to_string()),
        ("train.batch_size".into(), train.batch_size.to_string()),
        ("train.label_smoothing".into(), train.label_smoothing.to_string()),
        ("train.val_fraction".into(), train.val_fraction.to_string()),
        ("train.adam_beta1".into(), train.adam_beta1.to_string()),
        ("train.adam_beta2".into(), train.adam_beta2.to_string()),
        ("train.adam_eps".into(), train.adam_eps.to_string()),
        ("eval.batch".into(), "64".into()),
        ("ablate.folds".into(), "all".into()),
    ];
    let aug = serde_json::to_value(AugmentConfig::default()).expect("serializable");
    for (k, v) in aug.as_object().expect("struct") {
        d.push((format!("aug.{k}"), v.to_string()));
    }
    d
}

fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or(1)
}

/// Effective configuration with per-key provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, (String, Provenance)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: default_entries()
                .into_iter()
                .map(|(k, v)| (k, (v, Provenance::Default)))
                .collect(),
        }
    }
}

impl RunConfig {
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    pub fn provenance(&self, key: &str) -> Option<Provenance> {
        self.values.get(key).map(|&(_, p)| p)
    }

    /// Set a known key; unknown keys are usage errors.
    pub fn set(&mut self, key: &str, value: &str, from: Provenance) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = (value.to_string(), from);
                Ok(())
            }
            None => Err(CliError::Usage(format!("unknown config key `{key}`"))),
        }
    }

    /// Apply a config file body: `key = value` lines, `#` comments, blank
    /// lines ignored.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim(), Provenance::File)
                .map_err(|e| CliError::Usage(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key).ok_or_else(|| CliError::Usage(format!("unknown config key `{key}`")))?;
        raw.parse().map_err(|e: T::Err| CliError::Invalid {
            field: key.to_string(),
            message: format!("`{raw}`: {e}"),
        })
    }

    fn list(&self, key: &str) -> Result<Vec<usize>, CliError> {
        self.raw(key)
            .unwrap_or_default()
            .split(',')
            .map(|s| {
                s.trim().parse().map_err(|e| CliError::Invalid {
                    field: key.to_string(),
                    message: format!("`{s}`: {e}"),
                })
            })
            .collect()
    }

    /// Reproducibility header: tool and format versions, the command, then
    /// every effective key in sorted order.
    pub fn header(&self, command: &str, inputs: &[(&str, String)]) -> Vec<(String, String)> {
        let mut h = vec![
            ("tool".to_string(), format!("synthdetect {TOOL_VERSION}")),
            ("formats".into(), format_versions()),
            ("command".into(), command.to_string()),
        ];
        h.extend(inputs.iter().map(|(k, v)| (format!("input.{k}"), v.clone())));
        h.extend(self.values.iter().map(|(k, (v, _))| (k.clone(), v.clone())));
        h
    }

    /// `key=value (provenance)` lines for the log.
    pub fn describe(&self) -> String {
        self.values
            .iter()
            .map(|(k, (v, p))| format!("{k}={v} ({})\n", p.as_str()))
            .collect()
    }

    pub fn toy_spec(&self) -> Result<ToySpec, CliError> {
        let spec = ToySpec {
            n_generators: self.get("toy.generators")?,
            n_seen: self.get("toy.seen")?,
            n_folds: self.get("toy.folds")?,
            images_per_class: self.get("toy.per_class")?,
            image_size: self.get("toy.size")?,
            seed: self.get("toy.seed")?,
            amplitude: self.get("toy.amplitude")?,
            texture_std: self.get("toy.texture_std")?,
            texture_cutoff: self.get("toy.texture_cutoff")?,
            noise_std: self.get("toy.noise_std")?,
            partial_every: self.get("toy.partial_every")?,
            partial_min_frac: self.get("toy.partial_min_frac")?,
        };
        spec.validate().map_err(|e| CliError::Invalid {
            field: "toy".into(),
            message: e.to_string(),
        })?;
        Ok(spec)
    }

    pub fn impairment(&self) -> Result<ImpairmentConfig, CliError> {
        let ratio = self.raw("impair.ratio").unwrap_or_default();
        let bad_ratio = || CliError::Invalid {
            field: "impair.ratio".into(),
            message: format!("`{ratio}` is not of the form num/den"),
        };
        let (n, d) = ratio.split_once('/').ok_or_else(bad_ratio)?;
        let cfg = ImpairmentConfig {
            crop_ratio_num: n.trim().parse().map_err(|_| bad_ratio())?,
            crop_ratio_den: d.trim().parse().map_err(|_| bad_ratio())?,
            crop_min: self.get("impair.crop_min")?,
            crop_max: self.get("impair.crop_max")?,
            target_size: self.get("impair.target")?,
            q_min: self.get("impair.qmin")?,
            q_max: self.get("impair.qmax")?,
            master_seed: self.get("seed")?,
            subsampling: self.get::<ChromaSubsampling>("impair.subsampling")?,
        };
        cfg.validate().map_err(|e| match e {
            crate::impair::ImpairError::InvalidConfig { field, message } => CliError::Invalid {
                field: format!("impair.{field}"),
                message,
            },
            other => runtime(other),
        })?;
        Ok(cfg)
    }

    pub fn augment(&self) -> Result<AugmentConfig, CliError> {
        let mut obj = serde_json::to_value(AugmentConfig::default()).expect("serializable");
        for (k, slot) in obj.as_object_mut().expect("struct") {
            let key = format!("aug.{k}");
            let raw = self.raw(&key).unwrap_or_default();
            let invalid = |message: String| CliError::Invalid {
                field: key.clone(),
                message,
            };
            *slot = match slot {
                serde_json::Value::Bool(_) => serde_json::Value::Bool(self.get(&key)?),
                _ => {
                    let v: f64 = self.get(&key)?;
                    if slot.is_u64() {
                        if v < 0.0 || v.fract() != 0.0 {
                            return Err(invalid(format!("`{raw}` is not a non-negative integer")));
                        }
                        serde_json::Value::from(v as u64)
                    } else {
                        serde_json::Value::from(v)
                    }
                }
            };
        }
        let aug: AugmentConfig = serde_json::from_value(obj).map_err(runtime)?;
        aug.validate().map_err(|message| CliError::Invalid {
            field: "aug".into(),
            message,
        })?;
        Ok(aug)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            lr0: self.get("train.lr0")?,
            decay_gamma: self.get("train.decay_gamma")?,
            epochs: self.get("train.epochs")?,
            batch_size: self.get("train.batch_size")?,
            label_smoothing: self.get("train.label_smoothing")?,
            aug: self.augment()?,
            seed: self.get("seed")?,
            adam_beta1: self.get("train.adam_beta1")?,
            adam_beta2: self.get("train.adam_beta2")?,
            adam_eps: self.get("train.adam_eps")?,
            val_fraction: self.get("train.val_fraction")?,
            workers: self.get("workers")?,
        };
        cfg.validate().map_err(|e| CliError::Invalid {
            field: "train".into(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn scheme(&self) -> Result<Scheme, CliError> {
        let head = match self.raw("model.mode").unwrap_or_default() {
            "binary" => HeadMode::Binary,
            "multi" => HeadMode::MultiClass,
            other => {
                return Err(CliError::Invalid {
                    field: "model.mode".into(),
                    message: format!("`{other}` is not one of binary, multi"),
                })
            }
        };
        let uf: bool = self.get("model.uf")?;
        if uf && head == HeadMode::Binary {
            return Err(CliError::Invalid {
                field: "model.uf".into(),
                message: "the unseen-fake class needs the multi-class head".into(),
            });
        }
        Ok(Scheme::new(head, self.get("model.fsr")?, uf))
    }

    /// Backbone for `num_classes` taxonomy classes; head and stem stride are
    /// set per scheme later.
    pub fn base_model(&self, num_classes: usize, input_size: usize) -> Result<ModelConfig, CliError> {
        let cfg = ModelConfig {
            input_size,
            layer_scale_init: self.get("model.layer_scale_init")?,
            ..ModelConfig::toy(HeadMode::MultiClass, num_classes)
        }
        .with_stages(&self.list("model.depths")?, &self.list("model.widths")?);
        cfg.validate().map_err(|e| CliError::Invalid {
            field: "model".into(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }
}

pub fn format_versions() -> String {
    format!("manifest-v{MANIFEST_VERSION},assignment-v{ASSIGNMENT_VERSION},checkpoint-v{CHECKPOINT_VERSION}")
}

fn long_version() -> &'static str {
    Box::leak(format!("{TOOL_VERSION} ({})", format_versions()).into_boxed_str())
}

#[derive(Parser, Debug)]
#[command(
    name = "synthdetect",
    version = long_version(),
    about = "Synthetic image detection: impairment chain, hybrid cross-validation, detector training and evaluation",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Config file of `key = value` lines; flags override it
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads [default: $SYNTHDETECT_WORKERS or 1]
    #[arg(long)]
    workers: Option<usize>,
    /// Master seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Override any config key, e.g. `--set aug.cutout=false` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug, Clone, Default)]
struct TrainFlags {
    /// Epochs [default: 20]
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size [default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate [default: 1e-4]
    #[arg(long)]
    lr0: Option<f64>,
    /// Per-epoch learning-rate multiplier [default: 0.9]
    #[arg(long)]
    gamma: Option<f64>,
    /// Label smoothing epsilon [default: 0.05]
    #[arg(long)]
    label_smoothing: Option<f64>,
    /// Disable every augmentation family
    #[arg(long)]
    no_aug: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate the procedural toy dataset (PNG images + manifest.tsv)
    Toygen {
        #[arg(long)]
        out: PathBuf,
        /// Pseudo-generators [default: 7]
        #[arg(long)]
        generators: Option<usize>,
        /// Seen generators; the rest feed the unseen-fake class [default: 5]
        #[arg(long)]
        seen: Option<usize>,
        /// Images per class [default: 100]
        #[arg(long)]
        per_class: Option<usize>,
        /// Image side in pixels [default: 64]
        #[arg(long)]
        size: Option<u32>,
        /// Grating amplitude in 8-bit levels [default: 30]
        #[arg(long)]
        amplitude: Option<f64>,
        /// Fold count the dataset must support [default: 2]
        #[arg(long)]
        folds: Option<usize>,
        /// Dataset seed [default: 11]
        #[arg(long)]
        toy_seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Apply crop -> resize -> JPEG to every manifest entry
    Build {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Minimum crop side [default: 160]
        #[arg(long)]
        crop_min: Option<u32>,
        /// Maximum crop side [default: 2048]
        #[arg(long)]
        crop_max: Option<u32>,
        /// Aspect-ratio floor as num/den [default: 5/8]
        #[arg(long)]
        ratio: Option<String>,
        /// Output side [default: 200]
        #[arg(long)]
        target: Option<u32>,
        /// Lowest JPEG quality [default: 65]
        #[arg(long)]
        qmin: Option<u8>,
        /// Highest JPEG quality [default: 100]
        #[arg(long)]
        qmax: Option<u8>,
        #[command(flatten)]
        common: Common,
    },
    /// Hybrid K-fold / group K-fold split
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// Assignment file to write
        #[arg(long)]
        out: PathBuf,
        /// Fold count [default: 4]
        #[arg(long)]
        folds: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train one scheme on one fold
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
        /// Test fold; the others are trained on [default: 0]
        #[arg(long)]
        fold: Option<usize>,
        /// Head: binary or multi [default: multi]
        #[arg(long)]
        mode: Option<String>,
        /// Filter stride reduction in the stem
        #[arg(long)]
        fsr: bool,
        /// Train the unseen-fake class (multi only)
        #[arg(long)]
        uf: bool,
        /// Optional named-tensor archive to initialise from
        #[arg(long, value_name = "FILE")]
        init: Option<PathBuf>,
        /// Checkpoint directory
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the test side of a fold
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
        /// Test fold [default: 0]
        #[arg(long)]
        fold: Option<usize>,
        /// Report directory
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate the six ablation schemes on every fold
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated fold subset [default: all]
        #[arg(long)]
        folds: Option<String>,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        common: Common,
    },
}

/// A parsed invocation with its resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Toygen { out: PathBuf },
    Build { manifest: PathBuf, out: PathBuf },
    Split { manifest: PathBuf, out: PathBuf },
    Train { manifest: PathBuf, assignment: PathBuf, out: PathBuf },
    Eval { ckpt: PathBuf, manifest: PathBuf, assignment: PathBuf, report: PathBuf },
    Ablate { manifest: PathBuf, assignment: PathBuf, out: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Toygen { .. } => "toygen",
            Command::Build { .. } => "build",
            Command::Split { .. } => "split",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
        }
    }
}

struct Layer<'a> {
    flags: Vec<(&'a str, String)>,
}

impl<'a> Layer<'a> {
    fn opt<T: ToString>(&mut self, key: &'a str, v: Option<T>) {
        if let Some(v) = v {
            self.flags.push((key, v.to_string()));
        }
    }

    fn on(&mut self, key: &'a str, v: bool) {
        if v {
            self.flags.push((key, "true".into()));
        }
    }

    fn train(&mut self, t: TrainFlags) {
        self.opt("train.epochs", t.epochs);
        self.opt("train.batch_size", t.batch_size);
        self.opt("train.lr0", t.lr0);
        self.opt("train.decay_gamma", t.gamma);
        self.opt("train.label_smoothing", t.label_smoothing);
        if t.no_aug {
            for fam in ["affine", "photometric", "hflip", "vflip", "cutout"] {
                self.flags.push((fam_key(fam), "false".into()));
            }
        }
    }
}

fn fam_key(fam: &str) -> &'static str {
    match fam {
        "affine" => "aug.affine",
        "photometric" => "aug.photometric",
        "hflip" => "aug.hflip",
        "vflip" => "aug.vflip",
        _ => "aug.cutout",
    }
}

/// Parse `argv` (including the program name) into a command and its
/// effective configuration. `--help` and `--version` surface as
/// [`CliError::Usage`] carrying the rendered text with exit code 0 handled by
/// [`run`].
pub fn parse_cli<I, S>(argv: I) -> Result<(Command, RunConfig), clap::Error>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let mut layer = Layer { flags: Vec::new() };
    let (command, common) = match cli.command {
        Cmd::Toygen {
            out,
            generators,
            seen,
            per_class,
            size,
            amplitude,
            folds,
            toy_seed,
            common,
        } => {
            layer.opt("toy.generators", generators);
            layer.opt("toy.seen", seen);
            layer.opt("toy.per_class", per_class);
            layer.opt("toy.size", size);
            layer.opt("toy.amplitude", amplitude);
            layer.opt("toy.folds", folds);
            layer.opt("toy.seed", toy_seed);
            (Command::Toygen { out }, common)
        }
        Cmd::Build {
            manifest,
            out,
            crop_min,
            crop_max,
            ratio,
            target,
            qmin,
            qmax,
            common,
        } => {
            layer.opt("impair.crop_min", crop_min);
            layer.opt("impair.crop_max", crop_max);
            layer.opt("impair.ratio", ratio);
            layer.opt("impair.target", target);
            layer.opt("impair.qmin", qmin);
            layer.opt("impair.qmax", qmax);
            (Command::Build { manifest, out }, common)
        }
        Cmd::Split {
            manifest,
            out,
            folds,
            common,
        } => {
            layer.opt("split.folds", folds);
            (Command::Split { manifest, out }, common)
        }
        Cmd::Train {
            manifest,
            assignment,
            fold,
            mode,
            fsr,
            uf,
            init,
            out,
            train,
            common,
        } => {
            layer.opt("train.fold", fold);
            layer.opt("model.mode", mode);
            layer.on("model.fsr", fsr);
            layer.on("model.uf", uf);
            layer.opt("model.init", init.map(|p| p.display().to_string()));
            layer.train(train);
            (
                Command::Train {
                    manifest,
                    assignment,
                    out,
                },
                common,
            )
        }
        Cmd::Eval {
            ckpt,
            manifest,
            assignment,
            fold,
            report,
            common,
        } => {
            layer.opt("train.fold", fold);
            (
                Command::Eval {
                    ckpt,
                    manifest,
                    assignment,
                    report,
                },
                common,
            )
        }
        Cmd::Ablate {
            manifest,
            assignment,
            out,
            folds,
            train,
            common,
        } => {
            layer.opt("ablate.folds", folds);
            layer.train(train);
            (
                Command::Ablate {
                    manifest,
                    assignment,
                    out,
                },
                common,
            )
        }
    };
    layer.opt("workers", common.workers);
    layer.opt("seed", common.seed);

    let usage = |e: CliError| clap::Error::raw(clap::error::ErrorKind::ValueValidation, format!("{e}\n"));
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path).map_err(usage)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`"))))?;
        layer.flags.push((k.trim(), v.trim().to_string()));
    }
    for (k, v) in &layer.flags {
        cfg.set(k, v, Provenance::Flag).map_err(usage)?;
    }
    Ok((command, cfg))
}

fn manifest_root(manifest: &Path) -> PathBuf {
    manifest.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn load_manifest(path: &Path) -> Result<Manifest, CliError> {
    read_manifest(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_assignment(path: &Path) -> Result<FoldAssignment, CliError> {
    read_assignment(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn image_side(manifest: &Manifest, root: &Path) -> Result<usize, CliError> {
    let first = manifest
        .entries
        .first()
        .ok_or_else(|| CliError::Runtime("manifest has no entries".into()))?;
    let path = root.join(&first.path);
    let (w, _) = image::image_dimensions(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(w as usize)
}

fn check_fold(fold: usize, a: &FoldAssignment) -> Result<(), CliError> {
    if fold >= a.n_folds {
        return Err(CliError::Invalid {
            field: "train.fold".into(),
            message: format!("fold {fold} is out of range for {} folds", a.n_folds),
        });
    }
    Ok(())
}

fn fold_entries(entries: &[ManifestEntry], a: &FoldAssignment, fold: usize) -> (Vec<ManifestEntry>, Vec<ManifestEntry>) {
    let (train, test) = crate::split::fold_view(entries, a, fold);
    (train.into_iter().cloned().collect(), test.into_iter().cloned().collect())
}

fn write(path: &Path, body: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, body).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Execute a parsed command.
pub fn execute(command: &Command, cfg: &RunConfig) -> Result<(), CliError> {
    let workers: usize = cfg.get("workers")?;
    if workers == 0 {
        return Err(CliError::Invalid {
            field: "workers".into(),
            message: "must be positive".into(),
        });
    }
    let path_of = |p: &Path| p.display().to_string();
    log::info!("synthdetect {TOOL_VERSION} {}\n{}", command.name(), cfg.describe());
    match command {
        Command::Toygen { out } => {
            let spec = cfg.toy_spec()?;
            let header = cfg.header("toygen", &[]);
            synth_dataset(&spec, out, workers, &header).map_err(runtime)?;
        }
        Command::Build { manifest, out } => {
            let imp = cfg.impairment()?;
            let mut input = load_manifest(manifest)?;
            input.meta = input.meta.into_iter().map(|(k, v)| (format!("source.{k}"), v)).collect();
            let header = cfg.header("build", &[("manifest", path_of(manifest))]);
            let opts = BuildOptions {
                workers,
                extra_meta: header,
            };
            build_dataset(&input, &manifest_root(manifest), &imp, out, &opts).map_err(runtime)?;
        }
        Command::Split { manifest, out } => {
            let m = load_manifest(manifest)?;
            let folds: usize = cfg.get("split.folds")?;
            let mut a = assign_folds(&m.entries, &m.taxonomy, folds, cfg.get("seed")?).map_err(runtime)?;
            a.meta = cfg.header("split", &[("manifest", path_of(manifest))]);
            write_assignment(&a, out).map_err(runtime)?;
            log::info!("wrote {} assignments to {}", a.assignment.len(), out.display());
        }
        Command::Train {
            manifest,
            assignment,
            out,
        } => {
            let m = load_manifest(manifest)?;
            let a = load_assignment(assignment)?;
            let fold: usize = cfg.get("train.fold")?;
            check_fold(fold, &a)?;
            let root = manifest_root(manifest);
            let scheme = cfg.scheme()?;
            let train = cfg.train_config()?;
            let base = cfg.base_model(m.taxonomy.num_classes(), image_side(&m, &root)?)?;
            let (train_entries, _) = fold_entries(&m.entries, &a, fold);
            let header = cfg.header(
                "train",
                &[("manifest", path_of(manifest)), ("assignment", path_of(assignment))],
            );
            let mut result = match cfg.raw("model.init").filter(|s| !s.is_empty()) {
                None => train_fold(&train_entries, &root, &m.taxonomy, scheme, &base, &train, fold).map_err(runtime)?,
                Some(init) => {
                    let images = crate::train::load_images(&train_entries, &root, workers).map_err(runtime)?;
                    crate::train::train_fold_images_from(
                        &train_entries,
                        &images,
                        &m.taxonomy,
                        scheme,
                        &base,
                        &train,
                        fold,
                        Some(Path::new(init)),
                    )
                    .map_err(runtime)?
                }
            };
            result.checkpoint.meta.extend(header.iter().cloned());
            save_checkpoint(out, &result.checkpoint).map_err(runtime)?;
            write(&out.join(TRAIN_LOG_FILE), &log_csv(&result.log, &header))?;
            log::info!("saved checkpoint to {}", out.display());
        }
        Command::Eval {
            ckpt,
            manifest,
            assignment,
            report,
        } => {
            let m = load_manifest(manifest)?;
            let a = load_assignment(assignment)?;
            let fold: usize = cfg.get("train.fold")?;
            check_fold(fold, &a)?;
            let c = load_checkpoint(ckpt).map_err(runtime)?;
            let (_, test) = fold_entries(&m.entries, &a, fold);
            let r = evaluate_fold(&c, &test, &manifest_root(manifest), &m.taxonomy, fold, cfg.get("eval.batch")?, workers)
                .map_err(runtime)?;
            let header = cfg.header(
                "eval",
                &[
                    ("ckpt", path_of(ckpt)),
                    ("manifest", path_of(manifest)),
                    ("assignment", path_of(assignment)),
                ],
            );
            r.write_dir(report, &header).map_err(runtime)?;
            print!("{}", r.to_text());
        }
        Command::Ablate {
            manifest,
            assignment,
            out,
        } => {
            let m = load_manifest(manifest)?;
            let a = load_assignment(assignment)?;
            let root = manifest_root(manifest);
            let folds = match cfg.raw("ablate.folds").unwrap_or("all") {
                "all" => None,
                _ => {
                    let f = cfg.list("ablate.folds")?;
                    for &x in &f {
                        check_fold(x, &a)?;
                    }
                    Some(f)
                }
            };
            let acfg = AblationConfig {
                base_model: cfg.base_model(m.taxonomy.num_classes(), image_side(&m, &root)?)?,
                train: cfg.train_config()?,
                folds,
                eval_batch: cfg.get("eval.batch")?,
                workers,
            };
            let header = cfg.header(
                "ablate",
                &[("manifest", path_of(manifest)), ("assignment", path_of(assignment))],
            );
            let table = run_ablation(&m, &root, &a, &acfg, header.clone()).map_err(runtime)?;
            write(&out.join(ABLATION_CSV), &table.to_csv())?;
            let head: String = header.iter().map(|(k, v)| format!("# {k}={v}\n")).collect();
            write(&out.join(ABLATION_TEXT), &format!("{head}{}", table.to_text()))?;
            for (i, row) in table.rows.iter().enumerate() {
                for r in &row.reports {
                    let dir = out.join("reports").join(format!("row{}_fold{}", i + 1, r.fold));
                    r.write_dir(&dir, &header).map_err(runtime)?;
                }
            }
            print!("{}", table.to_text());
            if let Some(bad) = table.rows.iter().find(|r| r.error.is_some()) {
                return Err(CliError::Runtime(format!(
                    "{} of {} rows failed (first: {})",
                    table.rows.iter().filter(|r| r.error.is_some()).count(),
                    ABLATION_SCHEMES.len(),
                    bad.scheme.label()
                )));
            }
        }
    }
    Ok(())
}

/// Full entry point: parse, execute, map errors to exit codes.
pub fn run<I, S>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let (command, cfg) = match parse_cli(argv) {
        Ok(v) => v,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Manifest path `toygen` writes under its output directory.
pub fn toygen_manifest(out: &Path) -> PathBuf {
    out.join(MANIFEST_FILE)
}
