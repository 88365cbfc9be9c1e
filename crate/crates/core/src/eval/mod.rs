//! Binary conversion, balanced accuracy, per-fold reports and the ablation
//! harness.
//!
//! A multi-class probability vector becomes an authenticity score
//! `p_fake = 1 - p[real]`, flagged FAKE when `p_fake >= 0.5`. Binary metrics
//! are produced for every head type so ablation rows compare like with like.

mod ablation;

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::RgbImage;
use num_rational::BigRational;
use num_traits::ToPrimitive;

use crate::dataset::{ClassKind, ClassTaxonomy, ManifestEntry};
use crate::model::{Checkpoint, Detector, HeadMode, ModelError, Scheme};
use crate::train::{load_images, to_input, TrainError};

pub use ablation::{
    run_ablation, AblationConfig, AblationRow, AblationTable, ABLATION_SCHEMES, REFERENCE_BA,
};

pub const DECISION_THRESHOLD: f64 = 0.5;
/// Binary label indices.
pub const REAL: usize = 0;
pub const FAKE: usize = 1;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("malformed probability vector: {0}")]
    InvalidProbabilities(String),
    #[error("class {0} has no examples")]
    EmptyClass(usize),
    #[error("{truth} labels but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("checkpoint taxonomy does not match the manifest taxonomy")]
    TaxonomyMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Numerically stable softmax in `f64`.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// `1 - probs[real_index]` after checking that `probs` is a distribution.
pub fn to_binary(probs: &[f64], real_index: usize) -> Result<f64, EvalError> {
    if real_index >= probs.len() {
        return Err(EvalError::InvalidProbabilities(format!(
            "real index {real_index} outside a vector of length {}",
            probs.len()
        )));
    }
    if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(EvalError::InvalidProbabilities("entries must be finite and non-negative".into()));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(EvalError::InvalidProbabilities(format!("entries sum to {sum}")));
    }
    Ok(1.0 - probs[real_index])
}

/// Ties go to FAKE.
pub fn is_fake(p_fake: f64) -> bool {
    p_fake >= DECISION_THRESHOLD
}

/// Mean per-class recall. Every class in `0..n_classes` must occur in
/// `truth`.
pub fn balanced_accuracy(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<f64, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if let Some(&label) = truth.iter().chain(pred).find(|&&l| l >= n_classes) {
        return Err(EvalError::LabelOutOfRange {
            label,
            classes: n_classes,
        });
    }
    let cm = ConfusionMatrix::from_pairs(n_classes, truth, pred);
    if let Some(c) = (0..n_classes).find(|&c| cm.support(c) == 0) {
        return Err(EvalError::EmptyClass(c));
    }
    Ok(cm.balanced_accuracy().expect("all classes supported"))
}

/// Row = true class, column = predicted class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn from_pairs(n: usize, truth: &[usize], pred: &[usize]) -> Self {
        let mut cm = Self::new(n);
        for (&t, &p) in truth.iter().zip(pred) {
            cm.add(t, p);
        }
        cm
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.n + pred] += 1;
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class * self.n..(class + 1) * self.n].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn recall(&self, class: usize) -> Option<f64> {
        let s = self.support(class);
        (s > 0).then(|| self.get(class, class) as f64 / s as f64)
    }

    /// Mean recall over classes with support; `None` if there are none.
    /// The mean is taken in exact rational arithmetic and rounded once, so
    /// the result is the nearest `f64` to the true value.
    pub fn balanced_accuracy(&self) -> Option<f64> {
        let recalls: Vec<BigRational> = (0..self.n)
            .filter(|&c| self.support(c) > 0)
            .map(|c| BigRational::new(self.get(c, c).into(), self.support(c).into()))
            .collect();
        if recalls.is_empty() {
            return None;
        }
        let k = BigRational::from_integer(recalls.len().into());
        (recalls.into_iter().sum::<BigRational>() / k).to_f64()
    }

    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut s = String::from("true\\pred");
        for l in labels {
            let _ = write!(s, ",{l}");
        }
        s.push('\n');
        for (t, l) in labels.iter().enumerate() {
            s.push_str(l);
            for p in 0..self.n {
                let _ = write!(s, ",{}", self.get(t, p));
            }
            s.push('\n');
        }
        s
    }
}

/// Index of the real class in a model's output vector.
pub fn head_real_index(model: &Detector<f32>) -> usize {
    match model.config().head_mode {
        HeadMode::Binary => REAL,
        HeadMode::MultiClass => model.taxonomy().real_index(),
    }
}

/// Softmax probabilities for every image, batched.
pub fn predict_proba<I: Borrow<RgbImage>>(model: &Detector<f32>, images: &[I], batch: usize) -> Result<Vec<Vec<f64>>, EvalError> {
    let k = model.num_classes();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let logits = model.forward(&to_input(chunk))?;
        for row in logits.chunks_exact(k) {
            let row: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
            out.push(softmax(&row));
        }
    }
    Ok(out)
}

pub fn predict_p_fake<I: Borrow<RgbImage>>(model: &Detector<f32>, images: &[I], batch: usize) -> Result<Vec<f64>, ModelError> {
    let real = head_real_index(model);
    let probs = predict_proba(model, images, batch).map_err(|e| match e {
        EvalError::Model(m) => m,
        other => ModelError::Checkpoint(other.to_string()),
    })?;
    Ok(probs.iter().map(|p| 1.0 - p[real]).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub entry_id: String,
    pub true_class: usize,
    pub generator_id: Option<String>,
    /// Arg-max head output.
    pub predicted_output: usize,
    pub p_fake: f64,
    pub predicted_fake: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorRecall {
    pub generator_id: String,
    pub support: u64,
    /// Fraction flagged FAKE.
    pub recall: f64,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub scheme: Scheme,
    pub fold: usize,
    pub class_names: Vec<String>,
    /// Taxonomy classes × head outputs; only for multi-class heads.
    pub multi: Option<ConfusionMatrix>,
    pub binary: ConfusionMatrix,
    pub balanced_accuracy: Option<f64>,
    pub multi_balanced_accuracy: Option<f64>,
    /// Binary balanced accuracy on real plus seen-generator entries.
    pub seen_balanced_accuracy: Option<f64>,
    /// Binary balanced accuracy on real plus unseen-fake entries.
    pub unseen_balanced_accuracy: Option<f64>,
    pub per_generator: Vec<GeneratorRecall>,
    pub predictions: Vec<PredictionRow>,
}

/// Evaluate a checkpoint on test entries whose images live under `root`.
pub fn evaluate_fold(
    ckpt: &Checkpoint,
    entries: &[ManifestEntry],
    root: &Path,
    taxonomy: &ClassTaxonomy,
    fold: usize,
    batch: usize,
    workers: usize,
) -> Result<EvalReport, EvalError> {
    let images = load_images(entries, root, workers)?;
    evaluate_images(ckpt, entries, &images, taxonomy, fold, batch)
}

/// As [`evaluate_fold`] with images already decoded, index-aligned with
/// `entries`.
pub fn evaluate_images<I: Borrow<RgbImage>>(
    ckpt: &Checkpoint,
    entries: &[ManifestEntry],
    images: &[I],
    taxonomy: &ClassTaxonomy,
    fold: usize,
    batch: usize,
) -> Result<EvalReport, EvalError> {
    let model = &ckpt.model;
    if model.taxonomy() != taxonomy {
        return Err(EvalError::TaxonomyMismatch);
    }
    let probs = predict_proba(model, images, batch)?;
    let real = head_real_index(model);
    let multi_mode = model.config().head_mode == HeadMode::MultiClass;
    let nc = taxonomy.num_classes();

    let mut binary = ConfusionMatrix::new(2);
    let mut seen = ConfusionMatrix::new(2);
    let mut unseen = ConfusionMatrix::new(2);
    let mut multi = multi_mode.then(|| ConfusionMatrix::new(nc));
    let mut gen_counts: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut predictions = Vec::with_capacity(entries.len());
    for (e, p) in entries.iter().zip(&probs) {
        let p_fake = to_binary(p, real)?;
        let fake = is_fake(p_fake);
        let kind = taxonomy.class_kind(e.class_index).ok_or(EvalError::LabelOutOfRange {
            label: e.class_index,
            classes: nc,
        })?;
        let truth = usize::from(kind != ClassKind::Real);
        let pred = usize::from(fake);
        binary.add(truth, pred);
        match kind {
            ClassKind::Real => {
                seen.add(truth, pred);
                unseen.add(truth, pred);
            }
            ClassKind::SeenFake => seen.add(truth, pred),
            ClassKind::UnseenFake => unseen.add(truth, pred),
        }
        let argmax = p
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0;
        if let Some(m) = multi.as_mut() {
            m.add(e.class_index, argmax);
        }
        if let Some(g) = &e.generator_id {
            let c = gen_counts.entry(g.clone()).or_default();
            c.0 += 1;
            c.1 += u64::from(fake);
        }
        predictions.push(PredictionRow {
            entry_id: e.entry_id.clone(),
            true_class: e.class_index,
            generator_id: e.generator_id.clone(),
            predicted_output: argmax,
            p_fake,
            predicted_fake: fake,
        });
    }
    let both = |cm: &ConfusionMatrix| (cm.support(REAL) > 0 && cm.support(FAKE) > 0).then(|| cm.balanced_accuracy()).flatten();
    Ok(EvalReport {
        scheme: ckpt.scheme,
        fold,
        class_names: taxonomy.classes().iter().map(|c| c.name.clone()).collect(),
        multi_balanced_accuracy: multi.as_ref().and_then(ConfusionMatrix::balanced_accuracy),
        multi,
        balanced_accuracy: both(&binary),
        seen_balanced_accuracy: both(&seen),
        unseen_balanced_accuracy: both(&unseen),
        binary,
        per_generator: gen_counts
            .into_iter()
            .map(|(generator_id, (support, hit))| GeneratorRecall {
                generator_id,
                support,
                recall: hit as f64 / support as f64,
            })
            .collect(),
        predictions,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl EvalReport {
    pub fn predictions_csv(&self) -> String {
        let mut s = String::from("entry_id,true_class,generator_id,predicted_output,p_fake,predicted_fake\n");
        for r in &self.predictions {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{}",
                r.entry_id,
                r.true_class,
                r.generator_id.as_deref().unwrap_or("-"),
                r.predicted_output,
                r.p_fake,
                u8::from(r.predicted_fake)
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scheme: {}", self.scheme.label());
        let _ = writeln!(s, "fold: {}", self.fold);
        let _ = writeln!(s, "entries: {}", self.binary.total());
        let _ = writeln!(s, "binary balanced accuracy: {}", fmt_opt(self.balanced_accuracy));
        let _ = writeln!(s, "  seen generators:   {}", fmt_opt(self.seen_balanced_accuracy));
        let _ = writeln!(s, "  unseen generators: {}", fmt_opt(self.unseen_balanced_accuracy));
        let _ = writeln!(
            s,
            "binary recall: real {} / fake {}",
            fmt_opt(self.binary.recall(REAL)),
            fmt_opt(self.binary.recall(FAKE))
        );
        if let Some(m) = &self.multi {
            let _ = writeln!(s, "multi-class balanced accuracy: {}", fmt_opt(self.multi_balanced_accuracy));
            for (c, name) in self.class_names.iter().enumerate() {
                let _ = writeln!(s, "  recall {name:<16} {} (n={})", fmt_opt(m.recall(c)), m.support(c));
            }
        }
        s.push_str("per-generator fake recall:\n");
        for g in &self.per_generator {
            let _ = writeln!(s, "  {:<16} {:.4} (n={})", g.generator_id, g.recall, g.support);
        }
        s
    }

    /// Write `report.txt`, `metrics.csv`, `binary_confusion.csv`,
    /// `predictions.csv` and, for multi-class heads,
    /// `multiclass_confusion.csv` into `dir`. Each file starts with the
    /// `header` lines.
    pub fn write_dir(&self, dir: &Path, header: &[(String, String)]) -> Result<(), EvalError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let head: String = header.iter().map(|(k, v)| format!("# {k}={v}\n")).collect();
        let mut metrics = String::from("metric,value\n");
        for (k, v) in [
            ("balanced_accuracy", self.balanced_accuracy),
            ("seen_balanced_accuracy", self.seen_balanced_accuracy),
            ("unseen_balanced_accuracy", self.unseen_balanced_accuracy),
            ("multi_balanced_accuracy", self.multi_balanced_accuracy),
            ("real_recall", self.binary.recall(REAL)),
            ("fake_recall", self.binary.recall(FAKE)),
        ] {
            let _ = writeln!(metrics, "{k},{}", v.map_or("nan".to_string(), |x| format!("{x:.6}")));
        }
        for g in &self.per_generator {
            let _ = writeln!(metrics, "recall:{},{:.6}", g.generator_id, g.recall);
        }
        let mut files = vec![
            ("report.txt", self.to_text()),
            ("metrics.csv", metrics),
            ("binary_confusion.csv", self.binary.to_csv(&["real".into(), "fake".into()])),
            ("predictions.csv", self.predictions_csv()),
        ];
        if let Some(m) = &self.multi {
            files.push(("multiclass_confusion.csv", m.to_csv(&self.class_names)));
        }
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, format!("{head}{body}")).map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }
}

fn io_err(path: &Path, source: std::io::Error) -> EvalError {
    EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}
