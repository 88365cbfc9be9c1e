//! Per-fold training: label-smoothed cross-entropy, Adam with per-epoch
//! exponential learning-rate decay, and the augmentation menu.
//!
//! Runs are deterministic under `TrainConfig::seed`: the validation slice,
//! batch order and every augmentation draw come from named
//! [`derive_rng`] streams, and the GEMM backend is single-threaded.

mod augment;

use std::borrow::Borrow;
use std::fmt::Write as _;
use std::path::Path;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassKind, ClassTaxonomy, ManifestEntry};
use crate::eval::{predict_p_fake, ConfusionMatrix};
use crate::model::{Act, Checkpoint, Detector, Grads, HeadMode, ModelConfig, ModelError, Real, Scheme};
use crate::rng::{derive_rng, Draw};

pub use augment::{augment, hflip, vflip, AugmentConfig};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite logits")]
    NonFiniteLogits,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("training set has no entries for class `{0}`")]
    EmptyClass(String),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("image `{entry}` is {got:?}, expected {expected:?}")]
    SizeMismatch {
        entry: String,
        got: (u32, u32),
        expected: (u32, u32),
    },
    #[error("cannot read image {path}: {message}")]
    Image { path: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Learning-rate multiplier applied once per epoch.
    pub decay_gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub label_smoothing: f64,
    pub aug: AugmentConfig,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Per-class fraction of the training entries held out for the
    /// per-epoch validation score.
    pub val_fraction: f64,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            decay_gamma: 0.9,
            epochs: 20,
            batch_size: 32,
            label_smoothing: 0.05,
            aug: AugmentConfig::default(),
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            val_fraction: 0.1,
            workers: 1,
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset for training from scratch on 64×64 toy data:
    /// lr0 10⁻³, batch 16, flips and cutout only. Affine rotation and
    /// rescaling move a grating onto a neighbouring generator's frequency;
    /// photometric jitter does not, but it keeps a from-scratch model on its
    /// initial plateau for most of a 20-epoch budget.
    pub fn toy() -> Self {
        Self {
            lr0: 1e-3,
            batch_size: 16,
            aug: AugmentConfig {
                affine: false,
                photometric: false,
                ..AugmentConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.decay_gamma > 0.0 && self.decay_gamma <= 1.0) {
            return bad(format!("decay_gamma must lie in (0, 1], got {}", self.decay_gamma));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing must lie in [0, 1), got {}", self.label_smoothing));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        self.aug.validate().map_err(TrainError::InvalidConfig)
    }

    pub fn to_meta(&self) -> Vec<(String, String)> {
        let mut m = vec![
            ("train.lr0".to_string(), self.lr0.to_string()),
            ("train.decay_gamma".into(), self.decay_gamma.to_string()),
            ("train.epochs".into(), self.epochs.to_string()),
            ("train.batch_size".into(), self.batch_size.to_string()),
            ("train.label_smoothing".into(), self.label_smoothing.to_string()),
            ("train.seed".into(), self.seed.to_string()),
            ("train.adam_beta1".into(), self.adam_beta1.to_string()),
            ("train.adam_beta2".into(), self.adam_beta2.to_string()),
            ("train.adam_eps".into(), self.adam_eps.to_string()),
            ("train.val_fraction".into(), self.val_fraction.to_string()),
        ];
        m.extend(self.aug.to_meta());
        m
    }
}

/// Learning rate for a zero-based epoch: `lr0 * decay_gamma^epoch`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.decay_gamma.powi(epoch as i32)
}

/// Cross-entropy against `q_c = (1-ε)[c = true] + ε/K` for one logit vector.
pub fn smoothed_ce(logits: &[f64], true_class: usize, eps: f64) -> Result<f64, TrainError> {
    let k = logits.len();
    if true_class >= k {
        return Err(TrainError::LabelOutOfRange {
            label: true_class,
            classes: k,
        });
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(TrainError::InvalidConfig(format!("label smoothing {eps} outside [0, 1)")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::NonFiniteLogits);
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    let off = eps / k as f64;
    Ok(logits
        .iter()
        .enumerate()
        .map(|(c, &v)| {
            let q = if c == true_class { 1.0 - eps + off } else { off };
            q * (lse - v)
        })
        .sum())
}

/// Mean smoothed cross-entropy over a batch of `labels.len()` rows and its
/// gradient with respect to the logits.
pub fn smoothed_ce_batch<T: Real>(logits: &[T], labels: &[usize], eps: f64) -> Result<(f64, Vec<T>), TrainError> {
    let b = labels.len();
    if b == 0 {
        return Ok((0.0, Vec::new()));
    }
    let k = logits.len() / b;
    let mut grad = vec![T::zero(); logits.len()];
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row: Vec<f64> = logits[r * k..(r + 1) * k].iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        total += smoothed_ce(&row, y, eps)?;
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        for (c, &v) in row.iter().enumerate() {
            let q = if c == y { 1.0 - eps + eps / k as f64 } else { eps / k as f64 };
            grad[r * k + c] = T::of((((v - m).exp() / z) - q) / b as f64);
        }
    }
    Ok((total / b as f64, grad))
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(model: &Detector<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = model.zero_grads().tensors;
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Update moments and apply one step. With `lr == 0` the weights are
    /// not written at all.
    pub fn step(&mut self, model: &mut Detector<T>, grads: &Grads<T>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one, eps) = (T::one(), T::of(self.eps));
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = T::of(lr / c1);
        let c2 = T::of(c2);
        for (((p, g), m), v) in model.params_mut().iter_mut().zip(&grads.tensors).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            }
            if lr == 0.0 {
                continue;
            }
            for i in 0..g.len() {
                p.data[i] = p.data[i] - step * m[i] / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// Normalize 8-bit pixels to `(v/255 - 0.5) / 0.25`.
pub fn normalize_pixel(v: u8) -> f32 {
    (f32::from(v) / 255.0 - 0.5) / 0.25
}

/// Stack equally sized images into a normalized `[n, h, w, 3]` batch.
pub fn to_input<I: Borrow<RgbImage>>(images: &[I]) -> Act<f32> {
    let (w, h) = images.first().map_or((0, 0), |i| i.borrow().dimensions());
    let mut data = Vec::with_capacity(images.len() * (w * h * 3) as usize);
    for img in images {
        let img = img.borrow();
        assert_eq!(img.dimensions(), (w, h), "batch images must share dimensions");
        data.extend(img.as_raw().iter().map(|&v| normalize_pixel(v)));
    }
    Act::from_vec(images.len(), h as usize, w as usize, 3, data)
}

/// Decode the images of `entries` (paths relative to `root`) and check that
/// they share one size.
pub fn load_images(entries: &[ManifestEntry], root: &Path, workers: usize) -> Result<Vec<RgbImage>, TrainError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let images: Vec<RgbImage> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| {
                let path = root.join(&e.path);
                image::open(&path).map(|i| i.to_rgb8()).map_err(|err| TrainError::Image {
                    path: path.display().to_string(),
                    message: err.to_string(),
                })
            })
            .collect::<Result<_, _>>()
    })?;
    if let Some(first) = images.first() {
        let expected = first.dimensions();
        for (e, img) in entries.iter().zip(&images) {
            if img.dimensions() != expected {
                return Err(TrainError::SizeMismatch {
                    entry: e.entry_id.clone(),
                    got: img.dimensions(),
                    expected,
                });
            }
        }
    }
    Ok(images)
}

/// Training label of an entry under a scheme, or `None` when the scheme
/// does not train on it (unseen-generator entries without a UF class).
pub fn train_label(entry: &ManifestEntry, taxonomy: &ClassTaxonomy, scheme: Scheme) -> Option<usize> {
    let kind = taxonomy.class_kind(entry.class_index)?;
    match scheme.head {
        HeadMode::Binary => Some(usize::from(kind != ClassKind::Real)),
        HeadMode::MultiClass if kind == ClassKind::UnseenFake && !scheme.uf => None,
        HeadMode::MultiClass => Some(entry.class_index),
    }
}

/// One Adam step on a fixed batch; returns the pre-step loss.
pub fn train_step(
    model: &mut Detector<f32>,
    adam: &mut Adam<f32>,
    batch: &Act<f32>,
    labels: &[usize],
    label_smoothing: f64,
    lr: f64,
) -> Result<f64, TrainError> {
    let (logits, cache) = model.forward_train(batch)?;
    let (loss, dlogits) = smoothed_ce_batch(&logits, labels, label_smoothing)?;
    let grads = model.backward(&cache, &dlogits);
    adam.step(model, &grads, lr);
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    /// Binary balanced accuracy on the held-out slice, if it has both
    /// real and fake entries.
    pub val_balanced_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub n_train: usize,
    pub n_val: usize,
}

/// Training log as CSV, preceded by `# key=value` header lines.
pub fn log_csv(log: &[EpochRecord], header: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in header {
        let _ = writeln!(s, "# {k}={v}");
    }
    s.push_str("epoch,loss,lr,val_balanced_accuracy\n");
    for r in log {
        let ba = r.val_balanced_accuracy.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(s, "{},{:.6},{:e},{}", r.epoch, r.loss, r.lr, ba);
    }
    s
}

fn split_validation(labeled: &[(usize, usize)], entries: &[ManifestEntry], frac: f64, seed: u64, fold: usize) -> Vec<bool> {
    let mut is_val = vec![false; labeled.len()];
    let labels: std::collections::BTreeSet<usize> = labeled.iter().map(|&(_, l)| l).collect();
    for label in labels {
        let mut members: Vec<usize> = (0..labeled.len()).filter(|&i| labeled[i].1 == label).collect();
        members.sort_by(|&a, &b| entries[labeled[a].0].entry_id.cmp(&entries[labeled[b].0].entry_id));
        derive_rng(seed, &format!("val-split-f{fold}-c{label}")).shuffle(&mut members);
        let take = ((members.len() as f64 * frac).floor() as usize).min(members.len().saturating_sub(1));
        for &i in &members[..take] {
            is_val[i] = true;
        }
    }
    is_val
}

/// Train one fold from scratch.
///
/// `base` supplies the backbone shape; the head and stem stride follow
/// `scheme`. Entries are labelled by [`train_label`] and dropped when it
/// returns `None`.
pub fn train_fold(
    entries: &[ManifestEntry],
    root: &Path,
    taxonomy: &ClassTaxonomy,
    scheme: Scheme,
    base: &ModelConfig,
    cfg: &TrainConfig,
    fold: usize,
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    let used: Vec<ManifestEntry> = entries
        .iter()
        .filter(|e| train_label(e, taxonomy, scheme).is_some())
        .cloned()
        .collect();
    let images = load_images(&used, root, cfg.workers)?;
    train_fold_images(&used, &images, taxonomy, scheme, base, cfg, fold)
}

/// As [`train_fold`] with images already decoded, index-aligned with
/// `entries`.
pub fn train_fold_images<I: Borrow<RgbImage> + Sync>(
    entries: &[ManifestEntry],
    images: &[I],
    taxonomy: &ClassTaxonomy,
    scheme: Scheme,
    base: &ModelConfig,
    cfg: &TrainConfig,
    fold: usize,
) -> Result<TrainOutput, TrainError> {
    train_fold_images_from(entries, images, taxonomy, scheme, base, cfg, fold, None)
}

/// As [`train_fold_images`], optionally starting from a named-tensor
/// archive loaded with [`Detector::load_pretrained`].
#[allow(clippy::too_many_arguments)]
pub fn train_fold_images_from<I: Borrow<RgbImage> + Sync>(
    entries: &[ManifestEntry],
    images: &[I],
    taxonomy: &ClassTaxonomy,
    scheme: Scheme,
    base: &ModelConfig,
    cfg: &TrainConfig,
    fold: usize,
    init: Option<&Path>,
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    assert_eq!(entries.len(), images.len(), "entries and images must align");
    let model_cfg = base.for_scheme(scheme, taxonomy.num_classes());
    let mut model = Detector::<f32>::new(model_cfg.clone(), taxonomy.clone(), cfg.seed)?;
    if let Some(path) = init {
        model.load_pretrained(path)?;
    }

    let labeled: Vec<(usize, usize)> = entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| train_label(e, taxonomy, scheme).map(|l| (i, l)))
        .collect();
    if labeled.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let trained_classes: Vec<(usize, String)> = match scheme.head {
        HeadMode::Binary => vec![(0, "real".into()), (1, "fake".into())],
        HeadMode::MultiClass => taxonomy
            .classes()
            .iter()
            .enumerate()
            .filter(|(i, _)| scheme.uf || *i != taxonomy.uf_index())
            .map(|(i, c)| (i, c.name.clone()))
            .collect(),
    };
    for (idx, name) in &trained_classes {
        if !labeled.iter().any(|&(_, l)| l == *idx) {
            return Err(TrainError::EmptyClass(name.clone()));
        }
    }

    let is_val = split_validation(&labeled, entries, cfg.val_fraction, cfg.seed, fold);
    let picked: Vec<&ManifestEntry> = labeled.iter().map(|&(i, _)| &entries[i]).collect();
    let images: Vec<&RgbImage> = labeled.iter().map(|&(i, _)| images[i].borrow()).collect();
    if let Some(first) = images.first() {
        for (e, img) in picked.iter().zip(&images) {
            if img.dimensions() != first.dimensions() {
                return Err(TrainError::SizeMismatch {
                    entry: e.entry_id.clone(),
                    got: img.dimensions(),
                    expected: first.dimensions(),
                });
            }
        }
    }
    let (mut train_ix, mut val_ix) = (Vec::new(), Vec::new());
    for (j, &v) in is_val.iter().enumerate() {
        if v { &mut val_ix } else { &mut train_ix }.push(j);
    }
    let val_truth: Vec<usize> = val_ix
        .iter()
        .map(|&j| usize::from(taxonomy.class_kind(picked[j].class_index) != Some(ClassKind::Real)))
        .collect();
    log::info!(
        "fold {fold} [{}]: {} train / {} val entries, {} parameters",
        scheme.label(),
        train_ix.len(),
        val_ix.len(),
        model.num_parameters()
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .expect("thread pool");
    let mut adam = Adam::new(&model, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let mut order = train_ix.clone();
        derive_rng(cfg.seed, &format!("batches-f{fold}-e{epoch}")).shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<RgbImage> = pool.install(|| {
                chunk
                    .par_iter()
                    .map(|&j| {
                        let key = format!("aug-f{fold}-e{epoch}-{}", picked[j].entry_id);
                        augment(images[j], &cfg.aug, &mut derive_rng(cfg.seed, &key))
                    })
                    .collect()
            });
            let labels: Vec<usize> = chunk.iter().map(|&j| labeled[j].1).collect();
            let loss = train_step(&mut model, &mut adam, &to_input(&batch), &labels, cfg.label_smoothing, lr)?;
            total += loss * chunk.len() as f64;
        }
        let val_ba = if val_ix.is_empty() {
            None
        } else {
            let val_images: Vec<&RgbImage> = val_ix.iter().map(|&j| images[j]).collect();
            let p = predict_p_fake(&model, &val_images, cfg.batch_size)?;
            let pred: Vec<usize> = p.iter().map(|&v| usize::from(crate::eval::is_fake(v))).collect();
            let cm = ConfusionMatrix::from_pairs(2, &val_truth, &pred);
            (cm.support(0) > 0 && cm.support(1) > 0).then(|| cm.balanced_accuracy()).flatten()
        };
        let rec = EpochRecord {
            epoch,
            loss: total / train_ix.len().max(1) as f64,
            lr,
            val_balanced_accuracy: val_ba,
        };
        log::info!(
            "fold {fold} epoch {epoch}: loss {:.4} lr {:.2e} val_ba {}",
            rec.loss,
            lr,
            val_ba.map_or("n/a".into(), |v| format!("{v:.4}"))
        );
        log.push(rec);
    }

    let mut meta = vec![
        ("fold".to_string(), fold.to_string()),
        ("scheme".into(), scheme.label()),
        ("n_train".into(), train_ix.len().to_string()),
        ("n_val".into(), val_ix.len().to_string()),
    ];
    meta.extend(cfg.to_meta());
    Ok(TrainOutput {
        checkpoint: Checkpoint { model, scheme, meta },
        log,
        n_train: train_ix.len(),
        n_val: val_ix.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        for eps in [0.0, 0.05, 0.5] {
            for t in 0..7 {
                let l = smoothed_ce(&[0.3; 7], t, eps).unwrap();
                assert!((l - 7f64.ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_smoothing_is_plain_ce() {
        let z = [1.0, -0.5, 2.0];
        let lse = z.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
        assert!((smoothed_ce(&z, 2, 0.0).unwrap() - (lse - 2.0)).abs() < 1e-12);
        assert!(smoothed_ce(&[f64::NAN, 0.0], 0, 0.1).is_err());
        assert!(smoothed_ce(&[0.0, 0.0], 2, 0.1).is_err());
    }

    #[test]
    fn batch_gradient_matches_difference() {
        let logits = [0.2f64, -1.0, 0.7, 1.5, 0.0, -0.3];
        let labels = [2, 0];
        let (_, g) = smoothed_ce_batch(&logits, &labels, 0.05).unwrap();
        for i in 0..logits.len() {
            let h = 1e-6;
            let mut a = logits;
            a[i] += h;
            let mut b = logits;
            b[i] -= h;
            let fd = (smoothed_ce_batch(&a, &labels, 0.05).unwrap().0 - smoothed_ce_batch(&b, &labels, 0.05).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 1e-4);
        assert!((lr_at(1, &cfg) - 9e-5).abs() < 1e-18);
        let flat = TrainConfig {
            decay_gamma: 1.0,
            ..cfg
        };
        assert_eq!(lr_at(17, &flat), 1e-4);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                lr0: 0.0,
                ..Default::default()
            },
            TrainConfig {
                decay_gamma: 1.1,
                ..Default::default()
            },
            TrainConfig {
                label_smoothing: 1.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
