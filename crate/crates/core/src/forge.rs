//! Procedural desk-scale dataset.
//!
//! Real images are smooth random textures with mild sensor noise. Every
//! pseudo-generator adds the same kind of texture plus a sinusoidal grating
//! at its own axis-aligned spatial frequency and phase, so each generator
//! leaves a distinct spectral fingerprint. Unseen generators use frequencies
//! absent from the seen set.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use image::RgbImage;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    write_manifest, ClassTaxonomy, DatasetError, GeneratorFamily, GeneratorInfo, Manifest, ManifestEntry, Manipulation,
};
use crate::rng::{derive_rng, Draw, StreamRng};

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Debug, thiserror::Error)]
pub enum ForgeError {
    #[error("invalid toy spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {message}")]
    Write { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub n_generators: usize,
    /// The first `n_seen` generators are seen; the rest feed the UF class.
    pub n_seen: usize,
    /// Fold count the dataset must support: `n_generators >= n_folds + n_seen`.
    pub n_folds: usize,
    pub images_per_class: usize,
    pub image_size: u32,
    pub seed: u64,
    /// Peak stamp amplitude in 8-bit levels.
    pub amplitude: f64,
    /// Standard deviation of the texture in 8-bit levels.
    pub texture_std: f64,
    /// Gaussian low-pass scale of the texture, cycles per image.
    pub texture_cutoff: f64,
    pub noise_std: f64,
    /// Every `partial_every`-th generator stamps only a rectangle covering
    /// at least `partial_min_frac` of each side. `0` disables.
    pub partial_every: usize,
    pub partial_min_frac: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            n_generators: 7,
            n_seen: 5,
            n_folds: 2,
            images_per_class: 100,
            image_size: 64,
            seed: 11,
            amplitude: 30.0,
            texture_std: 10.0,
            texture_cutoff: 4.0,
            noise_std: 2.0,
            partial_every: 5,
            partial_min_frac: 0.6,
        }
    }
}

/// One generator's stamp: `A * sin(2π(fx·x + fy·y)/N + φ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub fx: i32,
    pub fy: i32,
    pub phase: f64,
    pub amplitude: f64,
    pub partial: bool,
}

impl ToySpec {
    pub fn n_unseen(&self) -> usize {
        self.n_generators.saturating_sub(self.n_seen)
    }

    pub fn generator_id(g: usize) -> String {
        format!("g{g}")
    }

    /// Axis-aligned gratings: generator `g` oscillates along x for even `g`
    /// and along y for odd `g`, at `7 + 2·(g div 2)` cycles per 64 pixels.
    /// Flips map every stamp onto itself, so flip augmentation cannot turn
    /// one generator into another.
    pub fn artifact(&self, g: usize) -> Artifact {
        let r = (f64::from(7 + 2 * (g / 2) as u32) * f64::from(self.image_size) / 64.0).round() as i32;
        let (fx, fy) = if g.is_multiple_of(2) { (r, 0) } else { (0, r) };
        let golden = 0.618_033_988_749_895;
        Artifact {
            fx,
            fy,
            phase: TAU * ((g as f64 + 1.0) * golden).fract(),
            amplitude: self.amplitude,
            partial: self.partial_every > 0 && (g + 1).is_multiple_of(self.partial_every),
        }
    }

    pub fn validate(&self) -> Result<(), ForgeError> {
        let bad = |m: String| Err(ForgeError::InvalidSpec(m));
        if self.n_seen == 0 {
            return bad("at least one seen generator is required".into());
        }
        if self.n_generators < self.n_folds + self.n_seen {
            return bad(format!(
                "n_generators ({}) must be at least n_folds + n_seen ({} + {})",
                self.n_generators, self.n_folds, self.n_seen
            ));
        }
        if self.image_size < 16 {
            return bad("image_size must be at least 16".into());
        }
        if self.images_per_class < self.n_unseen().max(1) {
            return bad("images_per_class must cover every unseen generator".into());
        }
        if !(0.0..=127.0).contains(&self.amplitude) {
            return bad(format!("amplitude must lie in [0, 127], got {}", self.amplitude));
        }
        if !(self.texture_std >= 0.0 && self.noise_std >= 0.0 && self.texture_cutoff > 0.0) {
            return bad("texture parameters must be non-negative with a positive cutoff".into());
        }
        if !(self.partial_min_frac > 0.0 && self.partial_min_frac <= 1.0) {
            return bad("partial_min_frac must lie in (0, 1]".into());
        }
        let half = (self.image_size / 2) as i32;
        let mut freqs = Vec::new();
        for g in 0..self.n_generators {
            let a = self.artifact(g);
            if (a.fx, a.fy) == (0, 0) || a.fx.abs() >= half || a.fy.abs() >= half {
                return bad(format!("generator {g} frequency ({}, {}) is out of band", a.fx, a.fy));
            }
            if freqs.contains(&(a.fx, a.fy)) {
                return bad(format!("generator {g} repeats frequency ({}, {})", a.fx, a.fy));
            }
            freqs.push((a.fx, a.fy));
        }
        Ok(())
    }

    pub fn taxonomy(&self) -> Result<ClassTaxonomy, ForgeError> {
        let families = [GeneratorFamily::Gan, GeneratorFamily::Diffusion, GeneratorFamily::Other];
        let gens = (0..self.n_generators)
            .map(|g| {
                let manip = if self.artifact(g).partial { Manipulation::Partial } else { Manipulation::Full };
                GeneratorInfo::new(Self::generator_id(g), families[g % 3], manip, g < self.n_seen)
            })
            .collect();
        Ok(ClassTaxonomy::from_generators(gens)?)
    }

    pub fn to_meta(&self) -> Vec<(String, String)> {
        let v = serde_json::to_value(self).expect("serializable");
        v.as_object()
            .expect("struct")
            .iter()
            .map(|(k, v)| (format!("toy.{k}"), v.to_string()))
            .collect()
    }

    /// Entries in manifest order, without images.
    pub fn entries(&self) -> Result<Vec<ManifestEntry>, ForgeError> {
        let tax = self.taxonomy()?;
        let width = (self.images_per_class.max(1) - 1).to_string().len().max(4);
        let mut out = Vec::new();
        let entry = |id: String, class_index: usize, generator: Option<String>, category: &str| ManifestEntry {
            path: format!("images/{id}.png"),
            entry_id: id,
            class_index,
            generator_id: generator,
            category: category.to_string(),
            source: "toygen".to_string(),
            fold: None,
        };
        for i in 0..self.images_per_class {
            out.push(entry(format!("real_{i:0width$}"), tax.real_index(), None, "texture"));
        }
        for g in 0..self.n_seen {
            let id = Self::generator_id(g);
            let class = tax.class_for_generator(&id).expect("seen generator");
            let fam = tax.generator(&id).expect("known").family.as_str().to_string();
            for i in 0..self.images_per_class {
                out.push(entry(format!("{id}_{i:0width$}"), class, Some(id.clone()), &fam));
            }
        }
        let n_unseen = self.n_unseen();
        for (u, g) in (self.n_seen..self.n_generators).enumerate() {
            let id = Self::generator_id(g);
            let fam = tax.generator(&id).expect("known").family.as_str().to_string();
            let count = self.images_per_class / n_unseen + usize::from(u < self.images_per_class % n_unseen);
            for i in 0..count {
                out.push(entry(format!("{id}_{i:0width$}"), tax.uf_index(), Some(id.clone()), &fam));
            }
        }
        Ok(out)
    }
}

fn fft2(data: &mut [Complex<f64>], w: usize, h: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for r in data.chunks_exact_mut(w) {
        row.process(r);
    }
    let mut buf = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            buf[y] = data[y * w + x];
        }
        col.process(&mut buf);
        for y in 0..h {
            data[y * w + x] = buf[y];
        }
    }
}

fn signed_freq(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Zero-mean Gaussian-low-passed noise scaled to standard deviation `std`.
fn texture(rng: &mut StreamRng, n: usize, cutoff: f64, std: f64) -> Vec<f64> {
    let mut d: Vec<Complex<f64>> = (0..n * n).map(|_| Complex::new(rng.normal(), 0.0)).collect();
    fft2(&mut d, n, n, false);
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (signed_freq(x, n), signed_freq(y, n));
            let gain = if x == 0 && y == 0 {
                0.0
            } else {
                (-(fx * fx + fy * fy) / (cutoff * cutoff)).exp()
            };
            d[y * n + x] *= gain;
        }
    }
    fft2(&mut d, n, n, true);
    let re: Vec<f64> = d.iter().map(|c| c.re).collect();
    let mean = re.iter().sum::<f64>() / re.len() as f64;
    let sd = (re.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / re.len() as f64).sqrt();
    let scale = if sd > 0.0 { std / sd } else { 0.0 };
    re.iter().map(|v| (v - mean) * scale).collect()
}

/// Render one image. `generator` is `None` for a real image. All draws come
/// from a stream keyed by `entry_id`.
pub fn synth_image(spec: &ToySpec, generator: Option<usize>, entry_id: &str) -> RgbImage {
    let n = spec.image_size as usize;
    let mut rng = derive_rng(spec.seed, entry_id);
    let base = texture(&mut rng, n, spec.texture_cutoff, spec.texture_std);
    let detail = texture(&mut rng, n, spec.texture_cutoff, spec.texture_std * 0.25);
    let means = [0; 3].map(|_| rng.uniform_f64(90.0, 165.0));
    let gains = [0; 3].map(|_| rng.uniform_f64(0.8, 1.2));

    let stamp: Option<(f64, f64, f64, f64, [usize; 4])> = generator.map(|g| {
        let a = spec.artifact(g);
        let rect = if a.partial {
            let lo = ((spec.partial_min_frac * n as f64).ceil() as usize).clamp(1, n);
            let (rw, rh) = (rng.uniform_usize(lo, n), rng.uniform_usize(lo, n));
            [rng.uniform_usize(0, n - rw), rng.uniform_usize(0, n - rh), rw, rh]
        } else {
            [0, 0, n, n]
        };
        let (kx, ky) = (TAU * f64::from(a.fx) / n as f64, TAU * f64::from(a.fy) / n as f64);
        (a.amplitude, kx, ky, a.phase, rect)
    });

    let mut img = RgbImage::new(spec.image_size, spec.image_size);
    for y in 0..n {
        for x in 0..n {
            let mut add = 0.0;
            if let Some((amp, kx, ky, phase, [rx, ry, rw, rh])) = stamp {
                if x >= rx && x < rx + rw && y >= ry && y < ry + rh {
                    add = amp * (kx * x as f64 + ky * y as f64 + phase).sin();
                }
            }
            let px = img.get_pixel_mut(x as u32, y as u32);
            for c in 0..3 {
                let v = means[c] + gains[c] * base[y * n + x] + detail[y * n + x] + add + spec.noise_std * rng.normal();
                px.0[c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    img
}

fn generator_index(entry: &ManifestEntry) -> Option<usize> {
    entry.generator_id.as_deref().and_then(|g| g.strip_prefix('g')).and_then(|s| s.parse().ok())
}

/// Render the dataset in memory, index-aligned with [`ToySpec::entries`].
pub fn synth_images(spec: &ToySpec, entries: &[ManifestEntry], workers: usize) -> Vec<RgbImage> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        entries
            .par_iter()
            .map(|e| synth_image(spec, generator_index(e), &e.entry_id))
            .collect()
    })
}

/// Write `out_dir/images/<entry>.png` and `out_dir/manifest.tsv`.
pub fn synth_dataset(spec: &ToySpec, out_dir: &Path, workers: usize, extra_meta: &[(String, String)]) -> Result<Manifest, ForgeError> {
    spec.validate()?;
    let entries = spec.entries()?;
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| ForgeError::Write {
        path: img_dir.display().to_string(),
        message: e.to_string(),
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        entries.par_iter().try_for_each(|e| {
            let img = synth_image(spec, generator_index(e), &e.entry_id);
            let path = out_dir.join(&e.path);
            img.save(&path).map_err(|err| ForgeError::Write {
                path: path.display().to_string(),
                message: err.to_string(),
            })
        })
    })?;
    let mut meta = extra_meta.to_vec();
    meta.extend(spec.to_meta());
    let manifest = Manifest::new(spec.taxonomy()?, entries).with_meta(meta);
    write_manifest(&manifest, out_dir.join(MANIFEST_FILE))?;
    log::info!("wrote {} toy images to {}", manifest.entries.len(), out_dir.display());
    Ok(manifest)
}

/// Magnitude of the luminance spectrum at `(fx, fy)` cycles per image,
/// divided by the mean magnitude over all non-DC bins.
pub fn artifact_energy(image: &RgbImage, fx: i32, fy: i32) -> f64 {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let lum: Vec<f64> = image
        .pixels()
        .map(|p| 0.299 * f64::from(p.0[0]) + 0.587 * f64::from(p.0[1]) + 0.114 * f64::from(p.0[2]))
        .collect();
    let mean = lum.iter().sum::<f64>() / lum.len() as f64;
    let mut d: Vec<Complex<f64>> = lum.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    fft2(&mut d, w, h, false);
    let background = d.iter().skip(1).map(|c| c.norm()).sum::<f64>() / (w * h - 1) as f64;
    if background == 0.0 {
        return 0.0;
    }
    let bx = fx.rem_euclid(w as i32) as usize;
    let by = fy.rem_euclid(h as i32) as usize;
    d[by * w + bx].norm() / background
}

/// Trivial detector: the generator whose frequency carries the most
/// energy, if that energy exceeds `threshold`; `None` means real.
pub fn spectral_classify(image: &RgbImage, spec: &ToySpec, threshold: f64) -> Option<usize> {
    (0..spec.n_generators)
        .map(|g| {
            let a = spec.artifact(g);
            (g, artifact_energy(image, a.fx, a.fy))
        })
        .filter(|&(_, e)| e > threshold)
        .fold(None, |best: Option<(usize, f64)>, (g, e)| match best {
            Some((_, be)) if be >= e => best,
            _ => Some((g, e)),
        })
        .map(|(g, _)| g)
}
