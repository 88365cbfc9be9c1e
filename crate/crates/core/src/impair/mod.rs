//! Social-platform impairment chain: seeded random crop, bilinear resize to a
//! square target, JPEG at a random quality.
//!
//! Draw order per entry is fixed: crop width, crop height, x offset, y
//! offset, JPEG quality. Each entry gets its own stream from
//! [`derive_rng`](crate::rng::derive_rng) keyed by its entry id, so output
//! bytes do not depend on worker count or scheduling.

mod build;
mod jpeg;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::rng::Draw;

pub use build::{build_dataset, BuildOptions, BuildOutput, SkipRecord, SKIP_REPORT_FILE};
pub use jpeg::{encode_rgb, scaled_qtable, ChromaSubsampling, JpegError};

#[derive(Debug, thiserror::Error)]
pub enum ImpairError {
    #[error("invalid impairment config: {field}: {message}")]
    InvalidConfig { field: &'static str, message: String },
    #[error("image-too-small: {width}x{height} below minimum crop side {crop_min}")]
    ImageTooSmall { width: u32, height: u32, crop_min: u32 },
    #[error("encode failed for entry `{entry}`: {source}")]
    Encode {
        entry: String,
        #[source]
        source: JpegError,
    },
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentConfig {
    /// Aspect-ratio floor `min(w,h)/max(w,h) >= num/den`.
    pub crop_ratio_num: u32,
    pub crop_ratio_den: u32,
    pub crop_min: u32,
    pub crop_max: u32,
    pub target_size: u32,
    pub q_min: u8,
    pub q_max: u8,
    pub master_seed: u64,
    pub subsampling: ChromaSubsampling,
}

impl Default for ImpairmentConfig {
    fn default() -> Self {
        Self {
            crop_ratio_num: 5,
            crop_ratio_den: 8,
            crop_min: 160,
            crop_max: 2048,
            target_size: 200,
            q_min: 65,
            q_max: 100,
            master_seed: 0,
            subsampling: ChromaSubsampling::Yuv420,
        }
    }
}

impl ImpairmentConfig {
    /// Defaults with crop bounds rescaled proportionally to a different
    /// target side (`crop_min = 160 * target / 200`, likewise `crop_max`).
    pub fn scaled_to(target_size: u32) -> Self {
        let d = Self::default();
        Self {
            crop_min: d.crop_min * target_size / d.target_size,
            crop_max: d.crop_max * target_size / d.target_size,
            target_size,
            ..d
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn crop_ratio(&self) -> f64 {
        f64::from(self.crop_ratio_num) / f64::from(self.crop_ratio_den)
    }

    pub fn validate(&self) -> Result<(), ImpairError> {
        let bad = |field, message: &str| {
            Err(ImpairError::InvalidConfig {
                field,
                message: message.to_string(),
            })
        };
        if self.crop_ratio_num == 0 || self.crop_ratio_den == 0 || self.crop_ratio_num > self.crop_ratio_den {
            return bad("ratio", "crop ratio must satisfy 0 < r <= 1");
        }
        if self.crop_min == 0 {
            return bad("crop_min", "must be positive");
        }
        if self.crop_min > self.crop_max {
            return bad("crop_min", "must not exceed crop_max");
        }
        if self.target_size == 0 {
            return bad("target", "must be positive");
        }
        if self.q_min < 1 || self.q_min > self.q_max || self.q_max > 100 {
            return bad("qmin", "quality range must satisfy 1 <= qmin <= qmax <= 100");
        }
        Ok(())
    }

    /// Effective settings as ordered `key -> value` pairs for artifact headers.
    pub fn to_meta(&self) -> Vec<(String, String)> {
        vec![
            ("impair.ratio".into(), format!("{}/{}", self.crop_ratio_num, self.crop_ratio_den)),
            ("impair.crop_min".into(), self.crop_min.to_string()),
            ("impair.crop_max".into(), self.crop_max.to_string()),
            ("impair.target".into(), self.target_size.to_string()),
            ("impair.qmin".into(), self.q_min.to_string()),
            ("impair.qmax".into(), self.q_max.to_string()),
            ("impair.seed".into(), self.master_seed.to_string()),
            ("impair.subsampling".into(), self.subsampling.to_string()),
            ("impair.resize".into(), "bilinear-half-pixel-round-half-away".into()),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Sample a crop box.
///
/// `w` is uniform over the widths that still admit a legal height, then `h`
/// is uniform over `[crop_min, min(crop_max, height)]` intersected with the
/// aspect-ratio band around `w`; the offsets are uniform over valid
/// positions.
pub fn sample_crop<R: Draw + ?Sized>(
    width: u32,
    height: u32,
    cfg: &ImpairmentConfig,
    rng: &mut R,
) -> Result<CropBox, ImpairError> {
    if width < cfg.crop_min || height < cfg.crop_min {
        return Err(ImpairError::ImageTooSmall {
            width,
            height,
            crop_min: cfg.crop_min,
        });
    }
    let (num, den) = (u64::from(cfg.crop_ratio_num), u64::from(cfg.crop_ratio_den));
    let w_cap = u64::from(cfg.crop_max.min(width));
    let h_cap = u64::from(cfg.crop_max.min(height));
    let lo = u64::from(cfg.crop_min);

    // ceil(w * r) <= h_cap  <=>  w <= floor(h_cap / r)
    let w_hi = w_cap.min(h_cap * den / num);
    let w = rng.uniform_u64(lo, w_hi);
    let h_lo = lo.max((w * num).div_ceil(den));
    let h_hi = h_cap.min(w * den / num);
    let h = rng.uniform_u64(h_lo, h_hi);

    let x = rng.uniform_u64(0, u64::from(width) - w);
    let y = rng.uniform_u64(0, u64::from(height) - h);
    Ok(CropBox {
        x: x as u32,
        y: y as u32,
        w: w as u32,
        h: h as u32,
    })
}

pub fn crop(image: &RgbImage, b: CropBox) -> RgbImage {
    image::imageops::crop_imm(image, b.x, b.y, b.w, b.h).to_image()
}

/// Bilinear resize with half-pixel centres, edge clamping, and
/// round-half-away-from-zero quantization.
pub fn resize_bilinear(src: &RgbImage, out_w: u32, out_h: u32) -> RgbImage {
    let (iw, ih) = (src.width() as usize, src.height() as usize);
    let sx = iw as f64 / f64::from(out_w);
    let sy = ih as f64 / f64::from(out_h);
    let taps = |o: u32, scale: f64, n: usize| -> (usize, usize, f64) {
        let p = ((f64::from(o) + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, p - i0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|o| taps(o, sx, iw)).collect();
    let raw = src.as_raw();
    let mut out = RgbImage::new(out_w, out_h);
    let dst: &mut [u8] = &mut out;
    for oy in 0..out_h {
        let (y0, y1, fy) = taps(oy, sy, ih);
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..3 {
                let p = |x: usize, y: usize| f64::from(raw[(y * iw + x) * 3 + c]);
                let top = p(x0, y0) + (p(x1, y0) - p(x0, y0)) * fx;
                let bot = p(x0, y1) + (p(x1, y1) - p(x0, y1)) * fx;
                let v = top + (bot - top) * fy;
                dst[((oy as usize) * out_w as usize + ox) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

/// Result of impairing one image.
#[derive(Clone, Debug)]
pub struct Impaired {
    pub jpeg: Vec<u8>,
    pub crop: CropBox,
    pub quality: u8,
}

/// Crop, resize to `target_size²`, and JPEG-encode at a drawn quality.
pub fn apply_impairment<R: Draw + ?Sized>(
    image: &RgbImage,
    cfg: &ImpairmentConfig,
    rng: &mut R,
    entry_id: &str,
) -> Result<Impaired, ImpairError> {
    let b = sample_crop(image.width(), image.height(), cfg, rng)?;
    let quality = rng.uniform_u64(u64::from(cfg.q_min), u64::from(cfg.q_max)) as u8;
    let cropped = crop(image, b);
    let resized = resize_bilinear(&cropped, cfg.target_size, cfg.target_size);
    let jpeg = encode_rgb(
        resized.as_raw(),
        cfg.target_size as usize,
        cfg.target_size as usize,
        quality,
        cfg.subsampling,
    )
    .map_err(|source| ImpairError::Encode {
        entry: entry_id.to_string(),
        source,
    })?;
    Ok(Impaired {
        jpeg,
        crop: b,
        quality,
    })
}
