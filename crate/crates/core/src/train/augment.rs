use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::rng::Draw;

/// Augmentation menu. Each family has an enable flag and an application
/// probability; magnitudes are symmetric ranges unless noted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub affine: bool,
    pub affine_p: f64,
    pub rotate_deg: f64,
    /// Fraction of the side.
    pub shift_frac: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub shear_deg: f64,
    pub photometric: bool,
    pub photometric_p: f64,
    /// Additive, in units of full range.
    pub brightness: f64,
    /// Multiplicative around the mean.
    pub contrast: f64,
    /// Hue rotation in turns.
    pub hue: f64,
    pub hflip: bool,
    pub hflip_p: f64,
    pub vflip: bool,
    pub vflip_p: f64,
    pub cutout: bool,
    pub cutout_p: f64,
    pub cutout_count: usize,
    /// Maximum hole side as a fraction of the shorter image side.
    pub cutout_frac: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            affine: true,
            affine_p: 0.5,
            rotate_deg: 15.0,
            shift_frac: 0.1,
            scale_min: 0.9,
            scale_max: 1.1,
            shear_deg: 10.0,
            photometric: true,
            photometric_p: 0.5,
            brightness: 0.2,
            contrast: 0.2,
            hue: 0.05,
            hflip: true,
            hflip_p: 0.5,
            vflip: true,
            vflip_p: 0.5,
            cutout: true,
            cutout_p: 0.5,
            cutout_count: 1,
            cutout_frac: 0.25,
        }
    }
}

impl AugmentConfig {
    /// Every family switched off: [`augment`] returns its input unchanged.
    pub fn disabled() -> Self {
        Self {
            affine: false,
            photometric: false,
            hflip: false,
            vflip: false,
            cutout: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("affine_p", self.affine_p),
            ("photometric_p", self.photometric_p),
            ("hflip_p", self.hflip_p),
            ("vflip_p", self.vflip_p),
            ("cutout_p", self.cutout_p),
            ("cutout_frac", self.cutout_frac),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        for (name, v) in [
            ("rotate_deg", self.rotate_deg),
            ("shift_frac", self.shift_frac),
            ("shear_deg", self.shear_deg),
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("hue", self.hue),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be a finite non-negative magnitude, got {v}"));
            }
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max.is_finite()) {
            return Err(format!(
                "scale range must satisfy 0 < scale_min <= scale_max, got [{}, {}]",
                self.scale_min, self.scale_max
            ));
        }
        if self.contrast >= 1.0 {
            return Err("contrast must be below 1".into());
        }
        Ok(())
    }

    pub fn to_meta(&self) -> Vec<(String, String)> {
        let v = serde_json::to_value(self).expect("serializable");
        v.as_object()
            .expect("struct")
            .iter()
            .map(|(k, v)| (format!("aug.{k}"), v.to_string()))
            .collect()
    }
}

/// Mirror left-right.
pub fn hflip(image: &RgbImage) -> RgbImage {
    image::imageops::flip_horizontal(image)
}

pub fn vflip(image: &RgbImage) -> RgbImage {
    image::imageops::flip_vertical(image)
}

struct Planes {
    w: usize,
    h: usize,
    px: Vec<[f32; 3]>,
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

impl Planes {
    fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let at = |xx: isize, yy: isize| self.px[reflect(yy, self.h) * self.w + reflect(xx, self.w)];
        let (a, b, c, d) = (at(x0, y0), at(x0 + 1, y0), at(x0, y0 + 1), at(x0 + 1, y0 + 1));
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] + (b[k] - a[k]) * fx;
            let bot = c[k] + (d[k] - c[k]) * fx;
            out[k] = top + (bot - top) * fy;
        }
        out
    }
}

/// Apply the enabled augmentations in fixed order: affine, photometric,
/// horizontal flip, vertical flip, cutout. Each enabled family draws its
/// gate, then its magnitudes only when applied. Output has the input's
/// dimensions and stays in `[0, 255]`.
pub fn augment<R: Draw + ?Sized>(image: &RgbImage, cfg: &AugmentConfig, rng: &mut R) -> RgbImage {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut p = Planes {
        w,
        h,
        px: image.pixels().map(|q| q.0.map(f32::from)).collect(),
    };

    if cfg.affine && rng.bernoulli(cfg.affine_p) {
        let rot = rng.uniform_f64(-cfg.rotate_deg, cfg.rotate_deg).to_radians();
        let tx = rng.uniform_f64(-cfg.shift_frac, cfg.shift_frac) * w as f64;
        let ty = rng.uniform_f64(-cfg.shift_frac, cfg.shift_frac) * h as f64;
        let s = rng.uniform_f64(cfg.scale_min, cfg.scale_max);
        let sh = rng.uniform_f64(-cfg.shear_deg, cfg.shear_deg).to_radians().tan();
        // forward map about the centre: A = s * R(rot) * [[1, sh], [0, 1]]
        let (c, sn) = (rot.cos(), rot.sin());
        let a = [s * c, s * (c * sh - sn), s * sn, s * (sn * sh + c)];
        let det = a[0] * a[3] - a[1] * a[2];
        let inv = [a[3] / det, -a[1] / det, -a[2] / det, a[0] / det];
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - cx - tx;
                let dy = y as f64 - cy - ty;
                out.push(p.sample(inv[0] * dx + inv[1] * dy + cx, inv[2] * dx + inv[3] * dy + cy));
            }
        }
        p.px = out;
    }

    if cfg.photometric && rng.bernoulli(cfg.photometric_p) {
        let b = rng.uniform_f64(-cfg.brightness, cfg.brightness) as f32 * 255.0;
        let ct = 1.0 + rng.uniform_f64(-cfg.contrast, cfg.contrast) as f32;
        let theta = rng.uniform_f64(-cfg.hue, cfg.hue) * std::f64::consts::TAU;
        let mean = p.px.iter().map(|q| (q[0] + q[1] + q[2]) / 3.0).sum::<f32>() / p.px.len().max(1) as f32;
        let (ch, sh) = (theta.cos() as f32, theta.sin() as f32);
        for q in &mut p.px {
            // YIQ rotation of the chroma plane
            let y = 0.299 * q[0] + 0.587 * q[1] + 0.114 * q[2];
            let i0 = 0.596 * q[0] - 0.274 * q[1] - 0.322 * q[2];
            let q0 = 0.211 * q[0] - 0.523 * q[1] + 0.312 * q[2];
            let (i, qq) = (i0 * ch - q0 * sh, i0 * sh + q0 * ch);
            let rgb = [
                y + 0.956 * i + 0.621 * qq,
                y - 0.272 * i - 0.647 * qq,
                y - 1.106 * i + 1.703 * qq,
            ];
            for k in 0..3 {
                q[k] = ((rgb[k] - mean) * ct + mean + b).clamp(0.0, 255.0);
            }
        }
    }

    if cfg.hflip && rng.bernoulli(cfg.hflip_p) {
        for row in p.px.chunks_exact_mut(w) {
            row.reverse();
        }
    }
    if cfg.vflip && rng.bernoulli(cfg.vflip_p) {
        let mut out = Vec::with_capacity(w * h);
        for row in p.px.chunks_exact(w).rev() {
            out.extend_from_slice(row);
        }
        p.px = out;
    }

    if cfg.cutout && rng.bernoulli(cfg.cutout_p) {
        let max_side = ((cfg.cutout_frac * w.min(h) as f64).floor() as usize).max(1);
        for _ in 0..cfg.cutout_count {
            let side = rng.uniform_usize(1, max_side);
            let x0 = rng.uniform_usize(0, w.saturating_sub(side));
            let y0 = rng.uniform_usize(0, h.saturating_sub(side));
            for y in y0..(y0 + side).min(h) {
                for x in x0..(x0 + side).min(w) {
                    p.px[y * w + x] = [0.0; 3];
                }
            }
        }
    }

    let mut out = RgbImage::new(w as u32, h as u32);
    for (dst, q) in out.pixels_mut().zip(&p.px) {
        dst.0 = q.map(|v| v.round().clamp(0.0, 255.0) as u8);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    fn img() -> RgbImage {
        RgbImage::from_fn(17, 11, |x, y| image::Rgb([(x * 13) as u8, (y * 21) as u8, ((x + y) * 5) as u8]))
    }

    #[test]
    fn disabled_is_identity() {
        let i = img();
        assert_eq!(augment(&i, &AugmentConfig::disabled(), &mut derive_rng(1, "a")), i);
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<_> = (-3..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
    }

    #[test]
    fn forced_hflip_twice_is_identity() {
        let cfg = AugmentConfig {
            hflip: true,
            hflip_p: 1.0,
            ..AugmentConfig::disabled()
        };
        let i = img();
        let once = augment(&i, &cfg, &mut derive_rng(0, "x"));
        assert_eq!(once, hflip(&i));
        assert_eq!(augment(&once, &cfg, &mut derive_rng(0, "y")), i);
    }

    #[test]
    fn full_menu_keeps_shape_and_is_seeded() {
        let cfg = AugmentConfig {
            affine_p: 1.0,
            photometric_p: 1.0,
            cutout_p: 1.0,
            ..AugmentConfig::default()
        };
        let i = img();
        let a = augment(&i, &cfg, &mut derive_rng(3, "k"));
        assert_eq!(a.dimensions(), i.dimensions());
        assert_eq!(a, augment(&i, &cfg, &mut derive_rng(3, "k")));
        assert_ne!(a, i);
    }

    #[test]
    fn validation_rejects_bad_ranges() {
        assert!(AugmentConfig::default().validate().is_ok());
        let bad = AugmentConfig {
            hflip_p: 1.5,
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig {
            scale_min: 1.2,
            scale_max: 1.1,
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
