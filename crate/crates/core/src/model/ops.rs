//! Forward and backward kernels for the detector, channels-last.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Floating-point element type the detector can run in.
pub trait Real: Float + FromPrimitive + Sum + Default + Send + Sync + Debug + 'static {
    /// # Safety
    /// Pointers and strides must describe valid `m×k`, `k×n` and `m×n`
    /// matrices that do not alias `c`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// `c = beta * c + op(a) · op(b)` with row-major storage.
///
/// `a` is `m×k` (stored `k×m` when `ta`), `b` is `k×n` (stored `n×k` when `tb`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(m: usize, k: usize, n: usize, a: &[T], ta: bool, b: &[T], tb: bool, c: &mut [T], beta: T) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths checked above; `c` is a distinct mutable borrow.
    unsafe {
        T::gemm_raw(m, k, n, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// A batch of feature maps, `[n, h, w, c]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Act<T> {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<T>,
}

impl<T: Real> Act<T> {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![T::zero(); n * h * w * c],
        }
    }

    pub fn from_vec(n: usize, h: usize, w: usize, c: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * h * w * c, "buffer does not match shape");
        Self { n, h, w, c, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }

    pub fn rows(&self) -> usize {
        self.n * self.h * self.w
    }

    fn like(&self, data: Vec<T>) -> Self {
        Self { data, ..*self }
    }
}

impl<T> Act<T> {
    fn dims_like<U>(&self, data: Vec<U>) -> Act<U> {
        Act {
            n: self.n,
            h: self.h,
            w: self.w,
            c: self.c,
            data,
        }
    }
}

fn im2col<T: Real>(x: &Act<T>, k: usize, s: usize, ho: usize, wo: usize) -> Vec<T> {
    let kc = k * x.c;
    let mut cols = vec![T::zero(); x.n * ho * wo * k * kc];
    let mut r = 0;
    for img in 0..x.n {
        for oy in 0..ho {
            for ox in 0..wo {
                let dst = &mut cols[r * k * kc..(r + 1) * k * kc];
                for ky in 0..k {
                    let src = ((img * x.h + oy * s + ky) * x.w + ox * s) * x.c;
                    dst[ky * kc..(ky + 1) * kc].copy_from_slice(&x.data[src..src + kc]);
                }
                r += 1;
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], shape: [usize; 4], k: usize, s: usize, ho: usize, wo: usize) -> Act<T> {
    let [n, h, w, c] = shape;
    let mut dx = Act::zeros(n, h, w, c);
    let kc = k * c;
    let mut r = 0;
    for img in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let src = &cols[r * k * kc..(r + 1) * k * kc];
                for ky in 0..k {
                    let dst = ((img * h + oy * s + ky) * w + ox * s) * c;
                    for (d, &v) in dx.data[dst..dst + kc].iter_mut().zip(&src[ky * kc..(ky + 1) * kc]) {
                        *d = *d + v;
                    }
                }
                r += 1;
            }
        }
    }
    dx
}

/// Output side of a valid convolution.
pub fn conv_out(side: usize, k: usize, s: usize) -> Option<usize> {
    (side >= k).then(|| (side - k) / s + 1)
}

/// Valid (unpadded) convolution. Weight layout `[k, k, c_in, c_out]`.
pub fn conv_forward<T: Real>(x: &Act<T>, weight: &[T], bias: &[T], k: usize, s: usize, c_out: usize) -> Act<T> {
    let ho = conv_out(x.h, k, s).expect("input smaller than kernel");
    let wo = conv_out(x.w, k, s).expect("input smaller than kernel");
    let cols = im2col(x, k, s, ho, wo);
    let rows = x.n * ho * wo;
    let mut y = Vec::with_capacity(rows * c_out);
    for _ in 0..rows {
        y.extend_from_slice(bias);
    }
    gemm(rows, k * k * x.c, c_out, &cols, false, weight, false, &mut y, T::one());
    Act::from_vec(x.n, ho, wo, c_out, y)
}

/// Gradients of [`conv_forward`]: `(dx, dweight, dbias)`. `dx` is skipped
/// unless `need_dx`.
pub fn conv_backward<T: Real>(
    x: &Act<T>,
    dy: &Act<T>,
    weight: &[T],
    k: usize,
    s: usize,
    need_dx: bool,
) -> (Option<Act<T>>, Vec<T>, Vec<T>) {
    let (ho, wo, c_out) = (dy.h, dy.w, dy.c);
    let rows = x.n * ho * wo;
    let kkc = k * k * x.c;
    let cols = im2col(x, k, s, ho, wo);
    let mut dw = vec![T::zero(); kkc * c_out];
    gemm(kkc, rows, c_out, &cols, true, &dy.data, false, &mut dw, T::zero());
    let db = column_sums(&dy.data, c_out);
    if !need_dx {
        return (None, dw, db);
    }
    let mut dcols = vec![T::zero(); rows * kkc];
    gemm(rows, c_out, kkc, &dy.data, false, weight, true, &mut dcols, T::zero());
    (Some(col2im(&dcols, x.shape(), k, s, ho, wo)), dw, db)
}

fn column_sums<T: Real>(m: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for row in m.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    out
}

/// Depthwise `k×k` convolution with zero padding `k/2`, stride 1.
/// Weight layout `[k, k, c]`.
pub fn dwconv_forward<T: Real>(x: &Act<T>, weight: &[T], bias: &[T], k: usize) -> Act<T> {
    let (h, w, c) = (x.h, x.w, x.c);
    let pad = k / 2;
    let mut y = Act::zeros(x.n, h, w, c);
    for img in 0..x.n {
        for oy in 0..h {
            for ox in 0..w {
                let o = ((img * h + oy) * w + ox) * c;
                let out = &mut y.data[o..o + c];
                out.copy_from_slice(bias);
                for ky in 0..k {
                    let iy = oy + ky;
                    if iy < pad || iy - pad >= h {
                        continue;
                    }
                    let iy = iy - pad;
                    for kx in 0..k {
                        let ix = ox + kx;
                        if ix < pad || ix - pad >= w {
                            continue;
                        }
                        let i = ((img * h + iy) * w + ix - pad) * c;
                        let wk = &weight[(ky * k + kx) * c..(ky * k + kx + 1) * c];
                        for ((o, &xv), &wv) in out.iter_mut().zip(&x.data[i..i + c]).zip(wk) {
                            *o = *o + xv * wv;
                        }
                    }
                }
            }
        }
    }
    y
}

/// Gradients of [`dwconv_forward`]: `(dx, dweight, dbias)`.
pub fn dwconv_backward<T: Real>(x: &Act<T>, dy: &Act<T>, weight: &[T], k: usize) -> (Act<T>, Vec<T>, Vec<T>) {
    let (h, w, c) = (x.h, x.w, x.c);
    let pad = k / 2;
    let mut dx = Act::zeros(x.n, h, w, c);
    let mut dw = vec![T::zero(); k * k * c];
    for img in 0..x.n {
        for oy in 0..h {
            for ox in 0..w {
                let o = ((img * h + oy) * w + ox) * c;
                let g = &dy.data[o..o + c];
                for ky in 0..k {
                    let iy = oy + ky;
                    if iy < pad || iy - pad >= h {
                        continue;
                    }
                    let iy = iy - pad;
                    for kx in 0..k {
                        let ix = ox + kx;
                        if ix < pad || ix - pad >= w {
                            continue;
                        }
                        let i = ((img * h + iy) * w + ix - pad) * c;
                        let widx = (ky * k + kx) * c;
                        let wk = &weight[widx..widx + c];
                        for ((d, &gv), &wv) in dx.data[i..i + c].iter_mut().zip(g).zip(wk) {
                            *d = *d + gv * wv;
                        }
                        for ((d, &gv), &xv) in dw[widx..widx + c].iter_mut().zip(g).zip(&x.data[i..i + c]) {
                            *d = *d + gv * xv;
                        }
                    }
                }
            }
        }
    }
    (dx, dw, column_sums(&dy.data, c))
}

/// Saved statistics for the LayerNorm backward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

/// LayerNorm over the last (channel) axis of a `rows×c` matrix.
pub fn layernorm_forward<T: Real>(x: &[T], c: usize, gamma: &[T], beta: &[T], eps: T) -> (Vec<T>, NormCache<T>) {
    let rows = x.len() / c;
    let inv_c = T::one() / T::of(c as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let xs = &x[r * c..(r + 1) * c];
        let mean = xs.iter().copied().sum::<T>() * inv_c;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..c {
            let xh = (xs[j] - mean) * rs;
            xhat[r * c + j] = xh;
            y[r * c + j] = xh * gamma[j] + beta[j];
        }
    }
    (y, NormCache { xhat, rstd })
}

/// Gradients of [`layernorm_forward`]: `(dx, dgamma, dbeta)`.
pub fn layernorm_backward<T: Real>(dy: &[T], cache: &NormCache<T>, c: usize, gamma: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = dy.len() / c;
    let inv_c = T::one() / T::of(c as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for r in 0..rows {
        let g = &dy[r * c..(r + 1) * c];
        let xh = &cache.xhat[r * c..(r + 1) * c];
        let mut mean_d = T::zero();
        let mut mean_dx = T::zero();
        for j in 0..c {
            let d = g[j] * gamma[j];
            mean_d = mean_d + d;
            mean_dx = mean_dx + d * xh[j];
            dgamma[j] = dgamma[j] + g[j] * xh[j];
            dbeta[j] = dbeta[j] + g[j];
        }
        mean_d = mean_d * inv_c;
        mean_dx = mean_dx * inv_c;
        let rs = cache.rstd[r];
        for j in 0..c {
            let d = g[j] * gamma[j];
            dx[r * c + j] = rs * (d - mean_d - xh[j] * mean_dx);
        }
    }
    (dx, dgamma, dbeta)
}

/// `y = x · W + b` for a `rows×c_in` input and `[c_in, c_out]` weight.
pub fn linear_forward<T: Real>(x: &[T], c_in: usize, weight: &[T], bias: &[T]) -> Vec<T> {
    let c_out = bias.len();
    let rows = x.len() / c_in;
    let mut y = Vec::with_capacity(rows * c_out);
    for _ in 0..rows {
        y.extend_from_slice(bias);
    }
    gemm(rows, c_in, c_out, x, false, weight, false, &mut y, T::one());
    y
}

/// Gradients of [`linear_forward`]: `(dx, dweight, dbias)`.
pub fn linear_backward<T: Real>(x: &[T], dy: &[T], c_in: usize, weight: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c_out = weight.len() / c_in;
    let rows = x.len() / c_in;
    let mut dw = vec![T::zero(); c_in * c_out];
    gemm(c_in, rows, c_out, x, true, dy, false, &mut dw, T::zero());
    let mut dx = vec![T::zero(); rows * c_in];
    gemm(rows, c_out, c_in, dy, false, weight, true, &mut dx, T::zero());
    (dx, dw, column_sums(dy, c_out))
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (T::of(GELU_K) * (x + T::of(GELU_A) * x * x * x)).tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    let u = T::of(GELU_K) * (x + T::of(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = T::of(GELU_K) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

/// Mean over the spatial axes: `[n, h, w, c] -> n×c`.
pub fn mean_pool<T: Real>(x: &Act<T>) -> Vec<T> {
    let hw = x.h * x.w;
    let scale = T::one() / T::of(hw as f64);
    let mut out = vec![T::zero(); x.n * x.c];
    for img in 0..x.n {
        let o = &mut out[img * x.c..(img + 1) * x.c];
        for p in 0..hw {
            let i = (img * hw + p) * x.c;
            for (d, &v) in o.iter_mut().zip(&x.data[i..i + x.c]) {
                *d = *d + v;
            }
        }
        for d in o.iter_mut() {
            *d = *d * scale;
        }
    }
    out
}

pub fn mean_pool_backward<T: Real>(dy: &[T], shape: [usize; 4]) -> Act<T> {
    let [n, h, w, c] = shape;
    let scale = T::one() / T::of((h * w) as f64);
    let mut dx = Act::zeros(n, h, w, c);
    for img in 0..n {
        let g = &dy[img * c..(img + 1) * c];
        for p in 0..h * w {
            let i = (img * h * w + p) * c;
            for (d, &v) in dx.data[i..i + c].iter_mut().zip(g) {
                *d = v * scale;
            }
        }
    }
    dx
}

/// Apply a function elementwise, keeping the shape.
pub fn map_act<T: Real>(x: &Act<T>, f: impl Fn(T) -> T) -> Act<T> {
    x.like(x.data.iter().map(|&v| f(v)).collect())
}

pub fn cast_act<T: Real, U: Real>(x: &Act<T>) -> Act<U> {
    x.dims_like(x.data.iter().map(|v| U::of(v.to_f64().unwrap())).collect())
}
