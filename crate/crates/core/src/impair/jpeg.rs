//! Baseline (sequential, Huffman) JFIF encoder with selectable chroma
//! subsampling.
//!
//! Every arithmetic step is pinned: fixed-point RGB→YCbCr, `(sum + 2) >> 2`
//! chroma averaging, an `f64` separable DCT, round-half-away-from-zero
//! quantization, and the standard Annex K tables scaled with the libjpeg
//! quality law. Output bytes are therefore identical on every platform.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChromaSubsampling {
    /// 2×2 chroma decimation (one Cb/Cr sample per 16×16 luma MCU quadrant).
    #[default]
    Yuv420,
    /// Full-resolution chroma.
    Yuv444,
}

impl ChromaSubsampling {
    pub fn as_str(self) -> &'static str {
        match self {
            ChromaSubsampling::Yuv420 => "4:2:0",
            ChromaSubsampling::Yuv444 => "4:4:4",
        }
    }

    fn factor(self) -> usize {
        match self {
            ChromaSubsampling::Yuv420 => 2,
            ChromaSubsampling::Yuv444 => 1,
        }
    }
}

impl fmt::Display for ChromaSubsampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ChromaSubsampling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "4:2:0" | "420" => Ok(ChromaSubsampling::Yuv420),
            "4:4:4" | "444" => Ok(ChromaSubsampling::Yuv444),
            _ => Err(format!("unknown chroma subsampling `{s}`")),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum JpegError {
    #[error("image dimensions {0}x{1} not encodable (1..=65535)")]
    InvalidSize(usize, usize),
    #[error("quality {0} outside 1..=100")]
    InvalidQuality(u8),
    #[error("pixel buffer has {got} bytes, expected {expected}")]
    BufferSize { got: usize, expected: usize },
}

#[rustfmt::skip]
const STD_LUMA_QTABLE: [u16; 64] = [
    16, 11, 10, 16,  24,  40,  51,  61,
    12, 12, 14, 19,  26,  58,  60,  55,
    14, 13, 16, 24,  40,  57,  69,  56,
    14, 17, 22, 29,  51,  87,  80,  62,
    18, 22, 37, 56,  68, 109, 103,  77,
    24, 35, 55, 64,  81, 104, 113,  92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103,  99,
];

#[rustfmt::skip]
const STD_CHROMA_QTABLE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

// zigzag index -> natural index
#[rustfmt::skip]
const ZIGZAG: [usize; 64] = [
     0,  1,  8, 16,  9,  2,  3, 10,
    17, 24, 32, 25, 18, 11,  4,  5,
    12, 19, 26, 33, 40, 48, 41, 34,
    27, 20, 13,  6,  7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36,
    29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46,
    53, 60, 61, 54, 47, 55, 62, 63,
];

const LUMA_DC_BITS: [u8; 16] = [0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
const CHROMA_DC_BITS: [u8; 16] = [0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
const DC_VALUES: [u8; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

const LUMA_AC_BITS: [u8; 16] = [0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7D];
#[rustfmt::skip]
const LUMA_AC_VALUES: [u8; 162] = [
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
    0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xA1, 0x08, 0x23, 0x42, 0xB1, 0xC1, 0x15, 0x52, 0xD1, 0xF0,
    0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0A, 0x16, 0x17, 0x18, 0x19, 0x1A, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2A, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
    0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
    0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7A, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7,
    0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5,
    0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE1, 0xE2,
    0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF1, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8,
    0xF9, 0xFA,
];

const CHROMA_AC_BITS: [u8; 16] = [0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77];
#[rustfmt::skip]
const CHROMA_AC_VALUES: [u8; 162] = [
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71,
    0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xA1, 0xB1, 0xC1, 0x09, 0x23, 0x33, 0x52, 0xF0,
    0x15, 0x62, 0x72, 0xD1, 0x0A, 0x16, 0x24, 0x34, 0xE1, 0x25, 0xF1, 0x17, 0x18, 0x19, 0x1A, 0x26,
    0x27, 0x28, 0x29, 0x2A, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48,
    0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68,
    0x69, 0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7A, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
    0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5,
    0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3,
    0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA,
    0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8,
    0xF9, 0xFA,
];

/// Quantization table (natural order) for `quality`, libjpeg scaling.
pub fn scaled_qtable(base: &[u16; 64], quality: u8) -> [u16; 64] {
    let q = u32::from(quality.clamp(1, 100));
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0u16; 64];
    for (o, &b) in out.iter_mut().zip(base.iter()) {
        *o = ((u32::from(b) * scale + 50) / 100).clamp(1, 255) as u16;
    }
    out
}

struct HuffTable {
    // (code, length) per symbol
    codes: [(u16, u8); 256],
}

impl HuffTable {
    fn new(bits: &[u8; 16], values: &[u8]) -> Self {
        let mut codes = [(0u16, 0u8); 256];
        let mut code: u16 = 0;
        let mut k = 0;
        for (len_minus_one, &count) in bits.iter().enumerate() {
            for _ in 0..count {
                codes[values[k] as usize] = (code, len_minus_one as u8 + 1);
                code += 1;
                k += 1;
            }
            code <<= 1;
        }
        Self { codes }
    }
}

struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    nbits: u32,
}

impl BitWriter {
    fn new(out: Vec<u8>) -> Self {
        Self { out, acc: 0, nbits: 0 }
    }

    fn put(&mut self, bits: u32, len: u32) {
        debug_assert!(len <= 16);
        self.acc = (self.acc << len) | (bits & ((1u32 << len) - 1));
        self.nbits += len;
        while self.nbits >= 8 {
            let byte = (self.acc >> (self.nbits - 8)) as u8;
            self.out.push(byte);
            if byte == 0xFF {
                self.out.push(0x00);
            }
            self.nbits -= 8;
            self.acc &= (1u32 << self.nbits) - 1;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            let pad = 8 - self.nbits;
            self.put((1 << pad) - 1, pad);
        }
        self.out
    }
}

// 16.16 fixed-point colour conversion constants.
const fn fix(x: f64) -> i32 {
    (x * 65536.0 + 0.5) as i32
}
const ONE_HALF: i32 = 1 << 15;
const CBCR_OFFSET: i32 = 128 << 16;

fn rgb_to_ycbcr(r: i32, g: i32, b: i32) -> (i32, i32, i32) {
    let y = (fix(0.29900) * r + fix(0.58700) * g + fix(0.11400) * b + ONE_HALF) >> 16;
    let cb = (-fix(0.16874) * r - fix(0.33126) * g + fix(0.5) * b + CBCR_OFFSET + ONE_HALF - 1) >> 16;
    let cr = (fix(0.5) * r - fix(0.41869) * g - fix(0.08131) * b + CBCR_OFFSET + ONE_HALF - 1) >> 16;
    (y, cb, cr)
}

struct Dct {
    // cos[(2x+1) u pi / 16] * c(u) / 2
    basis: [[f64; 8]; 8],
}

impl Dct {
    fn new() -> Self {
        let mut basis = [[0.0; 8]; 8];
        for (u, row) in basis.iter_mut().enumerate() {
            let cu = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = 0.5 * cu * (((2 * x + 1) * u) as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        Self { basis }
    }

    /// Level-shifted forward DCT of one 8×8 block, quantized, natural order.
    fn quantize_block(&self, block: &[i32; 64], qtable: &[u16; 64], out: &mut [i32; 64]) {
        let mut tmp = [0.0f64; 64];
        // rows
        for y in 0..8 {
            for u in 0..8 {
                let mut s = 0.0;
                for x in 0..8 {
                    s += self.basis[u][x] * f64::from(block[y * 8 + x] - 128);
                }
                tmp[y * 8 + u] = s;
            }
        }
        // columns
        for u in 0..8 {
            for v in 0..8 {
                let mut s = 0.0;
                for y in 0..8 {
                    s += self.basis[v][y] * tmp[y * 8 + u];
                }
                out[v * 8 + u] = (s / f64::from(qtable[v * 8 + u])).round() as i32;
            }
        }
    }
}

struct Plane {
    width: usize,
    height: usize,
    data: Vec<i32>,
}

impl Plane {
    fn block(&self, bx: usize, by: usize, out: &mut [i32; 64]) {
        for y in 0..8 {
            let row = (by + y) * self.width + bx;
            out[y * 8..y * 8 + 8].copy_from_slice(&self.data[row..row + 8]);
        }
    }
}

fn category(v: i32) -> (u32, u32) {
    let mag = v.unsigned_abs();
    let size = 32 - mag.leading_zeros();
    let bits = if v < 0 { (v - 1) as u32 } else { v as u32 };
    (size, bits & ((1u32 << size) - 1))
}

fn encode_block(w: &mut BitWriter, coefs: &[i32; 64], prev_dc: &mut i32, dc: &HuffTable, ac: &HuffTable) {
    let diff = coefs[0] - *prev_dc;
    *prev_dc = coefs[0];
    let (size, bits) = category(diff);
    let (code, len) = dc.codes[size as usize];
    w.put(u32::from(code), u32::from(len));
    if size > 0 {
        w.put(bits, size);
    }

    let mut run = 0u32;
    for &k in &ZIGZAG[1..] {
        let c = coefs[k];
        if c == 0 {
            run += 1;
            continue;
        }
        while run > 15 {
            let (code, len) = ac.codes[0xF0];
            w.put(u32::from(code), u32::from(len));
            run -= 16;
        }
        let (size, bits) = category(c);
        let (code, len) = ac.codes[((run << 4) | size) as usize];
        w.put(u32::from(code), u32::from(len));
        w.put(bits, size);
        run = 0;
    }
    if run > 0 {
        let (code, len) = ac.codes[0x00];
        w.put(u32::from(code), u32::from(len));
    }
}

fn segment(out: &mut Vec<u8>, marker: u8, payload: &[u8]) {
    out.extend_from_slice(&[0xFF, marker]);
    out.extend_from_slice(&((payload.len() + 2) as u16).to_be_bytes());
    out.extend_from_slice(payload);
}

fn dht_payload(class_id: u8, bits: &[u8; 16], values: &[u8]) -> Vec<u8> {
    let mut p = vec![class_id];
    p.extend_from_slice(bits);
    p.extend_from_slice(values);
    p
}

/// Encode an interleaved RGB8 buffer as baseline JPEG.
pub fn encode_rgb(
    rgb: &[u8],
    width: usize,
    height: usize,
    quality: u8,
    subsampling: ChromaSubsampling,
) -> Result<Vec<u8>, JpegError> {
    if width == 0 || height == 0 || width > 65535 || height > 65535 {
        return Err(JpegError::InvalidSize(width, height));
    }
    if !(1..=100).contains(&quality) {
        return Err(JpegError::InvalidQuality(quality));
    }
    if rgb.len() != width * height * 3 {
        return Err(JpegError::BufferSize {
            got: rgb.len(),
            expected: width * height * 3,
        });
    }

    let f = subsampling.factor();
    let mcu = 8 * f;
    let pw = width.div_ceil(mcu) * mcu;
    let ph = height.div_ceil(mcu) * mcu;

    // Edge-replicated full-resolution planes.
    let mut planes: [Vec<i32>; 3] = [vec![0; pw * ph], vec![0; pw * ph], vec![0; pw * ph]];
    for y in 0..ph {
        let sy = y.min(height - 1);
        for x in 0..pw {
            let sx = x.min(width - 1);
            let i = (sy * width + sx) * 3;
            let (yy, cb, cr) = rgb_to_ycbcr(i32::from(rgb[i]), i32::from(rgb[i + 1]), i32::from(rgb[i + 2]));
            let o = y * pw + x;
            planes[0][o] = yy;
            planes[1][o] = cb;
            planes[2][o] = cr;
        }
    }
    let [y_data, cb_full, cr_full] = planes;
    let luma = Plane {
        width: pw,
        height: ph,
        data: y_data,
    };
    let downsample = |full: Vec<i32>| -> Plane {
        if f == 1 {
            return Plane {
                width: pw,
                height: ph,
                data: full,
            };
        }
        let (cw, ch) = (pw / 2, ph / 2);
        let mut data = vec![0; cw * ch];
        for y in 0..ch {
            for x in 0..cw {
                let a = full[(2 * y) * pw + 2 * x];
                let b = full[(2 * y) * pw + 2 * x + 1];
                let c = full[(2 * y + 1) * pw + 2 * x];
                let d = full[(2 * y + 1) * pw + 2 * x + 1];
                data[y * cw + x] = (a + b + c + d + 2) >> 2;
            }
        }
        Plane {
            width: cw,
            height: ch,
            data,
        }
    };
    let cb = downsample(cb_full);
    let cr = downsample(cr_full);
    debug_assert_eq!(cb.height * f, luma.height);

    let q_luma = scaled_qtable(&STD_LUMA_QTABLE, quality);
    let q_chroma = scaled_qtable(&STD_CHROMA_QTABLE, quality);

    let mut out = Vec::with_capacity(width * height / 2 + 1024);
    out.extend_from_slice(&[0xFF, 0xD8]);
    segment(&mut out, 0xE0, &[b'J', b'F', b'I', b'F', 0, 1, 1, 0, 0, 1, 0, 1, 0, 0]);

    let mut dqt = Vec::with_capacity(130);
    for (id, table) in [(0u8, &q_luma), (1u8, &q_chroma)] {
        dqt.push(id);
        dqt.extend(ZIGZAG.iter().map(|&k| table[k] as u8));
    }
    segment(&mut out, 0xDB, &dqt);

    let hv = ((f as u8) << 4) | f as u8;
    let mut sof = vec![8];
    sof.extend_from_slice(&(height as u16).to_be_bytes());
    sof.extend_from_slice(&(width as u16).to_be_bytes());
    sof.extend_from_slice(&[3, 1, hv, 0, 2, 0x11, 1, 3, 0x11, 1]);
    segment(&mut out, 0xC0, &sof);

    segment(&mut out, 0xC4, &dht_payload(0x00, &LUMA_DC_BITS, &DC_VALUES));
    segment(&mut out, 0xC4, &dht_payload(0x10, &LUMA_AC_BITS, &LUMA_AC_VALUES));
    segment(&mut out, 0xC4, &dht_payload(0x01, &CHROMA_DC_BITS, &DC_VALUES));
    segment(&mut out, 0xC4, &dht_payload(0x11, &CHROMA_AC_BITS, &CHROMA_AC_VALUES));
    segment(&mut out, 0xDA, &[3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0]);

    let luma_dc = HuffTable::new(&LUMA_DC_BITS, &DC_VALUES);
    let luma_ac = HuffTable::new(&LUMA_AC_BITS, &LUMA_AC_VALUES);
    let chroma_dc = HuffTable::new(&CHROMA_DC_BITS, &DC_VALUES);
    let chroma_ac = HuffTable::new(&CHROMA_AC_BITS, &CHROMA_AC_VALUES);
    let dct = Dct::new();

    let mut w = BitWriter::new(out);
    let mut block = [0i32; 64];
    let mut coefs = [0i32; 64];
    let (mut dc_y, mut dc_cb, mut dc_cr) = (0, 0, 0);
    for my in (0..ph).step_by(mcu) {
        for mx in (0..pw).step_by(mcu) {
            for by in 0..f {
                for bx in 0..f {
                    luma.block(mx + bx * 8, my + by * 8, &mut block);
                    dct.quantize_block(&block, &q_luma, &mut coefs);
                    encode_block(&mut w, &coefs, &mut dc_y, &luma_dc, &luma_ac);
                }
            }
            for (plane, dc_prev) in [(&cb, &mut dc_cb), (&cr, &mut dc_cr)] {
                plane.block(mx / f, my / f, &mut block);
                dct.quantize_block(&block, &q_chroma, &mut coefs);
                encode_block(&mut w, &coefs, dc_prev, &chroma_dc, &chroma_ac);
            }
        }
    }
    let mut out = w.finish();
    out.extend_from_slice(&[0xFF, 0xD9]);
    Ok(out)
}
