//! Baseline JPEG quantisation without entropy coding.
//!
//! RGB is converted to full-range YCbCr, each channel is split into 8×8
//! blocks (edge-replicated when the size is not a multiple of 8), transformed
//! with an orthonormal DCT, quantised with the standard tables scaled by the
//! quality factor, and transformed back. There is no chroma subsampling.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[rustfmt::skip]
const LUMA: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[rustfmt::skip]
const CHROMA: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Quality-scaled table: `s = 5000/q` below 50, else `200 − 2q`;
/// entries `⌊(base·s + 50)/100⌋` clamped to `[1, 255]`.
pub fn quant_table(base: &[u16; 64], quality: u32) -> [u16; 64] {
    let s = if quality < 50 { 5000 / quality } else { 200 - 2 * quality };
    base.map(|b| ((b as u32 * s + 50) / 100).clamp(1, 255) as u16)
}

pub fn luma_table(quality: u32) -> [u16; 64] {
    quant_table(&LUMA, quality)
}

pub fn chroma_table(quality: u32) -> [u16; 64] {
    quant_table(&CHROMA, quality)
}

/// `basis[u][x] = c(u)·cos((2x+1)uπ/16)`.
fn basis() -> &'static [[f64; 8]; 8] {
    static B: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    B.get_or_init(|| {
        std::array::from_fn(|u| {
            let c = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            std::array::from_fn(|x| c * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos())
        })
    })
}

pub fn dct8x8(block: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| b[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| b[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

pub fn idct8x8(coef: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| b[u][x] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| b[v][y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

fn quantize_plane(plane: &mut [f64], h: usize, w: usize, table: &[u16; 64]) {
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                for x in 0..8 {
                    let (sy, sx) = ((by + y).min(h - 1), (bx + x).min(w - 1));
                    block[y * 8 + x] = plane[sy * w + sx] - 128.0;
                }
            }
            let mut coef = dct8x8(&block);
            for (c, &q) in coef.iter_mut().zip(table) {
                let q = q as f64;
                *c = (*c / q).round() * q;
            }
            let back = idct8x8(&coef);
            for y in 0..8.min(h - by) {
                for x in 0..8.min(w - bx) {
                    plane[(by + y) * w + bx + x] = back[y * 8 + x] + 128.0;
                }
            }
        }
    }
}

/// Compresses and decompresses a `[3,H,W]` image in `[0,1]` at `quality`.
pub fn jpeg_artifact(image: &Tensor<f64>, quality: u32) -> Result<Tensor<f64>> {
    if !(1..=100).contains(&quality) {
        return Err(Error::range("jpeg_quality", quality, "[1, 100]"));
    }
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape("jpeg_artifact", s, &[3, 0, 0]));
    }
    let (h, w) = (s[1], s[2]);
    let n = h * w;
    let d = image.data();
    let (mut yp, mut cb, mut cr) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let (r, g, b) = (d[i] * 255.0, d[n + i] * 255.0, d[2 * n + i] * 255.0);
        yp[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        cb[i] = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
        cr[i] = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
    }
    quantize_plane(&mut yp, h, w, &luma_table(quality));
    quantize_plane(&mut cb, h, w, &chroma_table(quality));
    quantize_plane(&mut cr, h, w, &chroma_table(quality));
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let (y, u, v) = (yp[i], cb[i] - 128.0, cr[i] - 128.0);
        out[i] = ((y + 1.402 * v) / 255.0).clamp(0.0, 1.0);
        out[n + i] = ((y - 0.344136 * u - 0.714136 * v) / 255.0).clamp(0.0, 1.0);
        out[2 * n + i] = ((y + 1.772 * u) / 255.0).clamp(0.0, 1.0);
    }
    Tensor::new(s, out)
}
