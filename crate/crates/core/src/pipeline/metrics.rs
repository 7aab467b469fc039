//! PSNR, SSIM and linear CKA.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Psnr {
    pub db: f64,
    /// Set when the inputs are identical and `db` is the cap.
    pub exact: bool,
}

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<Psnr> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", a.shape(), b.shape()));
    }
    if a.numel() == 0 {
        return Err(Error::invalid("psnr", "empty image"));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(Psnr {
            db: PSNR_CAP,
            exact: true,
        });
    }
    Ok(Psnr {
        db: (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP),
        exact: false,
    })
}

/// Luma plane of a `[3,H,W]` image (BT.601 weights); a `[1,H,W]` image is
/// returned as is.
pub fn luma<T: Real>(img: &Tensor<T>) -> Result<(Vec<f64>, usize, usize)> {
    let s = img.shape();
    if s.len() != 3 || (s[0] != 1 && s[0] != 3) {
        return Err(Error::invalid("luma", format!("expected [1|3,H,W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let d = img.data();
    let plane = (0..h * w)
        .map(|i| {
            if s[0] == 1 {
                d[i].as_f64()
            } else {
                0.299 * d[i].as_f64() + 0.587 * d[h * w + i].as_f64() + 0.114 * d[2 * h * w + i].as_f64()
            }
        })
        .collect();
    Ok((plane, h, w))
}

/// Normalised 1-D Gaussian window.
pub fn ssim_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h`×`w` plane.
fn filter_valid(p: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over every fully contained 11×11 Gaussian window of the luma
/// planes, with `C1 = (0.01·peak)²` and `C2 = (0.03·peak)²`.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", a.shape(), b.shape()));
    }
    let (pa, h, w) = luma(a)?;
    let (pb, _, _) = luma(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let k = ssim_window();
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let prod = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(x, y)| x * y).collect() };
    let mu_a = filter_valid(&pa, h, w, &k);
    let mu_b = filter_valid(&pb, h, w, &k);
    let aa = filter_valid(&prod(&pa, &pa), h, w, &k);
    let bb = filter_valid(&prod(&pb, &pb), h, w, &k);
    let ab = filter_valid(&prod(&pa, &pb), h, w, &k);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

fn centered_gram(rows: &[Vec<f64>], what: &str) -> Result<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("cka", format!("{what} rows differ in length")));
    }
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let c: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    if c.iter().all(|r| r.iter().all(|&v| v == 0.0)) {
        return Err(Error::invalid("cka", format!("{what} has zero variance")));
    }
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = c[i].iter().zip(&c[j]).map(|(a, b)| a * b).sum();
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    Ok(k)
}

/// Linear CKA between two representations of the same `n` samples (rows),
/// computed through the centred Gram matrices:
/// `‖YᵀX‖²_F / (‖XᵀX‖_F ‖YᵀY‖_F) = ⟨K_X, K_Y⟩ / (‖K_X‖ ‖K_Y‖)`.
pub fn cka(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(
            "cka",
            format!("sample counts differ: {} vs {}", x.len(), y.len()),
        ));
    }
    if x.len() < 2 {
        return Err(Error::invalid("cka", "need at least two samples"));
    }
    let kx = centered_gram(x, "X")?;
    let ky = centered_gram(y, "Y")?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    Ok(dot(&kx, &ky) / (dot(&kx, &kx).sqrt() * dot(&ky, &ky).sqrt()))
}
