use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BLUR_KERNEL: usize = 15;

/// Normalised 1-D Gaussian taps of odd length `k`.
pub fn gaussian_kernel(k: usize, sigma: f64) -> Result<Vec<f64>> {
    if k % 2 == 0 {
        return Err(Error::invalid("gaussian_blur", format!("kernel size {k} is even")));
    }
    if !(sigma > 0.0) {
        return Err(Error::range("blur_sigma", sigma, "> 0"));
    }
    let r = (k / 2) as f64;
    let taps: Vec<f64> = (0..k)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / total).collect())
}

/// Mirror index without repeating the edge sample (`-1 → 1`).
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Separable Gaussian blur of a `[C,H,W]` image with mirrored borders.
pub fn gaussian_blur(image: &Tensor<f64>, k: usize, sigma: f64) -> Result<Tensor<f64>> {
    if !(0.1..=3.1).contains(&sigma) {
        return Err(Error::range("blur_sigma", sigma, "[0.1, 3.1]"));
    }
    let taps = gaussian_kernel(k, sigma)?;
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::shape("gaussian_blur", s, &[0, 0, 0]));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let r = (k / 2) as isize;
    let src = image.data();
    let mut tmp = vec![0.0; src.len()];
    for ch in 0..c {
        for y in 0..h {
            let row = &src[ch * h * w + y * w..][..w];
            for x in 0..w {
                tmp[ch * h * w + y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(t, &kv)| kv * row[reflect(x as isize + t as isize - r, w)])
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        let plane = &tmp[ch * h * w..][..h * w];
        for y in 0..h {
            for x in 0..w {
                out[ch * h * w + y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(t, &kv)| kv * plane[reflect(y as isize + t as isize - r, h) * w + x])
                    .sum::<f64>()
                    .clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(s, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_skips_the_edge() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(9, 5), 1);
        assert_eq!(reflect(3, 1), 0);
    }

    #[test]
    fn even_kernel_is_rejected() {
        assert!(gaussian_kernel(14, 1.0).is_err());
    }
}
