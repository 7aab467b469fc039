//! Random degradations. Each call consumes exactly one stream:
//! `stream(seed, Purpose::Degradation, 0)`.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, Rng};
use crate::tensor::Tensor;

fn rng_for(seed: u64) -> Rng {
    stream(seed, Purpose::Degradation, 0)
}

/// `clip(I + n/255)` with `n ~ N(0, σ²)`, σ in 8-bit units.
pub fn add_gaussian_noise(image: &Tensor<f64>, sigma: f64, seed: u64) -> Result<Tensor<f64>> {
    if !(sigma > 0.0 && sigma <= 50.0) {
        return Err(Error::range("noise_sigma", sigma, "(0, 50]"));
    }
    let mut rng = rng_for(seed);
    let normal = Normal::new(0.0, sigma / 255.0).expect("positive sigma");
    Ok(image.map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0)))
}

/// Each pixel is hit with probability `density`; a hit sets every channel
/// to 0 or 1 with equal odds.
pub fn pepper(image: &Tensor<f64>, density: f64, seed: u64) -> Result<Tensor<f64>> {
    if !(density > 0.0 && density <= 0.5) {
        return Err(Error::range("pepper_density", density, "(0, 0.5]"));
    }
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::shape("pepper", s, &[0, 0, 0]));
    }
    let hw = s[1] * s[2];
    let mut rng = rng_for(seed);
    let mut out = image.clone();
    for p in 0..hw {
        let hit = rng.random_bool(density);
        let white = rng.random_bool(0.5);
        if hit {
            let v = if white { 1.0 } else { 0.0 };
            for c in 0..s[0] {
                out.data_mut()[c * hw + p] = v;
            }
        }
    }
    Ok(out)
}

/// `Poisson(I · peak) / peak`, clipped.
pub fn poisson(image: &Tensor<f64>, peak: f64, seed: u64) -> Result<Tensor<f64>> {
    if !(10.0..=255.0).contains(&peak) {
        return Err(Error::range("poisson_peak", peak, "[10, 255]"));
    }
    let mut rng = rng_for(seed);
    Ok(image.map(|v| {
        let lambda = v * peak;
        if lambda <= 0.0 {
            0.0
        } else {
            let k: f64 = Poisson::new(lambda).expect("positive rate").sample(&mut rng);
            (k / peak).clamp(0.0, 1.0)
        }
    }))
}

/// `clip(I · (1 + n))` with `n ~ N(0, σ²)`.
pub fn speckle(image: &Tensor<f64>, sigma: f64, seed: u64) -> Result<Tensor<f64>> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::range("speckle_sigma", sigma, "(0, 1]"));
    }
    let mut rng = rng_for(seed);
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    Ok(image.map(|v| (v * (1.0 + normal.sample(&mut rng))).clamp(0.0, 1.0)))
}
