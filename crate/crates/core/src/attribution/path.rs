//! The masked attribution path.
//!
//! Pixel `i` moves from the baseline to its value around its own time
//! `α_i`: `X̃_i(α) = x′_i + (x_i − x′_i) · σ(δ(α − α_i))`. Integration runs
//! over `α ∈ [1 − r, 1]`; pixels that start masked carry `α_i > 1 − r`.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::tensor::{sigmoid, Real, Tensor};

/// Sigmoid tail allowed at the path ends when placing times: `ln(10⁴)/δ`
/// keeps each pixel within 1e-4 of its endpoint value.
fn margin(delta: f64, width: f64) -> f64 {
    (1e4f64.ln() / delta).min(width / 4.0)
}

/// Per-pixel switch times. Visible pixels (`masked[i] == false`) get
/// stratified times in `(0, 1 − r]`, masked pixels in `(1 − r, 1]`, each
/// group shrunk away from the interval ends by the sigmoid margin and
/// randomly permuted. Without a mask every pixel counts as masked.
pub fn assign_path_times(
    masked: Option<&[bool]>,
    pixels: usize,
    ratio: f64,
    delta: f64,
    seed: u64,
    index: u64,
) -> Result<Vec<f64>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::range("path_ratio", ratio, "(0, 1]"));
    }
    if !(delta > 0.0) {
        return Err(Error::range("path_delta", delta, "> 0"));
    }
    let all = vec![true; pixels];
    let masked = masked.unwrap_or(&all);
    if masked.len() != pixels {
        return Err(Error::shape("assign_path_times", &[pixels], &[masked.len()]));
    }
    let visible: Vec<usize> = (0..pixels).filter(|&i| !masked[i]).collect();
    let hidden: Vec<usize> = (0..pixels).filter(|&i| masked[i]).collect();
    if !visible.is_empty() && ratio >= 1.0 {
        return Err(Error::invalid(
            "assign_path_times",
            "a full path (r = 1) cannot start from visible pixels",
        ));
    }
    let mut rng = stream(seed, Purpose::PathTimes, index);
    let mut times = vec![0.0; pixels];
    let split = 1.0 - ratio;
    for (group, lo, hi) in [(&visible, 0.0, split), (&hidden, split, 1.0)] {
        if group.is_empty() {
            continue;
        }
        let m = margin(delta, hi - lo);
        let (a, b) = (lo + m, hi - m);
        let mut slots: Vec<usize> = (0..group.len()).collect();
        slots.shuffle(&mut rng);
        for (&pixel, &slot) in group.iter().zip(&slots) {
            times[pixel] = a + (b - a) * (slot as f64 + 0.5) / group.len() as f64;
        }
    }
    Ok(times)
}

/// Path description. `times` holds one switch time per pixel; element `e`
/// of the image uses `times[e % times.len()]`, so a `[C,H,W]` image shares
/// one time per spatial position.
#[derive(Clone, Debug)]
pub struct PathSpec<T: Real = f64> {
    pub baseline: Tensor<T>,
    pub target: Tensor<T>,
    pub times: Vec<f64>,
    pub delta: f64,
    pub ratio: f64,
    pub steps: usize,
}

impl<T: Real> PathSpec<T> {
    pub fn new(
        baseline: Tensor<T>,
        target: Tensor<T>,
        times: Vec<f64>,
        delta: f64,
        ratio: f64,
        steps: usize,
    ) -> Result<Self> {
        if baseline.shape() != target.shape() {
            return Err(Error::shape("path", baseline.shape(), target.shape()));
        }
        if times.is_empty() || target.numel() % times.len() != 0 {
            return Err(Error::invalid(
                "path",
                format!("{} switch times do not tile {} values", times.len(), target.numel()),
            ));
        }
        if let Some(t) = times.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::range("path.time", t, "(0, 1]"));
        }
        if !(delta > 0.0) {
            return Err(Error::range("delta", delta, "> 0"));
        }
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::range("path_ratio", ratio, "(0, 1]"));
        }
        if steps == 0 {
            return Err(Error::range("steps", steps, ">= 1"));
        }
        Ok(PathSpec {
            baseline,
            target,
            times,
            delta,
            ratio,
            steps,
        })
    }

    /// `X̃(α)`.
    pub fn point(&self, alpha: f64) -> Tensor<T> {
        let n = self.times.len();
        let (b, x) = (self.baseline.data(), self.target.data());
        Tensor::from_fn(self.target.shape(), |e| {
            let s = sigmoid(self.delta * (alpha - self.times[e % n]));
            b[e] + (x[e] - b[e]) * T::of(s)
        })
    }

    /// The straight-step path: each pixel jumps at its time.
    pub fn step_point(&self, alpha: f64) -> Tensor<T> {
        let n = self.times.len();
        let (b, x) = (self.baseline.data(), self.target.data());
        Tensor::from_fn(self.target.shape(), |e| if alpha >= self.times[e % n] { x[e] } else { b[e] })
    }

    /// Quadrature nodes `α_j = 1 − r + r·j/N`, `j = 0..=N`.
    pub fn grid(&self) -> Vec<f64> {
        let start = 1.0 - self.ratio;
        (0..=self.steps)
            .map(|j| start + self.ratio * j as f64 / self.steps as f64)
            .collect()
    }

    /// Largest allowed endpoint deviation: `2·range / (1 + e^{δ·min(α_i, 1−α_i)})`
    /// with `range = max |x_i − x′_i|`.
    pub fn endpoint_bound(&self) -> f64 {
        let range = self
            .target
            .data()
            .iter()
            .zip(self.baseline.data())
            .map(|(x, b)| (*x - *b).abs().as_f64())
            .fold(0.0, f64::max);
        let closest = self
            .times
            .iter()
            .map(|&a| a.min(1.0 - a))
            .fold(f64::INFINITY, f64::min);
        2.0 * range / (1.0 + (self.delta * closest).exp())
    }
}
