//! Conductance along the masked attribution path.

use super::path::PathSpec;
use super::{probe, LayeredFn, Probe};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Smallest accepted step count.
pub const MIN_STEPS: usize = 4;

/// How `∂F/∂y` is sampled on each step `[α_j, α_{j+1}]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Quadrature {
    /// `½(g_j + g_{j+1}) · Δy_j`; second-order accurate.
    #[default]
    Trapezoid,
    /// `g_j · Δy_j`.
    LeftPoint,
}

/// How per-unit values combine into one layer score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Aggregation {
    /// `Σ |c_n|`.
    #[default]
    Absolute,
    /// `Σ c_n`.
    Signed,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Absolute => "absolute",
            Aggregation::Signed => "signed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(Aggregation::Absolute),
            "signed" => Ok(Aggregation::Signed),
            _ => Err(Error::UnknownName(format!("aggregation `{s}`"))),
        }
    }

    pub fn apply(self, units: &[f64]) -> f64 {
        match self {
            Aggregation::Absolute => units.iter().map(|v| v.abs()).sum(),
            Aggregation::Signed => units.iter().sum(),
        }
    }
}

impl Quadrature {
    pub fn name(self) -> &'static str {
        match self {
            Quadrature::Trapezoid => "trapezoid",
            Quadrature::LeftPoint => "left",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "trapezoid" => Ok(Quadrature::Trapezoid),
            "left" => Ok(Quadrature::LeftPoint),
            _ => Err(Error::UnknownName(format!("quadrature `{s}`"))),
        }
    }
}

pub(crate) fn accumulate(acc: &mut [Vec<f64>], prev: &Probe, cur: &Probe, quad: Quadrature) {
    for (l, a) in acc.iter_mut().enumerate() {
        let (y0, y1) = (&prev.values[l], &cur.values[l]);
        let (g0, g1) = (&prev.grads[l], &cur.grads[l]);
        match quad {
            Quadrature::Trapezoid => {
                for n in 0..a.len() {
                    a[n] += 0.5 * (g0[n] + g1[n]) * (y1[n] - y0[n]);
                }
            }
            Quadrature::LeftPoint => {
                for n in 0..a.len() {
                    a[n] += g0[n] * (y1[n] - y0[n]);
                }
            }
        }
    }
}

/// Per-unit conductance of every designated node along `spec`'s path over
/// `α ∈ [1 − r, 1]`. One graph is built per quadrature node; all layers
/// share it.
pub fn mac_layers<T: Real>(
    f: impl LayeredFn<T>,
    spec: &PathSpec<T>,
    quad: Quadrature,
) -> Result<Vec<Vec<f64>>> {
    if spec.steps < MIN_STEPS {
        return Err(Error::range("steps", spec.steps, format!(">= {MIN_STEPS}")));
    }
    let grid = spec.grid();
    let mut prev = probe(&f, &spec.point(grid[0]))?;
    let mut acc: Vec<Vec<f64>> = prev.values.iter().map(|v| vec![0.0; v.len()]).collect();
    for &alpha in &grid[1..] {
        let cur = probe(&f, &spec.point(alpha))?;
        accumulate(&mut acc, &prev, &cur, quad);
        prev = cur;
    }
    Ok(acc)
}

/// Score of layer `layer` (index into the designated nodes).
pub fn mac_layer<T: Real>(
    f: impl LayeredFn<T>,
    layer: usize,
    spec: &PathSpec<T>,
    quad: Quadrature,
    agg: Aggregation,
) -> Result<f64> {
    let all = mac_layers(f, spec, quad)?;
    let units = all.get(layer).ok_or_else(|| {
        Error::invalid("mac_layer", format!("layer {layer} out of range for {}", all.len()))
    })?;
    Ok(agg.apply(units))
}
