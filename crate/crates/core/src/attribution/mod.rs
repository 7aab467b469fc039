//! Gradient path-integral attribution: integrated gradients, conductance of
//! hidden units, and mask attribute conductance along a path on which each
//! pixel switches from the baseline to its true value at its own time.

pub mod mac;
pub mod path;
pub mod report;

pub use mac::{mac_layer, mac_layers, Aggregation, Quadrature};
pub use path::{assign_path_times, PathSpec};
pub use report::{random_selection, rank_and_select, selected_count, LayerEntry, LayerReport};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Builds a scalar output from an input node.
pub trait ScalarFn<T: Real>: Fn(&mut Graph<T>, Var) -> Result<Var> {}
impl<T: Real, F: Fn(&mut Graph<T>, Var) -> Result<Var>> ScalarFn<T> for F {}

/// Builds a scalar output and the hidden nodes to attribute to.
pub trait LayeredFn<T: Real>: Fn(&mut Graph<T>, Var) -> Result<(Var, Vec<Var>)> {}
impl<T: Real, F: Fn(&mut Graph<T>, Var) -> Result<(Var, Vec<Var>)>> LayeredFn<T> for F {}

/// Value and input gradient of `f` at `x`.
pub fn value_and_grad<T: Real>(f: &impl ScalarFn<T>, x: &Tensor<T>) -> Result<(T, Vec<T>)> {
    let mut g = Graph::new();
    let xv = g.leaf(&x.clone().with_requires_grad(true));
    let out = f(&mut g, xv)?;
    let grads = g.backward(out)?;
    let gx = grads
        .wrt(xv)
        .map(<[T]>::to_vec)
        .unwrap_or_else(|| vec![T::zero(); x.numel()]);
    Ok((g.item(out), gx))
}

pub fn evaluate<T: Real>(f: &impl ScalarFn<T>, x: &Tensor<T>) -> Result<T> {
    let mut g = Graph::new();
    let xv = g.leaf(x);
    let out = f(&mut g, xv)?;
    Ok(g.item(out))
}

fn check_pair<T: Real>(x: &Tensor<T>, baseline: &Tensor<T>) -> Result<()> {
    if x.shape() != baseline.shape() {
        return Err(Error::shape("attribution", x.shape(), baseline.shape()));
    }
    Ok(())
}

/// Integrated gradients by the midpoint rule:
/// `IG_i = (x_i − x′_i) · (1/N) Σ_j ∂F(x′ + ((j − ½)/N)(x − x′))/∂x_i`.
pub fn integrated_gradients<T: Real>(
    f: impl ScalarFn<T>,
    x: &Tensor<T>,
    baseline: &Tensor<T>,
    steps: usize,
) -> Result<Vec<f64>> {
    check_pair(x, baseline)?;
    if steps == 0 {
        return Err(Error::invalid("integrated_gradients", "steps must be at least 1"));
    }
    let mut acc = vec![0.0; x.numel()];
    for j in 1..=steps {
        let a = (j as f64 - 0.5) / steps as f64;
        let p = x.zip_with(baseline, |xi, bi| bi + (xi - bi) * T::of(a))?;
        let (_, gx) = value_and_grad(&f, &p)?;
        acc.iter_mut().zip(&gx).for_each(|(s, g)| *s += g.as_f64());
    }
    Ok(acc
        .iter()
        .zip(x.data().iter().zip(baseline.data()))
        .map(|(s, (xi, bi))| (*xi - *bi).as_f64() * s / steps as f64)
        .collect())
}

/// Activations and output gradients of the designated nodes at one input.
pub(crate) struct Probe {
    pub values: Vec<Vec<f64>>,
    pub grads: Vec<Vec<f64>>,
}

pub(crate) fn probe<T: Real>(f: &impl LayeredFn<T>, x: &Tensor<T>) -> Result<Probe> {
    let mut g = Graph::new();
    let xv = g.leaf(&x.clone().with_requires_grad(true));
    let (out, layers) = f(&mut g, xv)?;
    for &y in &layers {
        if y.index() >= g.len() || y.index() > out.index() {
            return Err(Error::invalid(
                "conductance",
                format!("node {} is not part of the output's graph", y.index()),
            ));
        }
    }
    let grads = g.backward(out)?;
    let values = layers
        .iter()
        .map(|&y| g.value(y).iter().map(|v| v.as_f64()).collect())
        .collect();
    let grads = layers
        .iter()
        .map(|&y| match grads.wrt(y) {
            Some(gy) => gy.iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; g.value(y).len()],
        })
        .collect();
    Ok(Probe { values, grads })
}

/// Conductance of every unit of the designated nodes along the straight
/// path from `baseline` to `x`, trapezoid rule on `N` equal steps:
/// `Σ_j ½(g_j + g_{j+1}) · (y_{j+1} − y_j)`.
pub fn layer_conductance<T: Real>(
    f: impl LayeredFn<T>,
    x: &Tensor<T>,
    baseline: &Tensor<T>,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    check_pair(x, baseline)?;
    if steps == 0 {
        return Err(Error::invalid("conductance", "steps must be at least 1"));
    }
    let point = |a: f64| x.zip_with(baseline, |xi, bi| bi + (xi - bi) * T::of(a));
    let mut prev = probe(&f, &point(0.0)?)?;
    let mut acc: Vec<Vec<f64>> = prev.values.iter().map(|v| vec![0.0; v.len()]).collect();
    for j in 1..=steps {
        let cur = probe(&f, &point(j as f64 / steps as f64)?)?;
        mac::accumulate(&mut acc, &prev, &cur, Quadrature::Trapezoid);
        prev = cur;
    }
    Ok(acc)
}

/// Conductance of unit `unit` of the first designated node.
pub fn neuron_conductance<T: Real>(
    f: impl LayeredFn<T>,
    x: &Tensor<T>,
    baseline: &Tensor<T>,
    steps: usize,
    unit: usize,
) -> Result<f64> {
    let all = layer_conductance(f, x, baseline, steps)?;
    let layer = all
        .first()
        .ok_or_else(|| Error::invalid("neuron_conductance", "no hidden node designated"))?;
    layer.get(unit).copied().ok_or_else(|| {
        Error::invalid(
            "neuron_conductance",
            format!("unit {unit} out of range for {} units", layer.len()),
        )
    })
}
