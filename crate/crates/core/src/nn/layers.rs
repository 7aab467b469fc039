use super::params::Bound;
use crate::error::Result;
use crate::tensor::{Graph, Real, Var};

/// Same-padded convolution for odd kernels: `pad = (k − 1) / 2`.
pub fn conv<T: Real>(
    g: &mut Graph<T>,
    bound: &Bound,
    name: &str,
    x: Var,
    stride: usize,
) -> Result<Var> {
    let p = bound.get(name)?;
    let k = g.shape(p.weight)[2];
    g.conv2d(x, p.weight, p.bias, stride, (k - 1) / 2)
}

/// `x[N,in] · Wᵀ + b` with `W[out,in]`.
pub fn linear<T: Real>(g: &mut Graph<T>, bound: &Bound, name: &str, x: Var) -> Result<Var> {
    let p = bound.get(name)?;
    let wt = g.transpose(p.weight)?;
    let y = g.matmul(x, wt)?;
    match p.bias {
        Some(b) => g.add_row(y, b),
        None => Ok(y),
    }
}
