//! Small random networks for attribution checks.

use maskrestore::rng::{stream, Purpose};
use maskrestore::{Graph, Result, Tensor, Var};
use rand::Rng;

/// `F(x) = Σ_k v_k · tanh(W x + b)_k` with `x ∈ R^d`.
#[derive(Clone, Debug)]
pub struct TwoLayer {
    pub w: Tensor<f64>,
    pub b: Tensor<f64>,
    pub v: Tensor<f64>,
}

impl TwoLayer {
    pub fn random(seed: u64, d: usize, hidden: usize) -> Self {
        let mut rng = stream(seed, Purpose::Test, 100);
        let mut t = |shape: &[usize], s: f64| Tensor::from_fn(shape, |_| rng.random_range(-s..s));
        TwoLayer {
            w: t(&[hidden, d], 1.0),
            b: t(&[hidden, 1], 0.5),
            v: t(&[1, hidden], 1.0),
        }
    }

    /// Output and the hidden activation `tanh(Wx + b)`.
    pub fn build(&self, g: &mut Graph<f64>, x: Var) -> Result<(Var, Var)> {
        let d = self.w.shape()[1];
        let xc = g.reshape(x, &[d, 1])?;
        let w = g.leaf(&self.w);
        let b = g.leaf(&self.b);
        let v = g.leaf(&self.v);
        let pre = g.matmul(w, xc)?;
        let pre = g.add(pre, b)?;
        let h = g.tanh(pre);
        let out = g.matmul(v, h)?;
        Ok((g.sum(out), h))
    }

    pub fn eval(&self, x: &Tensor<f64>) -> f64 {
        let mut g = Graph::new();
        let xv = g.leaf(x);
        let (out, _) = self.build(&mut g, xv).unwrap();
        g.item(out)
    }
}

/// Two 3×3 conv layers with tanh on a `[1,S,S]` image, output
/// `mean((tanh(c2) − t)²)`. The attributed layers are the two conv outputs.
#[derive(Clone, Debug)]
pub struct ConvNet {
    pub k1: Tensor<f64>,
    pub k2: Tensor<f64>,
    pub target: Tensor<f64>,
    pub scale: f64,
}

impl ConvNet {
    pub fn random(seed: u64, size: usize) -> Self {
        let mut rng = stream(seed, Purpose::Test, 200);
        let mut t = |shape: &[usize], s: f64| Tensor::from_fn(shape, |_| rng.random_range(-s..s));
        ConvNet {
            k1: t(&[4, 1, 3, 3], 0.8),
            k2: t(&[2, 4, 3, 3], 0.5),
            target: t(&[2, size, size], 0.5),
            scale: 1.0,
        }
    }

    pub fn build(&self, g: &mut Graph<f64>, x: Var) -> Result<(Var, Vec<Var>)> {
        let k1 = g.leaf(&self.k1);
        let k2 = g.leaf(&self.k2);
        let t = g.leaf(&self.target);
        let c1 = g.conv2d(x, k1, None, 1, 1)?;
        let h = g.tanh(c1);
        let c2 = g.conv2d(h, k2, None, 1, 1)?;
        let o = g.tanh(c2);
        let d = g.sub(o, t)?;
        let sq = g.mul(d, d)?;
        let m = g.mean(sq);
        Ok((g.mul_scalar(m, self.scale), vec![c1, c2]))
    }
}
