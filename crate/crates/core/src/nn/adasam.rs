//! Lightweight token scorer: patch embedding, one multi-head self-attention
//! block with a residual connection, and a linear score head followed by a
//! softmax over tokens.

use super::layers::linear;
use super::params::{Bound, ParamGroup, ParamSet};
use super::Network;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdaSamConfig {
    pub channels: usize,
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
}

impl Default for AdaSamConfig {
    fn default() -> Self {
        AdaSamConfig {
            channels: 3,
            patch: 8,
            dim: 64,
            heads: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaSam<T: Real> {
    config: AdaSamConfig,
    params: ParamSet<T>,
}

impl<T: Real> Network<T> for AdaSam<T> {
    const MODULE: &'static str = "adasam";
    const VERSION: u32 = 1;

    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }
}

fn layout(cfg: &AdaSamConfig) -> Vec<(&'static str, [usize; 2])> {
    let d = cfg.dim;
    vec![
        ("embed", [d, cfg.channels * cfg.patch * cfg.patch]),
        ("attn.q", [d, d]),
        ("attn.k", [d, d]),
        ("attn.v", [d, d]),
        ("attn.out", [d, d]),
        ("score", [1, d]),
    ]
}

impl<T: Real> AdaSam<T> {
    pub fn new(config: AdaSamConfig, seed: u64) -> Result<Self> {
        if config.heads == 0 || config.dim % config.heads != 0 {
            return Err(Error::invalid(
                "adasam",
                format!("dim {} is not divisible by {} heads", config.dim, config.heads),
            ));
        }
        let mut params = ParamSet::new();
        for (i, (name, shape)) in layout(&config).into_iter().enumerate() {
            params.insert(name, ParamGroup::kaiming(&shape, true, seed, 100 + i as u64))?;
        }
        Ok(AdaSam { config, params })
    }

    pub fn from_params(config: AdaSamConfig, params: ParamSet<T>) -> Result<Self> {
        let want = layout(&config);
        if params.len() != want.len() {
            return Err(Error::invalid(
                "adasam",
                format!("expected {} groups, found {}", want.len(), params.len()),
            ));
        }
        for (name, shape) in &want {
            let p = params.get(name)?;
            if p.weight.shape() != shape {
                return Err(Error::shape("adasam", shape, p.weight.shape()));
            }
        }
        Ok(AdaSam { config, params })
    }

    pub fn config(&self) -> AdaSamConfig {
        self.config
    }

    /// Number of tokens for an `h`×`w` image.
    pub fn token_count(&self, h: usize, w: usize) -> usize {
        (h / self.config.patch) * (w / self.config.patch)
    }

    /// Token scores `S[N]`, positive and summing to one.
    pub fn forward(&self, g: &mut Graph<T>, bound: &Bound, image: Var) -> Result<Var> {
        let shape = g.shape(image).to_vec();
        let p = self.config.patch;
        if shape.len() != 3 || shape[0] != self.config.channels {
            return Err(Error::shape("adasam", &[self.config.channels, p, p], &shape));
        }
        if shape[1] % p != 0 || shape[2] % p != 0 {
            return Err(Error::invalid(
                "adasam",
                format!("image {}x{} is not divisible by patch {p}", shape[1], shape[2]),
            ));
        }
        let patches = g.patchify(image, p)?;
        let tokens = linear(g, bound, "embed", patches)?;
        let attended = self.attention(g, bound, tokens)?;
        let t = g.add(tokens, attended)?;
        let logits = linear(g, bound, "score", t)?;
        let n = g.shape(logits)[0];
        let logits = g.reshape(logits, &[n])?;
        g.softmax(logits, 0)
    }

    fn attention(&self, g: &mut Graph<T>, bound: &Bound, t: Var) -> Result<Var> {
        let q = linear(g, bound, "attn.q", t)?;
        let k = linear(g, bound, "attn.k", t)?;
        let v = linear(g, bound, "attn.v", t)?;
        let hd = self.config.dim / self.config.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = g.narrow(q, 1, h * hd, hd)?;
            let kh = g.narrow(k, 1, h * hd, hd)?;
            let vh = g.narrow(v, 1, h * hd, hd)?;
            let kt = g.transpose(kh)?;
            let logits = g.matmul(qh, kt)?;
            let logits = g.mul_scalar(logits, T::of(scale));
            let a = g.softmax(logits, 1)?;
            heads.push(g.matmul(a, vh)?);
        }
        let merged = g.concat(&heads, 1)?;
        linear(g, bound, "attn.out", merged)
    }

    /// Gradient-free token scores for one image.
    pub fn scores(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let x = g.leaf(image);
        let s = self.forward(&mut g, &bound, x)?;
        Ok(g.tensor(s))
    }

    pub fn cast<U: Real>(&self) -> AdaSam<U> {
        AdaSam {
            config: self.config,
            params: self.params.cast(),
        }
    }
}
