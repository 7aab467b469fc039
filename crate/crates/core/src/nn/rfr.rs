//! Robust feature regularization: per encoder level, two adjacent frozen
//! extractor features are blended by a learned per-channel gate, projected
//! to the restorer's width and resolution, and fused back through a
//! zero-initialised 1×1 conv on a residual branch.

use super::extractor::{self, FeaturePair};
use super::layers::{conv, linear};
use super::params::{Bound, ParamGroup, ParamSet};
use super::restorer::{EncoderHook, RestorerConfig, LEVELS};
use super::Network;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Rfr<T: Real> {
    restorer: RestorerConfig,
    params: ParamSet<T>,
}

impl<T: Real> Network<T> for Rfr<T> {
    const MODULE: &'static str = "rfr";
    const VERSION: u32 = 1;

    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }
}

/// Extractor width of the pair feeding level `level` (1-based).
pub fn extractor_channels(level: usize) -> usize {
    extractor::CHANNELS[2 * (level - 1)]
}

fn layout(cfg: &RestorerConfig) -> Vec<(String, Vec<usize>)> {
    let mut groups = Vec::new();
    for l in 1..=LEVELS {
        let (cd, cr) = (extractor_channels(l), cfg.level_channels(l));
        groups.push((format!("rfr{l}.gate1"), vec![cd, 2 * cd]));
        groups.push((format!("rfr{l}.gate2"), vec![cd, cd]));
        groups.push((format!("rfr{l}.proj1"), vec![cr, cd, 3, 3]));
        groups.push((format!("rfr{l}.proj2"), vec![cr, cr, 3, 3]));
        groups.push((format!("rfr{l}.fuse"), vec![cr, 2 * cr, 1, 1]));
    }
    groups
}

/// `w·a + (1 − w)·b` with `w[C]` broadcast over space. Written as two
/// products so `w = 1` and `w = 0` select an input exactly.
pub fn blend<T: Real>(g: &mut Graph<T>, a: Var, b: Var, w: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape("blend", g.shape(a), g.shape(b)));
    }
    let wa = g.mul_channel(a, w)?;
    let neg = g.mul_scalar(w, -T::one());
    let rest = g.add_scalar(neg, T::one());
    let wb = g.mul_channel(b, rest)?;
    g.add(wa, wb)
}

impl<T: Real> Rfr<T> {
    /// Gate and projection layers get Kaiming weights; every fusion conv
    /// starts at zero so the fused restorer initially matches the plain one.
    pub fn new(restorer: RestorerConfig, seed: u64) -> Self {
        let mut params = ParamSet::new();
        for (i, (name, shape)) in layout(&restorer).into_iter().enumerate() {
            let group = if name.ends_with(".fuse") {
                ParamGroup::zeros(&shape, true)
            } else {
                ParamGroup::kaiming(&shape, true, seed, 300 + i as u64)
            };
            params.insert(name, group).expect("layout names are unique");
        }
        Rfr { restorer, params }
    }

    pub fn from_params(restorer: RestorerConfig, params: ParamSet<T>) -> Result<Self> {
        let want = layout(&restorer);
        if params.len() != want.len() {
            return Err(Error::invalid(
                "rfr",
                format!("expected {} groups, found {}", want.len(), params.len()),
            ));
        }
        for (name, shape) in &want {
            let p = params.get(name)?;
            if p.weight.shape() != shape.as_slice() {
                return Err(Error::shape("rfr", shape, p.weight.shape()));
            }
        }
        Ok(Rfr { restorer, params })
    }

    pub fn restorer_config(&self) -> RestorerConfig {
        self.restorer
    }

    pub fn cast<U: Real>(&self) -> Rfr<U> {
        Rfr {
            restorer: self.restorer,
            params: self.params.cast(),
        }
    }

    /// Per-channel gate `w = σ(MLP([avg(a), avg(b)]))`, shape `[C]`.
    pub fn gate_weight(&self, g: &mut Graph<T>, bound: &Bound, level: usize, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (g.shape(a).to_vec(), g.shape(b).to_vec());
        if sa != sb || sa.len() != 3 || sa[0] != extractor_channels(level) {
            return Err(Error::shape("gate_weight", &sa, &sb));
        }
        let c = sa[0];
        let pa = g.global_avg_pool(a)?;
        let pb = g.global_avg_pool(b)?;
        let pooled = g.concat(&[pa, pb], 0)?;
        let pooled = g.reshape(pooled, &[1, 2 * c])?;
        let h = linear(g, bound, &format!("rfr{level}.gate1"), pooled)?;
        let h = g.relu(h);
        let logits = linear(g, bound, &format!("rfr{level}.gate2"), h)?;
        let logits = g.reshape(logits, &[c])?;
        Ok(g.sigmoid(logits))
    }

    /// Bilinear resize to `height`×`width`, then `Conv₂(ReLU(Conv₁(·)))`.
    pub fn project(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        level: usize,
        features: Var,
        height: usize,
        width: usize,
    ) -> Result<Var> {
        let resized = g.resize_bilinear(features, height, width)?;
        let h = conv(g, bound, &format!("rfr{level}.proj1"), resized, 1)?;
        let h = g.relu(h);
        conv(g, bound, &format!("rfr{level}.proj2"), h, 1)
    }

    /// `F_r + Conv₁ₓ₁([F̂, F_r])`.
    pub fn fuse(&self, g: &mut Graph<T>, bound: &Bound, level: usize, projected: Var, restorer: Var) -> Result<Var> {
        let (sp, sr) = (g.shape(projected).to_vec(), g.shape(restorer).to_vec());
        if sp != sr {
            return Err(Error::shape("fuse", &sr, &sp));
        }
        let joined = g.concat(&[projected, restorer], 0)?;
        let delta = conv(g, bound, &format!("rfr{level}.fuse"), joined, 1)?;
        g.add(restorer, delta)
    }

    /// Gate, blend, project and fuse one level.
    pub fn apply_level(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        level: usize,
        pair: FeaturePair,
        restorer: Var,
    ) -> Result<Var> {
        if !(1..=LEVELS).contains(&level) {
            return Err(Error::range("level", level, format!("1..={LEVELS}")));
        }
        let w = self.gate_weight(g, bound, level, pair.first, pair.second)?;
        let mixed = blend(g, pair.first, pair.second, w)?;
        let (h, wd) = (g.shape(restorer)[1], g.shape(restorer)[2]);
        let projected = self.project(g, bound, level, mixed, h, wd)?;
        self.fuse(g, bound, level, projected, restorer)
    }

    /// An encoder hook fusing the given extractor pairs (pair `i` feeds
    /// level `i + 1`).
    pub fn hook<'a>(&'a self, bound: &'a Bound, pairs: [FeaturePair; 3]) -> RfrHook<'a, T> {
        RfrHook { rfr: self, bound, pairs }
    }
}

pub struct RfrHook<'a, T: Real> {
    rfr: &'a Rfr<T>,
    bound: &'a Bound,
    pairs: [FeaturePair; 3],
}

impl<T: Real> EncoderHook<T> for RfrHook<'_, T> {
    fn inject(&mut self, g: &mut Graph<T>, level: usize, features: Var) -> Result<Var> {
        self.rfr.apply_level(g, self.bound, level, self.pairs[level - 1], features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_convs_start_at_zero() {
        let r = Rfr::<f64>::new(RestorerConfig::default(), 0);
        assert_eq!(r.params().len(), 15);
        for l in 1..=LEVELS {
            let p = r.params().get(&format!("rfr{l}.fuse")).unwrap();
            assert!(p.weight.data().iter().all(|&v| v == 0.0));
        }
        let back = Rfr::from_params(r.restorer_config(), r.params().clone()).unwrap();
        assert_eq!(back, r);
    }
}
