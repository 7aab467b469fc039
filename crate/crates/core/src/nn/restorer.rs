//! Convolutional encoder/decoder restorer.
//!
//! Three stride-2 encoder levels, a latent block and three bilinear-upsample
//! decoder levels. Residual connections are block-local only: there is no
//! input-to-output skip, so the network predicts the image itself.

use super::layers::conv;
use super::params::{Bound, ParamGroup, ParamSet};
use super::Network;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

pub const LEVELS: usize = 3;

/// Scale on the initial weights of each block's second conv and of the
/// head. Keeps the residual stack near identity and the first outputs near
/// zero instead of growing with depth.
pub const RESIDUAL_INIT_GAIN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RestorerConfig {
    pub channels: usize,
    /// Width at level 1; doubles per level.
    pub base: usize,
}

impl Default for RestorerConfig {
    fn default() -> Self {
        RestorerConfig {
            channels: 3,
            base: 16,
        }
    }
}

impl RestorerConfig {
    /// Channel width of encoder level `level` (1-based).
    pub fn level_channels(&self, level: usize) -> usize {
        self.base << (level - 1)
    }
}

/// Replaces encoder activations during the forward pass; used to fuse
/// external features at each level.
pub trait EncoderHook<T: Real> {
    /// `level` is 1-based; `features` is the level's encoder activation.
    fn inject(&mut self, g: &mut Graph<T>, level: usize, features: Var) -> Result<Var>;
}

/// Values recorded by one restorer forward pass.
pub struct RestorerPass {
    pub output: Var,
    /// Output of every named group, in group order.
    pub taps: Vec<(String, Var)>,
    pub latent: Var,
    /// Encoder activation per level after any injection.
    pub levels: Vec<Var>,
}

impl RestorerPass {
    pub fn tap(&self, name: &str) -> Option<Var> {
        self.taps.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Restorer<T: Real> {
    config: RestorerConfig,
    params: ParamSet<T>,
}

impl<T: Real> Network<T> for Restorer<T> {
    const MODULE: &'static str = "restorer";
    const VERSION: u32 = 1;

    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }
}

fn layout(cfg: &RestorerConfig) -> Vec<(String, [usize; 4])> {
    let c = |l: usize| cfg.level_channels(l);
    let mut groups = vec![("embed".to_string(), [c(1), cfg.channels, 3, 3])];
    for l in 1..=LEVELS {
        groups.push((format!("enc{l}.conv1"), [c(l), c(l), 3, 3]));
        groups.push((format!("enc{l}.conv2"), [c(l), c(l), 3, 3]));
        groups.push((format!("down{l}"), [c(l + 1), c(l), 3, 3]));
    }
    groups.push(("latent.conv1".into(), [c(4), c(4), 3, 3]));
    groups.push(("latent.conv2".into(), [c(4), c(4), 3, 3]));
    for l in (1..=LEVELS).rev() {
        groups.push((format!("up{l}"), [c(l), c(l + 1), 3, 3]));
        groups.push((format!("dec{l}.conv1"), [c(l), c(l), 3, 3]));
        groups.push((format!("dec{l}.conv2"), [c(l), c(l), 3, 3]));
    }
    groups.push(("head".into(), [cfg.channels, c(1), 3, 3]));
    groups
}

impl<T: Real> Restorer<T> {
    pub fn new(config: RestorerConfig, seed: u64) -> Self {
        let mut params = ParamSet::new();
        for (i, (name, shape)) in layout(&config).into_iter().enumerate() {
            let mut group = ParamGroup::kaiming(&shape, true, seed, i as u64);
            if name.ends_with(".conv2") || name == "head" {
                group.weight = group.weight.map(|v| v * T::of(RESIDUAL_INIT_GAIN));
            }
            params.insert(name, group).expect("layout names are unique");
        }
        Restorer { config, params }
    }

    /// Rebuilds a restorer around loaded parameters, checking every group.
    pub fn from_params(config: RestorerConfig, params: ParamSet<T>) -> Result<Self> {
        let want = layout(&config);
        if params.len() != want.len() {
            return Err(Error::invalid(
                "restorer",
                format!("expected {} groups, found {}", want.len(), params.len()),
            ));
        }
        for (name, shape) in &want {
            let p = params.get(name)?;
            if p.weight.shape() != shape {
                return Err(Error::shape("restorer", shape, p.weight.shape()));
            }
        }
        Ok(Restorer { config, params })
    }

    pub fn config(&self) -> RestorerConfig {
        self.config
    }

    pub fn cast<U: Real>(&self) -> Restorer<U> {
        Restorer {
            config: self.config,
            params: self.params.cast(),
        }
    }

    fn block(&self, g: &mut Graph<T>, b: &Bound, prefix: &str, x: Var, taps: &mut Vec<(String, Var)>) -> Result<Var> {
        let n1 = format!("{prefix}.conv1");
        let n2 = format!("{prefix}.conv2");
        let h = conv(g, b, &n1, x, 1)?;
        taps.push((n1, h));
        let h = g.relu(h);
        let h = conv(g, b, &n2, h, 1)?;
        taps.push((n2, h));
        g.add(x, h)
    }

    /// Forward pass on `x[C,H,W]` with `H`, `W` divisible by 8.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        x: Var,
        mut hook: Option<&mut dyn EncoderHook<T>>,
    ) -> Result<RestorerPass> {
        let shape = g.shape(x).to_vec();
        let factor = 1 << LEVELS;
        if shape.len() != 3 || shape[0] != self.config.channels {
            return Err(Error::shape("restorer", &[self.config.channels, 0, 0], &shape));
        }
        if shape[1] % factor != 0 || shape[2] % factor != 0 {
            return Err(Error::invalid(
                "restorer",
                format!("spatial size {}x{} is not divisible by {factor}", shape[1], shape[2]),
            ));
        }
        let mut taps = Vec::with_capacity(self.params.len());
        let mut levels = Vec::with_capacity(LEVELS);

        let mut h = conv(g, bound, "embed", x, 1)?;
        taps.push(("embed".into(), h));
        for l in 1..=LEVELS {
            h = self.block(g, bound, &format!("enc{l}"), h, &mut taps)?;
            if let Some(hook) = hook.as_deref_mut() {
                h = hook.inject(g, l, h)?;
            }
            levels.push(h);
            let name = format!("down{l}");
            let d = conv(g, bound, &name, h, 2)?;
            taps.push((name, d));
            h = g.relu(d);
        }
        h = self.block(g, bound, "latent", h, &mut taps)?;
        let latent = h;
        for l in (1..=LEVELS).rev() {
            let (hh, ww) = (g.shape(h)[1] * 2, g.shape(h)[2] * 2);
            let up = g.resize_bilinear(h, hh, ww)?;
            let name = format!("up{l}");
            let u = conv(g, bound, &name, up, 1)?;
            taps.push((name, u));
            h = g.relu(u);
            h = self.block(g, bound, &format!("dec{l}"), h, &mut taps)?;
        }
        let output = conv(g, bound, "head", h, 1)?;
        taps.push(("head".into(), output));
        Ok(RestorerPass {
            output,
            taps,
            latent,
            levels,
        })
    }

    /// Gradient-free inference on a single image.
    pub fn infer(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let x = g.leaf(image);
        let pass = self.forward(&mut g, &bound, x, None)?;
        Ok(g.tensor(pass.output))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_names_are_unique_and_ordered() {
        let r = Restorer::<f32>::new(RestorerConfig::default(), 0);
        let names: Vec<_> = r.params().names().collect();
        assert_eq!(names.len(), 22);
        assert_eq!(names[0], "embed");
        assert_eq!(*names.last().unwrap(), "head");
    }

    #[test]
    fn rejects_indivisible_input() {
        let r = Restorer::<f32>::new(RestorerConfig::default(), 0);
        assert!(r.infer(&Tensor::zeros(&[3, 20, 32])).is_err());
        assert!(r.infer(&Tensor::zeros(&[1, 32, 32])).is_err());
    }

    #[test]
    fn from_params_checks_layout() {
        let r = Restorer::<f32>::new(RestorerConfig::default(), 0);
        let back = Restorer::from_params(r.config(), r.params().clone()).unwrap();
        assert_eq!(back, r);
        let narrow = Restorer::<f32>::new(RestorerConfig { channels: 3, base: 8 }, 0);
        assert!(Restorer::from_params(RestorerConfig::default(), narrow.params().clone()).is_err());
    }
}
