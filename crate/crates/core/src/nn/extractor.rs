//! Frozen convolutional feature extractor.
//!
//! Six `relu(conv3x3)` blocks, stride 2 on every odd block, plus a linear
//! texture classifier on the pooled last block. Adjacent blocks form the
//! three feature pairs consumed by fusion.

use super::layers::{conv, linear};
use super::params::{Bound, ParamGroup, ParamSet};
use super::Network;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

pub const BLOCKS: usize = 6;
pub const CHANNELS: [usize; BLOCKS] = [16, 16, 32, 32, 64, 64];
pub const STRIDES: [usize; BLOCKS] = [2, 1, 2, 1, 2, 1];
pub const CLASSES: usize = 8;
pub const MIN_SIZE: usize = 32;

/// Activations of two adjacent blocks at equal resolution.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePair {
    pub first: Var,
    pub second: Var,
}

pub struct ExtractorPass {
    /// Output of every block, in order.
    pub blocks: Vec<Var>,
    /// Classifier logits `[CLASSES]`.
    pub logits: Var,
}

impl ExtractorPass {
    /// Pair `i` (0-based) is blocks `2i+1` and `2i+2`.
    pub fn pairs(&self) -> [FeaturePair; 3] {
        std::array::from_fn(|i| FeaturePair {
            first: self.blocks[2 * i],
            second: self.blocks[2 * i + 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extractor<T: Real> {
    channels: usize,
    params: ParamSet<T>,
}

impl<T: Real> Network<T> for Extractor<T> {
    const MODULE: &'static str = "extractor";
    const VERSION: u32 = 1;

    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }
}

fn layout(channels: usize) -> Vec<(String, Vec<usize>)> {
    let mut groups = Vec::new();
    let mut cin = channels;
    for (i, &c) in CHANNELS.iter().enumerate() {
        groups.push((format!("block{}", i + 1), vec![c, cin, 3, 3]));
        cin = c;
    }
    groups.push(("classifier".into(), vec![CLASSES, cin]));
    groups
}

impl<T: Real> Extractor<T> {
    /// A freshly initialised, trainable extractor (used only for its own
    /// classification pre-training).
    pub fn new(channels: usize, seed: u64) -> Self {
        let mut params = ParamSet::new();
        for (i, (name, shape)) in layout(channels).into_iter().enumerate() {
            params
                .insert(name, ParamGroup::kaiming(&shape, true, seed, 200 + i as u64))
                .expect("layout names are unique");
        }
        Extractor { channels, params }
    }

    pub fn from_params(channels: usize, params: ParamSet<T>) -> Result<Self> {
        let want = layout(channels);
        if params.len() != want.len() {
            return Err(Error::invalid(
                "extractor",
                format!("expected {} groups, found {}", want.len(), params.len()),
            ));
        }
        for (name, shape) in &want {
            let p = params.get(name)?;
            if p.weight.shape() != shape.as_slice() {
                return Err(Error::shape("extractor", shape, p.weight.shape()));
            }
        }
        Ok(Extractor { channels, params })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Marks every group frozen.
    pub fn freeze(mut self) -> Self {
        self.params.set_all_trainable(false);
        self
    }

    pub fn is_frozen(&self) -> bool {
        self.params.trainable_names().is_empty()
    }

    pub fn forward(&self, g: &mut Graph<T>, bound: &Bound, image: Var) -> Result<ExtractorPass> {
        let shape = g.shape(image).to_vec();
        if shape.len() != 3 || shape[0] != self.channels {
            return Err(Error::shape("extractor", &[self.channels, MIN_SIZE, MIN_SIZE], &shape));
        }
        if shape[1] < MIN_SIZE || shape[2] < MIN_SIZE {
            return Err(Error::invalid(
                "extractor",
                format!(
                    "input {}x{} is smaller than {MIN_SIZE}x{MIN_SIZE}",
                    shape[1], shape[2]
                ),
            ));
        }
        let mut h = image;
        let mut blocks = Vec::with_capacity(BLOCKS);
        for (i, &stride) in STRIDES.iter().enumerate() {
            let c = conv(g, bound, &format!("block{}", i + 1), h, stride)?;
            h = g.relu(c);
            blocks.push(h);
        }
        let pooled = g.global_avg_pool(h)?;
        let pooled = g.reshape(pooled, &[1, CHANNELS[BLOCKS - 1]])?;
        let logits = linear(g, bound, "classifier", pooled)?;
        let logits = g.reshape(logits, &[CLASSES])?;
        Ok(ExtractorPass { blocks, logits })
    }

    /// Gradient-free block activations for one image.
    pub fn features(&self, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let x = g.leaf(image);
        let pass = self.forward(&mut g, &bound, x)?;
        Ok(pass.blocks.iter().map(|&b| g.tensor(b)).collect())
    }

    pub fn cast<U: Real>(&self) -> Extractor<U> {
        Extractor {
            channels: self.channels,
            params: self.params.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freeze_marks_every_group() {
        let e = Extractor::<f32>::new(3, 0);
        assert!(!e.is_frozen());
        assert!(e.freeze().is_frozen());
    }
}
