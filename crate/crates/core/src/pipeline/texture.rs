//! Pre-training of the feature extractor on procedural texture classes.
//! Fusion only ever sees the extractor frozen; this is how its weights are
//! produced in the first place.

use super::optim::{Adam, AdamConfig, Schedule};
use super::P;
use crate::degrade::clean::{texture_class_image, TEXTURE_CLASSES};
use crate::error::Result;
use crate::nn::{Extractor, GradSet, Network};
use crate::rng::{derive, Purpose};
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtractorTraining {
    pub steps: usize,
    pub batch: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub size: usize,
    pub seed: u64,
}

impl Default for ExtractorTraining {
    fn default() -> Self {
        ExtractorTraining {
            steps: 1000,
            batch: 16,
            lr_max: 2e-3,
            lr_min: 1e-5,
            size: 32,
            seed: 0,
        }
    }
}

fn texture(class: usize, seed: u64, size: usize) -> Result<Tensor<P>> {
    Ok(texture_class_image(class, seed, size)?.cast())
}

/// Cross-entropy of the texture class; returns gradients and the loss.
fn class_grads(e: &Extractor<P>, image: &Tensor<P>, class: usize) -> Result<(GradSet<P>, f64)> {
    let mut g = Graph::new();
    let b = e.params().bind(&mut g, true);
    let x = g.leaf(image);
    let pass = e.forward(&mut g, &b, x)?;
    // log-sum-exp around the largest logit, so no probability underflows to 0.
    let top = g.value(pass.logits).iter().copied().fold(P::NEG_INFINITY, P::max);
    let shifted = g.add_scalar(pass.logits, -top);
    let e_sum = {
        let e = g.exp(shifted);
        g.sum(e)
    };
    let lse = g.log(e_sum);
    let pick = g.constant(&[TEXTURE_CLASSES], (0..TEXTURE_CLASSES).map(|c| if c == class { 1.0 } else { 0.0 }).collect())?;
    let picked = {
        let m = g.mul(shifted, pick)?;
        g.sum(m)
    };
    let loss = g.sub(lse, picked)?;
    let grads = g.backward(loss)?;
    Ok((e.params().grads(&b, &grads), g.item(loss) as f64))
}

/// Trains a fresh extractor and returns it frozen, with the per-step loss.
pub fn train_extractor(cfg: &ExtractorTraining) -> Result<(Extractor<P>, Vec<f64>)> {
    let mut e = Extractor::<P>::new(3, cfg.seed);
    let schedule = Schedule::new(cfg.lr_max, cfg.lr_min, cfg.steps)?;
    let mut adam = Adam::new(AdamConfig::default());
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut grads = GradSet::default();
        let mut loss = 0.0;
        for i in 0..cfg.batch {
            let class = i % TEXTURE_CLASSES;
            let seed = derive(cfg.seed, Purpose::Texture, (step * cfg.batch + i) as u64);
            let (gs, l) = class_grads(&e, &texture(class, seed, cfg.size)?, class)?;
            grads.merge(&gs);
            loss += l;
        }
        grads.scale(1.0 / cfg.batch as P);
        adam.step(e.params_mut(), &grads, schedule.lr_at(step))?;
        log.push(loss / cfg.batch as f64);
    }
    Ok((e.freeze(), log))
}

/// Fraction of held-out texture samples classified correctly.
pub fn texture_accuracy(e: &Extractor<P>, seed: u64, per_class: usize, size: usize) -> Result<f64> {
    let mut right = 0;
    for class in 0..TEXTURE_CLASSES {
        for i in 0..per_class {
            let img = texture(class, derive(seed, Purpose::Test, (class * per_class + i) as u64), size)?;
            let mut g = Graph::new();
            let b = e.params().bind(&mut g, false);
            let x = g.leaf(&img);
            let out = e.forward(&mut g, &b, x)?.logits;
            let logits = g.tensor(out);
            let best = (0..TEXTURE_CLASSES)
                .max_by(|&a, &b| logits.data()[a].total_cmp(&logits.data()[b]))
                .unwrap_or(0);
            right += usize::from(best == class);
        }
    }
    Ok(right as f64 / (TEXTURE_CLASSES * per_class) as f64)
}
