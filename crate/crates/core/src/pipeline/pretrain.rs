//! Stage 1: masked pre-training of the restorer with a learned mask.
//!
//! Each sample builds one graph holding both networks. The scorer sees the
//! degraded image and yields the pixel map; the mask is drawn from the map's
//! values, so the masked input carries no path back to the scorer. The mask
//! loss takes the restorer's per-pixel errors as plain numbers, so it carries
//! no path back to the restorer. One backward sweep of the summed losses
//! therefore gives each network the gradient of its own objective only.

use rand::Rng as _;

use super::optim::{Adam, AdamConfig, Schedule};
use super::{check_data, Sample, P};
use crate::error::{Error, Result};
use crate::masking::{self, apply_mask, importance_map_var, mask_loss, per_pixel_error, restoration_loss, Mask};
use crate::nn::{AdaSam, GradSet, Network, Restorer};
use crate::rng::{stream, Purpose};
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PretrainMode {
    /// Both networks update every step.
    #[default]
    Joint,
    /// Restorer on even steps, scorer on odd steps.
    Alternate,
}

impl PretrainMode {
    pub fn name(self) -> &'static str {
        match self {
            PretrainMode::Joint => "joint",
            PretrainMode::Alternate => "alternate",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(PretrainMode::Joint),
            "alternate" => Ok(PretrainMode::Alternate),
            _ => Err(Error::UnknownName(format!("pretrain mode `{s}`"))),
        }
    }
}

/// Which losses enter the backward sweep. Anything but `Both` exists to
/// check that the two objectives touch disjoint parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Objective {
    #[default]
    Both,
    RestorationOnly,
    MaskOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub mask_ratio: f64,
    pub mask_weight: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub mode: PretrainMode,
    pub objective: Objective,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Halt once the loss stays above `divergence_factor ×` its first value
    /// for `divergence_window` consecutive steps.
    pub divergence_factor: f64,
    pub divergence_window: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 5000,
            batch: 8,
            mask_ratio: 0.5,
            mask_weight: masking::MASK_LOSS_WEIGHT,
            lr_max: 2e-4,
            lr_min: 1e-6,
            mode: PretrainMode::Joint,
            objective: Objective::Both,
            adam: AdamConfig::default(),
            seed: 0,
            divergence_factor: 10.0,
            divergence_window: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    /// Batch mean of the masked-region L1.
    pub restoration: f64,
    /// Batch mean of the mask loss.
    pub mask: f64,
}

pub struct PretrainOutcome {
    pub restorer: Restorer<P>,
    pub adasam: AdaSam<P>,
    pub log: Vec<StepLog>,
}

/// Stepwise trainer; [`pretrain`] runs it to the end.
pub struct Pretrainer {
    pub restorer: Restorer<P>,
    pub adasam: AdaSam<P>,
    config: PretrainConfig,
    schedule: Schedule,
    opt_restorer: Adam,
    opt_adasam: Adam,
    step: usize,
    first_loss: Option<f64>,
    above: usize,
}

struct SampleGrads {
    restorer: GradSet<P>,
    adasam: GradSet<P>,
    restoration: f64,
    mask: f64,
}

impl Pretrainer {
    pub fn new(restorer: Restorer<P>, adasam: AdaSam<P>, config: PretrainConfig) -> Result<Self> {
        if config.batch == 0 {
            return Err(Error::range("pretrain.batch", 0, ">= 1"));
        }
        if !(config.mask_ratio > 0.0 && config.mask_ratio < 1.0) {
            return Err(Error::range("mask.ratio", config.mask_ratio, "(0, 1)"));
        }
        if !(config.mask_weight >= 0.0 && config.mask_weight.is_finite()) {
            return Err(Error::range("mask.loss_weight", config.mask_weight, "[0, inf)"));
        }
        let schedule = Schedule::new(config.lr_max, config.lr_min, config.steps)?;
        Ok(Pretrainer {
            restorer,
            adasam,
            opt_restorer: Adam::new(config.adam),
            opt_adasam: Adam::new(config.adam),
            schedule,
            config,
            step: 0,
            first_loss: None,
            above: 0,
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.steps
    }

    /// The mask a sample receives at a given step.
    fn sample_mask(&self, pixel_map: &[f64], h: usize, w: usize, index: u64) -> Result<Mask> {
        let mut rng = stream(self.config.seed, Purpose::Mask, index);
        masking::sample_mask(pixel_map, h, w, self.config.mask_ratio, &mut rng)
    }

    fn sample_grads(&self, s: &Sample, index: u64) -> Result<SampleGrads> {
        let (h, w) = (s.degraded.shape()[1], s.degraded.shape()[2]);
        let mut g = Graph::<P>::new();
        let rb = self.restorer.params().bind(&mut g, true);
        let ab = self.adasam.params().bind(&mut g, true);

        let x = g.leaf(&s.degraded);
        let scores = self.adasam.forward(&mut g, &ab, x)?;
        let pmap = importance_map_var(&mut g, scores, h, w, self.adasam.config().patch)?;
        let values: Vec<f64> = g.value(pmap).iter().map(|&v| v as f64).collect();
        let mask = self.sample_mask(&values, h, w, index)?;

        let masked = apply_mask(&s.degraded, &mask, 0.0)?;
        let xm = g.leaf(&masked);
        let pass = self.restorer.forward(&mut g, &rb, xm, None)?;
        let clean = g.leaf(&s.clean);
        let lr = restoration_loss(&mut g, pass.output, clean, &mask)?;
        let errors = per_pixel_error(&g.tensor(pass.output), &s.clean)?;
        let lm = mask_loss(&mut g, &errors, pmap, &mask, self.config.mask_weight)?;

        let total = match self.config.objective {
            Objective::Both => g.add(lr, lm)?,
            Objective::RestorationOnly => lr,
            Objective::MaskOnly => lm,
        };
        let grads = g.backward(total)?;
        Ok(SampleGrads {
            restorer: self.restorer.params().grads(&rb, &grads),
            adasam: self.adasam.params().grads(&ab, &grads),
            restoration: g.item(lr) as f64,
            mask: g.item(lm) as f64,
        })
    }

    /// One optimisation step on a batch drawn from `data`.
    pub fn step(&mut self, data: &[Sample]) -> Result<StepLog> {
        check_data(data, "pretrain")?;
        let b = self.config.batch;
        let mut rng = stream(self.config.seed, Purpose::Batch, self.step as u64);
        let mut gr = GradSet::default();
        let mut ga = GradSet::default();
        let (mut restoration, mut mask) = (0.0, 0.0);
        for i in 0..b {
            let s = &data[rng.random_range(0..data.len())];
            let sg = self.sample_grads(s, (self.step * b + i) as u64)?;
            gr.merge(&sg.restorer);
            ga.merge(&sg.adasam);
            restoration += sg.restoration;
            mask += sg.mask;
        }
        let scale = 1.0 / b as P;
        gr.scale(scale);
        ga.scale(scale);
        let lr = self.schedule.lr_at(self.step);
        let (update_r, update_a) = match self.config.mode {
            PretrainMode::Joint => (true, true),
            PretrainMode::Alternate => (self.step % 2 == 0, self.step % 2 == 1),
        };
        if update_r {
            self.opt_restorer.step(self.restorer.params_mut(), &gr, lr)?;
        }
        if update_a {
            self.opt_adasam.step(self.adasam.params_mut(), &ga, lr)?;
        }
        let log = StepLog {
            step: self.step,
            lr,
            restoration: restoration / b as f64,
            mask: mask / b as f64,
        };
        self.watch(log.restoration)?;
        self.step += 1;
        Ok(log)
    }

    fn watch(&mut self, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                loss,
                limit: f64::INFINITY,
                window: 1,
            });
        }
        let first = *self.first_loss.get_or_insert(loss);
        let limit = self.config.divergence_factor * first;
        if loss > limit {
            self.above += 1;
            if self.above >= self.config.divergence_window {
                return Err(Error::Diverged {
                    step: self.step,
                    loss,
                    limit,
                    window: self.config.divergence_window,
                });
            }
        } else {
            self.above = 0;
        }
        Ok(())
    }

    pub fn finish(self, log: Vec<StepLog>) -> PretrainOutcome {
        PretrainOutcome {
            restorer: self.restorer,
            adasam: self.adasam,
            log,
        }
    }
}

/// Runs every configured step.
pub fn pretrain(
    restorer: Restorer<P>,
    adasam: AdaSam<P>,
    data: &[Sample],
    config: &PretrainConfig,
) -> Result<PretrainOutcome> {
    let mut t = Pretrainer::new(restorer, adasam, config.clone())?;
    let mut log = Vec::with_capacity(config.steps);
    while !t.is_done() {
        log.push(t.step(data)?);
    }
    Ok(t.finish(log))
}

/// Mean token score over the right half of the image minus the left half.
pub fn half_score_gap(adasam: &AdaSam<P>, image: &Tensor<P>) -> Result<f64> {
    let s = adasam.scores(image)?;
    let p = adasam.config().patch;
    let gw = image.shape()[2] / p;
    let (mut left, mut right, mut nl, mut nr) = (0.0, 0.0, 0, 0);
    for (t, &v) in s.data().iter().enumerate() {
        if t % gw < gw / 2 {
            left += v as f64;
            nl += 1;
        } else {
            right += v as f64;
            nr += 1;
        }
    }
    Ok(right / nr as f64 - left / nl as f64)
}
