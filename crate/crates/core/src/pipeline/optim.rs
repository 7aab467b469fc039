//! Cosine learning-rate schedule and Adam.

use std::f64::consts::PI;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::{GradSet, ParamSet};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: usize,
}

impl Schedule {
    pub fn new(lr_max: f64, lr_min: f64, total_steps: usize) -> Result<Self> {
        if !(lr_max > 0.0 && lr_max.is_finite()) {
            return Err(Error::range("lr_max", lr_max, "(0, inf)"));
        }
        if !(lr_min > 0.0 && lr_min <= lr_max) {
            return Err(Error::range("lr_min", lr_min, format!("(0, {lr_max}]")));
        }
        if total_steps == 0 {
            return Err(Error::range("steps", total_steps, ">= 1"));
        }
        Ok(Schedule {
            lr_max,
            lr_min,
            total_steps,
        })
    }

    /// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total))`, clamped to the
    /// schedule's end. The endpoints are returned exactly.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step == 0 {
            return self.lr_max;
        }
        if step >= self.total_steps {
            return self.lr_min;
        }
        let t = step as f64 / self.total_steps as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (PI * t).cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction. Moments are kept in f64 whatever the
/// parameter precision.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    state: IndexMap<String, (Moments, Moments)>,
}

fn update<T: Real>(values: &mut [T], grad: &[T], mom: &mut Moments, cfg: &AdamConfig, lr: f64, bc1: f64, bc2: f64) {
    if mom.m.is_empty() {
        mom.m = vec![0.0; values.len()];
        mom.v = vec![0.0; values.len()];
    }
    for i in 0..values.len() {
        let g = grad[i].as_f64();
        mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g;
        mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = mom.m[i] / bc1;
        let vh = mom.v[i] / bc2;
        let delta = lr * mh / (vh.sqrt() + cfg.eps);
        if delta != 0.0 {
            values[i] = T::of(values[i].as_f64() - delta);
        }
    }
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            state: IndexMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable group that has a gradient.
    /// A non-finite gradient rejects the whole step before anything moves.
    pub fn step<T: Real>(&mut self, params: &mut ParamSet<T>, grads: &GradSet<T>, lr: f64) -> Result<()> {
        if let Some(group) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient {
                group: group.to_string(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.config.beta1.powi(t);
        let bc2 = 1.0 - self.config.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let Some((gw, gb)) = grads.get(name) else {
                continue;
            };
            let (mw, mb) = self.state.entry(name.to_string()).or_default();
            update(p.weight.data_mut(), gw, mw, &self.config, lr, bc1, bc2);
            if let (Some(b), Some(gb)) = (p.bias.as_mut(), gb) {
                update(b.data_mut(), gb, mb, &self.config, lr, bc1, bc2);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamGroup;
    use crate::tensor::Graph;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let s = Schedule::new(2e-4, 1e-6, 1000).unwrap();
        assert_eq!(s.lr_at(0), 2e-4);
        assert_eq!(s.lr_at(1000), 1e-6);
        assert!((s.lr_at(500) - 1.005e-4).abs() < 1e-15);
        assert!((1..=1000).all(|i| s.lr_at(i) < s.lr_at(i - 1)));
        assert!(Schedule::new(1e-6, 2e-4, 10).is_err());
        assert!(Schedule::new(2e-4, 1e-6, 0).is_err());
    }

    fn one_group(trainable: bool) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        let mut g = ParamGroup::kaiming(&[2, 3], true, 0, 0);
        g.trainable = trainable;
        p.insert("w", g).unwrap();
        p
    }

    fn grads_of(p: &ParamSet<f64>, scale: f64) -> GradSet<f64> {
        let mut g = Graph::new();
        let b = p.bind(&mut g, true);
        let w = b.get("w").unwrap();
        let s = g.sum(w.weight);
        let sb = g.sum(w.bias.unwrap());
        let t = g.add(s, sb).unwrap();
        let t = g.mul_scalar(t, scale);
        p.grads(&b, &g.backward(t).unwrap())
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = one_group(true);
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default());
        let g = grads_of(&p, 0.0);
        adam.step(&mut p, &g, 1e-3).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_steps_approach_lr_times_sign() {
        let mut p = one_group(true);
        let mut adam = Adam::new(AdamConfig::default());
        let lr = 1e-3;
        let mut last = 0.0;
        for _ in 0..2000 {
            let g = grads_of(&p, 3.0);
            let before = p.get("w").unwrap().weight.data()[0];
            adam.step(&mut p, &g, lr).unwrap();
            last = p.get("w").unwrap().weight.data()[0] - before;
        }
        // Fixed point: lr · g / (|g| + eps).
        assert!((last + lr).abs() < 1e-6 * lr, "{last}");
    }

    #[test]
    fn frozen_group_is_bitwise_unchanged() {
        let mut p = one_group(false);
        let before = p.digest();
        let mut adam = Adam::new(AdamConfig::default());
        let mut trainable = one_group(true);
        let g = grads_of(&trainable, 1.0);
        adam.step(&mut trainable, &g, 1e-2).unwrap();
        adam.step(&mut p, &g, 1e-2).unwrap();
        assert_eq!(p.digest(), before);
    }

    #[test]
    fn non_finite_gradient_rejects_the_step() {
        let mut p = one_group(true);
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default());
        let g = grads_of(&p, f64::NAN);
        assert!(matches!(adam.step(&mut p, &g, 1e-3), Err(Error::NonFiniteGradient { .. })));
        assert_eq!(p, before);
        assert_eq!(adam.steps_taken(), 0);
    }
}
