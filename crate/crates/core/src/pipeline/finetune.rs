//! Stage 2: fine-tune the selected restorer layers on whole inputs, with
//! the fusion layers always trainable and the extractor always frozen.

use rand::Rng as _;

use super::optim::{Adam, AdamConfig, Schedule};
use super::{check_data, Model, Sample, P};
use crate::attribution::LayerReport;
use crate::error::{Error, Result};
use crate::nn::{Extractor, GradSet, Network, Restorer, Rfr};
use crate::rng::{stream, Purpose};
use crate::tensor::Graph;

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            steps: 1000,
            batch: 8,
            lr_max: 2e-4,
            lr_min: 1e-6,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

pub struct FinetuneOutcome {
    pub model: Model,
    /// Batch mean whole-image L1 per step.
    pub log: Vec<f64>,
}

/// Freezes every restorer group the report does not select. The report
/// must name exactly the restorer's groups.
pub fn apply_report(restorer: &mut Restorer<P>, report: &LayerReport) -> Result<()> {
    report.check_names(&restorer.group_names())?;
    restorer.params_mut().set_all_trainable(false);
    restorer.set_trainable(&report.selected_names(), true)
}

fn sample_grads(
    restorer: &Restorer<P>,
    fusion: Option<(&Rfr<P>, &Extractor<P>)>,
    s: &Sample,
) -> Result<(GradSet<P>, Option<GradSet<P>>, f64)> {
    let mut g = Graph::<P>::new();
    let rb = restorer.params().bind(&mut g, true);
    let x = g.leaf(&s.degraded);
    let (pass, fb) = match fusion {
        Some((rfr, extractor)) => {
            let eb = extractor.params().bind(&mut g, false);
            let fb = rfr.params().bind(&mut g, true);
            let feats = extractor.forward(&mut g, &eb, x)?;
            let mut hook = rfr.hook(&fb, feats.pairs());
            (restorer.forward(&mut g, &rb, x, Some(&mut hook))?, Some(fb))
        }
        None => (restorer.forward(&mut g, &rb, x, None)?, None),
    };
    let clean = g.leaf(&s.clean);
    let d = g.sub(pass.output, clean)?;
    let a = g.abs(d);
    let loss = g.mean(a);
    let grads = g.backward(loss)?;
    let gr = restorer.params().grads(&rb, &grads);
    let gf = match (fusion, fb) {
        (Some((rfr, _)), Some(fb)) => Some(rfr.params().grads(&fb, &grads)),
        _ => None,
    };
    Ok((gr, gf, g.item(loss) as f64))
}

/// Fine-tunes `model` on whole degraded inputs with a whole-image L1 loss.
/// The caller decides which restorer groups are trainable (see
/// [`apply_report`]); the extractor is frozen here regardless.
pub fn finetune(mut model: Model, data: &[Sample], config: &FinetuneConfig) -> Result<FinetuneOutcome> {
    check_data(data, "finetune")?;
    if config.batch == 0 {
        return Err(Error::range("finetune.batch", 0, ">= 1"));
    }
    let schedule = Schedule::new(config.lr_max, config.lr_min, config.steps)?;
    if let Some((rfr, extractor)) = model.fusion.as_mut() {
        extractor.params_mut().set_all_trainable(false);
        rfr.params_mut().set_all_trainable(true);
    }
    let mut opt_r = Adam::new(config.adam);
    let mut opt_f = Adam::new(config.adam);
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut rng = stream(config.seed, Purpose::Batch, step as u64);
        let mut gr = GradSet::default();
        let mut gf = GradSet::default();
        let mut loss = 0.0;
        for _ in 0..config.batch {
            let s = &data[rng.random_range(0..data.len())];
            let fusion = model.fusion.as_ref().map(|(r, e)| (r, e));
            let (a, b, l) = sample_grads(&model.restorer, fusion, s)?;
            gr.merge(&a);
            if let Some(b) = b {
                gf.merge(&b);
            }
            loss += l;
        }
        let scale = 1.0 / config.batch as P;
        gr.scale(scale);
        gf.scale(scale);
        let lr = schedule.lr_at(step);
        opt_r.step(model.restorer.params_mut(), &gr, lr)?;
        if let Some((rfr, _)) = model.fusion.as_mut() {
            opt_f.step(rfr.params_mut(), &gf, lr)?;
        }
        log.push(loss / config.batch as f64);
    }
    Ok(FinetuneOutcome { model, log })
}
