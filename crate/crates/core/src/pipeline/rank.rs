//! Layer scores for the restorer along each probe's masked path.

use super::{check_data, Sample, P};
use crate::attribution::{assign_path_times, mac_layers, Aggregation, PathSpec, Quadrature};
use crate::error::{Error, Result};
use crate::masking::plan;
use crate::nn::{AdaSam, Network, Restorer};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacConfig {
    pub delta: f64,
    pub steps: usize,
    /// Fraction `r` of the path integrated, ending at the whole input.
    pub path_ratio: f64,
    /// Ratio of the probe masks that decide which pixels switch late.
    pub mask_ratio: f64,
    pub quadrature: Quadrature,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl Default for MacConfig {
    fn default() -> Self {
        MacConfig {
            delta: 100.0,
            steps: 64,
            path_ratio: 0.5,
            mask_ratio: 0.5,
            quadrature: Quadrature::Trapezoid,
            aggregation: Aggregation::Absolute,
            seed: 0,
        }
    }
}

/// One score per restorer group, in group order. The attributed output is
/// the mean absolute error against the clean image; scores are averaged
/// over probes.
pub fn mac_scores(
    restorer: &Restorer<P>,
    adasam: &AdaSam<P>,
    probes: &[Sample],
    config: &MacConfig,
) -> Result<Vec<(String, f64)>> {
    check_data(probes, "mac_scores")?;
    let names = restorer.group_names();
    let mut totals = vec![0.0; names.len()];
    for (p, s) in probes.iter().enumerate() {
        let (h, w) = (s.degraded.shape()[1], s.degraded.shape()[2]);
        let scores: Vec<f64> = adasam.scores(&s.degraded)?.data().iter().map(|&v| v as f64).collect();
        let mask = plan(&scores, h, w, adasam.config().patch, config.mask_ratio, config.seed, p as u64)?.mask;
        let times = assign_path_times(Some(mask.bits()), h * w, config.path_ratio, config.delta, config.seed, p as u64)?;
        let spec = PathSpec::new(
            Tensor::zeros(s.degraded.shape()),
            s.degraded.clone(),
            times,
            config.delta,
            config.path_ratio,
            config.steps,
        )?;
        let f = |g: &mut Graph<P>, x: Var| -> Result<(Var, Vec<Var>)> {
            let bound = restorer.params().bind(g, false);
            let pass = restorer.forward(g, &bound, x, None)?;
            let clean = g.leaf(&s.clean);
            let d = g.sub(pass.output, clean)?;
            let a = g.abs(d);
            let out = g.mean(a);
            let layers = names
                .iter()
                .map(|n| pass.tap(n).ok_or_else(|| Error::UnknownName(n.clone())))
                .collect::<Result<Vec<_>>>()?;
            Ok((out, layers))
        };
        let units = mac_layers(f, &spec, config.quadrature)?;
        for (t, u) in totals.iter_mut().zip(&units) {
            *t += config.aggregation.apply(u);
        }
    }
    Ok(names
        .into_iter()
        .zip(totals)
        .map(|(n, t)| (n, t / probes.len() as f64))
        .collect())
}
