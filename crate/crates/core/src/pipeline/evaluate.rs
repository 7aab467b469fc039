//! Per-kind PSNR/SSIM and the kind×kind CKA matrix of latent features.

use super::metrics::{cka, psnr, ssim};
use super::{Model, Sample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub kind: String,
    /// Mean PSNR (dB) over the set.
    pub psnr: f64,
    pub ssim: f64,
    pub n: usize,
    /// Samples restored exactly (PSNR at the cap).
    pub exact: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub records: Vec<MetricRecord>,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
    /// Population variance of the per-kind means.
    pub psnr_variance: f64,
    pub ssim_variance: f64,
    /// `cka[i][j]` between the latent features of sets `i` and `j`.
    pub cka: Vec<Vec<f64>>,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
}

fn latents(model: &Model, set: &[Sample]) -> Result<Vec<Vec<f64>>> {
    set.iter()
        .map(|s| Ok(model.restore(&s.degraded)?.latent.data().iter().map(|&v| v as f64).collect()))
        .collect()
}

/// Linear CKA between the latent features of two equally sized sets.
pub fn latent_cka(model: &Model, a: &[Sample], b: &[Sample]) -> Result<f64> {
    cka(&latents(model, a)?, &latents(model, b)?)
}

/// Evaluates named test sets. All sets must have the same size for the
/// CKA matrix; pairing is by position, so sets built from the same clean
/// seeds compare the same scenes under different degradations.
pub fn evaluate(model: &Model, sets: &[(String, Vec<Sample>)]) -> Result<EvalReport> {
    if sets.is_empty() || sets.iter().any(|(_, s)| s.is_empty()) {
        return Err(Error::invalid("evaluate", "empty test set"));
    }
    let n = sets[0].1.len();
    if let Some((name, s)) = sets.iter().find(|(_, s)| s.len() != n) {
        return Err(Error::invalid(
            "evaluate",
            format!("set `{name}` has {} samples, expected {n}", s.len()),
        ));
    }
    let mut records = Vec::with_capacity(sets.len());
    let mut features = Vec::with_capacity(sets.len());
    for (name, set) in sets {
        let (mut p_sum, mut s_sum, mut exact) = (0.0, 0.0, 0);
        let mut lat = Vec::with_capacity(set.len());
        for s in set {
            let r = model.restore(&s.degraded)?;
            let p = psnr(&r.output, &s.clean, 1.0)?;
            exact += usize::from(p.exact);
            p_sum += p.db;
            s_sum += ssim(&r.output, &s.clean, 1.0)?;
            lat.push(r.latent.data().iter().map(|&v| v as f64).collect::<Vec<f64>>());
        }
        records.push(MetricRecord {
            kind: name.clone(),
            psnr: p_sum / set.len() as f64,
            ssim: s_sum / set.len() as f64,
            n: set.len(),
            exact,
        });
        features.push(lat);
    }
    let cka_matrix = if n >= 2 {
        let k = features.len();
        let mut m = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i..k {
                let v = cka(&features[i], &features[j])?;
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        m
    } else {
        Vec::new()
    };
    let (psnr_mean, psnr_variance) = mean_var(&records.iter().map(|r| r.psnr).collect::<Vec<_>>());
    let (ssim_mean, ssim_variance) = mean_var(&records.iter().map(|r| r.ssim).collect::<Vec<_>>());
    Ok(EvalReport {
        records,
        psnr_mean,
        ssim_mean,
        psnr_variance,
        ssim_variance,
        cka: cka_matrix,
    })
}
