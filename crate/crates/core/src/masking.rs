//! Adaptive pixel masks and the two pre-training objectives.
//!
//! Token scores from the scorer are spread evenly over their patch pixels,
//! a fixed number of pixels is drawn without replacement in proportion to
//! that map, and the restorer is supervised on the masked pixels only. The
//! scorer is trained to raise the probability of pixels the restorer found
//! hard, using the restorer's error as a constant.

use std::path::Path;

use crate::error::{Error, Result};
use crate::imageio;
use crate::rng::{stream, Purpose};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Default weight of the mask loss.
pub const MASK_LOSS_WEIGHT: f64 = 1e-4;

/// Binary spatial mask shared by all channels; `true` marks a masked pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn filled(height: usize, width: usize, masked: bool) -> Self {
        Mask {
            height,
            width,
            bits: vec![masked; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape("mask", &[height, width], &[bits.len()]));
        }
        Ok(Mask { height, width, bits })
    }

    pub fn from_indices(height: usize, width: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; height * width];
        for &i in indices {
            if i >= bits.len() {
                return Err(Error::invalid("mask", format!("pixel {i} out of bounds")));
            }
            if bits[i] {
                return Err(Error::invalid("mask", format!("pixel {i} listed twice")));
            }
            bits[i] = true;
        }
        Ok(Mask { height, width, bits })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_masked(&self, pixel: usize) -> bool {
        self.bits[pixel]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn ratio(&self) -> f64 {
        self.count() as f64 / self.len() as f64
    }

    /// Masked pixel ids in ascending order.
    pub fn indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.bits[i]).collect()
    }

    pub fn complement(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// 1.0 at masked pixels, 0.0 elsewhere.
    pub fn values(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// 8-bit greymap, 255 where masked.
    pub fn to_pgm(&self) -> Vec<u8> {
        imageio::encode_pgm(&self.values(), self.height, self.width).expect("sizes agree")
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        imageio::write_pgm(path, &self.values(), self.height, self.width)
    }
}

/// Everything decided about one image's mask.
#[derive(Clone, Debug)]
pub struct MaskPlan {
    pub token_scores: Vec<f64>,
    pub pixel_map: Vec<f64>,
    pub ratio: f64,
    pub n_mask: usize,
    pub indices: Vec<usize>,
    pub mask: Mask,
}

/// `⌊pixels · ρ⌋`, tolerant of decimal ratios that are not exact in binary
/// (0.29 · 100 is 29, not 28).
pub fn mask_count(pixels: usize, ratio: f64) -> usize {
    (pixels as f64 * ratio + 1e-9).floor() as usize
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio < 1.0 {
        Ok(())
    } else {
        Err(Error::range("mask_ratio", ratio, "(0, 1)"))
    }
}

/// Spreads each token's score evenly over its `patch`×`patch` pixels.
pub fn importance_map(scores: &[f64], height: usize, width: usize, patch: usize) -> Result<Vec<f64>> {
    if patch == 0 || height % patch != 0 || width % patch != 0 {
        return Err(Error::invalid(
            "importance_map",
            format!("{height}x{width} is not divisible into {patch}x{patch} patches"),
        ));
    }
    let gw = width / patch;
    let tokens = (height / patch) * gw;
    if scores.len() != tokens {
        return Err(Error::shape("importance_map", &[tokens], &[scores.len()]));
    }
    let per = (patch * patch) as f64;
    Ok((0..height * width)
        .map(|i| scores[(i / width / patch) * gw + (i % width) / patch] / per)
        .collect())
}

/// The same map recorded on a graph, so the mask loss reaches the scorer.
pub fn importance_map_var<T: Real>(
    g: &mut Graph<T>,
    scores: Var,
    height: usize,
    width: usize,
    patch: usize,
) -> Result<Var> {
    let expanded = g.patch_expand(scores, height, width, patch)?;
    Ok(g.mul_scalar(expanded, T::of(1.0 / (patch * patch) as f64)))
}

/// Draws `⌊H·W·ρ⌋` distinct pixels without replacement, each draw in
/// proportion to the remaining probabilities (Gumbel-top-k). Pixels with
/// zero probability are never drawn.
pub fn sample_mask<R: rand::Rng + ?Sized>(
    pixel_map: &[f64],
    height: usize,
    width: usize,
    ratio: f64,
    rng: &mut R,
) -> Result<Mask> {
    check_ratio(ratio)?;
    if pixel_map.len() != height * width {
        return Err(Error::shape("sample_mask", &[height * width], &[pixel_map.len()]));
    }
    let n_mask = mask_count(pixel_map.len(), ratio);
    let positive = pixel_map.iter().filter(|&&p| p > 0.0).count();
    if positive < n_mask {
        return Err(Error::invalid(
            "sample_mask",
            format!("{positive} pixels have positive probability but {n_mask} must be masked"),
        ));
    }
    // One uniform per pixel in pixel order keeps the stream layout fixed.
    let mut keys: Vec<(f64, usize)> = pixel_map
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let u: f64 = rng.random::<f64>();
            let gumbel = -(-(u.max(f64::MIN_POSITIVE)).ln()).ln();
            let key = if p > 0.0 { p.ln() + gumbel } else { f64::NEG_INFINITY };
            (key, i)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let picked: Vec<usize> = keys[..n_mask].iter().map(|&(_, i)| i).collect();
    Mask::from_indices(height, width, &picked)
}

/// Builds a full plan from token scores with a seeded stream.
pub fn plan(
    token_scores: &[f64],
    height: usize,
    width: usize,
    patch: usize,
    ratio: f64,
    seed: u64,
    index: u64,
) -> Result<MaskPlan> {
    let pixel_map = importance_map(token_scores, height, width, patch)?;
    let mut rng = stream(seed, Purpose::Mask, index);
    let mask = sample_mask(&pixel_map, height, width, ratio, &mut rng)?;
    Ok(MaskPlan {
        token_scores: token_scores.to_vec(),
        pixel_map,
        ratio,
        n_mask: mask.count(),
        indices: mask.indices(),
        mask,
    })
}

/// Sets masked pixels to `fill` in every channel.
pub fn apply_mask<T: Real>(image: &Tensor<T>, mask: &Mask, fill: T) -> Result<Tensor<T>> {
    let s = image.shape();
    if s.len() != 3 || s[1] != mask.height || s[2] != mask.width {
        return Err(Error::shape("apply_mask", s, &[0, mask.height, mask.width]));
    }
    let hw = mask.len();
    let mut out = image.clone().with_requires_grad(false);
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if mask.bits[i % hw] {
            *v = fill;
        }
    }
    Ok(out)
}

/// `(M, 1 − M)`.
pub fn twin_mask_pair(mask: &Mask) -> (Mask, Mask) {
    (mask.clone(), mask.complement())
}

/// Mean absolute error over the pixels of `region`, all channels.
pub fn restoration_loss<T: Real>(g: &mut Graph<T>, pred: Var, clean: Var, region: &Mask) -> Result<Var> {
    let shape = g.shape(pred).to_vec();
    if shape.len() != 3 || shape[1] != region.height || shape[2] != region.width {
        return Err(Error::shape("restoration_loss", &shape, &[0, region.height, region.width]));
    }
    let count = region.count();
    if count == 0 {
        return Err(Error::invalid("restoration_loss", "supervised region is empty"));
    }
    let hw = region.len();
    let norm = 1.0 / (count * shape[0]) as f64;
    let weights: Vec<T> = (0..shape[0] * hw)
        .map(|i| if region.bits[i % hw] { T::of(norm) } else { T::zero() })
        .collect();
    let w = g.constant(&shape, weights)?;
    let d = g.sub(pred, clean)?;
    let a = g.abs(d);
    let weighted = g.mul(a, w)?;
    Ok(g.sum(weighted))
}

/// Per-pixel error, averaged over channels: `e_i = mean_c |pred − clean|`.
pub fn per_pixel_error<T: Real>(pred: &Tensor<T>, clean: &Tensor<T>) -> Result<Vec<f64>> {
    if pred.shape() != clean.shape() || pred.shape().len() != 3 {
        return Err(Error::shape("per_pixel_error", pred.shape(), clean.shape()));
    }
    let c = pred.shape()[0];
    let hw = pred.numel() / c;
    let (p, q) = (pred.data(), clean.data());
    Ok((0..hw)
        .map(|i| (0..c).map(|ch| (p[ch * hw + i] - q[ch * hw + i]).abs().as_f64()).sum::<f64>() / c as f64)
        .collect())
}

/// `−weight · Σ_{i∈region} e_i · log s_i`.
///
/// `errors` are plain values, so nothing flows back into whatever produced
/// them; `pixel_map` is the live `[H·W]` probability node.
pub fn mask_loss<T: Real>(
    g: &mut Graph<T>,
    errors: &[f64],
    pixel_map: Var,
    region: &Mask,
    weight: f64,
) -> Result<Var> {
    let n = region.len();
    if g.shape(pixel_map) != [n] || errors.len() != n {
        return Err(Error::shape("mask_loss", g.shape(pixel_map), &[errors.len()]));
    }
    if let Some(i) = (0..n).find(|&i| region.bits[i] && g.value(pixel_map)[i].as_f64() <= 0.0) {
        return Err(Error::invalid(
            "mask_loss",
            format!("pixel {i} is in the region but has zero probability"),
        ));
    }
    // Outside the region add 1 so the log stays finite; those terms carry a
    // zero coefficient.
    let shift: Vec<T> = region.bits.iter().map(|&b| if b { T::zero() } else { T::one() }).collect();
    let shift = g.constant(&[n], shift)?;
    let coef: Vec<T> = (0..n)
        .map(|i| if region.bits[i] { T::of(-weight * errors[i]) } else { T::zero() })
        .collect();
    let coef = g.constant(&[n], coef)?;
    let safe = g.add(pixel_map, shift)?;
    let logs = g.log(safe);
    let terms = g.mul(logs, coef)?;
    Ok(g.sum(terms))
}
