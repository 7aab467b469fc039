//! Clean-image synthesis and paired degradations.

pub mod blur;
pub mod clean;
pub mod dataset;
pub mod jpeg;
pub mod noise;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

pub use blur::{gaussian_blur, gaussian_kernel, BLUR_KERNEL};
pub use clean::{gen_clean, gen_half_textured, texture_class_image, TEXTURE_CLASSES};
pub use jpeg::jpeg_artifact;
pub use noise::{add_gaussian_noise, pepper, poisson, speckle};

use crate::error::{Error, Result};
use crate::rng::{derive, stream, Purpose};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DegradationKind {
    GaussianNoise,
    GaussianBlur,
    Jpeg,
    Pepper,
    Speckle,
    Poisson,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 6] = [
        DegradationKind::GaussianNoise,
        DegradationKind::GaussianBlur,
        DegradationKind::Jpeg,
        DegradationKind::Pepper,
        DegradationKind::Speckle,
        DegradationKind::Poisson,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DegradationKind::GaussianNoise => "gaussian_noise",
            DegradationKind::GaussianBlur => "gaussian_blur",
            DegradationKind::Jpeg => "jpeg",
            DegradationKind::Pepper => "pepper",
            DegradationKind::Speckle => "speckle",
            DegradationKind::Poisson => "poisson",
        }
    }

    /// Legal parameter interval, inclusive flags for each end.
    pub fn param_range(self) -> (f64, f64, bool) {
        // (lo, hi, lo_inclusive); hi is always inclusive.
        match self {
            DegradationKind::GaussianNoise => (0.0, 50.0, false),
            DegradationKind::GaussianBlur => (0.1, 3.1, true),
            DegradationKind::Jpeg => (1.0, 100.0, true),
            DegradationKind::Pepper => (0.0, 0.5, false),
            DegradationKind::Speckle => (0.0, 1.0, false),
            DegradationKind::Poisson => (10.0, 255.0, true),
        }
    }

    /// Default training range, used by [`Sampler::default_for`].
    pub fn default_range(self) -> (f64, f64) {
        match self {
            DegradationKind::GaussianNoise => (0.0, 50.0),
            DegradationKind::GaussianBlur => (0.1, 3.1),
            DegradationKind::Jpeg => (20.0, 90.0),
            DegradationKind::Pepper => (0.05, 0.05),
            DegradationKind::Speckle => (0.3, 0.3),
            DegradationKind::Poisson => (20.0, 20.0),
        }
    }

    fn check(self, param: f64) -> Result<()> {
        let (lo, hi, lo_inc) = self.param_range();
        let ok = param <= hi && (param > lo || (lo_inc && param == lo));
        if !ok || (self == DegradationKind::Jpeg && param.fract() != 0.0) {
            let open = if lo_inc { "[" } else { "(" };
            return Err(Error::range(
                format!("{}.param", self.name()),
                param,
                format!("{open}{lo}, {hi}]"),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DegradationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DegradationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownName(format!("degradation kind `{s}`")))
    }
}

/// One concrete degradation: kind, parameter (σ, quality, density, peak or
/// speckle σ) and the seed of its random stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub param: f64,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(kind: DegradationKind, param: f64, seed: u64) -> Result<Self> {
        kind.check(param)?;
        Ok(DegradationSpec { kind, param, seed })
    }

    pub fn apply(&self, clean: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.kind.check(self.param)?;
        match self.kind {
            DegradationKind::GaussianNoise => add_gaussian_noise(clean, self.param, self.seed),
            DegradationKind::GaussianBlur => gaussian_blur(clean, BLUR_KERNEL, self.param),
            DegradationKind::Jpeg => jpeg_artifact(clean, self.param as u32),
            DegradationKind::Pepper => pepper(clean, self.param, self.seed),
            DegradationKind::Speckle => speckle(clean, self.param, self.seed),
            DegradationKind::Poisson => poisson(clean, self.param, self.seed),
        }
    }
}

/// Draws specs of one kind with a parameter uniform over `[lo, hi]`
/// (`(lo, hi]` when `lo` itself is illegal, integers for JPEG).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sampler {
    pub kind: DegradationKind,
    pub lo: f64,
    pub hi: f64,
}

impl Sampler {
    pub fn new(kind: DegradationKind, lo: f64, hi: f64) -> Result<Self> {
        if lo > hi {
            return Err(Error::invalid("sampler", format!("{kind}: {lo} > {hi}")));
        }
        let (klo, _, lo_inc) = kind.param_range();
        if lo != klo || lo_inc {
            kind.check(lo)?;
        }
        kind.check(hi)?;
        Ok(Sampler { kind, lo, hi })
    }

    pub fn fixed(kind: DegradationKind, param: f64) -> Result<Self> {
        Sampler::new(kind, param, param)
    }

    pub fn default_for(kind: DegradationKind) -> Self {
        let (lo, hi) = kind.default_range();
        Sampler::new(kind, lo, hi).expect("default ranges are legal")
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R, seed: u64) -> DegradationSpec {
        let u: f64 = rng.random();
        let param = if self.kind == DegradationKind::Jpeg {
            let (lo, hi) = (self.lo.ceil() as i64, self.hi.floor() as i64);
            (lo + (u * (hi - lo + 1) as f64).floor() as i64).min(hi) as f64
        } else {
            // 1 − u lies in (0, 1], keeping an open lower end open.
            self.lo + (self.hi - self.lo) * (1.0 - u)
        };
        DegradationSpec {
            kind: self.kind,
            param,
            seed,
        }
    }
}

/// Clean image, its degraded version and the `DegradationSpec` that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub clean: Tensor<f64>,
    pub degraded: Tensor<f64>,
    pub spec: DegradationSpec,
    /// Seed of the clean image.
    pub seed: u64,
}

/// One pair for `seed`: the clean image comes from `gen_clean(seed)`, the
/// kind is drawn uniformly from `mix`.
pub fn make_pair(seed: u64, mix: &[Sampler], size: usize) -> Result<ImagePair> {
    if mix.is_empty() {
        return Err(Error::invalid("make_pair_batch", "degradation mix is empty"));
    }
    let clean = gen_clean(seed, size)?;
    let mut rng = stream(seed, Purpose::DegradationChoice, 0);
    let sampler = mix[rng.random_range(0..mix.len())];
    let spec = sampler.sample(&mut rng, derive(seed, Purpose::Degradation, 0));
    let degraded = spec.apply(&clean)?;
    Ok(ImagePair {
        clean,
        degraded,
        spec,
        seed,
    })
}

pub fn make_pair_batch(seeds: &[u64], mix: &[Sampler], size: usize) -> Result<Vec<ImagePair>> {
    if mix.is_empty() {
        return Err(Error::invalid("make_pair_batch", "degradation mix is empty"));
    }
    seeds.iter().map(|&s| make_pair(s, mix, size)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in DegradationKind::ALL {
            assert_eq!(k.name().parse::<DegradationKind>().unwrap(), k);
        }
        assert!("rain".parse::<DegradationKind>().is_err());
    }

    #[test]
    fn parameter_ranges_are_enforced() {
        use DegradationKind::*;
        assert!(DegradationSpec::new(GaussianNoise, 0.0, 0).is_err());
        assert!(DegradationSpec::new(GaussianNoise, 50.0, 0).is_ok());
        assert!(DegradationSpec::new(GaussianBlur, 0.1, 0).is_ok());
        assert!(DegradationSpec::new(GaussianBlur, 3.2, 0).is_err());
        assert!(DegradationSpec::new(Jpeg, 50.5, 0).is_err());
        assert!(DegradationSpec::new(Pepper, 0.6, 0).is_err());
        assert!(DegradationSpec::new(Poisson, 9.0, 0).is_err());
        assert!(Sampler::new(GaussianNoise, 0.0, 50.0).is_ok());
        assert!(Sampler::new(GaussianBlur, 0.0, 1.0).is_err());
    }

    #[test]
    fn sampled_params_stay_in_range() {
        let mut rng = stream(0, Purpose::Test, 0);
        for k in DegradationKind::ALL {
            let s = Sampler::default_for(k);
            for _ in 0..200 {
                let spec = s.sample(&mut rng, 0);
                assert!(k.check(spec.param).is_ok(), "{k} {}", spec.param);
                assert!(spec.param >= s.lo && spec.param <= s.hi);
            }
        }
    }
}
