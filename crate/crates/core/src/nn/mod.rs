//! The networks: restorer, AdaSAM scorer, frozen feature extractor and the
//! feature fusion that joins the last two.

pub mod adasam;
pub mod extractor;
pub mod layers;
pub mod params;
pub mod restorer;
pub mod rfr;

pub use adasam::{AdaSam, AdaSamConfig};
pub use extractor::{Extractor, ExtractorPass, FeaturePair};
pub use params::{Bound, GradSet, GroupVars, ParamGroup, ParamSet};
pub use restorer::{EncoderHook, Restorer, RestorerConfig, RestorerPass};
pub use rfr::{blend, Rfr, RfrHook};

use crate::error::Result;
use crate::tensor::Real;

/// Shared surface of every network: a named parameter set with a module tag
/// and version recorded in checkpoints.
pub trait Network<T: Real> {
    const MODULE: &'static str;
    const VERSION: u32;

    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;

    /// Freezes or unfreezes the named groups; unknown names are rejected
    /// and leave every flag untouched.
    fn set_trainable<S: AsRef<str>>(&mut self, names: &[S], trainable: bool) -> Result<()> {
        self.params_mut().set_trainable(names, trainable)
    }

    fn group_names(&self) -> Vec<String> {
        self.params().names().map(str::to_string).collect()
    }

    fn num_params(&self) -> usize {
        self.params().num_params()
    }
}
