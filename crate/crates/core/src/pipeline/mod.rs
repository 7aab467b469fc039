//! Two-stage training, inference and evaluation.
//!
//! Stage 1 trains the restorer on AdaSAM-masked inputs while the scorer
//! learns where masking hurts most. Conductance along the masked path then
//! ranks restorer layers, and stage 2 fine-tunes only the top layers on
//! whole inputs, with frozen extractor features fused in.

pub mod evaluate;
pub mod finetune;
pub mod metrics;
pub mod optim;
pub mod pretrain;
pub mod rank;
pub mod report;
pub mod texture;
pub mod twin;

pub use evaluate::{evaluate, latent_cka, EvalReport, MetricRecord};
pub use finetune::{apply_report, finetune, FinetuneConfig, FinetuneOutcome};
pub use metrics::{cka, psnr, ssim, Psnr};
pub use optim::{Adam, AdamConfig, Schedule};
pub use pretrain::{pretrain, Objective, PretrainConfig, PretrainMode, PretrainOutcome, Pretrainer, StepLog};
pub use rank::{mac_scores, MacConfig};
pub use texture::{train_extractor, ExtractorTraining};
pub use twin::{twin_mask_infer, whole_input_infer};

use crate::degrade::{DegradationKind, ImagePair};
use crate::error::{Error, Result};
use crate::nn::{Extractor, Network, Restorer, Rfr};
use crate::tensor::{Graph, Tensor};

/// Training precision.
pub type P = f32;

/// One training or test example in training precision.
#[derive(Clone, Debug)]
pub struct Sample {
    pub clean: Tensor<P>,
    pub degraded: Tensor<P>,
    pub kind: DegradationKind,
}

impl From<&ImagePair> for Sample {
    fn from(p: &ImagePair) -> Self {
        Sample {
            clean: p.clean.cast(),
            degraded: p.degraded.cast(),
            kind: p.spec.kind,
        }
    }
}

pub fn samples(pairs: &[ImagePair]) -> Vec<Sample> {
    pairs.iter().map(Sample::from).collect()
}

/// Restorer with optional feature fusion. Fusion needs both the fusion
/// layers and the frozen extractor.
#[derive(Clone, Debug)]
pub struct Model {
    pub restorer: Restorer<P>,
    pub fusion: Option<(Rfr<P>, Extractor<P>)>,
}

/// Output and latent features of one gradient-free pass.
pub struct Restored {
    pub output: Tensor<P>,
    pub latent: Tensor<P>,
}

impl Model {
    pub fn plain(restorer: Restorer<P>) -> Self {
        Model { restorer, fusion: None }
    }

    pub fn restore(&self, image: &Tensor<P>) -> Result<Restored> {
        let mut g = Graph::new();
        let rb = self.restorer.params().bind(&mut g, false);
        let x = g.leaf(image);
        let pass = match &self.fusion {
            Some((rfr, extractor)) => {
                let eb = extractor.params().bind(&mut g, false);
                let fb = rfr.params().bind(&mut g, false);
                let feats = extractor.forward(&mut g, &eb, x)?;
                let mut hook = rfr.hook(&fb, feats.pairs());
                self.restorer.forward(&mut g, &rb, x, Some(&mut hook))?
            }
            None => self.restorer.forward(&mut g, &rb, x, None)?,
        };
        Ok(Restored {
            output: g.tensor(pass.output),
            latent: g.tensor(pass.latent),
        })
    }
}

pub(crate) fn check_data(data: &[Sample], what: &'static str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid(what, "no samples"));
    }
    Ok(())
}
