//! Harnesses that compare attribution metrics: the toy max networks,
//! layer-wise robustness curves, pruning at random initialisation,
//! attribution distributions and fine-tuning after pruning.

mod distribution;
mod finetune;
mod random_init;
mod robustness;
pub mod toy;

pub use distribution::{sv_distribution, UnitDistribution, QUANTILE_LEVELS};
pub use finetune::{finetune_comparison, FinetuneComparison, FinetuneRow};
pub use random_init::{leaky_mlp, random_init_pruning, RandomInitConfig, RandomInitRun};
pub use robustness::{auc, layerwise_robustness, removal_curve, AucReport, RobustnessCurve};

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Model, ModelBuilder};

/// Classifier families used by the command-line tools.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// Two ReLU hidden layers of 32 units.
    Mlp,
    /// Conv 32, conv 64 (3x3, batch norm, ReLU, 2x2 pool), dense 128, dense out.
    Cnn,
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Architecture::Mlp),
            "cnn" => Ok(Architecture::Cnn),
            _ => Err(Error::config(format!("unknown architecture '{s}' (expected mlp or cnn)"))),
        }
    }
}

/// A freshly initialised classifier for inputs of per-sample shape `input`.
pub fn build_architecture(arch: Architecture, input: &[usize], classes: usize, seed: u64) -> Result<Model> {
    match arch {
        Architecture::Mlp => ModelBuilder::new(input, seed)
            .flatten()
            .dense(32)
            .relu()
            .site()
            .dense(32)
            .relu()
            .site()
            .dense(classes)
            .build(),
        Architecture::Cnn => {
            let [c, h, w] = *input else {
                return Err(Error::config(format!("the CNN needs [channels, height, width] inputs, got {input:?}")));
            };
            crate::nn::small_cnn([c, h, w], (32, 64), 128, classes, seed)
        }
    }
}
