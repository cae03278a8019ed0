//! Optimization loop, evaluation driver and ablation runner.

mod ablate;
mod adam;
mod config;
mod eval;
mod fit;

pub use ablate::{ablate, ablation_table, AblationRow};
pub use adam::Adam;
pub use config::{AdamConfig, LossKind, RunConfig, TrainConfig};
pub use eval::{evaluate, evaluate_maps};
pub use fit::{sample_loss, select_best, train, train_with, EpochRecord, TrainOutcome, TrainTrace};

use crate::data::{Illumination, Normalization, Point, ScenePair};
use crate::tensor::Tensor4;

/// A scene ready for the model: normalized `(1, 3, H, W)` and `(1, 1, H, W)`
/// tensors plus its annotations in input pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub illumination: Illumination,
    pub rgb: Tensor4,
    pub thermal: Tensor4,
    pub points: Vec<Point>,
}

impl Sample {
    pub fn prepare(pair: &ScenePair, norm: &Normalization) -> Self {
        let (rgb, thermal) = norm.normalize(pair);
        Sample {
            id: pair.id.clone(),
            illumination: pair.illumination,
            rgb,
            thermal,
            points: pair.points.clone(),
        }
    }

    pub fn prepare_all(pairs: &[ScenePair], norm: &Normalization) -> Vec<Self> {
        pairs.iter().map(|p| Sample::prepare(p, norm)).collect()
    }
}
