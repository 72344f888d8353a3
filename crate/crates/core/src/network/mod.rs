//! The latent predictor (a ConvNeXt-V2 stack between 1x1 projections), its
//! optional AdaLN conditioning, the variational conditioning encoder and
//! analytic cost accounting.

mod block;
mod conditioning;
mod cost;
mod predictor;
mod spec;

pub use block::{BlockCache, BlockNorm, ConvNextBlock};
pub use conditioning::{
    sample_prior, standard_normal, ConditionEncoder, ConditionEncoderCache, ConditionVector, Gaussian, LOG_SIGMA_CLAMP,
};
pub use cost::{count_flops, count_params, frames_for};
pub use predictor::{LatentOutput, LatentPredictor, PredictorCache};
pub use spec::{ConditioningEncoderSpec, ModelSpec, Variant};
