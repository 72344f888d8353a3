//! Run configurations and their named presets. Every config file uses the
//! same TOML grammar as the resolved config the commands log.

use serde::{Deserialize, Serialize};

use reencoder_core::autoencoder::{ToyVaeConfig, VaeTrainConfig};
use reencoder_core::discriminator::DiscriminatorSpec;
use reencoder_core::experiments::{CorpusSpec, ExperimentManifest};
use reencoder_core::network::{ConditioningEncoderSpec, ModelSpec};
use reencoder_core::synth::SynthConfig;
use reencoder_core::training::TrainingConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeRun {
    pub model: ToyVaeConfig,
    pub train: VaeTrainConfig,
    /// Used when no corpus directory is given.
    pub corpus: SynthConfig,
}

pub fn vae_preset(name: &str) -> Result<VaeRun, CliError> {
    match name {
        "tiny" => Ok(VaeRun {
            model: ToyVaeConfig::tiny(),
            train: VaeTrainConfig {
                steps: 600,
                ..VaeTrainConfig::default()
            },
            corpus: SynthConfig::tiny(256, 1000),
        }),
        "full-scale" => Ok(VaeRun {
            model: ToyVaeConfig::full_scale(),
            train: VaeTrainConfig {
                segment_samples: 44100,
                ..VaeTrainConfig::default()
            },
            corpus: SynthConfig {
                sample_rate_hz: 44100,
                f0_max: 880.0,
                ..SynthConfig::tiny(256, 1000)
            },
        }),
        other => Err(CliError::config("preset", format!("unknown autoencoder preset `{other}` (tiny, full-scale)"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    pub training: TrainingConfig,
    pub model: ModelSpec,
    pub discriminator: Option<DiscriminatorSpec>,
    pub encoder: Option<ConditioningEncoderSpec>,
    pub corpus: CorpusSpec,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
}

fn full_corpus() -> CorpusSpec {
    CorpusSpec {
        synth: SynthConfig {
            sample_rate_hz: 44100,
            clip_seconds: 4.0,
            f0_max: 880.0,
            ..SynthConfig::tiny(1024, 1)
        },
        test_clips: 64,
        test_seed: 2,
        train_dir: None,
        test_dir: None,
    }
}

fn from_manifest(m: ExperimentManifest, checkpoint_every: usize) -> TrainRun {
    TrainRun {
        training: m.training,
        model: m.model,
        discriminator: m.discriminator,
        encoder: m.encoder,
        corpus: m.corpus,
        checkpoint_every,
    }
}

/// `full-*` presets carry the full recipe (not meant for a laptop); `desk-*`
/// presets finish in minutes on the tiny autoencoder.
pub fn train_preset(name: &str) -> Result<TrainRun, CliError> {
    match name {
        "full-bwe" => Ok(TrainRun {
            training: TrainingConfig::full_bwe(),
            model: ModelSpec::small(64),
            discriminator: Some(DiscriminatorSpec::default()),
            encoder: None,
            corpus: full_corpus(),
            checkpoint_every: 10_000,
        }),
        "full-bwe-m" => Ok(TrainRun {
            model: ModelSpec::medium(64),
            ..train_preset("full-bwe")?
        }),
        "full-m2s" => Ok(TrainRun {
            training: TrainingConfig::full_m2s(),
            model: ModelSpec::medium(64).stereo(64),
            discriminator: None,
            encoder: Some(ConditioningEncoderSpec::new(64, 64)),
            corpus: full_corpus(),
            checkpoint_every: 10_000,
        }),
        "desk-bwe" => Ok(from_manifest(ExperimentManifest::desk_bwe(), 200)),
        "desk-m2s" => Ok(from_manifest(ExperimentManifest::desk_m2s(), 200)),
        other => Err(CliError::config(
            "preset",
            format!("unknown training preset `{other}` (full-bwe, full-bwe-m, full-m2s, desk-bwe, desk-m2s)"),
        )),
    }
}

pub fn experiment_preset(name: &str) -> Result<ExperimentManifest, CliError> {
    match name {
        "desk-bwe" => Ok(ExperimentManifest::desk_bwe()),
        "desk-m2s" => Ok(ExperimentManifest::desk_m2s()),
        other => Err(CliError::config(
            "preset",
            format!("unknown experiment preset `{other}` (desk-bwe, desk-m2s)"),
        )),
    }
}

/// Full-scale model presets for `flops`.
pub fn model_preset(name: &str, latent_channels: usize) -> Result<(ModelSpec, Option<ConditioningEncoderSpec>), CliError> {
    match name {
        "s" => Ok((ModelSpec::small(latent_channels), None)),
        "m" => Ok((ModelSpec::medium(latent_channels), None)),
        "m2s" => Ok((
            ModelSpec::medium(latent_channels).stereo(64),
            Some(ConditioningEncoderSpec::new(latent_channels, 64)),
        )),
        other => Err(CliError::config("model", format!("unknown model preset `{other}` (s, m, m2s)"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_preset_matches_recipe() {
        let p = train_preset("full-bwe").unwrap();
        assert_eq!(p.training.batch_size, 256);
        assert_eq!(p.training.chunk_seconds, 1.4);
        assert_eq!(p.training.total_steps, 250_000);
        assert_eq!(p.training.weights.w_rec, 10.0);
        let d = train_preset("desk-bwe").unwrap();
        assert!(d.training.total_steps <= 2000);
        assert_eq!(d.model.latent_channels_in, ToyVaeConfig::tiny().spec.latent_channels);
        assert!(train_preset("nope").is_err());
    }
}
