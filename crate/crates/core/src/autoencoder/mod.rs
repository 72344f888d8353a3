//! The frozen autoencoder contract and a small trainable stand-in.
//!
//! Every pipeline talks to the autoencoder through [`Autoencoder`], so a
//! different model (or pre-computed latent files) can be substituted without
//! touching the rest of the system.

mod toy;
mod train;

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::latent::LatentSequence;

pub use toy::{patchify, unpatchify, ResUnit, ToyVae, ToyVaeConfig, VaeCache, TOY_VAE_KIND};
pub use train::{train_toy_vae, VaeTrainConfig, VaeTrainOutput};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderSpec {
    pub sample_rate_hz: u32,
    /// Waveform samples per latent frame.
    pub downsample_factor: usize,
    pub latent_channels: usize,
    pub variational: bool,
}

impl AutoencoderSpec {
    /// 44.1 kHz, hop 1024, 64 channels (about 43 latent frames per second).
    pub fn full_scale() -> Self {
        Self {
            sample_rate_hz: 44100,
            downsample_factor: 1024,
            latent_channels: 64,
            variational: true,
        }
    }

    /// 8 kHz, hop 64, 16 channels: the desk-scale default.
    pub fn tiny() -> Self {
        Self {
            sample_rate_hz: 8000,
            downsample_factor: 64,
            latent_channels: 16,
            variational: true,
        }
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.sample_rate_hz as f64 / self.downsample_factor as f64
    }

    /// `ceil(samples / downsample_factor)`.
    pub fn frames_for_samples(&self, samples: usize) -> usize {
        samples.div_ceil(self.downsample_factor)
    }

    pub fn validate(&self) -> Result<()> {
        if self.downsample_factor == 0 {
            return Err(Error::invalid("downsample_factor", "must be positive"));
        }
        if self.latent_channels == 0 {
            return Err(Error::invalid("latent_channels", "must be positive"));
        }
        if !crate::audio::SUPPORTED_RATES.contains(&self.sample_rate_hz) {
            return Err(Error::invalid("sample_rate_hz", "unsupported rate"));
        }
        Ok(())
    }

    /// Checks an input waveform against this spec (rate, mono, non-empty).
    pub fn check_input(&self, x: &AudioBuffer) -> Result<()> {
        if x.sample_rate_hz() != self.sample_rate_hz {
            return Err(Error::SampleRate {
                expected: self.sample_rate_hz,
                got: x.sample_rate_hz(),
            });
        }
        x.require_mono("encode")?;
        if x.is_empty() {
            return Err(Error::EmptyInput("cannot encode zero samples".into()));
        }
        Ok(())
    }
}

/// A frozen waveform autoencoder.
pub trait Autoencoder: Send + Sync {
    fn spec(&self) -> &AutoencoderSpec;

    /// Mono waveform to a `C x ceil(L / hop)` latent; deterministic.
    fn encode(&self, x: &AudioBuffer) -> Result<LatentSequence>;

    /// Latent to `T * hop` mono samples.
    fn decode(&self, z: &LatentSequence) -> Result<AudioBuffer>;

    /// Identity of the frozen weights.
    fn weights_hash(&self) -> String;

    /// Encodes every channel separately.
    fn encode_channels(&self, x: &AudioBuffer) -> Result<Vec<LatentSequence>> {
        (0..x.channels()).map(|i| self.encode(&x.channel_buffer(i))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_arithmetic() {
        let p = AutoencoderSpec::full_scale();
        assert!((p.frame_rate_hz() - 43.066).abs() < 1e-3);
        assert_eq!(p.frames_for_samples(44100), 44);
        assert_eq!(p.frames_for_samples(61740), 61);
        assert_eq!(p.frames_for_samples(176400), 173);
        assert_eq!(AutoencoderSpec::tiny().frame_rate_hz(), 125.0);
    }
}
