use ndarray::Array2;

use crate::audio::AudioBuffer;
use crate::autoencoder::Autoencoder;
use crate::error::{Error, Result};
use crate::latent::{stack_streams, LatentSequence, StackedLatent};
use crate::signal::{downmix, resample_sinc};

#[derive(Debug, Clone, PartialEq)]
pub enum PairTarget {
    Mono(LatentSequence),
    Stereo(StackedLatent),
}

impl PairTarget {
    pub fn frames(&self) -> usize {
        match self {
            PairTarget::Mono(z) => z.frames(),
            PairTarget::Stereo(z) => z.frames(),
        }
    }

    pub fn frame_rate_hz(&self) -> f64 {
        match self {
            PairTarget::Mono(z) => z.frame_rate_hz(),
            PairTarget::Stereo(z) => z.frame_rate_hz(),
        }
    }

    /// `C x T` for mono, `2C x T` (left channels first) for stereo.
    pub fn flat(&self) -> Array2<f32> {
        match self {
            PairTarget::Mono(z) => z.data().clone(),
            PairTarget::Stereo(z) => z.to_flat(),
        }
    }
}

/// Input latent and the latent the predictor should produce from it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub z_in: LatentSequence,
    pub z_tgt: PairTarget,
    pub source: Option<String>,
}

impl TrainingPair {
    pub fn new(z_in: LatentSequence, z_tgt: PairTarget) -> Result<Self> {
        if z_in.frames() != z_tgt.frames() {
            return Err(Error::Dimension(format!(
                "input has {} frames, target {}",
                z_in.frames(),
                z_tgt.frames()
            )));
        }
        if z_in.frame_rate_hz() != z_tgt.frame_rate_hz() {
            return Err(Error::Dimension("input and target frame rates differ".into()));
        }
        Ok(Self {
            z_in,
            z_tgt,
            source: None,
        })
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }
}

/// Simulates a half-bandwidth transmission: anti-aliased decimation by 2,
/// then sinc interpolation back to the original rate and length.
pub fn degrade_bandwidth(x: &AudioBuffer) -> Result<AudioBuffer> {
    let rate = x.sample_rate_hz();
    if rate % 2 != 0 {
        return Err(Error::invalid("sample_rate_hz", "bandwidth halving needs an even rate"));
    }
    let low = resample_sinc(x, rate / 2)?;
    Ok(resample_sinc(&low, rate)?.with_len(x.len()))
}

pub fn make_bwe_pair(ae: &dyn Autoencoder, x_fullband: &AudioBuffer) -> Result<TrainingPair> {
    x_fullband.require_mono("bandwidth extension")?;
    let x_in = degrade_bandwidth(x_fullband)?;
    let z_in = ae.encode(&x_in)?;
    let z_tgt = ae.encode(x_fullband)?;
    TrainingPair::new(z_in, PairTarget::Mono(z_tgt))
}

pub fn make_m2s_pair(ae: &dyn Autoencoder, x_stereo: &AudioBuffer) -> Result<TrainingPair> {
    x_stereo.require_stereo("mono-to-stereo")?;
    let mono = downmix(x_stereo)?;
    let z_in = ae.encode(&mono)?;
    let left = ae.encode(&x_stereo.channel_buffer(0))?;
    let right = ae.encode(&x_stereo.channel_buffer(1))?;
    TrainingPair::new(z_in, PairTarget::Stereo(stack_streams(&left, &right)?))
}
