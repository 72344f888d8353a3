//! Multichannel waveforms and WAV I/O.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

pub const SUPPORTED_RATES: &[u32] = &[
    4000, 8000, 11025, 16000, 22050, 24000, 32000, 44100, 48000, 88200, 96000,
];

/// `channels x samples` waveform; channel 0 is left for stereo.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    sample_rate_hz: u32,
    samples: Array2<f32>,
}

impl AudioBuffer {
    pub fn new(samples: Array2<f32>, sample_rate_hz: u32) -> Result<Self> {
        if !SUPPORTED_RATES.contains(&sample_rate_hz) {
            return Err(Error::invalid(
                "sample_rate_hz",
                format!("{sample_rate_hz} is not one of {SUPPORTED_RATES:?}"),
            ));
        }
        let ch = samples.nrows();
        if !(ch == 1 || ch == 2) {
            return Err(Error::invalid("channels", format!("must be 1 or 2, got {ch}")));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("audio samples".into()));
        }
        Ok(Self {
            sample_rate_hz,
            samples,
        })
    }

    pub fn mono(samples: Array1<f32>, sample_rate_hz: u32) -> Result<Self> {
        let n = samples.len();
        Self::new(samples.into_shape_with_order((1, n)).unwrap(), sample_rate_hz)
    }

    pub fn from_vec(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        Self::mono(Array1::from(samples), sample_rate_hz)
    }

    pub fn stereo(left: ArrayView1<f32>, right: ArrayView1<f32>, sample_rate_hz: u32) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::Dimension(format!(
                "left has {} samples, right has {}",
                left.len(),
                right.len()
            )));
        }
        let mut s = Array2::zeros((2, left.len()));
        s.row_mut(0).assign(&left);
        s.row_mut(1).assign(&right);
        Self::new(s, sample_rate_hz)
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn samples(&self) -> &Array2<f32> {
        &self.samples
    }

    pub fn channel(&self, i: usize) -> ArrayView1<'_, f32> {
        self.samples.index_axis(Axis(0), i)
    }

    pub fn channel_buffer(&self, i: usize) -> AudioBuffer {
        AudioBuffer {
            sample_rate_hz: self.sample_rate_hz,
            samples: self.samples.slice(ndarray::s![i..i + 1, ..]).to_owned(),
        }
    }

    /// Samples `[start, start + len)` of every channel.
    pub fn slice(&self, start: usize, len: usize) -> AudioBuffer {
        AudioBuffer {
            sample_rate_hz: self.sample_rate_hz,
            samples: self
                .samples
                .slice(ndarray::s![.., start..start + len])
                .to_owned(),
        }
    }

    /// Zero-pads or truncates every channel to `len` samples.
    pub fn with_len(&self, len: usize) -> AudioBuffer {
        let mut out = Array2::zeros((self.channels(), len));
        let n = len.min(self.len());
        out.slice_mut(ndarray::s![.., ..n])
            .assign(&self.samples.slice(ndarray::s![.., ..n]));
        AudioBuffer {
            sample_rate_hz: self.sample_rate_hz,
            samples: out,
        }
    }

    pub fn require_mono(&self, what: &str) -> Result<()> {
        if self.channels() != 1 {
            return Err(Error::invalid(what, "expects mono audio"));
        }
        Ok(())
    }

    pub fn require_stereo(&self, what: &str) -> Result<()> {
        if self.channels() != 2 {
            return Err(Error::invalid(what, "expects stereo audio"));
        }
        Ok(())
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let mut reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    let ch = spec.channels as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()?
        }
    };
    let frames = interleaved.len() / ch.max(1);
    let mut samples = Array2::zeros((ch, frames));
    for (i, v) in interleaved.into_iter().enumerate() {
        samples[[i % ch, i / ch]] = v;
    }
    AudioBuffer::new(samples, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer, format: WavFormat) -> Result<()> {
    let (bits, sample_format) = match format {
        WavFormat::Pcm16 => (16, hound::SampleFormat::Int),
        WavFormat::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: audio.channels() as u16,
        sample_rate: audio.sample_rate_hz,
        bits_per_sample: bits,
        sample_format,
    };
    let mut w = hound::WavWriter::create(path.as_ref(), spec)?;
    for t in 0..audio.len() {
        for c in 0..audio.channels() {
            let v = audio.samples[[c, t]];
            match format {
                WavFormat::Pcm16 => {
                    w.write_sample((v.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16)?
                }
                WavFormat::Float32 => w.write_sample(v)?,
            }
        }
    }
    w.finalize()?;
    Ok(())
}
