//! Waveform-domain DSP used at the pipeline edges.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Kaiser shape parameter of the resampling kernel.
pub const RESAMPLE_KAISER_BETA: f64 = 8.6;
/// Zero crossings of the sinc kernel on each side of the centre tap.
pub const RESAMPLE_ZERO_CROSSINGS: usize = 64;
/// Fraction of the lower Nyquist frequency kept by the resampler.
pub const RESAMPLE_ROLLOFF: f64 = 0.95;
/// Floor added to channel energies before taking ratios.
pub const ENERGY_EPS: f64 = 1e-12;

/// Default Kaiser shape of the band-split lowpass (about -140 dB stopband).
pub const BAND_SPLIT_KAISER_BETA: f64 = 14.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rectangular,
    Hann,
    Hamming,
    Blackman,
    Kaiser { beta: f64 },
}

impl Window {
    /// Symmetric window of length `n`.
    pub fn symmetric(self, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![1.0];
        }
        let d = (n - 1) as f64;
        if let Window::Kaiser { beta } = self {
            let i0b = bessel_i0(beta);
            return (0..n)
                .map(|i| {
                    let r = 2.0 * i as f64 / d - 1.0;
                    bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b
                })
                .collect();
        }
        (0..n)
            .map(|i| {
                let x = 2.0 * PI * i as f64 / d;
                match self {
                    Window::Rectangular => 1.0,
                    Window::Hann => 0.5 - 0.5 * x.cos(),
                    Window::Hamming => 0.54 - 0.46 * x.cos(),
                    Window::Blackman => 0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos(),
                    Window::Kaiser { .. } => unreachable!(),
                }
            })
            .collect()
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Polyphase windowed-sinc resampler for a fixed rational ratio.
#[derive(Debug, Clone)]
pub struct SincResampler {
    up: u64,
    down: u64,
    half: isize,
    /// `up` phases, each with `2 * half + 1` taps indexed by source offset.
    table: Vec<Vec<f64>>,
}

impl SincResampler {
    pub fn new(source_rate: u32, target_rate: u32) -> Result<Self> {
        if source_rate == 0 {
            return Err(Error::invalid("source_rate", "must be positive"));
        }
        if target_rate == 0 {
            return Err(Error::invalid("target_rate_hz", "must be positive"));
        }
        let g = gcd(source_rate as u64, target_rate as u64);
        let up = target_rate as u64 / g;
        let down = source_rate as u64 / g;
        // Cutoff relative to the source Nyquist.
        let fc = RESAMPLE_ROLLOFF * (target_rate as f64 / source_rate as f64).min(1.0);
        let width = RESAMPLE_ZERO_CROSSINGS as f64 / fc;
        let half = width.ceil() as isize + 1;
        let i0b = bessel_i0(RESAMPLE_KAISER_BETA);
        let table = (0..up)
            .map(|r| {
                let frac = r as f64 / up as f64;
                (-half..=half)
                    .map(|m| {
                        let u = frac - m as f64;
                        let x = u / width;
                        if x.abs() >= 1.0 {
                            0.0
                        } else {
                            let w = bessel_i0(RESAMPLE_KAISER_BETA * (1.0 - x * x).sqrt()) / i0b;
                            fc * sinc(fc * u) * w
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            up,
            down,
            half,
            table,
        })
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        ((input_len as u128 * self.up as u128 + self.down as u128 / 2) / self.down as u128) as usize
    }

    pub fn process(&self, x: ArrayView1<f32>) -> Array1<f32> {
        let n_out = self.output_len(x.len());
        let len = x.len() as isize;
        Array1::from_shape_fn(n_out, |n| {
            let num = n as u64 * self.down;
            let q = (num / self.up) as isize;
            let r = (num % self.up) as usize;
            let taps = &self.table[r];
            let lo = (q - self.half).max(0);
            let hi = (q + self.half).min(len - 1);
            let mut acc = 0.0f64;
            for k in lo..=hi {
                acc += x[k as usize] as f64 * taps[(k - q + self.half) as usize];
            }
            acc as f32
        })
    }
}

pub fn resample_sinc(x: &AudioBuffer, target_rate_hz: u32) -> Result<AudioBuffer> {
    if target_rate_hz == 0 {
        return Err(Error::invalid("target_rate_hz", "must be positive"));
    }
    if target_rate_hz == x.sample_rate_hz() {
        return Ok(x.clone());
    }
    let rs = SincResampler::new(x.sample_rate_hz(), target_rate_hz)?;
    let n_out = rs.output_len(x.len());
    let mut out = Array2::zeros((x.channels(), n_out));
    for c in 0..x.channels() {
        out.row_mut(c).assign(&rs.process(x.channel(c)));
    }
    AudioBuffer::new(out, target_rate_hz)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSplitConfig {
    pub cutoff_hz: f64,
    pub filter_taps: usize,
    pub window: Window,
}

impl BandSplitConfig {
    pub fn new(cutoff_hz: f64) -> Self {
        Self {
            cutoff_hz,
            filter_taps: 1023,
            window: Window::Kaiser {
                beta: BAND_SPLIT_KAISER_BETA,
            },
        }
    }

    /// Default split for a task that restores content above `rate / 4`, i.e.
    /// the Nyquist of the half-rate input.
    pub fn half_band(sample_rate_hz: u32) -> Self {
        Self::new(sample_rate_hz as f64 / 4.0)
    }

    fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        let nyquist = sample_rate_hz as f64 / 2.0;
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < nyquist) {
            return Err(Error::invalid(
                "cutoff_hz",
                format!("{} must lie in (0, {nyquist})", self.cutoff_hz),
            ));
        }
        if self.filter_taps % 2 == 0 || self.filter_taps == 0 {
            return Err(Error::invalid(
                "filter_taps",
                format!("must be odd, got {}", self.filter_taps),
            ));
        }
        Ok(())
    }

    /// Unit-DC-gain linear-phase lowpass taps.
    pub fn lowpass_taps(&self, sample_rate_hz: u32) -> Result<Vec<f64>> {
        self.validate(sample_rate_hz)?;
        let n = self.filter_taps;
        let fc = self.cutoff_hz / sample_rate_hz as f64;
        let mid = (n / 2) as f64;
        let w = self.window.symmetric(n);
        let mut taps: Vec<f64> = (0..n)
            .map(|k| w[k] * 2.0 * fc * sinc(2.0 * fc * (k as f64 - mid)))
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        Ok(taps)
    }
}

/// Zero-phase (delay-compensated) FIR filtering with zero padding.
fn filter_centered(x: ArrayView1<f32>, taps: &[f64]) -> Array1<f32> {
    let n = x.len() as isize;
    let mid = (taps.len() / 2) as isize;
    Array1::from_shape_fn(x.len(), |i| {
        let i = i as isize;
        let mut acc = 0.0f64;
        for (k, &h) in taps.iter().enumerate() {
            let j = i + mid - k as isize;
            if j >= 0 && j < n {
                acc += h * x[j as usize] as f64;
            }
        }
        acc as f32
    })
}

/// Splits into complementary low and high bands: `low + high == x`.
pub fn band_split(x: &AudioBuffer, cfg: &BandSplitConfig) -> Result<(AudioBuffer, AudioBuffer)> {
    let taps = cfg.lowpass_taps(x.sample_rate_hz())?;
    let mut low = Array2::zeros(x.samples().raw_dim());
    for c in 0..x.channels() {
        low.row_mut(c).assign(&filter_centered(x.channel(c), &taps));
    }
    let high = x.samples() - &low;
    Ok((
        AudioBuffer::new(low, x.sample_rate_hz())?,
        AudioBuffer::new(high, x.sample_rate_hz())?,
    ))
}

/// `mid = (L + R) / 2`, `side = (L - R) / 2`, returned as a two-channel buffer.
pub fn to_mid_side(stereo: &AudioBuffer) -> Result<AudioBuffer> {
    stereo.require_stereo("to_mid_side")?;
    let (l, r) = (stereo.channel(0), stereo.channel(1));
    let mid = (&l + &r) * 0.5;
    let side = (&l - &r) * 0.5;
    AudioBuffer::stereo(mid.view(), side.view(), stereo.sample_rate_hz())
}

pub fn from_mid_side(ms: &AudioBuffer) -> Result<AudioBuffer> {
    ms.require_stereo("from_mid_side")?;
    let (m, s) = (ms.channel(0), ms.channel(1));
    let l = &m + &s;
    let r = &m - &s;
    AudioBuffer::stereo(l.view(), r.view(), ms.sample_rate_hz())
}

/// `(L + R) / 2` as a mono buffer.
pub fn downmix(stereo: &AudioBuffer) -> Result<AudioBuffer> {
    stereo.require_stereo("downmix")?;
    let mono = (&stereo.channel(0) + &stereo.channel(1)) * 0.5;
    AudioBuffer::mono(mono, stereo.sample_rate_hz())
}

pub fn swap_channels(stereo: &AudioBuffer) -> Result<AudioBuffer> {
    stereo.require_stereo("swap_channels")?;
    AudioBuffer::stereo(stereo.channel(1), stereo.channel(0), stereo.sample_rate_hz())
}

/// `ln((E_left + eps) / (E_right + eps))` with `E` the sum of squares.
pub fn channel_log_energy_ratio(stereo: &AudioBuffer) -> Result<f64> {
    stereo.require_stereo("channel_log_energy_ratio")?;
    let e = |c: usize| -> f64 { stereo.channel(c).iter().map(|&v| v as f64 * v as f64).sum() };
    Ok(((e(0) + ENERGY_EPS) / (e(1) + ENERGY_EPS)).ln())
}

/// Fixed-length chunks every `hop_s`; a trailing partial chunk is dropped.
pub fn chunk_audio(x: &AudioBuffer, duration_s: f64, hop_s: f64) -> Result<Vec<AudioBuffer>> {
    if !(duration_s > 0.0) {
        return Err(Error::invalid("duration_s", "must be positive"));
    }
    if !(hop_s > 0.0) {
        return Err(Error::invalid("hop_s", "must be positive"));
    }
    let sr = x.sample_rate_hz() as f64;
    let len = (duration_s * sr).round() as usize;
    let hop = ((hop_s * sr).round() as usize).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start + len <= x.len() {
        out.push(x.slice(start, len));
        start += hop;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tone(freq: f64, rate: u32, secs: f64, amp: f64) -> AudioBuffer {
        let n = (rate as f64 * secs) as usize;
        AudioBuffer::from_vec(
            (0..n)
                .map(|i| (amp * (2.0 * PI * freq * i as f64 / rate as f64).sin()) as f32)
                .collect(),
            rate,
        )
        .unwrap()
    }

    fn energy(v: ArrayView1<f32>) -> f64 {
        v.iter().map(|&x| x as f64 * x as f64).sum()
    }

    #[test]
    fn resample_dc_invariance() {
        let x = AudioBuffer::from_vec(vec![0.5; 22050], 22050).unwrap();
        let y = resample_sinc(&x, 44100).unwrap();
        assert_eq!(y.len(), 44100);
        let edge = 400;
        for &v in y.channel(0).slice(ndarray::s![edge..y.len() - edge]).iter() {
            assert!((v - 0.5).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn resample_duration_and_errors() {
        let x = AudioBuffer::from_vec(vec![0.0; 1001], 44100).unwrap();
        let y = resample_sinc(&x, 22050).unwrap();
        assert!((y.len() as f64 - 500.5).abs() <= 1.0);
        assert!(resample_sinc(&x, 0).is_err());
    }

    #[test]
    fn resampler_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f32> = (0..2000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..2000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mix: Vec<f32> = a.iter().zip(&b).map(|(x, y)| 0.3 * x - 1.7 * y).collect();
        let r = |v: Vec<f32>| resample_sinc(&AudioBuffer::from_vec(v, 8000).unwrap(), 22050).unwrap();
        let (ra, rb, rm) = (r(a), r(b), r(mix));
        for i in 0..rm.len() {
            let lin = 0.3 * ra.channel(0)[i] - 1.7 * rb.channel(0)[i];
            assert!((rm.channel(0)[i] - lin).abs() < 1e-5);
        }
    }

    #[test]
    fn band_split_tone_placement() {
        let cfg = BandSplitConfig::new(11025.0);
        let edge = 200;
        for (freq, low_expected) in [(100.0, true), (15000.0, false)] {
            let x = tone(freq, 44100, 0.5, 1.0);
            let (low, high) = band_split(&x, &cfg).unwrap();
            let core = ndarray::s![edge..x.len() - edge];
            let e_low = energy(low.channel(0).slice(core));
            let e_high = energy(high.channel(0).slice(core));
            let e_x = energy(x.channel(0).slice(core));
            let (kept, leaked) = if low_expected { (e_low, e_high) } else { (e_high, e_low) };
            assert!(10.0 * (leaked / e_x).log10() < -50.0, "{freq} Hz leaks {leaked}");
            assert!((kept / e_x - 1.0).abs() < 1e-2);
        }
    }

    #[test]
    fn band_split_complementary_and_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = AudioBuffer::from_vec((0..20000).map(|_| rng.gen_range(-1.0..1.0)).collect(), 44100)
            .unwrap();
        let (low, high) = band_split(&x, &BandSplitConfig::new(11025.0)).unwrap();
        let sum = low.samples() + high.samples();
        let err = (&sum - x.samples()).mapv(f32::abs).fold(0.0f32, |m, &v| m.max(v));
        assert!(err < 1e-3);
        let ratio = (low.energy() + high.energy()) / x.energy();
        assert!((ratio - 1.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn band_split_rejects_bad_config() {
        let x = tone(100.0, 8000, 0.1, 1.0);
        assert!(band_split(&x, &BandSplitConfig::new(4000.0)).is_err());
        let mut cfg = BandSplitConfig::new(1000.0);
        cfg.filter_taps = 254;
        assert!(band_split(&x, &cfg).is_err());
    }

    #[test]
    fn mid_side() {
        let l = Array1::from_shape_fn(64, |i| (i as f32 * 0.3).sin());
        let same = AudioBuffer::stereo(l.view(), l.view(), 8000).unwrap();
        assert!(to_mid_side(&same).unwrap().channel(1).iter().all(|&v| v == 0.0));
        let neg = -&l;
        let anti = AudioBuffer::stereo(l.view(), neg.view(), 8000).unwrap();
        assert!(to_mid_side(&anti).unwrap().channel(0).iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = Array1::from_shape_fn(64, |_| rng.gen_range(-1.0f32..1.0));
        let x = AudioBuffer::stereo(l.view(), r.view(), 8000).unwrap();
        let ms = to_mid_side(&x).unwrap();
        let back = from_mid_side(&ms).unwrap();
        let err = (back.samples() - x.samples()).mapv(f32::abs).fold(0.0f32, |m, &v| m.max(v));
        assert!(err < 1e-6);
        let lhs = x.energy();
        let rhs = 2.0 * ms.energy();
        assert!((lhs - rhs).abs() / lhs < 1e-6);
        assert!(to_mid_side(&tone(1.0, 8000, 0.1, 1.0)).is_err());
    }

    #[test]
    fn log_energy_ratio() {
        let l = Array1::from_shape_fn(100, |i| (i as f32 * 0.1).sin());
        let x = AudioBuffer::stereo(l.view(), l.view(), 8000).unwrap();
        assert_eq!(channel_log_energy_ratio(&x).unwrap(), 0.0);
        let l2 = &l * 2.0;
        let x = AudioBuffer::stereo(l2.view(), l.view(), 8000).unwrap();
        assert!((channel_log_energy_ratio(&x).unwrap() - 4f64.ln()).abs() < 1e-6);
        let swapped = swap_channels(&x).unwrap();
        assert!(
            (channel_log_energy_ratio(&swapped).unwrap() + channel_log_energy_ratio(&x).unwrap())
                .abs()
                < 1e-9
        );
        let mut unit = Array1::zeros(100);
        unit[0] = 1.0;
        let silent = Array1::zeros(100);
        let x = AudioBuffer::stereo(unit.view(), silent.view(), 8000).unwrap();
        let r = channel_log_energy_ratio(&x).unwrap();
        assert!(r.is_finite() && (r - ((1.0 + 1e-12) / 1e-12f64).ln()).abs() < 1e-9);
        assert!((r - 27.63).abs() < 0.01);
        assert!(channel_log_energy_ratio(&tone(1.0, 8000, 0.1, 1.0)).is_err());
    }

    #[test]
    fn chunking() {
        let x = AudioBuffer::from_vec(vec![0.0; 441000], 44100).unwrap();
        assert_eq!(chunk_audio(&x, 4.0, 4.0).unwrap().len(), 2);
        let chunks = chunk_audio(&x, 1.4, 1.4).unwrap();
        assert!(chunks.iter().all(|c| c.len() == 61740));
        let short = AudioBuffer::from_vec(vec![0.0; 44100], 44100).unwrap();
        assert!(chunk_audio(&short, 4.0, 4.0).unwrap().is_empty());
        assert!(chunk_audio(&short, 0.0, 1.0).is_err());
    }
}
