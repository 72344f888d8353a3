//! Short-time Fourier transforms, mel filterbanks and the spectral distances
//! (multi-resolution STFT distance, log-mel distance).
//!
//! Framing: each signal is zero-padded by `fft_size / 2` on both sides and
//! framed every `hop` samples (`1 + len / hop` frames). The periodic Hann
//! window of `window_length` samples is centred inside the `fft_size` frame.
//! Magnitudes are computed in f64.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Floor applied to magnitudes before taking logs.
pub const MAG_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftResolution {
    pub fft_size: usize,
    pub hop: usize,
    pub window_length: usize,
}

impl StftResolution {
    pub fn new(fft_size: usize, hop: usize, window_length: usize) -> Self {
        Self {
            fft_size,
            hop,
            window_length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hop > 0 && self.hop < self.window_length && self.window_length <= self.fft_size) {
            return Err(Error::invalid(
                "resolutions",
                format!("need 0 < hop < window_length <= fft_size, got {self:?}"),
            ));
        }
        Ok(())
    }

    pub fn frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftDistanceConfig {
    pub resolutions: Vec<StftResolution>,
}

impl Default for StftDistanceConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![
                StftResolution::new(512, 50, 240),
                StftResolution::new(1024, 120, 600),
                StftResolution::new(2048, 240, 1200),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelDistanceConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub mel_bins: usize,
    pub fmin: f64,
    /// `None` means the Nyquist frequency.
    pub fmax: Option<f64>,
}

impl Default for MelDistanceConfig {
    fn default() -> Self {
        Self {
            fft_size: 2048,
            hop: 512,
            mel_bins: 128,
            fmin: 0.0,
            fmax: None,
        }
    }
}

/// Periodic Hann window of `win` samples zero-padded (centred) to `n`.
pub fn padded_hann(win: usize, n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n];
    let off = (n - win) / 2;
    for i in 0..win {
        w[off + i] = 0.5 - 0.5 * (2.0 * PI * i as f64 / win as f64).cos();
    }
    w
}

/// STFT for one resolution with cached FFT plans.
#[derive(Clone)]
pub struct Stft {
    res: StftResolution,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("res", &self.res).finish()
    }
}

/// One-sided complex spectrogram, `frames x (fft_size / 2 + 1)`.
pub struct Spectrum {
    pub bins: Array2<Complex<f64>>,
}

impl Spectrum {
    pub fn magnitude(&self) -> Array2<f64> {
        self.bins.mapv(|c| (c.re * c.re + c.im * c.im).sqrt())
    }
}

impl Stft {
    pub fn new(res: StftResolution) -> Result<Self> {
        res.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            res,
            window: padded_hann(res.window_length, res.fft_size),
            forward: planner.plan_fft_forward(res.fft_size),
            inverse: planner.plan_fft_inverse(res.fft_size),
        })
    }

    pub fn resolution(&self) -> StftResolution {
        self.res
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn bins(&self) -> usize {
        self.res.fft_size / 2 + 1
    }

    pub fn spectrum(&self, x: &[f32]) -> Spectrum {
        let n = self.res.fft_size;
        let pad = n / 2;
        let frames = self.res.frames(x.len());
        let nb = self.bins();
        let mut out = Array2::zeros((frames, nb));
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for f in 0..frames {
            let start = (f * self.res.hop) as isize - pad as isize;
            for (i, b) in buf.iter_mut().enumerate() {
                let j = start + i as isize;
                let v = if j >= 0 && (j as usize) < x.len() {
                    x[j as usize] as f64
                } else {
                    0.0
                };
                *b = Complex::new(v * self.window[i], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..nb {
                out[[f, k]] = buf[k];
            }
        }
        Spectrum { bins: out }
    }

    pub fn magnitude(&self, x: &[f32]) -> Array2<f64> {
        self.spectrum(x).magnitude()
    }

    /// Pulls a gradient w.r.t. the magnitudes of `spec` (computed from a
    /// signal of `len` samples) back to the signal.
    pub fn magnitude_backward(&self, spec: &Spectrum, grad_mag: &Array2<f64>, len: usize) -> Vec<f64> {
        let n = self.res.fft_size;
        let pad = n / 2;
        let nb = self.bins();
        let mut dx = vec![0.0; len];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        for f in 0..spec.bins.nrows() {
            buf.iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
            let mut any = false;
            for k in 0..nb {
                let x = spec.bins[[f, k]];
                let m = (x.re * x.re + x.im * x.im).sqrt();
                let g = grad_mag[[f, k]];
                if m > 0.0 && g != 0.0 {
                    buf[k] = x * (g / m);
                    any = true;
                }
            }
            if !any {
                continue;
            }
            // d|X_k|/dx_n summed over k equals Re(sum_k a_k e^{+2 pi i k n / N}).
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = (f * self.res.hop) as isize - pad as isize;
            for (i, b) in buf.iter().enumerate() {
                let j = start + i as isize;
                if j >= 0 && (j as usize) < len {
                    dx[j as usize] += b.re * self.window[i];
                }
            }
        }
        dx
    }
}

fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Spectral convergence `||A - B||_F / ||A||_F` (A is the reference).
pub fn spectral_convergence(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let num = frob(&(a - b));
    if num == 0.0 {
        return 0.0;
    }
    num / frob(a).max(1e-12)
}

/// Mean absolute difference of floored natural-log magnitudes.
pub fn log_magnitude_l1(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.len() as f64;
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x.max(MAG_FLOOR).ln() - y.max(MAG_FLOOR).ln()).abs())
        .sum::<f64>()
        / n
}

/// Multi-resolution STFT distance with cached transforms.
#[derive(Debug, Clone)]
pub struct MultiResolutionStft {
    transforms: Vec<Stft>,
}

/// Per-resolution breakdown of the STFT distance.
#[derive(Debug, Clone, PartialEq)]
pub struct StftTerms {
    pub spectral_convergence: Vec<f64>,
    pub log_magnitude: Vec<f64>,
}

impl StftTerms {
    pub fn total(&self) -> f64 {
        let n = self.spectral_convergence.len() as f64;
        self.spectral_convergence
            .iter()
            .zip(&self.log_magnitude)
            .map(|(a, b)| a + b)
            .sum::<f64>()
            / n
    }
}

impl MultiResolutionStft {
    pub fn new(cfg: &StftDistanceConfig) -> Result<Self> {
        if cfg.resolutions.is_empty() {
            return Err(Error::invalid("resolutions", "at least one resolution required"));
        }
        Ok(Self {
            transforms: cfg
                .resolutions
                .iter()
                .map(|&r| Stft::new(r))
                .collect::<Result<_>>()?,
        })
    }

    pub fn terms(&self, a: &[f32], b: &[f32]) -> Result<StftTerms> {
        if a.len() != b.len() {
            return Err(Error::Dimension(format!(
                "signals differ in length: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        let mut sc = Vec::new();
        let mut lm = Vec::new();
        for t in &self.transforms {
            let (ma, mb) = (t.magnitude(a), t.magnitude(b));
            sc.push(spectral_convergence(&ma, &mb));
            lm.push(log_magnitude_l1(&ma, &mb));
        }
        Ok(StftTerms {
            spectral_convergence: sc,
            log_magnitude: lm,
        })
    }

    pub fn distance(&self, a: &[f32], b: &[f32]) -> Result<f64> {
        Ok(self.terms(a, b)?.total())
    }

    /// Distance with `reference` as the SC denominator and its gradient with
    /// respect to `estimate`.
    pub fn loss_and_grad(&self, reference: &[f32], estimate: &[f32]) -> Result<(f64, Vec<f64>)> {
        if reference.len() != estimate.len() {
            return Err(Error::Dimension("loss signals differ in length".into()));
        }
        let nres = self.transforms.len() as f64;
        let mut total = 0.0;
        let mut grad = vec![0.0; estimate.len()];
        for t in &self.transforms {
            let ma = t.magnitude(reference);
            let spec_b = t.spectrum(estimate);
            let mb = spec_b.magnitude();
            let diff = &mb - &ma;
            let num = frob(&diff);
            let den = frob(&ma).max(1e-12);
            let n = ma.len() as f64;
            let mut lm = 0.0;
            let mut g = Array2::zeros(mb.raw_dim());
            for ((gi, &a), (&b, &d)) in g.iter_mut().zip(ma.iter()).zip(mb.iter().zip(diff.iter())) {
                let la = a.max(MAG_FLOOR).ln();
                let lb = b.max(MAG_FLOOR).ln();
                lm += (lb - la).abs();
                let mut v = 0.0;
                if num > 0.0 {
                    v += d / (num * den);
                }
                if b > MAG_FLOOR && lb != la {
                    v += (lb - la).signum() / (n * b);
                }
                *gi = v / nres;
            }
            total += (num / den + lm / n) / nres;
            let dx = t.magnitude_backward(&spec_b, &g, estimate.len());
            grad.iter_mut().zip(dx).for_each(|(a, b)| *a += b);
        }
        Ok((total, grad))
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank, `(fft_size / 2 + 1) x mel_bins`.
pub fn mel_filterbank(sample_rate: u32, cfg: &MelDistanceConfig) -> Result<Array2<f64>> {
    let nyquist = sample_rate as f64 / 2.0;
    let fmax = cfg.fmax.unwrap_or(nyquist);
    if !(cfg.fmin >= 0.0 && cfg.fmin < fmax && fmax <= nyquist) {
        return Err(Error::invalid("fmax", format!("need 0 <= fmin < fmax <= {nyquist}")));
    }
    if cfg.mel_bins == 0 {
        return Err(Error::invalid("mel_bins", "must be positive"));
    }
    let nb = cfg.fft_size / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(fmax));
    let pts: Vec<f64> = (0..cfg.mel_bins + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.mel_bins + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((nb, cfg.mel_bins));
    for m in 0..cfg.mel_bins {
        let (l, c, r) = (pts[m], pts[m + 1], pts[m + 2]);
        for k in 0..nb {
            let f = k as f64 * sample_rate as f64 / cfg.fft_size as f64;
            let w = ((f - l) / (c - l)).min((r - f) / (r - c));
            if w > 0.0 {
                fb[[k, m]] = w;
            }
        }
        if fb.column(m).sum() <= 0.0 {
            return Err(Error::invalid(
                "mel_bins",
                format!("mel filter {m} covers no FFT bin; reduce mel_bins or raise fft_size"),
            ));
        }
    }
    Ok(fb)
}

/// Log-mel L1 distance with a cached filterbank.
#[derive(Debug, Clone)]
pub struct MelDistance {
    stft: Stft,
    filterbank: Array2<f64>,
    sample_rate: u32,
}

impl MelDistance {
    pub fn new(sample_rate: u32, cfg: &MelDistanceConfig) -> Result<Self> {
        let res = StftResolution::new(cfg.fft_size, cfg.hop, cfg.fft_size);
        if !(cfg.hop > 0 && cfg.hop <= cfg.fft_size) {
            return Err(Error::invalid("hop", "need 0 < hop <= fft_size"));
        }
        let mut planner = FftPlanner::new();
        let stft = Stft {
            res,
            window: padded_hann(cfg.fft_size, cfg.fft_size),
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
        };
        Ok(Self {
            stft,
            filterbank: mel_filterbank(sample_rate, cfg)?,
            sample_rate,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn filterbank(&self) -> &Array2<f64> {
        &self.filterbank
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    pub fn mel_magnitude(&self, x: &[f32]) -> Array2<f64> {
        self.stft.magnitude(x).dot(&self.filterbank)
    }

    pub fn distance(&self, a: &[f32], b: &[f32]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::Dimension(format!(
                "signals differ in length: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        Ok(log_magnitude_l1(&self.mel_magnitude(a), &self.mel_magnitude(b)))
    }
}

fn check_pair(a: &AudioBuffer, b: &AudioBuffer) -> Result<()> {
    if a.len() != b.len() || a.channels() != b.channels() {
        return Err(Error::Dimension(format!(
            "audio shapes differ: {}x{} vs {}x{}",
            a.channels(),
            a.len(),
            b.channels(),
            b.len()
        )));
    }
    if a.sample_rate_hz() != b.sample_rate_hz() {
        return Err(Error::SampleRate {
            expected: a.sample_rate_hz(),
            got: b.sample_rate_hz(),
        });
    }
    Ok(())
}

fn per_channel(a: &AudioBuffer, b: &AudioBuffer, f: impl Fn(&[f32], &[f32]) -> Result<f64>) -> Result<f64> {
    check_pair(a, b)?;
    let mut acc = 0.0;
    for c in 0..a.channels() {
        let (x, y) = (a.channel(c).to_vec(), b.channel(c).to_vec());
        acc += f(&x, &y)?;
    }
    Ok(acc / a.channels() as f64)
}

/// Multi-resolution STFT distance averaged over channels; `a` is the reference.
pub fn stft_distance(a: &AudioBuffer, b: &AudioBuffer, cfg: &StftDistanceConfig) -> Result<f64> {
    let mr = MultiResolutionStft::new(cfg)?;
    per_channel(a, b, |x, y| mr.distance(x, y))
}

/// Log-mel distance averaged over channels.
pub fn mel_distance(a: &AudioBuffer, b: &AudioBuffer, cfg: &MelDistanceConfig) -> Result<f64> {
    let md = MelDistance::new(a.sample_rate_hz(), cfg)?;
    per_channel(a, b, |x, y| md.distance(x, y))
}

/// Cached metric pair for evaluating many clips at one sample rate.
#[derive(Debug, Clone)]
pub struct SpectralMetrics {
    pub stft: MultiResolutionStft,
    pub mel: MelDistance,
}

impl SpectralMetrics {
    pub fn new(sample_rate: u32, stft: &StftDistanceConfig, mel: &MelDistanceConfig) -> Result<Self> {
        Ok(Self {
            stft: MultiResolutionStft::new(stft)?,
            mel: MelDistance::new(sample_rate, mel)?,
        })
    }

    pub fn stft_distance(&self, a: &AudioBuffer, b: &AudioBuffer) -> Result<f64> {
        per_channel(a, b, |x, y| self.stft.distance(x, y))
    }

    pub fn mel_distance(&self, a: &AudioBuffer, b: &AudioBuffer) -> Result<f64> {
        if a.sample_rate_hz() != self.mel.sample_rate {
            return Err(Error::SampleRate {
                expected: self.mel.sample_rate,
                got: a.sample_rate_hz(),
            });
        }
        per_channel(a, b, |x, y| self.mel.distance(x, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn resolution_validation() {
        assert!(StftResolution::new(512, 240, 240).validate().is_err());
        assert!(StftResolution::new(512, 50, 600).validate().is_err());
        assert!(StftResolution::new(512, 50, 240).validate().is_ok());
    }

    #[test]
    fn identity_is_exactly_zero() {
        let x = noise(3000, 1);
        let mr = MultiResolutionStft::new(&StftDistanceConfig::default()).unwrap();
        assert_eq!(mr.distance(&x, &x).unwrap(), 0.0);
        let md = MelDistance::new(8000, &MelDistanceConfig::default()).unwrap();
        assert_eq!(md.distance(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        let mr = MultiResolutionStft::new(&StftDistanceConfig::default()).unwrap();
        assert!(mr.distance(&noise(100, 1), &noise(101, 1)).is_err());
    }

    #[test]
    fn stft_loss_gradient_matches_finite_differences() {
        let cfg = StftDistanceConfig {
            resolutions: vec![StftResolution::new(64, 16, 48), StftResolution::new(32, 8, 24)],
        };
        let mr = MultiResolutionStft::new(&cfg).unwrap();
        let reference = noise(200, 2);
        let est = noise(200, 3);
        let (_, g) = mr.loss_and_grad(&reference, &est).unwrap();
        // f32 inputs limit the finite-difference precision; use a wide step.
        let h = 1e-3f32;
        for &i in &[0usize, 17, 60, 111, 199] {
            let mut p = est.clone();
            p[i] += h;
            let mut m = est.clone();
            m[i] -= h;
            let fd = (mr.loss_and_grad(&reference, &p).unwrap().0 - mr.loss_and_grad(&reference, &m).unwrap().0)
                / (2.0 * h as f64);
            let rel = (fd - g[i]).abs() / (fd.abs().max(g[i].abs()).max(1e-6));
            assert!(rel < 2e-2, "sample {i}: fd {fd} analytic {}", g[i]);
        }
    }

    #[test]
    fn filterbank_rows_positive_at_44k() {
        let fb = mel_filterbank(44100, &MelDistanceConfig::default()).unwrap();
        assert_eq!(fb.dim(), (1025, 128));
        for m in 0..128 {
            assert!(fb.column(m).sum() > 0.0);
        }
    }
}
