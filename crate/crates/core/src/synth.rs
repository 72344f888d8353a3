//! Seeded synthetic "music-like" corpora: harmonic notes with envelopes plus
//! filtered noise, and linear amplitude panning for stereo.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub sample_rate_hz: u32,
    pub clip_seconds: f64,
    pub clips: usize,
    pub seed: u64,
    /// Fundamental range in Hz.
    pub f0_min: f64,
    pub f0_max: f64,
    /// Notes per clip (inclusive range).
    pub notes_min: usize,
    pub notes_max: usize,
    /// Peak level of a clip before any panning.
    pub peak: f64,
    /// Relative level of the noise component.
    pub noise_level: f64,
    /// Largest pan offset `a`; channel gains are `1 + a`, `1 - a`.
    pub max_pan: f64,
}

impl SynthConfig {
    pub fn tiny(clips: usize, seed: u64) -> Self {
        Self {
            sample_rate_hz: 8000,
            clip_seconds: 1.0,
            clips,
            seed,
            f0_min: 110.0,
            f0_max: 440.0,
            notes_min: 1,
            notes_max: 3,
            peak: 0.5,
            noise_level: 0.05,
            max_pan: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_seconds > 0.0) {
            return Err(Error::invalid("clip_seconds", "must be positive"));
        }
        if !(self.f0_min > 0.0 && self.f0_max >= self.f0_min && self.f0_max < self.sample_rate_hz as f64 / 2.0) {
            return Err(Error::invalid("f0_max", "need 0 < f0_min <= f0_max < Nyquist"));
        }
        if self.notes_min == 0 || self.notes_max < self.notes_min {
            return Err(Error::invalid("notes_max", "need 1 <= notes_min <= notes_max"));
        }
        if !(0.0..1.0).contains(&self.max_pan) {
            return Err(Error::invalid("max_pan", "must be in [0, 1)"));
        }
        Ok(())
    }

    fn samples(&self) -> usize {
        (self.clip_seconds * self.sample_rate_hz as f64).round() as usize
    }
}

fn render_clip(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let sr = cfg.sample_rate_hz as f64;
    let n = cfg.samples();
    let nyq = sr / 2.0;
    let mut out = vec![0.0f64; n];
    let notes = rng.gen_range(cfg.notes_min..=cfg.notes_max);
    for _ in 0..notes {
        let f0 = cfg.f0_min * (cfg.f0_max / cfg.f0_min).powf(rng.gen::<f64>());
        let onset = rng.gen_range(0.0..0.6) * n as f64;
        let attack = rng.gen_range(0.002..0.03) * sr;
        let decay = rng.gen_range(0.1..0.8) * sr;
        let tilt = rng.gen_range(0.6..1.6);
        let amp = rng.gen_range(0.4..1.0);
        let partials = (nyq / f0).floor() as usize;
        let phases: Vec<f64> = (0..partials).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        for (i, o) in out.iter_mut().enumerate() {
            let t = i as f64 - onset;
            if t < 0.0 {
                continue;
            }
            let env = (t / attack).min(1.0) * (-t / decay).exp();
            if env < 1e-4 {
                continue;
            }
            let mut v = 0.0;
            for (k, ph) in phases.iter().enumerate() {
                let h = (k + 1) as f64;
                v += (std::f64::consts::TAU * f0 * h * t / sr + ph).sin() / h.powf(tilt);
            }
            *o += amp * env * v;
        }
    }
    // one-pole high-passed noise bursts
    let burst_at = rng.gen_range(0.0..0.8) * n as f64;
    let burst_len = rng.gen_range(0.02..0.2) * sr;
    let mut prev = 0.0;
    for (i, o) in out.iter_mut().enumerate() {
        let w: f64 = rng.gen_range(-1.0..1.0);
        let hp = w - prev;
        prev = w;
        let t = i as f64 - burst_at;
        if t >= 0.0 {
            *o += cfg.noise_level * hp * (-t / burst_len).exp() * 4.0;
        }
        *o += cfg.noise_level * 0.05 * hp;
    }
    let peak = out.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-9);
    let gain = cfg.peak / peak;
    out.iter().map(|&v| (v * gain) as f32).collect()
}

/// Mono clips.
pub fn mono_corpus(cfg: &SynthConfig) -> Result<Vec<AudioBuffer>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.clips)
        .map(|_| AudioBuffer::from_vec(render_clip(cfg, &mut rng), cfg.sample_rate_hz))
        .collect()
}

/// A stereo clip together with its pan offset.
#[derive(Debug, Clone, PartialEq)]
pub struct PannedClip {
    pub audio: AudioBuffer,
    pub pan: f64,
}

/// Stereo clips `L = (1 + a) s`, `R = (1 - a) s`, so the mono downmix is
/// exactly the source `s`.
pub fn panned_corpus(cfg: &SynthConfig) -> Result<Vec<PannedClip>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.clips)
        .map(|_| {
            let s = Array1::from(render_clip(cfg, &mut rng));
            let a = rng.gen_range(-cfg.max_pan..=cfg.max_pan);
            let l = s.mapv(|v| v * (1.0 + a) as f32);
            let r = s.mapv(|v| v * (1.0 - a) as f32);
            Ok(PannedClip {
                audio: AudioBuffer::stereo(l.view(), r.view(), cfg.sample_rate_hz)?,
                pan: a,
            })
        })
        .collect()
}
