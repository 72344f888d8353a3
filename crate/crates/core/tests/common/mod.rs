//! Shared oracles for the integration tests: central finite differences and
//! direct (O(N^2)) DFT versions of the spectral metrics.

#![allow(dead_code)]

pub mod grad_suite;

use std::f64::consts::PI;

use ndarray::{Array2, ArrayD};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reencoder_core::nn::Params;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub probes: usize,
    pub max_rel: f64,
}

impl FdReport {
    pub fn merge(self, other: FdReport) -> FdReport {
        FdReport {
            probes: self.probes + other.probes,
            max_rel: self.max_rel.max(other.max_rel),
        }
    }

    pub fn ok(&self, probes: usize, tol: f64) -> bool {
        self.probes >= probes && self.max_rel < tol
    }
}

pub fn flat_grads(model: &mut dyn Params<f64>) -> Vec<f64> {
    model
        .named_grads()
        .into_iter()
        .flat_map(|(_, g): (String, ArrayD<f64>)| g.into_iter())
        .collect()
}

/// Adds `delta` to the scalar at flat `index` (visit order).
pub fn nudge(model: &mut dyn Params<f64>, index: usize, delta: f64) {
    let mut offset = 0;
    model.visit_mut("", &mut |_, mut v, _| {
        let n = v.len();
        if (offset..offset + n).contains(&index) {
            if let Some(x) = v.iter_mut().nth(index - offset) {
                *x += delta;
            }
        }
        offset += n;
    });
}

fn pick(range: std::ops::Range<usize>, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = range.end - range.start;
    sample(&mut rng, len, n.min(len)).into_iter().map(|i| range.start + i).collect()
}

/// Compares accumulated parameter gradients against central differences of
/// `loss` on `n` random scalars drawn from `range` of the flat parameter list.
pub fn check_params<M: Params<f64>>(
    model: &mut M,
    range: Option<std::ops::Range<usize>>,
    n: usize,
    seed: u64,
    loss: impl Fn(&M) -> f64,
) -> FdReport {
    let grads = flat_grads(model);
    let range = range.unwrap_or(0..grads.len());
    let mut max_rel: f64 = 0.0;
    let idx = pick(range, n, seed);
    for &i in &idx {
        nudge(model, i, FD_STEP);
        let up = loss(model);
        nudge(model, i, -2.0 * FD_STEP);
        let down = loss(model);
        nudge(model, i, FD_STEP);
        let numeric = (up - down) / (2.0 * FD_STEP);
        max_rel = max_rel.max(rel_err(grads[i], numeric));
    }
    FdReport {
        probes: idx.len(),
        max_rel,
    }
}

/// Same check for a gradient with respect to a flat input vector.
pub fn check_input(x: &[f64], grad: &[f64], n: usize, seed: u64, loss: impl Fn(&[f64]) -> f64) -> FdReport {
    assert_eq!(x.len(), grad.len());
    let mut max_rel: f64 = 0.0;
    let idx = pick(0..x.len(), n, seed);
    let mut buf = x.to_vec();
    for &i in &idx {
        buf[i] = x[i] + FD_STEP;
        let up = loss(&buf);
        buf[i] = x[i] - FD_STEP;
        let down = loss(&buf);
        buf[i] = x[i];
        max_rel = max_rel.max(rel_err(grad[i], (up - down) / (2.0 * FD_STEP)));
    }
    FdReport {
        probes: idx.len(),
        max_rel,
    }
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-scale..scale))
}

/// `sum(a * r)` — a linear probe that makes `r` the upstream gradient.
pub fn dot(a: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (a * r).sum()
}

/// Periodic Hann of `win` samples centred in `n`, from `sin^2`.
pub fn oracle_window(win: usize, n: usize) -> Vec<f64> {
    let off = (n - win) / 2;
    (0..n)
        .map(|i| {
            if i < off || i >= off + win {
                0.0
            } else {
                (PI * (i - off) as f64 / win as f64).sin().powi(2)
            }
        })
        .collect()
}

/// Direct-DFT magnitude spectrogram (`frames x bins`) with centred,
/// zero-padded frames: frame `f` starts at `f * hop - n / 2`.
pub fn oracle_magnitude(x: &[f32], n: usize, hop: usize, win: usize) -> Array2<f64> {
    let w = oracle_window(win, n);
    let frames = 1 + x.len() / hop;
    let bins = n / 2 + 1;
    let cos: Vec<f64> = (0..n).map(|j| (2.0 * PI * j as f64 / n as f64).cos()).collect();
    let sin: Vec<f64> = (0..n).map(|j| (2.0 * PI * j as f64 / n as f64).sin()).collect();
    let mut out = Array2::zeros((frames, bins));
    let mut frame = vec![0.0; n];
    for f in 0..frames {
        for (i, v) in frame.iter_mut().enumerate() {
            let j = (f * hop + i) as isize - (n / 2) as isize;
            *v = if j >= 0 && (j as usize) < x.len() {
                x[j as usize] as f64 * w[i]
            } else {
                0.0
            };
        }
        for k in 0..bins {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in frame.iter().enumerate() {
                if v != 0.0 {
                    let t = (k * i) % n;
                    re += v * cos[t];
                    im -= v * sin[t];
                }
            }
            out[[f, k]] = (re * re + im * im).sqrt();
        }
    }
    out
}

fn oracle_log_l1(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let floor = 1e-5f64;
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x.max(floor).ln() - y.max(floor).ln()).abs())
        .sum::<f64>()
        / a.len() as f64
}

/// Mean over resolutions of spectral convergence plus log-magnitude L1.
pub fn oracle_stft_distance(a: &[f32], b: &[f32], resolutions: &[(usize, usize, usize)]) -> f64 {
    let mut total = 0.0;
    for &(n, hop, win) in resolutions {
        let (ma, mb) = (oracle_magnitude(a, n, hop, win), oracle_magnitude(b, n, hop, win));
        let num: f64 = ma.iter().zip(mb.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let den: f64 = ma.iter().map(|x| x * x).sum::<f64>().sqrt();
        let sc = if num == 0.0 { 0.0 } else { num / den };
        total += sc + oracle_log_l1(&ma, &mb);
    }
    total / resolutions.len() as f64
}

/// HTK-mel triangular filter weight of FFT bin frequency `f` for filter `m`.
pub fn oracle_mel_weight(f: f64, m: usize, mel_bins: usize, fmin: f64, fmax: f64) -> f64 {
    let to_mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
    let to_hz = |mel: f64| 700.0 * (10f64.powf(mel / 2595.0) - 1.0);
    let (lo, hi) = (to_mel(fmin), to_mel(fmax));
    let edge = |i: usize| to_hz(lo + (hi - lo) * i as f64 / (mel_bins + 1) as f64);
    let (l, c, r) = (edge(m), edge(m + 1), edge(m + 2));
    if f <= l || f >= r {
        0.0
    } else if f <= c {
        (f - l) / (c - l)
    } else {
        (r - f) / (r - c)
    }
}

/// Log-mel L1 from direct DFTs and an explicitly built filterbank.
pub fn oracle_mel_distance(a: &[f32], b: &[f32], rate: u32, n: usize, hop: usize, mel_bins: usize) -> f64 {
    let fmax = rate as f64 / 2.0;
    let bins = n / 2 + 1;
    let fb = Array2::from_shape_fn((bins, mel_bins), |(k, m)| {
        oracle_mel_weight(k as f64 * rate as f64 / n as f64, m, mel_bins, 0.0, fmax)
    });
    let mel = |x: &[f32]| oracle_magnitude(x, n, hop, n).dot(&fb);
    oracle_log_l1(&mel(a), &mel(b))
}
