//! Task pairing, the generator/discriminator training loops, learning-rate
//! warmup and batch sampling.

mod bwe;
mod m2s;
mod pairs;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{grad_norm, AdamWConfig, Params};
use crate::objectives::{FmDenominator, LossReport, LossWeights};

pub use bwe::{BweTrainer, BWE_KIND};
pub use m2s::{M2sModel, M2sTrainer, M2S_KIND};
pub use pairs::{degrade_bandwidth, make_bwe_pair, make_m2s_pair, PairTarget, TrainingPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Bwe,
    M2s,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Fp32,
    /// Rounds the latents fed to the networks to bfloat16; arithmetic stays
    /// 32-bit.
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub task: Task,
    pub batch_size: usize,
    pub chunk_seconds: f64,
    pub total_steps: usize,
    pub lr_main: f64,
    pub lr_disc: f64,
    pub warmup_main: usize,
    pub warmup_disc: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub precision: Precision,
    pub weights: LossWeights,
    pub fm_denominator: FmDenominator,
    /// Generator updates before this step ignore the adversarial terms.
    pub adversarial_start: usize,
    /// Optional global gradient-norm clip.
    pub grad_clip: Option<f64>,
}

impl TrainingConfig {
    /// Full-scale bandwidth-extension recipe.
    pub fn full_bwe() -> Self {
        Self {
            task: Task::Bwe,
            batch_size: 256,
            chunk_seconds: 1.4,
            total_steps: 250_000,
            lr_main: 5e-4,
            lr_disc: 1e-4,
            warmup_main: 1000,
            warmup_disc: 20_000,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            precision: Precision::Fp32,
            weights: LossWeights::bwe(),
            fm_denominator: FmDenominator::Generated,
            adversarial_start: 0,
            grad_clip: None,
        }
    }

    /// Full-scale mono-to-stereo recipe.
    pub fn full_m2s() -> Self {
        Self {
            task: Task::M2s,
            chunk_seconds: 4.0,
            weights: LossWeights::m2s(),
            ..Self::full_bwe()
        }
    }

    /// Minutes-scale bandwidth extension on the tiny autoencoder.
    pub fn desk_bwe() -> Self {
        Self {
            batch_size: 8,
            chunk_seconds: 0.5,
            total_steps: 400,
            warmup_main: 20,
            warmup_disc: 80,
            ..Self::full_bwe()
        }
    }

    /// Minutes-scale mono-to-stereo on the tiny autoencoder.
    pub fn desk_m2s() -> Self {
        Self {
            batch_size: 16,
            chunk_seconds: 1.0,
            total_steps: 600,
            warmup_main: 20,
            warmup_disc: 20,
            ..Self::full_m2s()
        }
    }

    pub fn adam(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.chunk_seconds > 0.0) {
            return Err(Error::invalid("chunk_seconds", "must be positive"));
        }
        if self.warmup_main > self.total_steps {
            return Err(Error::invalid("warmup_main", "must not exceed total_steps"));
        }
        if self.warmup_disc > self.total_steps {
            return Err(Error::invalid("warmup_disc", "must not exceed total_steps"));
        }
        for (name, v) in [("lr_main", self.lr_main), ("lr_disc", self.lr_disc), ("weight_decay", self.weight_decay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be finite and non-negative"));
            }
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::invalid("beta1", "betas must be in [0, 1)"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::invalid("grad_clip", "must be positive"));
            }
        }
        self.weights.validate()
    }
}

/// `base * min(1, step / warmup)`; flat after warmup.
pub fn lr_at(step: u64, base_lr: f64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 {
        return base_lr;
    }
    base_lr * (step as f64 / warmup_steps as f64).min(1.0)
}

/// Indices of the batch used at `step` (0-based): a pure function of
/// `(n, batch, seed, step)`. Each epoch is a fresh seeded permutation, so
/// items are drawn without replacement within an epoch.
pub fn batch_indices(n: usize, batch: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for j in 0..batch as u64 {
        let global = step * batch as u64 + j;
        let epoch = global / n as u64;
        let pos = (global % n as u64) as usize;
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            cached = Some((epoch, epoch_permutation(n, seed, epoch)));
        }
        out.push(cached.as_ref().unwrap().1[pos]);
    }
    out
}

fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_add(1));
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng);
    p
}

/// Rounds to the nearest bfloat16 value (ties to even).
pub fn round_bf16(x: f32) -> f32 {
    if !x.is_finite() {
        return x;
    }
    let b = x.to_bits();
    let r = b.wrapping_add(0x7fff + ((b >> 16) & 1)) & 0xffff_0000;
    f32::from_bits(r)
}

/// One logged optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    /// 1-based index of the update.
    pub step: u64,
    pub lr_main: f64,
    pub lr_disc: Option<f64>,
    pub report: LossReport,
}

fn clip_gradients(model: &mut dyn Params<f32>, max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let n = grad_norm(model);
        if n > max {
            model.scale_grad((max / n) as f32);
        }
    }
}
