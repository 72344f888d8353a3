//! Interpolating the condition between a prior draw and the posterior mean of
//! the ground truth, tracking how well the output's channel balance follows
//! the reference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stats::{pearson, spearman_trend};
use crate::audio::AudioBuffer;
use crate::autoencoder::Autoencoder;
use crate::error::{Error, Result};
use crate::latent::{split_streams, stack_streams};
use crate::network::{sample_prior, ConditionVector};
use crate::signal::{channel_log_energy_ratio, downmix};
use crate::training::M2sModel;

/// One clip at one interpolation weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub clip_id: usize,
    pub lambda: f64,
    /// Log energy ratio of the reference's left and right channels.
    pub gt_ratio: f64,
    /// The same ratio for the decoded output.
    pub out_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaCorrelation {
    pub lambda: f64,
    pub pearson: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub clips: usize,
    pub correlations: Vec<LambdaCorrelation>,
    /// Spearman correlation of Pearson r against lambda and its one-sided
    /// p-value.
    pub trend_rho: f64,
    pub trend_p: f64,
    pub trend_exact: bool,
}

impl SweepSummary {
    pub fn pearson_at(&self, lambda: f64) -> Option<f64> {
        self.correlations
            .iter()
            .find(|c| (c.lambda - lambda).abs() < 1e-12)
            .map(|c| c.pearson)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub summary: SweepSummary,
}

/// The prior draw used for clip `clip_id`: stream `clip_id` of ChaCha8 seeded
/// with `seed`, so every evaluation of a clip sees the same `c0`.
pub fn clip_prior_draw(seed: u64, clip_id: usize, dim: usize) -> Result<ConditionVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(clip_id as u64);
    sample_prior(dim, &mut rng)
}

/// `c = (1 - lambda) c0 + lambda mu`, with `mu` the encoder's posterior mean
/// on the ground-truth stereo latent and `c0` one prior draw per clip (seeded
/// by `seed` and the clip index, shared across all lambdas).
pub fn interpolation_sweep(
    model: &M2sModel<f32>,
    vae: &dyn Autoencoder,
    clips: &[AudioBuffer],
    lambdas: &[f64],
    seed: u64,
) -> Result<SweepResult> {
    if clips.len() < 2 {
        return Err(Error::EmptyInput("the sweep needs at least two stereo clips".into()));
    }
    if lambdas.len() < 2 {
        return Err(Error::EmptyInput("the sweep needs at least two lambdas".into()));
    }
    let dim = model.predictor.spec().condition_dim;
    let mut points = Vec::with_capacity(clips.len() * lambdas.len());
    for (clip_id, x) in clips.iter().enumerate() {
        x.require_stereo("sweep clip")?;
        let gt_ratio = channel_log_energy_ratio(x)?;
        let z_in = vae.encode(&downmix(x)?)?;
        let lr = vae.encode_channels(x)?;
        let z_tgt = stack_streams(&lr[0], &lr[1])?;
        let mu = model.encoder.encode(&z_tgt)?.mu;
        let c0 = clip_prior_draw(seed, clip_id, dim)?.sample;
        for &lambda in lambdas {
            let c = ConditionVector::standard(&c0 * (1.0 - lambda) as f32 + &(&mu * lambda as f32))?;
            let y = model.predictor.predict(&z_in, Some(&c))?.into_stereo()?;
            let (zl, zr) = split_streams(&y)?;
            let l = vae.decode(&zl)?;
            let r = vae.decode(&zr)?;
            let out = AudioBuffer::stereo(l.channel(0), r.channel(0), l.sample_rate_hz())?;
            points.push(SweepPoint {
                clip_id,
                lambda,
                gt_ratio,
                out_ratio: channel_log_energy_ratio(&out)?,
            });
        }
    }
    let summary = summarize(&points, lambdas, clips.len())?;
    Ok(SweepResult { points, summary })
}

/// Per-lambda Pearson r across clips and the rank trend of r along lambda.
pub fn summarize(points: &[SweepPoint], lambdas: &[f64], clips: usize) -> Result<SweepSummary> {
    let mut correlations = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let (gt, out): (Vec<f64>, Vec<f64>) = points
            .iter()
            .filter(|p| p.lambda == lambda)
            .map(|p| (p.gt_ratio, p.out_ratio))
            .unzip();
        correlations.push(LambdaCorrelation {
            lambda,
            pearson: pearson(&gt, &out)?,
        });
    }
    let r: Vec<f64> = correlations.iter().map(|c| c.pearson).collect();
    let trend = spearman_trend(lambdas, &r)?;
    Ok(SweepSummary {
        clips,
        correlations,
        trend_rho: trend.rho,
        trend_p: trend.p_value,
        trend_exact: trend.exact,
    })
}

/// `clip_id,lambda,gt_ratio,out_ratio` rows for scatter plots.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("clip_id,lambda,gt_ratio,out_ratio\n");
    for p in points {
        s.push_str(&format!("{},{},{},{}\n", p.clip_id, p.lambda, p.gt_ratio, p.out_ratio));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_synthetic_points() {
        let lambdas = [0.0, 0.5, 1.0];
        let mut pts = Vec::new();
        for clip in 0..6 {
            let gt = clip as f64 - 2.5;
            for &l in &lambdas {
                // output follows the reference more closely as lambda grows
                let noise = if clip % 2 == 0 { 1.0 } else { -1.0 } * (1.0 - l) * 3.0;
                pts.push(SweepPoint {
                    clip_id: clip,
                    lambda: l,
                    gt_ratio: gt,
                    out_ratio: l * gt + noise,
                });
            }
        }
        let s = summarize(&pts, &lambdas, 6).unwrap();
        assert!(s.pearson_at(0.0).unwrap() < s.pearson_at(0.5).unwrap());
        assert!((s.pearson_at(1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((s.trend_rho - 1.0).abs() < 1e-12);
        assert!((s.trend_p - 1.0 / 6.0).abs() < 1e-12);
        assert!(sweep_csv(&pts).lines().count() == 19);
    }
}
