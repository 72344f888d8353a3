use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ToyVae, ToyVaeConfig};
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::float::Float;
use crate::network::standard_normal;
use crate::nn::{AdamW, AdamWConfig, GradMode, Params};
use crate::spectral::{MultiResolutionStft, StftDistanceConfig, StftResolution};

/// Recipe for fitting the stand-in VAE: waveform L1 + multi-resolution STFT
/// distance + KL to the standard normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Training crop length; clips shorter than this are used whole.
    pub segment_samples: usize,
    pub lr: f64,
    /// Each crop is scaled by a gain drawn uniformly from this range, so the
    /// latent geometry covers the levels seen after panning.
    pub gain_min: f64,
    pub gain_max: f64,
    pub w_wave: f64,
    pub w_stft: f64,
    pub kl_weight: f64,
    pub seed: u64,
    pub stft: StftDistanceConfig,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            segment_samples: 8000,
            lr: 1e-3,
            gain_min: 0.2,
            gain_max: 1.8,
            w_wave: 1.0,
            w_stft: 1.0,
            kl_weight: 1e-4,
            seed: 0,
            // coarser hops than the evaluation metric keep training cheap
            stft: StftDistanceConfig {
                resolutions: vec![
                    StftResolution::new(128, 32, 128),
                    StftResolution::new(256, 64, 256),
                    StftResolution::new(512, 128, 512),
                ],
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeStepLog {
    /// `w_wave * L1 + w_stft * STFT`, averaged over the batch.
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

pub struct VaeTrainOutput {
    pub model: ToyVae<f32>,
    pub trace: Vec<VaeStepLog>,
}

pub fn train_toy_vae(config: &ToyVaeConfig, train: &VaeTrainConfig, corpus: &[AudioBuffer]) -> Result<VaeTrainOutput> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("toy VAE corpus has no clips".into()));
    }
    if train.steps == 0 {
        return Err(Error::invalid("steps", "must be at least 1"));
    }
    if !(train.gain_min > 0.0 && train.gain_max >= train.gain_min) {
        return Err(Error::invalid("gain_min", "need 0 < gain_min <= gain_max"));
    }
    if train.batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be at least 1"));
    }
    for x in corpus {
        config.spec.check_input(x)?;
    }
    let mrstft = MultiResolutionStft::new(&train.stft)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut model = ToyVae::<f32>::new(config, &mut rng)?;
    let mut opt = AdamW::new(AdamWConfig::default());
    let mut trace = Vec::with_capacity(train.steps);
    let inv_b = 1.0 / train.batch_size as f64;
    for step in 0..train.steps {
        model.zero_grad();
        let mut log = VaeStepLog {
            reconstruction: 0.0,
            kl: 0.0,
            total: 0.0,
        };
        for _ in 0..train.batch_size {
            let clip = &corpus[rng.gen_range(0..corpus.len())];
            let seg = train.segment_samples.min(clip.len());
            let start = rng.gen_range(0..=clip.len() - seg);
            let gain = if train.gain_max > train.gain_min {
                rng.gen_range(train.gain_min..train.gain_max)
            } else {
                train.gain_min
            } as f32;
            let x = clip.samples().slice(s![.., start..start + seg]).mapv(|v| v * gain);

            let (mu, log_sigma, enc_cache) = model.encode_posterior(x.view());
            let eps: Array2<f32> = if config.spec.variational {
                let e = standard_normal::<f32, _>(mu.len(), &mut rng);
                e.into_shape_with_order(mu.raw_dim()).unwrap()
            } else {
                Array2::zeros(mu.raw_dim())
            };
            let sigma = log_sigma.mapv(f32::exp);
            let z = &mu + &(&sigma * &eps);
            let (y, dec_cache) = model.decode_forward(z.view());
            let y = y.slice(s![.., ..seg]).to_owned();

            let n = seg as f64;
            let xs = x.row(0).to_vec();
            let ys = y.row(0).to_vec();
            let l1 = xs.iter().zip(&ys).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / n;
            let (stft, gstft) = mrstft.loss_and_grad(&xs, &ys)?;
            let nz = mu.len() as f64;
            let kl = mu
                .iter()
                .zip(log_sigma.iter())
                .map(|(&m, &ls)| {
                    let (m, ls) = (m as f64, ls as f64);
                    0.5 * (m * m + (2.0 * ls).exp() - 1.0 - 2.0 * ls)
                })
                .sum::<f64>()
                / nz;
            let rec = train.w_wave * l1 + train.w_stft * stft;
            if !rec.is_finite() || !kl.is_finite() {
                return Err(Error::NonFiniteLoss(format!("toy VAE step {step}")));
            }
            log.reconstruction += rec * inv_b;
            log.kl += kl * inv_b;

            let hop_len = z.ncols() * model.hop();
            let mut dy = Array2::<f32>::zeros((1, hop_len));
            for (i, (a, b)) in xs.iter().zip(&ys).enumerate() {
                let g = train.w_wave * (b - a).sign0().f64() / n + train.w_stft * gstft[i];
                dy[[0, i]] = (g * inv_b) as f32;
            }
            let dz = model.decode_backward(&dec_cache, dy.view(), GradMode::Params);
            let kw = (train.kl_weight * inv_b / nz) as f32;
            let dmu = &dz + &(&mu * kw);
            let dls = &dz * &sigma * &eps + &sigma.mapv(|s| (s * s - 1.0) * kw);
            model.encode_backward(&enc_cache, dmu.view(), dls.view(), GradMode::Params);
        }
        log.total = log.reconstruction + train.kl_weight * log.kl;
        trace.push(log);
        opt.step(&mut model, train.lr)?;
    }
    Ok(VaeTrainOutput { model, trace })
}
