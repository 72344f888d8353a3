use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{BlockCache, ConditioningEncoderSpec, ConvNextBlock};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::impl_params;
use crate::latent::StackedLatent;
use crate::nn::{GradMode, Init, Linear};

/// `log sigma` is clamped to this symmetric range.
pub const LOG_SIGMA_CLAMP: f64 = 8.0;

/// A global condition: the Gaussian it was drawn from and the draw itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVector {
    pub mu: Array1<f32>,
    pub sigma: Array1<f32>,
    pub sample: Array1<f32>,
}

impl ConditionVector {
    pub fn new(mu: Array1<f32>, sigma: Array1<f32>, sample: Array1<f32>) -> Result<Self> {
        let h = mu.len();
        if h == 0 {
            return Err(Error::invalid("condition_dim", "must be positive"));
        }
        if sigma.len() != h || sample.len() != h {
            return Err(Error::Dimension(format!(
                "condition parts have lengths {h}, {}, {}",
                sigma.len(),
                sample.len()
            )));
        }
        if sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("sigma", "must be positive and finite"));
        }
        if mu.iter().chain(sample.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("condition vector".into()));
        }
        Ok(Self { mu, sigma, sample })
    }

    /// A sample recorded against the standard normal prior.
    pub fn standard(sample: Array1<f32>) -> Result<Self> {
        let h = sample.len();
        Self::new(Array1::zeros(h), Array1::ones(h), sample)
    }

    /// `c = mu + sigma * eps`.
    pub fn reparameterize(mu: Array1<f32>, sigma: Array1<f32>, eps: ArrayView1<f32>) -> Result<Self> {
        if eps.len() != mu.len() {
            return Err(Error::Dimension(format!("eps has {} dims, expected {}", eps.len(), mu.len())));
        }
        let sample = &mu + &(&sigma * &eps);
        Self::new(mu, sigma, sample)
    }

    pub fn dim(&self) -> usize {
        self.sample.len()
    }
}

/// Draws `H` standard-normal values.
pub fn standard_normal<F: Float, R: Rng>(dim: usize, rng: &mut R) -> Array1<F> {
    Array1::from_shape_simple_fn(dim, || F::c(rng.sample::<f64, _>(StandardNormal)))
}

/// `c ~ N(0, I_H)`.
pub fn sample_prior<R: Rng>(dim: usize, rng: &mut R) -> Result<ConditionVector> {
    if dim == 0 {
        return Err(Error::invalid("condition_dim", "must be positive"));
    }
    ConditionVector::standard(standard_normal(dim, rng))
}

/// Diagonal Gaussian produced by the conditioning encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian<F: Float> {
    pub mu: Array1<F>,
    /// Clamped to `[-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP]`.
    pub log_sigma: Array1<F>,
    pub sigma: Array1<F>,
}

impl<F: Float> Gaussian<F> {
    pub fn sample(&self, eps: ArrayView1<F>) -> Array1<F> {
        &self.mu + &(&self.sigma * &eps)
    }

    /// Splits `dL/dc` into `(dL/dmu, dL/dlog_sigma)` for `c = mu + exp(log_sigma) * eps`.
    pub fn sample_backward(&self, eps: ArrayView1<F>, dc: ArrayView1<F>) -> (Array1<F>, Array1<F>) {
        (dc.to_owned(), &dc * &self.sigma * &eps)
    }
}

impl Gaussian<f32> {
    pub fn to_condition(&self, eps: ArrayView1<f32>) -> Result<ConditionVector> {
        ConditionVector::reparameterize(self.mu.clone(), self.sigma.clone(), eps)
    }

    /// The posterior mean as a deterministic condition.
    pub fn mean_condition(&self) -> Result<ConditionVector> {
        ConditionVector::new(self.mu.clone(), self.sigma.clone(), self.mu.clone())
    }
}

/// Variational conditioning encoder: stereo-stacked latent (flattened to
/// `2C` channels) -> projection -> blocks -> mean over time -> `mu`, `log sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEncoder<F: Float> {
    pub input_proj: Linear<F>,
    pub blocks: Vec<ConvNextBlock<F>>,
    pub mu_head: Linear<F>,
    pub log_sigma_head: Linear<F>,
    spec: ConditioningEncoderSpec,
}

impl_params!(ConditionEncoder { input_proj, blocks, mu_head, log_sigma_head });

pub struct ConditionEncoderCache<F: Float> {
    input: Array2<F>,
    block_caches: Vec<BlockCache<F>>,
    pooled: Array1<F>,
    frames: usize,
    raw_log_sigma: Array1<F>,
}

impl<F: Float> ConditionEncoder<F> {
    /// Heads start at zero, so an untrained encoder yields `mu = 0, sigma = 1`.
    pub fn new<R: Rng>(spec: &ConditioningEncoderSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let init = Init::TruncNormal(0.02);
        Ok(Self {
            input_proj: Linear::new(spec.input_channels, spec.hidden_dim, init, rng),
            blocks: (0..spec.num_blocks)
                .map(|_| ConvNextBlock::new(spec.hidden_dim, spec.expansion, spec.dw_kernel, None, rng))
                .collect(),
            mu_head: Linear::new(spec.hidden_dim, spec.output_dim, Init::Zeros, rng),
            log_sigma_head: Linear::new(spec.hidden_dim, spec.output_dim, Init::Zeros, rng),
            spec: spec.clone(),
        })
    }

    pub fn spec(&self) -> &ConditioningEncoderSpec {
        &self.spec
    }

    /// `z` is the flattened stacked latent, `2C x T`.
    pub fn forward(&self, z: ArrayView2<F>) -> Result<(Gaussian<F>, ConditionEncoderCache<F>)> {
        if z.nrows() != self.spec.input_channels {
            return Err(Error::Dimension(format!(
                "conditioning encoder expects {} channels, got {}",
                self.spec.input_channels,
                z.nrows()
            )));
        }
        let frames = z.ncols();
        if frames == 0 {
            return Err(Error::EmptyInput("cannot pool a latent with no frames".into()));
        }
        let mut h = self.input_proj.forward(z);
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(h.view(), None)?;
            block_caches.push(cache);
            h = next;
        }
        let pooled = h.mean_axis(Axis(1)).expect("non-empty");
        let mu = self.mu_head.forward_vec(pooled.view());
        let raw_log_sigma = self.log_sigma_head.forward_vec(pooled.view());
        let lim = F::c(LOG_SIGMA_CLAMP);
        let log_sigma = raw_log_sigma.mapv(|v| v.max(-lim).min(lim));
        let sigma = log_sigma.mapv(F::exp);
        Ok((
            Gaussian { mu, log_sigma, sigma },
            ConditionEncoderCache {
                input: z.to_owned(),
                block_caches,
                pooled,
                frames,
                raw_log_sigma,
            },
        ))
    }

    /// Back-propagates gradients w.r.t. `mu` and the clamped `log sigma`.
    pub fn backward(
        &mut self,
        cache: &ConditionEncoderCache<F>,
        dmu: ArrayView1<F>,
        dlog_sigma: ArrayView1<F>,
        mode: GradMode,
    ) -> Array2<F> {
        let lim = F::c(LOG_SIGMA_CLAMP);
        let dls = ndarray::Zip::from(&dlog_sigma)
            .and(&cache.raw_log_sigma)
            .map_collect(|&g, &r| if r.abs() > lim { F::zero() } else { g });
        let mut dpooled = self.mu_head.backward_vec(cache.pooled.view(), dmu, mode);
        dpooled += &self.log_sigma_head.backward_vec(cache.pooled.view(), dls.view(), mode);
        let scale = F::one() / F::c(cache.frames as f64);
        let mut dh = Array2::from_shape_fn((dpooled.len(), cache.frames), |(c, _)| dpooled[c] * scale);
        for (block, bc) in self.blocks.iter_mut().zip(&cache.block_caches).rev() {
            dh = block.backward(bc, dh.view(), mode).0;
        }
        self.input_proj.backward(cache.input.view(), dh.view(), mode)
    }
}

impl ConditionEncoder<f32> {
    pub fn encode(&self, z: &StackedLatent) -> Result<Gaussian<f32>> {
        Ok(self.forward(z.to_flat().view())?.0)
    }

    /// Reparameterized draw `c = mu + sigma * eps` with `eps` from `rng`.
    pub fn condition<R: Rng>(&self, z: &StackedLatent, rng: &mut R) -> Result<ConditionVector> {
        let g = self.encode(z)?;
        let eps = standard_normal::<f32, _>(self.spec.output_dim, rng);
        g.to_condition(eps.view())
    }
}
