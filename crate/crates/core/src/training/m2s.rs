use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_indices, clip_gradients, lr_at, round_bf16, PairTarget, Precision, StepLog, Task, TrainingConfig, TrainingPair};
use crate::checkpoint::{spec_hash, Checkpoint, OptimizerMeta, RngState};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::impl_params;
use crate::network::{standard_normal, ConditionEncoder, ConditioningEncoderSpec, LatentPredictor, ModelSpec};
use crate::nn::{AdamW, GradMode, Params};
use crate::objectives::{compose, kl_loss_log_sigma, rec_loss, LossTerms, LossWeights};

pub const M2S_KIND: &str = "m2s";

/// The conditioned upmixer `F` and its conditioning encoder `G`, trained
/// jointly.
pub struct M2sModel<F: Float> {
    pub predictor: LatentPredictor<F>,
    pub encoder: ConditionEncoder<F>,
}

impl_params!(M2sModel { predictor, encoder });

impl<F: Float> M2sModel<F> {
    pub fn new<R: rand::Rng>(model: &ModelSpec, encoder: &ConditioningEncoderSpec, rng: &mut R) -> Result<Self> {
        if !model.conditioned || model.output_streams != 2 {
            return Err(Error::invalid("model", "mono-to-stereo needs a conditioned two-stream model"));
        }
        if encoder.output_dim != model.condition_dim {
            return Err(Error::Dimension(format!(
                "encoder emits {} dims, predictor expects {}",
                encoder.output_dim, model.condition_dim
            )));
        }
        if encoder.input_channels != model.output_channels() {
            return Err(Error::Dimension(format!(
                "encoder reads {} channels, stacked target has {}",
                encoder.input_channels,
                model.output_channels()
            )));
        }
        let predictor = LatentPredictor::new(model, rng)?;
        let encoder = ConditionEncoder::new(encoder, rng)?;
        Ok(Self { predictor, encoder })
    }

    /// Loss of one pair for a fixed noise draw `eps`; accumulates parameter
    /// gradients of `scale * (w_rec * rec + w_kl * kl)`. Returns the
    /// unweighted `(rec, kl)`.
    pub fn accumulate(
        &mut self,
        z_in: ArrayView2<F>,
        z_tgt_flat: ArrayView2<F>,
        eps: ArrayView1<F>,
        weights: &LossWeights,
        scale: F,
    ) -> Result<(F, F)> {
        let (g, enc_cache) = self.encoder.forward(z_tgt_flat)?;
        let c = g.sample(eps);
        let (y, pred_cache) = self.predictor.forward(z_in, Some(c.view()))?;
        let (rec, drec) = rec_loss(&y, &z_tgt_flat.to_owned())?;
        let (kl, dkl_mu, dkl_ls) = kl_loss_log_sigma(g.mu.view(), g.log_sigma.view());
        let dy = drec * (F::c(weights.w_rec) * scale);
        let (_, dc) = self.predictor.backward(&pred_cache, dy.view(), GradMode::Params);
        let dc = dc.expect("conditioned predictor returns a condition gradient");
        let (mut dmu, mut dls) = g.sample_backward(eps, dc.view());
        let wk = F::c(weights.w_kl) * scale;
        dmu.scaled_add(wk, &dkl_mu);
        dls.scaled_add(wk, &dkl_ls);
        self.encoder.backward(&enc_cache, dmu.view(), dls.view(), GradMode::Params);
        Ok((rec, kl))
    }

    /// Scalar objective without gradients (for probes and checks).
    pub fn objective(&self, z_in: ArrayView2<F>, z_tgt_flat: ArrayView2<F>, eps: ArrayView1<F>, weights: &LossWeights) -> Result<F> {
        let (g, _) = self.encoder.forward(z_tgt_flat)?;
        let c = g.sample(eps);
        let (y, _) = self.predictor.forward(z_in, Some(c.view()))?;
        let (rec, _) = rec_loss(&y, &z_tgt_flat.to_owned())?;
        let (kl, _, _) = kl_loss_log_sigma(g.mu.view(), g.log_sigma.view());
        Ok(F::c(weights.w_rec) * rec + F::c(weights.w_kl) * kl)
    }
}

#[derive(Serialize, Deserialize)]
struct M2sMeta {
    config: TrainingConfig,
    model: ModelSpec,
    encoder: ConditioningEncoderSpec,
    step: u64,
    rng: RngState,
    opt: OptimizerMeta,
}

fn architecture_hash(model: &ModelSpec, encoder: &ConditioningEncoderSpec) -> String {
    spec_hash(&(M2S_KIND, model, encoder))
}

pub struct M2sTrainer {
    pub config: TrainingConfig,
    pub model: M2sModel<f32>,
    opt: AdamW<f32>,
    step: u64,
    /// Source of the reparameterization noise.
    rng: ChaCha8Rng,
}

impl M2sTrainer {
    pub fn new(config: TrainingConfig, model: &ModelSpec, encoder: &ConditioningEncoderSpec) -> Result<Self> {
        config.validate()?;
        if config.task != Task::M2s {
            return Err(Error::invalid("task", "mono-to-stereo trainer needs task = m2s"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = M2sModel::new(model, encoder, &mut rng)?;
        let opt = AdamW::new(config.adam());
        Ok(Self {
            config,
            model,
            opt,
            step: 0,
            rng,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn architecture_hash(&self) -> String {
        architecture_hash(self.model.predictor.spec(), self.model.encoder.spec())
    }

    fn prepare(&self, pair: &TrainingPair) -> Result<(Array2<f32>, Array2<f32>)> {
        let PairTarget::Stereo(tgt) = &pair.z_tgt else {
            return Err(Error::StreamCount(1));
        };
        let mut z_in = pair.z_in.data().clone();
        let mut z_tgt = tgt.to_flat();
        if self.config.precision == Precision::Reduced {
            z_in.mapv_inplace(round_bf16);
            z_tgt.mapv_inplace(round_bf16);
        }
        Ok((z_in, z_tgt))
    }

    pub fn train_step(&mut self, batch: &[&TrainingPair]) -> Result<StepLog> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        let k = self.step + 1;
        let lr = lr_at(k, self.config.lr_main, self.config.warmup_main as u64);
        let weights = LossWeights {
            w_adv: 0.0,
            w_fm: 0.0,
            ..self.config.weights
        };
        let scale = 1.0 / batch.len() as f32;
        let dim = self.model.encoder.spec().output_dim;
        self.model.zero_grad();
        let (mut rec_acc, mut kl_acc) = (0.0f64, 0.0f64);
        for pair in batch {
            let (z_in, z_tgt) = self.prepare(pair)?;
            let eps: Array1<f32> = standard_normal(dim, &mut self.rng);
            let (rec, kl) = self.model.accumulate(z_in.view(), z_tgt.view(), eps.view(), &weights, scale)?;
            rec_acc += rec as f64;
            kl_acc += kl as f64;
        }
        let b = batch.len() as f64;
        let report = compose(
            LossTerms {
                rec: Some(rec_acc / b),
                kl: Some(kl_acc / b),
                ..Default::default()
            },
            weights,
        )?;
        clip_gradients(&mut self.model, self.config.grad_clip);
        self.opt.step(&mut self.model, lr)?;
        self.step = k;
        Ok(StepLog {
            step: k,
            lr_main: lr,
            lr_disc: None,
            report,
        })
    }

    pub fn fit(&mut self, pairs: &[TrainingPair], steps: usize) -> Result<Vec<StepLog>> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("no training pairs".into()));
        }
        let mut logs = Vec::with_capacity(steps);
        for _ in 0..steps {
            let idx = batch_indices(pairs.len(), self.config.batch_size, self.config.seed, self.step);
            let batch: Vec<&TrainingPair> = idx.iter().map(|&i| &pairs[i]).collect();
            logs.push(self.train_step(&batch)?);
        }
        Ok(logs)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(M2S_KIND, self.architecture_hash(), serde_json::Value::Null);
        c.push_params("model", &self.model);
        let opt = c.push_optimizer("opt", &self.opt);
        let meta = M2sMeta {
            config: self.config.clone(),
            model: self.model.predictor.spec().clone(),
            encoder: self.model.encoder.spec().clone(),
            step: self.step,
            rng: RngState::capture(&self.rng),
            opt,
        };
        c.meta = serde_json::to_value(meta).expect("meta serializes");
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.require_kind(M2S_KIND)?;
        let meta: M2sMeta = serde_json::from_value(c.meta.clone()).map_err(|e| Error::format("meta", e.to_string()))?;
        c.require(M2S_KIND, &architecture_hash(&meta.model, &meta.encoder))?;
        let mut t = Self::new(meta.config, &meta.model, &meta.encoder)?;
        c.load_params("model", &mut t.model)?;
        t.opt = c.load_optimizer("opt", &meta.opt, &t.model)?;
        t.step = meta.step;
        t.rng = meta.rng.restore()?;
        Ok(t)
    }

    pub fn resume(c: &Checkpoint, model: &ModelSpec, encoder: &ConditioningEncoderSpec) -> Result<Self> {
        c.require(M2S_KIND, &architecture_hash(model, encoder))?;
        Self::from_checkpoint(c)
    }
}
