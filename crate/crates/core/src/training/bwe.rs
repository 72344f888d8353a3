use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_indices, clip_gradients, lr_at, round_bf16, Precision, StepLog, Task, TrainingConfig, TrainingPair};
use crate::checkpoint::{spec_hash, Checkpoint, OptimizerMeta, RngState};
use crate::discriminator::{Discriminator, DiscriminatorSpec};
use crate::error::{Error, Result};
use crate::network::{LatentPredictor, ModelSpec};
use crate::nn::{AdamW, GradMode, Params};
use crate::objectives::{compose, disc_loss, feature_match_loss, gen_adv_loss, rec_loss, LossTerms, LossWeights};

pub const BWE_KIND: &str = "bwe";

#[derive(Serialize, Deserialize)]
struct BweMeta {
    config: TrainingConfig,
    model: ModelSpec,
    discriminator: Option<DiscriminatorSpec>,
    step: u64,
    rng: RngState,
    opt_g: OptimizerMeta,
    opt_d: Option<OptimizerMeta>,
}

/// Generator `F` plus an optional latent discriminator `D`, updated
/// alternately: one `D` step on detached fakes, then one `F` step.
pub struct BweTrainer {
    pub config: TrainingConfig,
    pub generator: LatentPredictor<f32>,
    pub discriminator: Option<Discriminator<f32>>,
    opt_g: AdamW<f32>,
    opt_d: Option<AdamW<f32>>,
    step: u64,
    rng: ChaCha8Rng,
}

fn architecture_hash(model: &ModelSpec, disc: &Option<DiscriminatorSpec>) -> String {
    spec_hash(&(BWE_KIND, model, disc))
}

impl BweTrainer {
    /// Without a discriminator the adversarial weights must be zero
    /// (the L1-only trainer).
    pub fn new(config: TrainingConfig, model: &ModelSpec, disc: Option<&DiscriminatorSpec>) -> Result<Self> {
        config.validate()?;
        if config.task != Task::Bwe {
            return Err(Error::invalid("task", "bandwidth-extension trainer needs task = bwe"));
        }
        if model.conditioned || model.output_streams != 1 {
            return Err(Error::invalid("model", "bandwidth extension uses an unconditioned single-stream model"));
        }
        if disc.is_none() && (config.weights.w_adv != 0.0 || config.weights.w_fm != 0.0) {
            return Err(Error::Missing("adversarial weights are nonzero but no discriminator is configured".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = LatentPredictor::new(model, &mut rng)?;
        let discriminator = disc.map(|d| Discriminator::new(d, &mut rng)).transpose()?;
        let opt_g = AdamW::new(config.adam());
        let opt_d = discriminator.as_ref().map(|_| AdamW::new(config.adam()));
        Ok(Self {
            config,
            generator,
            discriminator,
            opt_g,
            opt_d,
            step: 0,
            rng,
        })
    }

    /// Updates performed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn architecture_hash(&self) -> String {
        architecture_hash(self.generator.spec(), &self.discriminator.as_ref().map(|d| d.spec().clone()))
    }

    fn prepare(&self, pair: &TrainingPair) -> Result<(Array2<f32>, Array2<f32>)> {
        let super::PairTarget::Mono(tgt) = &pair.z_tgt else {
            return Err(Error::StreamCount(2));
        };
        let mut z_in = pair.z_in.data().clone();
        let mut z_tgt = tgt.data().clone();
        if self.config.precision == Precision::Reduced {
            z_in.mapv_inplace(round_bf16);
            z_tgt.mapv_inplace(round_bf16);
        }
        Ok((z_in, z_tgt))
    }

    fn adversarial_active(&self, k: u64) -> bool {
        self.discriminator.is_some() && k > self.config.adversarial_start as u64
    }

    pub fn train_step(&mut self, batch: &[&TrainingPair]) -> Result<StepLog> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        let k = self.step + 1;
        let cfg = &self.config;
        let lr_g = lr_at(k, cfg.lr_main, cfg.warmup_main as u64);
        let lr_d = lr_at(k, cfg.lr_disc, cfg.warmup_disc as u64);
        let inv_b = 1.0 / batch.len() as f32;
        let data = batch.iter().map(|p| self.prepare(p)).collect::<Result<Vec<_>>>()?;

        let mut fakes = Vec::with_capacity(data.len());
        for (z_in, _) in &data {
            fakes.push(self.generator.forward(z_in.view(), None)?);
        }

        // discriminator update on detached fakes
        let mut disc_total = None;
        if let (Some(d), Some(opt_d)) = (self.discriminator.as_mut(), self.opt_d.as_mut()) {
            d.zero_grad();
            let n = d.spec().num_layers;
            let mut acc = 0.0f64;
            for ((_, z_tgt), (fake, _)) in data.iter().zip(&fakes) {
                let (out_r, cache_r) = d.forward(z_tgt.view())?;
                let (out_f, cache_f) = d.forward(fake.view())?;
                let (l, g_real, g_fake) = disc_loss(out_r.score(), out_f.score());
                acc += l as f64;
                for (cache, g) in [(cache_r, g_real), (cache_f, g_fake)] {
                    let mut slots: Vec<Option<Array3<f32>>> = vec![None; n];
                    slots[n - 1] = Some((g * inv_b).insert_axis(Axis(0)));
                    d.backward(&cache, &slots, GradMode::Params, false);
                }
            }
            let l = acc / batch.len() as f64;
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss("disc".into()));
            }
            clip_gradients(d, cfg.grad_clip);
            opt_d.step(d, lr_d)?;
            disc_total = Some(l);
        }

        // generator update against the freshly updated discriminator
        let active = self.adversarial_active(k);
        let w = self.config.weights;
        let weights = if active {
            w
        } else {
            LossWeights {
                w_adv: 0.0,
                w_fm: 0.0,
                ..w
            }
        };
        let needs_disc_grad = active && (w.w_adv != 0.0 || w.w_fm != 0.0);
        self.generator.zero_grad();
        let (mut rec_acc, mut adv_acc, mut fm_acc) = (0.0f64, 0.0f64, 0.0f64);
        for ((_, z_tgt), (fake, cache_g)) in data.iter().zip(&fakes) {
            let (rec, drec) = rec_loss(fake, z_tgt)?;
            rec_acc += rec as f64;
            let mut dy = drec * (w.w_rec as f32 * inv_b);
            if active {
                let d = self.discriminator.as_mut().unwrap();
                let (out_r, _) = d.forward(z_tgt.view())?;
                let (out_f, cache_f) = d.forward(fake.view())?;
                let (adv, dscore) = gen_adv_loss(out_f.score());
                let (fm, dfeat) = feature_match_loss(&out_r.features, &out_f.features, self.config.fm_denominator)?;
                adv_acc += adv as f64;
                fm_acc += fm as f64;
                if needs_disc_grad {
                    let wf = w.w_fm as f32 * inv_b;
                    let wa = w.w_adv as f32 * inv_b;
                    let mut slots: Vec<Option<Array3<f32>>> = dfeat.into_iter().map(|g| Some(g * wf)).collect();
                    let last = slots.len() - 1;
                    if let Some(s) = slots[last].as_mut() {
                        s.index_axis_mut(Axis(0), 0).scaled_add(wa, &dscore);
                    }
                    let dz = d.backward(&cache_f, &slots, GradMode::InputOnly, true).expect("input gradient requested");
                    dy += &dz;
                }
            }
            self.generator.backward(cache_g, dy.view(), GradMode::Params);
        }
        let b = batch.len() as f64;
        let terms = LossTerms {
            rec: Some(rec_acc / b),
            adv: active.then_some(adv_acc / b),
            fm: active.then_some(fm_acc / b),
            kl: None,
        };
        let mut report = compose(terms, weights)?;
        report.disc = disc_total;
        clip_gradients(&mut self.generator, self.config.grad_clip);
        self.opt_g.step(&mut self.generator, lr_g)?;
        self.step = k;
        Ok(StepLog {
            step: k,
            lr_main: lr_g,
            lr_disc: self.discriminator.as_ref().map(|_| lr_d),
            report,
        })
    }

    /// Runs `steps` updates; batch composition depends only on the seed and
    /// the step counter, so a resumed run sees the same batches.
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
        let mut c = Checkpoint::new(BWE_KIND, self.architecture_hash(), serde_json::Value::Null);
        c.push_params("generator", &self.generator);
        if let Some(d) = &self.discriminator {
            c.push_params("discriminator", d);
        }
        let opt_g = c.push_optimizer("opt_g", &self.opt_g);
        let opt_d = self.opt_d.as_ref().map(|o| c.push_optimizer("opt_d", o));
        let meta = BweMeta {
            config: self.config.clone(),
            model: self.generator.spec().clone(),
            discriminator: self.discriminator.as_ref().map(|d| d.spec().clone()),
            step: self.step,
            rng: RngState::capture(&self.rng),
            opt_g,
            opt_d,
        };
        c.meta = serde_json::to_value(meta).expect("meta serializes");
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.require_kind(BWE_KIND)?;
        let meta: BweMeta = serde_json::from_value(c.meta.clone()).map_err(|e| Error::format("meta", e.to_string()))?;
        c.require(BWE_KIND, &architecture_hash(&meta.model, &meta.discriminator))?;
        let mut t = Self::new(meta.config, &meta.model, meta.discriminator.as_ref())?;
        c.load_params("generator", &mut t.generator)?;
        if let Some(d) = t.discriminator.as_mut() {
            c.load_params("discriminator", d)?;
        }
        t.opt_g = c.load_optimizer("opt_g", &meta.opt_g, &t.generator)?;
        if let (Some(d), Some(m)) = (&t.discriminator, &meta.opt_d) {
            t.opt_d = Some(c.load_optimizer("opt_d", m, d)?);
        }
        t.step = meta.step;
        t.rng = meta.rng.restore()?;
        Ok(t)
    }

    /// Loads a checkpoint, refusing one whose architecture differs from the
    /// expected one.
    pub fn resume(c: &Checkpoint, model: &ModelSpec, disc: Option<&DiscriminatorSpec>) -> Result<Self> {
        c.require(BWE_KIND, &architecture_hash(model, &disc.cloned()))?;
        Self::from_checkpoint(c)
    }
}
