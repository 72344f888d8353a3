use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use super::{BlockCache, ConditionVector, ConvNextBlock, ModelSpec};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::impl_params;
use crate::latent::{LatentSequence, StackedLatent};
use crate::nn::{GradMode, Init, Linear};

/// The latent module: 1x1 input projection, a stack of ConvNeXt-V2 blocks and
/// a 1x1 output projection emitting `output_streams * C` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPredictor<F: Float> {
    pub input_proj: Linear<F>,
    pub blocks: Vec<ConvNextBlock<F>>,
    pub output_proj: Linear<F>,
    spec: ModelSpec,
}

impl_params!(LatentPredictor { input_proj, blocks, output_proj });

pub struct PredictorCache<F: Float> {
    input: Array2<F>,
    block_caches: Vec<BlockCache<F>>,
    trunk_out: Array2<F>,
}

/// Result of running the predictor on a concrete latent.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentOutput {
    Mono(LatentSequence),
    Stereo(StackedLatent),
}

impl<F: Float> LatentPredictor<F> {
    pub fn new<R: Rng>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let init = Init::TruncNormal(0.02);
        let cond = spec.conditioned.then_some(spec.condition_dim);
        let input_proj = Linear::new(spec.latent_channels_in, spec.hidden_dim, init, rng);
        let blocks = (0..spec.num_blocks)
            .map(|_| ConvNextBlock::new(spec.hidden_dim, spec.expansion, spec.dw_kernel, cond, rng))
            .collect();
        let output_proj = Linear::new(spec.hidden_dim, spec.output_channels(), init, rng);
        Ok(Self {
            input_proj,
            blocks,
            output_proj,
            spec: spec.clone(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Maps a `C_in x T` latent to `(streams * C_out) x T`.
    pub fn forward(&self, z: ArrayView2<F>, cond: Option<ArrayView1<F>>) -> Result<(Array2<F>, PredictorCache<F>)> {
        if z.nrows() != self.spec.latent_channels_in {
            return Err(Error::Dimension(format!(
                "predictor expects {} latent channels, got {}",
                self.spec.latent_channels_in,
                z.nrows()
            )));
        }
        if z.ncols() == 0 {
            return Err(Error::EmptyInput("latent has no frames".into()));
        }
        match (self.spec.conditioned, cond.is_some()) {
            (true, false) => return Err(Error::invalid("condition", "conditioned model requires a condition vector")),
            (false, true) => return Err(Error::invalid("condition", "model is not conditioned")),
            _ => {}
        }
        let mut h = self.input_proj.forward(z);
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(h.view(), cond)?;
            block_caches.push(cache);
            h = next;
        }
        let y = self.output_proj.forward(h.view());
        Ok((
            y,
            PredictorCache {
                input: z.to_owned(),
                block_caches,
                trunk_out: h,
            },
        ))
    }

    /// Returns the input gradient and the condition gradient summed over blocks.
    pub fn backward(
        &mut self,
        cache: &PredictorCache<F>,
        dy: ArrayView2<F>,
        mode: GradMode,
    ) -> (Array2<F>, Option<Array1<F>>) {
        let mut dh = self.output_proj.backward(cache.trunk_out.view(), dy, mode);
        let mut dcond: Option<Array1<F>> = None;
        for (block, bc) in self.blocks.iter_mut().zip(&cache.block_caches).rev() {
            let (dx, dc) = block.backward(bc, dh.view(), mode);
            dh = dx;
            if let Some(dc) = dc {
                match &mut dcond {
                    Some(acc) => *acc += &dc,
                    None => dcond = Some(dc),
                }
            }
        }
        let dz = self.input_proj.backward(cache.input.view(), dh.view(), mode);
        (dz, dcond)
    }
}

impl LatentPredictor<f32> {
    /// Inference on a latent sequence; stereo models return a stacked latent.
    pub fn predict(&self, z: &LatentSequence, cond: Option<&ConditionVector>) -> Result<LatentOutput> {
        if let Some(c) = cond {
            if c.dim() != self.spec.condition_dim {
                return Err(Error::Dimension(format!(
                    "condition has {} dims, model expects {}",
                    c.dim(),
                    self.spec.condition_dim
                )));
            }
        }
        let (y, _) = self.forward(z.data().view(), cond.map(|c| c.sample.view()))?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predictor output".into()));
        }
        if self.spec.output_streams == 1 {
            Ok(LatentOutput::Mono(LatentSequence::new(y, z.frame_rate_hz())?))
        } else {
            Ok(LatentOutput::Stereo(StackedLatent::from_flat(
                y,
                self.spec.output_streams,
                z.frame_rate_hz(),
            )?))
        }
    }
}

impl LatentOutput {
    pub fn into_mono(self) -> Result<LatentSequence> {
        match self {
            LatentOutput::Mono(z) => Ok(z),
            LatentOutput::Stereo(s) => Err(Error::StreamCount(s.streams())),
        }
    }

    pub fn into_stereo(self) -> Result<StackedLatent> {
        match self {
            LatentOutput::Stereo(s) => Ok(s),
            LatentOutput::Mono(_) => Err(Error::StreamCount(1)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Params;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shape_contract_and_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = ModelSpec::custom(2, 32, 8);
        let mut model = LatentPredictor::<f32>::new(&spec, &mut rng).unwrap();
        let z = LatentSequence::new(Array2::from_shape_fn((8, 60), |(c, t)| ((c * 7 + t) as f32).sin()), 43.0).unwrap();
        let out = model.predict(&z, None).unwrap().into_mono().unwrap();
        assert_eq!((out.channels(), out.frames()), (8, 60));
        model.visit_mut("", &mut |_, mut v, _| v.fill(0.0));
        let out = model.predict(&z, None).unwrap().into_mono().unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stereo_output_and_condition_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = ModelSpec::custom(1, 16, 4).stereo(6);
        let model = LatentPredictor::<f32>::new(&spec, &mut rng).unwrap();
        let z = LatentSequence::zeros(4, 11, 43.0).unwrap();
        assert!(model.predict(&z, None).is_err());
        let c = ConditionVector::standard(Array1::ones(6)).unwrap();
        let out = model.predict(&z, Some(&c)).unwrap().into_stereo().unwrap();
        assert_eq!((out.streams(), out.channels(), out.frames()), (2, 4, 11));
        let wrong = ConditionVector::standard(Array1::ones(5)).unwrap();
        assert!(model.predict(&z, Some(&wrong)).is_err());
        let z_bad = LatentSequence::zeros(3, 11, 43.0).unwrap();
        assert!(model.predict(&z_bad, Some(&c)).is_err());
    }

    #[test]
    fn adaln_is_neutral_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let plain_spec = ModelSpec::custom(2, 16, 4);
        let cond_spec = plain_spec.clone().stereo(8);
        let plain = LatentPredictor::<f64>::new(&plain_spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let cond = LatentPredictor::<f64>::new(&cond_spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let z = Array2::from_shape_simple_fn((4, 9), || rng.gen_range(-1.0..1.0));
        let c = Array1::from_shape_simple_fn(8, || rng.gen_range(-3.0..3.0));
        // Compare trunks: the plain and adaptive models share every draw up to the norms.
        let mut h_plain = plain.input_proj.forward(z.view());
        let mut h_cond = cond.input_proj.forward(z.view());
        assert_eq!(h_plain, h_cond);
        for (bp, bc) in plain.blocks.iter().zip(&cond.blocks) {
            h_plain = bp.forward(h_plain.view(), None).unwrap().0;
            h_cond = bc.forward(h_cond.view(), Some(c.view())).unwrap().0;
        }
        let diff = (&h_plain - &h_cond).mapv(f64::abs).fold(0.0_f64, |a, &b| a.max(b));
        assert!(diff < 1e-12, "diff {diff}");
    }
}
