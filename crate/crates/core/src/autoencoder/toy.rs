use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Autoencoder, AutoencoderSpec};
use crate::audio::AudioBuffer;
use crate::checkpoint::{spec_hash, Checkpoint};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::impl_params;
use crate::latent::LatentSequence;
use crate::network::LOG_SIGMA_CLAMP;
use crate::nn::{leaky_relu, leaky_relu_backward, params_hash, DepthwiseConv1d, GradMode, Init, Linear};

const RES_SLOPE: f64 = 0.1;

/// Architecture of the stand-in VAE.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyVaeConfig {
    pub spec: AutoencoderSpec,
    /// Channel width after each downsampling stage.
    pub widths: Vec<usize>,
    /// Downsampling factor of each stage; the product is the hop.
    pub strides: Vec<usize>,
    /// Residual units after every stage.
    pub res_units: usize,
    pub kernel: usize,
}

impl ToyVaeConfig {
    /// Three stride-4 stages (hop 64) at 8 kHz with 16 latent channels.
    pub fn tiny() -> Self {
        Self {
            spec: AutoencoderSpec::tiny(),
            widths: vec![32, 64, 128],
            strides: vec![4, 4, 4],
            res_units: 2,
            kernel: 7,
        }
    }

    /// Same shape contract as the reference autoencoder: five stride-4
    /// stages (hop 1024) at 44.1 kHz with 64 latent channels.
    pub fn full_scale() -> Self {
        Self {
            spec: AutoencoderSpec::full_scale(),
            widths: vec![16, 32, 64, 128, 256],
            strides: vec![4, 4, 4, 4, 4],
            res_units: 2,
            kernel: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.widths.is_empty() || self.widths.len() != self.strides.len() {
            return Err(Error::invalid("widths", "need one width per stride"));
        }
        if self.widths.iter().chain(&self.strides).any(|&v| v == 0) {
            return Err(Error::invalid("strides", "widths and strides must be positive"));
        }
        let hop: usize = self.strides.iter().product();
        if hop != self.spec.downsample_factor {
            return Err(Error::invalid(
                "strides",
                format!("product {hop} differs from downsample_factor {}", self.spec.downsample_factor),
            ));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::invalid("kernel", "must be odd"));
        }
        Ok(())
    }
}

/// Folds groups of `stride` consecutive samples into channels:
/// `out[c * stride + j, t] = x[c, t * stride + j]`.
pub fn patchify<F: Float>(x: ArrayView2<F>, stride: usize) -> Array2<F> {
    let (c, l) = x.dim();
    let t = l / stride;
    let mut out = Array2::zeros((c * stride, t));
    for ch in 0..c {
        for j in 0..stride {
            let mut row = out.row_mut(ch * stride + j);
            for (i, v) in row.iter_mut().enumerate() {
                *v = x[[ch, i * stride + j]];
            }
        }
    }
    out
}

/// Inverse (and adjoint) of [`patchify`].
pub fn unpatchify<F: Float>(y: ArrayView2<F>, stride: usize) -> Array2<F> {
    let (cs, t) = y.dim();
    let c = cs / stride;
    let mut out = Array2::zeros((c, t * stride));
    for ch in 0..c {
        for j in 0..stride {
            let row = y.row(ch * stride + j);
            for (i, &v) in row.iter().enumerate() {
                out[[ch, i * stride + j]] = v;
            }
        }
    }
    out
}

/// `x + pw2(leaky_relu(pw1(dw(x))))`
#[derive(Debug, Clone, PartialEq)]
pub struct ResUnit<F: Float> {
    pub dw: DepthwiseConv1d<F>,
    pub pw1: Linear<F>,
    pub pw2: Linear<F>,
}

impl_params!(ResUnit { dw, pw1, pw2 });

pub struct ResUnitCache<F: Float> {
    x: Array2<F>,
    d: Array2<F>,
    e: Array2<F>,
    a: Array2<F>,
}

impl<F: Float> ResUnit<F> {
    pub fn new<R: Rng>(width: usize, kernel: usize, rng: &mut R) -> Self {
        Self {
            dw: DepthwiseConv1d::new(width, kernel, Init::FanIn, rng),
            pw1: Linear::new(width, 2 * width, Init::FanIn, rng),
            pw2: Linear::new(2 * width, width, Init::FanIn, rng),
        }
    }

    pub fn forward(&self, x: ArrayView2<F>) -> (Array2<F>, ResUnitCache<F>) {
        let d = self.dw.forward(x);
        let e = self.pw1.forward(d.view());
        let a = leaky_relu(&e, F::c(RES_SLOPE));
        let mut y = self.pw2.forward(a.view());
        y += &x;
        (
            y,
            ResUnitCache {
                x: x.to_owned(),
                d,
                e,
                a,
            },
        )
    }

    pub fn backward(&mut self, c: &ResUnitCache<F>, dy: ArrayView2<F>, mode: GradMode) -> Array2<F> {
        let da = self.pw2.backward(c.a.view(), dy, mode);
        let de = leaky_relu_backward(&c.e, &da, F::c(RES_SLOPE));
        let dd = self.pw1.backward(c.d.view(), de.view(), mode);
        let mut dx = self.dw.backward(c.x.view(), dd.view(), mode);
        dx += &dy;
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStage<F: Float> {
    pub proj: Linear<F>,
    pub units: Vec<ResUnit<F>>,
}

impl_params!(EncoderStage { proj, units });

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStage<F: Float> {
    pub proj: Linear<F>,
    pub units: Vec<ResUnit<F>>,
}

impl_params!(DecoderStage { proj, units });

/// Strided encoder / decoder built from patchify projections and residual
/// units, with a diagonal-Gaussian bottleneck.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyVae<F: Float> {
    pub encoder: Vec<EncoderStage<F>>,
    pub head: Linear<F>,
    pub decoder_in: Linear<F>,
    pub decoder_in_units: Vec<ResUnit<F>>,
    pub decoder: Vec<DecoderStage<F>>,
    config: ToyVaeConfig,
}

impl_params!(ToyVae { encoder, head, decoder_in, decoder_in_units, decoder });

struct StageCache<F: Float> {
    input: Array2<F>,
    units: Vec<ResUnitCache<F>>,
}

pub struct VaeCache<F: Float> {
    enc: Vec<StageCache<F>>,
    head_in: Array2<F>,
    raw_log_sigma: Array2<F>,
}

pub struct DecoderCache<F: Float> {
    z: Array2<F>,
    in_units: Vec<ResUnitCache<F>>,
    stages: Vec<StageCache<F>>,
}

fn run_units<F: Float>(units: &[ResUnit<F>], mut h: Array2<F>) -> (Array2<F>, Vec<ResUnitCache<F>>) {
    let mut caches = Vec::with_capacity(units.len());
    for u in units {
        let (y, c) = u.forward(h.view());
        caches.push(c);
        h = y;
    }
    (h, caches)
}

fn back_units<F: Float>(units: &mut [ResUnit<F>], caches: &[ResUnitCache<F>], mut d: Array2<F>, mode: GradMode) -> Array2<F> {
    for (u, c) in units.iter_mut().zip(caches).rev() {
        d = u.backward(c, d.view(), mode);
    }
    d
}

impl<F: Float> ToyVae<F> {
    pub fn new<R: Rng>(config: &ToyVaeConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.spec.latent_channels;
        let k = config.kernel;
        let mut encoder = Vec::new();
        let mut prev = 1;
        for (&w, &st) in config.widths.iter().zip(&config.strides) {
            encoder.push(EncoderStage {
                proj: Linear::new(prev * st, w, Init::FanIn, rng),
                units: (0..config.res_units).map(|_| ResUnit::new(w, k, rng)).collect(),
            });
            prev = w;
        }
        let last = *config.widths.last().unwrap();
        let mut head = Linear::new(last, 2 * c, Init::FanIn, rng);
        // start with a narrow posterior so early decoder training is not drowned in noise
        head.bias.value.slice_mut(s![c..]).fill(F::c(-4.0));
        let decoder_in = Linear::new(c, last, Init::FanIn, rng);
        let decoder_in_units = (0..config.res_units).map(|_| ResUnit::new(last, k, rng)).collect();
        let mut decoder = Vec::new();
        for i in (0..config.widths.len()).rev() {
            let out = if i == 0 { 1 } else { config.widths[i - 1] };
            let units = if i == 0 {
                Vec::new()
            } else {
                (0..config.res_units).map(|_| ResUnit::new(out, k, rng)).collect()
            };
            decoder.push(DecoderStage {
                proj: Linear::new(config.widths[i], out * config.strides[i], Init::FanIn, rng),
                units,
            });
        }
        Ok(Self {
            encoder,
            head,
            decoder_in,
            decoder_in_units,
            decoder,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &ToyVaeConfig {
        &self.config
    }

    pub fn hop(&self) -> usize {
        self.config.spec.downsample_factor
    }

    /// Posterior parameters `(mu, clamped log sigma)` of a `1 x L` waveform,
    /// each `C x ceil(L / hop)`.
    pub fn encode_posterior(&self, x: ArrayView2<F>) -> (Array2<F>, Array2<F>, VaeCache<F>) {
        let hop = self.hop();
        let frames = x.ncols().div_ceil(hop);
        let mut h = Array2::zeros((1, frames * hop));
        h.slice_mut(s![.., ..x.ncols()]).assign(&x);
        let mut enc = Vec::with_capacity(self.encoder.len());
        for (stage, &st) in self.encoder.iter().zip(&self.config.strides) {
            let p = patchify(h.view(), st);
            let y = stage.proj.forward(p.view());
            let (out, units) = run_units(&stage.units, y);
            enc.push(StageCache { input: p, units });
            h = out;
        }
        let m = self.head.forward(h.view());
        let c = self.config.spec.latent_channels;
        let mu = m.slice(s![..c, ..]).to_owned();
        let raw = m.slice(s![c.., ..]).to_owned();
        let lim = F::c(LOG_SIGMA_CLAMP);
        let log_sigma = raw.mapv(|v| v.max(-lim).min(lim));
        (
            mu,
            log_sigma,
            VaeCache {
                enc,
                head_in: h,
                raw_log_sigma: raw,
            },
        )
    }

    pub fn encode_backward(&mut self, cache: &VaeCache<F>, dmu: ArrayView2<F>, dlog_sigma: ArrayView2<F>, mode: GradMode) {
        let c = self.config.spec.latent_channels;
        let lim = F::c(LOG_SIGMA_CLAMP);
        let mut dm = Array2::zeros((2 * c, dmu.ncols()));
        dm.slice_mut(s![..c, ..]).assign(&dmu);
        let mut lower = dm.slice_mut(s![c.., ..]);
        ndarray::Zip::from(&mut lower)
            .and(&dlog_sigma)
            .and(&cache.raw_log_sigma)
            .for_each(|o, &g, &r| *o = if r.abs() > lim { F::zero() } else { g });
        let mut dh = self.head.backward(cache.head_in.view(), dm.view(), mode);
        for (i, (stage, sc)) in self.encoder.iter_mut().zip(&cache.enc).enumerate().rev() {
            let dy = back_units(&mut stage.units, &sc.units, dh, mode);
            let dp = stage.proj.backward(sc.input.view(), dy.view(), mode);
            if i == 0 {
                break;
            }
            dh = unpatchify(dp.view(), self.config.strides[i]);
        }
    }

    /// `C x T` latent to `1 x (T * hop)` waveform.
    pub fn decode_forward(&self, z: ArrayView2<F>) -> (Array2<F>, DecoderCache<F>) {
        let h = self.decoder_in.forward(z);
        let (mut h, in_units) = run_units(&self.decoder_in_units, h);
        let mut stages = Vec::with_capacity(self.decoder.len());
        let n = self.config.strides.len();
        for (k, stage) in self.decoder.iter().enumerate() {
            let st = self.config.strides[n - 1 - k];
            let y = stage.proj.forward(h.view());
            let up = unpatchify(y.view(), st);
            let (out, units) = run_units(&stage.units, up);
            stages.push(StageCache { input: h, units });
            h = out;
        }
        (
            h,
            DecoderCache {
                z: z.to_owned(),
                in_units,
                stages,
            },
        )
    }

    /// Returns the gradient w.r.t. the latent.
    pub fn decode_backward(&mut self, cache: &DecoderCache<F>, dy: ArrayView2<F>, mode: GradMode) -> Array2<F> {
        let n = self.config.strides.len();
        let mut d = dy.to_owned();
        for (k, (stage, sc)) in self.decoder.iter_mut().zip(&cache.stages).enumerate().rev() {
            let st = self.config.strides[n - 1 - k];
            let dup = back_units(&mut stage.units, &sc.units, d, mode);
            let dyp = patchify(dup.view(), st);
            d = stage.proj.backward(sc.input.view(), dyp.view(), mode);
        }
        let d = back_units(&mut self.decoder_in_units, &cache.in_units, d, mode);
        self.decoder_in.backward(cache.z.view(), d.view(), mode)
    }
}

pub const TOY_VAE_KIND: &str = "toy-vae";

impl ToyVae<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(
            TOY_VAE_KIND,
            spec_hash(&self.config),
            serde_json::json!({ "config": self.config }),
        );
        c.push_params("vae", self);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.require_kind(TOY_VAE_KIND)?;
        let config: ToyVaeConfig = c.meta_field("config")?;
        c.require(TOY_VAE_KIND, &spec_hash(&config))?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut vae = Self::new(&config, &mut rng)?;
        c.load_params("vae", &mut vae)?;
        Ok(vae)
    }
}

impl Autoencoder for ToyVae<f32> {
    fn spec(&self) -> &AutoencoderSpec {
        &self.config.spec
    }

    fn encode(&self, x: &AudioBuffer) -> Result<LatentSequence> {
        self.config.spec.check_input(x)?;
        let (mu, _, _) = self.encode_posterior(x.samples().view());
        LatentSequence::new(mu, self.config.spec.frame_rate_hz())
    }

    fn decode(&self, z: &LatentSequence) -> Result<AudioBuffer> {
        if z.channels() != self.config.spec.latent_channels {
            return Err(Error::Dimension(format!(
                "autoencoder expects {} latent channels, got {}",
                self.config.spec.latent_channels,
                z.channels()
            )));
        }
        let (y, _) = self.decode_forward(z.data().view());
        let y: Array1<f32> = y.index_axis_move(Axis(0), 0);
        AudioBuffer::mono(y, self.config.spec.sample_rate_hz)
    }

    fn weights_hash(&self) -> String {
        params_hash(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn patchify_round_trip() {
        let x = Array2::from_shape_fn((2, 12), |(c, t)| (c * 100 + t) as f64);
        let p = patchify(x.view(), 4);
        assert_eq!(p.dim(), (8, 3));
        assert_eq!(p[[1, 2]], 9.0);
        assert_eq!(unpatchify(p.view(), 4), x);
    }

    #[test]
    fn shape_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let vae = ToyVae::<f32>::new(&ToyVaeConfig::tiny(), &mut rng).unwrap();
        let x = AudioBuffer::from_vec((0..1000).map(|i| (i as f32 * 0.01).sin()).collect(), 8000).unwrap();
        let z = vae.encode(&x).unwrap();
        assert_eq!((z.channels(), z.frames()), (16, 16));
        assert_eq!(vae.encode(&x).unwrap(), z);
        let y = vae.decode(&z).unwrap();
        assert_eq!(y.len(), 16 * 64);
        assert!(vae.encode(&AudioBuffer::from_vec(vec![], 8000).unwrap()).is_err());
        assert!(vae.encode(&AudioBuffer::from_vec(vec![0.0; 100], 16000).unwrap()).is_err());
        assert!(vae.decode(&LatentSequence::zeros(8, 4, 125.0).unwrap()).is_err());
    }

    #[test]
    fn full_scale_shapes() {
        let cfg = ToyVaeConfig::full_scale();
        cfg.validate().unwrap();
        assert_eq!(cfg.spec.frames_for_samples(44100), 44);
    }
}
