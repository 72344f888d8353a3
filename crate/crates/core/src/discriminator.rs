//! Latent discriminator: a stack of 2-D convolutions over the latent viewed
//! as a one-channel `C x T` image.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::impl_params;
use crate::nn::{leaky_relu, leaky_relu_backward, Conv2d, GradMode, Init};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorSpec {
    pub num_layers: usize,
    pub internal_channels: usize,
    /// Kernel of every layer but the last.
    pub kernel: (usize, usize),
    pub final_kernel: (usize, usize),
    pub padding: (usize, usize),
    pub leaky_slope: f64,
    pub init_std: f64,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            num_layers: 6,
            internal_channels: 256,
            kernel: (3, 7),
            final_kernel: (3, 3),
            padding: (1, 1),
            leaky_slope: 0.2,
            init_std: 0.02,
        }
    }
}

impl DiscriminatorSpec {
    pub fn with_channels(internal_channels: usize) -> Self {
        Self {
            internal_channels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 2 {
            return Err(Error::invalid("num_layers", "need at least 2 layers"));
        }
        if self.internal_channels == 0 {
            return Err(Error::invalid("internal_channels", "must be positive"));
        }
        if !(self.leaky_slope >= 0.0) {
            return Err(Error::invalid("leaky_slope", "must be non-negative"));
        }
        Ok(())
    }

    fn layer_kernel(&self, i: usize) -> (usize, usize) {
        if i + 1 == self.num_layers {
            self.final_kernel
        } else {
            self.kernel
        }
    }

    /// `(height, width)` after every layer, or a too-short error if any layer
    /// would produce an empty map.
    pub fn layer_shapes(&self, height: usize, width: usize) -> Result<Vec<(usize, usize)>> {
        let (ph, pw) = self.padding;
        let mut shapes = Vec::with_capacity(self.num_layers);
        let (mut h, mut w) = (height as isize, width as isize);
        for i in 0..self.num_layers {
            let (kh, kw) = self.layer_kernel(i);
            h = h + 2 * ph as isize - kh as isize + 1;
            w = w + 2 * pw as isize - kw as isize + 1;
            if h < 1 || w < 1 {
                return Err(Error::TooShort(format!(
                    "latent of {height}x{width} leaves a {h}x{w} map after discriminator layer {}",
                    i + 1
                )));
            }
            shapes.push((h as usize, w as usize));
        }
        Ok(shapes)
    }

    /// Smallest number of frames the discriminator accepts.
    pub fn min_frames(&self, height: usize) -> usize {
        (1..).find(|&w| self.layer_shapes(height, w).is_ok()).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<F: Float> {
    pub layers: Vec<Conv2d<F>>,
    spec: DiscriminatorSpec,
}

impl_params!(Discriminator { layers });

/// Per-layer feature maps: post-activation for every hidden layer, the raw
/// map for the last one (which is also the score map).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorOutput<F: Float> {
    pub features: Vec<Array3<F>>,
}

impl<F: Float> DiscriminatorOutput<F> {
    /// The final `C' x T'` map.
    pub fn score(&self) -> ArrayView2<'_, F> {
        self.features.last().expect("non-empty").index_axis(Axis(0), 0)
    }
}

pub struct DiscriminatorCache<F: Float> {
    cols: Vec<Array2<F>>,
    pre: Vec<Array3<F>>,
    input_hw: Vec<(usize, usize)>,
}

impl<F: Float> Discriminator<F> {
    pub fn new<R: Rng>(spec: &DiscriminatorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let ch = spec.internal_channels;
        let layers = (0..spec.num_layers)
            .map(|i| {
                let inp = if i == 0 { 1 } else { ch };
                let out = if i + 1 == spec.num_layers { 1 } else { ch };
                Conv2d::new(inp, out, spec.layer_kernel(i), spec.padding, Init::Normal(spec.init_std), rng)
            })
            .collect();
        Ok(Self {
            layers,
            spec: spec.clone(),
        })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn forward(&self, z: ArrayView2<F>) -> Result<(DiscriminatorOutput<F>, DiscriminatorCache<F>)> {
        let (c, t) = z.dim();
        self.spec.layer_shapes(c, t)?;
        let slope = F::c(self.spec.leaky_slope);
        let last = self.layers.len() - 1;
        let mut x = z.to_owned().insert_axis(Axis(0));
        let mut cache = DiscriminatorCache {
            cols: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            input_hw: Vec::with_capacity(self.layers.len()),
        };
        let mut features = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cache.input_hw.push((x.dim().1, x.dim().2));
            let (y, cols) = layer.forward(x.view());
            cache.cols.push(cols);
            let out = if i == last { y.clone() } else { leaky_relu(&y, slope) };
            cache.pre.push(y);
            features.push(out.clone());
            x = out;
        }
        Ok((DiscriminatorOutput { features }, cache))
    }

    /// `dfeatures[i]` is the loss gradient w.r.t. feature map `i` (score
    /// gradients go into the last entry). Returns the gradient w.r.t. the
    /// input latent.
    pub fn backward(
        &mut self,
        cache: &DiscriminatorCache<F>,
        dfeatures: &[Option<Array3<F>>],
        mode: GradMode,
        need_input: bool,
    ) -> Option<Array2<F>> {
        assert_eq!(dfeatures.len(), self.layers.len(), "one gradient slot per layer");
        let slope = F::c(self.spec.leaky_slope);
        let last = self.layers.len() - 1;
        let mut carry: Option<Array3<F>> = None;
        for i in (0..self.layers.len()).rev() {
            let mut d_out = match (carry.take(), &dfeatures[i]) {
                (Some(mut a), Some(b)) => {
                    a += b;
                    a
                }
                (Some(a), None) => a,
                (None, Some(b)) => b.clone(),
                (None, None) => {
                    // nothing flows below an unused top layer
                    continue;
                }
            };
            if i != last {
                d_out = leaky_relu_backward(&cache.pre[i], &d_out, slope);
            }
            let want_input = i > 0 || need_input;
            carry = self.layers[i].backward(&cache.cols[i], cache.input_hw[i], &d_out, mode, want_input);
        }
        carry.map(|d| d.index_axis_move(Axis(0), 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shape_law_reference_example() {
        let spec = DiscriminatorSpec::default();
        let shapes = spec.layer_shapes(64, 60).unwrap();
        let widths: Vec<_> = shapes.iter().map(|s| s.1).collect();
        assert_eq!(widths, vec![56, 52, 48, 44, 40, 40]);
        assert!(shapes.iter().all(|s| s.0 == 64));
        assert!(matches!(spec.layer_shapes(64, 7), Err(Error::TooShort(_))));
        assert_eq!(spec.min_frames(64), 21);
    }

    #[test]
    fn forward_shapes_and_short_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Discriminator::<f32>::new(&DiscriminatorSpec::with_channels(4), &mut rng).unwrap();
        let z = Array2::from_shape_simple_fn((6, 30), || rng.gen_range(-1.0..1.0));
        let (out, _) = d.forward(z.view()).unwrap();
        assert_eq!(out.features.len(), 6);
        assert_eq!(out.score().dim(), (6, 10));
        assert!(d.forward(Array2::zeros((6, 7)).view()).is_err());
    }
}
