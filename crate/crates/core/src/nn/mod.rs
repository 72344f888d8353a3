//! Minimal layer library with hand-written backward passes.
//!
//! Activations are `channels x time` arrays (one sequence at a time). Each
//! layer exposes a pure `forward(&self, ..)` and a `backward(&mut self, ..)`
//! that accumulates parameter gradients into its [`Param`]s (unless asked for
//! input gradients only) and returns the gradient with respect to its input.

mod conv2d;
mod layers;
mod optim;

use ndarray::{Array, ArrayD, ArrayViewD, ArrayViewMutD, Dimension};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::float::Float;

pub use conv2d::Conv2d;
pub use layers::{
    gelu, gelu_backward, layer_norm, layer_norm_backward, leaky_relu, leaky_relu_backward,
    DepthwiseConv1d, Grn, Linear, NormStats,
};
pub use optim::{grad_norm, AdamW, AdamWConfig};

/// Whether a backward pass should accumulate parameter gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    Params,
    InputOnly,
}

impl GradMode {
    pub fn params(self) -> bool {
        self == GradMode::Params
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F: Float, D: Dimension> {
    pub value: Array<F, D>,
    pub grad: Array<F, D>,
}

impl<F: Float, D: Dimension> Param<F, D> {
    pub fn new(value: Array<F, D>) -> Self {
        let grad = Array::zeros(value.raw_dim());
        Self { value, grad }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Normal truncated at two standard deviations.
    TruncNormal(f64),
    Normal(f64),
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanIn,
}

impl Init {
    pub fn sample<F: Float, D: Dimension, R: Rng>(self, shape: D, fan_in: usize, rng: &mut R) -> Array<F, D> {
        match self {
            Init::Zeros => Array::zeros(shape),
            Init::Normal(std) => {
                let n = Normal::new(0.0, std).unwrap();
                Array::from_shape_simple_fn(shape, || F::c(n.sample(rng)))
            }
            Init::TruncNormal(std) => {
                let n = Normal::new(0.0, std).unwrap();
                Array::from_shape_simple_fn(shape, || loop {
                    let v: f64 = n.sample(rng);
                    if v.abs() <= 2.0 * std {
                        break F::c(v);
                    }
                })
            }
            Init::FanIn => {
                let b = 1.0 / (fan_in.max(1) as f64).sqrt();
                Array::from_shape_simple_fn(shape, || F::c(rng.gen_range(-b..b)))
            }
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything holding named trainable arrays.
pub trait Params<F: Float> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ArrayViewD<'_, F>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>, ArrayViewMutD<'_, F>));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, v| n += v.len());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, _, mut g| g.fill(F::zero()));
    }

    fn scale_grad(&mut self, s: F) {
        self.visit_mut("", &mut |_, _, mut g| g.mapv_inplace(|x| x * s));
    }

    fn named_values(&self) -> Vec<(String, ArrayD<F>)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, v| out.push((n.to_string(), v.to_owned())));
        out
    }

    fn named_grads(&mut self) -> Vec<(String, ArrayD<F>)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut |n, _, g| out.push((n.to_string(), g.to_owned())));
        out
    }
}

impl<F: Float, D: Dimension> Params<F> for Param<F, D> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ArrayViewD<'_, F>)) {
        f(prefix, self.value.view().into_dyn());
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>, ArrayViewMutD<'_, F>)) {
        f(prefix, self.value.view_mut().into_dyn(), self.grad.view_mut().into_dyn());
    }
}

impl<F: Float, T: Params<F>> Params<F> for Vec<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ArrayViewD<'_, F>)) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>, ArrayViewMutD<'_, F>)) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<F: Float, T: Params<F>> Params<F> for Option<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ArrayViewD<'_, F>)) {
        if let Some(p) = self {
            p.visit(prefix, f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>, ArrayViewMutD<'_, F>)) {
        if let Some(p) = self {
            p.visit_mut(prefix, f);
        }
    }
}

/// Implements [`Params`] for a struct generic over `F` by visiting the
/// listed fields in order.
#[macro_export]
macro_rules! impl_params {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl<F: $crate::float::Float> $crate::nn::Params<F> for $ty<F> {
            fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ndarray::ArrayViewD<'_, F>)) {
                $( $crate::nn::Params::<F>::visit(&self.$field, &$crate::nn::join_name(prefix, stringify!($field)), f); )*
            }
            fn visit_mut(
                &mut self,
                prefix: &str,
                f: &mut dyn FnMut(&str, ndarray::ArrayViewMutD<'_, F>, ndarray::ArrayViewMutD<'_, F>),
            ) {
                $( $crate::nn::Params::<F>::visit_mut(&mut self.$field, &$crate::nn::join_name(prefix, stringify!($field)), f); )*
            }
        }
    };
}

#[doc(hidden)]
pub fn join_name(prefix: &str, name: &str) -> String {
    join(prefix, name)
}

/// Copies values into a model by name; every model parameter must be present
/// with a matching shape.
pub fn load_values<F: Float>(
    model: &mut dyn Params<F>,
    values: &std::collections::BTreeMap<String, ArrayD<F>>,
) -> crate::error::Result<()> {
    let mut err = None;
    model.visit_mut("", &mut |name, mut v, _| {
        if err.is_some() {
            return;
        }
        match values.get(name) {
            Some(src) if src.shape() == v.shape() => v.assign(src),
            Some(src) => {
                err = Some(crate::error::Error::Mismatch(format!(
                    "parameter `{name}` has shape {:?} in file, model expects {:?}",
                    src.shape(),
                    v.shape()
                )))
            }
            None => {
                err = Some(crate::error::Error::Mismatch(format!(
                    "parameter `{name}` missing from file"
                )))
            }
        }
    });
    err.map_or(Ok(()), Err)
}

/// Flattens all parameters (visit order) for hashing and comparisons.
pub fn flat_values<F: Float>(model: &dyn Params<F>) -> Vec<F> {
    let mut out = Vec::new();
    model.visit("", &mut |_, v| out.extend(v.iter().copied()));
    out
}

/// SHA-256 over parameter names, shapes and little-endian values.
pub fn params_hash<F: Float>(model: &dyn Params<F>) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    model.visit("", &mut |name, v| {
        h.update(name.as_bytes());
        for d in v.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for x in v.iter() {
            h.update(x.f64().to_le_bytes());
        }
    });
    hex::encode(h.finalize())
}
