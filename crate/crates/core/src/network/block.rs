use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Ix1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::float::Float;
use crate::impl_params;
use crate::nn::{
    gelu, gelu_backward, join_name as join, layer_norm, layer_norm_backward, DepthwiseConv1d, GradMode, Grn, Init,
    Linear, NormStats, Param, Params,
};

/// Plain layer norm with a learned affine, or AdaLN whose scale and shift are
/// projected from the condition vector: `LN(x) * (1 + gamma) + beta`.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockNorm<F: Float> {
    Plain {
        weight: Param<F, Ix1>,
        bias: Param<F, Ix1>,
    },
    Adaptive {
        /// `condition_dim -> 2 * hidden` (`gamma` rows first, then `beta`).
        modulation: Linear<F>,
    },
}

impl<F: Float> Params<F> for BlockNorm<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ArrayViewD<'_, F>)) {
        match self {
            BlockNorm::Plain { weight, bias } => {
                weight.visit(&join(prefix, "weight"), f);
                bias.visit(&join(prefix, "bias"), f);
            }
            BlockNorm::Adaptive { modulation } => modulation.visit(&join(prefix, "modulation"), f),
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>, ArrayViewMutD<'_, F>)) {
        match self {
            BlockNorm::Plain { weight, bias } => {
                weight.visit_mut(&join(prefix, "weight"), f);
                bias.visit_mut(&join(prefix, "bias"), f);
            }
            BlockNorm::Adaptive { modulation } => modulation.visit_mut(&join(prefix, "modulation"), f),
        }
    }
}

/// Residual ConvNeXt-V2 block over a `hidden x T` sequence:
/// depthwise conv, (Ada)LN, pointwise expansion, GELU, GRN, pointwise
/// projection, residual add.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNextBlock<F: Float> {
    pub dwconv: DepthwiseConv1d<F>,
    pub norm: BlockNorm<F>,
    pub pwconv1: Linear<F>,
    pub grn: Grn<F>,
    pub pwconv2: Linear<F>,
}

impl_params!(ConvNextBlock { dwconv, norm, pwconv1, grn, pwconv2 });

pub struct BlockCache<F: Float> {
    input: Array2<F>,
    stats: NormStats<F>,
    normed: Array2<F>,
    expanded: Array2<F>,
    activated: Array2<F>,
    grn_out: Array2<F>,
    cond: Option<Array1<F>>,
    /// `1 + gamma` for AdaLN.
    scale: Option<Array1<F>>,
}

impl<F: Float> ConvNextBlock<F> {
    pub fn new<R: Rng>(
        hidden: usize,
        expansion: usize,
        kernel: usize,
        condition_dim: Option<usize>,
        rng: &mut R,
    ) -> Self {
        let init = Init::TruncNormal(0.02);
        let dwconv = DepthwiseConv1d::new(hidden, kernel, init, rng);
        let norm = match condition_dim {
            None => BlockNorm::Plain {
                weight: Param::new(Array1::ones(hidden)),
                bias: Param::new(Array1::zeros(hidden)),
            },
            Some(h) => BlockNorm::Adaptive {
                modulation: Linear::new(h, 2 * hidden, Init::Zeros, rng),
            },
        };
        Self {
            dwconv,
            norm,
            pwconv1: Linear::new(hidden, expansion * hidden, init, rng),
            grn: Grn::new(expansion * hidden),
            pwconv2: Linear::new(expansion * hidden, hidden, init, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.pwconv2.out_dim()
    }

    pub fn is_conditioned(&self) -> bool {
        matches!(self.norm, BlockNorm::Adaptive { .. })
    }

    pub fn forward(&self, x: ArrayView2<F>, cond: Option<ArrayView1<F>>) -> Result<(Array2<F>, BlockCache<F>)> {
        let hidden = self.hidden();
        if x.nrows() != hidden {
            return Err(Error::Dimension(format!("block expects {hidden} channels, got {}", x.nrows())));
        }
        let dw_out = self.dwconv.forward(x);
        let stats = layer_norm(dw_out.view());
        let (normed, scale, cond) = match (&self.norm, cond) {
            (BlockNorm::Plain { weight, bias }, None) => {
                let w = weight.value.view().insert_axis(Axis(1));
                let b = bias.value.view().insert_axis(Axis(1));
                (&stats.normalized * &w + &b, None, None)
            }
            (BlockNorm::Adaptive { modulation }, Some(c)) => {
                if c.len() != modulation.in_dim() {
                    return Err(Error::Dimension(format!(
                        "condition has {} dims, block expects {}",
                        c.len(),
                        modulation.in_dim()
                    )));
                }
                let m = modulation.forward_vec(c);
                let scale = m.slice(s![..hidden]).mapv(|g| F::one() + g);
                let shift = m.slice(s![hidden..]).to_owned();
                let out = &stats.normalized * &scale.view().insert_axis(Axis(1))
                    + &shift.view().insert_axis(Axis(1));
                (out, Some(scale), Some(c.to_owned()))
            }
            (BlockNorm::Plain { .. }, Some(_)) => {
                return Err(Error::invalid("condition", "unconditioned block given a condition"))
            }
            (BlockNorm::Adaptive { .. }, None) => {
                return Err(Error::invalid("condition", "conditioned block requires a condition"))
            }
        };
        let expanded = self.pwconv1.forward(normed.view());
        let activated = gelu(expanded.view());
        let grn_out = self.grn.forward(activated.view());
        let mut y = self.pwconv2.forward(grn_out.view());
        y += &x;
        Ok((
            y,
            BlockCache {
                input: x.to_owned(),
                stats,
                normed,
                expanded,
                activated,
                grn_out,
                cond,
                scale,
            },
        ))
    }

    /// Returns the input gradient and, for AdaLN blocks, the condition gradient.
    pub fn backward(&mut self, cache: &BlockCache<F>, dy: ArrayView2<F>, mode: GradMode) -> (Array2<F>, Option<Array1<F>>) {
        let d_grn = self.pwconv2.backward(cache.grn_out.view(), dy, mode);
        let d_act = self.grn.backward(cache.activated.view(), d_grn.view(), mode);
        let d_exp = gelu_backward(cache.expanded.view(), d_act.view());
        let d_normed = self.pwconv1.backward(cache.normed.view(), d_exp.view(), mode);
        let n = &cache.stats.normalized;
        let (dn, dcond) = match &mut self.norm {
            BlockNorm::Plain { weight, bias } => {
                if mode.params() {
                    weight.grad += &(&d_normed * n).sum_axis(Axis(1));
                    bias.grad += &d_normed.sum_axis(Axis(1));
                }
                (&d_normed * &weight.value.view().insert_axis(Axis(1)), None)
            }
            BlockNorm::Adaptive { modulation } => {
                let scale = cache.scale.as_ref().expect("adaptive cache");
                let hidden = scale.len();
                let mut dm = Array1::zeros(2 * hidden);
                dm.slice_mut(s![..hidden]).assign(&(&d_normed * n).sum_axis(Axis(1)));
                dm.slice_mut(s![hidden..]).assign(&d_normed.sum_axis(Axis(1)));
                let c = cache.cond.as_ref().expect("adaptive cache");
                let dc = modulation.backward_vec(c.view(), dm.view(), mode);
                (&d_normed * &scale.view().insert_axis(Axis(1)), Some(dc))
            }
        };
        let d_dw = layer_norm_backward(&cache.stats, dn.view());
        let mut dx = self.dwconv.backward(cache.input.view(), d_dw.view(), mode);
        dx += &dy;
        (dx, dcond)
    }
}
