use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Ix1, Ix2, Zip};
use rand::Rng;

use super::{GradMode, Init, Param};
use crate::float::Float;
use crate::impl_params;

/// Pointwise (1x1) convolution over a `in x T` sequence, i.e. a linear map
/// applied to every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F: Float> {
    /// `out x in`
    pub weight: Param<F, Ix2>,
    pub bias: Param<F, Ix1>,
}

impl_params!(Linear { weight, bias });

impl<F: Float> Linear<F> {
    pub fn new<R: Rng>(inp: usize, out: usize, init: Init, rng: &mut R) -> Self {
        Self {
            weight: Param::new(init.sample(Ix2(out, inp), inp, rng)),
            bias: Param::new(Array1::zeros(out)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Array2<F> {
        let mut y = self.weight.value.dot(&x);
        y += &self.bias.value.view().insert_axis(Axis(1));
        y
    }

    pub fn forward_vec(&self, x: ArrayView1<F>) -> Array1<F> {
        self.weight.value.dot(&x) + &self.bias.value
    }

    pub fn backward(&mut self, x: ArrayView2<F>, dy: ArrayView2<F>, mode: GradMode) -> Array2<F> {
        if mode.params() {
            self.weight.grad += &dy.dot(&x.t());
            self.bias.grad += &dy.sum_axis(Axis(1));
        }
        self.weight.value.t().dot(&dy)
    }

    pub fn backward_vec(&mut self, x: ArrayView1<F>, dy: ArrayView1<F>, mode: GradMode) -> Array1<F> {
        if mode.params() {
            let outer = dy.insert_axis(Axis(1)).dot(&x.insert_axis(Axis(0)));
            self.weight.grad += &outer;
            self.bias.grad += &dy;
        }
        self.weight.value.t().dot(&dy)
    }

    pub fn macs_per_frame(&self) -> usize {
        self.in_dim() * self.out_dim()
    }
}

/// Depthwise 1-D convolution with "same" zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseConv1d<F: Float> {
    /// `channels x kernel`
    pub weight: Param<F, Ix2>,
    pub bias: Param<F, Ix1>,
}

impl_params!(DepthwiseConv1d { weight, bias });

impl<F: Float> DepthwiseConv1d<F> {
    pub fn new<R: Rng>(channels: usize, kernel: usize, init: Init, rng: &mut R) -> Self {
        assert!(kernel % 2 == 1, "depthwise kernel must be odd");
        Self {
            weight: Param::new(init.sample(Ix2(channels, kernel), kernel, rng)),
            bias: Param::new(Array1::zeros(channels)),
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.ncols()
    }

    /// Valid output range `[lo, hi)` for kernel tap `j` (input offset `j - k/2`).
    fn tap_range(&self, j: usize, t: usize) -> (usize, usize, isize) {
        let off = j as isize - (self.kernel() / 2) as isize;
        let lo = (-off).max(0) as usize;
        let hi = (t as isize - off.max(0)).max(0) as usize;
        (lo, hi.max(lo), off)
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Array2<F> {
        let (c, t) = x.dim();
        let x = x.as_standard_layout();
        let mut y = Array2::zeros((c, t));
        for ch in 0..c {
            let xr = x.row(ch);
            let xr = xr.as_slice().expect("standard layout");
            let mut yr = y.row_mut(ch);
            let yr = yr.as_slice_mut().expect("standard layout");
            yr.fill(self.bias.value[ch]);
            for j in 0..self.kernel() {
                let w = self.weight.value[[ch, j]];
                let (lo, hi, off) = self.tap_range(j, t);
                if lo >= hi {
                    continue;
                }
                let src = &xr[(lo as isize + off) as usize..(hi as isize + off) as usize];
                for (o, &v) in yr[lo..hi].iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, x: ArrayView2<F>, dy: ArrayView2<F>, mode: GradMode) -> Array2<F> {
        let (c, t) = x.dim();
        let x = x.as_standard_layout();
        let dy = dy.as_standard_layout();
        let mut dx = Array2::zeros((c, t));
        for ch in 0..c {
            let xr = x.row(ch);
            let xr = xr.as_slice().expect("standard layout");
            let dyr = dy.row(ch);
            let dyr = dyr.as_slice().expect("standard layout");
            let mut dxr = dx.row_mut(ch);
            let dxr = dxr.as_slice_mut().expect("standard layout");
            for j in 0..self.kernel() {
                let w = self.weight.value[[ch, j]];
                let (lo, hi, off) = self.tap_range(j, t);
                if lo >= hi {
                    continue;
                }
                let (a, b) = ((lo as isize + off) as usize, (hi as isize + off) as usize);
                let g = &dyr[lo..hi];
                if mode.params() {
                    let dw = g.iter().zip(&xr[a..b]).fold(F::zero(), |acc, (&p, &q)| acc + p * q);
                    self.weight.grad[[ch, j]] += dw;
                }
                for (o, &v) in dxr[a..b].iter_mut().zip(g) {
                    *o += w * v;
                }
            }
            if mode.params() {
                self.bias.grad[ch] += dyr.iter().copied().sum::<F>();
            }
        }
        dx
    }
}

/// Per-frame statistics from [`layer_norm`].
#[derive(Debug, Clone)]
pub struct NormStats<F: Float> {
    pub normalized: Array2<F>,
    pub inv_std: Array1<F>,
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Normalizes every frame (column) over channels; no affine.
pub fn layer_norm<F: Float>(x: ArrayView2<F>) -> NormStats<F> {
    let (c, t) = x.dim();
    let cn = F::c(c as f64);
    let mut normalized = Array2::zeros((c, t));
    let mut inv_std = Array1::zeros(t);
    let mean = x.sum_axis(Axis(0)) / cn;
    for j in 0..t {
        let col = x.column(j);
        let m = mean[j];
        let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<F>() / cn;
        let is = F::one() / (var + F::c(LAYER_NORM_EPS)).sqrt();
        inv_std[j] = is;
        Zip::from(normalized.column_mut(j))
            .and(col)
            .for_each(|o, &v| *o = (v - m) * is);
    }
    NormStats {
        normalized,
        inv_std,
    }
}

/// Gradient through [`layer_norm`] given the gradient w.r.t. the normalized output.
pub fn layer_norm_backward<F: Float>(stats: &NormStats<F>, dn: ArrayView2<F>) -> Array2<F> {
    let (c, t) = dn.dim();
    let cn = F::c(c as f64);
    let mut dx = Array2::zeros((c, t));
    for j in 0..t {
        let n = stats.normalized.column(j);
        let g = dn.column(j);
        let mg = g.sum() / cn;
        let mgn = g.iter().zip(n.iter()).map(|(&a, &b)| a * b).sum::<F>() / cn;
        let is = stats.inv_std[j];
        Zip::from(dx.column_mut(j))
            .and(g)
            .and(n)
            .for_each(|o, &gv, &nv| *o = is * (gv - mg - nv * mgn));
    }
    dx
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf) GELU.
pub fn gelu<F: Float>(x: ArrayView2<F>) -> Array2<F> {
    let half = F::c(0.5);
    let k = F::c(INV_SQRT_2);
    x.mapv(|v| half * v * (F::one() + (v * k).erf()))
}

pub fn gelu_backward<F: Float>(x: ArrayView2<F>, dy: ArrayView2<F>) -> Array2<F> {
    let half = F::c(0.5);
    let k = F::c(INV_SQRT_2);
    let p = F::c(INV_SQRT_2PI);
    let mut out = Array2::zeros(x.raw_dim());
    Zip::from(&mut out).and(x).and(dy).for_each(|o, &v, &g| {
        let cdf = half * (F::one() + (v * k).erf());
        let pdf = p * (-(v * v) * half).exp();
        *o = g * (cdf + v * pdf);
    });
    out
}

pub fn leaky_relu<F: Float, D: ndarray::Dimension>(x: &ndarray::Array<F, D>, slope: F) -> ndarray::Array<F, D> {
    x.mapv(|v| if v > F::zero() { v } else { v * slope })
}

pub fn leaky_relu_backward<F: Float, D: ndarray::Dimension>(
    x: &ndarray::Array<F, D>,
    dy: &ndarray::Array<F, D>,
    slope: F,
) -> ndarray::Array<F, D> {
    let mut out = dy.clone();
    Zip::from(&mut out).and(x).for_each(|o, &v| {
        if v <= F::zero() {
            *o *= slope
        }
    });
    out
}

pub const GRN_EPS: f64 = 1e-6;

/// Global response normalization over a `channels x T` sequence:
/// `G_c = ||x_c||_2`, `N_c = G_c / (mean(G) + eps)`, `y = gamma * x * N + beta + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grn<F: Float> {
    pub gamma: Param<F, Ix1>,
    pub beta: Param<F, Ix1>,
}

impl_params!(Grn { gamma, beta });

impl<F: Float> Grn<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Array1::zeros(channels)),
            beta: Param::new(Array1::zeros(channels)),
        }
    }

    /// Per-channel response factor `N`.
    pub fn response(x: ArrayView2<F>) -> (Array1<F>, Array1<F>, F) {
        let g = x.map_axis(Axis(1), |r| r.iter().map(|&v| v * v).sum::<F>().sqrt());
        let denom = g.mean().unwrap() + F::c(GRN_EPS);
        let n = g.mapv(|v| v / denom);
        (g, n, denom)
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Array2<F> {
        let (_, n, _) = Self::response(x);
        let scale = (&self.gamma.value * &n).insert_axis(Axis(1)).to_owned();
        let mut y = &x * &scale;
        y += &self.beta.value.view().insert_axis(Axis(1));
        y += &x;
        y
    }

    pub fn backward(&mut self, x: ArrayView2<F>, dy: ArrayView2<F>, mode: GradMode) -> Array2<F> {
        let (c, _) = x.dim();
        let (g, n, denom) = Self::response(x);
        // s_c = sum_t dy * x
        let s: Array1<F> = Zip::from(dy.rows())
            .and(x.rows())
            .map_collect(|a, b| a.iter().zip(b.iter()).map(|(&p, &q)| p * q).sum::<F>());
        if mode.params() {
            self.gamma.grad += &(&s * &n);
            self.beta.grad += &dy.sum_axis(Axis(1));
        }
        let gamma = &self.gamma.value;
        let dn = gamma * &s;
        let cn = F::c(c as f64);
        let cross = dn.iter().zip(g.iter()).map(|(&a, &b)| a * b).sum::<F>() / (denom * denom * cn);
        let dg = dn.mapv(|v| v / denom - cross);
        let mut dx = Array2::zeros(x.raw_dim());
        for ch in 0..c {
            let direct = F::one() + gamma[ch] * n[ch];
            let via_norm = if g[ch] > F::zero() { dg[ch] / g[ch] } else { F::zero() };
            Zip::from(dx.row_mut(ch))
                .and(dy.row(ch))
                .and(x.row(ch))
                .for_each(|o, &d, &v| *o = d * direct + via_norm * v);
        }
        dx
    }
}
