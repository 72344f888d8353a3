use ndarray::{Array1, Array2, Array3, ArrayView3, Axis, Ix1, Ix4};
use rand::Rng;

use super::{GradMode, Init, Param};
use crate::float::Float;
use crate::impl_params;

/// Stride-1 2-D convolution over a `channels x height x width` map, computed
/// as im2col followed by a matrix product.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F: Float> {
    /// `out x in x kh x kw`
    pub weight: Param<F, Ix4>,
    pub bias: Param<F, Ix1>,
    pub padding: (usize, usize),
}

impl_params!(Conv2d { weight, bias });

impl<F: Float> Conv2d<F> {
    pub fn new<R: Rng>(
        inp: usize,
        out: usize,
        kernel: (usize, usize),
        padding: (usize, usize),
        init: Init,
        rng: &mut R,
    ) -> Self {
        let fan_in = inp * kernel.0 * kernel.1;
        Self {
            weight: Param::new(init.sample(Ix4(out, inp, kernel.0, kernel.1), fan_in, rng)),
            bias: Param::new(Array1::zeros(out)),
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dim().0
    }

    pub fn kernel(&self) -> (usize, usize) {
        let d = self.weight.value.dim();
        (d.2, d.3)
    }

    /// Output `(height, width)`, or `None` if the kernel does not fit.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let (ph, pw) = self.padding;
        let oh = (h + 2 * ph).checked_sub(kh)? + 1;
        let ow = (w + 2 * pw).checked_sub(kw)? + 1;
        Some((oh, ow))
    }

    fn weight_matrix(&self) -> ndarray::ArrayView2<'_, F> {
        let (o, i, kh, kw) = self.weight.value.dim();
        self.weight
            .value
            .view()
            .into_shape_with_order((o, i * kh * kw))
            .expect("contiguous conv weight")
    }

    fn im2col(&self, x: ArrayView3<F>, oh: usize, ow: usize) -> Array2<F> {
        let (cin, h, w) = x.dim();
        let (kh, kw) = self.kernel();
        let (ph, pw) = self.padding;
        let mut cols = Array2::zeros((cin * kh * kw, oh * ow));
        for c in 0..cin {
            for a in 0..kh {
                for b in 0..kw {
                    let row = (c * kh + a) * kw + b;
                    let mut dst = cols.row_mut(row);
                    for i in 0..oh {
                        let si = i as isize + a as isize - ph as isize;
                        if si < 0 || si as usize >= h {
                            continue;
                        }
                        let src = x.slice(ndarray::s![c, si as usize, ..]);
                        for j in 0..ow {
                            let sj = j as isize + b as isize - pw as isize;
                            if sj >= 0 && (sj as usize) < w {
                                dst[i * ow + j] = src[sj as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<F>, h: usize, w: usize, oh: usize, ow: usize) -> Array3<F> {
        let cin = self.in_channels();
        let (kh, kw) = self.kernel();
        let (ph, pw) = self.padding;
        let mut dx = Array3::zeros((cin, h, w));
        for c in 0..cin {
            for a in 0..kh {
                for b in 0..kw {
                    let row = cols.row((c * kh + a) * kw + b);
                    for i in 0..oh {
                        let si = i as isize + a as isize - ph as isize;
                        if si < 0 || si as usize >= h {
                            continue;
                        }
                        let mut dst = dx.slice_mut(ndarray::s![c, si as usize, ..]);
                        for j in 0..ow {
                            let sj = j as isize + b as isize - pw as isize;
                            if sj >= 0 && (sj as usize) < w {
                                dst[sj as usize] += row[i * ow + j];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    /// Returns the output map and the im2col matrix needed by `backward`.
    pub fn forward(&self, x: ArrayView3<F>) -> (Array3<F>, Array2<F>) {
        let (_, h, w) = x.dim();
        let (oh, ow) = self.output_size(h, w).expect("kernel larger than padded input");
        let cols = self.im2col(x, oh, ow);
        let mut y = self.weight_matrix().dot(&cols);
        y += &self.bias.value.view().insert_axis(Axis(1));
        let y = y
            .into_shape_with_order((self.out_channels(), oh, ow))
            .expect("conv output shape");
        (y, cols)
    }

    pub fn backward(
        &mut self,
        cols: &Array2<F>,
        input_hw: (usize, usize),
        dy: &Array3<F>,
        mode: GradMode,
        need_input: bool,
    ) -> Option<Array3<F>> {
        let (o, oh, ow) = dy.dim();
        let dy2 = dy
            .view()
            .into_shape_with_order((o, oh * ow))
            .expect("contiguous gradient");
        if mode.params() {
            let dw = dy2.dot(&cols.t());
            let shape = self.weight.value.raw_dim();
            self.weight.grad += &dw.into_shape_with_order(shape).unwrap();
            self.bias.grad += &dy2.sum_axis(Axis(1));
        }
        if !need_input {
            return None;
        }
        let dcols = self.weight_matrix().t().dot(&dy2);
        Some(self.col2im(&dcols, input_hw.0, input_hw.1, oh, ow))
    }

    pub fn macs(&self, oh: usize, ow: usize) -> usize {
        let (o, i, kh, kw) = self.weight.value.dim();
        o * i * kh * kw * oh * ow
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_direct_convolution_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = Conv2d::<f64>::new(2, 3, (3, 7), (1, 1), Init::Normal(0.3), &mut rng);
        let x = Array3::from_shape_simple_fn((2, 5, 12), || rng.gen_range(-1.0..1.0));
        let (y, cols) = conv.forward(x.view());
        assert_eq!(y.dim(), (3, 5, 8));
        // direct
        for o in 0..3 {
            for i in 0..5 {
                for j in 0..8 {
                    let mut acc = 0.0;
                    for c in 0..2 {
                        for a in 0..3 {
                            for b in 0..7 {
                                let si = i as isize + a as isize - 1;
                                let sj = j as isize + b as isize - 1;
                                if si >= 0 && si < 5 && sj >= 0 && sj < 12 {
                                    acc += conv.weight.value[[o, c, a, b]] * x[[c, si as usize, sj as usize]];
                                }
                            }
                        }
                    }
                    assert!((acc - y[[o, i, j]]).abs() < 1e-12);
                }
            }
        }
        let w = Array3::from_shape_simple_fn(y.raw_dim(), || rng.gen_range(-1.0..1.0));
        let dx = conv.clone().backward(&cols, (5, 12), &w, GradMode::Params, true).unwrap();
        let h = 1e-6;
        for &(c, i, j) in &[(0, 0, 0), (1, 2, 5), (0, 4, 11), (1, 3, 7)] {
            let mut p = x.clone();
            p[[c, i, j]] += h;
            let mut m = x.clone();
            m[[c, i, j]] -= h;
            let fd = ((&conv.forward(p.view()).0 * &w).sum() - (&conv.forward(m.view()).0 * &w).sum()) / (2.0 * h);
            assert!((fd - dx[[c, i, j]]).abs() < 1e-6);
        }
    }
}
