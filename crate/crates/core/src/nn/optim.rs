use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use super::Params;
use crate::error::{Error, Result};
use crate::float::Float;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// AdamW with decoupled weight decay applied to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<F: Float> {
    pub config: AdamWConfig,
    pub steps: u64,
    /// `(name, first moment, second moment)` in parameter visit order.
    pub state: Vec<(String, ArrayD<F>, ArrayD<F>)>,
}

impl<F: Float> AdamW<F> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            steps: 0,
            state: Vec::new(),
        }
    }

    pub fn step(&mut self, model: &mut dyn Params<F>, lr: f64) -> Result<()> {
        if self.state.is_empty() {
            model.visit_mut("", &mut |name, v, _| {
                self.state.push((
                    name.to_string(),
                    ArrayD::zeros(v.raw_dim()),
                    ArrayD::zeros(v.raw_dim()),
                ))
            });
        }
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let bc1 = F::c(1.0 - c.beta1.powi(t));
        let bc2 = F::c(1.0 - c.beta2.powi(t));
        let (b1, b2) = (F::c(c.beta1), F::c(c.beta2));
        let (ob1, ob2) = (F::c(1.0 - c.beta1), F::c(1.0 - c.beta2));
        let lr_f = F::c(lr);
        let decay = F::one() - F::c(lr * c.weight_decay);
        let eps = F::c(c.eps);
        let mut idx = 0;
        let mut err = None;
        let state = &mut self.state;
        model.visit_mut("", &mut |name, mut v, g| {
            let Some((n, m, s)) = state.get_mut(idx) else {
                err = Some(Error::Mismatch(format!("optimizer has no state for `{name}`")));
                return;
            };
            idx += 1;
            if n != name || m.shape() != v.shape() {
                err = Some(Error::Mismatch(format!("optimizer state `{n}` does not match parameter `{name}`")));
                return;
            }
            Zip::from(&mut v).and(m).and(s).and(&g).for_each(|p, m, s, &g| {
                *p = *p * decay;
                *m = b1 * *m + ob1 * g;
                *s = b2 * *s + ob2 * g * g;
                let mh = *m / bc1;
                let sh = *s / bc2;
                *p -= lr_f * mh / (sh.sqrt() + eps);
            });
        });
        if idx != self.state.len() && err.is_none() {
            err = Some(Error::Mismatch("optimizer state has extra entries".into()));
        }
        err.map_or(Ok(()), Err)
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm<F: Float>(model: &mut dyn Params<F>) -> f64 {
    let mut acc = 0.0;
    model.visit_mut("", &mut |_, _, g| acc += g.iter().map(|v| v.f64() * v.f64()).sum::<f64>());
    acc.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;
    use ndarray::{array, Ix1};

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first Adam step is lr * sign(g) (up to eps).
        let mut p = Param::<f64, Ix1>::new(array![1.0, -2.0]);
        p.grad = array![0.5, -3.0];
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        opt.step(&mut p, 0.1).unwrap();
        assert!((p.value[0] - 0.9).abs() < 1e-6);
        assert!((p.value[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn decoupled_decay_with_zero_grad() {
        let mut p = Param::<f64, Ix1>::new(array![2.0]);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.5,
            ..Default::default()
        });
        opt.step(&mut p, 0.1).unwrap();
        assert!((p.value[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
    }
}
