//! Training objectives, each returning its value together with the gradient
//! with respect to the network outputs it consumes.

use ndarray::{Array, Array1, Array2, Array3, ArrayView1, ArrayView2, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::network::ConditionVector;

/// Floor added to feature-matching denominators.
pub const FM_EPS: f64 = 1e-8;

/// Mean absolute error `mean |z_tgt - z_hat|` and its gradient w.r.t. `z_hat`.
pub fn rec_loss<F: Float, D: Dimension>(z_hat: &Array<F, D>, z_tgt: &Array<F, D>) -> Result<(F, Array<F, D>)> {
    if z_hat.shape() != z_tgt.shape() {
        return Err(Error::Dimension(format!(
            "reconstruction shapes differ: {:?} vs {:?}",
            z_hat.shape(),
            z_tgt.shape()
        )));
    }
    let n = F::c(z_hat.len().max(1) as f64);
    let mut grad = Array::zeros(z_hat.raw_dim());
    let mut acc = F::zero();
    Zip::from(&mut grad).and(z_hat).and(z_tgt).for_each(|g, &a, &b| {
        let d = a - b;
        acc += d.abs();
        *g = d.sign0() / n;
    });
    Ok((acc / n, grad))
}

/// Least-squares generator loss `mean (1 - s)^2`.
pub fn gen_adv_loss<F: Float>(score: ArrayView2<F>) -> (F, Array2<F>) {
    let n = F::c(score.len().max(1) as f64);
    let two = F::c(2.0);
    let loss = score.iter().map(|&s| (F::one() - s) * (F::one() - s)).sum::<F>() / n;
    (loss, score.mapv(|s| -two * (F::one() - s) / n))
}

/// Least-squares discriminator loss `mean (1 - s_real)^2 + mean s_fake^2`,
/// with gradients w.r.t. both score maps.
pub fn disc_loss<F: Float>(real: ArrayView2<F>, fake: ArrayView2<F>) -> (F, Array2<F>, Array2<F>) {
    let (l_real, g_real) = gen_adv_loss(real);
    let n = F::c(fake.len().max(1) as f64);
    let two = F::c(2.0);
    let l_fake = fake.iter().map(|&s| s * s).sum::<F>() / n;
    (l_real + l_fake, g_real, fake.mapv(|s| two * s / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FmDenominator {
    /// `||D_i(real) - D_i(fake)||_1 / ||D_i(fake)||_1`
    #[default]
    Generated,
    /// `||D_i(real) - D_i(fake)||_1 / ||D_i(real)||_1`
    Real,
}

/// Relative L1 feature matching summed over layers. Real features are
/// treated as constants; the gradient is w.r.t. the generated features.
pub fn feature_match_loss<F: Float>(
    real: &[Array3<F>],
    fake: &[Array3<F>],
    denominator: FmDenominator,
) -> Result<(F, Vec<Array3<F>>)> {
    if real.len() != fake.len() {
        return Err(Error::Dimension(format!(
            "feature lists have {} and {} layers",
            real.len(),
            fake.len()
        )));
    }
    let eps = F::c(FM_EPS);
    let mut total = F::zero();
    let mut grads = Vec::with_capacity(fake.len());
    for (i, (r, f)) in real.iter().zip(fake).enumerate() {
        if r.shape() != f.shape() {
            return Err(Error::Dimension(format!(
                "feature layer {i} shapes differ: {:?} vs {:?}",
                r.shape(),
                f.shape()
            )));
        }
        let num = Zip::from(r).and(f).fold(F::zero(), |a, &x, &y| a + (x - y).abs());
        let mut g = Array3::zeros(f.raw_dim());
        match denominator {
            FmDenominator::Generated => {
                let den = f.iter().map(|v| v.abs()).sum::<F>() + eps;
                total += num / den;
                let k = num / (den * den);
                Zip::from(&mut g)
                    .and(r)
                    .and(f)
                    .for_each(|g, &x, &y| *g = (y - x).sign0() / den - k * y.sign0());
            }
            FmDenominator::Real => {
                let den = r.iter().map(|v| v.abs()).sum::<F>() + eps;
                total += num / den;
                Zip::from(&mut g).and(r).and(f).for_each(|g, &x, &y| *g = (y - x).sign0() / den);
            }
        }
        grads.push(g);
    }
    Ok((total, grads))
}

/// `KL(N(mu, diag sigma^2) || N(0, I)) = 0.5 * sum(mu^2 + sigma^2 - 1 - 2 log sigma)`
/// in terms of `log sigma`, with gradients w.r.t. `mu` and `log sigma`.
pub fn kl_loss_log_sigma<F: Float>(mu: ArrayView1<F>, log_sigma: ArrayView1<F>) -> (F, Array1<F>, Array1<F>) {
    let half = F::c(0.5);
    let two = F::c(2.0);
    let mut kl = F::zero();
    let mut dls = Array1::zeros(log_sigma.len());
    for (j, (&m, &ls)) in mu.iter().zip(log_sigma.iter()).enumerate() {
        let s2 = (two * ls).exp();
        kl += half * (m * m + s2 - F::one() - two * ls);
        dls[j] = s2 - F::one();
    }
    (kl, mu.to_owned(), dls)
}

/// KL of a condition's Gaussian against the standard normal prior.
pub fn kl_loss(cond: &ConditionVector) -> Result<f64> {
    kl_loss_mu_sigma(cond.mu.view(), cond.sigma.view())
}

pub fn kl_loss_mu_sigma(mu: ArrayView1<f32>, sigma: ArrayView1<f32>) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::Dimension("mu and sigma lengths differ".into()));
    }
    let mut kl = 0.0;
    for (&m, &s) in mu.iter().zip(sigma.iter()) {
        if !(s > 0.0) {
            return Err(Error::invalid("sigma", "must be positive"));
        }
        let (m, s) = (m as f64, s as f64);
        kl += 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln());
    }
    Ok(kl)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub w_rec: f64,
    pub w_adv: f64,
    pub w_fm: f64,
    pub w_kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_rec: 10.0,
            w_adv: 0.5,
            w_fm: 1.0,
            w_kl: 5e-4,
        }
    }
}

impl LossWeights {
    /// Weights used by the bandwidth-extension generator (no KL term).
    pub fn bwe() -> Self {
        Self { w_kl: 0.0, ..Self::default() }
    }

    /// Weights used by the stereo upmixer (no adversarial terms).
    pub fn m2s() -> Self {
        Self {
            w_adv: 0.0,
            w_fm: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_rec", self.w_rec), ("w_adv", self.w_adv), ("w_fm", self.w_fm), ("w_kl", self.w_kl)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::invalid(name, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Unweighted loss terms of one step; absent terms were not computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub rec: Option<f64>,
    pub adv: Option<f64>,
    pub fm: Option<f64>,
    pub kl: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: LossTerms,
    pub weights: LossWeights,
    /// Discriminator loss of the same step, when there is a discriminator.
    pub disc: Option<f64>,
    pub total: f64,
}

/// `total = sum_i w_i * term_i`, requiring every term with a nonzero weight.
pub fn compose(terms: LossTerms, weights: LossWeights) -> Result<LossReport> {
    let mut total = 0.0;
    for (name, term, w) in [
        ("rec", terms.rec, weights.w_rec),
        ("adv", terms.adv, weights.w_adv),
        ("fm", terms.fm, weights.w_fm),
        ("kl", terms.kl, weights.w_kl),
    ] {
        match term {
            Some(v) => {
                if !v.is_finite() {
                    return Err(Error::NonFiniteLoss(name.into()));
                }
                total += w * v;
            }
            None if w != 0.0 => return Err(Error::Missing(format!("loss term `{name}` has weight {w} but was not computed"))),
            None => {}
        }
    }
    Ok(LossReport {
        terms,
        weights,
        disc: None,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn canonical_values() {
        let a = Array2::<f64>::from_elem((3, 4), 0.3);
        assert_eq!(rec_loss(&a, &a).unwrap().0, 0.0);
        assert!((rec_loss(&(&a + 0.5), &a).unwrap().0 - 0.5).abs() < 1e-12);
        for (s, want) in [(1.0, 0.0), (0.0, 1.0), (0.5, 0.25)] {
            assert!((gen_adv_loss(Array2::<f64>::from_elem((2, 3), s).view()).0 - want).abs() < 1e-12);
        }
        for (r, f, want) in [(1.0, 0.0, 0.0), (0.0, 1.0, 2.0), (0.5, 0.5, 0.5)] {
            let v: f64 = disc_loss(Array2::from_elem((2, 3), r).view(), Array2::from_elem((4, 1), f).view()).0;
            assert!((v - want).abs() < 1e-12);
        }
        let (k, _, _) = kl_loss_log_sigma::<f64>(array![1.0].view(), array![0.0].view());
        assert!((k - 0.5).abs() < 1e-12);
        let kl = kl_loss_mu_sigma(array![0.0f32].view(), array![2.0f32].view()).unwrap();
        assert!((kl - 0.5 * (4.0 - 1.0 - 2.0 * 2f64.ln())).abs() < 1e-7);
        assert!(kl_loss_mu_sigma(array![0.0f32].view(), array![0.0f32].view()).is_err());
    }

    #[test]
    fn feature_matching_closed_forms() {
        let f = vec![Array3::<f64>::from_elem((1, 2, 3), 0.7)];
        let r = vec![Array3::<f64>::from_elem((1, 2, 3), 1.4)];
        let (v, _) = feature_match_loss(&r, &f, FmDenominator::Generated).unwrap();
        assert!((v - 1.0).abs() < 1e-7);
        let f2 = vec![f[0].clone(), f[0].clone()];
        let r2 = vec![r[0].clone(), r[0].clone()];
        assert!((feature_match_loss(&r2, &f2, FmDenominator::Generated).unwrap().0 - 2.0).abs() < 1e-7);
        assert!((feature_match_loss(&r, &f, FmDenominator::Real).unwrap().0 - 0.5).abs() < 1e-7);
        assert_eq!(feature_match_loss(&f, &f, FmDenominator::Generated).unwrap().0, 0.0);
        assert!(feature_match_loss(&r2, &f, FmDenominator::Generated).is_err());
    }

    #[test]
    fn composition() {
        let bwe = compose(
            LossTerms {
                rec: Some(0.1),
                adv: Some(0.25),
                fm: Some(0.5),
                kl: None,
            },
            LossWeights::bwe(),
        )
        .unwrap();
        assert!((bwe.total - 1.625).abs() < 1e-12);
        let m2s = compose(
            LossTerms {
                rec: Some(0.2),
                kl: Some(10.0),
                ..Default::default()
            },
            LossWeights::m2s(),
        )
        .unwrap();
        assert!((m2s.total - 2.005).abs() < 1e-12);
        assert!(compose(LossTerms::default(), LossWeights::default()).is_err());
    }
}
