//! 64-bit finite-difference checks of every network and objective, each on
//! at least [`PROBES`] randomly chosen scalars.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reencoder_core::discriminator::{Discriminator, DiscriminatorSpec};
use reencoder_core::network::{ConditioningEncoderSpec, LatentPredictor, ModelSpec};
use reencoder_core::nn::{GradMode, Params};
use reencoder_core::objectives::{
    disc_loss, feature_match_loss, gen_adv_loss, kl_loss_log_sigma, rec_loss, FmDenominator, LossWeights,
};
use reencoder_core::training::M2sModel;

use super::{check_input, check_params, dot, random_matrix, FdReport};

pub const PROBES: usize = 100;
pub const TOLERANCE: f64 = 1e-3;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn reshape(v: &[f64], like: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_vec(like.raw_dim(), v.to_vec()).unwrap()
}

/// Predictor parameters and input under a random linear probe.
pub fn predictor_mono() -> FdReport {
    let mut r = rng(1);
    let spec = ModelSpec::custom(2, 8, 3);
    let mut f = LatentPredictor::<f64>::new(&spec, &mut r).unwrap();
    let z = random_matrix(3, 11, 1.0, &mut r);
    let probe = random_matrix(3, 11, 1.0, &mut r);
    let (y, cache) = f.forward(z.view(), None).unwrap();
    assert_eq!(y.dim(), probe.dim());
    f.zero_grad();
    let (dz, _) = f.backward(&cache, probe.view(), GradMode::Params);
    let params = check_params(&mut f, None, PROBES, 2, |m| dot(&m.forward(z.view(), None).unwrap().0, &probe));
    let input = check_input(&flat(&z), &flat(&dz), PROBES, 3, |v| {
        dot(&f.forward(reshape(v, &z).view(), None).unwrap().0, &probe)
    });
    params.merge(input)
}

/// AdaLN-conditioned two-stream predictor: parameters and condition input.
pub fn predictor_conditioned() -> FdReport {
    let mut r = rng(4);
    let spec = ModelSpec::custom(2, 8, 3).stereo(5);
    let mut f = LatentPredictor::<f64>::new(&spec, &mut r).unwrap();
    // make the modulation paths non-trivial
    f.visit_mut("", &mut |_, mut v, _| v.mapv_inplace(|x| x + 0.05 * (x * 37.0).sin()));
    let z = random_matrix(3, 9, 1.0, &mut r);
    let c = Array1::from_shape_simple_fn(5, || r.gen_range(-1.0..1.0));
    let probe = random_matrix(6, 9, 1.0, &mut r);
    let (_, cache) = f.forward(z.view(), Some(c.view())).unwrap();
    f.zero_grad();
    let (_, dc) = f.backward(&cache, probe.view(), GradMode::Params);
    let dc = dc.unwrap();
    let params = check_params(&mut f, None, PROBES, 5, |m| {
        dot(&m.forward(z.view(), Some(c.view())).unwrap().0, &probe)
    });
    let cond = check_input(c.as_slice().unwrap(), dc.as_slice().unwrap(), 5, 6, |v| {
        let cv = Array1::from_vec(v.to_vec());
        dot(&f.forward(z.view(), Some(cv.view())).unwrap().0, &probe)
    });
    params.merge(cond)
}

fn tiny_m2s(seed: u64) -> (M2sModel<f64>, Array2<f64>, Array2<f64>, Array1<f64>) {
    let mut r = rng(seed);
    let model = ModelSpec::custom(1, 8, 3).stereo(4);
    let enc = ConditioningEncoderSpec {
        num_blocks: 1,
        hidden_dim: 8,
        ..ConditioningEncoderSpec::new(3, 4)
    };
    let mut m = M2sModel::<f64>::new(&model, &enc, &mut r).unwrap();
    m.visit_mut("", &mut |_, mut v, _| v.mapv_inplace(|x| x + 0.05 * (x * 23.0).cos()));
    let z_in = random_matrix(3, 10, 1.0, &mut r);
    let z_tgt = random_matrix(6, 10, 1.0, &mut r);
    let eps = Array1::from_shape_simple_fn(4, || r.gen_range(-1.5..1.5));
    (m, z_in, z_tgt, eps)
}

/// Conditioning encoder through the reparameterized sample and the KL term.
pub fn encoder_reparameterized() -> FdReport {
    let (mut m, z_in, z_tgt, eps) = tiny_m2s(7);
    let w = LossWeights {
        w_rec: 1.0,
        w_kl: 0.3,
        ..LossWeights::m2s()
    };
    m.zero_grad();
    m.accumulate(z_in.view(), z_tgt.view(), eps.view(), &w, 1.0).unwrap();
    let np = m.predictor.num_params();
    let total = m.num_params();
    let loss = |m: &M2sModel<f64>| m.objective(z_in.view(), z_tgt.view(), eps.view(), &w).unwrap();
    let enc = check_params(&mut m, Some(np..total), PROBES, 8, loss);
    let pred = check_params(&mut m, Some(0..np), PROBES, 9, loss);
    enc.merge(pred)
}

/// Discriminator parameters and input under a probe on every feature map.
pub fn discriminator() -> FdReport {
    let mut r = rng(10);
    let spec = DiscriminatorSpec {
        init_std: 0.3,
        ..DiscriminatorSpec::with_channels(3)
    };
    let mut d = Discriminator::<f64>::new(&spec, &mut r).unwrap();
    let z = random_matrix(5, 24, 1.0, &mut r);
    let (out, cache) = d.forward(z.view()).unwrap();
    let probes: Vec<Array3<f64>> = out
        .features
        .iter()
        .map(|f| Array3::from_shape_simple_fn(f.raw_dim(), || r.gen_range(-1.0..1.0)))
        .collect();
    let value = |d: &Discriminator<f64>, z: &Array2<f64>| -> f64 {
        let (o, _) = d.forward(z.view()).unwrap();
        o.features.iter().zip(&probes).map(|(f, p)| (f * p).sum()).sum()
    };
    d.zero_grad();
    let slots: Vec<Option<Array3<f64>>> = probes.iter().cloned().map(Some).collect();
    let dz = d.backward(&cache, &slots, GradMode::Params, true).unwrap();
    let params = check_params(&mut d, None, PROBES, 11, |d| value(d, &z));
    let input = check_input(&flat(&z), &flat(&dz), PROBES, 12, |v| value(&d, &reshape(v, &z)));
    params.merge(input)
}

/// Generator objective `w_rec * rec + w_adv * adv + w_fm * fm` back through
/// the discriminator into the predictor, as the bandwidth trainer composes it.
pub fn generator_through_discriminator() -> FdReport {
    let mut r = rng(13);
    let mut f = LatentPredictor::<f64>::new(&ModelSpec::custom(1, 8, 4), &mut r).unwrap();
    let dspec = DiscriminatorSpec {
        init_std: 0.3,
        ..DiscriminatorSpec::with_channels(3)
    };
    let mut d = Discriminator::<f64>::new(&dspec, &mut r).unwrap();
    let z_in = random_matrix(4, 22, 1.0, &mut r);
    let z_tgt = random_matrix(4, 22, 1.0, &mut r);
    let w = LossWeights::bwe();
    let objective = |f: &LatentPredictor<f64>, d: &Discriminator<f64>| -> f64 {
        let (y, _) = f.forward(z_in.view(), None).unwrap();
        let (rec, _) = rec_loss(&y, &z_tgt).unwrap();
        let (o_r, _) = d.forward(z_tgt.view()).unwrap();
        let (o_f, _) = d.forward(y.view()).unwrap();
        let (adv, _) = gen_adv_loss(o_f.score());
        let (fm, _) = feature_match_loss(&o_r.features, &o_f.features, FmDenominator::Generated).unwrap();
        w.w_rec * rec + w.w_adv * adv + w.w_fm * fm
    };
    let (y, cache_g) = f.forward(z_in.view(), None).unwrap();
    let (_, drec) = rec_loss(&y, &z_tgt).unwrap();
    let (o_r, _) = d.forward(z_tgt.view()).unwrap();
    let (o_f, cache_f) = d.forward(y.view()).unwrap();
    let (_, dscore) = gen_adv_loss(o_f.score());
    let (_, dfeat) = feature_match_loss(&o_r.features, &o_f.features, FmDenominator::Generated).unwrap();
    let mut slots: Vec<Option<Array3<f64>>> = dfeat.into_iter().map(|g| Some(g * w.w_fm)).collect();
    let last = slots.len() - 1;
    slots[last].as_mut().unwrap().index_axis_mut(Axis(0), 0).scaled_add(w.w_adv, &dscore);
    d.zero_grad();
    let dz = d.backward(&cache_f, &slots, GradMode::InputOnly, true).unwrap();
    let untouched = d.named_grads().iter().all(|(_, g)| g.iter().all(|&v| v == 0.0));
    assert!(untouched, "input-only pass must not touch discriminator gradients");
    f.zero_grad();
    f.backward(&cache_g, (drec * w.w_rec + dz).view(), GradMode::Params);
    check_params(&mut f, None, PROBES, 14, |f| objective(f, &d))
}

pub fn rec() -> FdReport {
    let mut r = rng(20);
    let a = random_matrix(10, 12, 1.0, &mut r);
    let b = random_matrix(10, 12, 1.0, &mut r);
    let (_, g) = rec_loss(&a, &b).unwrap();
    check_input(&flat(&a), &flat(&g), PROBES, 21, |v| rec_loss(&reshape(v, &a), &b).unwrap().0)
}

pub fn gen_adv() -> FdReport {
    let mut r = rng(22);
    let s = random_matrix(10, 12, 1.5, &mut r);
    let (_, g) = gen_adv_loss(s.view());
    check_input(&flat(&s), &flat(&g), PROBES, 23, |v| gen_adv_loss(reshape(v, &s).view()).0)
}

pub fn disc() -> FdReport {
    let mut r = rng(24);
    let real = random_matrix(10, 12, 1.5, &mut r);
    let fake = random_matrix(10, 12, 1.5, &mut r);
    let (_, gr, gf) = disc_loss(real.view(), fake.view());
    let a = check_input(&flat(&real), &flat(&gr), PROBES, 25, |v| disc_loss(reshape(v, &real).view(), fake.view()).0);
    let b = check_input(&flat(&fake), &flat(&gf), PROBES, 26, |v| disc_loss(real.view(), reshape(v, &fake).view()).0);
    a.merge(b)
}

pub fn feature_matching() -> FdReport {
    let mut r = rng(27);
    let shapes = [(2, 5, 8), (2, 5, 6), (1, 5, 4)];
    let real: Vec<Array3<f64>> = shapes
        .iter()
        .map(|&s| Array3::from_shape_simple_fn(s, || r.gen_range(-1.0..1.0)))
        .collect();
    let fake: Vec<Array3<f64>> = shapes
        .iter()
        .map(|&s| Array3::from_shape_simple_fn(s, || r.gen_range(-1.0..1.0)))
        .collect();
    let split = |v: &[f64]| -> Vec<Array3<f64>> {
        let mut off = 0;
        shapes
            .iter()
            .map(|&s| {
                let n = s.0 * s.1 * s.2;
                let a = Array3::from_shape_vec(s, v[off..off + n].to_vec()).unwrap();
                off += n;
                a
            })
            .collect()
    };
    let x: Vec<f64> = fake.iter().flat_map(|a| a.iter().copied()).collect();
    let mut report: Option<FdReport> = None;
    for (i, den) in [FmDenominator::Generated, FmDenominator::Real].into_iter().enumerate() {
        let (_, g) = feature_match_loss(&real, &fake, den).unwrap();
        let gv: Vec<f64> = g.iter().flat_map(|a| a.iter().copied()).collect();
        let rep = check_input(&x, &gv, PROBES, 28 + i as u64, |v| {
            feature_match_loss(&real, &split(v), den).unwrap().0
        });
        report = Some(report.map_or(rep, |r| r.merge(rep)));
    }
    report.unwrap()
}

pub fn kl() -> FdReport {
    let mut r = rng(30);
    let mu = Array1::from_shape_simple_fn(64, || r.gen_range(-1.0..1.0));
    let ls = Array1::from_shape_simple_fn(64, || r.gen_range(-1.0..1.0));
    let (_, dmu, dls) = kl_loss_log_sigma(mu.view(), ls.view());
    let x: Vec<f64> = mu.iter().chain(ls.iter()).copied().collect();
    let g: Vec<f64> = dmu.iter().chain(dls.iter()).copied().collect();
    check_input(&x, &g, PROBES, 31, |v| {
        let (m, s) = v.split_at(64);
        kl_loss_log_sigma(Array1::from_vec(m.to_vec()).view(), Array1::from_vec(s.to_vec()).view()).0
    })
}

/// Every check, labelled.
pub fn all() -> Vec<(&'static str, FdReport)> {
    vec![
        ("predictor", predictor_mono()),
        ("conditioned predictor", predictor_conditioned()),
        ("conditioning encoder (reparameterized)", encoder_reparameterized()),
        ("discriminator", discriminator()),
        ("generator through discriminator", generator_through_discriminator()),
        ("rec_loss", rec()),
        ("gen_adv_loss", gen_adv()),
        ("disc_loss", disc()),
        ("feature_match_loss", feature_matching()),
        ("kl_loss", kl()),
    ]
}
