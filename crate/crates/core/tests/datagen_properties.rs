use conflow::datagen::{
    fit_ridge, gen_gp1d, gen_gp2d, gen_linear_gaussian, gen_linear_student_t, se_kernel, Dataset, Gp1dParams,
    Gp1dVariant, Gp2dParams, Gp2dSampler, Split,
};
use conflow::scores::{ScoreFamily, ScoreModel};
use conflow::{Filtration, RngStream, Tensor};
use statrs::distribution::{ContinuousCDF, Normal};

fn mse(pred: &[Tensor], y: &[Tensor]) -> f64 {
    pred.iter().zip(y).map(|(a, b)| a.sub(b).norm_sq() / a.len() as f64).sum::<f64>() / y.len() as f64
}

#[test]
fn student_t_noise_is_heavier_tailed_than_gaussian() {
    let d = gen_linear_student_t(5, 20_000, 1).unwrap();
    let model = fit_ridge(&d.train, 1e-6).unwrap();
    // Noise estimates from the test split; X Theta is recovered almost exactly.
    let pred = model.predict_all(&d.test.x).unwrap();
    for j in 0..5 {
        let e: Vec<f64> = pred.iter().zip(&d.test.y).map(|(p, y)| y.data()[j] - p.data()[j]).collect();
        let n = e.len() as f64;
        let m = e.iter().sum::<f64>() / n;
        let v = e.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        let k = e.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n / (v * v);
        assert!(k > 3.5, "coordinate {j}: kurtosis {k}");
    }
}

#[test]
fn gp2d_fields_have_unit_variance_and_the_kernel_correlation() {
    let p = 64;
    let ell = 0.15;
    let sampler = Gp2dSampler::new(p, ell).unwrap();
    let mut rng = RngStream::new(3, 0).rng();
    let fields: Vec<Tensor> = (0..500).map(|_| sampler.sample(&mut rng)).collect();
    let vals: Vec<f64> = fields.iter().flat_map(|f| f.data().iter().copied()).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!((var - 1.0).abs() < 0.1, "variance {var}");
    let mut num = 0.0;
    let mut cnt = 0.0;
    for f in &fields {
        let d = f.data();
        for i in 0..p {
            for j in 0..p - 1 {
                num += (d[i * p + j] - mean) * (d[i * p + j + 1] - mean);
                cnt += 1.0;
            }
        }
    }
    let corr = num / cnt / var;
    let want = se_kernel(1.0 / (p - 1) as f64, ell);
    assert!((corr - want).abs() < 0.05, "lag-1 correlation {corr} vs {want}");
    // Field means are centred: per-field means have sd close to that of the pooled values.
    let means: Vec<f64> = fields.iter().map(|f| f.mean()).collect();
    let mm = means.iter().sum::<f64>() / means.len() as f64;
    let sd = (means.iter().map(|m| (m - mm).powi(2)).sum::<f64>() / (means.len() - 1) as f64).sqrt();
    assert!(mm.abs() <= 3.0 * sd / (means.len() as f64).sqrt());
}

#[test]
fn gp2d_generator_is_reproducible() {
    let params = Gp2dParams { n: 4, p: 32, ..Gp2dParams::default() };
    assert_eq!(gen_gp2d(&params, 5).unwrap(), gen_gp2d(&params, 5).unwrap());
}

#[test]
fn ridge_recovers_noiseless_linear_maps() {
    let d = gen_linear_gaussian(6, 200, 2).unwrap();
    let mut rng = RngStream::new(9, 0).rng();
    let theta = conflow::numerics::rng::standard_normal_vec(&mut rng, 36);
    let clean = Dataset {
        y: d
            .train
            .x
            .iter()
            .map(|x| Tensor::from_fn(&[6], |j| (0..6).map(|i| x.data()[i] * theta[i * 6 + j]).sum()))
            .collect(),
        ..d.train.clone()
    };
    let fit = fit_ridge(&clean, 1e-12).unwrap();
    for (w, t) in fit.weights.iter().zip(&theta) {
        assert!((w - t).abs() < 1e-6);
    }
    assert!(fit.intercept.iter().all(|b| b.abs() < 1e-6));
}

#[test]
fn ridge_has_a_nonnegative_generalization_gap() {
    let gaps: Vec<f64> = (0..10)
        .map(|seed| {
            let d = gen_linear_gaussian(20, 60, seed).unwrap();
            let fit = fit_ridge(&d.train, 1.0).unwrap();
            mse(&fit.predict_all(&d.test.x).unwrap(), &d.test.y) - mse(&fit.predict_all(&d.train.x).unwrap(), &d.train.y)
        })
        .collect();
    assert!(gaps.iter().sum::<f64>() / gaps.len() as f64 > 0.0);
}

#[test]
fn rows_are_exchangeable_within_a_split() {
    let d = gen_linear_gaussian(3, 400, 8).unwrap();
    let stats = |ys: &[Tensor]| {
        let mut s: Vec<f64> = ys.iter().map(|y| y.norm()).collect();
        s.sort_by(f64::total_cmp);
        s
    };
    let mut shuffled = d.cal.y.clone();
    shuffled.reverse();
    shuffled.rotate_left(137);
    assert_eq!(stats(&d.cal.y), stats(&shuffled));
    // Same law across splits: mean row norm agrees within sampling error.
    let m = |ys: &[Tensor]| ys.iter().map(|y| y.norm()).sum::<f64>() / ys.len() as f64;
    let (a, b) = (m(&d.cal.y), m(&d.test.y));
    assert!((a - b).abs() / a < 0.1);
}

/// Two-sided Mann-Whitney p-value with the normal approximation.
fn mann_whitney_p(a: &[f64], b: &[f64]) -> f64 {
    let mut all: Vec<(f64, usize)> = a.iter().map(|&v| (v, 0)).chain(b.iter().map(|&v| (v, 1))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let ra: f64 = all.iter().enumerate().filter(|(_, (_, g))| *g == 0).map(|(i, _)| (i + 1) as f64).sum();
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let u = ra - n1 * (n1 + 1.0) / 2.0;
    let mu = n1 * n2 / 2.0;
    let sd = (n1 * n2 * (n1 + n2 + 1.0) / 12.0).sqrt();
    let z = ((u - mu) / sd).abs();
    2.0 * (1.0 - Normal::new(0.0, 1.0).unwrap().cdf(z))
}

#[test]
fn bias_variants_shift_calibration_scores() {
    let model = ScoreModel::new(ScoreFamily::L2);
    for variant in [Gp1dVariant::BiasMu, Gp1dVariant::BiasMuSigma] {
        let params = Gp1dParams { n: 500, p: 64, variant, ..Gp1dParams::default() };
        let d = gen_gp1d(&params, 4).unwrap();
        let fit = fit_ridge(&d.train, 1.0).unwrap();
        let scores = |ds: &Dataset| -> Vec<f64> {
            let pred = fit.predict_all(&ds.x).unwrap();
            pred.iter().zip(&ds.y).map(|(p, y)| model.evaluate(p, y).unwrap()).collect()
        };
        let half = d.train.len() / 2;
        let held_out = Dataset { x: d.train.x[half..].to_vec(), y: d.train.y[half..].to_vec(), ..d.train.clone() };
        let p = mann_whitney_p(&scores(&held_out), &scores(&d.cal));
        assert!(p < 0.05, "{}: p = {p}", variant.name());
    }
    let d = gen_gp1d(&Gp1dParams { n: 50, p: 32, variant: Gp1dVariant::Symmetric, ..Gp1dParams::default() }, 4).unwrap();
    assert_eq!(d.cal.split, Split::Cal);
}

#[test]
fn split_conformal_sets_cover_at_the_nominal_rate() {
    // Coverage of C_alpha averaged over many independent calibration draws.
    let model = ScoreModel::new(ScoreFamily::L2);
    let alpha = 0.1;
    let reps = 200;
    let mut covered = 0usize;
    let mut total = 0usize;
    for seed in 0..reps {
        let d = gen_linear_gaussian(3, 50, 1000 + seed).unwrap();
        let fit = fit_ridge(&d.train, 0.1).unwrap();
        let s = |ds: &Dataset| -> Vec<f64> {
            fit.predict_all(&ds.x).unwrap().iter().zip(&ds.y).map(|(p, y)| model.evaluate(p, y).unwrap()).collect()
        };
        let tau = Filtration::from_scores(&s(&d.cal)).unwrap().threshold(alpha).unwrap().tau;
        let test = s(&d.test);
        covered += test.iter().filter(|&&v| v <= tau).count();
        total += test.len();
    }
    let cov = covered as f64 / total as f64;
    // E[coverage] = ceil(0.9 * 51) / 51 = 0.9020; the spread is dominated by calibration draws.
    let sd = (0.1 * 0.9 / (50.0 + 2.0) / reps as f64).sqrt();
    assert!((cov - 46.0 / 51.0).abs() < 4.0 * sd + 0.005, "coverage {cov}");
}
