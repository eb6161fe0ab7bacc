//! Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use conflow::datagen::Gp1dVariant;
use conflow::flow::hitting_time;
use conflow::metrics::{energy_distance, lsd, patch_mmd, vendi, MetricConfig};
use conflow::numerics::rng::standard_normal_like;
use conflow::scores::central_difference;
use conflow::{auto_lambda, integrate_to_boundary, FlowOptions, RngStream, ScoreFamily, ScoreModel, Tensor};
use conflow_cli::commands::bench_table;
use conflow_cli::config::{ConvergenceTask, ExperimentConfig, ExperimentKind};
use conflow_cli::table::Table;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn f(t: &Table, r: usize, c: &str) -> f64 {
    t.get_f64(r, c).unwrap_or(f64::NAN)
}

fn s<'a>(t: &'a Table, r: usize, c: &str) -> &'a str {
    t.get(r, c).unwrap_or("")
}

fn criterion_1() -> Result<Outcome> {
    let start = Instant::now();
    let t = bench_table(ExperimentKind::Convergence, &ExperimentConfig::default())?;
    let secs = start.elapsed().as_secs_f64();
    let (mut worst_smooth, mut nonsmooth_within, mut checked, mut min_vendi) = (0.0f64, 0, 0, f64::INFINITY);
    for r in 0..t.rows.len() {
        let (task, score) = (s(&t, r, "task"), s(&t, r, "score"));
        min_vendi = min_vendi.min(f(&t, r, "vendi_ratio"));
        let vector_smooth = task == "isotropic_gaussian" && ["l2", "huber", "gauss_nll", "student_t_nll"].contains(&score);
        let field_smooth = task == "gp2d" && ["sobolev", "psd", "wavelet"].contains(&score);
        if vector_smooth || field_smooth {
            worst_smooth = worst_smooth.max(f(&t, r, "mean_abs_err_polished"));
            checked += 1;
        }
        if ["l1", "knn"].contains(&score) && s(&t, r, "within_tolerance") == "true" {
            nonsmooth_within += 1;
        }
    }
    outcome(
        checked == 4 * 5 * 3 + 3 * 4 * 3 && worst_smooth <= 1e-6 && nonsmooth_within == 0 && secs < 300.0 && min_vendi >= 0.9,
        format!(
            "{checked} smooth cells, worst polished |S - tau| {worst_smooth:.2e}; l1/knn within tolerance in {nonsmooth_within} cells; min vendi ratio {min_vendi:.3}; {secs:.0}s"
        ),
    )
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    (sxy / sxx, sxy * sxy / (sxx * syy))
}

fn criterion_2() -> Result<Outcome> {
    let opts = FlowOptions::default();
    let l2 = ScoreModel::new(ScoreFamily::L2);
    let (mut worst_rel, mut worst_r2) = (0.0f64, 1.0f64);
    for d in [2usize, 10, 50] {
        for i in 0..20 {
            let mut rng = RngStream::new(2, d as u64).child(i).rng();
            let yhat = standard_normal_like(&mut rng, &[d]);
            let dir = standard_normal_like(&mut rng, &[d]);
            let tau = 1.0;
            let gap = rng.random_range(0.2..1.5);
            let y0 = yhat.add(&dir.scale((tau + gap) * (d as f64).sqrt() / dir.norm()));
            let r = integrate_to_boundary(&l2, &yhat, &y0, tau, &opts, RngStream::new(3, i))?;
            let ts: Vec<f64> = (0..=opts.steps).map(|k| k as f64 * opts.horizon / opts.steps as f64).collect();
            let logs: Vec<f64> = r.score_trace[..=opts.steps].iter().map(|v| (v - tau).abs().ln()).collect();
            let (slope, r2) = linear_fit(&ts, &logs);
            worst_rel = worst_rel.max((slope + r.lambda_used).abs() / r.lambda_used);
            worst_r2 = worst_r2.min(r2);
        }
    }
    outcome(worst_rel < 0.02 && worst_r2 > 0.99, format!("worst slope deviation {:.3}%, worst R^2 {worst_r2:.6}", 100.0 * worst_rel))
}

fn criterion_3() -> Result<Outcome> {
    let mut rng = RngStream::new(3, 0).rng();
    let (mut worst, mut count) = (0.0f64, 0);
    while count < 1000 {
        let s0: f64 = rng.random_range(0.0..50.0);
        let tau: f64 = rng.random_range(0.0..50.0);
        if (s0 - tau).abs() <= 1e-6 {
            continue;
        }
        let t = hitting_time(s0, tau, 1e-6, auto_lambda(s0, tau, 1e-6, 1.0))?;
        worst = worst.max((t - 1.0).abs());
        count += 1;
    }
    outcome(worst <= 1e-12, format!("1000 draws, worst |t - 1| {worst:.2e}"))
}

fn criterion_4() -> Result<Outcome> {
    let opts = FlowOptions::default();
    let l2 = ScoreModel::new(ScoreFamily::L2);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let mut rng = RngStream::new(4, i).rng();
        let d = rng.random_range(1..=100);
        let yhat = standard_normal_like(&mut rng, &[d]);
        let y0 = yhat.add(&standard_normal_like(&mut rng, &[d]).scale(rng.random_range(0.1..5.0)));
        let tau = rng.random_range(0.1..3.0);
        let r = integrate_to_boundary(&l2, &yhat, &y0, tau, &opts, RngStream::new(5, i))?;
        let delta = y0.sub(&yhat);
        let oracle = yhat.add(&delta.scale(tau * (d as f64).sqrt() / delta.norm()));
        worst = worst.max(r.terminal.sub(&oracle).data().iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    outcome(worst <= 1e-6, format!("1000 instances, worst max-abs deviation {worst:.2e}"))
}

fn random_walk(rng: &mut impl Rng, t: usize) -> Tensor {
    let mut d = vec![0.0; 2 * t];
    let noise = standard_normal_like(rng, &[2 * t]);
    for i in 1..t {
        d[2 * i] = d[2 * i - 2] + 1.0 + 0.5 * noise.data()[2 * i];
        d[2 * i + 1] = d[2 * i - 1] + 0.5 * noise.data()[2 * i + 1];
    }
    Tensor::new(d, vec![t, 2]).expect("walk shape")
}

fn draw_pair(rng: &mut impl Rng, shape: &[usize], traj: bool) -> (Tensor, Tensor) {
    if traj {
        let p = random_walk(rng, shape[0]);
        let y = p.add(&standard_normal_like(rng, shape).scale(0.4));
        (p, y)
    } else {
        (standard_normal_like(rng, shape), standard_normal_like(rng, shape))
    }
}

fn criterion_5() -> Result<Outcome> {
    let cases: Vec<(ScoreFamily, Vec<usize>)> = vec![
        (ScoreFamily::L2, vec![7]),
        (ScoreFamily::Huber { delta: 1.0 }, vec![7]),
        (ScoreFamily::gauss_nll(), vec![6]),
        (ScoreFamily::student_t_nll(3.0), vec![6]),
        (ScoreFamily::FieldL2, vec![4, 4, 2]),
        (ScoreFamily::Sobolev { lambda: 1.0 }, vec![4, 8, 2]),
        (ScoreFamily::Psd, vec![8, 4, 2]),
        (ScoreFamily::Wavelet { depth: 3 }, vec![8, 16]),
        (ScoreFamily::combo_max(), vec![8, 8]),
        (ScoreFamily::local_combined(), vec![8, 4, 2]),
        (ScoreFamily::TrajL2, vec![6, 2]),
        (ScoreFamily::cgt(), vec![8, 2]),
    ];
    let mut worst: (f64, &str) = (0.0, "");
    for (fi, (family, shape)) in cases.iter().enumerate() {
        let traj = shape.len() == 2 && shape[1] == 2;
        let mut rng = RngStream::new(5, fi as u64).rng();
        let (preds, targets): (Vec<Tensor>, Vec<Tensor>) = (0..40).map(|_| draw_pair(&mut rng, shape, traj)).unzip();
        let model = ScoreModel::new(family.clone()).fit(&preds, &targets)?;
        for i in 0..100 {
            let mut rng = RngStream::new(6, fi as u64).child(i).rng();
            let (yhat, y) = draw_pair(&mut rng, shape, traj);
            let g = model.gradient(&yhat, &y)?;
            let fd = central_difference(&model, &yhat, &y, 1e-5)?;
            let rel = fd.sub(&g).norm() / g.norm().max(1e-300);
            if rel > worst.0 {
                worst = (rel, family.name());
            }
        }
    }
    outcome(worst.0 < 1e-5, format!("12 families x 100 points, worst relative error {:.2e} ({})", worst.0, worst.1))
}

fn criterion_6() -> Result<Outcome> {
    let t = bench_table(ExperimentKind::CpdAudit, &ExperimentConfig::default())?;
    let mut ok = true;
    let mut notes = Vec::new();
    for r in 0..t.rows.len() {
        let (mix, beta, cov) = (s(&t, r, "mixing"), f(&t, r, "beta"), f(&t, r, "coverage"));
        let m = f(&t, r, "samples");
        match mix {
            "uniform(0,1)" => {
                let dev = (cov - (1.0 - beta)).abs();
                let bound = 3.0 * (beta * (1.0 - beta) / m).sqrt();
                ok &= dev <= bound;
                notes.push(format!("b={beta}: {dev:.4}/{bound:.4}"));
            }
            "uniform(0.9,1)" if beta == 0.5 => {
                ok &= cov == 1.0;
                notes.push(format!("(0.9,1) b=0.5: {cov}"));
            }
            "uniform(0,0.1)" if beta == 0.1 => {
                let clamped = f(&t, r, "clamped_fraction");
                ok &= cov <= clamped;
                notes.push(format!("(0,0.1) b=0.1: {cov} <= {clamped}"));
            }
            _ => {}
        }
    }
    outcome(ok && notes.len() == 7, notes.join("; "))
}

fn criterion_7() -> Result<Outcome> {
    let t = bench_table(ExperimentKind::Repulsion, &ExperimentConfig::default())?;
    let (mut min_ratio, mut worst_err) = (f64::INFINITY, 0.0f64);
    for r in 0..t.rows.len() {
        min_ratio = min_ratio.min(f(&t, r, "ratio"));
        worst_err = worst_err.max(f(&t, r, "max_constraint_error"));
    }
    outcome(
        t.rows.len() == 4 && min_ratio >= 2.0 && worst_err <= 1e-6,
        format!("min ratio {min_ratio:.2} over p in {{10,25,50,100}}, worst |S - tau| {worst_err:.2e}"),
    )
}

fn criterion_8() -> Result<Outcome> {
    let t = bench_table(ExperimentKind::Bands, &ExperimentConfig::default())?;
    let (mut ok, mut notes, mut reconf_rows) = (true, Vec::new(), 0);
    for r in 0..t.rows.len() {
        let (variant, method, cov) = (s(&t, r, "variant"), s(&t, r, "method"), f(&t, r, "coverage"));
        if method == "reconf" {
            ok &= (0.88..=0.92).contains(&cov);
            reconf_rows += 1;
            notes.push(format!("{variant} reconf {cov:.4}"));
        }
        if method == "sample" && variant == "asym" {
            ok &= cov < 0.88;
            notes.push(format!("asym sample {cov:.4}"));
        }
    }
    outcome(ok && reconf_rows == 4 && notes.len() == 5, notes.join("; "))
}

fn criterion_9() -> Result<Outcome> {
    let mut rng = RngStream::new(9, 0).rng();
    let target = standard_normal_like(&mut rng, &[8, 8]);
    let same = vec![target.clone(); 4];
    let ed = energy_distance(&same, &target)?;
    let lsd_same = lsd(&same, &target)?;
    let mut lsd_err = 0.0f64;
    for _ in 0..10 {
        let t = standard_normal_like(&mut rng, &[8, 8]);
        let s: Vec<Tensor> = (0..3).map(|_| standard_normal_like(&mut rng, &[8, 8])).collect();
        lsd_err = lsd_err.max((lsd(&s, &t)? - lsd_oracle(&s, &t)).abs());
    }
    let cfg = MetricConfig { stride: 7, ..MetricConfig::default() };
    let vals = (0..100u64)
        .map(|seed| {
            let mut rng = RngStream::new(90, seed).rng();
            let target = standard_normal_like(&mut rng, &[28, 28]);
            let samples: Vec<Tensor> = (0..2).map(|_| standard_normal_like(&mut rng, &[28, 28])).collect();
            Ok(patch_mmd(&samples, &target, &cfg)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let se = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt();
    let v_same = vendi(&vec![standard_normal_like(&mut rng, &[16]); 5])?;
    let k = 6;
    let v_orth = vendi(&(1..=k).map(|i| hadamard_row(16, i)).collect::<Vec<_>>())?;
    let ok = ed.abs() <= 1e-12
        && lsd_same.abs() <= 1e-12
        && lsd_err <= 1e-9
        && mean.abs() <= 3.0 * se
        && (v_same - 1.0).abs() <= 1e-9
        && (v_orth - k as f64).abs() <= 1e-9;
    outcome(
        ok,
        format!(
            "ED {ed:.1e}, LSD {lsd_same:.1e}, LSD vs DFT {lsd_err:.1e}, MMD mean {mean:.2e} (3se {:.2e}), vendi {v_same:.6}/{v_orth:.6}",
            3.0 * se
        ),
    )
}

fn hadamard_row(n: usize, i: usize) -> Tensor {
    Tensor::from_fn(&[n], |j| if (i & j).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 })
}

fn dft_power(f: &Tensor) -> Vec<f64> {
    let (h, w) = (f.shape()[0], f.shape()[1]);
    let mut out = vec![0.0; h * w];
    for ky in 0..h {
        for kx in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let a = -2.0 * std::f64::consts::PI * ((ky * y) as f64 / h as f64 + (kx * x) as f64 / w as f64);
                    re += f.data()[y * w + x] * a.cos();
                    im += f.data()[y * w + x] * a.sin();
                }
            }
            out[ky * w + kx] = re * re + im * im;
        }
    }
    out
}

fn lsd_oracle(samples: &[Tensor], target: &Tensor) -> f64 {
    let tp = dft_power(target);
    let beta = (tp.iter().sum::<f64>() / tp.len() as f64).max(1e-12);
    let lt: Vec<f64> = tp.iter().map(|p| (p / beta).ln_1p()).collect();
    samples
        .iter()
        .map(|s| dft_power(s).iter().zip(&lt).map(|(p, b)| ((p / beta).ln_1p() - b).powi(2)).sum::<f64>() / lt.len() as f64)
        .sum::<f64>()
        / samples.len() as f64
}

/// Small configs for every benchmark, so each can be run under several pool sizes.
fn reduced_configs() -> Vec<(ExperimentKind, ExperimentConfig)> {
    let mut conv = ExperimentConfig { seed: 10, ..ExperimentConfig::default() };
    conv.convergence.tasks = vec![ConvergenceTask::IsotropicGaussian, ConvergenceTask::Gp2d];
    conv.convergence.dims = vec![5, 20];
    conv.convergence.ells = vec![0.1];
    conv.convergence.alphas = vec![0.1];
    conv.convergence.n = 120;
    conv.convergence.test_points = 10;
    conv.convergence.gp_size = 16;
    let mut rep = ExperimentConfig { seed: 11, ..ExperimentConfig::default() };
    rep.repulsion_bench.dims = vec![10];
    rep.repulsion_bench.points = 30;
    rep.repulsion_bench.sims = 2;
    rep.repulsion.steps = 5;
    let mut bands = ExperimentConfig { seed: 12, ..ExperimentConfig::default() };
    bands.bands.variants = vec![Gp1dVariant::Asym];
    bands.bands.reps = 2;
    bands.bands.n = 60;
    bands.bands.p = 32;
    bands.bands.samples_per_input = 10;
    let mut audit = ExperimentConfig { seed: 13, ..ExperimentConfig::default() };
    audit.audit.n_cal = 199;
    audit.audit.samples = 2000;
    vec![
        (ExperimentKind::Convergence, conv),
        (ExperimentKind::Repulsion, rep),
        (ExperimentKind::Bands, bands),
        (ExperimentKind::CpdAudit, audit),
    ]
}

fn csv_with_threads(kind: ExperimentKind, cfg: &ExperimentConfig, threads: usize) -> Result<Vec<u8>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    pool.install(|| bench_table(kind, cfg)?.to_csv(&cfg.hash(), cfg.seed))
}

fn criterion_10() -> Result<Outcome> {
    let mut notes = Vec::new();
    let mut ok = true;
    for (kind, cfg) in reduced_configs() {
        let base = csv_with_threads(kind, &cfg, 1)?;
        let same = [csv_with_threads(kind, &cfg, 1)?, csv_with_threads(kind, &cfg, 4)?].iter().all(|c| *c == base);
        ok &= same;
        notes.push(format!("{kind:?} {}", if same { "identical" } else { "differs" }));
    }
    outcome(ok, format!("1 vs 1 vs 4 threads: {}", notes.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [fn() -> Result<Outcome>; 10] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
        criterion_10,
    ];
    let mut failed = 0;
    for (i, run) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {:>2}: {} ({:.1}s) {detail}",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
