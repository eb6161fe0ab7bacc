//! Subcommand implementations. Each writes its outputs into the output directory
//! and returns the paths it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use conflow::bands::{calibrate_eta, pointwise_risk, Band, InflationMode};
use conflow::cpd::{sample_cpd, BaseMeasure, CpdSample, CpdSpec, MixingMeasure, Thresholds};
use conflow::datagen::{gen_trajectories, Split};
use conflow::metrics::{energy_distance, lsd, patch_mmd, vendi_ratio};
use conflow::numerics::tensor::field_dims;
use conflow::repulsion::{mean_nearest_neighbour_distance, min_pairwise_distance, repulse};
use conflow::{Filtration, RngStream, ScoreModel, Tensor};
use serde::Serialize;

use crate::bench;
use crate::config::{DataSpec, ExperimentConfig, ExperimentKind};
use crate::plot::plot_table;
use crate::prep::{calibrate, derive_seed, generate, prepare, Prepared};
use crate::table::{num, Table};
use crate::tensor_file::{write_bank, write_tensor};

/// Resolved configuration plus output location.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub out: PathBuf,
}

impl Run {
    pub fn new(cfg: ExperimentConfig, out: &Path) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let hash = cfg.hash();
        Ok(Self { cfg, hash, out: out.to_path_buf() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn csv(&self, name: &str, table: &Table) -> Result<PathBuf> {
        let p = self.path(name);
        table.write_csv(&p, &self.hash, self.cfg.seed)?;
        Ok(p)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    fn prepared(&self) -> Result<Prepared> {
        prepare(&self.cfg.data, derive_seed(self.cfg.seed, &[0]), self.cfg.sample.ridge)
    }
}

pub fn bench_file_stem(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::Convergence => "convergence",
        ExperimentKind::Repulsion => "repulsion",
        ExperimentKind::Bands => "bands",
        ExperimentKind::CpdAudit => "cpd_audit",
        ExperimentKind::Sample => "sample",
    }
}

pub fn bench_table(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<Table> {
    match kind {
        ExperimentKind::Convergence => bench::convergence::run(cfg),
        ExperimentKind::Repulsion => bench::repulsion::run(cfg),
        ExperimentKind::Bands => bench::bands::run(cfg),
        ExperimentKind::CpdAudit => bench::audit::run(cfg),
        ExperimentKind::Sample => bail!("`sample` is not a benchmark"),
    }
}

/// Runs a benchmark, writes its CSV and renders the SVG from the written CSV.
pub fn run_bench(run: &Run, kind: ExperimentKind) -> Result<Vec<PathBuf>> {
    let table = bench_table(kind, &run.cfg)?;
    let stem = bench_file_stem(kind);
    let csv = run.csv(&format!("{stem}.csv"), &table)?;
    let svg = run.path(&format!("{stem}.svg"));
    fs::write(&svg, plot_table(kind, &Table::read_csv(&csv)?)?)?;
    Ok(vec![csv, svg])
}

/// Writes `{split}_x.ncf` and `{split}_y.ncf` for every split.
pub fn datagen(run: &Run) -> Result<Vec<PathBuf>> {
    let seed = derive_seed(run.cfg.seed, &[0]);
    let splits = generate(&run.cfg.data, seed)?;
    let mut out = Vec::new();
    for split in Split::ALL {
        let name = match split {
            Split::Train => "train",
            Split::Cal => "cal",
            Split::Test => "test",
        };
        let ds = splits.get(split);
        for (suffix, bank) in [("x", &ds.x), ("y", &ds.y)] {
            let p = run.path(&format!("{name}_{suffix}.ncf"));
            write_bank(&p, bank)?;
            out.push(p);
        }
    }
    if let DataSpec::Trajectories { n, t, noise } = &run.cfg.data {
        let set = gen_trajectories(*n, *t, *noise, seed)?;
        for (name, bank) in [
            ("train_pred.ncf", &set.train_predictions),
            ("cal_pred.ncf", &set.cal_predictions),
            ("test_pred.ncf", &set.test_predictions),
        ] {
            let p = run.path(name);
            write_bank(&p, bank)?;
            out.push(p);
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct Calibration<'a> {
    model: &'a ScoreModel,
    filtration: &'a Filtration,
}

fn fitted(run: &Run, data: &Prepared) -> Result<(ScoreModel, Filtration)> {
    calibrate(&ScoreModel::new(run.cfg.score.clone()), &data.train, &data.cal)
}

/// Calibration scores, thresholds on the level grid and the fitted model.
pub fn calibrate_cmd(run: &Run) -> Result<Vec<PathBuf>> {
    let data = run.prepared()?;
    let (model, filtration) = fitted(run, &data)?;
    let mut scores = Table::new(&["index", "score"]);
    for (i, s) in data.cal.scores(&model)?.iter().enumerate() {
        scores.push(vec![i.to_string(), num(*s)]);
    }
    let mut thr = Table::new(&["alpha", "tau", "k", "clamped"]);
    let mut alphas = run.cfg.convergence.alphas.clone();
    alphas.push(run.cfg.sample.alpha);
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    for a in alphas {
        let t = filtration.threshold(a)?;
        thr.push(vec![num(a), num(t.tau), t.k.to_string(), t.clamped.to_string()]);
    }
    Ok(vec![
        run.csv("calibration_scores.csv", &scores)?,
        run.csv("thresholds.csv", &thr)?,
        run.json("calibration.json", &Calibration { model: &model, filtration: &filtration })?,
    ])
}

fn base_measure(run: &Run, data: &Prepared) -> BaseMeasure {
    match run.cfg.sample.base_scale {
        Some(scale) => BaseMeasure::GaussianAroundPrediction { scale },
        None => BaseMeasure::EmpiricalResiduals { residuals: data.train.residuals(), jitter: 0.0 },
    }
}

fn spec(run: &Run, data: &Prepared, mixing: MixingMeasure) -> Result<(CpdSpec, Filtration)> {
    let (model, filtration) = fitted(run, data)?;
    Ok((
        CpdSpec {
            model,
            thresholds: Thresholds::Global(filtration.clone()),
            base: base_measure(run, data),
            mixing,
            flow: run.cfg.flow,
        },
        filtration,
    ))
}

fn selected_prediction(run: &Run, data: &Prepared) -> Result<(Tensor, Option<Tensor>)> {
    let i = run.cfg.sample.index;
    ensure!(i < data.test.len(), "sample index {i} out of range ({} test rows)", data.test.len());
    Ok((data.test.preds[i].clone(), data.test.targets.get(i).cloned()))
}

fn samples_table(samples: &[CpdSample]) -> Table {
    let mut t = Table::new(&["index", "alpha", "tau", "clamped", "converged", "score"]);
    for (i, s) in samples.iter().enumerate() {
        t.push(vec![i.to_string(), num(s.alpha), num(s.tau), s.clamped.to_string(), s.converged.to_string(), num(s.score)]);
    }
    t
}

fn draw(run: &Run, data: &Prepared, mixing: MixingMeasure, stream: u64) -> Result<(Tensor, Vec<CpdSample>, CpdSpec)> {
    let (yhat, _) = selected_prediction(run, data)?;
    let (spec, _) = spec(run, data, mixing)?;
    let samples = sample_cpd(&spec, &yhat, run.cfg.sample.samples, derive_seed(run.cfg.seed, &[stream]))?;
    Ok((yhat, samples, spec))
}

/// Boundary samples at the configured level for one test input.
pub fn sample_boundary(run: &Run) -> Result<Vec<PathBuf>> {
    let data = run.prepared()?;
    let (yhat, samples, _) = draw(run, &data, MixingMeasure::point(run.cfg.sample.alpha), 1)?;
    let ys: Vec<Tensor> = samples.iter().map(|s| s.y.clone()).collect();
    let (b, p) = (run.path("boundary.ncf"), run.path("yhat.ncf"));
    write_bank(&b, &ys)?;
    write_tensor(&p, &yhat)?;
    Ok(vec![b, p, run.csv("boundary.csv", &samples_table(&samples))?])
}

/// Boundary samples followed by tangent repulsion.
pub fn repulse_cmd(run: &Run) -> Result<Vec<PathBuf>> {
    let data = run.prepared()?;
    let (yhat, samples, spec) = draw(run, &data, MixingMeasure::point(run.cfg.sample.alpha), 1)?;
    ensure!(samples.iter().all(|s| s.converged), "some boundary samples did not converge");
    let naive: Vec<Tensor> = samples.iter().map(|s| s.y.clone()).collect();
    let tau = samples[0].tau;
    let out = repulse(&naive, &spec.model, &yhat, tau, &run.cfg.repulsion, &run.cfg.flow, RngStream::new(derive_seed(run.cfg.seed, &[2]), 0))?;
    let p = run.path("repulsed.ncf");
    write_bank(&p, &out.batch)?;
    let mut t = Table::new(&["batch", "min_pairwise", "mean_nn", "coincident_pairs", "max_orthogonality_residual"]);
    t.push(vec!["naive".into(), num(min_pairwise_distance(&naive)), num(mean_nearest_neighbour_distance(&naive)), "0".into(), "0".into()]);
    t.push(vec![
        "repulsed".into(),
        num(min_pairwise_distance(&out.batch)),
        num(mean_nearest_neighbour_distance(&out.batch)),
        out.coincident_pairs.to_string(),
        num(out.max_orthogonality_residual),
    ]);
    Ok(vec![p, run.csv("repulsion.csv", &t)?])
}

/// Draws from the conformal predictive distribution for one test input.
pub fn sample_cpd_cmd(run: &Run) -> Result<Vec<PathBuf>> {
    let data = run.prepared()?;
    let (_, samples, _) = draw(run, &data, run.cfg.sample.mixing.clone(), 3)?;
    let p = run.path("cpd_samples.ncf");
    write_bank(&p, &samples.iter().map(|s| s.y.clone()).collect::<Vec<_>>())?;
    Ok(vec![p, run.csv("cpd_samples.csv", &samples_table(&samples))?])
}

/// Reconformalized bands for every test input, inflated on the second half of
/// the calibration split.
pub fn band_cmd(run: &Run) -> Result<Vec<PathBuf>> {
    let data = run.prepared()?;
    let s = &run.cfg.sample;
    let half = data.cal.len() / 2;
    ensure!(half >= 1, "calibration split is too small to halve");
    let (thr, infl) = (data.cal.slice(0..half), data.cal.slice(half..data.cal.len()));
    let (model, filtration) = calibrate(&ScoreModel::new(run.cfg.score.clone()), &data.train, &thr)?;
    let spec = CpdSpec {
        model,
        thresholds: Thresholds::Global(filtration),
        base: BaseMeasure::EmpiricalResiduals { residuals: thr.residuals(), jitter: 0.0 },
        mixing: MixingMeasure::point(s.alpha),
        flow: run.cfg.flow,
    };
    let seed = derive_seed(run.cfg.seed, &[4]);
    let infl_bands = bench::bands::sample_bands(&spec, &infl.preds, s.samples, s.alpha, derive_seed(seed, &[1]))?;
    let test_bands = bench::bands::sample_bands(&spec, &data.test.preds, s.samples, s.alpha, derive_seed(seed, &[2]))?;
    let mode = if s.asymmetric { InflationMode::Asymmetric } else { InflationMode::Symmetric };
    let eta = calibrate_eta(&infl_bands, &infl.targets, s.delta, s.alpha, mode)?;
    let bands: Vec<Band> = test_bands.iter().map(|b| b.inflated(&eta)).collect();
    let lower: Vec<Tensor> = bands.iter().map(|b| b.lower.map(|v| v - b.eta_lo)).collect();
    let upper: Vec<Tensor> = bands.iter().map(|b| b.upper.map(|v| v + b.eta_hi)).collect();
    let (lp, up) = (run.path("band_lower.ncf"), run.path("band_upper.ncf"));
    write_bank(&lp, &lower)?;
    write_bank(&up, &upper)?;
    let mut t = Table::new(&["index", "risk", "width"]);
    for (i, (b, y)) in bands.iter().zip(&data.test.targets).enumerate() {
        t.push(vec![i.to_string(), num(pointwise_risk(b, y, 0.0)?), num(b.mean_width())]);
    }
    let mut summary = Table::new(&["eta_lo", "eta_hi", "clamped", "delta", "alpha"]);
    summary.push(vec![num(eta.eta_lo), num(eta.eta_hi), eta.clamped.to_string(), num(s.delta), num(s.alpha)]);
    Ok(vec![lp, up, run.csv("band_risk.csv", &t)?, run.csv("band.csv", &summary)?])
}

/// Distributional metrics of CPD samples against the test target, with test
/// targets as the diversity reference.
pub fn metrics_cmd(run: &Run) -> Result<Vec<PathBuf>> {
    let data = run.prepared()?;
    let (_, samples, _) = draw(run, &data, run.cfg.sample.mixing.clone(), 3)?;
    let (_, target) = selected_prediction(run, &data)?;
    let target = target.context("metrics need test targets")?;
    let ys: Vec<Tensor> = samples.into_iter().map(|s| s.y).collect();
    let mut t = Table::new(&["metric", "value"]);
    t.push(vec!["energy_distance".into(), num(energy_distance(&ys, &target)?)]);
    let k = ys.len().min(data.test.targets.len());
    t.push(vec!["vendi_ratio".into(), num(vendi_ratio(&ys[..k], &data.test.targets[..k])?)]);
    if field_dims(&target).is_ok() {
        t.push(vec!["lsd".into(), num(lsd(&ys, &target)?)]);
        t.push(vec!["patch_mmd".into(), num(patch_mmd(&ys, &target, &run.cfg.metrics)?)]);
    }
    Ok(vec![run.csv("metrics.csv", &t)?])
}
