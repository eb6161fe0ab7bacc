//! Coverage and width of sampled and reconformalized bands on the 1-D GP variants.

use anyhow::{ensure, Context, Result};
use conflow::bands::{calibrate_eta, envelope, pointwise_risk, Band, InflationMode};
use conflow::calibration::Filtration;
use conflow::cpd::{sample_cpd, BaseMeasure, CpdSpec, MixingMeasure, Thresholds};
use conflow::datagen::{gen_gp1d, Gp1dParams};
use conflow::numerics::median;
use conflow::{ScoreModel, Tensor};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::prep::{calibrate, derive_seed, prepare_splits, Pairs};
use crate::table::{num, Table};

pub const HEADER: &[&str] = &["variant", "method", "coverage", "median_width", "reps"];

pub const METHODS: [&str; 3] = ["sample", "reconf", "reconf_asym"];

/// Envelope of boundary samples at the band level for every input.
pub fn sample_bands(spec: &CpdSpec, preds: &[Tensor], samples: usize, alpha: f64, seed: u64) -> Result<Vec<Band>> {
    preds
        .par_iter()
        .enumerate()
        .map(|(i, yhat)| {
            let draws = sample_cpd(spec, yhat, samples, derive_seed(seed, &[i as u64]))?;
            let ys: Vec<Tensor> = draws.into_iter().map(|d| d.y).collect();
            let (l, u) = envelope(&ys, alpha / 2.0, 1.0 - alpha / 2.0)?;
            Ok(Band::new(l, u)?)
        })
        .collect()
}

fn coverage(bands: &[Band], targets: &[Tensor], delta: f64) -> Result<f64> {
    let ok = bands
        .iter()
        .zip(targets)
        .map(|(b, y)| Ok(pointwise_risk(b, y, 0.0)? <= delta))
        .collect::<Result<Vec<bool>>>()?;
    Ok(ok.iter().filter(|&&c| c).count() as f64 / ok.len() as f64)
}

fn median_width(bands: &[Band]) -> Result<f64> {
    Ok(median(&bands.iter().map(Band::mean_width).collect::<Vec<_>>())?)
}

/// `[coverage, median width]` for each method on one replicate.
fn replicate(cfg: &ExperimentConfig, params: &Gp1dParams, seed: u64) -> Result<[[f64; 2]; 3]> {
    let b = &cfg.bands;
    let data = prepare_splits(&gen_gp1d(params, seed)?, b.ridge)?;
    let half = data.cal.len() / 2;
    ensure!(half >= 1, "calibration split is too small to halve");
    let (thr, infl): (Pairs, Pairs) = (data.cal.slice(0..half), data.cal.slice(half..data.cal.len()));
    let (model, filtration): (ScoreModel, Filtration) = calibrate(&ScoreModel::new(b.score.clone()), &data.train, &thr)?;
    let spec = CpdSpec {
        model,
        thresholds: Thresholds::Global(filtration),
        base: BaseMeasure::EmpiricalResiduals { residuals: thr.residuals(), jitter: 0.0 },
        mixing: MixingMeasure::point(b.alpha),
        flow: cfg.flow,
    };
    let infl_bands = sample_bands(&spec, &infl.preds, b.samples_per_input, b.alpha, derive_seed(seed, &[1]))?;
    let test_bands = sample_bands(&spec, &data.test.preds, b.samples_per_input, b.alpha, derive_seed(seed, &[2]))?;
    let mut out = [[0.0; 2]; 3];
    out[0] = [coverage(&test_bands, &data.test.targets, b.delta)?, median_width(&test_bands)?];
    for (slot, mode) in [(1, InflationMode::Symmetric), (2, InflationMode::Asymmetric)] {
        let eta = calibrate_eta(&infl_bands, &infl.targets, b.delta, b.alpha, mode)?;
        let inflated: Vec<Band> = test_bands.iter().map(|band| band.inflated(&eta)).collect();
        out[slot] = [coverage(&inflated, &data.test.targets, b.delta)?, median_width(&inflated)?];
    }
    Ok(out)
}

pub fn run(cfg: &ExperimentConfig) -> Result<Table> {
    let b = &cfg.bands;
    ensure!(b.reps >= 1, "band bench needs at least one replicate");
    let mut table = Table::new(HEADER);
    for (vi, &variant) in b.variants.iter().enumerate() {
        let params = Gp1dParams { n: b.n, p: b.p, variant, ..Gp1dParams::default() };
        let reps = (0..b.reps)
            .map(|r| {
                replicate(cfg, &params, derive_seed(cfg.seed, &[vi as u64, r as u64]))
                    .with_context(|| format!("{} replicate {r}", variant.name()))
            })
            .collect::<Result<Vec<_>>>()?;
        for (m, method) in METHODS.iter().enumerate() {
            let n = reps.len() as f64;
            let cov = reps.iter().map(|r| r[m][0]).sum::<f64>() / n;
            let width = reps.iter().map(|r| r[m][1]).sum::<f64>() / n;
            table.push(vec![variant.name().into(), method.to_string(), num(cov), num(width), b.reps.to_string()]);
        }
    }
    Ok(table)
}
