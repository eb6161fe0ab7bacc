//! Coverage audit of conformal predictive distributions under several mixing measures.

use anyhow::{Context, Result};
use conflow::cpd::{coverage_audit, failure_rate, sample_cpd, BaseMeasure, CpdSpec, MixingMeasure, Thresholds};
use conflow::datagen::gen_linear_gaussian;
use conflow::{ScoreFamily, ScoreModel};

use crate::config::ExperimentConfig;
use crate::prep::{calibrate, derive_seed, prepare_splits};
use crate::table::{num, Table};

pub const HEADER: &[&str] = &[
    "mixing",
    "beta",
    "coverage",
    "target",
    "three_sigma",
    "clamped_fraction",
    "unconverged_fraction",
    "samples",
];

pub fn mixing_label(m: &MixingMeasure) -> String {
    match m {
        MixingMeasure::Uniform01 => "uniform(0,1)".into(),
        MixingMeasure::UniformRange { a, b } => format!("uniform({a},{b})"),
        MixingMeasure::DiscreteGrid { levels, .. } => format!("grid{levels:?}"),
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Table> {
    let a = &cfg.audit;
    let seed = derive_seed(cfg.seed, &[0]);
    let data = prepare_splits(&gen_linear_gaussian(a.p, a.n_cal, seed)?, a.ridge)?;
    let (model, filtration) = calibrate(&ScoreModel::new(ScoreFamily::L2), &data.train, &data.cal)?;
    let yhat = &data.test.preds[0];
    let mut table = Table::new(HEADER);
    for (mi, mixing) in a.mixings.iter().enumerate() {
        let spec = CpdSpec {
            model: model.clone(),
            thresholds: Thresholds::Global(filtration.clone()),
            base: BaseMeasure::EmpiricalResiduals { residuals: data.train.residuals(), jitter: 0.0 },
            mixing: mixing.clone(),
            flow: cfg.flow,
        };
        let samples = sample_cpd(&spec, yhat, a.samples, derive_seed(cfg.seed, &[1, mi as u64]))
            .with_context(|| format!("sampling under {}", mixing_label(mixing)))?;
        let unconverged = failure_rate(&samples);
        let m = samples.len() as f64;
        for row in coverage_audit(&samples, &filtration, mixing, &a.betas, cfg.flow.tolerance)? {
            let sigma = (row.target * (1.0 - row.target) / m).sqrt();
            table.push(vec![
                mixing_label(mixing),
                num(row.beta),
                num(row.coverage),
                num(row.target),
                num(3.0 * sigma),
                num(row.clamped_fraction),
                num(unconverged),
                samples.len().to_string(),
            ]);
        }
    }
    Ok(table)
}
