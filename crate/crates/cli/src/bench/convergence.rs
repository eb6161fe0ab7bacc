//! Terminal score error of the flow across tasks, dimensions and score families.

use anyhow::{Context, Result};
use conflow::datagen::{gen_gp2d, gen_gp2d_downscale, gen_linear_gaussian, gen_linear_student_t, Gp2dParams};
use conflow::flow::{integrate_batch, FlowJob};
use conflow::metrics::vendi_ratio;
use conflow::{RngStream, ScoreFamily, ScoreModel, Tensor};
use rand::Rng;

use crate::config::{ConvergenceTask, ExperimentConfig};
use crate::prep::{calibrate, derive_seed, prepare_splits, Prepared};
use crate::table::{num, Table};

pub const HEADER: &[&str] = &[
    "task",
    "score",
    "dim_or_ell",
    "alpha",
    "mean_log10_err_steps",
    "mean_abs_err_steps",
    "mean_abs_err_polished",
    "converged_fraction",
    "smooth",
    "within_tolerance",
    "vendi_ratio",
];

/// Errors below this are reported at this floor in the log column.
const LOG_FLOOR: f64 = 1e-16;

fn cell_data(cfg: &ExperimentConfig, task: ConvergenceTask, grid: f64, seed: u64) -> Result<Prepared> {
    let c = &cfg.convergence;
    let splits = match task {
        ConvergenceTask::IsotropicGaussian => gen_linear_gaussian(grid as usize, c.n, seed)?,
        ConvergenceTask::AnisotropicStudentT => gen_linear_student_t(grid as usize, c.n, seed)?,
        ConvergenceTask::Gp2d | ConvergenceTask::Gp2dDownscale => {
            let params = Gp2dParams { n: c.n, p: c.gp_size, ell_y: grid, ..Gp2dParams::default() };
            if task == ConvergenceTask::Gp2d {
                gen_gp2d(&params, seed)?
            } else {
                gen_gp2d_downscale(&params, c.downscale_q, seed)?
            }
        }
    };
    prepare_splits(&splits, c.ridge)
}

/// Flows `test_points` inputs to each level and summarizes one family on one cell.
fn run_family(
    cfg: &ExperimentConfig,
    data: &Prepared,
    family: &ScoreFamily,
    stream: RngStream,
    mut emit: impl FnMut(f64, [f64; 5], f64),
) -> Result<()> {
    let c = &cfg.convergence;
    let (model, filtration) = calibrate(&ScoreModel::new(family.clone()), &data.train, &data.cal)?;
    let k = c.test_points.min(data.test.len());
    let residuals = data.train.residuals();
    for (ai, &alpha) in c.alphas.iter().enumerate() {
        let tau = filtration.threshold(alpha)?.tau;
        let level = stream.child(ai as u64);
        let mut rng = level.child(0).rng();
        let jobs: Vec<FlowJob> = (0..k)
            .map(|i| {
                let r = &residuals[rng.random_range(0..residuals.len())];
                FlowJob { yhat: &data.test.preds[i], y0: data.test.preds[i].add(r), tau }
            })
            .collect();
        let results = integrate_batch(&model, &jobs, &cfg.flow, level.child(1))
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.with_context(|| format!("alpha {alpha}, test input {i}")))
            .collect::<Result<Vec<_>>>()?;
        let n = results.len() as f64;
        let log_steps = results.iter().map(|r| r.error_after_steps.max(LOG_FLOOR).log10()).sum::<f64>() / n;
        let abs_steps = results.iter().map(|r| r.error_after_steps).sum::<f64>() / n;
        let abs_final = results.iter().map(|r| (r.final_score() - tau).abs()).sum::<f64>() / n;
        let conv = results.iter().filter(|r| r.converged).count() as f64 / n;
        let terminals: Vec<Tensor> = results.into_iter().map(|r| r.terminal).collect();
        let vendi = vendi_ratio(&terminals, &data.test.targets[..k])?;
        emit(alpha, [log_steps, abs_steps, abs_final, conv, if family.is_smooth() { 1.0 } else { 0.0 }], vendi);
    }
    Ok(())
}

pub fn run(cfg: &ExperimentConfig) -> Result<Table> {
    let c = &cfg.convergence;
    let tol = cfg.flow.tolerance;
    let mut table = Table::new(HEADER);
    for (ti, &task) in c.tasks.iter().enumerate() {
        let (grid, families): (Vec<f64>, &[ScoreFamily]) = if task.is_field() {
            (c.ells.clone(), &c.field_families)
        } else {
            (c.dims.iter().map(|&d| d as f64).collect(), &c.vector_families)
        };
        for (gi, &g) in grid.iter().enumerate() {
            let seed = derive_seed(cfg.seed, &[ti as u64, gi as u64]);
            let data = cell_data(cfg, task, g, seed).with_context(|| format!("{} at {g}", task.name()))?;
            for (fi, family) in families.iter().enumerate() {
                let stream = RngStream::new(seed, 1).child(fi as u64);
                run_family(cfg, &data, family, stream, |alpha, v, vendi| {
                    let smooth = v[4] == 1.0;
                    // Smooth families are judged after polishing, the others on the fixed-step error.
                    let judged = if smooth { v[2] } else { v[1] };
                    table.push(vec![
                        task.name().into(),
                        family.name().into(),
                        num(g),
                        num(alpha),
                        num(v[0]),
                        num(v[1]),
                        num(v[2]),
                        num(v[3]),
                        smooth.to_string(),
                        (judged <= tol).to_string(),
                        num(vendi),
                    ]);
                })
                .with_context(|| format!("{} / {} at {g}", task.name(), family.name()))?;
            }
        }
    }
    Ok(table)
}
