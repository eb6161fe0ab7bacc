//! Spread of naive versus repulsed boundary batches.

use anyhow::{ensure, Context, Result};
use conflow::datagen::gen_linear_gaussian;
use conflow::flow::{integrate_batch, FlowJob};
use conflow::numerics::rng::standard_normal_like;
use conflow::repulsion::{mean_nearest_neighbour_distance, min_pairwise_distance, repulse};
use conflow::{RngStream, ScoreFamily, ScoreModel, Tensor};

use crate::config::ExperimentConfig;
use crate::prep::{calibrate, derive_seed, prepare_splits};
use crate::table::{num, Table};

pub const HEADER: &[&str] = &[
    "p",
    "steps",
    "naive_min_pairwise",
    "repulsed_min_pairwise",
    "ratio",
    "naive_mean_nn",
    "repulsed_mean_nn",
    "nn_ratio",
    "max_constraint_error",
    "coincident_pairs",
];

#[derive(Debug, Default, Clone, Copy)]
struct SimResult {
    naive_min: f64,
    repulsed_min: f64,
    naive_nn: f64,
    repulsed_nn: f64,
    max_err: f64,
    coincident: usize,
}

fn simulate(cfg: &ExperimentConfig, p: usize, seed: u64) -> Result<SimResult> {
    let r = &cfg.repulsion_bench;
    let data = prepare_splits(&gen_linear_gaussian(p, r.n, seed)?, r.ridge)?;
    let (model, filtration) = calibrate(&ScoreModel::new(ScoreFamily::L2), &data.train, &data.cal)?;
    let tau = filtration.threshold(r.alpha)?.tau;
    let yhat = &data.test.preds[0];
    // Base measure N(sqrt(p) 1, I), deliberately off-centre.
    let centre = Tensor::filled(&[p], (p as f64).sqrt());
    let mut rng = RngStream::new(seed, 2).rng();
    let jobs: Vec<FlowJob> = (0..r.points)
        .map(|_| FlowJob { yhat, y0: centre.add(&standard_normal_like(&mut rng, &[p])), tau })
        .collect();
    let naive = integrate_batch(&model, &jobs, &cfg.flow, RngStream::new(seed, 3))
        .into_iter()
        .map(|res| res.map(|f| f.terminal))
        .collect::<conflow::Result<Vec<Tensor>>>()?;
    let out = repulse(&naive, &model, yhat, tau, &cfg.repulsion, &cfg.flow, RngStream::new(seed, 4))?;
    let max_err = out
        .batch
        .iter()
        .map(|y| Ok((model.evaluate(yhat, y)? - tau).abs()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(SimResult {
        naive_min: min_pairwise_distance(&naive),
        repulsed_min: min_pairwise_distance(&out.batch),
        naive_nn: mean_nearest_neighbour_distance(&naive),
        repulsed_nn: mean_nearest_neighbour_distance(&out.batch),
        max_err,
        coincident: out.coincident_pairs,
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<Table> {
    let r = &cfg.repulsion_bench;
    ensure!(r.sims >= 1 && r.points >= 2, "repulsion bench needs sims >= 1 and points >= 2");
    let mut table = Table::new(HEADER);
    for (pi, &p) in r.dims.iter().enumerate() {
        let sims = (0..r.sims)
            .map(|s| {
                simulate(cfg, p, derive_seed(cfg.seed, &[pi as u64, s as u64]))
                    .with_context(|| format!("p = {p}, simulation {s}"))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = sims.len() as f64;
        let avg = |f: fn(&SimResult) -> f64| sims.iter().map(f).sum::<f64>() / n;
        let (nm, rm) = (avg(|s| s.naive_min), avg(|s| s.repulsed_min));
        let (nn, rn) = (avg(|s| s.naive_nn), avg(|s| s.repulsed_nn));
        table.push(vec![
            p.to_string(),
            cfg.repulsion.steps.to_string(),
            num(nm),
            num(rm),
            num(rm / nm),
            num(nn),
            num(rn),
            num(rn / nn),
            num(sims.iter().map(|s| s.max_err).fold(0.0, f64::max)),
            sims.iter().map(|s| s.coincident).sum::<usize>().to_string(),
        ]);
    }
    Ok(table)
}
