//! Shared experiment plumbing: seeds, data, stand-in predictions and scores.

use anyhow::{Context, Result};
use conflow::datagen::{
    fit_ridge, gen_gp1d, gen_gp2d, gen_gp2d_downscale, gen_linear_gaussian, gen_linear_student_t,
    gen_trajectories, Dataset, Split, Splits,
};
use conflow::{Filtration, RngStream, ScoreModel, Tensor};
use rand::RngCore;

use crate::config::DataSpec;
use crate::tensor_file::read_bank;

/// Seed for the experiment cell addressed by `path`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let stream = path.iter().fold(RngStream::new(seed, 0xCE11), |s, &i| s.child(i));
    stream.rng().next_u64()
}

/// Paired predictions and targets for one split.
#[derive(Debug, Clone)]
pub struct Pairs {
    pub preds: Vec<Tensor>,
    pub targets: Vec<Tensor>,
}

impl Pairs {
    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }

    pub fn residuals(&self) -> Vec<Tensor> {
        self.targets.iter().zip(&self.preds).map(|(y, p)| y.sub(p)).collect()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Pairs {
        Pairs { preds: self.preds[range.clone()].to_vec(), targets: self.targets[range].to_vec() }
    }

    pub fn scores(&self, model: &ScoreModel) -> Result<Vec<f64>> {
        self.preds
            .iter()
            .zip(&self.targets)
            .map(|(p, y)| Ok(model.evaluate(p, y)?))
            .collect()
    }
}

/// Train, calibration and test pairs with predictions from the stand-in model.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Pairs,
    pub cal: Pairs,
    pub test: Pairs,
}

fn predict(ds: &Dataset, fit: &conflow::datagen::LinearPredictor) -> Result<Pairs> {
    Ok(Pairs { preds: fit.predict_all(&ds.x)?, targets: ds.y.clone() })
}

/// Fits ridge on the training split and predicts every split.
pub fn prepare_splits(splits: &Splits, ridge: f64) -> Result<Prepared> {
    let fit = fit_ridge(&splits.train, ridge).context("fitting the ridge stand-in")?;
    Ok(Prepared {
        train: predict(splits.get(Split::Train), &fit)?,
        cal: predict(splits.get(Split::Cal), &fit)?,
        test: predict(splits.get(Split::Test), &fit)?,
    })
}

pub fn generate(spec: &DataSpec, seed: u64) -> Result<Splits> {
    Ok(match spec {
        DataSpec::LinearGaussian { p, n } => gen_linear_gaussian(*p, *n, seed)?,
        DataSpec::LinearStudentT { p, n } => gen_linear_student_t(*p, *n, seed)?,
        DataSpec::Gp1d(params) => gen_gp1d(params, seed)?,
        DataSpec::Gp2d(params) => gen_gp2d(params, seed)?,
        DataSpec::Gp2dDownscale { params, q } => gen_gp2d_downscale(params, *q, seed)?,
        DataSpec::Trajectories { n, t, noise } => gen_trajectories(*n, *t, *noise, seed)?.data,
        DataSpec::External { .. } => anyhow::bail!("external data has no generator"),
    })
}

/// Pairs for any data spec. External banks are used as given: calibration pairs
/// double as the score-fitting pairs and test targets may be absent.
pub fn prepare(spec: &DataSpec, seed: u64, ridge: f64) -> Result<Prepared> {
    match spec {
        DataSpec::External { cal_predictions, cal_targets, predictions, targets } => {
            let cal = Pairs { preds: read_bank(cal_predictions)?, targets: read_bank(cal_targets)? };
            anyhow::ensure!(cal.preds.len() == cal.targets.len(), "calibration banks differ in length");
            let test_preds = match predictions {
                Some(p) => read_bank(p)?,
                None => cal.preds.clone(),
            };
            let test_targets = match targets {
                Some(t) => read_bank(t)?,
                None => Vec::new(),
            };
            Ok(Prepared {
                train: cal.clone(),
                cal,
                test: Pairs { preds: test_preds, targets: test_targets },
            })
        }
        DataSpec::Trajectories { n, t, noise } => {
            // The stand-in prediction is the noisy copy of each horizon.
            let set = gen_trajectories(*n, *t, *noise, seed)?;
            Ok(Prepared {
                train: Pairs { preds: set.train_predictions, targets: set.data.train.y },
                cal: Pairs { preds: set.cal_predictions, targets: set.data.cal.y },
                test: Pairs { preds: set.test_predictions, targets: set.data.test.y },
            })
        }
        _ => prepare_splits(&generate(spec, seed)?, ridge),
    }
}

/// Fits the score on `fit_pairs` and builds the filtration on `cal`.
pub fn calibrate(model: &ScoreModel, fit_pairs: &Pairs, cal: &Pairs) -> Result<(ScoreModel, Filtration)> {
    let fitted = model
        .fit(&fit_pairs.preds, &fit_pairs.targets)
        .with_context(|| format!("fitting the {} score", model.family.name()))?;
    let filtration = Filtration::from_scores(&cal.scores(&fitted)?)?;
    Ok((fitted, filtration))
}
