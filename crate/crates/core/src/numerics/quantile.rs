use crate::error::{Error, Result};

/// Weighted quantile: sort `(value, weight)` pairs ascending by value (stable on ties)
/// and return the first value whose cumulative weight reaches `level`.
///
/// Weights are normalized by their sum, so any nonnegative vector with positive mass
/// is accepted.
pub fn weighted_quantile(values: &[f64], weights: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("weighted_quantile values"));
    }
    if weights.len() != values.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![values.len()],
            got: vec![weights.len()],
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level {level} outside (0,1)")));
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidArgument("negative or non-finite weight".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("weights have zero mass".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

    // Rounding guard so that e.g. k equal weights of 1/n reach k/n exactly.
    let target = level * total - 4.0 * f64::EPSILON * values.len() as f64 * total;
    let mut cum = 0.0;
    for &i in &order {
        cum += weights[i];
        if cum >= target {
            return Ok(values[i]);
        }
    }
    Ok(values[*order.last().unwrap()])
}

/// Unweighted empirical quantile with the same "first cumulative >= level" rule.
pub fn empirical_quantile(values: &[f64], level: f64) -> Result<f64> {
    let w = vec![1.0; values.len()];
    weighted_quantile(values, &w, level)
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Median absolute deviation `median(|v - median(v)|)`, unscaled.
pub fn mad(values: &[f64]) -> Result<f64> {
    let m = median(values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

/// `k`-th smallest value (1-based) of an unsorted slice.
pub fn order_statistic(values: &[f64], k: usize) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("order_statistic"));
    }
    if k == 0 || k > values.len() {
        return Err(Error::InvalidArgument(format!(
            "order statistic {k} out of range 1..={}",
            values.len()
        )));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v[k - 1])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}
