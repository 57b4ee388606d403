//! Evaluation metrics: partition agreement, parameter RMSE, relative
//! prediction error and HPD intervals.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::GroupParams;

fn choose2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index from the pair-counting contingency table, with the
/// hypergeometric expected index.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "partitions have different lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Ok(1.0);
    }
    let mut cells: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *cells.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = cells.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(n);
    let max_index = 0.5 * (sum_a + sum_b);
    if max_index == expected {
        // Both partitions are all-singletons or both are one block.
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

/// Root mean squared errors over replicates and nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmseReport {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Uses the squared Euclidean norm over the whole γ vector.
    pub gamma: f64,
    pub sigma2: f64,
}

/// `estimates[r][i]` and `truths[r][i]` are node-aligned parameters of node
/// `i` in replicate `r`.
pub fn rmse_params(
    estimates: &[Vec<GroupParams>],
    truths: &[Vec<GroupParams>],
) -> Result<RmseReport> {
    if estimates.len() != truths.len() || estimates.is_empty() {
        return Err(Error::validation(format!(
            "need matching nonempty replicate lists, got {} estimates and {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    let mut sums = [0.0; 5];
    let mut count = 0usize;
    for (r, (est, tru)) in estimates.iter().zip(truths).enumerate() {
        if est.len() != tru.len() {
            return Err(Error::validation(format!(
                "replicate {r}: {} estimated nodes vs {} true nodes",
                est.len(),
                tru.len()
            )));
        }
        for (e, t) in est.iter().zip(tru) {
            if e.theta.len() != t.theta.len() || e.theta.len() < 3 {
                return Err(Error::validation(format!(
                    "replicate {r}: coefficient vectors of length {} and {}",
                    e.theta.len(),
                    t.theta.len()
                )));
            }
            for s in 0..3 {
                sums[s] += (e.theta[s] - t.theta[s]).powi(2);
            }
            sums[3] += e
                .gamma()
                .iter()
                .zip(t.gamma())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>();
            sums[4] += (e.sigma2 - t.sigma2).powi(2);
            count += 1;
        }
    }
    let rms = |s: f64| (s / count as f64).sqrt();
    Ok(RmseReport {
        beta0: rms(sums[0]),
        beta1: rms(sums[1]),
        beta2: rms(sums[2]),
        gamma: rms(sums[3]),
        sigma2: rms(sums[4]),
    })
}

/// MSPE of `y_hat` over the test window divided by the MSPE of the
/// per-node training means.
pub fn remspe(y_test: &DMatrix<f64>, y_hat: &DMatrix<f64>, y_train: &DMatrix<f64>) -> Result<f64> {
    if y_test.shape() != y_hat.shape() {
        return Err(Error::validation(format!(
            "test block is {:?} but predictions are {:?}",
            y_test.shape(),
            y_hat.shape()
        )));
    }
    if y_train.nrows() != y_test.nrows() || y_train.ncols() == 0 {
        return Err(Error::validation(
            "training block must have the same nodes and at least one column",
        ));
    }
    let mut mspe = 0.0;
    let mut mspe0 = 0.0;
    for i in 0..y_test.nrows() {
        let mu = y_train.row(i).mean();
        for t in 0..y_test.ncols() {
            mspe += (y_hat[(i, t)] - y_test[(i, t)]).powi(2);
            mspe0 += (y_test[(i, t)] - mu).powi(2);
        }
    }
    // Both share the (N T_test)⁻¹ factor.
    if mspe0 == 0.0 {
        return Err(Error::numerical(
            "baseline MSPE is zero; the test responses equal the training means",
        ));
    }
    Ok(mspe / mspe0)
}

/// Shortest interval between sorted samples that contains ⌈mass·n⌉ of them.
/// Ties go to the leftmost window.
pub fn hpd_interval(samples: &[f64], mass: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::validation("HPD interval of an empty sample"));
    }
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::validation(format!("HPD mass must lie in (0, 1), got {mass}")));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::validation("HPD sample contains NaN"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let m = ((mass * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut best = (sorted[0], sorted[m - 1]);
    for start in 1..=(n - m) {
        let lo = sorted[start];
        let hi = sorted[start + m - 1];
        if hi - lo < best.1 - best.0 {
            best = (lo, hi);
        }
    }
    Ok(best)
}
