//! Post-MCMC summaries: Dahl's least-squares draw selection, LPML for
//! choosing h, node-level posterior samples and one-step-ahead prediction.

mod metrics;

pub use metrics::{adjusted_rand_index, hpd_interval, remspe, rmse_params, RmseReport};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::RowNormalizedAdjacency;
use crate::model::{network_lags, regressor_row, GroupParams, PanelData};
use crate::sampler::{run_chain_prepared, ChainDraws, PreparedData, SamplerConfig};

/// Co-membership indicator matrix b_ij = I(z_i = z_j).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoMembership {
    n: usize,
    b: Vec<bool>,
}

impl CoMembership {
    pub fn from_labels(z: &[usize]) -> Self {
        let n = z.len();
        let mut b = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                b[i * n + j] = z[i] == z[j];
            }
        }
        Self { n, b }
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.b[i * self.n + j]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| if self.get(i, j) { 1.0 } else { 0.0 })
    }
}

/// The point estimate: the state of the Dahl-selected draw plus summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub z_hat: Vec<usize>,
    pub k_hat: usize,
    pub params_hat: Vec<GroupParams>,
    /// 0-based position of the selected draw among the recorded draws.
    pub draw_index: usize,
    /// Iteration number of the selected draw.
    pub iteration: usize,
    /// ‖B^(m_b) − B̄‖²_F.
    pub dahl_loss: f64,
    pub lpml: f64,
    pub mean_comembership: DMatrix<f64>,
}

impl FitResult {
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k_hat];
        for &k in &self.z_hat {
            sizes[k] += 1;
        }
        sizes
    }

    /// Parameters of each node's estimated group.
    pub fn node_params(&self) -> Vec<GroupParams> {
        self.z_hat.iter().map(|&k| self.params_hat[k].clone()).collect()
    }
}

/// B̄ = M⁻¹ Σ_m B^(m).
pub fn mean_comembership(draws: &ChainDraws) -> Result<DMatrix<f64>> {
    let counts = pair_counts(draws)?;
    let n = draws.n_nodes;
    let m = draws.len() as f64;
    Ok(DMatrix::from_fn(n, n, |i, j| counts[i * n + j] as f64 / m))
}

/// c_ij = number of draws with z_i = z_j, row-major.
fn pair_counts(draws: &ChainDraws) -> Result<Vec<u64>> {
    if draws.is_empty() {
        return Err(Error::validation("no recorded draws"));
    }
    let n = draws.n_nodes;
    let mut counts = vec![0u64; n * n];
    for d in &draws.draws {
        check_draw_len(d.z.len(), n)?;
        for i in 0..n {
            for j in 0..n {
                if d.z[i] == d.z[j] {
                    counts[i * n + j] += 1;
                }
            }
        }
    }
    Ok(counts)
}

fn check_draw_len(len: usize, n: usize) -> Result<()> {
    if len != n {
        return Err(Error::validation(format!(
            "draw has {len} labels but the chain has {n} nodes"
        )));
    }
    Ok(())
}

/// M²·‖B − B̄‖²_F = Σ_ij (M·b_ij − c_ij)², exact in integers so that ties
/// between draws are exact too.
fn scaled_loss(z: &[usize], counts: &[u64], m: u64) -> u128 {
    let n = z.len();
    let mut loss = 0u128;
    for i in 0..n {
        for j in 0..n {
            let b = if z[i] == z[j] { m } else { 0 };
            let diff = b.abs_diff(counts[i * n + j]) as u128;
            loss += diff * diff;
        }
    }
    loss
}

/// Pick the draw whose co-membership matrix is closest to B̄ in squared
/// Frobenius norm; ties go to the earliest draw.
pub fn dahl_select(draws: &ChainDraws) -> Result<FitResult> {
    let counts = pair_counts(draws)?;
    let m = draws.len() as u64;
    let mut best = (0, u128::MAX);
    for (idx, d) in draws.draws.iter().enumerate() {
        let loss = scaled_loss(&d.z, &counts, m);
        if loss < best.1 {
            best = (idx, loss);
        }
    }
    let n = draws.n_nodes;
    let mean = DMatrix::from_fn(n, n, |i, j| counts[i * n + j] as f64 / m as f64);
    let chosen = &draws.draws[best.0];
    Ok(FitResult {
        z_hat: chosen.z.clone(),
        k_hat: chosen.n_groups(),
        params_hat: chosen.params.clone(),
        draw_index: best.0,
        iteration: chosen.iteration,
        dahl_loss: best.1 as f64 / (m as f64 * m as f64),
        lpml: lpml(draws)?,
        mean_comembership: mean,
    })
}

/// Harmonic-mean estimate of log CPO_i for every node:
/// log CPO_i = −[logsumexp_m(−log L_i^(m)) − log M].
pub fn log_cpo(draws: &ChainDraws) -> Result<Vec<f64>> {
    if draws.is_empty() {
        return Err(Error::validation("no recorded draws"));
    }
    let n = draws.n_nodes;
    let m = draws.len() as f64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut max = f64::NEG_INFINITY;
        for d in &draws.draws {
            check_draw_len(d.loglik.len(), n)?;
            let v = -d.loglik[i];
            if !v.is_finite() {
                return Err(Error::numerical(format!(
                    "non-finite log-likelihood for node {} at iteration {}",
                    i + 1,
                    d.iteration
                )));
            }
            max = max.max(v);
        }
        let sum: f64 = draws.draws.iter().map(|d| (-d.loglik[i] - max).exp()).sum();
        out.push(-(max + sum.ln() - m.ln()));
    }
    Ok(out)
}

/// LPML = Σ_i log CPO_i.
pub fn lpml(draws: &ChainDraws) -> Result<f64> {
    Ok(log_cpo(draws)?.iter().sum())
}

/// One row of the h-selection table.
#[derive(Debug, Clone, PartialEq)]
pub struct LpmlRow {
    pub h: f64,
    pub lpml: f64,
    pub k_hat: usize,
}

#[derive(Debug, Clone)]
pub struct HSelection {
    pub best_h: f64,
    pub table: Vec<LpmlRow>,
    pub best_fit: FitResult,
    pub best_draws: ChainDraws,
}

/// The smoothing grid {0, 0.2, …, 5.0}.
pub fn default_h_grid() -> Vec<f64> {
    (0..=25).map(|k| k as f64 / 5.0).collect()
}

/// Run one chain per h (in parallel) and keep the LPML maximizer; ties go
/// to the smallest h. Every chain uses `base.rng_seed`.
pub fn select_h(data: &PreparedData, h_grid: &[f64], base: &SamplerConfig) -> Result<HSelection> {
    if h_grid.is_empty() {
        return Err(Error::validation("empty h grid"));
    }
    let runs: Vec<(f64, FitResult, ChainDraws)> = h_grid
        .par_iter()
        .map(|&h| {
            let cfg = SamplerConfig { h, ..base.clone() };
            let draws = run_chain_prepared(&cfg, data).map_err(|e| e.context(format!("h = {h}")))?;
            let fit = dahl_select(&draws).map_err(|e| e.context(format!("h = {h}")))?;
            Ok((h, fit, draws))
        })
        .collect::<Result<_>>()?;
    let table = runs
        .iter()
        .map(|(h, fit, _)| LpmlRow {
            h: *h,
            lpml: fit.lpml,
            k_hat: fit.k_hat,
        })
        .collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| {
            if b.1.lpml > a.1.lpml || (b.1.lpml == a.1.lpml && b.0 < a.0) {
                b
            } else {
                a
            }
        })
        .expect("grid is nonempty");
    Ok(HSelection {
        best_h: best.0,
        table,
        best_fit: best.1,
        best_draws: best.2,
    })
}

/// Which node-level quantity to collect across draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeParam {
    /// Entry `k` of θ (0 = β0, 1 = β1, 2 = β2, 3.. = γ).
    Coefficient(usize),
    Sigma2,
}

/// The value of `which` for node `i`'s group in every draw.
pub fn node_param_samples(draws: &ChainDraws, node: usize, which: NodeParam) -> Result<Vec<f64>> {
    if node >= draws.n_nodes {
        return Err(Error::validation(format!(
            "node {node} outside 0..{}",
            draws.n_nodes
        )));
    }
    draws
        .draws
        .iter()
        .map(|d| {
            let p = &d.params[d.z[node]];
            match which {
                NodeParam::Sigma2 => Ok(p.sigma2),
                NodeParam::Coefficient(k) => p.theta.get(k).copied().ok_or_else(|| {
                    Error::validation(format!("coefficient {k} outside θ of length {}", p.theta.len()))
                }),
            }
        })
        .collect()
}

/// One-step-ahead plug-in predictions Ŷ_it = X_itᵀ θ̂_{ẑ_i} for time columns
/// `start..end` (0-based) of `panel`, using observed lags.
pub fn predict(
    fit: &FitResult,
    panel: &PanelData,
    row_norm: &RowNormalizedAdjacency,
    start: usize,
    end: usize,
) -> Result<DMatrix<f64>> {
    if start < 1 || start >= end || end > panel.n_times() {
        return Err(Error::validation(format!(
            "test window {start}..{end} must lie inside 1..{}",
            panel.n_times()
        )));
    }
    if fit.z_hat.len() != panel.n_nodes() || row_norm.n_nodes() != panel.n_nodes() {
        return Err(Error::validation("fit, graph and panel disagree on node count"));
    }
    if fit.params_hat.iter().any(|p| p.theta.len() != panel.design_dim()) {
        return Err(Error::validation("fitted coefficients do not match the design dimension"));
    }
    let lags = network_lags(panel, row_norm);
    let mut out = DMatrix::zeros(panel.n_nodes(), end - start);
    for i in 0..panel.n_nodes() {
        let theta = &fit.params_hat[fit.z_hat[i]].theta;
        for t in start..end {
            let x = regressor_row(panel, &lags, i, t);
            out[(i, t - start)] = x.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
        }
    }
    Ok(out)
}
