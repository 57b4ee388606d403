//! The grouped network autoregression likelihood and its normal-inverse-gamma
//! conjugate structure.
//!
//! Each node `i` contributes T−1 observations `Y_it`, t = 2..T, regressed on
//! `X_it = (1, n_i⁻¹ Σ_j a_ij Y_j(t−1), Y_i(t−1), V_iᵀ)`. Within a group the
//! coefficients θ and noise variance σ² are shared, with prior
//! θ | σ² ~ N(τ0, σ²Σ0) and σ² ~ IG(a0, b0).

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::RowNormalizedAdjacency;
use crate::linalg::{cholesky_jittered, log_det, symmetrize};

/// Responses `y` (N×T) and static covariates `v` (N×p).
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    y: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl PanelData {
    pub fn new(y: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        if y.ncols() < 2 {
            return Err(Error::validation(format!(
                "panel needs at least 2 time points, got {}",
                y.ncols()
            )));
        }
        if y.nrows() == 0 {
            return Err(Error::validation("panel has no nodes"));
        }
        if v.nrows() != y.nrows() {
            return Err(Error::validation(format!(
                "covariates have {} rows but responses have {}",
                v.nrows(),
                y.nrows()
            )));
        }
        if let Some(pos) = y.iter().position(|x| !x.is_finite()) {
            return Err(Error::validation(format!(
                "response entry (node {}, time {}) is not finite",
                pos % y.nrows(),
                pos / y.nrows()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("covariates contain non-finite values"));
        }
        Ok(Self { y, v })
    }

    /// Panel without covariates (p = 0).
    pub fn without_covariates(y: DMatrix<f64>) -> Result<Self> {
        let n = y.nrows();
        Self::new(y, DMatrix::zeros(n, 0))
    }

    pub fn n_nodes(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.v.ncols()
    }

    /// Regression dimension p + 3.
    pub fn design_dim(&self) -> usize {
        self.n_covariates() + 3
    }

    pub fn responses(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Time columns `start..end` (0-based, end exclusive) with the same
    /// covariates.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_times() {
            return Err(Error::validation(format!(
                "time window {start}..{end} outside 0..{}",
                self.n_times()
            )));
        }
        Self::new(
            self.y.columns(start, end - start).into_owned(),
            self.v.clone(),
        )
    }
}

/// One node's response vector (Y_i2..Y_iT) and its (T−1)×(p+3) design.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDesign {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
}

impl NodeDesign {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn stats(&self) -> SufficientStats {
        SufficientStats {
            xtx: self.x.tr_mul(&self.x),
            xty: self.x.tr_mul(&self.y),
            yty: self.y.dot(&self.y),
            n_obs: self.n_obs(),
        }
    }
}

pub fn build_node_design(
    panel: &PanelData,
    row_norm: &RowNormalizedAdjacency,
    i: usize,
) -> Result<NodeDesign> {
    check_dims(panel, row_norm)?;
    if i >= panel.n_nodes() {
        return Err(Error::validation(format!(
            "node {i} outside 0..{}",
            panel.n_nodes()
        )));
    }
    let lags = network_lags(panel, row_norm);
    Ok(design_from_lags(panel, &lags, i))
}

/// Designs for every node, sharing the network-lag computation.
pub fn build_designs(
    panel: &PanelData,
    row_norm: &RowNormalizedAdjacency,
) -> Result<Vec<NodeDesign>> {
    check_dims(panel, row_norm)?;
    let lags = network_lags(panel, row_norm);
    Ok((0..panel.n_nodes())
        .map(|i| design_from_lags(panel, &lags, i))
        .collect())
}

fn check_dims(panel: &PanelData, row_norm: &RowNormalizedAdjacency) -> Result<()> {
    if row_norm.n_nodes() != panel.n_nodes() {
        return Err(Error::validation(format!(
            "graph has {} nodes but panel has {}",
            row_norm.n_nodes(),
            panel.n_nodes()
        )));
    }
    Ok(())
}

/// N×T matrix whose column t holds W·Y_t.
pub(crate) fn network_lags(panel: &PanelData, row_norm: &RowNormalizedAdjacency) -> DMatrix<f64> {
    let y = panel.responses();
    let mut out = DMatrix::zeros(y.nrows(), y.ncols());
    for t in 0..y.ncols() {
        let col: Vec<f64> = y.column(t).iter().copied().collect();
        out.set_column(t, &DVector::from_vec(row_norm.apply(&col)));
    }
    out
}

/// Regressor row for node `i` predicting column `t` (t ≥ 1) from column t−1.
pub(crate) fn regressor_row(panel: &PanelData, lags: &DMatrix<f64>, i: usize, t: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(panel.design_dim());
    row.push(1.0);
    row.push(lags[(i, t - 1)]);
    row.push(panel.responses()[(i, t - 1)]);
    row.extend(panel.covariates().row(i).iter().copied());
    row
}

fn design_from_lags(panel: &PanelData, lags: &DMatrix<f64>, i: usize) -> NodeDesign {
    let t_len = panel.n_times();
    let d = panel.design_dim();
    let mut x = DMatrix::zeros(t_len - 1, d);
    for t in 1..t_len {
        for (c, v) in regressor_row(panel, lags, i, t).into_iter().enumerate() {
            x[(t - 1, c)] = v;
        }
    }
    let y = DVector::from_iterator(t_len - 1, panel.responses().row(i).iter().skip(1).copied());
    NodeDesign { y, x }
}

/// Gram blocks XᵀX, XᵀY, YᵀY of one node or a pooled group.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub yty: f64,
    pub n_obs: usize,
}

impl SufficientStats {
    pub fn zeros(dim: usize) -> Self {
        Self {
            xtx: DMatrix::zeros(dim, dim),
            xty: DVector::zeros(dim),
            yty: 0.0,
            n_obs: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.xty.len()
    }

    pub fn add(&mut self, other: &SufficientStats) {
        self.xtx += &other.xtx;
        self.xty += &other.xty;
        self.yty += other.yty;
        self.n_obs += other.n_obs;
    }
}

/// Coefficients θ = (β0, β1, β2, γᵀ)ᵀ and noise variance σ² of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupParams {
    pub theta: DVector<f64>,
    pub sigma2: f64,
}

impl GroupParams {
    pub fn new(theta: DVector<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::validation(format!(
                "noise variance must be positive, got {sigma2}"
            )));
        }
        Ok(Self { theta, sigma2 })
    }

    pub fn beta0(&self) -> f64 {
        self.theta[0]
    }

    pub fn beta1(&self) -> f64 {
        self.theta[1]
    }

    pub fn beta2(&self) -> f64 {
        self.theta[2]
    }

    pub fn gamma(&self) -> &[f64] {
        &self.theta.as_slice()[3..]
    }
}

/// Node log-likelihood −(T−1)/2·log(2πσ²) − ‖Y − Xθ‖²/(2σ²).
pub fn log_likelihood(design: &NodeDesign, params: &GroupParams) -> Result<f64> {
    if params.theta.len() != design.dim() {
        return Err(Error::validation(format!(
            "θ has length {} but the design has {} columns",
            params.theta.len(),
            design.dim()
        )));
    }
    if !(params.sigma2 > 0.0) {
        return Err(Error::validation(format!(
            "noise variance must be positive, got {}",
            params.sigma2
        )));
    }
    let resid = &design.y - &design.x * &params.theta;
    let n = design.n_obs() as f64;
    Ok(-0.5 * n * (2.0 * PI * params.sigma2).ln() - resid.norm_squared() / (2.0 * params.sigma2))
}

/// Same quantity through the Gram blocks: ‖Y − Xθ‖² = YᵀY − 2θᵀXᵀY + θᵀXᵀXθ.
pub fn log_likelihood_stats(stats: &SufficientStats, params: &GroupParams) -> f64 {
    let theta = &params.theta;
    let quad = theta.dot(&(&stats.xtx * theta));
    let sse = (stats.yty - 2.0 * theta.dot(&stats.xty) + quad).max(0.0);
    let n = stats.n_obs as f64;
    -0.5 * n * (2.0 * PI * params.sigma2).ln() - sse / (2.0 * params.sigma2)
}

/// Normal-inverse-gamma base measure plus the gaCRP concentration α.
#[derive(Debug, Clone)]
pub struct NigHyper {
    tau0: DVector<f64>,
    sigma0: DMatrix<f64>,
    a0: f64,
    b0: f64,
    alpha: f64,
    sigma0_inv: DMatrix<f64>,
    sigma0_log_det: f64,
    prec_tau0: DVector<f64>,
    tau0_quad: f64,
}

impl NigHyper {
    pub fn new(
        tau0: DVector<f64>,
        sigma0: DMatrix<f64>,
        a0: f64,
        b0: f64,
        alpha: f64,
    ) -> Result<Self> {
        let d = tau0.len();
        if sigma0.nrows() != d || sigma0.ncols() != d {
            return Err(Error::validation(format!(
                "Σ0 must be {d}x{d}, got {}x{}",
                sigma0.nrows(),
                sigma0.ncols()
            )));
        }
        for (name, v) in [("a0", a0), ("b0", b0), ("alpha", alpha)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        if (&sigma0 - sigma0.transpose()).amax() > 1e-12 * sigma0.amax().max(1.0) {
            return Err(Error::validation("Σ0 is not symmetric"));
        }
        let chol = Cholesky::new(sigma0.clone())
            .ok_or_else(|| Error::validation("Σ0 is not positive definite"))?;
        let sigma0_inv = chol.inverse();
        let prec_tau0 = &sigma0_inv * &tau0;
        let tau0_quad = tau0.dot(&prec_tau0);
        Ok(Self {
            sigma0_log_det: log_det(&chol),
            tau0,
            sigma0,
            a0,
            b0,
            alpha,
            sigma0_inv,
            prec_tau0,
            tau0_quad,
        })
    }

    /// τ0 = 0, Σ0 = 100·I, a0 = b0 = 0.01, α = 1.
    pub fn default_for(dim: usize) -> Self {
        Self::isotropic(dim, 0.0, 100.0, 0.01, 0.01, 1.0).expect("default prior is valid")
    }

    /// τ0 filled with `tau_fill`, Σ0 = `scale`·I.
    pub fn isotropic(
        dim: usize,
        tau_fill: f64,
        scale: f64,
        a0: f64,
        b0: f64,
        alpha: f64,
    ) -> Result<Self> {
        Self::new(
            DVector::from_element(dim, tau_fill),
            DMatrix::identity(dim, dim) * scale,
            a0,
            b0,
            alpha,
        )
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.tau0.clone(), self.sigma0.clone(), self.a0, self.b0, alpha)
    }

    pub fn dim(&self) -> usize {
        self.tau0.len()
    }

    pub fn tau0(&self) -> &DVector<f64> {
        &self.tau0
    }

    pub fn sigma0(&self) -> &DMatrix<f64> {
        &self.sigma0
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Log density of NIG(τ0, Σ0, a0, b0) at (θ, σ²).
    pub fn log_prior_density(&self, params: &GroupParams) -> f64 {
        let d = self.dim() as f64;
        let diff = &params.theta - &self.tau0;
        let quad = diff.dot(&(&self.sigma0_inv * &diff));
        self.a0 * self.b0.ln()
            - 0.5 * d * (2.0 * PI).ln()
            - 0.5 * self.sigma0_log_det
            - ln_gamma(self.a0)
            - (self.a0 + 0.5 * d + 1.0) * params.sigma2.ln()
            - (self.b0 + 0.5 * quad) / params.sigma2
    }
}

/// Conjugate posterior NIG(τ*, Σ*, a*, b*).
#[derive(Debug, Clone)]
pub struct NigPosterior {
    pub tau_star: DVector<f64>,
    pub sigma_star: DMatrix<f64>,
    pub a_star: f64,
    pub b_star: f64,
    log_det_sigma_star: f64,
    sigma_chol: Cholesky<f64, Dyn>,
}

impl NigPosterior {
    /// Assemble from explicit parameters; Σ* is factorized here.
    pub fn from_parts(
        tau_star: DVector<f64>,
        sigma_star: DMatrix<f64>,
        a_star: f64,
        b_star: f64,
    ) -> Result<Self> {
        if !(a_star > 0.0) || !(b_star > 0.0) {
            return Err(Error::numerical(format!(
                "posterior shape/scale must be positive, got a* = {a_star}, b* = {b_star}"
            )));
        }
        if sigma_star.nrows() != tau_star.len() || !sigma_star.is_square() {
            return Err(Error::validation("Σ* dimensions do not match τ*"));
        }
        let sigma_chol = cholesky_jittered(&sigma_star)?;
        Ok(Self {
            log_det_sigma_star: log_det(&sigma_chol),
            tau_star,
            sigma_star,
            a_star,
            b_star,
            sigma_chol,
        })
    }

    pub fn log_det_sigma_star(&self) -> f64 {
        self.log_det_sigma_star
    }

    /// Lower Cholesky factor L with Σ* = L Lᵀ.
    pub fn sigma_chol_l(&self) -> DMatrix<f64> {
        self.sigma_chol.l()
    }
}

pub fn nig_posterior(designs: &[&NodeDesign], hyper: &NigHyper) -> Result<NigPosterior> {
    let mut stats = SufficientStats::zeros(hyper.dim());
    for d in designs {
        if d.dim() != hyper.dim() {
            return Err(Error::validation(format!(
                "design has {} columns but the prior has dimension {}",
                d.dim(),
                hyper.dim()
            )));
        }
        stats.add(&d.stats());
    }
    nig_posterior_stats(&stats, hyper)
}

/// Posterior from pooled Gram blocks. An empty group returns the prior.
pub fn nig_posterior_stats(stats: &SufficientStats, hyper: &NigHyper) -> Result<NigPosterior> {
    if stats.dim() != hyper.dim() {
        return Err(Error::validation(format!(
            "statistics have dimension {} but the prior has {}",
            stats.dim(),
            hyper.dim()
        )));
    }
    if stats.n_obs == 0 {
        return NigPosterior::from_parts(
            hyper.tau0.clone(),
            hyper.sigma0.clone(),
            hyper.a0,
            hyper.b0,
        );
    }
    let precision = &hyper.sigma0_inv + &stats.xtx;
    let prec_chol = cholesky_jittered(&precision)?;
    let rhs = &hyper.prec_tau0 + &stats.xty;
    let tau_star = prec_chol.solve(&rhs);
    let mut sigma_star = prec_chol.inverse();
    symmetrize(&mut sigma_star);
    let a_star = hyper.a0 + 0.5 * stats.n_obs as f64;
    // τ*ᵀ Σ*⁻¹ τ* = τ*ᵀ (Σ0⁻¹τ0 + XᵀY).
    let b_star = hyper.b0 + 0.5 * (hyper.tau0_quad + stats.yty - tau_star.dot(&rhs));
    if !(b_star > 0.0) || !b_star.is_finite() {
        return Err(Error::numerical(format!(
            "posterior scale b* = {b_star} is not positive"
        )));
    }
    let sigma_chol = cholesky_jittered(&sigma_star)?;
    Ok(NigPosterior {
        // log|Σ*| = −log|Σ*⁻¹|, taken from the precision factor.
        log_det_sigma_star: -log_det(&prec_chol),
        tau_star,
        sigma_star,
        a_star,
        b_star,
        sigma_chol,
    })
}

/// log g: the marginal density of a node's responses with (θ, σ²)
/// integrated against the prior.
pub fn log_marginal_likelihood(design: &NodeDesign, hyper: &NigHyper) -> Result<f64> {
    if design.dim() != hyper.dim() {
        return Err(Error::validation(format!(
            "design has {} columns but the prior has dimension {}",
            design.dim(),
            hyper.dim()
        )));
    }
    log_marginal_stats(&design.stats(), hyper)
}

/// log g for pooled Gram blocks (any number of nodes).
pub fn log_marginal_stats(stats: &SufficientStats, hyper: &NigHyper) -> Result<f64> {
    let post = nig_posterior_stats(stats, hyper)?;
    Ok(log_marginal_from_posterior(&post, hyper, stats.n_obs))
}

pub(crate) fn log_marginal_from_posterior(post: &NigPosterior, hyper: &NigHyper, n_obs: usize) -> f64 {
    let half_n = 0.5 * n_obs as f64;
    hyper.a0 * hyper.b0.ln() - post.a_star * post.b_star.ln() + ln_gamma(post.a_star)
        - ln_gamma(hyper.a0)
        + 0.5 * (post.log_det_sigma_star - hyper.sigma0_log_det)
        - half_n * (2.0 * PI).ln()
}
