//! Collapsed Gibbs sampler over node memberships and group parameters.
//!
//! One iteration visits every node, detaches it from its group, and redraws
//! its label from
//!
//! ```text
//! P(z_i = k)       ∝ κ_k · f(Y_(i); X_(i), θ_k, σ_k²),   κ_k = Σ_{j≠i} w_ij I(z_j = k)
//! P(z_i = new)     ∝ α · g(Y_(i))
//! ```
//!
//! where `g` is the NIG marginal likelihood. A newly opened group gets
//! parameters drawn from its single-node posterior straight away. After the
//! membership pass every group's (θ, σ²) is redrawn from its conjugate
//! posterior.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::{
    build_weights_with_limit, row_normalized_adjacency, shortest_path_distances,
    AdjacencyMatrix, DistanceMatrix, RowNormalizedAdjacency, WeightMatrix,
    DEFAULT_DENSE_WEIGHT_LIMIT,
};
use crate::model::{
    build_designs, log_likelihood_stats, log_marginal_stats, nig_posterior_stats, GroupParams,
    NigHyper, NigPosterior, NodeDesign, PanelData, SufficientStats,
};

/// Order in which a sweep visits nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VisitOrder {
    #[default]
    Sequential,
    /// A fresh random permutation every sweep.
    Shuffled,
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub total_iters: usize,
    pub burn_in: usize,
    pub rng_seed: u64,
    pub hyper: NigHyper,
    pub h: f64,
    pub visit_order: VisitOrder,
    pub dense_weight_limit: usize,
}

impl SamplerConfig {
    /// 1500 iterations with 500 burn-in, default prior of dimension `dim`.
    pub fn new(dim: usize, h: f64, rng_seed: u64) -> Self {
        Self {
            total_iters: 1500,
            burn_in: 500,
            rng_seed,
            hyper: NigHyper::default_for(dim),
            h,
            visit_order: VisitOrder::Sequential,
            dense_weight_limit: DEFAULT_DENSE_WEIGHT_LIMIT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.total_iters {
            return Err(Error::validation(format!(
                "burn-in ({}) must be smaller than the total iterations ({})",
                self.burn_in, self.total_iters
            )));
        }
        if !(self.h >= 0.0) || !self.h.is_finite() {
            return Err(Error::validation(format!("invalid smoothing scale h = {}", self.h)));
        }
        Ok(())
    }

    pub fn recorded_draws(&self) -> usize {
        self.total_iters - self.burn_in
    }
}

/// Current memberships and group parameters of one chain.
///
/// Labels are 0-based and contiguous. While a node is detached during a
/// sweep its entry in `z` is stale and it counts towards no group.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    z: Vec<usize>,
    params: Vec<GroupParams>,
    sizes: Vec<usize>,
    detached: Option<usize>,
}

impl ChainState {
    pub fn single_group(n: usize, params: GroupParams) -> Self {
        Self {
            z: vec![0; n],
            params: vec![params],
            sizes: vec![n],
            detached: None,
        }
    }

    /// Build from explicit labels; labels must cover 0..params.len().
    pub fn from_labels(z: Vec<usize>, params: Vec<GroupParams>) -> Result<Self> {
        let mut sizes = vec![0; params.len()];
        for (i, &k) in z.iter().enumerate() {
            if k >= params.len() {
                return Err(Error::validation(format!(
                    "node {i} has label {k} but only {} groups have parameters",
                    params.len()
                )));
            }
            sizes[k] += 1;
        }
        if let Some(k) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::validation(format!("group {k} is empty")));
        }
        Ok(Self {
            z,
            params,
            sizes,
            detached: None,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.z.len()
    }

    pub fn n_groups(&self) -> usize {
        self.params.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.z
    }

    pub fn params(&self) -> &[GroupParams] {
        &self.params
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn detached(&self) -> Option<usize> {
        self.detached
    }

    /// Remove node `i` from its group, dropping the group if it empties, and
    /// relabel the remaining groups by first appearance.
    pub fn detach(&mut self, i: usize) {
        assert!(self.detached.is_none(), "a node is already detached");
        let c = self.z[i];
        self.sizes[c] -= 1;
        self.detached = Some(i);
        if self.sizes[c] == 0 {
            self.sizes.remove(c);
            self.params.remove(c);
            for (j, zj) in self.z.iter_mut().enumerate() {
                if j != i && *zj > c {
                    *zj -= 1;
                }
            }
        }
        self.canonicalize();
    }

    /// Put the detached node `i` into group `k`; `k == n_groups()` opens a
    /// new group carrying `new_params`.
    pub fn attach(&mut self, i: usize, k: usize, new_params: Option<GroupParams>) {
        assert_eq!(self.detached, Some(i), "node {i} is not detached");
        if k == self.n_groups() {
            self.params
                .push(new_params.expect("a new group needs parameters"));
            self.sizes.push(1);
        } else {
            self.sizes[k] += 1;
        }
        self.z[i] = k;
        self.detached = None;
    }

    /// Relabel groups in order of first appearance over attached nodes.
    pub fn canonicalize(&mut self) {
        const UNSEEN: usize = usize::MAX;
        let k = self.n_groups();
        let mut map = vec![UNSEEN; k];
        let mut next = 0;
        for (j, zj) in self.z.iter_mut().enumerate() {
            if Some(j) == self.detached {
                continue;
            }
            if map[*zj] == UNSEEN {
                map[*zj] = next;
                next += 1;
            }
            *zj = map[*zj];
        }
        debug_assert_eq!(next, k, "every group must have a member");
        if map.iter().enumerate().all(|(a, &b)| a == b) {
            return;
        }
        let mut params: Vec<Option<GroupParams>> = self.params.drain(..).map(Some).collect();
        let mut new_params = vec![None; k];
        let mut new_sizes = vec![0; k];
        for old in 0..k {
            new_params[map[old]] = params[old].take();
            new_sizes[map[old]] = self.sizes[old];
        }
        self.params = new_params.into_iter().map(Option::unwrap).collect();
        self.sizes = new_sizes;
    }

    /// Labels contiguous, groups nonempty, sizes consistent, no node detached.
    pub fn check_invariants(&self) -> Result<()> {
        if self.detached.is_some() {
            return Err(Error::validation("a node is still detached"));
        }
        if self.params.len() != self.sizes.len() {
            return Err(Error::validation("parameter and size lists disagree"));
        }
        let mut counts = vec![0; self.n_groups()];
        for &k in &self.z {
            if k >= counts.len() {
                return Err(Error::validation(format!("label {k} out of range")));
            }
            counts[k] += 1;
        }
        if counts != self.sizes || counts.contains(&0) {
            return Err(Error::validation("group sizes inconsistent with labels"));
        }
        Ok(())
    }
}

/// Normalized membership probabilities for one detached node, with the
/// intermediate κ values and log-weights. The last entry is the new group.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipConditional {
    pub kappa: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub probs: Vec<f64>,
}

/// The fixed inputs of a sweep: closeness weights, prior, per-node Gram
/// blocks and the cached new-group terms log α + log g_i.
#[derive(Debug, Clone)]
pub struct GibbsKernel<'a> {
    weights: &'a WeightMatrix,
    hyper: &'a NigHyper,
    stats: &'a [SufficientStats],
    log_new_group: Vec<f64>,
}

impl<'a> GibbsKernel<'a> {
    pub fn new(
        weights: &'a WeightMatrix,
        hyper: &'a NigHyper,
        stats: &'a [SufficientStats],
    ) -> Result<Self> {
        if weights.n_nodes() != stats.len() {
            return Err(Error::validation(format!(
                "weights cover {} nodes but {} node designs were given",
                weights.n_nodes(),
                stats.len()
            )));
        }
        let log_alpha = hyper.alpha().ln();
        let log_new_group = stats
            .iter()
            .enumerate()
            .map(|(i, s)| {
                log_marginal_stats(s, hyper)
                    .map(|g| log_alpha + g)
                    .map_err(|e| e.context(format!("node {i}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            weights,
            hyper,
            stats,
            log_new_group,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.stats.len()
    }

    /// κ_k = Σ_{j≠i} w_ij I(z_j = k) over the groups of `state`, which must
    /// have node `i` detached.
    pub fn kappa(&self, i: usize, state: &ChainState) -> Vec<f64> {
        let mut kappa = vec![0.0; state.n_groups()];
        for (j, w) in self.weights.row(i) {
            if Some(j) != state.detached {
                kappa[state.z[j]] += w;
            }
        }
        kappa
    }

    pub fn membership_conditional(
        &self,
        i: usize,
        state: &ChainState,
    ) -> Result<MembershipConditional> {
        if state.detached != Some(i) {
            return Err(Error::validation(format!(
                "node {i} must be detached before computing its conditional"
            )));
        }
        let kappa = self.kappa(i, state);
        let stats = &self.stats[i];
        let mut log_weights: Vec<f64> = kappa
            .iter()
            .zip(&state.params)
            .map(|(&k, p)| {
                if k > 0.0 {
                    k.ln() + log_likelihood_stats(stats, p)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        log_weights.push(self.log_new_group[i]);
        let probs = normalize_log_weights(&log_weights).ok_or_else(|| {
            Error::numerical(format!("membership weights of node {i} are all zero or non-finite"))
        })?;
        Ok(MembershipConditional {
            kappa,
            log_weights,
            probs,
        })
    }

    /// Membership pass over `order`, followed by nothing else; see
    /// [`GibbsKernel::refresh_params`].
    pub fn update_memberships<R: Rng>(
        &self,
        state: &mut ChainState,
        order: &[usize],
        rng: &mut R,
    ) -> Result<()> {
        for &i in order {
            state.detach(i);
            let cond = self.membership_conditional(i, state)?;
            let k = sample_categorical(&cond.probs, rng);
            let new_params = if k == state.n_groups() {
                let post = nig_posterior_stats(&self.stats[i], self.hyper)
                    .map_err(|e| e.context(format!("new group for node {i}")))?;
                Some(sample_nig(&post, rng))
            } else {
                None
            };
            state.attach(i, k, new_params);
        }
        state.canonicalize();
        Ok(())
    }

    /// Redraw every group's (θ, σ²) from its conjugate posterior.
    pub fn refresh_params<R: Rng>(&self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        for (c, stats) in self.group_stats(state).iter().enumerate() {
            let post = nig_posterior_stats(stats, self.hyper)
                .map_err(|e| e.context(format!("group {}", c + 1)))?;
            state.params[c] = sample_nig(&post, rng);
        }
        Ok(())
    }

    fn group_stats(&self, state: &ChainState) -> Vec<SufficientStats> {
        let mut out = vec![SufficientStats::zeros(self.hyper.dim()); state.n_groups()];
        for (i, &k) in state.z.iter().enumerate() {
            out[k].add(&self.stats[i]);
        }
        out
    }

    /// All nodes in one group with parameters from the full-data posterior.
    pub fn initial_state<R: Rng>(&self, rng: &mut R) -> Result<ChainState> {
        let mut pooled = SufficientStats::zeros(self.hyper.dim());
        for s in self.stats {
            pooled.add(s);
        }
        let post = nig_posterior_stats(&pooled, self.hyper)
            .map_err(|e| e.context("initial pooled group"))?;
        Ok(ChainState::single_group(self.n_nodes(), sample_nig(&post, rng)))
    }

    /// Per-node log-likelihood under the node's current group parameters.
    pub fn node_log_likelihoods(&self, state: &ChainState) -> Vec<f64> {
        state
            .z
            .iter()
            .enumerate()
            .map(|(i, &k)| log_likelihood_stats(&self.stats[i], &state.params[k]))
            .collect()
    }

    /// Unnormalized log posterior: gaCRP sequential mass + NIG prior of each
    /// group + data log-likelihood.
    pub fn log_joint(&self, state: &ChainState) -> f64 {
        gacrp_log_prior(&state.z, self.weights, self.hyper.alpha())
            + state
                .params
                .iter()
                .map(|p| self.hyper.log_prior_density(p))
                .sum::<f64>()
            + self.node_log_likelihoods(state).iter().sum::<f64>()
    }
}

/// One full iteration: membership pass in `order`, then parameter refresh.
pub fn gibbs_sweep<R: Rng>(
    state: &mut ChainState,
    kernel: &GibbsKernel<'_>,
    order: &[usize],
    rng: &mut R,
) -> Result<()> {
    kernel.update_memberships(state, order, rng)?;
    kernel.refresh_params(state, rng)
}

/// Log of the sequential allocation mass of labels `z` in node order 0..N.
pub fn gacrp_log_prior(z: &[usize], weights: &WeightMatrix, alpha: f64) -> f64 {
    let mut total = 0.0;
    for i in 1..z.len() {
        let mut joined = 0.0;
        let mut norm = alpha;
        let mut seen = false;
        for j in 0..i {
            let w = weights.get(i, j);
            norm += w;
            if z[j] == z[i] {
                joined += w;
                seen = true;
            }
        }
        let numer = if seen { joined } else { alpha };
        total += numer.ln() - norm.ln();
    }
    total
}

/// Max-shifted normalization of log-weights. `None` when no entry is finite.
pub fn normalize_log_weights(log_w: &[f64]) -> Option<Vec<f64>> {
    let max = log_w
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut probs: Vec<f64> = log_w
        .iter()
        .map(|&v| if v.is_nan() { 0.0 } else { (v - max).exp() })
        .collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Some(probs)
}

/// Inverse-CDF draw from normalized probabilities.
pub fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = k;
            acc += p;
            if u < acc {
                return k;
            }
        }
    }
    last_positive
}

/// (θ, σ²) ~ NIG(τ*, Σ*, a*, b*): σ² ~ IG(a*, b*), θ | σ² ~ N(τ*, σ²Σ*).
pub fn sample_nig<R: Rng>(post: &NigPosterior, rng: &mut R) -> GroupParams {
    let precision = Gamma::new(post.a_star, 1.0 / post.b_star)
        .expect("posterior shape and scale are positive")
        .sample(rng);
    let sigma2 = 1.0 / precision;
    let d = post.tau_star.len();
    let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
    let theta = &post.tau_star + post.sigma_chol_l() * z * sigma2.sqrt();
    GroupParams { theta, sigma2 }
}

/// One recorded post-burn-in iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    /// 1-based iteration number within the whole run.
    pub iteration: usize,
    pub z: Vec<usize>,
    pub params: Vec<GroupParams>,
    /// log L_i = log f(Y_(i); θ_{z_i}, σ²_{z_i}) for every node.
    pub loglik: Vec<f64>,
}

impl Draw {
    pub fn n_groups(&self) -> usize {
        self.params.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    pub n_nodes: usize,
    pub draws: Vec<Draw>,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Most frequent K over the draws; ties go to the smaller K.
    pub fn modal_k(&self) -> Option<usize> {
        let max_k = self.draws.iter().map(Draw::n_groups).max()?;
        let mut counts = vec![0usize; max_k + 1];
        for d in &self.draws {
            counts[d.n_groups()] += 1;
        }
        let best = *counts.iter().max()?;
        counts.iter().position(|&c| c == best)
    }
}

/// Everything about a dataset that does not depend on h or the seed.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub panel: PanelData,
    pub adjacency: AdjacencyMatrix,
    pub distances: DistanceMatrix,
    pub row_norm: RowNormalizedAdjacency,
    pub designs: Vec<NodeDesign>,
    pub stats: Vec<SufficientStats>,
}

impl PreparedData {
    pub fn new(panel: PanelData, adjacency: AdjacencyMatrix) -> Result<Self> {
        if adjacency.n_nodes() != panel.n_nodes() {
            return Err(Error::validation(format!(
                "graph has {} nodes but the panel has {}",
                adjacency.n_nodes(),
                panel.n_nodes()
            )));
        }
        let distances = shortest_path_distances(&adjacency);
        let row_norm = row_normalized_adjacency(&adjacency);
        let designs = build_designs(&panel, &row_norm)?;
        let stats = designs.iter().map(NodeDesign::stats).collect();
        Ok(Self {
            panel,
            adjacency,
            distances,
            row_norm,
            designs,
            stats,
        })
    }
}

/// The per-chain generator: ChaCha8 keyed by the seed.
pub fn chain_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn run_chain(
    config: &SamplerConfig,
    panel: &PanelData,
    adj: &AdjacencyMatrix,
) -> Result<ChainDraws> {
    let data = PreparedData::new(panel.clone(), adj.clone())?;
    run_chain_prepared(config, &data)
}

pub fn run_chain_prepared(config: &SamplerConfig, data: &PreparedData) -> Result<ChainDraws> {
    run_chain_with(config, data, |_| Ok(()))
}

/// Run a chain, handing every recorded draw to `on_draw` as it is made.
pub fn run_chain_with<F>(
    config: &SamplerConfig,
    data: &PreparedData,
    mut on_draw: F,
) -> Result<ChainDraws>
where
    F: FnMut(&Draw) -> Result<()>,
{
    config.validate()?;
    if config.hyper.dim() != data.panel.design_dim() {
        return Err(Error::validation(format!(
            "prior dimension {} does not match design dimension {}",
            config.hyper.dim(),
            data.panel.design_dim()
        )));
    }
    let weights = build_weights_with_limit(&data.distances, config.h, config.dense_weight_limit)?;
    let kernel = GibbsKernel::new(&weights, &config.hyper, &data.stats)?;
    let mut rng = chain_rng(config.rng_seed);
    let mut state = kernel.initial_state(&mut rng)?;
    let mut order: Vec<usize> = (0..data.panel.n_nodes()).collect();
    let mut draws = Vec::with_capacity(config.recorded_draws());
    for iteration in 1..=config.total_iters {
        if config.visit_order == VisitOrder::Shuffled {
            order.shuffle(&mut rng);
        }
        gibbs_sweep(&mut state, &kernel, &order, &mut rng)
            .map_err(|e| e.context(format!("iteration {iteration}")))?;
        if iteration > config.burn_in {
            let draw = Draw {
                iteration,
                z: state.z.clone(),
                params: state.params.clone(),
                loglik: kernel.node_log_likelihoods(&state),
            };
            on_draw(&draw)?;
            draws.push(draw);
        }
    }
    Ok(ChainDraws {
        n_nodes: data.panel.n_nodes(),
        draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_weights, AdjacencyMatrix};
    use crate::model::{log_likelihood, log_marginal_likelihood, nig_posterior, NodeDesign};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn params(v: &[f64], s2: f64) -> GroupParams {
        GroupParams::new(DVector::from_row_slice(v), s2).unwrap()
    }

    fn toy_designs(n: usize, seed: u64) -> Vec<NodeDesign> {
        let mut rng = chain_rng(seed);
        (0..n)
            .map(|i| {
                let x = DMatrix::from_fn(3, 2, |r, c| if c == 0 { 1.0 } else { (r + i) as f64 * 0.3 });
                let y = DVector::from_fn(3, |_, _| {
                    (i % 2) as f64 * 3.0 + Distribution::<f64>::sample(&StandardNormal, &mut rng) * 0.5
                });
                NodeDesign { y, x }
            })
            .collect()
    }

    #[test]
    fn detach_compacts_and_relabels() {
        let p = |v| params(&[v], 1.0);
        let mut s = ChainState::from_labels(vec![1, 0, 2, 0], vec![p(0.0), p(1.0), p(2.0)]).unwrap();
        s.detach(2);
        // Group 2 emptied; remaining first-appearance order: node0 (old 1), node1 (old 0).
        assert_eq!(s.n_groups(), 2);
        assert_eq!(s.labels()[0], 0);
        assert_eq!(s.labels()[1], 1);
        assert_eq!(s.labels()[3], 1);
        assert_eq!(s.params()[0].theta[0], 1.0);
        assert_eq!(s.group_sizes(), &[1, 2]);
        s.attach(2, 2, Some(p(9.0)));
        s.canonicalize();
        s.check_invariants().unwrap();
        assert_eq!(s.labels(), &[0, 1, 2, 1]);
    }

    #[test]
    fn kappa_reduces_to_crp_counts_at_zero_h() {
        let adj = AdjacencyMatrix::from_undirected_edges(5, (1..5).map(|i| (i - 1, i))).unwrap();
        let w = build_weights(&shortest_path_distances(&adj), 0.0).unwrap();
        let designs = toy_designs(5, 1);
        let stats: Vec<_> = designs.iter().map(NodeDesign::stats).collect();
        let hyper = NigHyper::isotropic(2, 0.0, 10.0, 1.0, 1.0, 1.0).unwrap();
        let kernel = GibbsKernel::new(&w, &hyper, &stats).unwrap();
        let mut s = ChainState::from_labels(
            vec![0, 0, 1, 1, 1],
            vec![params(&[0.0, 0.0], 1.0), params(&[3.0, 0.0], 1.0)],
        )
        .unwrap();
        s.detach(3);
        assert_eq!(kernel.kappa(3, &s), vec![2.0, 2.0]);
    }

    #[test]
    fn conditional_matches_direct_formula() {
        // Four nodes on a path, h = 0.8, groups {0,1} and {2}, node 3 detached.
        let adj = AdjacencyMatrix::from_undirected_edges(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let h = 0.8;
        let w = build_weights(&shortest_path_distances(&adj), h).unwrap();
        let designs = toy_designs(4, 2);
        let stats: Vec<_> = designs.iter().map(NodeDesign::stats).collect();
        let hyper = NigHyper::isotropic(2, 0.0, 10.0, 1.0, 1.0, 0.7).unwrap();
        let kernel = GibbsKernel::new(&w, &hyper, &stats).unwrap();
        let g0 = params(&[0.1, 0.2], 0.5);
        let g1 = params(&[2.9, -0.1], 1.3);
        let mut s = ChainState::from_labels(vec![0, 0, 1, 1], vec![g0.clone(), g1.clone()]).unwrap();
        s.detach(3);
        let cond = kernel.membership_conditional(3, &s).unwrap();

        // d(3,0) = 3, d(3,1) = 2, d(3,2) = 1.
        let k0 = (-3.0 * h).exp() + (-2.0 * h).exp();
        let k1 = 1.0;
        let f0 = log_likelihood(&designs[3], &g0).unwrap().exp();
        let f1 = log_likelihood(&designs[3], &g1).unwrap().exp();
        let g = log_marginal_likelihood(&designs[3], &hyper).unwrap().exp();
        let raw = [k0 * f0, k1 * f1, 0.7 * g];
        let total: f64 = raw.iter().sum();
        for (p, r) in cond.probs.iter().zip(raw) {
            assert!((p - r / total).abs() < 1e-12, "{p} vs {}", r / total);
        }
        assert_eq!(cond.kappa, vec![k0, k1]);
    }

    #[test]
    fn unreachable_groups_get_zero_mass() {
        // Node 2 only connects to node 1 (group 1); node 0 is unreachable.
        let adj = AdjacencyMatrix::from_undirected_edges(3, [(1, 2)]).unwrap();
        let w = build_weights(&shortest_path_distances(&adj), 1.0).unwrap();
        let designs = toy_designs(3, 3);
        let stats: Vec<_> = designs.iter().map(NodeDesign::stats).collect();
        let hyper = NigHyper::isotropic(2, 0.0, 10.0, 1.0, 1.0, 1.0).unwrap();
        let kernel = GibbsKernel::new(&w, &hyper, &stats).unwrap();
        let p = params(&[0.0, 0.0], 1.0);
        let mut s = ChainState::from_labels(vec![0, 1, 1], vec![p.clone(), p]).unwrap();
        s.detach(2);
        let cond = kernel.membership_conditional(2, &s).unwrap();
        assert_eq!(cond.probs[0], 0.0);
        assert!(cond.probs[1] > 0.0 && cond.probs[2] > 0.0);
    }

    #[test]
    fn conditional_requires_detached_node() {
        let adj = AdjacencyMatrix::empty(2);
        let w = build_weights(&shortest_path_distances(&adj), 0.0).unwrap();
        let designs = toy_designs(2, 4);
        let stats: Vec<_> = designs.iter().map(NodeDesign::stats).collect();
        let hyper = NigHyper::isotropic(2, 0.0, 10.0, 1.0, 1.0, 1.0).unwrap();
        let kernel = GibbsKernel::new(&w, &hyper, &stats).unwrap();
        let s = ChainState::single_group(2, params(&[0.0, 0.0], 1.0));
        assert!(kernel.membership_conditional(0, &s).is_err());
    }

    #[test]
    fn single_node_chain_keeps_one_group() {
        let y = DMatrix::from_row_slice(1, 6, &[0.1, 0.5, 0.2, 0.9, 0.4, 0.3]);
        let panel = PanelData::without_covariates(y).unwrap();
        let adj = AdjacencyMatrix::empty(1);
        let mut cfg = SamplerConfig::new(3, 0.0, 9);
        cfg.total_iters = 50;
        cfg.burn_in = 10;
        let draws = run_chain(&cfg, &panel, &adj).unwrap();
        assert_eq!(draws.len(), 40);
        assert!(draws.draws.iter().all(|d| d.n_groups() == 1 && d.z == vec![0]));
    }

    #[test]
    fn tiny_alpha_never_opens_groups() {
        let mut rng = chain_rng(5);
        let y = DMatrix::from_fn(6, 8, |_, _| StandardNormal.sample(&mut rng));
        let panel = PanelData::without_covariates(y).unwrap();
        let adj = AdjacencyMatrix::from_undirected_edges(6, (1..6).map(|i| (i - 1, i))).unwrap();
        let mut cfg = SamplerConfig::new(3, 0.5, 10);
        cfg.hyper = cfg.hyper.with_alpha(1e-300).unwrap();
        cfg.total_iters = 100;
        cfg.burn_in = 0;
        let draws = run_chain(&cfg, &panel, &adj).unwrap();
        assert!(draws.draws.iter().all(|d| d.n_groups() == 1));
    }

    #[test]
    fn burn_in_must_be_smaller() {
        let mut cfg = SamplerConfig::new(3, 0.0, 1);
        cfg.burn_in = cfg.total_iters;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn nig_draw_moments() {
        let tau = DVector::from_vec(vec![1.0, -2.0]);
        let sigma = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.4]);
        let (a, b) = (6.0, 10.0);
        let post = NigPosterior::from_parts(tau.clone(), sigma.clone(), a, b).unwrap();
        let mut rng = chain_rng(77);
        let n = 100_000;
        let draws: Vec<_> = (0..n).map(|_| sample_nig(&post, &mut rng)).collect();

        // Inverse gamma: mean b/(a−1), variance b²/((a−1)²(a−2)).
        let mean_s2 = b / (a - 1.0);
        let var_s2 = b * b / ((a - 1.0).powi(2) * (a - 2.0));
        let emp_s2 = draws.iter().map(|d| d.sigma2).sum::<f64>() / n as f64;
        assert!((emp_s2 - mean_s2).abs() < 3.0 * (var_s2 / n as f64).sqrt());

        // Marginal θ covariance is E[σ²]·Σ*.
        let mut mean = DVector::zeros(2);
        for d in &draws {
            mean += &d.theta;
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(2, 2);
        for d in &draws {
            let c = &d.theta - &mean;
            cov += &c * c.transpose();
        }
        cov /= n as f64;
        let expected_cov = &sigma * mean_s2;
        for k in 0..2 {
            let se = (expected_cov[(k, k)] / n as f64).sqrt();
            assert!((mean[k] - tau[k]).abs() < 4.0 * se);
        }
        assert!((&cov - &expected_cov).amax() < 0.02);
    }

    #[test]
    fn degenerate_covariance_collapses_theta() {
        let tau = DVector::from_vec(vec![0.3, 0.7]);
        let mut rng = chain_rng(8);
        for eps in [1e-2, 1e-6, 1e-10] {
            let post =
                NigPosterior::from_parts(tau.clone(), DMatrix::identity(2, 2) * eps, 5.0, 4.0)
                    .unwrap();
            let d = sample_nig(&post, &mut rng);
            assert!((&d.theta - &tau).amax() < 50.0 * eps.sqrt());
        }
    }

    #[test]
    fn sweep_refresh_follows_group_posterior() {
        // With memberships frozen in one group, refreshed θ averages to τ*.
        let designs = toy_designs(4, 6);
        let stats: Vec<_> = designs.iter().map(NodeDesign::stats).collect();
        let hyper = NigHyper::isotropic(2, 0.0, 10.0, 2.0, 1.0, 1.0).unwrap();
        let w = build_weights(&shortest_path_distances(&AdjacencyMatrix::empty(4)), 0.0).unwrap();
        let kernel = GibbsKernel::new(&w, &hyper, &stats).unwrap();
        let refs: Vec<_> = designs.iter().collect();
        let post = nig_posterior(&refs, &hyper).unwrap();
        let mut state = ChainState::single_group(4, params(&[0.0, 0.0], 1.0));
        let mut rng = chain_rng(12);
        let n = 20_000;
        let mut acc = 0.0;
        for _ in 0..n {
            kernel.refresh_params(&mut state, &mut rng).unwrap();
            acc += state.params()[0].theta[0];
        }
        assert!((acc / n as f64 - post.tau_star[0]).abs() < 0.05);
    }

    #[test]
    fn categorical_skips_zero_entries() {
        let mut rng = chain_rng(0);
        for _ in 0..1000 {
            let k = sample_categorical(&[0.0, 0.3, 0.0, 0.7], &mut rng);
            assert!(k == 1 || k == 3);
        }
        assert_eq!(normalize_log_weights(&[f64::NEG_INFINITY; 3]), None);
        let p = normalize_log_weights(&[-1000.0, -1001.0, f64::NEG_INFINITY]).unwrap();
        assert!((p[0] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn sequential_mass_of_crp() {
        // Complete graph: CRP probability of {0,1},{2} with α = 2 is
        // (1/3)·(2/4) = 1/6 for the allocation after node 0.
        let adj = AdjacencyMatrix::from_undirected_edges(3, [(0, 1), (0, 2), (1, 2)]).unwrap();
        let w = build_weights(&shortest_path_distances(&adj), 1.0).unwrap();
        let lp = gacrp_log_prior(&[0, 0, 1], &w, 2.0);
        assert!((lp - (1.0f64 / 6.0).ln()).abs() < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn sweep_invariants_hold(seed in 0u64..1000, h in 0.0f64..3.0) {
            let n = 7;
            let designs = toy_designs(n, seed);
            let stats: Vec<_> = designs.iter().map(NodeDesign::stats).collect();
            let adj = AdjacencyMatrix::from_undirected_edges(n, [(0, 1), (1, 2), (3, 4), (4, 5), (2, 3)]).unwrap();
            let w = build_weights(&shortest_path_distances(&adj), h).unwrap();
            let hyper = NigHyper::isotropic(2, 0.0, 10.0, 1.0, 1.0, 1.0).unwrap();
            let kernel = GibbsKernel::new(&w, &hyper, &stats).unwrap();
            let mut rng = chain_rng(seed);
            let mut state = kernel.initial_state(&mut rng).unwrap();
            let order: Vec<usize> = (0..n).collect();
            for _ in 0..30 {
                for &i in &order {
                    state.detach(i);
                    let cond = kernel.membership_conditional(i, &state).unwrap();
                    let total: f64 = cond.probs.iter().sum();
                    prop_assert!((total - 1.0).abs() < 1e-12);
                    prop_assert!(cond.probs.iter().all(|p| (0.0..=1.0).contains(p)));
                    let k = sample_categorical(&cond.probs, &mut rng);
                    let fresh = (k == state.n_groups()).then(|| {
                        sample_nig(&nig_posterior_stats(&stats[i], &hyper).unwrap(), &mut rng)
                    });
                    state.attach(i, k, fresh);
                }
                state.canonicalize();
                kernel.refresh_params(&mut state, &mut rng).unwrap();
                prop_assert!(state.check_invariants().is_ok());
                prop_assert_eq!(state.group_sizes().iter().sum::<usize>(), n);
                prop_assert!(kernel.log_joint(&state).is_finite());
            }
        }
    }
}
