//! Synthetic data: stochastic block model graphs, surrogate lattice and
//! shareholder graphs, and panels from the grouped network autoregression.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{read_edge_list, row_normalized_adjacency, write_edge_list, AdjacencyMatrix, IdBase};
use crate::io::{coefficient_names, labels_csv, read_labels, sig6, write_matrix_csv, write_text};
use crate::model::{GroupParams, PanelData};

/// One group's generating parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub sigma2: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma: Vec<f64>,
}

impl GroupSpec {
    pub fn new(sigma2: f64, beta0: f64, beta1: f64, beta2: f64, gamma: &[f64]) -> Self {
        Self {
            sigma2,
            beta0,
            beta1,
            beta2,
            gamma: gamma.to_vec(),
        }
    }

    pub fn theta(&self) -> DVector<f64> {
        let mut v = vec![self.beta0, self.beta1, self.beta2];
        v.extend_from_slice(&self.gamma);
        DVector::from_vec(v)
    }

    pub fn to_params(&self) -> Result<GroupParams> {
        GroupParams::new(self.theta(), self.sigma2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkSpec {
    /// Undirected SBM, regenerated with fresh labels in every replicate.
    /// Missing probabilities default to 20/N within and 2/N between groups.
    Sbm {
        #[serde(default)]
        p_in: Option<f64>,
        #[serde(default)]
        p_out: Option<f64>,
    },
    /// Grid with `cols` columns filled row by row, plus each down-right
    /// diagonal with probability `diagonal_prob`.
    Lattice { cols: usize, diagonal_prob: f64 },
    /// Each node picks `top_holders` distinct holders out of `holders`,
    /// holder r drawn with weight (r + 1)^(-concentration); nodes sharing a
    /// holder are linked.
    Shareholder {
        holders: usize,
        top_holders: usize,
        concentration: f64,
    },
    /// Fixed `src,dst` file. Labels come from a `node,group` file when
    /// given, otherwise from k-means on the adjacency rows.
    EdgeList {
        path: PathBuf,
        #[serde(default)]
        id_base: IdBase,
        #[serde(default)]
        labels: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub n_nodes: usize,
    pub t_len: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Emit the zero initial state as an extra first column.
    #[serde(default)]
    pub include_initial: bool,
    pub network: NetworkSpec,
    pub groups: Vec<GroupSpec>,
}

impl ScenarioSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::parse("<scenario>", e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Load a scenario file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_seed(path, None)
    }

    /// Like [`ScenarioSpec::load`], with `seed` replacing the file's seed.
    /// A file without a seed is only accepted when one is supplied here.
    pub fn load_with_seed(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::parse(path, e.to_string()))?;
        match seed {
            Some(s) => {
                let s = i64::try_from(s).map_err(|_| Error::validation(format!("seed {s} does not fit in a TOML integer")))?;
                table.insert("seed".into(), toml::Value::Integer(s));
            }
            None if !table.contains_key("seed") => {
                return Err(Error::validation(format!("{} has no seed", path.display())));
            }
            None => {}
        }
        let mut spec: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::parse(path, e.to_string()))?;
        spec.validate()?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let NetworkSpec::EdgeList { path: p, labels, .. } = &mut spec.network {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if let Some(l) = labels {
                if l.is_relative() {
                    *l = base.join(&*l);
                }
            }
        }
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::validation("scenario needs at least one group"));
        }
        if self.n_nodes == 0 {
            return Err(Error::validation("scenario needs at least one node"));
        }
        if self.t_len < 1 || self.t_len + usize::from(self.include_initial) < 2 {
            return Err(Error::validation("scenario needs at least 2 emitted time points"));
        }
        let p = self.groups[0].gamma.len();
        for (k, g) in self.groups.iter().enumerate() {
            if g.gamma.len() != p {
                return Err(Error::validation(format!(
                    "group {} has {} covariate effects, group 1 has {p}",
                    k + 1,
                    g.gamma.len()
                )));
            }
            let all = [g.sigma2, g.beta0, g.beta1, g.beta2];
            if all.iter().chain(&g.gamma).any(|x| !x.is_finite()) || g.sigma2 < 0.0 {
                return Err(Error::validation(format!("group {} has invalid parameters", k + 1)));
            }
        }
        match &self.network {
            NetworkSpec::Sbm { p_in, p_out } => {
                for p in [p_in, p_out].into_iter().flatten() {
                    check_prob(*p)?;
                }
            }
            NetworkSpec::Lattice { cols, diagonal_prob } => {
                if *cols == 0 {
                    return Err(Error::validation("lattice needs at least one column"));
                }
                check_prob(*diagonal_prob)?;
            }
            NetworkSpec::Shareholder {
                holders,
                top_holders,
                concentration,
            } => {
                if *top_holders == 0 || top_holders > holders {
                    return Err(Error::validation("need 1 <= top_holders <= holders"));
                }
                if !concentration.is_finite() || *concentration < 0.0 {
                    return Err(Error::validation("concentration must be non-negative"));
                }
            }
            NetworkSpec::EdgeList { .. } => {}
        }
        Ok(())
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn covariate_dim(&self) -> usize {
        self.groups[0].gamma.len()
    }

    /// Built-in scenarios for examples 1 to 3, scenarios 1 and 2.
    pub fn example(example: u8, scenario: u8) -> Result<Self> {
        let groups = example_groups(example, scenario)?;
        let (name, n_nodes, network) = match example {
            1 => ("sbm", 100, NetworkSpec::Sbm { p_in: None, p_out: None }),
            2 => (
                "lattice",
                151,
                NetworkSpec::Lattice {
                    cols: 13,
                    diagonal_prob: 0.3,
                },
            ),
            _ => (
                "shareholder",
                180,
                NetworkSpec::Shareholder {
                    holders: 120,
                    top_holders: 2,
                    concentration: 0.8,
                },
            ),
        };
        Ok(Self {
            name: format!("example{example}-scenario{scenario}-{name}"),
            n_nodes,
            t_len: 20,
            replicates: 100,
            seed: 20_190_000 + 10 * u64::from(example) + u64::from(scenario),
            include_initial: false,
            network,
            groups,
        })
    }
}

fn check_prob(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::validation(format!("probability {p} outside [0, 1]")))
    }
}

fn example_groups(example: u8, scenario: u8) -> Result<Vec<GroupSpec>> {
    let g = GroupSpec::new;
    let groups = match (example, scenario) {
        (1, 1) => vec![
            g(2.0, 5.0, 0.2, 0.1, &[0.5, 0.7, 1.0]),
            g(1.0, -5.0, -0.4, 0.2, &[0.1, 0.9, 0.4]),
            g(3.0, 0.0, 0.2, 0.4, &[0.2, -1.0, 2.0]),
        ],
        (1, 2) => vec![
            g(2.0, 0.0, 0.1, 0.3, &[0.5, 0.7, 1.0]),
            g(4.0, 0.2, -0.3, 0.2, &[0.1, 0.9, 0.4]),
            g(3.0, 0.5, 0.2, 0.7, &[0.2, -0.2, 1.4]),
        ],
        (2, 1) => vec![
            g(2.0, 5.0, 0.2, 0.1, &[0.5, 0.7, 1.0]),
            g(1.0, -5.0, -0.4, 0.2, &[0.1, 0.9, 0.4]),
            g(3.0, 0.0, 0.2, 0.4, &[0.2, -1.0, 2.0]),
            g(4.0, -0.1, 0.1, 0.2, &[1.0, -1.0, 1.5]),
            g(2.0, 3.0, 0.5, 0.2, &[0.8, 0.5, -2.0]),
        ],
        (2, 2) => vec![
            g(2.0, 0.0, 0.1, 0.3, &[0.5, 0.7, 1.0]),
            g(1.0, 0.2, -0.3, 0.2, &[0.1, 0.9, 0.4]),
            g(3.0, 0.5, 0.2, 0.7, &[0.2, -0.2, 1.4]),
            g(4.0, -0.1, 0.1, 0.2, &[1.0, -1.0, 1.5]),
            g(2.0, 0.8, 0.5, 0.2, &[0.8, 0.5, -1.0]),
        ],
        (3, 1) => vec![
            g(2.0, 5.0, 0.2, 0.1, &[0.5, 0.7, 1.0]),
            g(1.0, -5.0, -0.4, 0.2, &[0.1, 0.9, 0.4]),
            g(3.0, 0.0, 0.2, 0.4, &[0.2, -1.0, 2.0]),
            g(4.0, 3.0, 0.1, 0.2, &[1.0, -1.0, 1.5]),
            g(2.0, -3.0, 0.5, 0.2, &[0.8, 0.5, -2.0]),
            g(3.0, 2.0, -0.6, -0.2, &[-0.8, 0.5, 2.0]),
        ],
        (3, 2) => vec![
            g(2.0, 0.0, 0.1, 0.3, &[0.5, 0.7, 1.0]),
            g(1.0, 3.0, -0.3, 0.2, &[0.1, 0.9, 0.4]),
            g(3.0, -3.0, 0.2, 0.7, &[0.2, -0.2, 1.4]),
            g(1.5, 4.5, 0.1, 0.2, &[1.0, -1.0, 1.5]),
            g(2.5, -2.0, 0.5, 0.2, &[0.8, 0.5, -1.0]),
            g(1.0, 2.0, -0.6, -0.2, &[-0.8, 0.5, 2.0]),
        ],
        _ => {
            return Err(Error::validation(format!(
                "no built-in scenario for example {example}, scenario {scenario}"
            )))
        }
    };
    Ok(groups)
}

/// RNG for replicate `r` of a scenario seeded with `seed`. Stream 0 is
/// reserved for graphs shared by all replicates.
pub fn replicate_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64 + 1);
    rng
}

fn shared_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

/// Undirected SBM with labels drawn uniformly from `0..k`.
pub fn generate_sbm<R: Rng>(
    n: usize,
    k: usize,
    p_in: f64,
    p_out: f64,
    rng: &mut R,
) -> Result<(AdjacencyMatrix, Vec<usize>)> {
    check_prob(p_in)?;
    check_prob(p_out)?;
    if k == 0 {
        return Err(Error::validation("SBM needs at least one block"));
    }
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Ok((AdjacencyMatrix::from_undirected_edges(n, edges)?, labels))
}

pub fn generate_lattice<R: Rng>(n: usize, cols: usize, diagonal_prob: f64, rng: &mut R) -> Result<AdjacencyMatrix> {
    check_prob(diagonal_prob)?;
    if cols == 0 {
        return Err(Error::validation("lattice needs at least one column"));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        let (r, c) = (i / cols, i % cols);
        if c + 1 < cols && i + 1 < n {
            edges.push((i, i + 1));
        }
        if i + cols < n {
            edges.push((i, i + cols));
        }
        if c + 1 < cols && i + cols + 1 < n && rng.random::<f64>() < diagonal_prob {
            edges.push((i, (r + 1) * cols + c + 1));
        }
    }
    AdjacencyMatrix::from_undirected_edges(n, edges)
}

pub fn generate_shareholder<R: Rng>(
    n: usize,
    holders: usize,
    top_holders: usize,
    concentration: f64,
    rng: &mut R,
) -> Result<AdjacencyMatrix> {
    if top_holders == 0 || top_holders > holders {
        return Err(Error::validation("need 1 <= top_holders <= holders"));
    }
    let base: Vec<f64> = (0..holders).map(|r| ((r + 1) as f64).powf(-concentration)).collect();
    let mut held_by: Vec<Vec<usize>> = vec![Vec::new(); holders];
    for i in 0..n {
        let mut w = base.clone();
        for _ in 0..top_holders {
            let dist = WeightedIndex::new(&w).map_err(|e| Error::numerical(e.to_string()))?;
            let h = dist.sample(rng);
            held_by[h].push(i);
            w[h] = 0.0;
        }
    }
    let mut edges = Vec::new();
    for nodes in &held_by {
        for (a, &i) in nodes.iter().enumerate() {
            for &j in &nodes[a + 1..] {
                edges.push((i, j));
            }
        }
    }
    AdjacencyMatrix::from_undirected_edges(n, edges)
}

/// k-means (k-means++ seeding, 10 restarts) on the rows of the dense
/// adjacency matrix. Labels are numbered by first appearance.
pub fn kmeans_labels<R: Rng>(adj: &AdjacencyMatrix, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n = adj.n_nodes();
    if k == 0 || k > n {
        return Err(Error::validation(format!("k-means needs 1 <= k <= {n}, got {k}")));
    }
    let x = adj.to_dense();
    let dist2 = |i: usize, c: &[f64]| -> f64 { (0..n).map(|j| (x[(i, j)] - c[j]).powi(2)).sum() };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..10 {
        let mut centers: Vec<Vec<f64>> = vec![x.row(rng.random_range(0..n)).iter().copied().collect()];
        while centers.len() < k {
            let d: Vec<f64> = (0..n)
                .map(|i| centers.iter().map(|c| dist2(i, c)).fold(f64::INFINITY, f64::min))
                .collect();
            let pick = match WeightedIndex::new(&d) {
                Ok(w) => w.sample(rng),
                Err(_) => rng.random_range(0..n),
            };
            centers.push(x.row(pick).iter().copied().collect());
        }
        let mut labels = vec![0; n];
        let mut inertia = f64::INFINITY;
        for _ in 0..100 {
            let mut changed = false;
            inertia = 0.0;
            for (i, label) in labels.iter_mut().enumerate() {
                let (arg, d) = centers
                    .iter()
                    .enumerate()
                    .map(|(c, ctr)| (c, dist2(i, ctr)))
                    .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                if *label != arg {
                    *label = arg;
                    changed = true;
                }
                inertia += d;
            }
            let mut sums = vec![vec![0.0; n]; k];
            let mut counts = vec![0usize; k];
            for (i, &l) in labels.iter().enumerate() {
                counts[l] += 1;
                for j in 0..n {
                    sums[l][j] += x[(i, j)];
                }
            }
            for c in 0..k {
                if counts[c] == 0 {
                    // reseed an empty cluster at the worst-fit node
                    let far = (0..n)
                        .max_by(|&a, &b| {
                            dist2(a, &centers[labels[a]]).total_cmp(&dist2(b, &centers[labels[b]]))
                        })
                        .unwrap();
                    centers[c] = x.row(far).iter().copied().collect();
                    changed = true;
                } else {
                    centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                }
            }
            if !changed {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| inertia < b.0) {
            best = Some((inertia, labels));
        }
    }
    Ok(first_appearance(&best.unwrap().1))
}

fn first_appearance(z: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    z.iter()
        .map(|&k| {
            let next = map.len();
            *map.entry(k).or_insert(next)
        })
        .collect()
}

/// Run the grouped recursion from Y_0 = 0 for `spec.t_len` steps.
///
/// Covariates V_i ~ N(0, I_p) are drawn first, once per node, then the
/// noise in time-major order.
pub fn simulate_panel<R: Rng>(
    spec: &ScenarioSpec,
    adj: &AdjacencyMatrix,
    labels: &[usize],
    rng: &mut R,
) -> Result<PanelData> {
    spec.validate()?;
    let n = spec.n_nodes;
    if adj.n_nodes() != n || labels.len() != n {
        return Err(Error::validation(format!(
            "scenario has {n} nodes, graph has {} and labels {}",
            adj.n_nodes(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&k| k >= spec.n_groups()) {
        return Err(Error::validation(format!(
            "label {} exceeds the {} scenario groups",
            bad + 1,
            spec.n_groups()
        )));
    }
    let p = spec.covariate_dim();
    let v = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng));
    let offsets: Vec<f64> = (0..n)
        .map(|i| {
            let g = &spec.groups[labels[i]];
            g.beta0 + (0..p).map(|j| v[(i, j)] * g.gamma[j]).sum::<f64>()
        })
        .collect();
    let rn = row_normalized_adjacency(adj);
    let first = usize::from(spec.include_initial);
    let mut y = DMatrix::zeros(n, spec.t_len + first);
    let mut prev = vec![0.0; n];
    for t in 0..spec.t_len {
        let mut next = vec![0.0; n];
        for i in 0..n {
            let g = &spec.groups[labels[i]];
            let eps: f64 = StandardNormal.sample(rng);
            next[i] = offsets[i] + g.beta1 * rn.apply_row(i, &prev) + g.beta2 * prev[i] + g.sigma2.sqrt() * eps;
        }
        for (i, &val) in next.iter().enumerate() {
            y[(i, t + first)] = val;
        }
        prev = next;
    }
    PanelData::new(y, v)
}

#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub adjacency: AdjacencyMatrix,
    pub labels: Vec<usize>,
    pub panel: PanelData,
}

impl SimulatedDataset {
    /// Generating parameters of each node's group.
    pub fn node_truth(&self, spec: &ScenarioSpec) -> Result<Vec<GroupParams>> {
        self.labels.iter().map(|&k| spec.groups[k].to_params()).collect()
    }
}

fn shared_network(spec: &ScenarioSpec) -> Result<Option<(AdjacencyMatrix, Vec<usize>)>> {
    let mut rng = shared_rng(spec.seed);
    let n = spec.n_nodes;
    let k = spec.n_groups();
    let adj = match &spec.network {
        NetworkSpec::Sbm { .. } => return Ok(None),
        NetworkSpec::Lattice { cols, diagonal_prob } => generate_lattice(n, *cols, *diagonal_prob, &mut rng)?,
        NetworkSpec::Shareholder {
            holders,
            top_holders,
            concentration,
        } => generate_shareholder(n, *holders, *top_holders, *concentration, &mut rng)?,
        NetworkSpec::EdgeList { path, id_base, labels } => {
            let adj = read_edge_list(path, n, *id_base)?;
            if let Some(lp) = labels {
                let z = read_labels(lp)?;
                if z.len() != n || z.iter().any(|&g| g >= k) {
                    return Err(Error::validation(format!(
                        "labels in {} do not match {n} nodes and {k} groups",
                        lp.display()
                    )));
                }
                return Ok(Some((adj, z)));
            }
            adj
        }
    };
    let labels = kmeans_labels(&adj, k, &mut rng)?;
    Ok(Some((adj, labels)))
}

/// Generate replicate `r`.
pub fn simulate_replicate(spec: &ScenarioSpec, r: usize) -> Result<SimulatedDataset> {
    let shared = shared_network(spec)?;
    replicate_with(spec, r, shared.as_ref())
}

/// Generate every replicate in parallel; output is independent of the
/// thread count.
pub fn simulate_all(spec: &ScenarioSpec) -> Result<Vec<SimulatedDataset>> {
    spec.validate()?;
    let shared = shared_network(spec)?;
    (0..spec.replicates)
        .into_par_iter()
        .map(|r| replicate_with(spec, r, shared.as_ref()))
        .collect()
}

fn replicate_with(
    spec: &ScenarioSpec,
    r: usize,
    shared: Option<&(AdjacencyMatrix, Vec<usize>)>,
) -> Result<SimulatedDataset> {
    let mut rng = replicate_rng(spec.seed, r);
    let (adjacency, labels) = match (shared, &spec.network) {
        (Some((a, z)), _) => (a.clone(), z.clone()),
        (None, NetworkSpec::Sbm { p_in, p_out }) => {
            let n = spec.n_nodes as f64;
            let p_in = p_in.unwrap_or((20.0 / n).min(1.0));
            let p_out = p_out.unwrap_or((2.0 / n).min(1.0));
            generate_sbm(spec.n_nodes, spec.n_groups(), p_in, p_out, &mut rng)?
        }
        (None, _) => unreachable!("only SBM graphs are generated per replicate"),
    };
    let panel = simulate_panel(spec, &adjacency, &labels, &mut rng)?;
    Ok(SimulatedDataset {
        adjacency,
        labels,
        panel,
    })
}

/// Write `edges.csv` (1-based `src,dst`), `responses.csv` (N×T),
/// `covariates.csv` (N×p), `labels.csv` (`node,group`) and
/// `truth_params.csv` (`group,sigma2,beta0,beta1,beta2,gamma1..`).
pub fn write_dataset(dir: &Path, spec: &ScenarioSpec, ds: &SimulatedDataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_edge_list(&dir.join("edges.csv"), &ds.adjacency, IdBase::One)?;
    write_matrix_csv(&dir.join("responses.csv"), ds.panel.responses())?;
    write_matrix_csv(&dir.join("covariates.csv"), ds.panel.covariates())?;
    write_text(&dir.join("labels.csv"), &labels_csv(&ds.labels))?;
    write_text(&dir.join("truth_params.csv"), &truth_params_csv(spec))
}

pub fn truth_params_csv(spec: &ScenarioSpec) -> String {
    let mut s = format!("group,sigma2,{}\n", coefficient_names(spec.covariate_dim() + 3).join(","));
    for (k, g) in spec.groups.iter().enumerate() {
        let coefs: Vec<String> = g.theta().iter().map(|&v| sig6(v)).collect();
        s.push_str(&format!("{},{},{}\n", k + 1, sig6(g.sigma2), coefs.join(",")));
    }
    s
}
