//! Adjacency ingestion and the graph-derived quantities the model needs:
//! shortest-path distances, the gaCRP closeness weights and the
//! row-normalized adjacency used by the network regressor.

use std::collections::VecDeque;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Above this many nodes the weight matrix keeps only its non-zero entries.
pub const DEFAULT_DENSE_WEIGHT_LIMIT: usize = 2000;

/// Binary directed adjacency with a zero diagonal, stored as sorted
/// out-neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    out: Vec<Vec<usize>>,
}

impl AdjacencyMatrix {
    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        Self {
            out: vec![Vec::new(); n],
        }
    }

    /// Build from directed `(src, dst)` pairs. Duplicates collapse to one
    /// edge; self-loops and out-of-range ids are rejected.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut out = vec![Vec::new(); n];
        for (src, dst) in edges {
            if src >= n || dst >= n {
                return Err(Error::validation(format!(
                    "edge ({src}, {dst}) references a node outside 0..{n}"
                )));
            }
            if src == dst {
                return Err(Error::validation(format!("self-loop on node {src}")));
            }
            out[src].push(dst);
        }
        for row in &mut out {
            row.sort_unstable();
            row.dedup();
        }
        Ok(Self { out })
    }

    /// Build from undirected pairs, inserting both directions.
    pub fn from_undirected_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        Self::from_edges(n, edges.into_iter().flat_map(|(a, b)| [(a, b), (b, a)]))
    }

    /// Build from a dense square matrix whose entries must be exactly 0 or 1.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::validation(format!(
                "adjacency must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let v = m[(i, j)];
                if v == 1.0 {
                    edges.push((i, j));
                } else if v != 0.0 {
                    return Err(Error::validation(format!(
                        "adjacency entry ({i}, {j}) = {v} is not binary"
                    )));
                }
            }
        }
        Self::from_edges(n, edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.out.len()
    }

    /// Out-neighbors of `i` in increasing order.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.out[i]
    }

    /// n_i = Σ_j a_ij.
    pub fn out_degree(&self, i: usize) -> usize {
        self.out[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.out[i].binary_search(&j).is_ok()
    }

    /// Number of directed edges.
    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n_nodes()).all(|i| self.out[i].iter().all(|&j| self.has_edge(j, i)))
    }

    /// All directed edges in (src, dst) lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&j| (i, j)))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n_nodes();
        let mut m = DMatrix::zeros(n, n);
        for (i, j) in self.edges() {
            m[(i, j)] = 1.0;
        }
        m
    }

    /// Neighbor lists of the graph with an edge wherever a_ij = 1 or a_ji = 1.
    pub fn symmetrized(&self) -> Vec<Vec<usize>> {
        let mut nbrs = self.out.clone();
        for (i, j) in self.edges() {
            nbrs[j].push(i);
        }
        for row in &mut nbrs {
            row.sort_unstable();
            row.dedup();
        }
        nbrs
    }
}

/// How node ids in an edge-list file are numbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdBase {
    #[default]
    Zero,
    One,
}

impl IdBase {
    fn offset(self) -> usize {
        match self {
            IdBase::Zero => 0,
            IdBase::One => 1,
        }
    }
}

#[derive(Debug, Deserialize)]
struct EdgeRecord {
    src: usize,
    dst: usize,
}

/// Read a `src,dst` edge list for a graph of `n_nodes` nodes.
pub fn read_edge_list(path: &Path, n_nodes: usize, base: IdBase) -> Result<AdjacencyMatrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_edge_list_from(file, n_nodes, base).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path, message),
        other => other,
    })
}

pub fn read_edge_list_from<R: Read>(
    reader: R,
    n_nodes: usize,
    base: IdBase,
) -> Result<AdjacencyMatrix> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse("<edges>", e.to_string()))?
        .clone();
    if headers.len() < 2 || &headers[0] != "src" || &headers[1] != "dst" {
        return Err(Error::parse(
            "<edges>",
            format!("expected header `src,dst`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let offset = base.offset();
    let mut edges = Vec::new();
    for (line, rec) in rdr.deserialize::<EdgeRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::parse("<edges>", format!("record {}: {e}", line + 1)))?;
        if rec.src < offset || rec.dst < offset {
            return Err(Error::validation(format!(
                "edge record {} has id below the declared base {offset}",
                line + 1
            )));
        }
        edges.push((rec.src - offset, rec.dst - offset));
    }
    AdjacencyMatrix::from_edges(n_nodes, edges)
}

/// Write every directed edge as a `src,dst` row.
pub fn write_edge_list(path: &Path, adj: &AdjacencyMatrix, base: IdBase) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let offset = base.offset();
    wtr.write_record(["src", "dst"])
        .map_err(|e| Error::parse(path, e.to_string()))?;
    for (i, j) in adj.edges() {
        wtr.write_record([(i + offset).to_string(), (j + offset).to_string()])
            .map_err(|e| Error::parse(path, e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

/// All-pairs hop counts on the symmetrized graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMatrix {
    n: usize,
    hops: Vec<u32>,
}

impl DistanceMatrix {
    const UNREACHABLE: u32 = u32::MAX;

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    /// Shortest-path length, or `None` when no path exists.
    pub fn get(&self, i: usize, j: usize) -> Option<u32> {
        match self.hops[i * self.n + j] {
            Self::UNREACHABLE => None,
            d => Some(d),
        }
    }
}

/// Unweighted all-pairs shortest paths by one BFS per source.
pub fn shortest_path_distances(adj: &AdjacencyMatrix) -> DistanceMatrix {
    let n = adj.n_nodes();
    let nbrs = adj.symmetrized();
    let rows: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map(|src| bfs_hops(&nbrs, src))
        .collect();
    DistanceMatrix {
        n,
        hops: rows.concat(),
    }
}

fn bfs_hops(nbrs: &[Vec<usize>], src: usize) -> Vec<u32> {
    let mut dist = vec![DistanceMatrix::UNREACHABLE; nbrs.len()];
    let mut queue = VecDeque::new();
    dist[src] = 0;
    queue.push_back(src);
    while let Some(u) = queue.pop_front() {
        let next = dist[u] + 1;
        for &v in &nbrs[u] {
            if dist[v] == DistanceMatrix::UNREACHABLE {
                dist[v] = next;
                queue.push_back(v);
            }
        }
    }
    dist
}

#[derive(Debug, Clone, PartialEq)]
enum WeightStorage {
    Dense(Vec<f64>),
    /// Off-diagonal entries with w_ij > 0 only.
    Sparse(Vec<Vec<(usize, f64)>>),
}

/// Closeness weights w_ij of the graph-assisted CRP. Only off-diagonal
/// entries are meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    h: f64,
    storage: WeightStorage,
}

/// w = 1 for d ≤ 1, exp(−d·h) beyond, 0 when unreachable.
fn closeness(d: Option<u32>, h: f64) -> f64 {
    match d {
        Some(d) if d <= 1 => 1.0,
        Some(d) => (-(d as f64) * h).exp(),
        None => 0.0,
    }
}

pub fn build_weights(dist: &DistanceMatrix, h: f64) -> Result<WeightMatrix> {
    build_weights_with_limit(dist, h, DEFAULT_DENSE_WEIGHT_LIMIT)
}

/// As [`build_weights`], storing sparsely when the graph has more than
/// `dense_limit` nodes.
pub fn build_weights_with_limit(
    dist: &DistanceMatrix,
    h: f64,
    dense_limit: usize,
) -> Result<WeightMatrix> {
    if !(h >= 0.0) || !h.is_finite() {
        return Err(Error::validation(format!(
            "smoothing scale h must be finite and non-negative, got {h}"
        )));
    }
    let n = dist.n_nodes();
    let storage = if n <= dense_limit {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                w[i * n + j] = closeness(dist.get(i, j), h);
            }
        }
        WeightStorage::Dense(w)
    } else {
        let rows = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .filter_map(|j| {
                        let w = closeness(dist.get(i, j), h);
                        (w > 0.0).then_some((j, w))
                    })
                    .collect()
            })
            .collect();
        WeightStorage::Sparse(rows)
    };
    Ok(WeightMatrix { n, h, storage })
}

impl WeightMatrix {
    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, WeightStorage::Sparse(_))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            WeightStorage::Dense(w) => w[i * self.n + j],
            WeightStorage::Sparse(rows) => {
                if i == j {
                    return 1.0;
                }
                rows[i]
                    .binary_search_by_key(&j, |&(k, _)| k)
                    .map(|pos| rows[i][pos].1)
                    .unwrap_or(0.0)
            }
        }
    }

    /// Off-diagonal entries of row `i` in increasing column order. Dense
    /// storage yields zero entries too; sparse storage skips them.
    pub fn row(&self, i: usize) -> WeightRow<'_> {
        match &self.storage {
            WeightStorage::Dense(w) => WeightRow::Dense {
                row: &w[i * self.n..(i + 1) * self.n],
                skip: i,
                pos: 0,
            },
            WeightStorage::Sparse(rows) => WeightRow::Sparse(rows[i].iter()),
        }
    }

    /// Σ_{j≠i} w_ij.
    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, w)| w).sum()
    }
}

pub enum WeightRow<'a> {
    Dense {
        row: &'a [f64],
        skip: usize,
        pos: usize,
    },
    Sparse(std::slice::Iter<'a, (usize, f64)>),
}

impl Iterator for WeightRow<'_> {
    type Item = (usize, f64);

    fn next(&mut self) -> Option<(usize, f64)> {
        match self {
            WeightRow::Dense { row, skip, pos } => {
                if *pos == *skip {
                    *pos += 1;
                }
                let j = *pos;
                let w = *row.get(j)?;
                *pos += 1;
                Some((j, w))
            }
            WeightRow::Sparse(it) => it.next().copied(),
        }
    }
}

/// Row-normalized adjacency: entry (i, j) = a_ij / n_i, zero rows for
/// nodes without out-edges.
#[derive(Debug, Clone, PartialEq)]
pub struct RowNormalizedAdjacency {
    rows: Vec<Vec<usize>>,
}

pub fn row_normalized_adjacency(adj: &AdjacencyMatrix) -> RowNormalizedAdjacency {
    RowNormalizedAdjacency {
        rows: (0..adj.n_nodes()).map(|i| adj.neighbors(i).to_vec()).collect(),
    }
}

impl RowNormalizedAdjacency {
    pub fn n_nodes(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.rows[i];
        if row.binary_search(&j).is_ok() {
            1.0 / row.len() as f64
        } else {
            0.0
        }
    }

    /// n_i^{-1} Σ_j a_ij y_j for one node.
    pub fn apply_row(&self, i: usize, y: &[f64]) -> f64 {
        let row = &self.rows[i];
        if row.is_empty() {
            return 0.0;
        }
        row.iter().map(|&j| y[j]).sum::<f64>() / row.len() as f64
    }

    /// Matrix-vector product with a length-N vector.
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.apply_row(i, y)).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n_nodes();
        DMatrix::from_fn(n, n, |i, j| self.get(i, j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path3() -> AdjacencyMatrix {
        AdjacencyMatrix::from_undirected_edges(3, [(0, 1), (1, 2)]).unwrap()
    }

    /// Dense Floyd–Warshall on the symmetrized graph.
    fn floyd_warshall(adj: &AdjacencyMatrix) -> Vec<Vec<Option<u32>>> {
        let n = adj.n_nodes();
        let inf = u64::MAX / 4;
        let mut d = vec![vec![inf; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0;
        }
        for (i, j) in adj.edges() {
            d[i][j] = 1;
            d[j][i] = 1;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = d[i][k] + d[k][j];
                    if via < d[i][j] {
                        d[i][j] = via;
                    }
                }
            }
        }
        d.into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|v| (v < inf).then_some(v as u32))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn path_graph_distances() {
        let d = shortest_path_distances(&path3());
        assert_eq!(d.get(0, 2), Some(2));
        assert_eq!(d.get(0, 1), Some(1));
        for i in 0..3 {
            assert_eq!(d.get(i, i), Some(0));
        }
    }

    #[test]
    fn disconnected_components_are_unreachable() {
        let adj = AdjacencyMatrix::from_undirected_edges(4, [(0, 1), (2, 3)]).unwrap();
        let d = shortest_path_distances(&adj);
        assert_eq!(d.get(0, 2), None);
        assert_eq!(d.get(3, 1), None);
        assert_eq!(d.get(2, 3), Some(1));
    }

    #[test]
    fn empty_graph_is_all_unreachable() {
        let d = shortest_path_distances(&AdjacencyMatrix::empty(3));
        assert_eq!(d.get(0, 1), None);
        assert_eq!(d.get(1, 1), Some(0));
    }

    #[test]
    fn directed_edges_are_symmetrized_for_distances() {
        let adj = AdjacencyMatrix::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        let d = shortest_path_distances(&adj);
        assert_eq!(d.get(2, 0), Some(2));
    }

    #[test]
    fn weight_cases() {
        let d = shortest_path_distances(
            &AdjacencyMatrix::from_undirected_edges(5, [(0, 1), (1, 2), (2, 3)]).unwrap(),
        );
        let w = build_weights(&d, 0.5).unwrap();
        assert_eq!(w.get(0, 1), 1.0);
        assert_eq!(w.get(0, 3), (-1.5f64).exp());
        assert_eq!(w.get(0, 4), 0.0);

        let w0 = build_weights(&d, 0.0).unwrap();
        assert_eq!(w0.get(0, 3), 1.0);
        // Unreachable stays zero even at h = 0.
        assert_eq!(w0.get(0, 4), 0.0);
    }

    #[test]
    fn distance_four_at_zero_h_is_one() {
        let adj =
            AdjacencyMatrix::from_undirected_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let w = build_weights(&shortest_path_distances(&adj), 0.0).unwrap();
        assert_eq!(w.get(0, 4), 1.0);
    }

    #[test]
    fn negative_h_rejected() {
        let d = shortest_path_distances(&path3());
        assert!(matches!(build_weights(&d, -0.1), Err(Error::Validation(_))));
        assert!(build_weights(&d, f64::NAN).is_err());
    }

    #[test]
    fn sparse_storage_matches_dense() {
        let adj = AdjacencyMatrix::from_undirected_edges(
            6,
            [(0, 1), (1, 2), (3, 4)],
        )
        .unwrap();
        let d = shortest_path_distances(&adj);
        let dense = build_weights_with_limit(&d, 0.7, 100).unwrap();
        let sparse = build_weights_with_limit(&d, 0.7, 2).unwrap();
        assert!(sparse.is_sparse() && !dense.is_sparse());
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    assert_eq!(dense.get(i, j), sparse.get(i, j));
                }
            }
            let dense_nz: Vec<_> = dense.row(i).filter(|&(_, w)| w > 0.0).collect();
            let sparse_row: Vec<_> = sparse.row(i).collect();
            assert_eq!(dense_nz, sparse_row);
            assert_eq!(dense.row(i).count(), 5);
        }
    }

    #[test]
    fn row_normalization_cases() {
        // 0 -> 1, 0 -> 2; node 1 -> 0; node 2 isolated (no out-edges).
        let adj = AdjacencyMatrix::from_edges(3, [(0, 1), (0, 2), (1, 0)]).unwrap();
        let w = row_normalized_adjacency(&adj).to_dense();
        let expected = DMatrix::from_row_slice(3, 3, &[0.0, 0.5, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(w, expected);
    }

    #[test]
    fn directed_star_rows_match_hand_computation() {
        // Hub 0 points to 1, 2, 3; leaf 3 points back to 0 and to 1.
        let adj = AdjacencyMatrix::from_edges(4, [(0, 1), (0, 2), (0, 3), (3, 0), (3, 1)]).unwrap();
        let rn = row_normalized_adjacency(&adj);
        let third = 1.0 / 3.0;
        assert_eq!(rn.get(0, 1), third);
        assert_eq!(rn.get(0, 3), third);
        assert_eq!(rn.get(1, 0), 0.0);
        assert_eq!(rn.get(3, 0), 0.5);
        assert_eq!(rn.get(3, 1), 0.5);
        assert_eq!(rn.apply(&[1.0, 2.0, 3.0, 4.0]), vec![3.0, 0.0, 0.0, 1.5]);
    }

    #[test]
    fn dense_constructor_validates() {
        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.0, 0.0]);
        assert!(AdjacencyMatrix::from_dense(&bad).is_err());
        let diag = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(AdjacencyMatrix::from_dense(&diag).is_err());
        let ok = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(AdjacencyMatrix::from_dense(&ok).unwrap().to_dense(), ok);
    }

    #[test]
    fn edge_list_ingestion() {
        let csv = "src,dst\n1,2\n2,1\n1,2\n3,2\n";
        let adj = read_edge_list_from(csv.as_bytes(), 4, IdBase::One).unwrap();
        assert_eq!(adj.edge_count(), 3);
        assert!(adj.has_edge(0, 1) && adj.has_edge(1, 0) && adj.has_edge(2, 1));
        assert_eq!(adj.out_degree(3), 0);

        let looped = "src,dst\n0,0\n";
        assert!(read_edge_list_from(looped.as_bytes(), 2, IdBase::Zero).is_err());
        let below = "src,dst\n0,1\n";
        assert!(read_edge_list_from(below.as_bytes(), 2, IdBase::One).is_err());
        let header = "a,b\n0,1\n";
        assert!(matches!(
            read_edge_list_from(header.as_bytes(), 2, IdBase::Zero),
            Err(Error::Parse { .. })
        ));
    }

    fn arb_graph() -> impl Strategy<Value = AdjacencyMatrix> {
        (1usize..=20).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..(2 * n)).prop_map(move |pairs| {
                AdjacencyMatrix::from_edges(n, pairs.into_iter().filter(|(a, b)| a != b)).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn bfs_matches_floyd_warshall(adj in arb_graph()) {
            let d = shortest_path_distances(&adj);
            let oracle = floyd_warshall(&adj);
            let n = adj.n_nodes();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(d.get(i, j), oracle[i][j]);
                    prop_assert_eq!(d.get(i, j), d.get(j, i));
                    for k in 0..n {
                        if let (Some(a), Some(b), Some(c)) = (d.get(i, k), d.get(i, j), d.get(j, k)) {
                            prop_assert!(a <= b + c);
                        }
                    }
                }
            }
        }

        #[test]
        fn weight_row_sums_shrink_with_h(adj in arb_graph(), h in 0.0f64..3.0, dh in 0.0f64..2.0) {
            let d = shortest_path_distances(&adj);
            let lo = build_weights(&d, h).unwrap();
            let hi = build_weights(&d, h + dh).unwrap();
            for i in 0..adj.n_nodes() {
                let (a, b) = (lo.row_sum(i), hi.row_sum(i));
                prop_assert!(a.is_finite() && a >= 0.0);
                prop_assert!(b <= a);
                for j in 0..adj.n_nodes() {
                    prop_assert_eq!(lo.get(i, j), lo.get(j, i));
                    prop_assert!((0.0..=1.0).contains(&lo.get(i, j)));
                }
            }
        }

        #[test]
        fn zero_h_on_connected_graph_is_all_ones(n in 2usize..15) {
            // A path is connected.
            let adj = AdjacencyMatrix::from_undirected_edges(n, (1..n).map(|i| (i - 1, i))).unwrap();
            let w = build_weights(&shortest_path_distances(&adj), 0.0).unwrap();
            for i in 0..n {
                prop_assert!(w.row(i).all(|(_, v)| v == 1.0));
            }
        }

        #[test]
        fn normalized_rows_sum_to_one_or_zero(adj in arb_graph()) {
            let rn = row_normalized_adjacency(&adj).to_dense();
            for i in 0..adj.n_nodes() {
                let s: f64 = rn.row(i).sum();
                if adj.out_degree(i) == 0 {
                    prop_assert_eq!(s, 0.0);
                } else {
                    prop_assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
