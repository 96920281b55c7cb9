//! Communication graphs and doubly stochastic consensus matrices.
//!
//! Four graph families are provided (Watts-Strogatz, Erdős–Rényi, the
//! unwrapped 8-neighbour lattice and the two-clique barbell), together with
//! the lazy Metropolis and normalized-Laplacian weight constructions and the
//! spectral quantities derived from them.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Tolerance used when validating row and column sums of a mixing matrix.
pub const STOCHASTIC_TOL: f64 = 1e-10;

/// Number of seeds tried by the random generators before giving up on
/// producing a connected graph.
pub const MAX_CONNECT_ATTEMPTS: u64 = 100;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("invalid graph parameters: {0}")]
    InvalidParameters(String),
    #[error("edge ({0}, {1}) is a self-loop or has an endpoint outside [0, {2})")]
    InvalidEdge(usize, usize, usize),
    #[error("graph is not connected")]
    Disconnected,
    #[error("no connected graph after {0} attempts")]
    ConnectivityRetriesExhausted(u64),
    #[error("matrix is not doubly stochastic: {0}")]
    NotDoublyStochastic(String),
    #[error("spectral decomposition failed: {0}")]
    Spectral(String),
    #[error("parse error: {0}")]
    Parse(String),
}

/// An undirected, connected graph without self-loops.
///
/// Edges are stored as ordered pairs `(i, j)` with `i < j`, sorted
/// lexicographically, so two graphs with the same edge set compare equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphTopology {
    n: usize,
    edges: Vec<(usize, usize)>,
    degrees: Vec<usize>,
    neighbors: Vec<Vec<usize>>,
}

impl GraphTopology {
    /// Builds a graph from an edge list. Duplicate edges (in either
    /// orientation) are merged. Fails on self-loops, out-of-range endpoints
    /// and disconnected graphs.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if n == 0 {
            return Err(GraphError::InvalidParameters("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b || a >= n || b >= n {
                return Err(GraphError::InvalidEdge(a, b, n));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &set {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        if !is_connected(&neighbors) {
            return Err(GraphError::Disconnected);
        }
        let degrees = neighbors.iter().map(Vec::len).collect();
        Ok(Self { n, edges: set.into_iter().collect(), degrees, neighbors })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn degree(&self, i: usize) -> usize {
        self.degrees[i]
    }

    /// Sorted neighbour list of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && i < self.n && self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Common degree if every node has the same degree.
    pub fn regular_degree(&self) -> Option<usize> {
        let d = self.degrees[0];
        self.degrees.iter().all(|&x| x == d).then_some(d)
    }

    pub fn max_degree(&self) -> usize {
        self.degrees.iter().copied().max().unwrap_or(0)
    }

    /// Serializes to the edge-list text format: first line `n`, then one
    /// `i j` pair per line (0-indexed).
    pub fn to_edge_list(&self) -> String {
        let mut out = String::with_capacity(8 * (self.edges.len() + 1));
        let _ = writeln!(out, "{}", self.n);
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let n: usize = lines
            .next()
            .ok_or_else(|| GraphError::Parse("empty edge list".into()))?
            .parse()
            .map_err(|e| GraphError::Parse(format!("node count: {e}")))?;
        let mut edges = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let mut next = || -> Result<usize, GraphError> {
                it.next()
                    .ok_or_else(|| GraphError::Parse(format!("bad edge line `{line}`")))?
                    .parse()
                    .map_err(|e| GraphError::Parse(format!("bad edge line `{line}`: {e}")))
            };
            edges.push((next()?, next()?));
        }
        Self::from_edges(n, edges)
    }
}

/// Breadth-first connectivity check over adjacency lists.
pub fn is_connected(neighbors: &[Vec<usize>]) -> bool {
    let n = neighbors.len();
    if n == 0 {
        return false;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &neighbors[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == n
}

fn retry_connected<F>(seed: u64, mut build: F) -> Result<GraphTopology, GraphError>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<GraphTopology, GraphError>,
{
    for attempt in 0..MAX_CONNECT_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        match build(&mut rng) {
            Ok(g) => return Ok(g),
            Err(GraphError::Disconnected) => {
                log::debug!("seed {} gave a disconnected graph, retrying", seed.wrapping_add(attempt));
            }
            Err(e) => return Err(e),
        }
    }
    Err(GraphError::ConnectivityRetriesExhausted(MAX_CONNECT_ATTEMPTS))
}

/// Watts-Strogatz small-world graph: a ring lattice where every node links
/// to its `k` nearest neighbours, after which each lattice edge `(u, v)` has
/// its far endpoint moved, with probability `theta`, to a node drawn
/// uniformly among those not already adjacent to `u`.
pub fn watts_strogatz(n: usize, k: usize, theta: f64, seed: u64) -> Result<GraphTopology, GraphError> {
    if k < 2 || !k.is_multiple_of(2) || k >= n {
        return Err(GraphError::InvalidParameters(format!(
            "Watts-Strogatz needs an even k with 2 <= k < n (n={n}, k={k})"
        )));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(GraphError::InvalidParameters(format!("rewiring probability {theta} outside [0, 1]")));
    }
    retry_connected(seed, |rng| {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for u in 0..n {
            for j in 1..=k / 2 {
                let v = (u + j) % n;
                adj[u].insert(v);
                adj[v].insert(u);
            }
        }
        for j in 1..=k / 2 {
            for u in 0..n {
                let v = (u + j) % n;
                if !adj[u].contains(&v) || rng.random::<f64>() >= theta {
                    continue;
                }
                let candidates: Vec<usize> = (0..n).filter(|&w| w != u && !adj[u].contains(&w)).collect();
                if let Some(&w) = candidates.choose(rng) {
                    adj[u].remove(&v);
                    adj[v].remove(&u);
                    adj[u].insert(w);
                    adj[w].insert(u);
                }
            }
        }
        let edges = adj
            .iter()
            .enumerate()
            .flat_map(|(u, set)| set.iter().filter(move |&&v| u < v).map(move |&v| (u, v)));
        GraphTopology::from_edges(n, edges)
    })
}

/// Erdős–Rényi G(n, p) graph, resampled with an incremented seed until
/// connected.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<GraphTopology, GraphError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(GraphError::InvalidParameters(format!("edge probability {p} outside (0, 1]")));
    }
    if n < 2 {
        return Err(GraphError::InvalidParameters("Erdős–Rényi graph needs n >= 2".into()));
    }
    retry_connected(seed, |rng| {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        GraphTopology::from_edges(n, edges)
    })
}

/// Unwrapped 8-connected grid: node `r * cols + c` links to every Moore
/// neighbour inside the grid.
pub fn lattice8(rows: usize, cols: usize) -> Result<GraphTopology, GraphError> {
    if rows < 2 || cols < 2 {
        return Err(GraphError::InvalidParameters(format!("lattice needs rows, cols >= 2 (got {rows}x{cols})")));
    }
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let u = r * cols + c;
            // forward half of the Moore neighbourhood: E, SW, S, SE
            if c + 1 < cols {
                edges.push((u, u + 1));
            }
            if r + 1 < rows {
                edges.push((u, u + cols));
                if c > 0 {
                    edges.push((u, u + cols - 1));
                }
                if c + 1 < cols {
                    edges.push((u, u + cols + 1));
                }
            }
        }
    }
    GraphTopology::from_edges(rows * cols, edges)
}

/// Two cliques of size `n/2` joined by `bridges` edges pairing node `i` of
/// the first clique with node `i` of the second.
pub fn barbell(n: usize, bridges: usize) -> Result<GraphTopology, GraphError> {
    if !n.is_multiple_of(2) || n < 4 {
        return Err(GraphError::InvalidParameters(format!("barbell needs an even n >= 4 (got {n})")));
    }
    let half = n / 2;
    if bridges == 0 || bridges > half {
        return Err(GraphError::InvalidParameters(format!(
            "bridge count {bridges} outside [1, {half}]"
        )));
    }
    let mut edges = Vec::new();
    for offset in [0, half] {
        for i in 0..half {
            for j in i + 1..half {
                edges.push((offset + i, offset + j));
            }
        }
    }
    edges.extend((0..bridges).map(|i| (i, half + i)));
    GraphTopology::from_edges(n, edges)
}

/// A validated doubly stochastic mixing matrix with its second-largest
/// singular value cached.
#[derive(Debug, Clone)]
pub struct ConsensusMatrix {
    entries: DMatrix<f64>,
    sigma2: f64,
}

impl ConsensusMatrix {
    /// Validates nonnegativity and row/column sums (within
    /// [`STOCHASTIC_TOL`]) and computes the spectrum.
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self, GraphError> {
        let n = entries.nrows();
        if n == 0 || entries.ncols() != n {
            return Err(GraphError::NotDoublyStochastic(format!(
                "matrix must be square and non-empty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if let Some(v) = entries.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(GraphError::NotDoublyStochastic(format!("entry {v} is negative or non-finite")));
        }
        for i in 0..n {
            let row: f64 = entries.row(i).iter().sum();
            let col: f64 = entries.column(i).iter().sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL || (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(GraphError::NotDoublyStochastic(format!(
                    "row {i} sums to {row}, column {i} sums to {col}"
                )));
            }
        }
        let sigma2 = second_singular_value(&entries)?;
        Ok(Self { entries, sigma2 })
    }

    /// The `n x n` matrix of all `1/n`: perfect averaging in one step.
    pub fn uniform(n: usize) -> Self {
        let entries = DMatrix::from_element(n, n, 1.0 / n as f64);
        Self::from_matrix(entries).expect("uniform averaging matrix is doubly stochastic")
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn spectral_gap(&self) -> f64 {
        1.0 - self.sigma2
    }

    /// Nonzero entries of row `i` as `(column, weight)` pairs in column
    /// order.
    pub fn row_support(&self, i: usize) -> Vec<(usize, f64)> {
        (0..self.n()).filter_map(|j| {
            let w = self.entries[(i, j)];
            (w != 0.0).then_some((j, w))
        })
        .collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..i).all(|j| (self.entries[(i, j)] - self.entries[(j, i)]).abs() <= tol))
    }

    /// One CSV row per matrix row, full `f64` round-trip precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n() {
            let row: Vec<String> = self.entries.row(i).iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, GraphError> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|e| GraphError::Parse(e.to_string())))
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(GraphError::Parse("matrix CSV is not square".into()));
        }
        Self::from_matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

/// Lazy Metropolis weights: `W_ij = 1 / (2 max(d_i + 1, d_j + 1))` on
/// edges, zero off the graph, and the diagonal completing each row to 1.
pub fn lazy_metropolis(g: &GraphTopology) -> ConsensusMatrix {
    let n = g.n();
    let mut w = DMatrix::zeros(n, n);
    for &(i, j) in g.edges() {
        let v = 1.0 / (2.0 * (g.degree(i).max(g.degree(j)) + 1) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        let off: f64 = g.neighbors(i).iter().map(|&j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    ConsensusMatrix::from_matrix(w).expect("lazy Metropolis weights are doubly stochastic for any graph")
}

/// Normalized-Laplacian weights. For a `d`-regular graph this is
/// `I - d/(d+1) L_norm`; otherwise `I - (D - A)/(d_max + 1)`, which equals
/// `I - D^{1/2} L_norm D^{1/2} / (d_max + 1)`.
pub fn laplacian_weights(g: &GraphTopology) -> Result<ConsensusMatrix, GraphError> {
    let n = g.n();
    let mut w = DMatrix::identity(n, n);
    if let Some(d) = g.regular_degree() {
        let df = d as f64;
        let scale = df / (df + 1.0);
        // L_norm = I - A/d
        for i in 0..n {
            w[(i, i)] -= scale;
        }
        for &(i, j) in g.edges() {
            let v = scale / df;
            w[(i, j)] += v;
            w[(j, i)] += v;
        }
    } else {
        let scale = 1.0 / (g.max_degree() as f64 + 1.0);
        for i in 0..n {
            w[(i, i)] -= scale * g.degree(i) as f64;
        }
        for &(i, j) in g.edges() {
            w[(i, j)] += scale;
            w[(j, i)] += scale;
        }
    }
    ConsensusMatrix::from_matrix(w)
}

/// Second-largest singular value. Symmetric inputs use a full symmetric
/// eigendecomposition (singular values are the absolute eigenvalues);
/// anything else goes through an SVD.
pub fn second_singular_value(m: &DMatrix<f64>) -> Result<f64, GraphError> {
    let n = m.nrows();
    if n == 1 {
        return Ok(0.0);
    }
    let symmetric = (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= 1e-14));
    let mut values: Vec<f64> = if symmetric {
        let eig = nalgebra::SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000)
            .ok_or_else(|| GraphError::Spectral("symmetric eigensolver did not converge".into()))?;
        eig.eigenvalues.iter().map(|v| v.abs()).collect()
    } else {
        let svd = nalgebra::SVD::try_new(m.clone(), false, false, f64::EPSILON, 10_000)
            .ok_or_else(|| GraphError::Spectral("SVD did not converge".into()))?;
        svd.singular_values.iter().copied().collect()
    };
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values[1].clamp(0.0, 1.0))
}

/// `1 - sigma_2(W)`.
pub fn spectral_gap(w: &ConsensusMatrix) -> f64 {
    w.spectral_gap()
}

/// Convenience: the `71 n^2` ceiling on the inverse spectral gap of the lazy
/// Metropolis matrix, minus the observed inverse gap. Positive means the
/// ceiling holds.
pub fn lazy_metropolis_gap_margin(w: &ConsensusMatrix) -> f64 {
    let n = w.n() as f64;
    71.0 * n * n - 1.0 / w.spectral_gap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bfs_connected(g: &GraphTopology) -> bool {
        let adj: Vec<Vec<usize>> = (0..g.n()).map(|i| g.neighbors(i).to_vec()).collect();
        is_connected(&adj)
    }

    #[test]
    fn ws_without_rewiring_is_ring() {
        let g = watts_strogatz(6, 2, 0.0, 11).unwrap();
        let expected: Vec<(usize, usize)> = vec![(0, 1), (0, 5), (1, 2), (2, 3), (3, 4), (4, 5)];
        assert_eq!(g.edges(), expected.as_slice());
        assert!(g.degrees().iter().all(|&d| d == 2));
    }

    #[test]
    fn ws_preserves_edge_count() {
        let g = watts_strogatz(100, 20, 0.02, 7).unwrap();
        assert_eq!(g.edge_count(), 1000);
        assert!(bfs_connected(&g));
        assert_eq!(g.degrees().iter().sum::<usize>(), 2000);
    }

    #[test]
    fn ws_rejects_bad_parameters() {
        assert!(matches!(watts_strogatz(4, 4, 0.1, 0), Err(GraphError::InvalidParameters(_))));
        assert!(matches!(watts_strogatz(10, 3, 0.1, 0), Err(GraphError::InvalidParameters(_))));
        assert!(matches!(watts_strogatz(10, 2, 1.5, 0), Err(GraphError::InvalidParameters(_))));
    }

    #[test]
    fn ws_is_deterministic() {
        let a = watts_strogatz(40, 6, 0.3, 5).unwrap();
        let b = watts_strogatz(40, 6, 0.3, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn er_complete_when_p_is_one() {
        let g = erdos_renyi(5, 1.0, 99).unwrap();
        assert_eq!(g.edge_count(), 10);
    }

    #[test]
    fn er_edge_count_near_binomial_mean() {
        let g = erdos_renyi(100, 0.06, 3).unwrap();
        let pairs = 4950.0;
        let mean = 0.06 * pairs;
        let sd = (pairs * 0.06 * 0.94f64).sqrt();
        assert!((g.edge_count() as f64 - mean).abs() <= 4.0 * sd, "edges {}", g.edge_count());
        assert!(bfs_connected(&g));
    }

    #[test]
    fn er_two_nodes_is_single_edge() {
        let g = erdos_renyi(2, 0.5, 1).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn er_retries_exhaust() {
        // with p tiny a 60-node graph is never connected
        assert_eq!(erdos_renyi(60, 1e-6, 0), Err(GraphError::ConnectivityRetriesExhausted(100)));
    }

    #[test]
    fn lattice_small_cases() {
        let g = lattice8(2, 2).unwrap();
        assert_eq!(g.edge_count(), 6);
        let g = lattice8(3, 3).unwrap();
        assert_eq!(g.degree(4), 8);
        for corner in [0, 2, 6, 8] {
            assert_eq!(g.degree(corner), 3);
        }
        for edge in [1, 3, 5, 7] {
            assert_eq!(g.degree(edge), 5);
        }
        let g = lattice8(10, 10).unwrap();
        assert_eq!(g.n(), 100);
        assert!(bfs_connected(&g));
        assert!(lattice8(1, 5).is_err());
    }

    #[test]
    fn barbell_shapes() {
        let g = barbell(4, 1).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (2, 3)]);
        let g = barbell(100, 1).unwrap();
        assert_eq!(g.edge_count(), 2 * 50 * 49 / 2 + 1);
        assert!(barbell(6, 4).is_err());
        assert!(barbell(7, 1).is_err());
        assert!(barbell(6, 0).is_err());
    }

    #[test]
    fn from_edges_validation() {
        assert_eq!(GraphTopology::from_edges(3, [(0, 0)]), Err(GraphError::InvalidEdge(0, 0, 3)));
        assert_eq!(GraphTopology::from_edges(3, [(0, 3)]), Err(GraphError::InvalidEdge(0, 3, 3)));
        assert_eq!(GraphTopology::from_edges(3, [(0, 1)]), Err(GraphError::Disconnected));
        let g = GraphTopology::from_edges(3, [(1, 0), (0, 1), (2, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn edge_list_roundtrip() {
        let g = watts_strogatz(30, 4, 0.2, 3).unwrap();
        let text = g.to_edge_list();
        assert!(text.starts_with("30\n"));
        assert_eq!(GraphTopology::from_edge_list(&text).unwrap(), g);
        assert!(GraphTopology::from_edge_list("3\n0 x\n").is_err());
    }

    #[test]
    fn lazy_metropolis_two_node_path() {
        let g = GraphTopology::from_edges(2, [(0, 1)]).unwrap();
        let w = lazy_metropolis(&g);
        assert_abs_diff_eq!(w.get(0, 0), 0.75);
        assert_abs_diff_eq!(w.get(0, 1), 0.25);
        assert_abs_diff_eq!(w.get(1, 0), 0.25);
        assert_abs_diff_eq!(w.get(1, 1), 0.75);
    }

    #[test]
    fn lazy_metropolis_complete_graph() {
        for n in [3usize, 5, 8, 13] {
            let g = erdos_renyi(n, 1.0, 0).unwrap();
            let w = lazy_metropolis(&g);
            let nf = n as f64;
            assert_abs_diff_eq!(w.get(0, 1), 1.0 / (2.0 * nf), epsilon = 1e-15);
            assert_abs_diff_eq!(w.get(0, 0), (nf + 1.0) / (2.0 * nf), epsilon = 1e-15);
            assert_abs_diff_eq!(w.sigma2(), 0.5, epsilon = 1e-12);
            assert_abs_diff_eq!(spectral_gap(&w), 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn laplacian_regular_and_irregular() {
        let tri = GraphTopology::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let w = laplacian_weights(&tri).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(w.get(i, j), 1.0 / 3.0, epsilon = 1e-15);
            }
        }
        let k2 = GraphTopology::from_edges(2, [(0, 1)]).unwrap();
        let w = laplacian_weights(&k2).unwrap();
        assert_abs_diff_eq!(w.get(0, 0), 0.5);
        assert_abs_diff_eq!(w.get(0, 1), 0.5);

        let star = GraphTopology::from_edges(5, [(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        assert!(star.regular_degree().is_none());
        let w = laplacian_weights(&star).unwrap();
        for i in 0..5 {
            let row: f64 = w.matrix().row(i).iter().sum();
            let col: f64 = w.matrix().column(i).iter().sum();
            assert_abs_diff_eq!(row, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(col, 1.0, epsilon = 1e-12);
        }
        // hub keeps 1 - 4/5, leaves keep 1 - 1/5
        assert_abs_diff_eq!(w.get(0, 0), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(w.get(1, 1), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn uniform_matrix_has_unit_gap() {
        let w = ConsensusMatrix::uniform(7);
        assert_abs_diff_eq!(w.spectral_gap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn barbell_gap_smaller_than_small_world() {
        let bar = lazy_metropolis(&barbell(100, 1).unwrap());
        let ws = lazy_metropolis(&watts_strogatz(100, 20, 0.02, 7).unwrap());
        assert!(bar.spectral_gap() < ws.spectral_gap());
    }

    #[test]
    fn rejects_non_stochastic() {
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.5, 0.4]);
        assert!(matches!(ConsensusMatrix::from_matrix(m), Err(GraphError::NotDoublyStochastic(_))));
        let m = DMatrix::from_row_slice(2, 2, &[1.5, -0.5, -0.5, 1.5]);
        assert!(ConsensusMatrix::from_matrix(m).is_err());
    }

    #[test]
    fn non_symmetric_path_uses_svd() {
        // a cyclic permutation is doubly stochastic with all singular values 1
        let m = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let w = ConsensusMatrix::from_matrix(m).unwrap();
        assert_abs_diff_eq!(w.sigma2(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn csv_roundtrip() {
        let w = lazy_metropolis(&lattice8(3, 3).unwrap());
        let back = ConsensusMatrix::from_csv(&w.to_csv()).unwrap();
        assert_eq!(back.matrix(), w.matrix());
    }
}
