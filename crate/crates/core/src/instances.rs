//! Synthetic benchmark instances and CSV regression data.
//!
//! All generators draw from Xoshiro256++ seeded through SplitMix64
//! (`seed_from_u64`), so a seed pins the instance on every platform.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Result, SolverError};
use crate::matrix::DenseMatrix;
use crate::reductions::GeneralInstance;
use crate::scalar::Scalar;

/// Dense `rows x cols` instance with i.i.d. Uniform[0, 1] entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomMatrixSpec {
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
}

/// `min ||Nx - v||_p` with `N` (`rows x cols`) and `v` Uniform[0, 1].
pub fn gen_random_matrix<T: Scalar>(spec: &RandomMatrixSpec, p: T) -> Result<GeneralInstance<T>> {
    if spec.rows == 0 || spec.cols == 0 {
        return Err(SolverError::InvalidInput("matrix dimensions must be positive".into()));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let data: Vec<T> = (0..spec.rows * spec.cols).map(|_| T::c(rng.gen::<f64>())).collect();
    let v: Vec<T> = (0..spec.rows).map(|_| T::c(rng.gen::<f64>())).collect();
    GeneralInstance::unconstrained(DenseMatrix::new(spec.rows, spec.cols, data)?, v, p)
}

/// Random geometric graph with labeled nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomGraphSpec {
    pub nodes: usize,
    pub ambient_dim: usize,
    pub k_neighbors: usize,
    pub labeled: usize,
    pub seed: u64,
}

impl RandomGraphSpec {
    pub fn new(nodes: usize, labeled: usize, seed: u64) -> Self {
        Self { nodes, ambient_dim: 10, k_neighbors: 10, labeled, seed }
    }
}

/// A weighted undirected graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub nodes: usize,
    /// Edges `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

impl Graph {
    pub fn is_connected(&self) -> bool {
        if self.nodes == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); self.nodes];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; self.nodes];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.nodes
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Symmetrized k-nearest-neighbor graph on the given points with weights
/// `exp(-d^2 / sigma^2)`, `sigma^2` the mean squared k-NN distance.
pub fn knn_graph(points: &[Vec<f64>], k: usize) -> Graph {
    let n = points.len();
    let mut edges = BTreeSet::new();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (sq_dist(&points[i], &points[j]), j)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(dist, j) in d.iter().take(k) {
            edges.insert((i.min(j), i.max(j)));
            total += dist;
            count += 1;
        }
    }
    let sigma2 = if count > 0 && total > 0.0 { total / count as f64 } else { 1.0 };
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    let weights = edges.iter().map(|&(i, j)| (-sq_dist(&points[i], &points[j]) / sigma2).exp()).collect();
    Graph { nodes: n, edges, weights }
}

/// Graph instance together with its generating data.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInstance<T> {
    pub instance: GeneralInstance<T>,
    pub graph: Graph,
    /// Labels of the last `labeled` nodes.
    pub labels: Vec<f64>,
    pub attempts: usize,
}

/// Semi-supervised labeling problem `min ||W^(1/p) B [x; g]||_p` over the
/// unlabeled node values `x`, with `B` the edge-node incidence matrix
/// (`+1` at the smaller endpoint) and the last `labeled` nodes fixed to `g`.
pub fn gen_random_graph<T: Scalar>(spec: &RandomGraphSpec, p: T) -> Result<GraphInstance<T>> {
    if spec.labeled == 0 || spec.labeled >= spec.nodes {
        return Err(SolverError::InvalidInput(format!(
            "need 0 < labeled < nodes, got {} of {}",
            spec.labeled, spec.nodes
        )));
    }
    if spec.k_neighbors == 0 || spec.k_neighbors >= spec.nodes || spec.ambient_dim == 0 {
        return Err(SolverError::InvalidInput("need 0 < k_neighbors < nodes and a positive dimension".into()));
    }
    if !(p >= T::one()) {
        return Err(SolverError::InvalidInput(format!("norm exponent must be >= 1, got {p}")));
    }
    const ATTEMPTS: usize = 10;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    for attempt in 1..=ATTEMPTS {
        let points: Vec<Vec<f64>> = (0..spec.nodes).map(|_| (0..spec.ambient_dim).map(|_| rng.gen::<f64>()).collect()).collect();
        let labels: Vec<f64> = (0..spec.labeled).map(|_| rng.gen::<f64>()).collect();
        let graph = knn_graph(&points, spec.k_neighbors);
        if !graph.is_connected() {
            continue;
        }
        let free = spec.nodes - spec.labeled;
        let pf = p.to_f64_lossy();
        let mut data = vec![T::zero(); graph.edges.len() * free];
        let mut v = vec![T::zero(); graph.edges.len()];
        for (e, (&(i, j), &w)) in graph.edges.iter().zip(&graph.weights).enumerate() {
            let s = w.powf(1.0 / pf);
            for (node, sign) in [(i, s), (j, -s)] {
                if node < free {
                    data[e * free + node] = T::c(sign);
                } else {
                    v[e] -= T::c(sign * labels[node - free]);
                }
            }
        }
        let instance = GeneralInstance::unconstrained(DenseMatrix::new(graph.edges.len(), free, data)?, v, p)?;
        return Ok(GraphInstance { instance, graph, labels, attempts: attempt });
    }
    Err(SolverError::GraphDisconnected(ATTEMPTS))
}

/// Regression data read from CSV: features with an appended intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvDataset {
    /// Feature rows, intercept last.
    pub features: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    /// Column names of `features`, ending in `"intercept"`.
    pub names: Vec<String>,
    /// Records dropped for non-numeric or non-finite cells.
    pub dropped: usize,
}

impl CsvDataset {
    /// `min ||Nx - v||_p` with `N` the features and `v` the target.
    pub fn into_instance<T: Scalar>(self, p: T) -> Result<GeneralInstance<T>> {
        let rows = self.features.len();
        let cols = self.names.len();
        let data = self.features.into_iter().flatten().map(T::c).collect();
        GeneralInstance::unconstrained(DenseMatrix::new(rows, cols, data)?, self.target.into_iter().map(T::c).collect(), p)
    }
}

fn parse_cell(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a numeric CSV with a header row; `target` names the response column.
pub fn load_csv(path: impl AsRef<Path>, target: &str) -> Result<CsvDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path.as_ref()).map_err(csv_error)?;
    let headers: Vec<String> = reader.headers().map_err(csv_error)?.iter().map(|h| h.trim().to_string()).collect();
    let target_idx = headers.iter().position(|h| h == target).ok_or_else(|| SolverError::Parse {
        row: 1,
        column: target.to_string(),
        message: format!("target column '{target}' not found in header"),
    })?;
    let mut names: Vec<String> = headers.iter().enumerate().filter(|&(i, _)| i != target_idx).map(|(_, h)| h.clone()).collect();
    names.push("intercept".to_string());
    let mut features = Vec::new();
    let mut ys = Vec::new();
    let mut dropped = 0;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let parsed: Option<Vec<f64>> = record.iter().map(parse_cell).collect();
        match parsed {
            Some(vals) => {
                ys.push(vals[target_idx]);
                let mut row: Vec<f64> = vals.iter().enumerate().filter(|&(i, _)| i != target_idx).map(|(_, &v)| v).collect();
                row.push(1.0);
                features.push(row);
            }
            None => dropped += 1,
        }
    }
    if features.is_empty() {
        return Err(SolverError::EmptyAfterCleaning);
    }
    Ok(CsvDataset { features, target: ys, names, dropped })
}

fn csv_error(e: csv::Error) -> SolverError {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => SolverError::Io(io),
        kind => SolverError::Parse { row, column: String::new(), message: format!("{kind:?}") },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn random_matrix_is_deterministic_and_in_range() {
        let spec = RandomMatrixSpec { rows: 20, cols: 7, seed: 42 };
        let a = gen_random_matrix::<f64>(&spec, 8.0).unwrap();
        let b = gen_random_matrix::<f64>(&spec, 8.0).unwrap();
        assert_eq!(a, b);
        assert!(a.n_mat.as_slice().iter().chain(&a.v).all(|&x| (0.0..=1.0).contains(&x)));
        assert_eq!((a.n_mat.rows(), a.n_mat.cols(), a.a.rows()), (20, 7, 0));
        let c = gen_random_matrix::<f64>(&RandomMatrixSpec { seed: 43, ..spec }, 8.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn paper_mid_size_shape() {
        let inst = gen_random_matrix::<f64>(&RandomMatrixSpec { rows: 500, cols: 400, seed: 1 }, 8.0).unwrap();
        assert_eq!((inst.n_mat.rows(), inst.n_mat.cols()), (500, 400));
    }

    #[test]
    fn graph_construction() {
        let spec = RandomGraphSpec::new(60, 5, 7);
        let g = gen_random_graph::<f64>(&spec, 4.0).unwrap();
        assert_eq!(g, gen_random_graph::<f64>(&spec, 4.0).unwrap());
        let edges = g.graph.edges.len();
        assert_eq!((g.instance.n_mat.rows(), g.instance.n_mat.cols()), (edges, 55));
        let mut degree = vec![0; 60];
        for &(i, j) in &g.graph.edges {
            assert!(i < j);
            degree[i] += 1;
            degree[j] += 1;
        }
        assert!(degree.iter().all(|&d| d >= 10));
        assert!(g.graph.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
        assert!(g.labels.iter().all(|&l| (0.0..=1.0).contains(&l)));
        // N [x; g] reproduces W^(1/p) B applied to the full node vector.
        let x: Vec<f64> = (0..55).map(|i| i as f64 / 55.0).collect();
        let r = g.instance.residual(&x);
        for (e, (&(i, j), &w)) in g.graph.edges.iter().zip(&g.graph.weights).enumerate() {
            let val = |k: usize| if k < 55 { x[k] } else { g.labels[k - 55] };
            let want = w.powf(0.25) * (val(i) - val(j));
            assert!((r[e] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn disconnected_graph_reported() {
        // Two far-apart clusters with k = 1 cannot connect.
        let pts = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        assert!(!knn_graph(&pts, 1).is_connected());
        assert!(knn_graph(&pts, 2).is_connected());
        let spec = RandomGraphSpec { nodes: 30, ambient_dim: 10, k_neighbors: 1, labeled: 2, seed: 3 };
        assert!(matches!(gen_random_graph::<f64>(&spec, 2.0), Err(SolverError::GraphDisconnected(10))));
    }

    #[test]
    fn csv_fixture_exact() {
        let f = write_csv("a,b,y\n1,2,3\n4,5,6\n-1,0.5,2\n");
        let d = load_csv(f.path(), "y").unwrap();
        assert_eq!(d.features, vec![vec![1.0, 2.0, 1.0], vec![4.0, 5.0, 1.0], vec![-1.0, 0.5, 1.0]]);
        assert_eq!(d.target, vec![3.0, 6.0, 2.0]);
        assert_eq!(d.names, vec!["a", "b", "intercept"]);
        assert_eq!(d.dropped, 0);
        let inst = d.into_instance(2.0f64).unwrap();
        assert_eq!((inst.n_mat.rows(), inst.n_mat.cols()), (3, 3));
    }

    #[test]
    fn csv_drops_bad_rows() {
        let f = write_csv("x,y\n1,2\nfoo,3\n2,4\n");
        let d = load_csv(f.path(), "y").unwrap();
        assert_eq!((d.features.len(), d.dropped), (2, 1));
    }

    #[test]
    fn csv_errors() {
        let f = write_csv("x,y\n1,2\n");
        match load_csv(f.path(), "target") {
            Err(SolverError::Parse { column, .. }) => assert_eq!(column, "target"),
            other => panic!("unexpected {other:?}"),
        }
        let f = write_csv("x,y\nnan,1\n,2\n");
        assert!(matches!(load_csv(f.path(), "y"), Err(SolverError::EmptyAfterCleaning)));
        let f = write_csv("x,y\n1,2\n1,2,3\n");
        assert!(matches!(load_csv(f.path(), "y"), Err(SolverError::Parse { row: 3, .. })));
    }
}
