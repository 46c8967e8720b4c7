//! Directed communication graphs and column-stochastic mixing.
//!
//! Every node is its own in- and out-neighbor. Column `j` of the mixing
//! matrix spreads node `j`'s outgoing mass uniformly over its out-neighbors,
//! so each node can build its own column from nothing but its out-degree.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of powers of `A` inspected when estimating mixing constants.
pub const DEFAULT_HORIZON: usize = 200;

/// Residuals at or below this level are treated as exact convergence.
const RESIDUAL_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Ring,
    Complete,
    Exponential,
    /// Explicit `(from, to)` edge list, 0-indexed.
    Custom(Vec<(usize, usize)>),
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphKind::Ring => write!(f, "ring"),
            GraphKind::Complete => write!(f, "complete"),
            GraphKind::Exponential => write!(f, "exponential"),
            GraphKind::Custom(e) => write!(f, "custom({} edges)", e.len()),
        }
    }
}

/// A directed graph on nodes `0..n` with implicit self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n: usize,
    /// `out[j]` holds every `i` with an edge `j -> i`, including `j` itself.
    out: Vec<BTreeSet<usize>>,
}

impl DirectedGraph {
    /// Graph with self-loops only.
    pub fn empty(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("graph needs at least one node".into()));
        }
        Ok(Self { n, out: (0..n).map(|j| BTreeSet::from([j])).collect() })
    }

    /// Builds a graph from `(from, to)` pairs. Duplicates collapse; self-loops are added.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(n)?;
        for &(from, to) in edges {
            g.add_edge(from, to)?;
        }
        Ok(g)
    }

    fn add_edge(&mut self, from: usize, to: usize) -> Result<()> {
        if from >= self.n || to >= self.n {
            return Err(Error::InvalidEdge { from, to, n: self.n });
        }
        self.out[from].insert(to);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Out-neighbors of `j` in ascending order, `j` included.
    pub fn out_neighbors(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.out[j].iter().copied()
    }

    /// In-neighbors of `i` in ascending order, `i` included.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.out[j].contains(&i)).collect()
    }

    /// Out-degree of `j`, counting the self-loop.
    pub fn out_degree(&self, j: usize) -> usize {
        self.out[j].len()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        from < self.n && self.out[from].contains(&to)
    }

    /// Directed edges excluding self-loops.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(j, outs)| outs.iter().filter(move |&&i| i != j).map(move |&i| (j, i)))
            .collect()
    }

    /// Number of directed edges excluding self-loops.
    pub fn edge_count(&self) -> usize {
        self.out.iter().map(|o| o.len() - 1).sum()
    }

    fn reaches_all(&self, reverse: bool) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            let next: Vec<usize> = if reverse {
                (0..self.n).filter(|&j| self.out[j].contains(&u)).collect()
            } else {
                self.out[u].iter().copied().collect()
            };
            for v in next {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// True iff every node reaches every other node.
///
/// Node 0 must reach everyone along forward edges and be reached by everyone,
/// which is the same as reaching everyone along reversed edges.
pub fn check_strong_connectivity(g: &DirectedGraph) -> bool {
    g.reaches_all(false) && g.reaches_all(true)
}

pub fn build_graph(kind: &GraphKind, n: usize) -> Result<DirectedGraph> {
    let mut g = DirectedGraph::empty(n)?;
    match kind {
        GraphKind::Ring => {
            for j in 0..n {
                g.add_edge(j, (j + 1) % n)?;
            }
        }
        GraphKind::Complete => {
            for j in 0..n {
                for i in 0..n {
                    g.add_edge(j, i)?;
                }
            }
        }
        GraphKind::Exponential => {
            // offsets 1, 2, 4, ... below n; an offset that wraps onto j is the self-loop
            let mut offset = 1usize;
            while offset < n {
                for j in 0..n {
                    g.add_edge(j, (j + offset) % n)?;
                }
                offset <<= 1;
            }
        }
        GraphKind::Custom(edges) => {
            for &(from, to) in edges {
                g.add_edge(from, to)?;
            }
            if !check_strong_connectivity(&g) {
                return Err(Error::NotStronglyConnected);
            }
        }
    }
    Ok(g)
}

/// Reads an edge list with one `j i` pair per line (0-indexed). Blank lines
/// and lines starting with `#` are skipped.
pub fn load_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = std::fs::read_to_string(path)?;
    parse_edge_list(&text)
}

pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse(format!("edge list line {}: expected `j i`", lineno + 1)));
        };
        let parse =
            |s: &str| usize::from_str(s).map_err(|e| Error::Parse(format!("edge list line {}: {e}", lineno + 1)));
        edges.push((parse(a)?, parse(b)?));
    }
    Ok(edges)
}

/// Dense `n x n` column-stochastic matrix, row-major.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    n: usize,
    a: Vec<f64>,
    graph: DirectedGraph,
}

impl MixingMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Weight `a_ij` node `i` applies to what it receives from `j`.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    pub fn graph(&self) -> &DirectedGraph {
        &self.graph
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.a
    }

    /// Largest deviation of a column sum from one.
    pub fn max_column_defect(&self) -> f64 {
        (0..self.n).map(|j| ((0..self.n).map(|i| self.weight(i, j)).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Column `j` gets `1/out_degree(j)` on each out-neighbor of `j`.
pub fn build_mixing(g: &DirectedGraph) -> Result<MixingMatrix> {
    if !check_strong_connectivity(g) {
        return Err(Error::NotStronglyConnected);
    }
    let n = g.n();
    let mut a = vec![0.0; n * n];
    for j in 0..n {
        let w = 1.0 / g.out_degree(j) as f64;
        for i in g.out_neighbors(j) {
            a[i * n + j] = w;
        }
    }
    Ok(MixingMatrix { n, a, graph: g.clone() })
}

/// Mixing-rate constants of a column-stochastic matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralConstants {
    /// Perron vector: `A phi = phi`, entries sum to one.
    pub phi: Vec<f64>,
    /// Geometric rate of `||A^k - phi 1^T||_2`.
    pub lambda: f64,
    /// Prefactor making `||A^k - phi 1^T||_2 <= C lambda^k` on the horizon.
    pub c: f64,
    /// Floor of the push-sum weights `[A^k 1]_i` over `1 <= k <= horizon`.
    pub beta: f64,
    /// `||A - I||_2`.
    pub gamma: f64,
    /// `||A^k - phi 1^T||_2` for `k = 0..=horizon`.
    pub residuals: Vec<f64>,
}

fn matmul(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

fn matvec(n: usize, m: &[f64], v: &[f64]) -> Vec<f64> {
    (0..n).map(|i| (0..n).map(|j| m[i * n + j] * v[j]).sum()).collect()
}

fn matvec_t(n: usize, m: &[f64], v: &[f64]) -> Vec<f64> {
    (0..n).map(|j| (0..n).map(|i| m[i * n + j] * v[i]).sum()).collect()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Spectral norm of a square matrix by power iteration on `M^T M`.
pub fn spectral_norm(n: usize, m: &[f64]) -> f64 {
    if m.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    // fixed pseudo-random start so no singular direction is missed by symmetry
    let mut rng = ChaCha20Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut sigma = 0.0;
    for _ in 0..20_000 {
        let w = matvec_t(n, m, &matvec(n, m, &v));
        let nw = norm2(&w);
        if nw == 0.0 {
            return sigma;
        }
        let next = nw.sqrt();
        v = w.into_iter().map(|x| x / nw).collect();
        let done = (next - sigma).abs() <= 1e-15 * next;
        sigma = next;
        if done {
            break;
        }
    }
    // one last evaluation of ||M v|| for a unit v
    norm2(&matvec(n, m, &v)).max(sigma)
}

/// Estimates `phi`, `lambda`, `C`, `beta` and `gamma` from the first
/// `horizon` powers of `A`.
pub fn estimate_constants(a: &MixingMatrix, horizon: usize) -> Result<SpectralConstants> {
    if horizon < 2 {
        return Err(Error::Config("estimation horizon must be at least 2".into()));
    }
    let n = a.n();
    let m = a.as_slice();

    let mut phi = vec![1.0 / n as f64; n];
    for _ in 0..1_000_000 {
        let next = matvec(n, m, &phi);
        let diff = next.iter().zip(&phi).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        phi = next;
        if diff <= 1e-16 {
            break;
        }
    }
    let total: f64 = phi.iter().sum();
    phi.iter_mut().for_each(|p| *p /= total);

    let deviation = |power: &[f64]| -> f64 {
        let mut d = power.to_vec();
        for i in 0..n {
            for j in 0..n {
                d[i * n + j] -= phi[i];
            }
        }
        spectral_norm(n, &d)
    };

    let mut identity = vec![0.0; n * n];
    (0..n).for_each(|i| identity[i * n + i] = 1.0);

    let mut residuals = Vec::with_capacity(horizon + 1);
    residuals.push(deviation(&identity));
    let mut power = identity.clone();
    let mut weights = vec![1.0; n];
    let mut beta = f64::INFINITY;
    for _ in 1..=horizon {
        power = matmul(n, m, &power);
        weights = matvec(n, m, &weights);
        beta = weights.iter().copied().fold(beta, f64::min);
        residuals.push(deviation(&power));
    }

    let first = residuals[1];
    let last = residuals[horizon];
    if last > RESIDUAL_FLOOR && last > 1e-6 * first {
        return Err(Error::NonConvergence { first, last });
    }

    // least-squares slope of ln r_k against k over the points above the floor
    let pts: Vec<(f64, f64)> =
        (1..=horizon).filter(|&k| residuals[k] > RESIDUAL_FLOOR).map(|k| (k as f64, residuals[k].ln())).collect();
    let lambda = match pts.len() {
        0 => {
            if residuals[0] > 0.0 {
                residuals[1] / residuals[0]
            } else {
                0.0
            }
        }
        1 => {
            if residuals[0] > 0.0 {
                pts[0].1.exp() / residuals[0]
            } else {
                pts[0].1.exp()
            }
        }
        len => {
            let len = len as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / len;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / len;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
            (sxy / sxx).exp()
        }
    };
    let lambda = lambda.clamp(f64::EPSILON, 1.0 - f64::EPSILON);

    let ln_lambda = lambda.ln();
    let c = std::iter::once(residuals[0])
        .chain(
            (1..=horizon)
                .filter(|&k| residuals[k] > RESIDUAL_FLOOR)
                .map(|k| (residuals[k].ln() - k as f64 * ln_lambda).exp()),
        )
        .fold(0.0, f64::max)
        .max(f64::EPSILON);

    let mut shifted = m.to_vec();
    (0..n).for_each(|i| shifted[i * n + i] -= 1.0);
    let gamma = spectral_norm(n, &shifted);

    Ok(SpectralConstants { phi, lambda, c, beta, gamma, residuals })
}

impl SpectralConstants {
    /// `||A phi - phi||_inf`.
    pub fn perron_defect(&self, a: &MixingMatrix) -> f64 {
        let ap = matvec(a.n(), a.as_slice(), &self.phi);
        ap.iter().zip(&self.phi).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    /// Residual floor below which powers count as converged.
    pub fn residual_floor() -> f64 {
        RESIDUAL_FLOOR
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outs(g: &DirectedGraph, j: usize) -> Vec<usize> {
        g.out_neighbors(j).collect()
    }

    #[test]
    fn exponential_four_nodes() {
        let g = build_graph(&GraphKind::Exponential, 4).unwrap();
        assert_eq!(outs(&g, 0), vec![0, 1, 2]);
        assert_eq!(outs(&g, 3), vec![0, 1, 3]);
    }

    #[test]
    fn exponential_ten_nodes_has_four_true_out_edges() {
        let g = build_graph(&GraphKind::Exponential, 10).unwrap();
        assert_eq!(outs(&g, 0), vec![0, 1, 2, 4, 8]);
        assert_eq!(g.edge_count(), 40);
    }

    #[test]
    fn complete_single_node() {
        let g = build_graph(&GraphKind::Complete, 1).unwrap();
        assert_eq!(outs(&g, 0), vec![0]);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn ring_three() {
        let g = build_graph(&GraphKind::Ring, 3).unwrap();
        for i in 0..3 {
            assert_eq!(outs(&g, i), {
                let mut v = vec![i, (i + 1) % 3];
                v.sort();
                v
            });
        }
    }

    #[test]
    fn zero_nodes_rejected() {
        assert!(build_graph(&GraphKind::Ring, 0).is_err());
    }

    #[test]
    fn custom_edges_dedup_and_connectivity() {
        let g = build_graph(&GraphKind::Custom(vec![(0, 1), (0, 1), (1, 0)]), 2).unwrap();
        assert_eq!(g.edge_count(), 2);
        let err = build_graph(&GraphKind::Custom(vec![(0, 1)]), 2).unwrap_err();
        assert!(matches!(err, Error::NotStronglyConnected));
        assert!(matches!(build_graph(&GraphKind::Custom(vec![(0, 5)]), 2), Err(Error::InvalidEdge { .. })));
    }

    #[test]
    fn strong_connectivity_examples() {
        let g = DirectedGraph::from_edges(2, &[(0, 1)]).unwrap();
        assert!(!check_strong_connectivity(&g));
        assert!(check_strong_connectivity(&build_graph(&GraphKind::Ring, 5).unwrap()));
        assert!(check_strong_connectivity(&build_graph(&GraphKind::Exponential, 8).unwrap()));
    }

    #[test]
    fn ring_mixing_weights_are_half() {
        let a = build_mixing(&build_graph(&GraphKind::Ring, 3).unwrap()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j || i == (j + 1) % 3 { 0.5 } else { 0.0 };
                assert_eq!(a.weight(i, j), expect);
            }
        }
    }

    #[test]
    fn complete_mixing_is_uniform() {
        let a = build_mixing(&build_graph(&GraphKind::Complete, 5).unwrap()).unwrap();
        assert!(a.as_slice().iter().all(|&w| w == 0.2));
        let one = build_mixing(&build_graph(&GraphKind::Complete, 1).unwrap()).unwrap();
        assert_eq!(one.as_slice(), &[1.0]);
    }

    #[test]
    fn mixing_rejects_disconnected() {
        let g = DirectedGraph::from_edges(2, &[(0, 1)]).unwrap();
        assert!(matches!(build_mixing(&g), Err(Error::NotStronglyConnected)));
    }

    #[test]
    fn complete_graph_constants() {
        let a = build_mixing(&build_graph(&GraphKind::Complete, 4).unwrap()).unwrap();
        let k = estimate_constants(&a, 50).unwrap();
        assert!(k.lambda < 1e-10, "lambda {}", k.lambda);
        assert!((k.beta - 1.0).abs() < 1e-12);
        assert!(k.phi.iter().all(|p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn ring_three_rate_is_half() {
        let a = build_mixing(&build_graph(&GraphKind::Ring, 3).unwrap()).unwrap();
        let k = estimate_constants(&a, DEFAULT_HORIZON).unwrap();
        assert!((k.lambda - 0.5).abs() < 1e-6, "lambda {}", k.lambda);
        // doubly stochastic circulant: residual is exactly 0.5^k, so C = 1
        assert!((k.c - 1.0).abs() < 1e-6, "C {}", k.c);
        assert!((k.beta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_node_constants() {
        let a = build_mixing(&build_graph(&GraphKind::Complete, 1).unwrap()).unwrap();
        let k = estimate_constants(&a, 10).unwrap();
        assert_eq!(k.phi, vec![1.0]);
        assert_eq!(k.beta, 1.0);
        assert_eq!(k.gamma, 0.0);
    }

    #[test]
    fn horizon_too_short() {
        let a = build_mixing(&build_graph(&GraphKind::Ring, 3).unwrap()).unwrap();
        assert!(estimate_constants(&a, 1).is_err());
    }

    #[test]
    fn slow_mixing_reports_non_convergence() {
        // a long ring mixes far too slowly for a horizon of 10
        let a = build_mixing(&build_graph(&GraphKind::Ring, 40).unwrap()).unwrap();
        assert!(matches!(estimate_constants(&a, 10), Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn gamma_of_ring_three() {
        // A - I = (P - I)/2 for the cyclic shift P; its largest singular value
        // is |e^{2 pi i/3} - 1|/2 = sqrt(3)/2
        let a = build_mixing(&build_graph(&GraphKind::Ring, 3).unwrap()).unwrap();
        let k = estimate_constants(&a, 100).unwrap();
        assert!((k.gamma - 3f64.sqrt() / 2.0).abs() < 1e-9, "gamma {}", k.gamma);
    }

    #[test]
    fn edge_list_parsing() {
        let e = parse_edge_list("# header\n0 1\n\n1 0\n").unwrap();
        assert_eq!(e, vec![(0, 1), (1, 0)]);
        assert!(parse_edge_list("0 1 2").is_err());
        assert!(parse_edge_list("0 x").is_err());
    }
}
