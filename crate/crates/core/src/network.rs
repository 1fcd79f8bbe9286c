//! Communication graph, Metropolis mixing weights and their spectrum.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tdcore::AgentMatrix;

pub const MAX_GRAPH_ATTEMPTS: usize = 1000;
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Round-off allowance when comparing eigenvalues of `W`.
pub const SPECTRAL_TOL: f64 = 1e-12;

/// Undirected simple graph on `M` agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    edges: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self { n, edges: vec![false; n * n] }
    }

    pub fn path(n: usize) -> Self {
        let mut adj = Self::empty(n);
        for i in 1..n {
            adj.add_edge(i - 1, i);
        }
        adj
    }

    pub fn complete(n: usize) -> Self {
        let mut adj = Self::empty(n);
        for i in 0..n {
            for j in i + 1..n {
                adj.add_edge(i, j);
            }
        }
        adj
    }

    /// From a dense boolean matrix; it must be square, symmetric and loop-free.
    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Parse("adjacency matrix is empty".into()));
        }
        let mut adj = Self::empty(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Parse(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            if row[i] {
                return Err(Error::Parse(format!("self-loop at agent {i}")));
            }
            for (j, &e) in row.iter().enumerate() {
                if e != rows[j][i] {
                    return Err(Error::Parse(format!("entry ({i},{j}) differs from ({j},{i})")));
                }
                adj.edges[i * n + j] = e;
            }
        }
        Ok(adj)
    }

    /// Whitespace-separated 0/1 matrix, one row per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.split_whitespace()
                    .map(|tok| match tok {
                        "0" => Ok(false),
                        "1" => Ok(true),
                        other => Err(Error::Parse(format!("unexpected token {other:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&rows)
    }

    pub fn num_agents(&self) -> usize {
        self.n
    }

    pub fn add_edge(&mut self, i: usize, j: usize) {
        assert!(i != j, "self-loops are not allowed");
        self.edges[i * self.n + j] = true;
        self.edges[j * self.n + i] = true;
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges[i * self.n + j]
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.has_edge(i, j))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count() / 2
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.num_edges() as f64 / self.n as f64
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Erdos-Renyi graph with edge probability `avg_degree / (M - 1)`, redrawn until connected.
///
/// A single agent needs no edges, so `avg_degree` is ignored when `M = 1`.
pub fn random_connected_graph<R: Rng + ?Sized>(num_agents: usize, avg_degree: f64, rng: &mut R) -> Result<Adjacency> {
    if num_agents == 0 {
        return Err(Error::config("num_agents", "must be positive"));
    }
    if num_agents == 1 {
        return Ok(Adjacency::empty(1));
    }
    let max_degree = (num_agents - 1) as f64;
    if !(avg_degree > 0.0 && avg_degree <= max_degree) {
        return Err(Error::config("avg_degree", format!("must lie in (0, {max_degree}], got {avg_degree}")));
    }
    let p = avg_degree / max_degree;
    for _ in 0..MAX_GRAPH_ATTEMPTS {
        let mut adj = Adjacency::empty(num_agents);
        for i in 0..num_agents {
            for j in i + 1..num_agents {
                if rng.random::<f64>() < p {
                    adj.add_edge(i, j);
                }
            }
        }
        if adj.is_connected() {
            return Ok(adj);
        }
    }
    Err(Error::GraphGenFailed { attempts: MAX_GRAPH_ATTEMPTS })
}

/// `W_ij = 1 / (1 + max(d_i, d_j))` on edges, diagonal fills each row to one.
pub fn metropolis_weights(adj: &Adjacency) -> DMatrix<f64> {
    let n = adj.num_agents();
    let degrees: Vec<usize> = (0..n).map(|i| adj.degree(i)).collect();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in adj.neighbors(i) {
            w[(i, j)] = 1.0 / (1 + degrees[i].max(degrees[j])) as f64;
        }
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

fn sorted_symmetric_spectrum(w: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !w.is_square() {
        return Err(Error::DimMismatch { expected: w.nrows(), got: w.ncols() });
    }
    let asym = (w - w.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let mut eigs: Vec<f64> = w.clone().symmetric_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| b.total_cmp(a));
    Ok(eigs)
}

/// Signed second-largest eigenvalue of a symmetric `W` (0 for a single agent).
pub fn lambda2(w: &DMatrix<f64>) -> Result<f64> {
    let eigs = sorted_symmetric_spectrum(w)?;
    let l2 = eigs.get(1).copied().unwrap_or(0.0);
    if l2 < 0.0 {
        log::warn!("second-largest eigenvalue of W is negative ({l2:e}); used as-is");
    }
    Ok(l2)
}

/// Largest modulus among all eigenvalues except the leading one.
pub fn second_largest_modulus(w: &DMatrix<f64>) -> Result<f64> {
    let eigs = sorted_symmetric_spectrum(w)?;
    Ok(eigs.iter().skip(1).map(|x| x.abs()).fold(0.0, f64::max))
}

/// Whether the signed `lambda2` bounds the per-step contraction, i.e. no negative
/// eigenvalue of `W` dominates it.
pub fn lambda2_is_contraction(num_agents: usize, lambda2: f64, slem: f64) -> bool {
    num_agents == 1 || (lambda2 >= -SPECTRAL_TOL && lambda2 + SPECTRAL_TOL >= slem)
}

/// `||Theta - 1 theta_bar^T||_F`.
pub fn disagreement(theta: &AgentMatrix) -> f64 {
    let t = theta.as_matrix();
    let mean = t.row_mean();
    let mut acc = 0.0;
    for j in 0..t.ncols() {
        for i in 0..t.nrows() {
            let d = t[(i, j)] - mean[j];
            acc += d * d;
        }
    }
    acc.sqrt()
}

/// Connected graph together with its mixing matrix and spectral summary.
#[derive(Debug, Clone, PartialEq)]
pub struct CommNetwork {
    adjacency: Adjacency,
    w: DMatrix<f64>,
    lambda2: f64,
    slem: f64,
}

impl CommNetwork {
    pub fn new(adjacency: Adjacency) -> Result<Self> {
        if !adjacency.is_connected() {
            return Err(Error::config("network", "communication graph is not connected"));
        }
        let w = metropolis_weights(&adjacency);
        let lambda2 = lambda2(&w)?;
        let slem = second_largest_modulus(&w)?;
        Ok(Self { adjacency, w, lambda2, slem })
    }

    pub fn generate<R: Rng + ?Sized>(num_agents: usize, avg_degree: f64, rng: &mut R) -> Result<Self> {
        Self::new(random_connected_graph(num_agents, avg_degree, rng)?)
    }

    pub fn num_agents(&self) -> usize {
        self.adjacency.num_agents()
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    /// Largest modulus among the non-leading eigenvalues; the actual per-step contraction factor.
    pub fn slem(&self) -> f64 {
        self.slem
    }

    /// True when `lambda2` itself is the contraction factor of `W` on the disagreement subspace.
    ///
    /// Fails when `lambda2 < 0` or when a negative eigenvalue dominates it in modulus
    /// (up to [`SPECTRAL_TOL`] of round-off, so complete graphs with `lambda2 = 0` qualify).
    pub fn lambda2_is_contraction(&self) -> bool {
        lambda2_is_contraction(self.num_agents(), self.lambda2, self.slem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    #[test]
    fn trivial_graphs() {
        let mut rng = stream_rng(0, Stream::Network);
        let one = random_connected_graph(1, 5.0, &mut rng).unwrap();
        assert_eq!(one.num_edges(), 0);
        assert!(one.is_connected());
        let two = random_connected_graph(2, 1.0, &mut rng).unwrap();
        assert!(two.has_edge(0, 1) && two.has_edge(1, 0));
        assert_eq!(two.num_edges(), 1);
        assert!(random_connected_graph(4, 0.0, &mut rng).is_err());
        assert!(random_connected_graph(4, 3.5, &mut rng).is_err());
    }

    #[test]
    fn sparse_graphs_exhaust_attempts() {
        let mut rng = stream_rng(0, Stream::Network);
        let err = random_connected_graph(200, 0.01, &mut rng).unwrap_err();
        assert_eq!(err, Error::GraphGenFailed { attempts: MAX_GRAPH_ATTEMPTS });
    }

    #[test]
    fn full_scale_degree() {
        let mut total = 0.0;
        for seed in 0..100 {
            let adj = random_connected_graph(30, 5.0, &mut stream_rng(seed, Stream::Network)).unwrap();
            assert!(adj.is_connected());
            let mean = adj.mean_degree();
            assert!((3.0..=7.0).contains(&mean), "seed {seed}: mean degree {mean}");
            total += mean;
        }
        assert!((total / 100.0 - 5.0).abs() < 0.5);
    }

    #[test]
    fn metropolis_examples() {
        assert_eq!(metropolis_weights(&Adjacency::empty(1)), dmatrix![1.0]);
        let w = metropolis_weights(&Adjacency::path(3));
        let third = 1.0 / 3.0;
        let expected = dmatrix![2.0 * third, third, 0.0; third, third, third; 0.0, third, 2.0 * third];
        assert!((w - expected).amax() < 1e-15);
        let w = metropolis_weights(&Adjacency::complete(3));
        assert!((w - DMatrix::from_element(3, 3, third)).amax() < 1e-15);
    }

    #[test]
    fn lambda2_examples() {
        assert_eq!(lambda2(&dmatrix![1.0]).unwrap(), 0.0);
        let path = metropolis_weights(&Adjacency::path(3));
        assert!((lambda2(&path).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let complete = metropolis_weights(&Adjacency::complete(3));
        assert!(lambda2(&complete).unwrap().abs() < 1e-12);
        assert!(CommNetwork::new(Adjacency::complete(4)).unwrap().lambda2_is_contraction());
        assert!(!lambda2_is_contraction(3, 0.3, 0.5));
        assert!(!lambda2_is_contraction(3, -0.2, 0.2));
        assert!(lambda2_is_contraction(3, 0.5, 0.5));
        assert!(matches!(lambda2(&dmatrix![0.5, 0.5; 0.4, 0.6]), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn negative_lambda2_is_reported_as_is() {
        // Two agents weighted towards each other: spectrum {1, -0.6}.
        let w = dmatrix![0.2, 0.8; 0.8, 0.2];
        assert!((lambda2(&w).unwrap() + 0.6).abs() < 1e-12);
        assert!((second_largest_modulus(&w).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn disagreement_examples() {
        assert_eq!(disagreement(&AgentMatrix::new(dmatrix![1.0, 2.0; 1.0, 2.0])), 0.0);
        let d = disagreement(&AgentMatrix::new(dmatrix![1.0; 3.0]));
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn parse_adjacency_file() {
        let adj = Adjacency::parse("# triangle plus tail\n0 1 1 0\n1 0 1 0\n1 1 0 1\n\n0 0 1 0\n").unwrap();
        assert_eq!(adj.num_edges(), 4);
        assert_eq!(adj.degree(2), 3);
        assert!(Adjacency::parse("0 1\n0 0\n").is_err());
        assert!(Adjacency::parse("1 0\n0 0\n").is_err());
        assert!(Adjacency::parse("0 2\n2 0\n").is_err());
        assert!(Adjacency::parse("0 1 0\n1 0\n").is_err());
        assert!(CommNetwork::new(Adjacency::parse("0 0\n0 0\n").unwrap()).is_err());
    }

    #[test]
    fn single_agent_network() {
        let net = CommNetwork::generate(1, 5.0, &mut stream_rng(0, Stream::Network)).unwrap();
        assert_eq!(net.weights(), &dmatrix![1.0]);
        assert_eq!(net.lambda2(), 0.0);
        assert!(net.lambda2_is_contraction());
    }

    proptest! {
        #[test]
        fn generated_networks_satisfy_invariants(seed in any::<u64>(), m in 2usize..25, frac in 0.3f64..1.0) {
            let avg = 1.0 + frac * (m - 2) as f64;
            let net = CommNetwork::generate(m, avg, &mut stream_rng(seed, Stream::Network)).unwrap();
            let w = net.weights();
            prop_assert!((w - w.transpose()).amax() == 0.0);
            for i in 0..m {
                prop_assert!((w.row(i).sum() - 1.0).abs() <= 1e-12);
                prop_assert!((w.column(i).sum() - 1.0).abs() <= 1e-12);
                for j in 0..m {
                    let linked = i == j || net.adjacency().has_edge(i, j);
                    prop_assert_eq!(w[(i, j)] > 0.0, linked);
                    prop_assert!(w[(i, j)] >= 0.0);
                }
            }
            prop_assert!(net.lambda2() < 1.0);
            prop_assert!(net.slem() < 1.0);
        }

        #[test]
        fn mixing_contracts_disagreement(seed in any::<u64>()) {
            let mut rng = stream_rng(seed, Stream::Network);
            let net = CommNetwork::generate(12, 4.0, &mut rng).unwrap();
            let theta = AgentMatrix::uniform(12, 3, &mut rng);
            let mixed = AgentMatrix::new(net.weights() * theta.as_matrix());
            let before = disagreement(&theta);
            prop_assert!(disagreement(&mixed) <= net.slem() * before + 1e-10);
            if net.lambda2_is_contraction() {
                prop_assert!(disagreement(&mixed) <= net.lambda2().max(0.0) * before + 1e-10);
            }
        }

        #[test]
        fn disagreement_ignores_common_offset(seed in any::<u64>(), c in proptest::collection::vec(-5.0f64..5.0, 3)) {
            let theta = AgentMatrix::uniform(6, 3, &mut stream_rng(seed, Stream::Probe));
            let shifted = AgentMatrix::new(DMatrix::from_fn(6, 3, |i, j| theta.as_matrix()[(i, j)] + c[j]));
            prop_assert!((disagreement(&theta) - disagreement(&shifted)).abs() < 1e-12);
        }
    }
}
