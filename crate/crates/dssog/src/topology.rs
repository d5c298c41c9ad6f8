//! Network topologies and left-stochastic combination matrices.
//!
//! Builders always install self-loops, which together with strong
//! connectivity makes the combination matrix primitive (some power has all
//! entries strictly positive). The Perron vector and the mixing rate are
//! computed by power iteration; a dense eigendecomposition is used only
//! for the order-of-magnitude conditioning surrogate inside `rho2_estimate`.

use crate::linalg::{self, Mat};
use crate::{Error, Result};
use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Directed graph over agents 0..K-1. Every neighbor set contains the
/// agent itself; `neighbors[k]` is the set of sources whose state agent k
/// aggregates (in-neighborhood, matching the combination step).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_agents: usize,
    neighbors: Vec<BTreeSet<usize>>,
}

impl Graph {
    /// Builds from raw neighbor sets, enforcing self-loops and checking
    /// strong connectivity.
    pub fn new(neighbors: Vec<BTreeSet<usize>>) -> Result<Self> {
        let k = neighbors.len();
        if k == 0 {
            return Err(Error::InvalidArgument(
                "graph needs at least one agent".into(),
            ));
        }
        let mut sets = neighbors;
        for (i, s) in sets.iter_mut().enumerate() {
            if let Some(&m) = s.iter().next_back() {
                if m >= k {
                    return Err(Error::InvalidArgument(format!(
                        "neighbor index {m} out of range for K={k}"
                    )));
                }
            }
            s.insert(i);
        }
        let g = Graph {
            num_agents: k,
            neighbors: sets,
        };
        if !g.strongly_connected() {
            return Err(Error::InvalidArgument(
                "graph is not strongly connected".into(),
            ));
        }
        Ok(g)
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn neighbors(&self, k: usize) -> &BTreeSet<usize> {
        &self.neighbors[k]
    }

    fn reachable_all(&self, reverse: bool) -> bool {
        let k = self.num_agents;
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for u in 0..k {
                // edge u -> v when u in neighbors[v]; reverse walks v -> u
                let connected = if reverse {
                    self.neighbors[u].contains(&v)
                } else {
                    self.neighbors[v].contains(&u)
                };
                if connected && !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    pub fn strongly_connected(&self) -> bool {
        self.reachable_all(false) && self.reachable_all(true)
    }
}

/// K x K left-stochastic combination matrix. Entry `a(l, k)` scales
/// information flowing from agent l to agent k; each column sums to one.
/// Stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationMatrix {
    k: usize,
    /// column-major: entries[l + k*K] = a_{lk}
    entries: Vec<f64>,
}

impl CombinationMatrix {
    pub fn from_columns(k: usize, columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.len() != k || columns.iter().any(|c| c.len() != k) {
            return Err(Error::InvalidArgument(
                "combination matrix must be K x K".into(),
            ));
        }
        let mut entries = Vec::with_capacity(k * k);
        for c in &columns {
            entries.extend_from_slice(c);
        }
        Ok(CombinationMatrix { k, entries })
    }

    pub fn num_agents(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn at(&self, l: usize, k: usize) -> f64 {
        self.entries[l + k * self.k]
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.entries[k * self.k..(k + 1) * self.k]
    }

    /// y = A x
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut y = vec![0.0; k];
        for col in 0..k {
            let c = self.column(col);
            let xc = x[col];
            for (yi, &a) in y.iter_mut().zip(c) {
                *yi += a * xc;
            }
        }
        y
    }

    /// y = A^T x, i.e. y_k = sum_l a_{lk} x_l (one combination step per agent).
    pub fn apply_t(&self, x: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut y = vec![0.0; k];
        for (kk, yk) in y.iter_mut().enumerate() {
            *yk = linalg::dot(self.column(kk), x);
        }
        y
    }

    pub fn to_mat(&self) -> Mat {
        let mut m = Mat::zeros(self.k, self.k);
        for k in 0..self.k {
            for l in 0..self.k {
                *m.at_mut(l, k) = self.at(l, k);
            }
        }
        m
    }

    /// Boolean sparsity pattern, pattern[l][k] = (a_{lk} > 0).
    fn pattern(&self) -> Vec<Vec<bool>> {
        (0..self.k)
            .map(|l| (0..self.k).map(|k| self.at(l, k) > 0.0).collect())
            .collect()
    }
}

/// Spectral summary of a combination matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralInfo {
    /// Perron eigenvector p with A p = p, 1^T p = 1, all entries positive.
    pub perron: Vec<f64>,
    /// Second-largest eigenvalue modulus; governs consensus speed.
    pub mixing_rate: f64,
    /// Order-of-magnitude surrogate lambda2^2 * kappa(V)^2 for the network
    /// constant of the deviation bound. Diagnostic only.
    pub rho2_estimate: f64,
}

/// Bidirectional ring with self-loops. Strongly connected for every K.
pub fn build_ring(num_agents: usize) -> Result<Graph> {
    if num_agents == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let k = num_agents;
    let neighbors = (0..k)
        .map(|i| {
            let mut s = BTreeSet::new();
            s.insert(i);
            s.insert((i + 1) % k);
            s.insert((i + k - 1) % k);
            s
        })
        .collect();
    Graph::new(neighbors)
}

/// Erdos-Renyi style digraph with self-loops, redrawn until strongly
/// connected. Deterministic for a fixed seed. After 100 failed draws a
/// ring is overlaid on the last draw, which guarantees termination.
pub fn build_random_connected(num_agents: usize, edge_prob: f64, seed: u64) -> Result<Graph> {
    if num_agents == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(Error::InvalidArgument(
            "edge_prob must lie in (0, 1]".into(),
        ));
    }
    let k = num_agents;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut last: Option<Vec<BTreeSet<usize>>> = None;
    for _ in 0..100 {
        let mut sets: Vec<BTreeSet<usize>> = (0..k)
            .map(|i| {
                let mut s = BTreeSet::new();
                s.insert(i);
                s
            })
            .collect();
        for target in 0..k {
            for source in 0..k {
                if source != target && rng.random_bool(edge_prob) {
                    sets[target].insert(source);
                }
            }
        }
        let candidate = Graph {
            num_agents: k,
            neighbors: sets.clone(),
        };
        if candidate.strongly_connected() {
            return Ok(candidate);
        }
        last = Some(sets);
    }
    let mut sets = last.expect("at least one draw");
    for (i, s) in sets.iter_mut().enumerate() {
        s.insert((i + 1) % k);
        s.insert((i + k - 1) % k);
    }
    Graph::new(sets)
}

/// Uniform averaging rule: a_{lk} = 1/|N_k| for l in N_k, zero otherwise.
///
/// The last nonzero entry of each column is set to 1 minus the sum of the
/// others so that every column sums to exactly 1.0 in floating point.
pub fn averaging_rule(graph: &Graph) -> CombinationMatrix {
    let k = graph.num_agents();
    let mut columns = vec![vec![0.0; k]; k];
    for (kk, col) in columns.iter_mut().enumerate() {
        let neigh: Vec<usize> = graph.neighbors(kk).iter().copied().collect();
        let n = neigh.len();
        let w = 1.0 / n as f64;
        let mut partial = 0.0;
        for (idx, &l) in neigh.iter().enumerate() {
            if idx + 1 == n {
                col[l] = 1.0 - partial;
            } else {
                col[l] = w;
                partial += w;
            }
        }
    }
    CombinationMatrix::from_columns(k, columns).expect("square by construction")
}

fn bool_mat_mul(a: &[Vec<bool>], b: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let n = a.len();
    let mut out = vec![vec![false; n]; n];
    for i in 0..n {
        for t in 0..n {
            if a[i][t] {
                for j in 0..n {
                    if b[t][j] {
                        out[i][j] = true;
                    }
                }
            }
        }
    }
    out
}

/// True when pattern^K is entrywise positive.
fn pattern_primitive(pattern: &[Vec<bool>]) -> bool {
    let n = pattern.len();
    if n == 1 {
        return pattern[0][0];
    }
    let mut acc: Vec<Vec<bool>> = pattern.to_vec();
    let mut base: Vec<Vec<bool>> = pattern.to_vec();
    let mut remaining = n - 1;
    // acc = pattern^K via binary exponentiation
    while remaining > 0 {
        if remaining & 1 == 1 {
            acc = bool_mat_mul(&acc, &base);
        }
        base = bool_mat_mul(&base, &base);
        remaining >>= 1;
    }
    acc.iter().all(|row| row.iter().all(|&b| b))
}

const POWER_MAX_ITERS: usize = 10_000;
const POWER_TOL: f64 = 1e-12;

/// Perron vector of a primitive column-stochastic matrix by power
/// iteration. Iterates past the guaranteed 1e-12 residual toward machine
/// precision while progress continues.
fn perron_power(a: &CombinationMatrix) -> Result<Vec<f64>> {
    let k = a.num_agents();
    // deterministic start: uniform with a fixed small perturbation
    let mut p: Vec<f64> = (0..k)
        .map(|i| (1.0 + 0.01 * (((i * 2_654_435_761) % 97) as f64 / 97.0 - 0.5)) / k as f64)
        .collect();
    let s: f64 = p.iter().sum();
    linalg::scale(1.0 / s, &mut p);

    let mut best_res = f64::INFINITY;
    let mut best = p.clone();
    for _ in 0..POWER_MAX_ITERS {
        let next = a.apply(&p);
        let s: f64 = next.iter().sum();
        let mut next = next;
        linalg::scale(1.0 / s, &mut next);
        let check = a.apply(&next);
        let res = next
            .iter()
            .zip(&check)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        if res < best_res {
            best_res = res;
            best = next.clone();
        }
        p = next;
        if res <= 5e-16 {
            break;
        }
    }
    if best_res > POWER_TOL {
        return Err(Error::Spectral(format!(
            "perron power iteration stalled at residual {best_res:.3e}"
        )));
    }
    Ok(best)
}

/// Largest eigenvalue modulus of the deflated operator B = A - p 1^T via
/// two-column subspace iteration. Each sweep re-orthogonalizes the block
/// against the known left eigenvector 1 of A, which pins the iteration to
/// the complement of the Perron direction and handles complex pairs.
fn deflated_modulus(a: &CombinationMatrix, p: &[f64]) -> f64 {
    let k = a.num_agents();
    if k == 1 {
        return 0.0;
    }
    let apply_b = |x: &[f64]| -> Vec<f64> {
        let ax = a.apply(x);
        let ones_dot: f64 = x.iter().sum();
        ax.iter()
            .zip(p)
            .map(|(axi, pi)| axi - pi * ones_dot)
            .collect()
    };
    let project_mean = |v: &mut [f64]| {
        let m: f64 = v.iter().sum::<f64>() / v.len() as f64;
        for vi in v.iter_mut() {
            *vi -= m;
        }
    };

    // fixed start block
    let mut q1: Vec<f64> = (0..k)
        .map(|i| ((i * 73 + 11) % 19) as f64 / 19.0 - 0.45)
        .collect();
    let mut q2: Vec<f64> = (0..k)
        .map(|i| ((i * 29 + 5) % 23) as f64 / 23.0 - 0.55)
        .collect();
    project_mean(&mut q1);
    project_mean(&mut q2);
    let orthonormalize = |q1: &mut Vec<f64>, q2: &mut Vec<f64>| -> bool {
        let n1 = linalg::norm(q1);
        if n1 < 1e-300 {
            return false;
        }
        linalg::scale(1.0 / n1, q1);
        let proj = linalg::dot(q1, q2);
        linalg::axpy(-proj, &q1.clone(), q2);
        let n2 = linalg::norm(q2);
        if n2 < 1e-300 {
            return false;
        }
        linalg::scale(1.0 / n2, q2);
        true
    };
    if !orthonormalize(&mut q1, &mut q2) {
        return 0.0;
    }

    let mut prev = f64::INFINITY;
    let mut lambda = 0.0;
    for it in 0..POWER_MAX_ITERS {
        let mut z1 = apply_b(&q1);
        let mut z2 = apply_b(&q2);
        project_mean(&mut z1);
        project_mean(&mut z2);
        // 2x2 projected matrix H = Q^T B Q before renormalizing
        let h = [
            linalg::dot(&q1, &z1),
            linalg::dot(&q1, &z2),
            linalg::dot(&q2, &z1),
            linalg::dot(&q2, &z2),
        ];
        // eigenvalue moduli of [[h0, h1], [h2, h3]]
        let tr = h[0] + h[3];
        let det = h[0] * h[3] - h[1] * h[2];
        let disc = tr * tr / 4.0 - det;
        let m = if disc >= 0.0 {
            let r = disc.sqrt();
            (tr / 2.0 + r).abs().max((tr / 2.0 - r).abs())
        } else {
            // complex pair: modulus is sqrt(det)
            det.abs().sqrt()
        };
        lambda = m;
        q1 = z1;
        q2 = z2;
        if !orthonormalize(&mut q1, &mut q2) {
            return 0.0;
        }
        if it > 10 && (lambda - prev).abs() <= 1e-13 * lambda.max(1e-30) {
            break;
        }
        prev = lambda;
    }
    lambda
}

fn bounded_eigenvalues(m: &DMatrix<f64>) -> Option<DVector<Complex<f64>>> {
    use nalgebra::linalg::Schur;
    if let Some(schur) = Schur::try_new(m.clone(), 1e-13, 20_000) {
        return Some(schur.complex_eigenvalues());
    }
    // deterministic diagonal perturbation to break spectral ties
    let k = m.nrows();
    let mut pert = m.clone();
    for i in 0..k {
        pert[(i, i)] += 1e-9 * (1.0 + (i as f64) * 0.37);
    }
    Schur::try_new(pert, 1e-13, 20_000).map(|s| s.complex_eigenvalues())
}

/// Condition number surrogate kappa = ||V||_F ||V^-1||_F of the eigenvector
/// matrix, built by shifted inverse iteration from the dense eigenvalues.
/// Used only for the rho2 diagnostic.
fn eigenvector_condition(a: &CombinationMatrix) -> f64 {
    let k = a.num_agents();
    if k == 1 {
        return 1.0;
    }
    let am = DMatrix::<f64>::from_fn(k, k, |i, j| a.at(i, j));
    // bounded Schur with a perturbed retry; the implicit QR iteration can
    // stall on matrices with exactly symmetric spectra
    let eigs = match bounded_eigenvalues(&am) {
        Some(e) => e,
        None => return f64::INFINITY,
    };
    let ac = am.map(|x| Complex::new(x, 0.0));
    let mut v = DMatrix::<Complex<f64>>::zeros(k, k);
    for (j, lam) in eigs.iter().enumerate() {
        let shift = lam + Complex::new(1e-9, 1e-9);
        let mut shifted = ac.clone();
        for d in 0..k {
            shifted[(d, d)] -= shift;
        }
        let lu = shifted.lu();
        let mut b = DVector::<Complex<f64>>::from_fn(k, |i, _| {
            Complex::new(1.0 + (i as f64) * 0.3, 0.2 - (i as f64) * 0.1)
        });
        for _ in 0..3 {
            match lu.solve(&b) {
                Some(x) => {
                    let n = x.norm();
                    if !(n.is_finite() && n > 0.0) {
                        break;
                    }
                    b = x / Complex::new(n, 0.0);
                }
                None => break,
            }
        }
        for i in 0..k {
            v[(i, j)] = b[i];
        }
    }
    let vn = v.norm();
    match v.clone().try_inverse() {
        Some(vi) => vn * vi.norm(),
        // defective or numerically singular eigenbasis
        None => f64::INFINITY,
    }
}

/// Computes the Perron vector, the mixing rate lambda2 and the rho^2
/// surrogate of a combination matrix.
///
/// Fails with a spectral error when the matrix is not primitive (e.g. the
/// identity with K > 1), since the power iteration has no unique fixed
/// direction there.
pub fn perron_vector(a: &CombinationMatrix) -> Result<SpectralInfo> {
    let k = a.num_agents();
    if !pattern_primitive(&a.pattern()) {
        return Err(Error::Spectral(
            "matrix is not primitive: no power A^r (r <= K) has all entries positive".into(),
        ));
    }
    if k == 1 {
        return Ok(SpectralInfo {
            perron: vec![1.0],
            mixing_rate: 0.0,
            rho2_estimate: 0.0,
        });
    }
    let p = perron_power(a)?;
    if p.iter().any(|&x| x <= 0.0) {
        return Err(Error::Spectral(
            "perron vector has a nonpositive entry".into(),
        ));
    }
    let lambda2 = deflated_modulus(a, &p);
    if lambda2 >= 1.0 {
        return Err(Error::Spectral(format!(
            "mixing rate {lambda2} is not below 1"
        )));
    }
    let kappa = eigenvector_condition(a);
    let rho2 = lambda2 * lambda2 * kappa * kappa;
    Ok(SpectralInfo {
        perron: p,
        mixing_rate: lambda2,
        rho2_estimate: rho2,
    })
}

/// Measures the geometric decay slope of the consensus iteration
/// x <- A^T x started from `x0`: returns the least-squares slope of
/// ln ||x_i - (p^T x0) 1|| over the window where the transient has died
/// down but the deviation is still well above the float floor.
///
/// The returned slope approximates ln(lambda2).
pub fn consensus_decay_slope(a: &CombinationMatrix, perron: &[f64], x0: &[f64]) -> Result<f64> {
    let target = linalg::dot(perron, x0);
    let dev0: f64 = x0
        .iter()
        .map(|v| (v - target) * (v - target))
        .sum::<f64>()
        .sqrt();
    if dev0 <= 0.0 {
        return Err(Error::Diagnostic(
            "start vector already at consensus".into(),
        ));
    }
    let mut x = x0.to_vec();
    let mut iters = Vec::new();
    let mut logs = Vec::new();
    for i in 0..2000usize {
        let dev: f64 = x
            .iter()
            .map(|v| (v - target) * (v - target))
            .sum::<f64>()
            .sqrt();
        let rel = dev / dev0;
        if rel <= 1e-13 {
            break;
        }
        // wait out the subdominant modes before trusting the slope
        if rel <= 1e-3 {
            iters.push(i as f64);
            logs.push(dev.ln());
        }
        x = a.apply_t(&x);
    }
    if logs.len() < 5 {
        return Err(Error::Diagnostic(format!(
            "consensus decay window too short ({} points)",
            logs.len()
        )));
    }
    Ok(linalg::ls_slope(&iters, &logs))
}

/// Per-check validation report for the combination-matrix assumptions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub column_sums_ok: bool,
    pub max_column_sum_deviation: f64,
    pub nonnegative: bool,
    pub primitive: bool,
    pub strongly_connected: bool,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.column_sums_ok && self.nonnegative && self.primitive && self.strongly_connected
    }
}

/// Checks column sums, entry signs, primitivity (A^K entrywise positive)
/// and strong connectivity of the sparsity pattern. Reports, never errors.
pub fn validate_assumption6(a: &CombinationMatrix) -> ValidationReport {
    let k = a.num_agents();
    let mut max_dev = 0.0f64;
    for col in 0..k {
        let s: f64 = a.column(col).iter().sum();
        max_dev = max_dev.max((s - 1.0).abs());
    }
    let nonnegative = a.entries.iter().all(|&x| x >= 0.0);
    let pattern = a.pattern();
    let primitive = pattern_primitive(&pattern);
    // strong connectivity of the pattern graph
    let neighbors: Vec<BTreeSet<usize>> = (0..k)
        .map(|kk| (0..k).filter(|&l| pattern[l][kk]).collect())
        .collect();
    let strongly_connected = Graph {
        num_agents: k,
        neighbors,
    }
    .strongly_connected();
    ValidationReport {
        column_sums_ok: max_dev <= 1e-12,
        max_column_sum_deviation: max_dev,
        nonnegative,
        primitive,
        strongly_connected,
    }
}

/// Plain JSON form of a topology: neighbor sets (0-based) plus the
/// combination matrix in column-major layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyFile {
    #[serde(rename = "K")]
    pub k: usize,
    pub neighbors: Vec<Vec<usize>>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
}

impl TopologyFile {
    pub fn from_parts(graph: &Graph, a: &CombinationMatrix) -> Self {
        TopologyFile {
            k: graph.num_agents(),
            neighbors: (0..graph.num_agents())
                .map(|k| graph.neighbors(k).iter().copied().collect())
                .collect(),
            a: (0..a.num_agents()).map(|k| a.column(k).to_vec()).collect(),
        }
    }

    pub fn into_parts(self) -> Result<(Graph, CombinationMatrix)> {
        let graph = Graph::new(
            self.neighbors
                .into_iter()
                .map(|v| v.into_iter().collect())
                .collect(),
        )?;
        if graph.num_agents() != self.k {
            return Err(Error::InvalidArgument(
                "K does not match neighbor list length".into(),
            ));
        }
        let a = CombinationMatrix::from_columns(self.k, self.a)?;
        Ok((graph, a))
    }
}
