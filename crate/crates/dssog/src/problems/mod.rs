//! Stochastic minimax problem oracles.
//!
//! Every problem exposes the same contract: per-agent stochastic gradients
//! evaluated on explicit samples, exact (or high-fidelity Monte Carlo)
//! risk gradients, the constants the step-size planners consume, and a
//! closed-form inner maximizer where one exists. Oracles are immutable
//! after construction and never own randomness; callers pass streams in.

mod bilinear;
mod quadratic;
mod wgan1d;

pub use bilinear::BilinearProblem;
pub use quadratic::{QuadraticConfig, QuadraticParts, QuadraticProblem};
pub use wgan1d::{estimate_generator_moments, Regularizer, Wgan1dConfig, Wgan1dProblem};

use crate::linalg;
use rand_chacha::ChaCha12Rng;

/// One stochastic sample, opaque to the optimizers. The id tags the draw so
/// instrumentation can verify the same-sample property.
#[derive(Debug, Clone)]
pub enum Sample {
    /// Additive gradient-noise realizations for both variables.
    Noise { id: u64, x: Vec<f64>, y: Vec<f64> },
    /// One observation u of the data distribution and one latent z.
    Wgan { id: u64, u: f64, z: f64 },
    /// One sub-sample per agent, used by the fusion-center wrapper.
    Batch { id: u64, parts: Vec<Sample> },
}

impl Sample {
    pub fn id(&self) -> u64 {
        match self {
            Sample::Noise { id, .. } | Sample::Wgan { id, .. } | Sample::Batch { id, .. } => *id,
        }
    }
}

/// Constants a problem declares for the planners and the validators.
#[derive(Debug, Clone)]
pub struct ProblemConstants {
    /// Lipschitz constant of the risk gradients.
    pub l_f: f64,
    /// PL constant of -J(x, .) when the problem declares one.
    pub nu: Option<f64>,
    /// Per-agent gradient noise variance bound (per variable tag).
    pub sigma_sq: Vec<f64>,
    /// Bound on the local-vs-global gradient disagreement.
    pub heterogeneity: f64,
}

impl ProblemConstants {
    /// sum_k sigma_k^2, the aggregate noise constant of the bounds.
    pub fn sigma_sq_total(&self) -> f64 {
        self.sigma_sq.iter().sum()
    }
}

/// Contract for a distributed stochastic minimax problem
/// min_x max_y J(x, y) = sum_k p_k J_k(x, y).
pub trait ProblemOracle: Send + Sync {
    /// (M1, M2): primal and dual dimension.
    fn dims(&self) -> (usize, usize);

    fn num_agents(&self) -> usize;

    /// The positive weights p_k defining the aggregate risk.
    fn weights(&self) -> &[f64];

    fn draw_sample(&self, agent: usize, rng: &mut ChaCha12Rng) -> Sample;

    fn stoch_grad_x(&self, agent: usize, x: &[f64], y: &[f64], sample: &Sample) -> Vec<f64>;

    fn stoch_grad_y(&self, agent: usize, x: &[f64], y: &[f64], sample: &Sample) -> Vec<f64>;

    /// Local risk gradient of J_k.
    fn true_grad_x(&self, agent: usize, x: &[f64], y: &[f64]) -> Vec<f64>;

    fn true_grad_y(&self, agent: usize, x: &[f64], y: &[f64]) -> Vec<f64>;

    /// Aggregate risk gradient sum_k p_k grad J_k.
    fn global_grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dims().0];
        for (k, &w) in self.weights().iter().enumerate() {
            linalg::axpy(w, &self.true_grad_x(k, x, y), &mut g);
        }
        g
    }

    fn global_grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dims().1];
        for (k, &w) in self.weights().iter().enumerate() {
            linalg::axpy(w, &self.true_grad_y(k, x, y), &mut g);
        }
        g
    }

    /// Aggregate risk value J(x, y).
    fn global_risk(&self, x: &[f64], y: &[f64]) -> f64;

    fn constants(&self) -> ProblemConstants;

    /// Closed-form inner maximizer: (y_o(x), P(x)) with P(x) = max_y J(x, y),
    /// when the problem admits one.
    fn inner_max(&self, x: &[f64]) -> Option<(Vec<f64>, f64)>;

    /// Large-batch estimate of the local risk J_k, deterministic for a fixed
    /// seed. Used by finite-difference checks only.
    fn mc_loss(&self, agent: usize, x: &[f64], y: &[f64], n_samples: usize, seed: u64) -> f64;
}

/// Per-variable result of a finite-difference gradient check.
#[derive(Debug, Clone, Copy)]
pub struct FdCheck {
    pub max_rel_x: f64,
    pub max_rel_y: f64,
}

impl FdCheck {
    pub fn max_rel(&self) -> f64 {
        self.max_rel_x.max(self.max_rel_y)
    }
}

fn rel_err(fd: f64, g: f64, scale: f64) -> f64 {
    // floor the denominator at a fraction of the gradient scale so that
    // near-zero components do not report spurious blowups
    let denom = fd.abs().max(g.abs()).max(0.01 * scale).max(1e-12);
    (fd - g).abs() / denom
}

/// Central differences of the large-batch loss against the declared risk
/// gradients, componentwise. The same batch seed is used on both sides of
/// every difference (common random numbers), so the reported error reflects
/// the gradient implementation, not fresh sampling noise.
pub fn finite_difference_check(
    problem: &dyn ProblemOracle,
    agent: usize,
    x: &[f64],
    y: &[f64],
    h: f64,
    n_samples: usize,
    seed: u64,
) -> FdCheck {
    assert!(h > 0.0, "step size must be positive");
    let gx = problem.true_grad_x(agent, x, y);
    let gy = problem.true_grad_y(agent, x, y);
    let scale_x = gx.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale_y = gy.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut max_rel_x = 0.0f64;
    for j in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let fd = (problem.mc_loss(agent, &xp, y, n_samples, seed)
            - problem.mc_loss(agent, &xm, y, n_samples, seed))
            / (2.0 * h);
        max_rel_x = max_rel_x.max(rel_err(fd, gx[j], scale_x));
    }
    let mut max_rel_y = 0.0f64;
    for j in 0..y.len() {
        let mut yp = y.to_vec();
        let mut ym = y.to_vec();
        yp[j] += h;
        ym[j] -= h;
        let fd = (problem.mc_loss(agent, x, &yp, n_samples, seed)
            - problem.mc_loss(agent, x, &ym, n_samples, seed))
            / (2.0 * h);
        max_rel_y = max_rel_y.max(rel_err(fd, gy[j], scale_y));
    }
    FdCheck {
        max_rel_x,
        max_rel_y,
    }
}

/// Probes the PL inequality ||grad_y J(x,y)||^2 >= 2 nu (P(x) - J(x,y)) at
/// random points and returns the worst relative violation (0 when the
/// inequality holds everywhere).
pub fn pl_probe(
    problem: &dyn ProblemOracle,
    nu: f64,
    n_points: usize,
    radius: f64,
    rng: &mut ChaCha12Rng,
) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    let normal = StandardNormal;
    let (m1, m2) = problem.dims();
    let mut worst = 0.0f64;
    for _ in 0..n_points {
        let x: Vec<f64> = (0..m1)
            .map(|_| {
                let s: f64 = normal.sample(rng);
                s * radius
            })
            .collect();
        let y: Vec<f64> = (0..m2)
            .map(|_| {
                let s: f64 = normal.sample(rng);
                s * radius
            })
            .collect();
        let (_, p) = problem
            .inner_max(&x)
            .expect("PL probe requires a problem with a closed-form inner max");
        let lhs = linalg::norm_sq(&problem.global_grad_y(&x, &y));
        let rhs = 2.0 * nu * (p - problem.global_risk(&x, &y));
        let violation = (rhs - lhs) / rhs.abs().max(1.0);
        worst = worst.max(violation);
    }
    worst
}

/// Fusion-center view of a multi-agent problem: a single virtual agent
/// whose stochastic gradient is the p-weighted sum of per-agent stochastic
/// gradients, each on its own sub-sample.
pub struct FusionOracle<'a> {
    inner: &'a dyn ProblemOracle,
    weights: [f64; 1],
}

impl<'a> FusionOracle<'a> {
    pub fn new(inner: &'a dyn ProblemOracle) -> Self {
        FusionOracle {
            inner,
            weights: [1.0],
        }
    }
}

impl ProblemOracle for FusionOracle<'_> {
    fn dims(&self) -> (usize, usize) {
        self.inner.dims()
    }

    fn num_agents(&self) -> usize {
        1
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn draw_sample(&self, _agent: usize, rng: &mut ChaCha12Rng) -> Sample {
        let parts: Vec<Sample> = (0..self.inner.num_agents())
            .map(|k| self.inner.draw_sample(k, rng))
            .collect();
        let id = parts.first().map(Sample::id).unwrap_or(0);
        Sample::Batch { id, parts }
    }

    fn stoch_grad_x(&self, _agent: usize, x: &[f64], y: &[f64], sample: &Sample) -> Vec<f64> {
        let Sample::Batch { parts, .. } = sample else {
            panic!("fusion oracle expects batch samples");
        };
        let mut g = vec![0.0; self.dims().0];
        for (k, (&w, part)) in self.inner.weights().iter().zip(parts).enumerate() {
            linalg::axpy(w, &self.inner.stoch_grad_x(k, x, y, part), &mut g);
        }
        g
    }

    fn stoch_grad_y(&self, _agent: usize, x: &[f64], y: &[f64], sample: &Sample) -> Vec<f64> {
        let Sample::Batch { parts, .. } = sample else {
            panic!("fusion oracle expects batch samples");
        };
        let mut g = vec![0.0; self.dims().1];
        for (k, (&w, part)) in self.inner.weights().iter().zip(parts).enumerate() {
            linalg::axpy(w, &self.inner.stoch_grad_y(k, x, y, part), &mut g);
        }
        g
    }

    fn true_grad_x(&self, _agent: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.inner.global_grad_x(x, y)
    }

    fn true_grad_y(&self, _agent: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.inner.global_grad_y(x, y)
    }

    fn global_risk(&self, x: &[f64], y: &[f64]) -> f64 {
        self.inner.global_risk(x, y)
    }

    fn constants(&self) -> ProblemConstants {
        let c = self.inner.constants();
        let sigma: f64 = self
            .inner
            .weights()
            .iter()
            .zip(&c.sigma_sq)
            .map(|(w, s)| w * w * s)
            .sum();
        ProblemConstants {
            l_f: c.l_f,
            nu: c.nu,
            sigma_sq: vec![sigma],
            heterogeneity: 0.0,
        }
    }

    fn inner_max(&self, x: &[f64]) -> Option<(Vec<f64>, f64)> {
        self.inner.inner_max(x)
    }

    fn mc_loss(&self, _agent: usize, x: &[f64], y: &[f64], n_samples: usize, seed: u64) -> f64 {
        self.inner
            .weights()
            .iter()
            .enumerate()
            .map(|(k, &w)| w * self.inner.mc_loss(k, x, y, n_samples, seed ^ (k as u64)))
            .sum()
    }
}
