//! One-dimensional Wasserstein GAN for learning the mean and variance of a
//! Gaussian.
//!
//! The generator is a single-hidden-layer network with 5 tanh units,
//! G(x; z) = w2^T tanh(w1 z + b1) + b2, parameterized by x in R^16 with the
//! layout [w1 | b1 | w2 | b2]. The discriminator is D(y; u) = y1 u + y2 u^2
//! with y in R^2, regularized by lambda R(y). Each agent k observes data
//! u ~ N(pi_k, sigma_k^2).
//!
//!   J_k(x, y) = E_u D(y; u) - E_z D(y; G(x; z)) - lambda R(y)
//!
//! Stochastic gradients are hand-derived backpropagation on a single (u, z)
//! pair. The data moments E[u], E[u^2] are known in closed form; generator
//! moments E[G], E[G^2] (and the moment gradients the true x-gradient
//! needs) are Monte Carlo estimates on a fixed oracle seed, cached per x.
//! With the squared regularizer, -J(x, .) is exactly 2 lambda strongly
//! concave in y, so the problem declares nu = 2 lambda.

use super::{ProblemConstants, ProblemOracle, Sample};
use crate::linalg;
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Generator parameter count: 5 input weights, 5 biases, 5 output weights,
/// one output bias.
pub const GEN_DIM: usize = 16;
/// Discriminator parameter count.
pub const DISC_DIM: usize = 2;

const HIDDEN: usize = 5;
const W1: usize = 0;
const B1: usize = HIDDEN;
const W2: usize = 2 * HIDDEN;
const B2: usize = 3 * HIDDEN;

/// Dual regularizer form. The squared form keeps the risk smooth and PL;
/// the plain norm matches the loss display literally but is nonsmooth at 0
/// and admits no finite inner maximum when the moment mismatch exceeds
/// lambda.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    #[default]
    Squared,
    Norm,
}

fn default_lambda() -> f64 {
    0.1
}

fn default_moment_samples() -> usize {
    1_000_000
}

fn default_oracle_seed() -> u64 {
    0x0dd5_eed0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Wgan1dConfig {
    /// Per-agent data distributions (pi_k, sigma_k^2).
    pub agents: Vec<(f64, f64)>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub regularizer: Regularizer,
    /// Sample count behind the cached generator moments ("true" gradients).
    #[serde(default = "default_moment_samples")]
    pub moment_samples: usize,
    /// Seed of the fixed oracle stream the moment cache draws from.
    #[serde(default = "default_oracle_seed")]
    pub oracle_seed: u64,
}

impl Wgan1dConfig {
    /// All agents share the same data distribution.
    pub fn uniform(pi: f64, sigma2: f64, num_agents: usize) -> Self {
        Wgan1dConfig {
            agents: vec![(pi, sigma2); num_agents],
            lambda: default_lambda(),
            regularizer: Regularizer::Squared,
            moment_samples: default_moment_samples(),
            oracle_seed: default_oracle_seed(),
        }
    }
}

#[derive(Debug, Clone)]
struct GenMoments {
    e_g: f64,
    e_g2: f64,
    /// E[grad_x G]
    e_dg: Vec<f64>,
    /// E[G grad_x G]
    e_gdg: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Measured {
    l_f: f64,
    sigma_sq: Vec<f64>,
}

pub struct Wgan1dProblem {
    agents: Vec<(f64, f64)>,
    lambda: f64,
    reg: Regularizer,
    weights: Vec<f64>,
    moment_samples: usize,
    oracle_seed: u64,
    cache: Mutex<HashMap<Vec<u64>, GenMoments>>,
    measured: OnceLock<Measured>,
}

/// Stream-key constants so the moment cache and `mc_loss` can share the
/// same latent draws when handed the same seed.
const Z_STREAM: u64 = 0x7a5e_11aa;
const U_STREAM: u64 = 0xdada_5150;

/// Generator forward pass.
pub fn generator(x: &[f64], z: f64) -> f64 {
    debug_assert_eq!(x.len(), GEN_DIM);
    let mut out = x[B2];
    for j in 0..HIDDEN {
        out += x[W2 + j] * (x[W1 + j] * z + x[B1 + j]).tanh();
    }
    out
}

/// Generator forward pass together with the gradient in the parameters.
fn generator_with_grad(x: &[f64], z: f64) -> (f64, Vec<f64>) {
    let mut out = x[B2];
    let mut grad = vec![0.0; GEN_DIM];
    grad[B2] = 1.0;
    for j in 0..HIDDEN {
        let h = (x[W1 + j] * z + x[B1 + j]).tanh();
        let dh = 1.0 - h * h;
        out += x[W2 + j] * h;
        grad[W1 + j] = x[W2 + j] * dh * z;
        grad[B1 + j] = x[W2 + j] * dh;
        grad[W2 + j] = h;
    }
    (out, grad)
}

/// Sample mean and unbiased sample variance of G(x; z) over n i.i.d.
/// standard normal draws from the supplied stream.
pub fn estimate_generator_moments(
    x: &[f64],
    n_samples: usize,
    rng: &mut ChaCha12Rng,
) -> Result<(f64, f64)> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument(
            "moment estimation needs at least 2 samples".into(),
        ));
    }
    let normal = StandardNormal;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let z: f64 = normal.sample(rng);
        let g = generator(x, z);
        sum += g;
        sum_sq += g * g;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq - n * mean * mean) / (n - 1.0);
    Ok((mean, var.max(0.0)))
}

fn ball_point(rng: &mut ChaCha12Rng, dim: usize, radius: f64) -> Vec<f64> {
    let normal = StandardNormal;
    let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
    let n = linalg::norm(&v).max(1e-12);
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / dim as f64);
    linalg::scale(r / n, &mut v);
    v
}

impl Wgan1dProblem {
    pub fn new(cfg: &Wgan1dConfig, weights: &[f64]) -> Result<Self> {
        if cfg.lambda <= 0.0 {
            return Err(Error::InvalidArgument("lambda must be positive".into()));
        }
        if cfg.agents.is_empty() {
            return Err(Error::InvalidArgument("at least one agent required".into()));
        }
        if weights.len() != cfg.agents.len() {
            return Err(Error::InvalidArgument(
                "weights length must match agent count".into(),
            ));
        }
        if cfg.agents.iter().any(|&(_, s2)| s2 < 0.0) {
            return Err(Error::InvalidArgument(
                "agent variances must be nonnegative".into(),
            ));
        }
        Ok(Wgan1dProblem {
            agents: cfg.agents.clone(),
            lambda: cfg.lambda,
            reg: cfg.regularizer,
            weights: weights.to_vec(),
            moment_samples: cfg.moment_samples.max(2),
            oracle_seed: cfg.oracle_seed,
            cache: Mutex::new(HashMap::new()),
            measured: OnceLock::new(),
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn oracle_seed(&self) -> u64 {
        self.oracle_seed
    }

    pub fn moment_samples(&self) -> usize {
        self.moment_samples
    }

    pub fn regularizer(&self) -> Regularizer {
        self.reg
    }

    pub fn agent_params(&self, k: usize) -> (f64, f64) {
        self.agents[k]
    }

    fn reg_value(&self, y: &[f64]) -> f64 {
        match self.reg {
            Regularizer::Squared => linalg::norm_sq(y),
            Regularizer::Norm => linalg::norm(y),
        }
    }

    fn reg_grad(&self, y: &[f64]) -> Vec<f64> {
        match self.reg {
            Regularizer::Squared => y.iter().map(|v| 2.0 * v).collect(),
            Regularizer::Norm => {
                let n = linalg::norm(y);
                if n == 0.0 {
                    vec![0.0; y.len()]
                } else {
                    y.iter().map(|v| v / n).collect()
                }
            }
        }
    }

    /// Cached generator moments at x, always drawn from the fixed oracle
    /// stream so every x sees the same latent batch.
    fn moments(&self, x: &[f64]) -> GenMoments {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        {
            let cache = self.cache.lock().unwrap();
            if let Some(m) = cache.get(&key) {
                return m.clone();
            }
        }
        let mut rng = ChaCha12Rng::seed_from_u64(self.oracle_seed ^ Z_STREAM);
        let normal = StandardNormal;
        let n = self.moment_samples;
        let mut e_g = 0.0;
        let mut e_g2 = 0.0;
        let mut e_dg = vec![0.0; GEN_DIM];
        let mut e_gdg = vec![0.0; GEN_DIM];
        for _ in 0..n {
            let z: f64 = normal.sample(&mut rng);
            let (g, dg) = generator_with_grad(x, z);
            e_g += g;
            e_g2 += g * g;
            for i in 0..GEN_DIM {
                e_dg[i] += dg[i];
                e_gdg[i] += g * dg[i];
            }
        }
        let inv = 1.0 / n as f64;
        e_g *= inv;
        e_g2 *= inv;
        linalg::scale(inv, &mut e_dg);
        linalg::scale(inv, &mut e_gdg);
        let m = GenMoments {
            e_g,
            e_g2,
            e_dg,
            e_gdg,
        };
        let mut cache = self.cache.lock().unwrap();
        if cache.len() > 8192 {
            cache.clear();
        }
        cache.insert(key, m.clone());
        m
    }

    /// Weighted data moments (E[u], E[u^2]) across agents.
    fn data_moments(&self) -> (f64, f64) {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for (&w, &(pi, s2)) in self.weights.iter().zip(&self.agents) {
            m1 += w * pi;
            m2 += w * (pi * pi + s2);
        }
        (m1, m2)
    }

    /// Empirical Lipschitz and noise constants. The Lipschitz constant is
    /// the largest gradient-difference ratio over 10^4 random point pairs
    /// in a radius-5 ball times a factor-2 safety margin; noise variance is
    /// measured per agent on a radius-3 ball and declared with margin 1.5.
    /// Moment fidelity is reduced during this probe; the safety factors
    /// absorb the Monte Carlo error.
    fn measure(&self) -> Measured {
        let probe = Wgan1dProblem {
            agents: self.agents.clone(),
            lambda: self.lambda,
            reg: self.reg,
            weights: self.weights.clone(),
            moment_samples: self.moment_samples.min(4000),
            oracle_seed: self.oracle_seed,
            cache: Mutex::new(HashMap::new()),
            measured: OnceLock::new(),
        };
        let mut rng = ChaCha12Rng::seed_from_u64(self.oracle_seed ^ 0xfeed);
        let mut ratio = 0.0f64;
        for _ in 0..10_000 {
            let x1 = ball_point(&mut rng, GEN_DIM, 5.0);
            let y1 = ball_point(&mut rng, DISC_DIM, 5.0);
            let x2 = ball_point(&mut rng, GEN_DIM, 5.0);
            let y2 = ball_point(&mut rng, DISC_DIM, 5.0);
            let dist = linalg::dist_sq(&x1, &x2).sqrt() + linalg::dist_sq(&y1, &y2).sqrt();
            if dist < 0.5 {
                continue;
            }
            let dx = linalg::dist_sq(
                &probe.true_grad_x(0, &x1, &y1),
                &probe.true_grad_x(0, &x2, &y2),
            )
            .sqrt();
            let dy = linalg::dist_sq(
                &probe.true_grad_y(0, &x1, &y1),
                &probe.true_grad_y(0, &x2, &y2),
            )
            .sqrt();
            ratio = ratio.max(dx.max(dy) / dist);
        }
        let l_f = 2.0 * ratio;

        let mut sigma_sq = Vec::with_capacity(self.agents.len());
        for k in 0..self.agents.len() {
            let mut worst = 0.0f64;
            for _ in 0..30 {
                let x = ball_point(&mut rng, GEN_DIM, 3.0);
                let y = ball_point(&mut rng, DISC_DIM, 3.0);
                let tx = probe.true_grad_x(k, &x, &y);
                let ty = probe.true_grad_y(k, &x, &y);
                let mut vx = 0.0;
                let mut vy = 0.0;
                let n = 64;
                for _ in 0..n {
                    let s = probe.draw_sample(k, &mut rng);
                    vx += linalg::dist_sq(&probe.stoch_grad_x(k, &x, &y, &s), &tx);
                    vy += linalg::dist_sq(&probe.stoch_grad_y(k, &x, &y, &s), &ty);
                }
                worst = worst.max(vx / n as f64).max(vy / n as f64);
            }
            sigma_sq.push(1.5 * worst);
        }
        Measured { l_f, sigma_sq }
    }

    fn measured(&self) -> &Measured {
        self.measured.get_or_init(|| self.measure())
    }
}

impl ProblemOracle for Wgan1dProblem {
    fn dims(&self) -> (usize, usize) {
        (GEN_DIM, DISC_DIM)
    }

    fn num_agents(&self) -> usize {
        self.agents.len()
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn draw_sample(&self, agent: usize, rng: &mut ChaCha12Rng) -> Sample {
        let id: u64 = rng.random();
        let normal = StandardNormal;
        let (pi, s2) = self.agents[agent];
        let zu: f64 = normal.sample(rng);
        let u = pi + s2.sqrt() * zu;
        let z: f64 = normal.sample(rng);
        Sample::Wgan { id, u, z }
    }

    fn stoch_grad_x(&self, _agent: usize, x: &[f64], y: &[f64], sample: &Sample) -> Vec<f64> {
        let Sample::Wgan { z, .. } = sample else {
            panic!("wgan problem expects wgan samples");
        };
        let (g, dg) = generator_with_grad(x, *z);
        let coeff = -(y[0] + 2.0 * y[1] * g);
        dg.iter().map(|d| coeff * d).collect()
    }

    fn stoch_grad_y(&self, _agent: usize, x: &[f64], y: &[f64], sample: &Sample) -> Vec<f64> {
        let Sample::Wgan { u, z, .. } = sample else {
            panic!("wgan problem expects wgan samples");
        };
        let g = generator(x, *z);
        let rg = self.reg_grad(y);
        vec![
            u - g - self.lambda * rg[0],
            u * u - g * g - self.lambda * rg[1],
        ]
    }

    fn true_grad_x(&self, _agent: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        let m = self.moments(x);
        (0..GEN_DIM)
            .map(|i| -(y[0] * m.e_dg[i] + 2.0 * y[1] * m.e_gdg[i]))
            .collect()
    }

    fn true_grad_y(&self, agent: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        let m = self.moments(x);
        let (pi, s2) = self.agents[agent];
        let rg = self.reg_grad(y);
        vec![
            pi - m.e_g - self.lambda * rg[0],
            pi * pi + s2 - m.e_g2 - self.lambda * rg[1],
        ]
    }

    fn global_grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        // the generator term is agent-independent
        self.true_grad_x(0, x, y)
    }

    fn global_grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let m = self.moments(x);
        let (d1, d2) = self.data_moments();
        let rg = self.reg_grad(y);
        vec![
            d1 - m.e_g - self.lambda * rg[0],
            d2 - m.e_g2 - self.lambda * rg[1],
        ]
    }

    fn global_risk(&self, x: &[f64], y: &[f64]) -> f64 {
        let m = self.moments(x);
        let (d1, d2) = self.data_moments();
        y[0] * (d1 - m.e_g) + y[1] * (d2 - m.e_g2) - self.lambda * self.reg_value(y)
    }

    fn constants(&self) -> ProblemConstants {
        let measured = self.measured();
        let (d1, d2) = self.data_moments();
        let mut het = 0.0f64;
        for &(pi, s2) in &self.agents {
            let dy = [(pi - d1), (pi * pi + s2 - d2)];
            het = het.max(linalg::norm(&dy));
        }
        ProblemConstants {
            l_f: measured.l_f,
            nu: match self.reg {
                Regularizer::Squared => Some(2.0 * self.lambda),
                Regularizer::Norm => None,
            },
            sigma_sq: measured.sigma_sq.clone(),
            heterogeneity: het,
        }
    }

    fn inner_max(&self, x: &[f64]) -> Option<(Vec<f64>, f64)> {
        match self.reg {
            Regularizer::Squared => {
                let m = self.moments(x);
                let (d1, d2) = self.data_moments();
                let mvec = [d1 - m.e_g, d2 - m.e_g2];
                let y = vec![mvec[0] / (2.0 * self.lambda), mvec[1] / (2.0 * self.lambda)];
                let p = linalg::norm_sq(&mvec) / (4.0 * self.lambda);
                Some((y, p))
            }
            Regularizer::Norm => None,
        }
    }

    fn mc_loss(&self, agent: usize, x: &[f64], y: &[f64], n_samples: usize, seed: u64) -> f64 {
        // u and z come from separate substreams; a batch seeded with the
        // oracle seed therefore reuses the exact z-set behind the cached
        // moments, so finite differences against the declared gradients
        // measure formula error rather than resampling noise.
        let mut rng_u = ChaCha12Rng::seed_from_u64(seed ^ U_STREAM ^ (agent as u64));
        let mut rng_z = ChaCha12Rng::seed_from_u64(seed ^ Z_STREAM);
        let normal = StandardNormal;
        let (pi, s2) = self.agents[agent];
        let sd = s2.sqrt();
        let mut acc = 0.0;
        for _ in 0..n_samples {
            let zu: f64 = normal.sample(&mut rng_u);
            let u = pi + sd * zu;
            let z: f64 = normal.sample(&mut rng_z);
            let g = generator(x, z);
            acc += y[0] * u + y[1] * u * u - y[0] * g - y[1] * g * g;
        }
        acc / n_samples as f64 - self.lambda * self.reg_value(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{finite_difference_check, pl_probe};

    fn uniform_weights(k: usize) -> Vec<f64> {
        vec![1.0 / k as f64; k]
    }

    fn small_problem() -> Wgan1dProblem {
        let mut cfg = Wgan1dConfig::uniform(0.3, 0.05, 2);
        cfg.moment_samples = 200_000;
        Wgan1dProblem::new(&cfg, &uniform_weights(2)).unwrap()
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        let mut cfg = Wgan1dConfig::uniform(0.0, 0.001, 2);
        cfg.lambda = 0.0;
        assert!(Wgan1dProblem::new(&cfg, &uniform_weights(2)).is_err());
    }

    #[test]
    fn zero_generator_has_zero_moments() {
        // w2 = 0, b2 = 0 makes G identically zero
        let mut x = vec![0.0; GEN_DIM];
        x[W1] = 0.7;
        x[B1 + 2] = -0.4;
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let (m, v) = estimate_generator_moments(&x, 10_000, &mut rng).unwrap();
        assert_eq!(m, 0.0);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn grad_y_at_origin_is_moment_mismatch() {
        let p = small_problem();
        // zero generator: E[G] = E[G^2] = 0
        let x = vec![0.0; GEN_DIM];
        let g = p.true_grad_y(0, &x, &[0.0, 0.0]);
        let (pi, s2) = p.agent_params(0);
        assert!((g[0] - pi).abs() < 1e-12);
        assert!((g[1] - (pi * pi + s2)).abs() < 1e-12);
    }

    #[test]
    fn passthrough_generator_variance_matches_delta_method() {
        // linear regime: G ~= (w2 . w1) z
        let mut x = vec![0.0; GEN_DIM];
        for j in 0..HIDDEN {
            x[W1 + j] = 0.001;
            x[W2 + j] = 1.0;
        }
        let inner = 0.005f64; // w2 . w1
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let (m, v) = estimate_generator_moments(&x, 1_000_000, &mut rng).unwrap();
        assert!(m.abs() < 3.0 * inner / 1000.0, "mean {m}");
        assert!((v - inner * inner).abs() < 0.01 * inner * inner, "var {v}");
    }

    #[test]
    fn moment_estimation_needs_two_samples() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        assert!(estimate_generator_moments(&[0.0; GEN_DIM], 1, &mut rng).is_err());
    }

    #[test]
    fn moment_estimation_golden_values() {
        // 10^6 samples on a fixed stream; values recorded at first run
        let x: Vec<f64> = (0..GEN_DIM).map(|i| 0.05 * ((i as f64) - 8.0)).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(314159);
        let (m, v) = estimate_generator_moments(&x, 1_000_000, &mut rng).unwrap();
        assert_eq!(m.to_bits(), 0x3fd50dbfa30e243c, "mean drifted: {m:.17e}");
        assert_eq!(
            v.to_bits(),
            0x3fb07ddbc2fab1a3,
            "variance drifted: {v:.17e}"
        );
    }

    #[test]
    fn moment_estimation_deterministic_for_fixed_seed() {
        let x: Vec<f64> = (0..GEN_DIM).map(|i| 0.05 * (i as f64 - 8.0)).collect();
        let mut r1 = ChaCha12Rng::seed_from_u64(77);
        let mut r2 = ChaCha12Rng::seed_from_u64(77);
        let a = estimate_generator_moments(&x, 50_000, &mut r1).unwrap();
        let b = estimate_generator_moments(&x, 50_000, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pl_identity_with_squared_regularizer() {
        let p = small_problem();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let worst = pl_probe(&p, 2.0 * p.lambda(), 200, 1.5, &mut rng);
        assert!(worst <= 1e-9, "worst PL violation {worst}");
    }

    #[test]
    fn finite_difference_y_gradient() {
        let cfg = Wgan1dConfig::uniform(0.0, 0.001, 2);
        let p = Wgan1dProblem::new(&cfg, &uniform_weights(2)).unwrap();
        let x: Vec<f64> = (0..GEN_DIM)
            .map(|i| 0.12 * ((i % 5) as f64 - 2.0))
            .collect();
        let y = vec![2.0, -1.5];
        // batch on the oracle stream: shares the z-set of the cached moments
        let check =
            finite_difference_check(&p, 0, &x, &y, 1e-4, p.moment_samples(), p.oracle_seed());
        assert!(check.max_rel_y <= 1e-3, "fd y error {}", check.max_rel_y);
        // the x-side validates the hand-derived backpropagation
        assert!(check.max_rel_x <= 1e-3, "fd x error {}", check.max_rel_x);
    }

    #[test]
    fn finite_difference_with_fresh_batch_stays_at_noise_level() {
        let p = small_problem();
        let x = vec![0.05; GEN_DIM];
        let y = vec![0.8, -0.5];
        let check = finite_difference_check(&p, 0, &x, &y, 1e-4, 1_000_000, 99);
        assert!(check.max_rel_y <= 5e-2, "fd y error {}", check.max_rel_y);
    }

    #[test]
    fn stochastic_gradients_unbiased() {
        let p = small_problem();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let x = ball_point(&mut rng, GEN_DIM, 1.0);
        let y = vec![0.4, 0.2];
        let truth_y = p.true_grad_y(0, &x, &y);
        let truth_x = p.true_grad_x(0, &x, &y);
        let n = 100_000;
        let mut mean_y = vec![0.0; 2];
        let mut sq_y = vec![0.0; 2];
        let mut mean_x = vec![0.0; GEN_DIM];
        let mut sq_x = vec![0.0; GEN_DIM];
        for _ in 0..n {
            let s = p.draw_sample(0, &mut rng);
            let gy = p.stoch_grad_y(0, &x, &y, &s);
            for i in 0..2 {
                mean_y[i] += gy[i];
                sq_y[i] += gy[i] * gy[i];
            }
            let gx = p.stoch_grad_x(0, &x, &y, &s);
            for i in 0..GEN_DIM {
                mean_x[i] += gx[i];
                sq_x[i] += gx[i] * gx[i];
            }
        }
        // the 1e-3 slack covers the finite-sample error of the cached
        // moment oracle behind the declared truth
        let mut check = |mean: &mut [f64], sq: &[f64], truth: &[f64]| {
            for i in 0..truth.len() {
                mean[i] /= n as f64;
                let var = (sq[i] / n as f64 - mean[i] * mean[i]).max(0.0);
                let se = (var / n as f64).sqrt();
                assert!(
                    (mean[i] - truth[i]).abs() <= 4.0 * se + 1e-3,
                    "component {i}: bias {} vs se {}",
                    (mean[i] - truth[i]).abs(),
                    se
                );
            }
        };
        check(&mut mean_y, &sq_y, &truth_y);
        check(&mut mean_x, &sq_x, &truth_x);
    }

    #[test]
    fn declared_noise_bound_holds() {
        let mut cfg = Wgan1dConfig::uniform(0.1, 0.02, 2);
        cfg.moment_samples = 50_000;
        let p = Wgan1dProblem::new(&cfg, &uniform_weights(2)).unwrap();
        let declared = p.constants().sigma_sq[0];
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let x = ball_point(&mut rng, GEN_DIM, 2.5);
            let y = ball_point(&mut rng, DISC_DIM, 2.5);
            let tx = p.true_grad_x(0, &x, &y);
            let ty = p.true_grad_y(0, &x, &y);
            let n = 400;
            let mut vx = 0.0;
            let mut vy = 0.0;
            for _ in 0..n {
                let s = p.draw_sample(0, &mut rng);
                vx += linalg::dist_sq(&p.stoch_grad_x(0, &x, &y, &s), &tx);
                vy += linalg::dist_sq(&p.stoch_grad_y(0, &x, &y, &s), &ty);
            }
            worst = worst.max(vx / n as f64).max(vy / n as f64);
        }
        assert!(
            worst <= declared * 1.2,
            "measured {worst} declared {declared}"
        );
    }

    #[test]
    fn heterogeneity_closed_form() {
        let cfg = Wgan1dConfig {
            agents: vec![(0.0, 0.001), (0.5, 0.1)],
            lambda: 0.1,
            regularizer: Regularizer::Squared,
            moment_samples: 1000,
            oracle_seed: 1,
        };
        let p = Wgan1dProblem::new(&cfg, &[0.5, 0.5]).unwrap();
        // weighted data moments: d1 = 0.25, d2 = (0.001 + 0.25 + 0.1)/2
        let d1: f64 = 0.25;
        let d2: f64 = 0.5 * (0.001 + 0.35);
        let g0 = ((0.0f64 - d1).powi(2) + (0.001f64 - d2).powi(2)).sqrt();
        let g1 = ((0.5f64 - d1).powi(2) + (0.35f64 - d2).powi(2)).sqrt();
        assert!((p.constants().heterogeneity - g0.max(g1)).abs() < 1e-12);
    }

    #[test]
    fn norm_regularizer_declares_no_pl_and_no_inner_max() {
        let cfg = Wgan1dConfig {
            agents: vec![(0.0, 0.001); 2],
            lambda: 0.1,
            regularizer: Regularizer::Norm,
            moment_samples: 1000,
            oracle_seed: 1,
        };
        let p = Wgan1dProblem::new(&cfg, &uniform_weights(2)).unwrap();
        assert!(p.inner_max(&[0.0; GEN_DIM]).is_none());
        assert!(p.constants().nu.is_none());
    }
}
