//! Quadratic saddle family with a closed-form inner maximizer.
//!
//! J_k(x, y) = 1/2 x^T Q_k x + x^T B_k y - gamma/2 ||y||^2 + c_k^T x + d_k^T y
//!
//! Per-agent blocks may be indefinite; the weighted aggregates are generated
//! so that Q_bar is PSD, which makes P(x) = max_y J(x, y) lower bounded.
//! Gradient noise is additive Gaussian with total variance exactly sigma^2
//! per variable tag, so the declared noise constant holds with equality.

use super::{ProblemConstants, ProblemOracle, Sample};
use crate::linalg::{self, Mat};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

fn default_scale() -> f64 {
    1.0
}

/// Generation recipe for a random instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticConfig {
    pub m1: usize,
    pub m2: usize,
    pub num_agents: usize,
    /// Dual concavity; also the declared PL constant.
    pub gamma: f64,
    /// Per-tag gradient noise variance (E||noise||^2), same for all agents.
    pub noise_sigma2: f64,
    /// Heterogeneity spread of the per-agent blocks around the aggregates.
    pub spread: f64,
    pub seed: u64,
    /// Spectral norm of the aggregate primal block Q_bar.
    #[serde(default = "default_scale")]
    pub q_scale: f64,
    /// Spectral norm of the aggregate coupling block B_bar.
    #[serde(default = "default_scale")]
    pub b_scale: f64,
}

/// Explicit per-agent data, mostly for tests that need exact aggregates.
#[derive(Debug, Clone)]
pub struct QuadraticParts {
    pub gamma: f64,
    pub weights: Vec<f64>,
    pub q: Vec<Mat>,
    pub b: Vec<Mat>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub noise_sigma2: f64,
}

pub struct QuadraticProblem {
    m1: usize,
    m2: usize,
    gamma: f64,
    weights: Vec<f64>,
    q: Vec<Mat>,
    b: Vec<Mat>,
    c: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
    q_bar: Mat,
    b_bar: Mat,
    c_bar: Vec<f64>,
    d_bar: Vec<f64>,
    sigma_sq: Vec<f64>,
    l_f: f64,
    heterogeneity: f64,
}

/// Radius of the reference ball on which the disagreement constant is
/// declared (the quadratic disagreement is unbounded globally).
const HETEROGENEITY_RADIUS: f64 = 5.0;

fn spectral_norm_rect(m: &Mat) -> f64 {
    // ||M||_2 = sqrt(lambda_max(M^T M))
    let mt = m.transpose();
    let mut mtm = Mat::zeros(m.cols, m.cols);
    for i in 0..m.cols {
        for j in 0..m.cols {
            let mut s = 0.0;
            for t in 0..m.rows {
                s += mt.at(i, t) * mt.at(j, t);
            }
            *mtm.at_mut(i, j) = s;
        }
    }
    mtm.symmetric_spectral_norm().max(0.0).sqrt()
}

impl QuadraticProblem {
    pub fn new(parts: QuadraticParts) -> Result<Self> {
        if parts.gamma <= 0.0 {
            return Err(Error::InvalidArgument("gamma must be positive".into()));
        }
        let k = parts.weights.len();
        if k == 0
            || parts.q.len() != k
            || parts.b.len() != k
            || parts.c.len() != k
            || parts.d.len() != k
        {
            return Err(Error::InvalidArgument(
                "per-agent lists must share length K >= 1".into(),
            ));
        }
        let m1 = parts.q[0].rows;
        let m2 = parts.b[0].cols;
        let mut q_bar = Mat::zeros(m1, m1);
        let mut b_bar = Mat::zeros(m1, m2);
        let mut c_bar = vec![0.0; m1];
        let mut d_bar = vec![0.0; m2];
        for kk in 0..k {
            let w = parts.weights[kk];
            q_bar.add_assign(&parts.q[kk].scaled(w));
            b_bar.add_assign(&parts.b[kk].scaled(w));
            linalg::axpy(w, &parts.c[kk], &mut c_bar);
            linalg::axpy(w, &parts.d[kk], &mut d_bar);
        }
        // L_f = max_k || [[Q_k, B_k], [B_k^T, -gamma I]] ||
        let mut l_f = 0.0f64;
        for kk in 0..k {
            let n = m1 + m2;
            let mut h = Mat::zeros(n, n);
            for i in 0..m1 {
                for j in 0..m1 {
                    *h.at_mut(i, j) = parts.q[kk].at(i, j);
                }
                for j in 0..m2 {
                    *h.at_mut(i, m1 + j) = parts.b[kk].at(i, j);
                    *h.at_mut(m1 + j, i) = parts.b[kk].at(i, j);
                }
            }
            for j in 0..m2 {
                *h.at_mut(m1 + j, m1 + j) = -parts.gamma;
            }
            l_f = l_f.max(h.symmetric_spectral_norm());
        }
        // disagreement bound on the reference ball
        let r = HETEROGENEITY_RADIUS;
        let mut het = 0.0f64;
        for kk in 0..k {
            let mut dq = parts.q[kk].clone();
            for (a, b) in dq.data.iter_mut().zip(&q_bar.data) {
                *a -= b;
            }
            let mut db = parts.b[kk].clone();
            for (a, b) in db.data.iter_mut().zip(&b_bar.data) {
                *a -= b;
            }
            let dc = linalg::sub(&parts.c[kk], &c_bar);
            let dd = linalg::sub(&parts.d[kk], &d_bar);
            let nq = dq.symmetric_spectral_norm();
            let nb = spectral_norm_rect(&db);
            let gx = nq * r + nb * r + linalg::norm(&dc);
            let gy = nb * r + linalg::norm(&dd);
            het = het.max(gx.max(gy));
        }
        Ok(QuadraticProblem {
            m1,
            m2,
            gamma: parts.gamma,
            sigma_sq: vec![parts.noise_sigma2; k],
            weights: parts.weights,
            q: parts.q,
            b: parts.b,
            c: parts.c,
            d: parts.d,
            q_bar,
            b_bar,
            c_bar,
            d_bar,
            l_f,
            heterogeneity: het,
        })
    }

    /// Random instance. The aggregate Q_bar is PSD with spectral norm
    /// `q_scale`; agent blocks deviate from the aggregates by `spread`
    /// while the weighted means stay exact.
    pub fn generate(cfg: &QuadraticConfig, weights: &[f64]) -> Result<Self> {
        if cfg.gamma <= 0.0 {
            return Err(Error::InvalidArgument("gamma must be positive".into()));
        }
        if weights.len() != cfg.num_agents {
            return Err(Error::InvalidArgument(
                "weights length must equal num_agents".into(),
            ));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let normal = StandardNormal;
        let draw = |rng: &mut ChaCha12Rng| -> f64 { normal.sample(rng) };
        let (m1, m2, k) = (cfg.m1, cfg.m2, cfg.num_agents);

        // PSD aggregate: M M^T normalized to spectral norm q_scale
        let mut m = Mat::zeros(m1, m1);
        for v in m.data.iter_mut() {
            *v = draw(&mut rng);
        }
        let mut q_bar = Mat::zeros(m1, m1);
        for i in 0..m1 {
            for j in 0..m1 {
                let mut s = 0.0;
                for t in 0..m1 {
                    s += m.at(i, t) * m.at(j, t);
                }
                *q_bar.at_mut(i, j) = s;
            }
        }
        let qn = q_bar.symmetric_spectral_norm();
        if qn > 0.0 {
            q_bar = q_bar.scaled(cfg.q_scale / qn);
        }
        let mut b_bar = Mat::zeros(m1, m2);
        for v in b_bar.data.iter_mut() {
            *v = draw(&mut rng);
        }
        let bn = spectral_norm_rect(&b_bar);
        if bn > 0.0 {
            b_bar = b_bar.scaled(cfg.b_scale / bn);
        }
        let c_bar: Vec<f64> = (0..m1).map(|_| draw(&mut rng)).collect();
        let d_bar: Vec<f64> = (0..m2).map(|_| draw(&mut rng)).collect();

        // per-agent deviations with exact weighted mean zero
        let mut eq: Vec<Mat> = Vec::with_capacity(k);
        let mut eb: Vec<Mat> = Vec::with_capacity(k);
        let mut ec: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut ed: Vec<Vec<f64>> = Vec::with_capacity(k);
        for _ in 0..k {
            let mut s = Mat::zeros(m1, m1);
            for i in 0..m1 {
                for j in 0..=i {
                    let v = draw(&mut rng);
                    *s.at_mut(i, j) = v;
                    *s.at_mut(j, i) = v;
                }
            }
            eq.push(s);
            let mut t = Mat::zeros(m1, m2);
            for v in t.data.iter_mut() {
                *v = draw(&mut rng);
            }
            eb.push(t);
            ec.push((0..m1).map(|_| draw(&mut rng)).collect());
            ed.push((0..m2).map(|_| draw(&mut rng)).collect());
        }
        let mut eq_mean = Mat::zeros(m1, m1);
        let mut eb_mean = Mat::zeros(m1, m2);
        let mut ec_mean = vec![0.0; m1];
        let mut ed_mean = vec![0.0; m2];
        for kk in 0..k {
            eq_mean.add_assign(&eq[kk].scaled(weights[kk]));
            eb_mean.add_assign(&eb[kk].scaled(weights[kk]));
            linalg::axpy(weights[kk], &ec[kk], &mut ec_mean);
            linalg::axpy(weights[kk], &ed[kk], &mut ed_mean);
        }
        let mut q = Vec::with_capacity(k);
        let mut b = Vec::with_capacity(k);
        let mut c = Vec::with_capacity(k);
        let mut d = Vec::with_capacity(k);
        for kk in 0..k {
            let mut qk = q_bar.clone();
            for ((a, e), em) in qk.data.iter_mut().zip(&eq[kk].data).zip(&eq_mean.data) {
                *a += cfg.spread * (e - em);
            }
            q.push(qk);
            let mut bk = b_bar.clone();
            for ((a, e), em) in bk.data.iter_mut().zip(&eb[kk].data).zip(&eb_mean.data) {
                *a += cfg.spread * (e - em);
            }
            b.push(bk);
            let ck: Vec<f64> = c_bar
                .iter()
                .zip(&ec[kk])
                .zip(&ec_mean)
                .map(|((base, e), em)| base + cfg.spread * (e - em))
                .collect();
            c.push(ck);
            let dk: Vec<f64> = d_bar
                .iter()
                .zip(&ed[kk])
                .zip(&ed_mean)
                .map(|((base, e), em)| base + cfg.spread * (e - em))
                .collect();
            d.push(dk);
        }
        QuadraticProblem::new(QuadraticParts {
            gamma: cfg.gamma,
            weights: weights.to_vec(),
            q,
            b,
            c,
            d,
            noise_sigma2: cfg.noise_sigma2,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Saddle point of the aggregate risk, solving grad_x J = 0 at y = y_o(x).
    /// The primal Hessian is Q_bar + B_bar B_bar^T / gamma.
    pub fn saddle(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let m1 = self.m1;
        let mut h = Mat::zeros(m1, m1);
        for i in 0..m1 {
            for j in 0..m1 {
                let mut s = self.q_bar.at(i, j);
                for t in 0..self.m2 {
                    s += self.b_bar.at(i, t) * self.b_bar.at(j, t) / self.gamma;
                }
                *h.at_mut(i, j) = s;
            }
        }
        // rhs = -(c_bar + B_bar d_bar / gamma)
        let mut rhs = self.c_bar.clone();
        for i in 0..m1 {
            for t in 0..self.m2 {
                rhs[i] += self.b_bar.at(i, t) * self.d_bar[t] / self.gamma;
            }
        }
        linalg::scale(-1.0, &mut rhs);
        let x = solve_spd(&h, &rhs)
            .ok_or_else(|| Error::Diagnostic("primal Hessian is singular".into()))?;
        let (y, _) = self.inner_max_exact(&x);
        Ok((x, y))
    }

    fn inner_max_exact(&self, x: &[f64]) -> (Vec<f64>, f64) {
        // y_o(x) = (B_bar^T x + d_bar) / gamma
        let mut y = self.b_bar.matvec_t(x);
        linalg::axpy(1.0, &self.d_bar, &mut y);
        linalg::scale(1.0 / self.gamma, &mut y);
        let p = self.global_risk(x, &y);
        (y, p)
    }
}

/// Gaussian elimination with partial pivoting; enough for the small SPD
/// systems of the saddle solve.
fn solve_spd(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows;
    let mut m = a.data.clone();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r * n + col].abs() > m[piv * n + col].abs() {
                piv = r;
            }
        }
        if m[piv * n + col].abs() < 1e-14 {
            return None;
        }
        if piv != col {
            for j in 0..n {
                m.swap(col * n + j, piv * n + j);
            }
            rhs.swap(col, piv);
        }
        let pv = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / pv;
            if f != 0.0 {
                for j in col..n {
                    m[r * n + j] -= f * m[col * n + j];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = rhs[col];
        for j in col + 1..n {
            s -= m[col * n + j] * x[j];
        }
        x[col] = s / m[col * n + col];
    }
    Some(x)
}

impl ProblemOracle for QuadraticProblem {
    fn dims(&self) -> (usize, usize) {
        (self.m1, self.m2)
    }

    fn num_agents(&self) -> usize {
        self.weights.len()
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn draw_sample(&self, agent: usize, rng: &mut ChaCha12Rng) -> Sample {
        let id: u64 = rng.random();
        let normal = StandardNormal;
        let sx = (self.sigma_sq[agent] / self.m1 as f64).sqrt();
        let sy = (self.sigma_sq[agent] / self.m2 as f64).sqrt();
        let x: Vec<f64> = (0..self.m1)
            .map(|_| {
                let v: f64 = normal.sample(rng);
                v * sx
            })
            .collect();
        let y: Vec<f64> = (0..self.m2)
            .map(|_| {
                let v: f64 = normal.sample(rng);
                v * sy
            })
            .collect();
        Sample::Noise { id, x, y }
    }

    fn stoch_grad_x(&self, agent: usize, x: &[f64], y: &[f64], sample: &Sample) -> Vec<f64> {
        let Sample::Noise { x: nx, .. } = sample else {
            panic!("quadratic problem expects noise samples");
        };
        let mut g = self.true_grad_x(agent, x, y);
        linalg::axpy(1.0, nx, &mut g);
        g
    }

    fn stoch_grad_y(&self, agent: usize, x: &[f64], y: &[f64], sample: &Sample) -> Vec<f64> {
        let Sample::Noise { y: ny, .. } = sample else {
            panic!("quadratic problem expects noise samples");
        };
        let mut g = self.true_grad_y(agent, x, y);
        linalg::axpy(1.0, ny, &mut g);
        g
    }

    fn true_grad_x(&self, agent: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut g = self.q[agent].matvec(x);
        linalg::axpy(1.0, &self.b[agent].matvec(y), &mut g);
        linalg::axpy(1.0, &self.c[agent], &mut g);
        g
    }

    fn true_grad_y(&self, agent: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut g = self.b[agent].matvec_t(x);
        linalg::axpy(-self.gamma, y, &mut g);
        linalg::axpy(1.0, &self.d[agent], &mut g);
        g
    }

    fn global_grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut g = self.q_bar.matvec(x);
        linalg::axpy(1.0, &self.b_bar.matvec(y), &mut g);
        linalg::axpy(1.0, &self.c_bar, &mut g);
        g
    }

    fn global_grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut g = self.b_bar.matvec_t(x);
        linalg::axpy(-self.gamma, y, &mut g);
        linalg::axpy(1.0, &self.d_bar, &mut g);
        g
    }

    fn global_risk(&self, x: &[f64], y: &[f64]) -> f64 {
        0.5 * linalg::dot(x, &self.q_bar.matvec(x)) + linalg::dot(x, &self.b_bar.matvec(y))
            - 0.5 * self.gamma * linalg::norm_sq(y)
            + linalg::dot(&self.c_bar, x)
            + linalg::dot(&self.d_bar, y)
    }

    fn constants(&self) -> ProblemConstants {
        ProblemConstants {
            l_f: self.l_f,
            nu: Some(self.gamma),
            sigma_sq: self.sigma_sq.clone(),
            heterogeneity: self.heterogeneity,
        }
    }

    fn inner_max(&self, x: &[f64]) -> Option<(Vec<f64>, f64)> {
        Some(self.inner_max_exact(x))
    }

    fn mc_loss(&self, agent: usize, x: &[f64], y: &[f64], _n_samples: usize, _seed: u64) -> f64 {
        // the noise model is gradient-additive; the loss itself is exact
        0.5 * linalg::dot(x, &self.q[agent].matvec(x)) + linalg::dot(x, &self.b[agent].matvec(y))
            - 0.5 * self.gamma * linalg::norm_sq(y)
            + linalg::dot(&self.c[agent], x)
            + linalg::dot(&self.d[agent], y)
    }
}
