//! Optimizer state machines and update rules.
//!
//! The same-sample optimistic direction is the core primitive: both
//! gradient evaluations inside one direction share a single sample, which
//! keeps the direction conditionally unbiased for the optimistic target
//! 2 grad J(current) - grad J(previous). The distributed round follows the
//! adapt-then-combine order: every agent finishes its local update before
//! any neighbor averaging happens.
//!
//! Baselines: stochastic extragradient (two oracle calls per variable at
//! an extrapolated point), past extragradient and stochastic optimistic
//! gradient (both reuse the stored past gradient with its old sample), and
//! plain simultaneous / alternating gradient descent-ascent.

mod plan;

pub use plan::{plan_theorem1, plan_theorem2, PlanInputs, PlanPhase, StepPlan};

use crate::linalg;
use crate::problems::{ProblemOracle, Sample};
use crate::rng::{SeedSplitter, StreamTag};
use crate::topology::CombinationMatrix;
use crate::{Error, Result};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// One agent's primal and dual vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl AgentPair {
    pub fn zeros(m1: usize, m2: usize) -> Self {
        AgentPair {
            x: vec![0.0; m1],
            y: vec![0.0; m2],
        }
    }
}

/// Algorithm selector, matching the experiment-config names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algo {
    #[serde(rename = "dss-og")]
    DssOg,
    #[serde(rename = "css-og")]
    CssOg,
    #[serde(rename = "s-og")]
    SOg,
    #[serde(rename = "s-eg")]
    SEg,
    #[serde(rename = "s-peg")]
    SPeg,
    #[serde(rename = "gda")]
    Gda,
    #[serde(rename = "agda")]
    Agda,
    #[serde(rename = "adam-dss-og")]
    AdamDssOg,
}

impl Algo {
    pub fn is_distributed(self) -> bool {
        matches!(self, Algo::DssOg | Algo::AdamDssOg)
    }
}

/// Adam hyperparameters for the wrapped direction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument(
                "adam momentum factors must lie in [0, 1)".into(),
            ));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidArgument(
                "adam epsilon must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// First and second moment buffers for both variables.
#[derive(Debug, Clone)]
pub struct AdamState {
    params: AdamParams,
    m_x: Vec<f64>,
    v_x: Vec<f64>,
    m_y: Vec<f64>,
    v_y: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(params: AdamParams, m1: usize, m2: usize) -> Self {
        AdamState {
            params,
            m_x: vec![0.0; m1],
            v_x: vec![0.0; m1],
            m_y: vec![0.0; m2],
            v_y: vec![0.0; m2],
            t: 0,
        }
    }

    pub fn first_moment_x(&self) -> &[f64] {
        &self.m_x
    }

    #[cfg(test)]
    fn first_moment_x_mut(&mut self) -> &mut [f64] {
        &mut self.m_x
    }

    /// Advances the moments with the raw direction and returns the
    /// bias-corrected update m_hat / sqrt(v_hat + eps) for both variables.
    fn transform(&mut self, gx: &[f64], gy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let AdamParams {
            beta1,
            beta2,
            epsilon,
        } = self.params;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let mut out_x = vec![0.0; gx.len()];
        for i in 0..gx.len() {
            self.m_x[i] = beta1 * self.m_x[i] + (1.0 - beta1) * gx[i];
            self.v_x[i] = beta2 * self.v_x[i] + (1.0 - beta2) * gx[i] * gx[i];
            out_x[i] = (self.m_x[i] / bc1) / ((self.v_x[i] / bc2) + epsilon).sqrt();
        }
        let mut out_y = vec![0.0; gy.len()];
        for i in 0..gy.len() {
            self.m_y[i] = beta1 * self.m_y[i] + (1.0 - beta1) * gy[i];
            self.v_y[i] = beta2 * self.v_y[i] + (1.0 - beta2) * gy[i] * gy[i];
            out_y[i] = (self.m_y[i] / bc1) / ((self.v_y[i] / bc2) + epsilon).sqrt();
        }
        (out_x, out_y)
    }
}

/// Same-sample optimistic direction at agent k:
///
///   g_x = 2 grad_x Q_k(current; xi_x) - grad_x Q_k(previous; xi_x)
///   g_y = 2 grad_y Q_k(current; xi_y) - grad_y Q_k(previous; xi_y)
///
/// Both evaluations inside g_x share xi_x; both inside g_y share xi_y.
pub fn ssog_direction(
    oracle: &dyn ProblemOracle,
    agent: usize,
    current: &AgentPair,
    previous: &AgentPair,
    sample_x: &Sample,
    sample_y: &Sample,
) -> (Vec<f64>, Vec<f64>) {
    let mut gx = oracle.stoch_grad_x(agent, &current.x, &current.y, sample_x);
    linalg::scale(2.0, &mut gx);
    let back_x = oracle.stoch_grad_x(agent, &previous.x, &previous.y, sample_x);
    linalg::axpy(-1.0, &back_x, &mut gx);

    let mut gy = oracle.stoch_grad_y(agent, &current.x, &current.y, sample_y);
    linalg::scale(2.0, &mut gy);
    let back_y = oracle.stoch_grad_y(agent, &previous.x, &previous.y, sample_y);
    linalg::axpy(-1.0, &back_y, &mut gy);
    (gx, gy)
}

/// Per-agent optimizer state: the optimistic two-pair history plus the
/// agent's private sample streams.
pub struct AgentState {
    pub cur: AgentPair,
    pub prev: AgentPair,
    pub adam: Option<AdamState>,
    rng_x: ChaCha12Rng,
    rng_y: ChaCha12Rng,
}

impl AgentState {
    fn new(
        init: AgentPair,
        agent: usize,
        splitter: &SeedSplitter,
        adam: Option<AdamParams>,
    ) -> Self {
        let (m1, m2) = (init.x.len(), init.y.len());
        AgentState {
            prev: init.clone(),
            cur: init,
            adam: adam.map(|p| AdamState::new(p, m1, m2)),
            rng_x: splitter.stream(agent as u64, StreamTag::GradX),
            rng_y: splitter.stream(agent as u64, StreamTag::GradY),
        }
    }

    /// Adaptation: compute the (possibly Adam-wrapped) same-sample
    /// optimistic update from the current history. Returns the
    /// intermediate pair (phi, psi) and does not touch the history.
    fn adapt(
        &mut self,
        oracle: &dyn ProblemOracle,
        agent: usize,
        mu_x: f64,
        mu_y: f64,
    ) -> AgentPair {
        let (gx, gy) = if mu_x == 0.0 && mu_y == 0.0 {
            (vec![0.0; self.cur.x.len()], vec![0.0; self.cur.y.len()])
        } else {
            let sx = oracle.draw_sample(agent, &mut self.rng_x);
            let sy = oracle.draw_sample(agent, &mut self.rng_y);
            ssog_direction(oracle, agent, &self.cur, &self.prev, &sx, &sy)
        };
        let (dx, dy) = match &mut self.adam {
            Some(adam) => adam.transform(&gx, &gy),
            None => (gx, gy),
        };
        let mut phi = self.cur.x.clone();
        linalg::axpy(-mu_x, &dx, &mut phi);
        let mut psi = self.cur.y.clone();
        linalg::axpy(mu_y, &dy, &mut psi);
        AgentPair { x: phi, y: psi }
    }

    fn shift_history(&mut self, next: AgentPair) {
        std::mem::swap(&mut self.prev, &mut self.cur);
        self.cur = next;
    }
}

/// All agents of a distributed run.
pub struct NetworkState {
    pub agents: Vec<AgentState>,
    pub iteration: u64,
}

impl NetworkState {
    /// History is initialized with the two stored pairs equal, so the first
    /// optimistic direction collapses to a plain stochastic gradient.
    pub fn new(init: Vec<AgentPair>, splitter: &SeedSplitter, adam: Option<AdamParams>) -> Self {
        let agents = init
            .into_iter()
            .enumerate()
            .map(|(k, pair)| AgentState::new(pair, k, splitter, adam))
            .collect();
        NetworkState {
            agents,
            iteration: 0,
        }
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    /// Perron-weighted centroid of the current iterates.
    pub fn centroid(&self, perron: &[f64]) -> AgentPair {
        let (m1, m2) = (self.agents[0].cur.x.len(), self.agents[0].cur.y.len());
        let mut c = AgentPair::zeros(m1, m2);
        for (state, &w) in self.agents.iter().zip(perron) {
            linalg::axpy(w, &state.cur.x, &mut c.x);
            linalg::axpy(w, &state.cur.y, &mut c.y);
        }
        c
    }

    /// Overwrites every agent's primal iterate (phase-2 broadcast).
    pub fn broadcast_x(&mut self, x: &[f64]) {
        for state in &mut self.agents {
            state.cur.x = x.to_vec();
            state.prev.x = x.to_vec();
        }
    }
}

/// One synchronous round of diffusion SS-OG (adapt-then-combine).
///
/// Every agent completes its adaptation before any combination, and the
/// combination applies A^T blockwise: x_k <- sum_{l in N_k} a_{lk} phi_l.
pub fn dss_og_round(
    net: &mut NetworkState,
    matrix: &CombinationMatrix,
    oracle: &dyn ProblemOracle,
    mu_x: f64,
    mu_y: f64,
) -> Result<()> {
    let k = net.num_agents();
    if matrix.num_agents() != k || oracle.num_agents() != k {
        return Err(Error::InvalidArgument(format!(
            "network has {k} agents but matrix has {} and problem has {}",
            matrix.num_agents(),
            oracle.num_agents()
        )));
    }
    // adaptation barrier
    let intermediate: Vec<AgentPair> = net
        .agents
        .iter_mut()
        .enumerate()
        .map(|(agent, state)| state.adapt(oracle, agent, mu_x, mu_y))
        .collect();
    // combination barrier
    for (kk, state) in net.agents.iter_mut().enumerate() {
        let col = matrix.column(kk);
        let mut x = vec![0.0; intermediate[0].x.len()];
        let mut y = vec![0.0; intermediate[0].y.len()];
        for (l, &a) in col.iter().enumerate() {
            if a != 0.0 {
                linalg::axpy(a, &intermediate[l].x, &mut x);
                linalg::axpy(a, &intermediate[l].y, &mut y);
            }
        }
        state.shift_history(AgentPair { x, y });
    }
    net.iteration += 1;
    Ok(())
}

/// Centralized optimizer state. `cur`/`prev` are the optimistic history;
/// `past_grad` stores the one-step-old stochastic gradients that S-OG and
/// S-PEG reuse verbatim (kept at full precision, never recomputed).
pub struct CentralState {
    pub cur: AgentPair,
    pub prev: AgentPair,
    past_grad: Option<(Vec<f64>, Vec<f64>)>,
    pub adam: Option<AdamState>,
    rng_x: ChaCha12Rng,
    rng_y: ChaCha12Rng,
    pub iteration: u64,
}

impl CentralState {
    pub fn new(init: AgentPair, splitter: &SeedSplitter, adam: Option<AdamParams>) -> Self {
        let (m1, m2) = (init.x.len(), init.y.len());
        CentralState {
            prev: init.clone(),
            cur: init,
            past_grad: None,
            adam: adam.map(|p| AdamState::new(p, m1, m2)),
            rng_x: splitter.stream(0, StreamTag::GradX),
            rng_y: splitter.stream(0, StreamTag::GradY),
            iteration: 0,
        }
    }

    fn draw(&mut self, oracle: &dyn ProblemOracle) -> (Sample, Sample) {
        let sx = oracle.draw_sample(0, &mut self.rng_x);
        let sy = oracle.draw_sample(0, &mut self.rng_y);
        (sx, sy)
    }

    /// Stored past gradient, initialized at the current pair on first use so
    /// that the first optimistic step collapses to a plain gradient step.
    fn past_grad_or_init(&mut self, oracle: &dyn ProblemOracle) -> (Vec<f64>, Vec<f64>) {
        if self.past_grad.is_none() {
            let sx = oracle.draw_sample(0, &mut self.rng_x);
            let sy = oracle.draw_sample(0, &mut self.rng_y);
            let gx = oracle.stoch_grad_x(0, &self.cur.x, &self.cur.y, &sx);
            let gy = oracle.stoch_grad_y(0, &self.cur.x, &self.cur.y, &sy);
            self.past_grad = Some((gx, gy));
        }
        self.past_grad.clone().unwrap()
    }
}

fn expect_single_agent(oracle: &dyn ProblemOracle) -> Result<()> {
    if oracle.num_agents() != 1 {
        return Err(Error::InvalidArgument(
            "centralized steps need a single-agent oracle; wrap multi-agent problems in FusionOracle"
                .into(),
        ));
    }
    Ok(())
}

/// Centralized same-sample optimistic gradient step (descent in x, ascent
/// in y, history shifted by one).
pub fn css_og_step(
    state: &mut CentralState,
    oracle: &dyn ProblemOracle,
    mu_x: f64,
    mu_y: f64,
) -> Result<()> {
    expect_single_agent(oracle)?;
    let (sx, sy) = state.draw(oracle);
    let (gx, gy) = ssog_direction(oracle, 0, &state.cur, &state.prev, &sx, &sy);
    let mut x = state.cur.x.clone();
    linalg::axpy(-mu_x, &gx, &mut x);
    let mut y = state.cur.y.clone();
    linalg::axpy(mu_y, &gy, &mut y);
    std::mem::swap(&mut state.prev, &mut state.cur);
    state.cur = AgentPair { x, y };
    state.iteration += 1;
    Ok(())
}

/// SS-OG direction fed through Adam moment estimation and bias correction.
pub fn adam_ssog_step(
    state: &mut CentralState,
    oracle: &dyn ProblemOracle,
    mu_x: f64,
    mu_y: f64,
) -> Result<()> {
    expect_single_agent(oracle)?;
    if state.adam.is_none() {
        return Err(Error::InvalidArgument(
            "adam step requires allocated moment buffers".into(),
        ));
    }
    let (sx, sy) = state.draw(oracle);
    let (gx, gy) = ssog_direction(oracle, 0, &state.cur, &state.prev, &sx, &sy);
    let (dx, dy) = state.adam.as_mut().unwrap().transform(&gx, &gy);
    let mut x = state.cur.x.clone();
    linalg::axpy(-mu_x, &dx, &mut x);
    let mut y = state.cur.y.clone();
    linalg::axpy(mu_y, &dy, &mut y);
    std::mem::swap(&mut state.prev, &mut state.cur);
    state.cur = AgentPair { x, y };
    state.iteration += 1;
    Ok(())
}

/// Stochastic optimistic gradient: fresh samples for the current point,
/// stored stochastic gradients for the past point.
pub fn sog_step(
    state: &mut CentralState,
    oracle: &dyn ProblemOracle,
    mu_x: f64,
    mu_y: f64,
) -> Result<()> {
    expect_single_agent(oracle)?;
    let (past_gx, past_gy) = state.past_grad_or_init(oracle);
    let (sx, sy) = state.draw(oracle);
    let gx_cur = oracle.stoch_grad_x(0, &state.cur.x, &state.cur.y, &sx);
    let gy_cur = oracle.stoch_grad_y(0, &state.cur.x, &state.cur.y, &sy);
    let mut x = state.cur.x.clone();
    for i in 0..x.len() {
        x[i] -= mu_x * (2.0 * gx_cur[i] - past_gx[i]);
    }
    let mut y = state.cur.y.clone();
    for i in 0..y.len() {
        y[i] += mu_y * (2.0 * gy_cur[i] - past_gy[i]);
    }
    state.past_grad = Some((gx_cur, gy_cur));
    std::mem::swap(&mut state.prev, &mut state.cur);
    state.cur = AgentPair { x, y };
    state.iteration += 1;
    Ok(())
}

/// Stochastic extragradient: gradient at the base point determines the
/// extrapolated point, a second oracle call there updates the base.
pub fn seg_step(
    state: &mut CentralState,
    oracle: &dyn ProblemOracle,
    mu_x: f64,
    mu_y: f64,
) -> Result<()> {
    expect_single_agent(oracle)?;
    let (sx_bar, sy_bar) = state.draw(oracle);
    let gx = oracle.stoch_grad_x(0, &state.cur.x, &state.cur.y, &sx_bar);
    let gy = oracle.stoch_grad_y(0, &state.cur.x, &state.cur.y, &sy_bar);
    let mut ex = state.cur.x.clone();
    linalg::axpy(-mu_x, &gx, &mut ex);
    let mut ey = state.cur.y.clone();
    linalg::axpy(mu_y, &gy, &mut ey);
    let (sx, sy) = state.draw(oracle);
    let gx2 = oracle.stoch_grad_x(0, &ex, &ey, &sx);
    let gy2 = oracle.stoch_grad_y(0, &ex, &ey, &sy);
    let mut x = state.cur.x.clone();
    linalg::axpy(-mu_x, &gx2, &mut x);
    let mut y = state.cur.y.clone();
    linalg::axpy(mu_y, &gy2, &mut y);
    std::mem::swap(&mut state.prev, &mut state.cur);
    state.cur = AgentPair { x, y };
    state.iteration += 1;
    Ok(())
}

/// Stochastic past extragradient: the stored past gradient extrapolates,
/// a fresh gradient at the extrapolated point updates the base and becomes
/// the stored gradient for the next step.
pub fn speg_step(
    state: &mut CentralState,
    oracle: &dyn ProblemOracle,
    mu_x: f64,
    mu_y: f64,
) -> Result<()> {
    expect_single_agent(oracle)?;
    let (past_gx, past_gy) = state.past_grad_or_init(oracle);
    let mut ex = state.cur.x.clone();
    linalg::axpy(-mu_x, &past_gx, &mut ex);
    let mut ey = state.cur.y.clone();
    linalg::axpy(mu_y, &past_gy, &mut ey);
    let (sx, sy) = state.draw(oracle);
    let gx = oracle.stoch_grad_x(0, &ex, &ey, &sx);
    let gy = oracle.stoch_grad_y(0, &ex, &ey, &sy);
    let mut x = state.cur.x.clone();
    linalg::axpy(-mu_x, &gx, &mut x);
    let mut y = state.cur.y.clone();
    linalg::axpy(mu_y, &gy, &mut y);
    state.past_grad = Some((gx, gy));
    std::mem::swap(&mut state.prev, &mut state.cur);
    state.cur = AgentPair { x, y };
    state.iteration += 1;
    Ok(())
}

/// Simultaneous gradient descent-ascent.
pub fn gda_step(
    state: &mut CentralState,
    oracle: &dyn ProblemOracle,
    mu_x: f64,
    mu_y: f64,
) -> Result<()> {
    expect_single_agent(oracle)?;
    let (sx, sy) = state.draw(oracle);
    let gx = oracle.stoch_grad_x(0, &state.cur.x, &state.cur.y, &sx);
    let gy = oracle.stoch_grad_y(0, &state.cur.x, &state.cur.y, &sy);
    let mut x = state.cur.x.clone();
    linalg::axpy(-mu_x, &gx, &mut x);
    let mut y = state.cur.y.clone();
    linalg::axpy(mu_y, &gy, &mut y);
    std::mem::swap(&mut state.prev, &mut state.cur);
    state.cur = AgentPair { x, y };
    state.iteration += 1;
    Ok(())
}

/// Alternating gradient descent-ascent: the dual update sees the already
/// updated primal iterate.
pub fn agda_step(
    state: &mut CentralState,
    oracle: &dyn ProblemOracle,
    mu_x: f64,
    mu_y: f64,
) -> Result<()> {
    expect_single_agent(oracle)?;
    let (sx, sy) = state.draw(oracle);
    let gx = oracle.stoch_grad_x(0, &state.cur.x, &state.cur.y, &sx);
    let mut x = state.cur.x.clone();
    linalg::axpy(-mu_x, &gx, &mut x);
    let gy = oracle.stoch_grad_y(0, &x, &state.cur.y, &sy);
    let mut y = state.cur.y.clone();
    linalg::axpy(mu_y, &gy, &mut y);
    std::mem::swap(&mut state.prev, &mut state.cur);
    state.cur = AgentPair { x, y };
    state.iteration += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{BilinearProblem, QuadraticConfig, QuadraticProblem};
    use crate::topology::{averaging_rule, build_ring};
    use std::sync::Mutex;

    fn quad_problem(noise: f64, k: usize) -> QuadraticProblem {
        let cfg = QuadraticConfig {
            m1: 3,
            m2: 2,
            num_agents: k,
            gamma: 1.0,
            noise_sigma2: noise,
            spread: 0.2,
            seed: 21,
            q_scale: 1.0,
            b_scale: 1.0,
        };
        QuadraticProblem::generate(&cfg, &vec![1.0 / k as f64; k]).unwrap()
    }

    fn pair(x: &[f64], y: &[f64]) -> AgentPair {
        AgentPair {
            x: x.to_vec(),
            y: y.to_vec(),
        }
    }

    #[test]
    fn direction_collapses_to_plain_gradient_when_history_coincides() {
        let p = BilinearProblem::new(2, 1.5, 0.0, 1);
        let splitter = SeedSplitter::new(1);
        let mut rng = splitter.stream(0, StreamTag::GradX);
        let cur = pair(&[1.0, -2.0], &[0.5, 0.25]);
        let sx = p.draw_sample(0, &mut rng);
        let sy = p.draw_sample(0, &mut rng);
        let (gx, gy) = ssog_direction(&p, 0, &cur, &cur.clone(), &sx, &sy);
        assert_eq!(gx, p.true_grad_x(0, &cur.x, &cur.y));
        assert_eq!(gy, p.true_grad_y(0, &cur.x, &cur.y));
    }

    #[test]
    fn direction_hand_value_on_bilinear() {
        // J = x y, current (1, 1), previous (0, 0): g_x = 2*1 - 0, g_y = 2*1 - 0
        let p = BilinearProblem::new(1, 1.0, 0.0, 1);
        let splitter = SeedSplitter::new(2);
        let mut rng = splitter.stream(0, StreamTag::GradX);
        let sx = p.draw_sample(0, &mut rng);
        let sy = p.draw_sample(0, &mut rng);
        let (gx, gy) = ssog_direction(
            &p,
            0,
            &pair(&[1.0], &[1.0]),
            &pair(&[0.0], &[0.0]),
            &sx,
            &sy,
        );
        assert_eq!(gx, vec![2.0]);
        assert_eq!(gy, vec![2.0]);
    }

    #[test]
    fn direction_unbiased_for_optimistic_target() {
        let p = quad_problem(0.4, 1);
        let cur = pair(&[0.4, -0.2, 1.0], &[0.3, -0.6]);
        let prev = pair(&[-0.1, 0.2, 0.5], &[0.8, 0.1]);
        let mut tx = p.true_grad_x(0, &cur.x, &cur.y);
        linalg::scale(2.0, &mut tx);
        linalg::axpy(-1.0, &p.true_grad_x(0, &prev.x, &prev.y), &mut tx);
        let n = 100_000;
        let splitter = SeedSplitter::new(3);
        let mut rng_x = splitter.stream(0, StreamTag::GradX);
        let mut rng_y = splitter.stream(0, StreamTag::GradY);
        let mut mean = vec![0.0; 3];
        for _ in 0..n {
            let sx = p.draw_sample(0, &mut rng_x);
            let sy = p.draw_sample(0, &mut rng_y);
            let (gx, _) = ssog_direction(&p, 0, &cur, &prev, &sx, &sy);
            linalg::axpy(1.0, &gx, &mut mean);
        }
        linalg::scale(1.0 / n as f64, &mut mean);
        // direction = target + current noise, so SE per component is the
        // noise component deviation over sqrt(n)
        let se = (p.constants().sigma_sq[0] / 3.0).sqrt() / (n as f64).sqrt();
        for (m, t) in mean.iter().zip(&tx) {
            assert!(
                (m - t).abs() <= 4.0 * se,
                "bias {} allowed {}",
                (m - t).abs(),
                4.0 * se
            );
        }
    }

    /// Counts oracle gradient evaluations by (tag, sample id).
    struct CountingOracle<'a> {
        inner: &'a QuadraticProblem,
        log: Mutex<Vec<(char, u64)>>,
    }

    impl ProblemOracle for CountingOracle<'_> {
        fn dims(&self) -> (usize, usize) {
            self.inner.dims()
        }
        fn num_agents(&self) -> usize {
            self.inner.num_agents()
        }
        fn weights(&self) -> &[f64] {
            self.inner.weights()
        }
        fn draw_sample(&self, agent: usize, rng: &mut ChaCha12Rng) -> Sample {
            self.inner.draw_sample(agent, rng)
        }
        fn stoch_grad_x(&self, agent: usize, x: &[f64], y: &[f64], s: &Sample) -> Vec<f64> {
            self.log.lock().unwrap().push(('x', s.id()));
            self.inner.stoch_grad_x(agent, x, y, s)
        }
        fn stoch_grad_y(&self, agent: usize, x: &[f64], y: &[f64], s: &Sample) -> Vec<f64> {
            self.log.lock().unwrap().push(('y', s.id()));
            self.inner.stoch_grad_y(agent, x, y, s)
        }
        fn true_grad_x(&self, agent: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
            self.inner.true_grad_x(agent, x, y)
        }
        fn true_grad_y(&self, agent: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
            self.inner.true_grad_y(agent, x, y)
        }
        fn global_risk(&self, x: &[f64], y: &[f64]) -> f64 {
            self.inner.global_risk(x, y)
        }
        fn constants(&self) -> crate::problems::ProblemConstants {
            self.inner.constants()
        }
        fn inner_max(&self, x: &[f64]) -> Option<(Vec<f64>, f64)> {
            self.inner.inner_max(x)
        }
        fn mc_loss(&self, agent: usize, x: &[f64], y: &[f64], n: usize, seed: u64) -> f64 {
            self.inner.mc_loss(agent, x, y, n, seed)
        }
    }

    #[test]
    fn same_sample_property_counted() {
        let q = quad_problem(0.3, 1);
        let oracle = CountingOracle {
            inner: &q,
            log: Mutex::new(Vec::new()),
        };
        let splitter = SeedSplitter::new(4);
        let mut rng_x = splitter.stream(0, StreamTag::GradX);
        let mut rng_y = splitter.stream(0, StreamTag::GradY);
        let sx = oracle.draw_sample(0, &mut rng_x);
        let sy = oracle.draw_sample(0, &mut rng_y);
        let cur = pair(&[1.0, 0.0, 0.0], &[0.0, 1.0]);
        let prev = pair(&[0.0, 1.0, 0.0], &[1.0, 0.0]);
        let _ = ssog_direction(&oracle, 0, &cur, &prev, &sx, &sy);
        let log = oracle.log.lock().unwrap();
        let xs: Vec<u64> = log
            .iter()
            .filter(|(t, _)| *t == 'x')
            .map(|(_, i)| *i)
            .collect();
        let ys: Vec<u64> = log
            .iter()
            .filter(|(t, _)| *t == 'y')
            .map(|(_, i)| *i)
            .collect();
        assert_eq!(xs.len(), 2);
        assert_eq!(ys.len(), 2);
        assert_eq!(xs[0], xs[1], "both x evaluations share one sample");
        assert_eq!(ys[0], ys[1], "both y evaluations share one sample");
        assert_ne!(xs[0], ys[0], "x and y updates use independent samples");
    }

    #[test]
    fn css_step_zero_gradients_leave_state_unchanged() {
        let p = BilinearProblem::new(2, 0.0, 0.0, 1);
        let splitter = SeedSplitter::new(5);
        let init = pair(&[0.3, -0.7], &[0.2, 0.9]);
        let mut state = CentralState::new(init.clone(), &splitter, None);
        css_og_step(&mut state, &p, 0.1, 0.1).unwrap();
        assert_eq!(state.cur, init);
        assert_eq!(state.iteration, 1);
    }

    #[test]
    fn css_step_hand_value_on_bilinear() {
        // from current = previous = (1, 1) with mu = 0.1: x = 0.9, y = 1.1
        let p = BilinearProblem::new(1, 1.0, 0.0, 1);
        let splitter = SeedSplitter::new(6);
        let mut state = CentralState::new(pair(&[1.0], &[1.0]), &splitter, None);
        css_og_step(&mut state, &p, 0.1, 0.1).unwrap();
        assert_eq!(state.cur.x, vec![0.9]);
        assert_eq!(state.cur.y, vec![1.1]);
    }

    #[test]
    fn css_converges_to_quadratic_saddle() {
        let p = quad_problem(0.0, 1);
        let (xs, ys) = p.saddle().unwrap();
        let splitter = SeedSplitter::new(7);
        let mut state = CentralState::new(pair(&[1.0, 1.0, 1.0], &[1.0, 1.0]), &splitter, None);
        let mut dist = f64::INFINITY;
        for i in 0..4000 {
            css_og_step(&mut state, &p, 0.05, 0.05).unwrap();
            let d = linalg::dist_sq(&state.cur.x, &xs) + linalg::dist_sq(&state.cur.y, &ys);
            if i > 200 {
                assert!(d <= dist * 1.0001, "distance must shrink after burn-in");
            }
            dist = d;
        }
        assert!(dist < 1e-12, "final squared distance {dist}");
    }

    #[test]
    fn dss_round_k1_bitwise_matches_css() {
        let p = quad_problem(0.5, 1);
        let a = averaging_rule(&build_ring(1).unwrap());
        let splitter = SeedSplitter::new(8);
        let init = pair(&[0.5, -0.5, 0.1], &[0.9, -0.3]);
        let mut net = NetworkState::new(vec![init.clone()], &splitter, None);
        let mut central = CentralState::new(init, &splitter, None);
        for _ in 0..1000 {
            dss_og_round(&mut net, &a, &p, 0.02, 0.03).unwrap();
            css_og_step(&mut central, &p, 0.02, 0.03).unwrap();
            assert_eq!(net.agents[0].cur, central.cur);
        }
    }

    #[test]
    fn dss_round_rejects_mismatched_sizes() {
        let p = quad_problem(0.0, 4);
        let a = averaging_rule(&build_ring(8).unwrap());
        let splitter = SeedSplitter::new(9);
        let init = vec![AgentPair::zeros(3, 2); 4];
        let mut net = NetworkState::new(init, &splitter, None);
        assert!(dss_og_round(&mut net, &a, &p, 0.1, 0.1).is_err());
    }

    #[test]
    fn collapse_all_methods_agree_in_deterministic_setting() {
        // equal history pairs, zero noise: SS-OG, S-OG and GDA take the
        // same step
        let p = quad_problem(0.0, 1);
        let init = pair(&[0.7, -0.4, 0.2], &[0.5, 0.5]);
        let splitter = SeedSplitter::new(10);
        let mut s1 = CentralState::new(init.clone(), &splitter, None);
        let mut s2 = CentralState::new(init.clone(), &splitter, None);
        let mut s3 = CentralState::new(init.clone(), &splitter, None);
        css_og_step(&mut s1, &p, 0.1, 0.2).unwrap();
        sog_step(&mut s2, &p, 0.1, 0.2).unwrap();
        gda_step(&mut s3, &p, 0.1, 0.2).unwrap();
        assert_eq!(s1.cur, s2.cur);
        assert_eq!(s1.cur, s3.cur);
    }

    #[test]
    fn seg_matches_classical_extragradient_without_noise() {
        let p = BilinearProblem::new(1, 1.0, 0.0, 1);
        let splitter = SeedSplitter::new(11);
        let mut state = CentralState::new(pair(&[1.0], &[1.0]), &splitter, None);
        seg_step(&mut state, &p, 0.1, 0.1).unwrap();
        // extrapolated point: (1 - 0.1, 1 + 0.1); update from the base with
        // gradients there: x = 1 - 0.1*1.1, y = 1 + 0.1*0.9
        assert!((state.cur.x[0] - (1.0 - 0.11)).abs() < 1e-15);
        assert!((state.cur.y[0] - (1.0 + 0.09)).abs() < 1e-15);
    }

    #[test]
    fn speg_first_step_matches_extragradient_then_reuses_gradients() {
        let p = BilinearProblem::new(1, 1.0, 0.0, 1);
        let splitter = SeedSplitter::new(12);
        let mut state = CentralState::new(pair(&[1.0], &[1.0]), &splitter, None);
        speg_step(&mut state, &p, 0.1, 0.1).unwrap();
        // stored gradient initializes at the base point, so the first step
        // coincides with S-EG
        assert!((state.cur.x[0] - 0.89).abs() < 1e-15);
        assert!((state.cur.y[0] - 1.09).abs() < 1e-15);
    }

    #[test]
    fn gda_diverges_and_optimistic_methods_converge_on_bilinear() {
        let p = BilinearProblem::new(1, 1.0, 0.0, 1);
        let splitter = SeedSplitter::new(13);
        let init = pair(&[1.0], &[1.0]);
        let norm0 = (linalg::norm_sq(&init.x) + linalg::norm_sq(&init.y)).sqrt();

        let mut gda = CentralState::new(init.clone(), &splitter, None);
        for _ in 0..200 {
            gda_step(&mut gda, &p, 0.1, 0.1).unwrap();
        }
        let gda_norm = (linalg::norm_sq(&gda.cur.x) + linalg::norm_sq(&gda.cur.y)).sqrt();
        assert!(gda_norm > norm0, "GDA must spiral outward");

        for step in [sog_step, css_og_step] {
            let mut s = CentralState::new(init.clone(), &splitter, None);
            for _ in 0..500 {
                step(&mut s, &p, 0.1, 0.1).unwrap();
            }
            let n = (linalg::norm_sq(&s.cur.x) + linalg::norm_sq(&s.cur.y)).sqrt();
            assert!(n < 0.1 * norm0, "optimistic norm {n} vs initial {norm0}");
        }
    }

    #[test]
    fn martingale_contrast_between_ssog_and_sog() {
        let p = quad_problem(0.5, 1);
        let sigma_sq = p.constants().sigma_sq[0];
        let prev = pair(&[0.2, -0.3, 0.4], &[0.1, -0.1]);
        let splitter = SeedSplitter::new(14);
        let mut rng = splitter.stream(0, StreamTag::GradX);
        let n = 100_000;
        let mut diff_sq_sum = 0.0;
        for _ in 0..n {
            // S-OG keeps the stored gradient (old sample); recomputing with
            // the fresh sample shifts it by the noise difference
            let s_old = p.draw_sample(0, &mut rng);
            let s_new = p.draw_sample(0, &mut rng);
            let stored = p.stoch_grad_x(0, &prev.x, &prev.y, &s_old);
            let recomputed = p.stoch_grad_x(0, &prev.x, &prev.y, &s_new);
            diff_sq_sum += linalg::dist_sq(&stored, &recomputed);
        }
        let mean_diff_sq = diff_sq_sum / n as f64;
        // E||n_new - n_old||^2 = 2 sigma^2; chi-square spread gives a
        // generous 4-sigma band around it
        let se = 2.0 * sigma_sq * (2.0 / (3.0 * n as f64)).sqrt() * 2.0;
        assert!(
            (mean_diff_sq - 2.0 * sigma_sq).abs() <= 4.0 * se,
            "stored-vs-recomputed variance {mean_diff_sq} vs 2 sigma^2 = {}",
            2.0 * sigma_sq
        );
    }

    #[test]
    fn adam_zero_direction_decays_moments_and_keeps_parameters() {
        let p = BilinearProblem::new(2, 0.0, 0.0, 1);
        let splitter = SeedSplitter::new(15);
        let init = pair(&[0.4, 0.4], &[0.2, 0.2]);
        let mut state = CentralState::new(init.clone(), &splitter, Some(AdamParams::default()));
        // seed the moments with one nonzero value, then feed zero directions
        state.adam.as_mut().unwrap().first_moment_x_mut()[0] = 1.0;
        for _ in 0..50 {
            adam_ssog_step(&mut state, &p, 0.0, 0.0).unwrap();
        }
        assert!(state.adam.as_ref().unwrap().first_moment_x()[0] < 0.01);
        assert_eq!(state.cur, init);
    }

    #[test]
    fn adam_zero_betas_reduce_to_rms_normalized_step() {
        let p = BilinearProblem::new(1, 1.0, 0.0, 1);
        let splitter = SeedSplitter::new(16);
        let params = AdamParams {
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 1e-8,
        };
        let mut state = CentralState::new(pair(&[1.0], &[1.0]), &splitter, Some(params));
        adam_ssog_step(&mut state, &p, 0.1, 0.1).unwrap();
        // direction = g / sqrt(g^2 + eps) with g = 1 for both variables
        let expect = 1.0 / (1.0f64 + 1e-8).sqrt();
        assert!((state.cur.x[0] - (1.0 - 0.1 * expect)).abs() < 1e-15);
        assert!((state.cur.y[0] - (1.0 + 0.1 * expect)).abs() < 1e-15);
    }

    #[test]
    fn adam_accepts_reported_momentum_factors() {
        let params = AdamParams {
            beta1: 0.2,
            beta2: 0.999,
            epsilon: 1e-8,
        };
        assert!(params.validate().is_ok());
        let bad = AdamParams {
            beta1: 1.0,
            ..params
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_gradient_round_is_pure_combination() {
        let p = BilinearProblem::new(2, 0.0, 0.0, 8);
        let graph = build_ring(8).unwrap();
        let a = averaging_rule(&graph);
        let info = crate::topology::perron_vector(&a).unwrap();
        let splitter = SeedSplitter::new(17);
        let mut rng = splitter.stream(99, StreamTag::Init);
        use rand::Rng;
        let init: Vec<AgentPair> = (0..8)
            .map(|_| AgentPair {
                x: (0..2).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
                y: (0..2).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
            })
            .collect();
        let mut net = NetworkState::new(init, &splitter, None);
        let before = net.centroid(&info.perron);
        for _ in 0..200 {
            dss_og_round(&mut net, &a, &p, 0.1, 0.1).unwrap();
        }
        let after = net.centroid(&info.perron);
        assert!(linalg::dist_sq(&before.x, &after.x).sqrt() < 1e-12);
        assert!(linalg::dist_sq(&before.y, &after.y).sqrt() < 1e-12);
    }
}
