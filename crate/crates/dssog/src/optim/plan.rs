//! Step-size planners.
//!
//! The two-time-scale plan evaluates the phase-1 step sizes
//!
//!   mu_y = min{ 1/nu, 2 L_f^2 / (nu beta1), (1 - j2) / sqrt(T), 1 }
//!   mu_x = min{ nu^2 mu_y / (6 L_f^2), 1/(2(L + L_f)), 1/(4L),
//!               mu_y / (4 tau3), 1/(2 sqrt(tau1 + beta1)), mu_y }
//!
//! with L = L_f + L_f^2/nu, tau1 = 80 L_f^4/nu^2, tau3 = 80 L_f^2/nu^2 and
//! beta1 = 96 K L_f^4/nu^2 + 48 K L_f^2. j2 is the squared norm of the
//! contracting Jordan factor of the combination matrix; the mixing rate
//! squared serves as its practical stand-in, and the coefficient of tau3 is
//! overridable because the derivation also admits the value 8.
//!
//! The phase-2 plan freezes the primal variable and refines the dual:
//! mu_x = 0, mu_y = min{ sqrt(nu / (12 K L_f^2)), (2T+1) / (nu (T+1)^2) }.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanPhase {
    One,
    Two,
}

/// Planned step sizes together with the constants they came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepPlan {
    pub mu_x: f64,
    pub mu_y: f64,
    /// Smoothness constant of the primal objective, L = L_f + L_f^2/nu.
    pub l: f64,
    pub tau1: f64,
    pub tau3: f64,
    pub beta1: f64,
    pub phase: PlanPhase,
}

fn default_tau3_coeff() -> f64 {
    80.0
}

/// Inputs of the phase-1 planner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanInputs {
    #[serde(rename = "L_f", alias = "l_f")]
    pub l_f: f64,
    pub nu: f64,
    #[serde(rename = "K")]
    pub num_agents: usize,
    /// Squared contraction norm of the network; defaults to mixing_rate^2
    /// at the call sites that know the topology. 0 for a single agent.
    #[serde(default)]
    pub jgamma_sq: f64,
    #[serde(rename = "T")]
    pub horizon: u64,
    #[serde(default = "default_tau3_coeff")]
    pub tau3_coeff: f64,
}

impl PlanInputs {
    pub fn new(l_f: f64, nu: f64, num_agents: usize, jgamma_sq: f64, horizon: u64) -> Self {
        PlanInputs {
            l_f,
            nu,
            num_agents,
            jgamma_sq,
            horizon,
            tau3_coeff: default_tau3_coeff(),
        }
    }
}

pub fn plan_theorem1(inp: &PlanInputs) -> Result<StepPlan> {
    if inp.l_f <= 0.0 || inp.nu <= 0.0 || inp.num_agents == 0 || inp.horizon == 0 {
        return Err(Error::InvalidArgument(
            "planner needs positive L_f, nu, K and T >= 1".into(),
        ));
    }
    if !(0.0..1.0).contains(&inp.jgamma_sq) {
        return Err(Error::InvalidArgument(
            "jgamma_sq must lie in [0, 1)".into(),
        ));
    }
    let lf = inp.l_f;
    let nu = inp.nu;
    let k = inp.num_agents as f64;
    let t = inp.horizon as f64;

    let l = lf + lf * lf / nu;
    let tau1 = 80.0 * lf.powi(4) / (nu * nu);
    let tau3 = inp.tau3_coeff * lf * lf / (nu * nu);
    let beta1 = 96.0 * k * lf.powi(4) / (nu * nu) + 48.0 * k * lf * lf;

    let mu_y = (1.0 / nu)
        .min(2.0 * lf * lf / (nu * beta1))
        .min((1.0 - inp.jgamma_sq) / t.sqrt())
        .min(1.0);
    let mu_x = (nu * nu * mu_y / (6.0 * lf * lf))
        .min(1.0 / (2.0 * (l + lf)))
        .min(1.0 / (4.0 * l))
        .min(mu_y / (4.0 * tau3))
        .min(1.0 / (2.0 * (tau1 + beta1).sqrt()))
        .min(mu_y);

    Ok(StepPlan {
        mu_x,
        mu_y,
        l,
        tau1,
        tau3,
        beta1,
        phase: PlanPhase::One,
    })
}

pub fn plan_theorem2(l_f: f64, nu: f64, num_agents: usize, horizon: u64) -> Result<StepPlan> {
    if l_f <= 0.0 || nu <= 0.0 || num_agents == 0 {
        return Err(Error::InvalidArgument(
            "planner needs positive L_f, nu and K".into(),
        ));
    }
    let k = num_agents as f64;
    let t = horizon as f64;
    let mu_y = (nu / (12.0 * k * l_f * l_f))
        .sqrt()
        .min((2.0 * t + 1.0) / (nu * (t + 1.0) * (t + 1.0)));
    let l = l_f + l_f * l_f / nu;
    Ok(StepPlan {
        mu_x: 0.0,
        mu_y,
        l,
        tau1: 80.0 * l_f.powi(4) / (nu * nu),
        tau3: 80.0 * l_f * l_f / (nu * nu),
        beta1: 96.0 * k * l_f.powi(4) / (nu * nu) + 48.0 * k * l_f * l_f,
        phase: PlanPhase::Two,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn theorem1_hand_derived_constants() {
        // independent arithmetic: L_f = 1, nu = 0.5, K = 8, j2 = 0.25, T = 1e4
        let plan = plan_theorem1(&PlanInputs::new(1.0, 0.5, 8, 0.25, 10_000)).unwrap();
        let beta1 = 96.0 * 8.0 * 1.0 / 0.25 + 48.0 * 8.0;
        assert_eq!(beta1, 3456.0);
        assert!((plan.beta1 - beta1).abs() <= 1e-12 * beta1);
        let mu_y = (2.0f64 / 1728.0).min(2.0).min(0.75 / 100.0).min(1.0);
        assert_eq!(mu_y, 2.0 / 1728.0);
        assert!((plan.mu_y - mu_y).abs() <= 1e-12 * mu_y);
        let tau3 = 80.0 * 1.0 / 0.25;
        assert_eq!(tau3, 320.0);
        assert!((plan.tau3 - tau3).abs() <= 1e-12 * tau3);
        // mu_x is governed by the mu_y / (4 tau3) branch
        let mu_x = mu_y / 1280.0;
        assert!((plan.mu_x - mu_x).abs() <= 1e-12 * mu_x);
        assert!((plan.mu_x - 9.042245370370371e-7).abs() < 1e-15);
    }

    #[test]
    fn theorem1_mu_y_nonincreasing_in_horizon() {
        let mut last = f64::INFINITY;
        for t in [10u64, 100, 1000, 10_000, 100_000, 1_000_000] {
            let plan = plan_theorem1(&PlanInputs::new(1.0, 0.5, 8, 0.25, t)).unwrap();
            assert!(plan.mu_y <= last);
            last = plan.mu_y;
        }
        // for small T the constant branch governs, for large T the
        // 1/sqrt(T) branch takes over
        let small = plan_theorem1(&PlanInputs::new(1.0, 0.5, 8, 0.25, 10)).unwrap();
        assert_eq!(small.mu_y, 2.0 / 1728.0);
        let big = plan_theorem1(&PlanInputs::new(1.0, 0.5, 8, 0.25, 1u64 << 40)).unwrap();
        assert_eq!(big.mu_y, 0.75 / ((1u64 << 40) as f64).sqrt());
    }

    #[test]
    fn theorem1_single_agent_centralized_plan() {
        let plan = plan_theorem1(&PlanInputs::new(1.0, 0.5, 1, 0.0, 10_000)).unwrap();
        // K = 1: beta1 = 96/0.25 + 48 = 432
        assert_eq!(plan.beta1, 432.0);
        assert_eq!(plan.mu_y, (2.0f64 / 216.0).min(0.01).min(1.0).min(2.0));
    }

    #[test]
    fn theorem1_rejects_bad_jgamma() {
        assert!(plan_theorem1(&PlanInputs::new(1.0, 0.5, 8, 1.0, 100)).is_err());
        assert!(plan_theorem1(&PlanInputs::new(1.0, 0.5, 8, -0.1, 100)).is_err());
    }

    #[test]
    fn theorem2_hand_values() {
        let plan = plan_theorem2(1.0, 0.5, 8, 10_000).unwrap();
        let cap = (0.5f64 / 96.0).sqrt();
        let sched = 20_001.0 / (0.5 * 10_001.0 * 10_001.0);
        assert_eq!(plan.mu_y, cap.min(sched));
        assert!((plan.mu_y - sched).abs() < 1e-18);
        assert!((plan.mu_y - 4.0e-4).abs() < 1e-7);
        assert_eq!(plan.mu_x, 0.0);
        assert_eq!(plan.phase, PlanPhase::Two);
    }

    #[test]
    fn theorem2_zero_horizon_uses_one_over_nu() {
        let plan = plan_theorem2(1.0, 0.5, 8, 0).unwrap();
        let cap = (0.5f64 / 96.0).sqrt();
        assert_eq!(plan.mu_y, cap.min(1.0 / 0.5));
    }

    #[test]
    fn theorem2_large_horizon_asymptote() {
        let t = 1_000_000u64;
        let plan = plan_theorem2(1.0, 0.5, 8, t).unwrap();
        let asymptote = 2.0 / (0.5 * t as f64);
        assert!((plan.mu_y / asymptote - 1.0).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn two_time_scale_holds(
            l_f in 0.05f64..50.0,
            nu_frac in 0.01f64..1.0,
            k in 1usize..64,
            j2 in 0.0f64..0.99,
            t in 1u64..1_000_000,
        ) {
            // nu <= L_f always holds for PL-smooth problems
            let nu = nu_frac * l_f;
            let plan = plan_theorem1(&PlanInputs::new(l_f, nu, k, j2, t)).unwrap();
            prop_assert!(plan.mu_x <= plan.mu_y);
            prop_assert!(plan.mu_x > 0.0);
        }
    }
}
