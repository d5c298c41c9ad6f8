//! Experiment configuration: the JSON schema the CLI and the simulator
//! share. One master seed drives every stream in a run; repeats derive
//! child seeds deterministically.

use crate::optim::{AdamParams, Algo};
use crate::problems::{
    BilinearProblem, ProblemOracle, QuadraticConfig, QuadraticProblem, Regularizer, Wgan1dConfig,
    Wgan1dProblem,
};
use crate::topology::{
    averaging_rule, build_random_connected, build_ring, CombinationMatrix, Graph,
};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum TopologySpec {
    Ring {
        #[serde(rename = "K")]
        k: usize,
    },
    Random {
        #[serde(rename = "K")]
        k: usize,
        edge_prob: f64,
        seed: u64,
    },
}

impl TopologySpec {
    pub fn num_agents(&self) -> usize {
        match self {
            TopologySpec::Ring { k } | TopologySpec::Random { k, .. } => *k,
        }
    }

    pub fn build(&self) -> Result<(Graph, CombinationMatrix)> {
        let graph = match self {
            TopologySpec::Ring { k } => build_ring(*k)?,
            TopologySpec::Random { k, edge_prob, seed } => {
                build_random_connected(*k, *edge_prob, *seed)?
            }
        };
        let matrix = averaging_rule(&graph);
        Ok((graph, matrix))
    }
}

fn default_one() -> usize {
    1
}

fn default_lambda() -> f64 {
    0.1
}

fn default_moment_samples() -> usize {
    1_000_000
}

fn default_q_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ProblemSpec {
    Quadratic {
        m1: usize,
        m2: usize,
        #[serde(rename = "K")]
        k: usize,
        gamma: f64,
        noise_sigma2: f64,
        spread: f64,
        seed: u64,
        #[serde(default = "default_q_scale")]
        q_scale: f64,
        #[serde(default = "default_q_scale")]
        b_scale: f64,
    },
    Bilinear {
        m: usize,
        scale: f64,
        #[serde(default)]
        noise_sigma2: f64,
        #[serde(rename = "K", default = "default_one")]
        k: usize,
    },
    Wgan1d {
        /// Shared data mean when `agents` is absent.
        #[serde(default)]
        pi: f64,
        /// Shared data variance when `agents` is absent.
        #[serde(default)]
        sigma2: f64,
        #[serde(rename = "K")]
        k: usize,
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default)]
        regularizer: Regularizer,
        /// Per-agent (pi_k, sigma_k^2) pairs overriding the uniform setting.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agents: Option<Vec<(f64, f64)>>,
        #[serde(default = "default_moment_samples")]
        moment_samples: usize,
        #[serde(default)]
        oracle_seed: u64,
    },
}

impl ProblemSpec {
    pub fn num_agents(&self) -> usize {
        match self {
            ProblemSpec::Quadratic { k, .. }
            | ProblemSpec::Bilinear { k, .. }
            | ProblemSpec::Wgan1d { k, .. } => *k,
        }
    }

    /// Instantiates the oracle with the network's Perron weights.
    pub fn build(&self, weights: &[f64]) -> Result<Box<dyn ProblemOracle>> {
        match self {
            ProblemSpec::Quadratic {
                m1,
                m2,
                k,
                gamma,
                noise_sigma2,
                spread,
                seed,
                q_scale,
                b_scale,
            } => {
                let cfg = QuadraticConfig {
                    m1: *m1,
                    m2: *m2,
                    num_agents: *k,
                    gamma: *gamma,
                    noise_sigma2: *noise_sigma2,
                    spread: *spread,
                    seed: *seed,
                    q_scale: *q_scale,
                    b_scale: *b_scale,
                };
                Ok(Box::new(QuadraticProblem::generate(&cfg, weights)?))
            }
            ProblemSpec::Bilinear {
                m,
                scale,
                noise_sigma2,
                k,
            } => Ok(Box::new(BilinearProblem::new(
                *m,
                *scale,
                *noise_sigma2,
                *k,
            ))),
            ProblemSpec::Wgan1d {
                pi,
                sigma2,
                k,
                lambda,
                regularizer,
                agents,
                moment_samples,
                oracle_seed,
            } => {
                let agent_list = agents.clone().unwrap_or_else(|| vec![(*pi, *sigma2); *k]);
                if agent_list.len() != *k {
                    return Err(Error::Config("wgan agent list must have K entries".into()));
                }
                let cfg = Wgan1dConfig {
                    agents: agent_list,
                    lambda: *lambda,
                    regularizer: *regularizer,
                    moment_samples: *moment_samples,
                    oracle_seed: *oracle_seed,
                };
                Ok(Box::new(Wgan1dProblem::new(&cfg, weights)?))
            }
        }
    }

    /// Per-agent (pi_k, sigma_k^2) targets when this is a generator-moment
    /// problem (drives the moment-MSE diagnostic).
    pub fn moment_targets(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            ProblemSpec::Wgan1d {
                pi,
                sigma2,
                k,
                agents,
                ..
            } => Some(agents.clone().unwrap_or_else(|| vec![(*pi, *sigma2); *k])),
            _ => None,
        }
    }
}

/// A step size: either fixed or delegated to a theorem planner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepChoice {
    Fixed(f64),
    Planned(PlannerName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerName {
    Theorem1,
    Theorem2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlgoSpec {
    pub algo: Algo,
    pub mu_x: StepChoice,
    pub mu_y: StepChoice,
    /// Dual step size of phase 2; defaults to the theorem-2 schedule for
    /// the configured phase-2 horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_y_phase2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamParams>,
    /// Override for the squared contraction factor fed to the planner;
    /// defaults to the measured mixing rate squared.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jgamma_sq: Option<f64>,
    /// Override for the tau3 coefficient (80 from the theorem statement,
    /// 8 from the derivation).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau3_coeff: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Zeros,
    #[default]
    Random,
    /// One shared random primal point with the dual started at its inner
    /// maximizer (zero initial dual gap). Requires a closed-form inner max.
    DualOptimal,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InitSpec {
    #[serde(default)]
    pub kind: InitKind,
    #[serde(default = "default_init_scale")]
    pub scale: f64,
}

fn default_init_scale() -> f64 {
    0.05
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            kind: InitKind::Random,
            scale: default_init_scale(),
        }
    }
}

/// How the primal variable freezes when phase 2 begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Phase2Freeze {
    /// Broadcast the best recorded centroid to every agent.
    #[default]
    CentroidBest,
    /// Keep each agent's own primal iterate; the combination step still
    /// mixes them toward consensus (the literal mu_x = 0 algorithm).
    PerAgentFrozen,
}

fn default_true() -> bool {
    true
}

fn default_mse_samples() -> usize {
    2000
}

/// Which diagnostics the trace records. The expensive ones (risk gradients
/// at the centroid, dual gap, generator moments) respect the cadence.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DiagFlags {
    #[serde(default = "default_true")]
    pub true_grads: bool,
    #[serde(default = "default_true")]
    pub dual_gap: bool,
    #[serde(default = "default_true")]
    pub stoch_grads: bool,
    #[serde(default = "default_true")]
    pub moments: bool,
    #[serde(default = "default_mse_samples")]
    pub moment_mse_samples: usize,
}

impl Default for DiagFlags {
    fn default() -> Self {
        DiagFlags {
            true_grads: true,
            dual_gap: true,
            stoch_grads: true,
            moments: true,
            moment_mse_samples: default_mse_samples(),
        }
    }
}

fn default_cadence() -> usize {
    10
}

fn default_repeats() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub topology: TopologySpec,
    pub algorithm: AlgoSpec,
    /// Phase-1 rounds.
    #[serde(rename = "T")]
    pub t_phase1: u64,
    /// Phase-2 rounds (0 disables phase 2).
    #[serde(rename = "T1", default)]
    pub t_phase2: u64,
    pub seed: u64,
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    #[serde(default = "default_repeats")]
    pub n_repeats: usize,
    #[serde(default)]
    pub phase2_x: Phase2Freeze,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub diagnostics: DiagFlags,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_phase1 == 0 && self.t_phase2 == 0 {
            return Err(Error::Config("experiment needs at least one round".into()));
        }
        if self.cadence == 0 {
            return Err(Error::Config("cadence must be at least 1".into()));
        }
        if self.n_repeats == 0 {
            return Err(Error::Config("n_repeats must be at least 1".into()));
        }
        if self.topology.num_agents() != self.problem.num_agents() {
            return Err(Error::Config(format!(
                "topology has {} agents but the problem has {}",
                self.topology.num_agents(),
                self.problem.num_agents()
            )));
        }
        if let Some(adam) = &self.algorithm.adam {
            adam.validate()?;
        }
        if matches!(self.algorithm.algo, Algo::AdamDssOg) && self.algorithm.adam.is_none() {
            return Err(Error::Config("adam-dss-og requires adam parameters".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_config() -> ExperimentConfig {
        ExperimentConfig {
            problem: ProblemSpec::Quadratic {
                m1: 2,
                m2: 2,
                k: 8,
                gamma: 1.0,
                noise_sigma2: 0.01,
                spread: 0.2,
                seed: 3,
                q_scale: 1.0,
                b_scale: 1.0,
            },
            topology: TopologySpec::Ring { k: 8 },
            algorithm: AlgoSpec {
                algo: Algo::DssOg,
                mu_x: StepChoice::Fixed(0.05),
                mu_y: StepChoice::Planned(PlannerName::Theorem1),
                mu_y_phase2: None,
                adam: None,
                jgamma_sq: None,
                tau3_coeff: None,
            },
            t_phase1: 100,
            t_phase2: 0,
            seed: 7,
            cadence: 10,
            n_repeats: 2,
            phase2_x: Phase2Freeze::default(),
            init: InitSpec::default(),
            diagnostics: DiagFlags::default(),
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = sample_config();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let parsed: ExperimentConfig = serde_json::from_str(&json).unwrap();
        let json2 = serde_json::to_string_pretty(&parsed).unwrap();
        assert_eq!(json, json2);
    }

    #[test]
    fn step_choice_accepts_number_or_name() {
        let fixed: StepChoice = serde_json::from_str("0.25").unwrap();
        assert_eq!(fixed, StepChoice::Fixed(0.25));
        let planned: StepChoice = serde_json::from_str("\"theorem1\"").unwrap();
        assert_eq!(planned, StepChoice::Planned(PlannerName::Theorem1));
    }

    #[test]
    fn wgan_preset_schema_accepted() {
        let json = r#"{"type": "wgan1d", "pi": 0.0, "sigma2": 0.001, "lambda": 0.1, "K": 8}"#;
        let spec: ProblemSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.num_agents(), 8);
        assert_eq!(spec.moment_targets().unwrap().len(), 8);
    }

    #[test]
    fn mismatched_agent_counts_rejected() {
        let mut cfg = sample_config();
        cfg.topology = TopologySpec::Ring { k: 4 };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn algo_names_match_schema() {
        assert_eq!(serde_json::to_string(&Algo::DssOg).unwrap(), "\"dss-og\"");
        assert_eq!(
            serde_json::to_string(&Algo::AdamDssOg).unwrap(),
            "\"adam-dss-og\""
        );
        let parsed: Algo = serde_json::from_str("\"s-peg\"").unwrap();
        assert_eq!(parsed, Algo::SPeg);
    }
}
