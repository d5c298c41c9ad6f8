//! Experiment runner and diagnostics.
//!
//! A run executes (problem, topology, algorithm) for T phase-1 rounds and
//! optionally T1 phase-2 rounds with the primal variable frozen and the
//! dual refined at the theorem-2 step size. Each trace record carries the
//! quantities the convergence bounds are stated in terms of: risk-gradient
//! norms at the Perron-weighted centroid, the primal-objective gradient
//! where an inner maximizer exists, the dual optimality gap, the network
//! deviation and the iterate increment, plus the per-agent stochastic
//! gradient norms and (for generator problems) the moment mean-square
//! error against the data distribution.
//!
//! Phase 1 records the state before a round at iterations 0, c, 2c, ...
//! (matching the best-iterate criterion, an infimum over pre-step
//! iterates); phase 2 records after the round, since its guarantee is
//! about the last iterate. Expectation-level statements are approximated
//! by averaging traces over independent seeded repeats.

use crate::config::{DiagFlags, ExperimentConfig, Phase2Freeze, PlannerName, StepChoice};
use crate::linalg;
use crate::optim::{
    adam_ssog_step, agda_step, css_og_step, dss_og_round, gda_step, plan_theorem1, plan_theorem2,
    seg_step, sog_step, speg_step, AgentPair, Algo, CentralState, NetworkState, PlanInputs,
};
use crate::problems::{estimate_generator_moments, FusionOracle, ProblemOracle};
use crate::rng::{SeedSplitter, StreamTag};
use crate::topology::{perron_vector, CombinationMatrix, SpectralInfo};
use crate::{Error, Result};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One iteration's diagnostics. Fields that are disabled or undefined for
/// the problem at hand are `None` and left empty in the CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: u64,
    pub phase: u8,
    pub centroid_x: Vec<f64>,
    pub centroid_y: Vec<f64>,
    pub grad_x_sq: Option<f64>,
    pub grad_y_sq: Option<f64>,
    pub grad_p_sq: Option<f64>,
    pub net_dev: f64,
    pub increment: f64,
    pub dual_gap: Option<f64>,
    pub stoch_grad_avg: Option<f64>,
    /// (1/K) sum_k (pi_hat - pi_k)^2 + (sigma_hat - sigma_k)^2, with the
    /// second term on standard deviations.
    pub moment_mse: Option<f64>,
    /// Same with variances in the second term.
    pub moment_mse_var: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TimeAverages {
    pub grad_x_sq: Option<f64>,
    pub grad_y_sq: Option<f64>,
    pub grad_p_sq: Option<f64>,
    pub net_dev: Option<f64>,
    pub increment: Option<f64>,
    pub dual_gap: Option<f64>,
    pub stoch_grad_avg: Option<f64>,
    pub moment_mse: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub best_iteration: u64,
    pub best_trace_index: usize,
    pub best_value: f64,
    pub best_metric: String,
    pub final_dual_gap: Option<f64>,
    pub final_moment_mse: Option<f64>,
    pub final_moment_mse_var: Option<f64>,
    /// Averages over the phase-1 records.
    pub time_avg: TimeAverages,
    pub mu_x: f64,
    pub mu_y: f64,
    pub mu_y_phase2: Option<f64>,
    pub phase1_rounds: u64,
    pub phase2_rounds: u64,
    pub n_repeats: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub trace: Vec<TraceRecord>,
    pub summary: Summary,
}

/// Metric selector for the best-iterate rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BestMetric {
    GradPSq,
    GradXSq,
    DualGap,
}

/// Index (into the trace) and value of the minimizing record, ties broken
/// by the smallest index.
pub fn best_iterate(trace: &[TraceRecord], metric: BestMetric) -> Result<(usize, f64)> {
    let get = |r: &TraceRecord| match metric {
        BestMetric::GradPSq => r.grad_p_sq,
        BestMetric::GradXSq => r.grad_x_sq,
        BestMetric::DualGap => r.dual_gap,
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in trace.iter().enumerate() {
        let v = get(r).ok_or_else(|| {
            Error::InvalidArgument(format!("trace record {i} lacks the requested metric"))
        })?;
        if best.map(|(_, bv)| v < bv).unwrap_or(true) {
            best = Some((i, v));
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("empty trace".into()))
}

/// Dual optimality gap P(x) - J(x, y), clamped to zero within -1e-10.
///
/// Uses the closed-form inner maximizer when the problem has one and falls
/// back to gradient ascent at step 1/L_f otherwise; non-convergence of the
/// ascent (e.g. an unbounded dual) is a diagnostic error.
pub fn dual_gap(problem: &dyn ProblemOracle, x: &[f64], y: &[f64]) -> Result<f64> {
    let p = match problem.inner_max(x) {
        Some((_, p)) => p,
        None => {
            let c = problem.constants();
            if c.l_f <= 0.0 {
                return Err(Error::Diagnostic(
                    "cannot run inner ascent without L_f".into(),
                ));
            }
            let step = 1.0 / c.l_f;
            let mut yy = y.to_vec();
            let mut converged = false;
            for _ in 0..100_000 {
                let g = problem.global_grad_y(x, &yy);
                if linalg::norm(&g) <= 1e-9 {
                    converged = true;
                    break;
                }
                linalg::axpy(step, &g, &mut yy);
                if !yy.iter().all(|v| v.is_finite()) {
                    break;
                }
            }
            if !converged {
                return Err(Error::Diagnostic(
                    "inner-max ascent did not converge; the dual may be unbounded".into(),
                ));
            }
            problem.global_risk(x, &yy)
        }
    };
    let gap = p - problem.global_risk(x, y);
    if gap < 0.0 && gap >= -1e-10 {
        Ok(0.0)
    } else {
        Ok(gap)
    }
}

struct ResolvedSteps {
    mu_x: f64,
    mu_y: f64,
    mu_y_phase2: Option<f64>,
}

fn resolve_steps(
    cfg: &ExperimentConfig,
    problem: &dyn ProblemOracle,
    spectral: &SpectralInfo,
) -> Result<ResolvedSteps> {
    let needs_plan = |c: &StepChoice| matches!(c, StepChoice::Planned(_));
    let mut plan1 = None;
    let mut plan2 = None;
    if needs_plan(&cfg.algorithm.mu_x) || needs_plan(&cfg.algorithm.mu_y) {
        let consts = problem.constants();
        let nu = consts.nu.ok_or_else(|| {
            Error::Config("planned step sizes need a problem with a declared PL constant".into())
        })?;
        let jgamma_sq = cfg
            .algorithm
            .jgamma_sq
            .unwrap_or(spectral.mixing_rate * spectral.mixing_rate);
        let mut inputs = PlanInputs::new(
            consts.l_f,
            nu,
            problem.num_agents(),
            jgamma_sq,
            cfg.t_phase1.max(1),
        );
        if let Some(coeff) = cfg.algorithm.tau3_coeff {
            inputs.tau3_coeff = coeff;
        }
        plan1 = Some(plan_theorem1(&inputs)?);
        plan2 = Some(plan_theorem2(
            consts.l_f,
            nu,
            problem.num_agents(),
            cfg.t_phase1.max(1),
        )?);
    }
    let pick = |choice: &StepChoice, is_x: bool| -> f64 {
        match choice {
            StepChoice::Fixed(v) => *v,
            StepChoice::Planned(PlannerName::Theorem1) => {
                let p = plan1.as_ref().expect("plan resolved");
                if is_x {
                    p.mu_x
                } else {
                    p.mu_y
                }
            }
            StepChoice::Planned(PlannerName::Theorem2) => {
                let p = plan2.as_ref().expect("plan resolved");
                if is_x {
                    p.mu_x
                } else {
                    p.mu_y
                }
            }
        }
    };
    let mu_x = pick(&cfg.algorithm.mu_x, true);
    let mu_y = pick(&cfg.algorithm.mu_y, false);
    let mut mu_y_phase2 = cfg.algorithm.mu_y_phase2;
    if cfg.t_phase2 > 0 && mu_y_phase2.is_none() {
        let consts = problem.constants();
        let nu = consts.nu.ok_or_else(|| {
            Error::Config("phase 2 needs either mu_y_phase2 or a declared PL constant".into())
        })?;
        mu_y_phase2 = Some(plan_theorem2(consts.l_f, nu, problem.num_agents(), cfg.t_phase2)?.mu_y);
    }
    Ok(ResolvedSteps {
        mu_x,
        mu_y,
        mu_y_phase2,
    })
}

fn init_pairs(
    cfg: &ExperimentConfig,
    problem: &dyn ProblemOracle,
    splitter: &SeedSplitter,
    m1: usize,
    m2: usize,
) -> Result<Vec<AgentPair>> {
    let k = cfg.problem.num_agents();
    let normal = StandardNormal;
    let gaussian = |rng: &mut ChaCha12Rng, n: usize, scale: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let v: f64 = normal.sample(rng);
                v * scale
            })
            .collect()
    };
    match cfg.init.kind {
        crate::config::InitKind::Zeros => Ok(vec![AgentPair::zeros(m1, m2); k]),
        crate::config::InitKind::Random => Ok((0..k)
            .map(|agent| {
                let mut rng = splitter.stream(agent as u64, StreamTag::Init);
                AgentPair {
                    x: gaussian(&mut rng, m1, cfg.init.scale),
                    y: gaussian(&mut rng, m2, cfg.init.scale),
                }
            })
            .collect()),
        crate::config::InitKind::DualOptimal => {
            let mut rng = splitter.stream(0, StreamTag::Init);
            let x = gaussian(&mut rng, m1, cfg.init.scale);
            let (y, _) = problem.inner_max(&x).ok_or_else(|| {
                Error::Config("dual_optimal init needs a closed-form inner max".into())
            })?;
            Ok(vec![AgentPair { x, y }; k])
        }
    }
}

/// Everything a record needs about the current state.
struct Snapshot {
    pairs: Vec<AgentPair>,
    centroid: AgentPair,
}

impl Snapshot {
    fn of_network(net: &NetworkState, perron: &[f64]) -> Self {
        Snapshot {
            pairs: net.agents.iter().map(|a| a.cur.clone()).collect(),
            centroid: net.centroid(perron),
        }
    }

    fn of_central(state: &CentralState, inner_agents: usize) -> Self {
        Snapshot {
            pairs: vec![state.cur.clone(); inner_agents],
            centroid: state.cur.clone(),
        }
    }
}

struct Diagnostics<'a> {
    problem: &'a dyn ProblemOracle,
    flags: DiagFlags,
    moment_targets: Option<Vec<(f64, f64)>>,
}

impl Diagnostics<'_> {
    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        iteration: u64,
        phase: u8,
        snap: &Snapshot,
        last: &Snapshot,
        rng: &mut ChaCha12Rng,
    ) -> TraceRecord {
        let c = &snap.centroid;
        let mut net_dev = 0.0;
        for p in &snap.pairs {
            net_dev += linalg::dist_sq(&p.x, &c.x) + linalg::dist_sq(&p.y, &c.y);
        }
        let mut increment = 0.0;
        for (p, q) in snap.pairs.iter().zip(&last.pairs) {
            increment += linalg::dist_sq(&p.x, &q.x) + linalg::dist_sq(&p.y, &q.y);
        }
        let (mut grad_x_sq, mut grad_y_sq, mut grad_p_sq) = (None, None, None);
        if self.flags.true_grads {
            grad_x_sq = Some(linalg::norm_sq(&self.problem.global_grad_x(&c.x, &c.y)));
            grad_y_sq = Some(linalg::norm_sq(&self.problem.global_grad_y(&c.x, &c.y)));
            if let Some((y_opt, _)) = self.problem.inner_max(&c.x) {
                grad_p_sq = Some(linalg::norm_sq(&self.problem.global_grad_x(&c.x, &y_opt)));
            }
        }
        let mut gap = None;
        if self.flags.dual_gap {
            if let Some((_, p)) = self.problem.inner_max(&c.x) {
                let g = p - self.problem.global_risk(&c.x, &c.y);
                gap = Some(if g < 0.0 && g >= -1e-10 { 0.0 } else { g });
            }
        }
        let mut stoch_grad_avg = None;
        if self.flags.stoch_grads {
            let k = snap.pairs.len();
            let mut acc = 0.0;
            for (agent, pair) in snap.pairs.iter().enumerate() {
                let sx = self.problem.draw_sample(agent, rng);
                let sy = self.problem.draw_sample(agent, rng);
                acc += linalg::norm(&self.problem.stoch_grad_x(agent, &pair.x, &pair.y, &sx));
                acc += linalg::norm(&self.problem.stoch_grad_y(agent, &pair.x, &pair.y, &sy));
            }
            stoch_grad_avg = Some(acc / k as f64);
        }
        let (mut moment_mse, mut moment_mse_var) = (None, None);
        if self.flags.moments {
            if let Some(targets) = &self.moment_targets {
                let k = snap.pairs.len();
                let mut acc_std = 0.0;
                let mut acc_var = 0.0;
                for (pair, &(pi, s2)) in snap.pairs.iter().zip(targets) {
                    let (pi_hat, var_hat) =
                        estimate_generator_moments(&pair.x, self.flags.moment_mse_samples, rng)
                            .expect("moment sample count validated");
                    acc_std += (pi_hat - pi).powi(2) + (var_hat.sqrt() - s2.sqrt()).powi(2);
                    acc_var += (pi_hat - pi).powi(2) + (var_hat - s2).powi(2);
                }
                moment_mse = Some(acc_std / k as f64);
                moment_mse_var = Some(acc_var / k as f64);
            }
        }
        TraceRecord {
            iteration,
            phase,
            centroid_x: c.x.clone(),
            centroid_y: c.y.clone(),
            grad_x_sq,
            grad_y_sq,
            grad_p_sq,
            net_dev,
            increment,
            dual_gap: gap,
            stoch_grad_avg,
            moment_mse,
            moment_mse_var,
        }
    }
}

type CentralStep = fn(&mut CentralState, &dyn ProblemOracle, f64, f64) -> Result<()>;

fn central_step_fn(algo: Algo) -> CentralStep {
    match algo {
        Algo::CssOg => css_og_step,
        Algo::SOg => sog_step,
        Algo::SEg => seg_step,
        Algo::SPeg => speg_step,
        Algo::Gda => gda_step,
        Algo::Agda => agda_step,
        Algo::AdamDssOg | Algo::DssOg => unreachable!("distributed algorithms"),
    }
}

fn run_single(
    cfg: &ExperimentConfig,
    problem: &dyn ProblemOracle,
    matrix: &CombinationMatrix,
    spectral: &SpectralInfo,
    steps: &ResolvedSteps,
    repeat: u64,
) -> Result<Vec<TraceRecord>> {
    let splitter = SeedSplitter::new(cfg.seed).repeat(repeat);
    let mut diag_rng = splitter.stream(u64::MAX, StreamTag::Diag);
    let (m1, m2) = problem.dims();
    let init = init_pairs(cfg, problem, &splitter, m1, m2)?;
    let diag = Diagnostics {
        problem,
        flags: cfg.diagnostics,
        moment_targets: cfg.problem.moment_targets(),
    };
    let cadence = cfg.cadence as u64;
    let mut records = Vec::new();

    if cfg.algorithm.algo.is_distributed() {
        let mut net = NetworkState::new(init, &splitter, cfg.algorithm.adam);
        let mut last = Snapshot::of_network(&net, &spectral.perron);
        for i in 0..cfg.t_phase1 {
            let snap = Snapshot::of_network(&net, &spectral.perron);
            if i % cadence == 0 {
                records.push(diag.record(i, 1, &snap, &last, &mut diag_rng));
            }
            last = snap;
            dss_og_round(&mut net, matrix, problem, steps.mu_x, steps.mu_y)?;
        }
        if cfg.t_phase2 > 0 {
            let mu_y2 = steps.mu_y_phase2.expect("phase-2 step resolved");
            if cfg.phase2_x == Phase2Freeze::CentroidBest {
                let x_star = best_phase1_x(&records, &net, &spectral.perron);
                net.broadcast_x(&x_star);
            }
            last = Snapshot::of_network(&net, &spectral.perron);
            for j in 1..=cfg.t_phase2 {
                dss_og_round(&mut net, matrix, problem, 0.0, mu_y2)?;
                let snap = Snapshot::of_network(&net, &spectral.perron);
                if j % cadence == 0 || j == cfg.t_phase2 {
                    records.push(diag.record(cfg.t_phase1 + j, 2, &snap, &last, &mut diag_rng));
                }
                last = snap;
            }
        }
    } else {
        let fusion;
        let oracle: &dyn ProblemOracle = if problem.num_agents() == 1 {
            problem
        } else {
            fusion = FusionOracle::new(problem);
            &fusion
        };
        let inner_agents = problem.num_agents();
        let step = central_step_fn(cfg.algorithm.algo);
        let stepper: CentralStep = if cfg.algorithm.algo == Algo::AdamDssOg {
            adam_ssog_step
        } else {
            step
        };
        // centralized runs start from the weighted mean of the per-agent
        // initializations so seeds stay comparable across K
        let mut pair0 = AgentPair::zeros(m1, m2);
        for (p, &w) in init.iter().zip(problem.weights()) {
            linalg::axpy(w, &p.x, &mut pair0.x);
            linalg::axpy(w, &p.y, &mut pair0.y);
        }
        let mut state = CentralState::new(pair0, &splitter, cfg.algorithm.adam);
        let mut last = Snapshot::of_central(&state, inner_agents);
        for i in 0..cfg.t_phase1 {
            let snap = Snapshot::of_central(&state, inner_agents);
            if i % cadence == 0 {
                records.push(diag.record(i, 1, &snap, &last, &mut diag_rng));
            }
            last = snap;
            stepper(&mut state, oracle, steps.mu_x, steps.mu_y)?;
        }
        if cfg.t_phase2 > 0 {
            let mu_y2 = steps.mu_y_phase2.expect("phase-2 step resolved");
            if cfg.phase2_x == Phase2Freeze::CentroidBest {
                if let Ok((idx, _)) = phase1_best(&records) {
                    state.cur.x = records[idx].centroid_x.clone();
                    state.prev.x = records[idx].centroid_x.clone();
                }
            }
            last = Snapshot::of_central(&state, inner_agents);
            for j in 1..=cfg.t_phase2 {
                stepper(&mut state, oracle, 0.0, mu_y2)?;
                let snap = Snapshot::of_central(&state, inner_agents);
                if j % cadence == 0 || j == cfg.t_phase2 {
                    records.push(diag.record(cfg.t_phase1 + j, 2, &snap, &last, &mut diag_rng));
                }
                last = snap;
            }
        }
    }
    Ok(records)
}

/// Best phase-1 record by primal-gradient metric (the best-iterate rule is
/// an infimum over the pre-step phase-1 iterates). Returns the index into
/// the full trace.
fn phase1_best(records: &[TraceRecord]) -> Result<(usize, f64)> {
    let phase1: Vec<(usize, &TraceRecord)> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.phase == 1)
        .collect();
    if phase1.is_empty() {
        return Err(Error::Diagnostic("no phase-1 records".into()));
    }
    for metric in [BestMetric::GradPSq, BestMetric::GradXSq] {
        let get = |r: &TraceRecord| match metric {
            BestMetric::GradPSq => r.grad_p_sq,
            BestMetric::GradXSq => r.grad_x_sq,
            BestMetric::DualGap => r.dual_gap,
        };
        if phase1.iter().all(|(_, r)| get(r).is_some()) {
            let mut best = (phase1[0].0, get(phase1[0].1).unwrap());
            for (idx, r) in &phase1 {
                let v = get(r).unwrap();
                if v < best.1 {
                    best = (*idx, v);
                }
            }
            return Ok(best);
        }
    }
    Err(Error::Diagnostic(
        "no recorded metric for the best iterate".into(),
    ))
}

fn best_phase1_x(records: &[TraceRecord], net: &NetworkState, perron: &[f64]) -> Vec<f64> {
    match phase1_best(records) {
        Ok((idx, _)) => records[idx].centroid_x.clone(),
        Err(_) => net.centroid(perron).x,
    }
}

fn average_traces(traces: Vec<Vec<TraceRecord>>) -> Vec<TraceRecord> {
    let n = traces.len();
    if n == 1 {
        return traces.into_iter().next().unwrap();
    }
    let len = traces[0].len();
    let inv = 1.0 / n as f64;
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let mut rec = traces[0][i].clone();
        let avg_opt = |get: &dyn Fn(&TraceRecord) -> Option<f64>| -> Option<f64> {
            get(&traces[0][i])?;
            let mut acc = 0.0;
            for t in &traces {
                acc += get(&t[i])?;
            }
            Some(acc * inv)
        };
        rec.grad_x_sq = avg_opt(&|r| r.grad_x_sq);
        rec.grad_y_sq = avg_opt(&|r| r.grad_y_sq);
        rec.grad_p_sq = avg_opt(&|r| r.grad_p_sq);
        rec.dual_gap = avg_opt(&|r| r.dual_gap);
        rec.stoch_grad_avg = avg_opt(&|r| r.stoch_grad_avg);
        rec.moment_mse = avg_opt(&|r| r.moment_mse);
        rec.moment_mse_var = avg_opt(&|r| r.moment_mse_var);
        rec.net_dev = traces.iter().map(|t| t[i].net_dev).sum::<f64>() * inv;
        rec.increment = traces.iter().map(|t| t[i].increment).sum::<f64>() * inv;
        for d in 0..rec.centroid_x.len() {
            rec.centroid_x[d] = traces.iter().map(|t| t[i].centroid_x[d]).sum::<f64>() * inv;
        }
        for d in 0..rec.centroid_y.len() {
            rec.centroid_y[d] = traces.iter().map(|t| t[i].centroid_y[d]).sum::<f64>() * inv;
        }
        out.push(rec);
    }
    out
}

fn time_average(records: &[TraceRecord]) -> TimeAverages {
    let phase1: Vec<&TraceRecord> = records.iter().filter(|r| r.phase == 1).collect();
    if phase1.is_empty() {
        return TimeAverages::default();
    }
    let n = phase1.len() as f64;
    let avg_opt = |get: &dyn Fn(&TraceRecord) -> Option<f64>| -> Option<f64> {
        let mut acc = 0.0;
        for r in &phase1 {
            acc += get(r)?;
        }
        Some(acc / n)
    };
    TimeAverages {
        grad_x_sq: avg_opt(&|r| r.grad_x_sq),
        grad_y_sq: avg_opt(&|r| r.grad_y_sq),
        grad_p_sq: avg_opt(&|r| r.grad_p_sq),
        net_dev: Some(phase1.iter().map(|r| r.net_dev).sum::<f64>() / n),
        increment: Some(phase1.iter().map(|r| r.increment).sum::<f64>() / n),
        dual_gap: avg_opt(&|r| r.dual_gap),
        stoch_grad_avg: avg_opt(&|r| r.stoch_grad_avg),
        moment_mse: avg_opt(&|r| r.moment_mse),
    }
}

/// Runs the experiment: phase 1 with the configured step sizes, then an
/// optional phase 2 with the primal frozen at the best recorded centroid
/// (or per agent) and the dual refined. Metrics are averaged over
/// `n_repeats` independent seeds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let (_, matrix) = cfg.topology.build()?;
    let spectral = perron_vector(&matrix)?;
    let problem = cfg.problem.build(&spectral.perron)?;
    let steps = resolve_steps(cfg, problem.as_ref(), &spectral)?;

    let traces: Result<Vec<Vec<TraceRecord>>> = (0..cfg.n_repeats as u64)
        .into_par_iter()
        .map(|r| run_single(cfg, problem.as_ref(), &matrix, &spectral, &steps, r))
        .collect();
    let trace = average_traces(traces?);

    let (best_trace_index, best_value, best_metric) = match phase1_best(&trace) {
        Ok((idx, v)) => {
            let name = if trace[idx].grad_p_sq.is_some() {
                "grad_p_sq"
            } else {
                "grad_x_sq"
            };
            (idx, v, name.to_string())
        }
        Err(_) => (trace.len().saturating_sub(1), f64::NAN, "none".to_string()),
    };
    let last = trace.last().expect("nonempty trace");
    let summary = Summary {
        best_iteration: trace[best_trace_index].iteration,
        best_trace_index,
        best_value,
        best_metric,
        final_dual_gap: last.dual_gap,
        final_moment_mse: last.moment_mse,
        final_moment_mse_var: last.moment_mse_var,
        time_avg: time_average(&trace),
        mu_x: steps.mu_x,
        mu_y: steps.mu_y,
        mu_y_phase2: steps.mu_y_phase2,
        phase1_rounds: cfg.t_phase1,
        phase2_rounds: cfg.t_phase2,
        n_repeats: cfg.n_repeats,
        seed: cfg.seed,
    };
    Ok(ExperimentOutput { trace, summary })
}

/// Empirical rate target of a probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateTarget {
    /// Time-averaged ||grad P(x_c)||^2 of a phase-1 run (theorem-1 metric).
    PrimalAvg,
    /// Final dual gap of a phase-2-only run (theorem-2 metric).
    DualGapFinal,
}

/// Reruns the experiment at each horizon with the theorem-planned step
/// sizes for that horizon and reports the corresponding metric.
pub fn rate_probe(
    base: &ExperimentConfig,
    t_list: &[u64],
    target: RateTarget,
) -> Result<Vec<(u64, f64)>> {
    if t_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "horizons must be strictly ascending".into(),
        ));
    }
    let mut out = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let mut cfg = base.clone();
        match target {
            RateTarget::PrimalAvg => {
                cfg.t_phase1 = t;
                cfg.t_phase2 = 0;
            }
            RateTarget::DualGapFinal => {
                cfg.t_phase1 = 0;
                cfg.t_phase2 = t;
            }
        }
        let output = run_experiment(&cfg)?;
        let value = match target {
            RateTarget::PrimalAvg => output.summary.time_avg.grad_p_sq.ok_or_else(|| {
                Error::Diagnostic("primal probe needs grad_p diagnostics enabled".into())
            })?,
            RateTarget::DualGapFinal => output.summary.final_dual_gap.ok_or_else(|| {
                Error::Diagnostic("dual probe needs dual-gap diagnostics enabled".into())
            })?,
        };
        out.push((t, value));
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV schema: iter,grad_x_sq,grad_y_sq,grad_P_sq,net_dev,increment,
/// dual_gap,stoch_grad_avg,moment_mse,phase
pub fn trace_to_csv(trace: &[TraceRecord]) -> String {
    let mut out = String::from(
        "iter,grad_x_sq,grad_y_sq,grad_P_sq,net_dev,increment,dual_gap,stoch_grad_avg,moment_mse,phase\n",
    );
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.iteration,
            fmt_opt(r.grad_x_sq),
            fmt_opt(r.grad_y_sq),
            fmt_opt(r.grad_p_sq),
            r.net_dev,
            r.increment,
            fmt_opt(r.dual_gap),
            fmt_opt(r.stoch_grad_avg),
            fmt_opt(r.moment_mse),
            r.phase,
        ));
    }
    out
}
