//! Command-line interface: preset experiments, config loading, step-size
//! planning and topology validation.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 runtime or
//! diagnostic error.

use crate::config::{
    AlgoSpec, DiagFlags, ExperimentConfig, InitKind, InitSpec, Phase2Freeze, PlannerName,
    ProblemSpec, StepChoice, TopologySpec,
};
use crate::optim::{plan_theorem1, plan_theorem2, Algo, PlanInputs};
use crate::simulator::{rate_probe, run_experiment, trace_to_csv, RateTarget};
use crate::topology::{validate_assumption6, CombinationMatrix};
use crate::{Error, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "dssog",
    about = "Distributed stochastic minimax optimization simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment from a config file or a named preset.
    Run {
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default ./out; MINIMAX_OUT overrides).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the planned step sizes for the given constants as JSON.
    Plan {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        theorem: u8,
        /// JSON file with {"L_f": .., "nu": .., "K": .., "T": ..,
        /// "jgamma_sq": ..} (jgamma_sq optional, phase-1 only).
        #[arg(long)]
        params: PathBuf,
    },
    /// Check a combination matrix against the left-stochastic assumptions.
    Validate {
        /// JSON file with {"K": .., "A": [[..]]} (column-major).
        #[arg(long)]
        topology: PathBuf,
    },
    /// List the bundled presets.
    ListPresets,
}

/// How a preset runs: a single experiment or an empirical rate probe.
pub enum PresetKind {
    Single(ExperimentConfig),
    RateProbe {
        base: ExperimentConfig,
        t_list: Vec<u64>,
        target: RateTarget,
    },
}

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub kind: PresetKind,
}

fn wgan_config(sigma2: f64) -> ExperimentConfig {
    ExperimentConfig {
        problem: ProblemSpec::Wgan1d {
            pi: 0.0,
            sigma2,
            k: 8,
            lambda: 0.1,
            regularizer: Default::default(),
            agents: None,
            moment_samples: 1_000_000,
            oracle_seed: 0x0dd5_eed0,
        },
        topology: TopologySpec::Random {
            k: 8,
            edge_prob: 0.4,
            seed: 42,
        },
        algorithm: AlgoSpec {
            algo: Algo::DssOg,
            mu_x: StepChoice::Fixed(0.1),
            mu_y: StepChoice::Fixed(0.1),
            mu_y_phase2: None,
            adam: None,
            jgamma_sq: None,
            tau3_coeff: None,
        },
        t_phase1: 10_000,
        t_phase2: 0,
        seed: 0,
        cadence: 10,
        n_repeats: 1,
        phase2_x: Phase2Freeze::CentroidBest,
        init: InitSpec {
            kind: InitKind::Random,
            scale: 0.5,
        },
        // moment evaluations at the centroid would dominate the runtime;
        // the experiment tracks the sampled-gradient and moment metrics
        diagnostics: DiagFlags {
            true_grads: false,
            dual_gap: false,
            stoch_grads: true,
            moments: true,
            moment_mse_samples: 2000,
        },
    }
}

fn quadratic_ring8() -> ExperimentConfig {
    ExperimentConfig {
        problem: ProblemSpec::Quadratic {
            m1: 2,
            m2: 2,
            k: 8,
            gamma: 1.0,
            noise_sigma2: 0.01,
            spread: 0.3,
            seed: 5,
            q_scale: 1.0,
            b_scale: 1.0,
        },
        topology: TopologySpec::Ring { k: 8 },
        algorithm: AlgoSpec {
            algo: Algo::DssOg,
            mu_x: StepChoice::Fixed(0.05),
            mu_y: StepChoice::Fixed(0.05),
            mu_y_phase2: None,
            adam: None,
            jgamma_sq: None,
            tau3_coeff: None,
        },
        t_phase1: 5000,
        t_phase2: 0,
        seed: 0,
        cadence: 10,
        n_repeats: 10,
        phase2_x: Phase2Freeze::CentroidBest,
        init: InitSpec {
            kind: InitKind::Random,
            scale: 0.5,
        },
        diagnostics: DiagFlags::default(),
    }
}

fn bilinear_contrast() -> ExperimentConfig {
    ExperimentConfig {
        problem: ProblemSpec::Bilinear {
            m: 1,
            scale: 1.0,
            noise_sigma2: 0.0,
            k: 1,
        },
        topology: TopologySpec::Ring { k: 1 },
        algorithm: AlgoSpec {
            algo: Algo::CssOg,
            mu_x: StepChoice::Fixed(0.1),
            mu_y: StepChoice::Fixed(0.1),
            mu_y_phase2: None,
            adam: None,
            jgamma_sq: None,
            tau3_coeff: None,
        },
        t_phase1: 500,
        t_phase2: 0,
        seed: 0,
        cadence: 1,
        n_repeats: 1,
        phase2_x: Phase2Freeze::CentroidBest,
        init: InitSpec {
            kind: InitKind::Random,
            scale: 1.0,
        },
        diagnostics: DiagFlags::default(),
    }
}

fn rate_probe_primal() -> (ExperimentConfig, Vec<u64>) {
    let mut cfg = quadratic_ring8();
    cfg.problem = ProblemSpec::Quadratic {
        m1: 2,
        m2: 2,
        k: 8,
        gamma: 0.2,
        noise_sigma2: 0.01,
        spread: 0.2,
        seed: 5,
        q_scale: 0.02,
        b_scale: 0.02,
    };
    cfg.algorithm.mu_x = StepChoice::Planned(PlannerName::Theorem1);
    cfg.algorithm.mu_y = StepChoice::Planned(PlannerName::Theorem1);
    cfg.n_repeats = 20;
    cfg.init = InitSpec {
        kind: InitKind::Random,
        scale: 1.0,
    };
    (cfg, vec![2000, 8000])
}

fn rate_probe_dual() -> (ExperimentConfig, Vec<u64>) {
    let mut cfg = quadratic_ring8();
    cfg.problem = ProblemSpec::Quadratic {
        m1: 2,
        m2: 2,
        k: 8,
        gamma: 1.0,
        noise_sigma2: 1.0,
        spread: 0.2,
        seed: 5,
        q_scale: 1.0,
        b_scale: 1.0,
    };
    cfg.n_repeats = 20;
    cfg.cadence = 50;
    // dual-only refinement from the maximizer: the probe then measures the
    // noise term of the last-iterate gap, which is the 1/T-rate quantity
    cfg.init = InitSpec {
        kind: InitKind::DualOptimal,
        scale: 1.0,
    };
    (cfg, vec![1000, 2000])
}

pub fn presets() -> Vec<Preset> {
    let (primal_base, primal_ts) = rate_probe_primal();
    let (dual_base, dual_ts) = rate_probe_dual();
    vec![
        Preset {
            name: "wgan1d-lowvar",
            description: "1-d Wasserstein GAN, 8 agents, data N(0, 0.001)",
            kind: PresetKind::Single(wgan_config(0.001)),
        },
        Preset {
            name: "wgan1d-highvar",
            description: "1-d Wasserstein GAN, 8 agents, data N(0, 0.1)",
            kind: PresetKind::Single(wgan_config(0.1)),
        },
        Preset {
            name: "quadratic-ring8",
            description: "quadratic saddle on a ring of 8 with full diagnostics",
            kind: PresetKind::Single(quadratic_ring8()),
        },
        Preset {
            name: "bilinear-contrast",
            description: "optimistic method on the rotation problem (set algo to gda to diverge)",
            kind: PresetKind::Single(bilinear_contrast()),
        },
        Preset {
            name: "rate-probe-primal",
            description: "time-averaged primal gradient at T vs 4T under planned steps",
            kind: PresetKind::RateProbe {
                base: primal_base,
                t_list: primal_ts,
                target: RateTarget::PrimalAvg,
            },
        },
        Preset {
            name: "rate-probe-dual",
            description: "last-iterate dual gap at T vs 2T under the phase-2 schedule",
            kind: PresetKind::RateProbe {
                base: dual_base,
                t_list: dual_ts,
                target: RateTarget::DualGapFinal,
            },
        },
    ]
}

pub fn preset_by_name(name: &str) -> Option<Preset> {
    presets().into_iter().find(|p| p.name == name)
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    if let Ok(env) = std::env::var("MINIMAX_OUT") {
        return PathBuf::from(env);
    }
    flag.unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_run(
    config: Option<PathBuf>,
    preset: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let kind = match (config, preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(&path)?;
            let cfg: ExperimentConfig = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            PresetKind::Single(cfg)
        }
        (None, Some(name)) => {
            preset_by_name(&name)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown preset '{name}' (usage: dssog run --preset NAME; see 'dssog list-presets')"
                    ))
                })?
                .kind
        }
        _ => return Err(Error::Config("run needs exactly one of --config or --preset".into())),
    };
    let dir = out_dir(out);
    std::fs::create_dir_all(&dir)?;
    match kind {
        PresetKind::Single(mut cfg) => {
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
            let output = run_experiment(&cfg)?;
            std::fs::write(dir.join("trace.csv"), trace_to_csv(&output.trace))?;
            std::fs::write(
                dir.join("summary.json"),
                serde_json::to_string_pretty(&output.summary)? + "\n",
            )?;
            let best = if output.summary.best_metric == "none" {
                "no gradient diagnostics recorded".to_string()
            } else {
                format!(
                    "best {} = {:.6e} at iteration {}",
                    output.summary.best_metric, output.summary.best_value, output.summary.best_iteration
                )
            };
            println!(
                "wrote {} and {} ({} records, {best})",
                dir.join("trace.csv").display(),
                dir.join("summary.json").display(),
                output.trace.len(),
            );
        }
        PresetKind::RateProbe {
            mut base,
            t_list,
            target,
        } => {
            if let Some(s) = seed {
                base.seed = s;
            }
            let table = rate_probe(&base, &t_list, target)?;
            let mut csv = String::from("T,metric\n");
            for (t, v) in &table {
                csv.push_str(&format!("{t},{v}\n"));
            }
            std::fs::write(dir.join("rate_table.csv"), &csv)?;
            println!("wrote {}", dir.join("rate_table.csv").display());
            for (t, v) in &table {
                println!("T = {t}: {v:.6e}");
            }
            if let (Some(first), Some(last)) = (table.first(), table.last()) {
                if last.1 > 0.0 && table.len() > 1 {
                    println!("ratio {:.3}", first.1 / last.1);
                }
            }
        }
    }
    Ok(())
}

fn cmd_plan(theorem: u8, params: &Path) -> Result<()> {
    let text = std::fs::read_to_string(params)?;
    let inputs: PlanInputs = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", params.display())))?;
    let plan = match theorem {
        1 => plan_theorem1(&inputs)?,
        2 => plan_theorem2(inputs.l_f, inputs.nu, inputs.num_agents, inputs.horizon)?,
        _ => unreachable!("clap range"),
    };
    println!("{}", serde_json::to_string_pretty(&plan)?);
    Ok(())
}

#[derive(Deserialize)]
struct MatrixFile {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
}

fn cmd_validate(topology: &Path) -> Result<()> {
    let text = std::fs::read_to_string(topology)?;
    let file: MatrixFile = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", topology.display())))?;
    let matrix = CombinationMatrix::from_columns(file.k, file.a)?;
    let report = validate_assumption6(&matrix);
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Json(_) => 1,
        _ => 2,
    }
}

/// Entry point; returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return 1;
        }
    };
    let result = match cli.cmd {
        Cmd::Run {
            config,
            preset,
            seed,
            out,
        } => cmd_run(config, preset, seed, out),
        Cmd::Plan { theorem, params } => cmd_plan(theorem, &params),
        Cmd::Validate { topology } => cmd_validate(&topology),
        Cmd::ListPresets => {
            for p in presets() {
                println!("{:<20} {}", p.name, p.description);
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_presets_with_expected_names() {
        let names: Vec<&str> = presets().iter().map(|p| p.name).collect();
        assert_eq!(
            names,
            vec![
                "wgan1d-lowvar",
                "wgan1d-highvar",
                "quadratic-ring8",
                "bilinear-contrast",
                "rate-probe-primal",
                "rate-probe-dual"
            ]
        );
    }

    #[test]
    fn preset_configs_round_trip_and_validate() {
        for preset in presets() {
            let cfg = match &preset.kind {
                PresetKind::Single(c) => c,
                PresetKind::RateProbe { base, .. } => base,
            };
            cfg.validate()
                .unwrap_or_else(|e| panic!("{}: {e}", preset.name));
            let json = serde_json::to_string(cfg).unwrap();
            let parsed: ExperimentConfig = serde_json::from_str(&json).unwrap();
            assert_eq!(
                json,
                serde_json::to_string(&parsed).unwrap(),
                "{}",
                preset.name
            );
        }
    }

    #[test]
    fn plan_params_accept_spec_field_names() {
        let inputs: PlanInputs =
            serde_json::from_str(r#"{"L_f": 1.0, "nu": 0.5, "K": 8, "T": 10000}"#).unwrap();
        assert_eq!(inputs.l_f, 1.0);
        assert_eq!(inputs.num_agents, 8);
        assert_eq!(inputs.horizon, 10_000);
        assert_eq!(inputs.jgamma_sq, 0.0);
    }
}
