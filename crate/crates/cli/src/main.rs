//! `irs-noma` command-line runner.
//!
//! Exit status: 0 on success, 2 when some rows failed, 1 on configuration
//! or I/O errors.

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use irs_noma::baselines::{Mode, QuantizationSpec};
use irs_noma::channels::{dbm_to_watts, derive_seed};
use irs_noma::harness::{
    exhaustive_order_oracle, run_experiment, trial_channels, trial_seed, write_csv, ExperimentConfig, Point,
    Scheme, Sweep, SweepParam, SweepValue,
};
use irs_noma::ordering::order_users;
use irs_noma::siso::solve_siso;
use irs_noma::miso::solve_miso;

#[derive(Parser)]
#[command(name = "irs-noma", version, about = "Max-min rate IRS-assisted NOMA simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Combined-channel-strength user ordering per trial.
    Order(Common),
    /// Run the configured schemes at a single operating point.
    Solve(Common),
    /// Run the configured schemes over a parameter sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// power_dbm, elements, users, antennas or bits.
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated sweep values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Compare the strength-based ordering with exhaustive search (K ≤ 5).
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Comma-separated subset of irs-noma, irs-oma, noma, oma.
    #[arg(long, value_delimiter = ',')]
    scheme: Vec<String>,
    /// Phase resolution in bits, or `continuous`.
    #[arg(long)]
    bits: Option<String>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    oma_per_slot_phases: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Siso,
    Miso,
}

fn config_err(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow::anyhow!("{e}")
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| config_err(format!("reading {}: {e}", path.display())))?;
                ExperimentConfig::from_toml(&text).map_err(config_err)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = trials;
        }
        if let Some(mode) = self.mode {
            cfg.mode = Some(match mode {
                ModeArg::Siso => Mode::Siso,
                ModeArg::Miso => Mode::Miso,
            });
        }
        if !self.scheme.is_empty() {
            cfg.schemes = self
                .scheme
                .iter()
                .map(|s| s.trim().parse::<Scheme>())
                .collect::<Result<_, _>>()
                .map_err(config_err)?;
        }
        if let Some(bits) = &self.bits {
            cfg.scenario.bits = bits.parse::<QuantizationSpec>().map_err(config_err)?;
        }
        if self.oma_per_slot_phases {
            cfg.oma_per_slot_phases = true;
        }
        Ok(cfg)
    }

    fn output(&self) -> anyhow::Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(path) => Box::new(
                File::create(path).with_context(|| format!("creating {}", path.display()))?,
            ),
            None => Box::new(io::stdout().lock()),
        })
    }
}

/// The single operating point used by `order` and `oracle`.
fn single_point(cfg: &ExperimentConfig) -> anyhow::Result<Point> {
    cfg.validate().map_err(config_err)?;
    let points = cfg.points().map_err(config_err)?;
    if points.len() != 1 {
        return Err(config_err("this subcommand runs a single point; remove the sweep"));
    }
    Ok(points.into_iter().next().expect("one point"))
}

#[derive(Serialize)]
struct OrderRow {
    trial: usize,
    user_index: usize,
    decoding_position: usize,
    max_strength: f64,
    seed: u64,
}

#[derive(Serialize)]
struct OracleRow {
    trial: usize,
    ordered_q: f64,
    oracle_q: f64,
    relative_gap: f64,
    ordered_permutation: String,
    oracle_permutation: String,
    seed: u64,
    status: String,
}

fn join(p: &[usize]) -> String {
    p.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
}

/// Returns whether any trial failed.
fn run_order(common: &Common) -> anyhow::Result<bool> {
    let cfg = common.load()?;
    let point = single_point(&cfg)?;
    let mut w = csv::Writer::from_writer(common.output()?);
    let mut failed = false;
    for trial in 0..cfg.trials {
        let seed = derive_seed(trial_seed(cfg.master_seed, trial), &[0]);
        let result = trial_channels(&cfg, &point, trial)
            .and_then(|ch| order_users(&ch, cfg.solver.randomization_trials, seed));
        match result {
            Ok(o) => {
                for (pos, &user) in o.permutation.iter().enumerate() {
                    w.serialize(OrderRow {
                        trial,
                        user_index: user,
                        decoding_position: pos,
                        max_strength: o.strengths[user],
                        seed,
                    })?;
                }
            }
            Err(e) => {
                log::error!("trial {trial}: {e}");
                failed = true;
            }
        }
    }
    w.flush()?;
    Ok(failed)
}

fn run_oracle(common: &Common) -> anyhow::Result<bool> {
    let cfg = common.load()?;
    let point = single_point(&cfg)?;
    let mode = cfg.mode_for(&point);
    let mut w = csv::Writer::from_writer(common.output()?);
    let mut failed = false;
    for trial in 0..cfg.trials {
        let seed = derive_seed(trial_seed(cfg.master_seed, trial), &[0]);
        let solver = cfg.solver_config(dbm_to_watts(point.power_dbm), seed);
        let outcome = trial_channels(&cfg, &point, trial).and_then(|ch| {
            let ordering = order_users(&ch, solver.randomization_trials, seed)?;
            let ordered = match mode {
                Mode::Siso => solve_siso(&ch, &ordering, &solver)?,
                Mode::Miso => solve_miso(&ch, &ordering, &solver)?,
            };
            let (best, q) = exhaustive_order_oracle(&ch, mode, &solver)?;
            Ok((ordering.permutation, ordered.q_star, best, q))
        });
        let row = match outcome {
            Ok((perm, q_ord, best, q_best)) => OracleRow {
                trial,
                ordered_q: q_ord,
                oracle_q: q_best,
                relative_gap: (q_best - q_ord) / q_best,
                ordered_permutation: join(&perm),
                oracle_permutation: join(&best),
                seed,
                status: "ok".into(),
            },
            Err(irs_noma::Error::Refused(msg)) => return Err(config_err(msg)),
            Err(e) => {
                failed = true;
                OracleRow {
                    trial,
                    ordered_q: f64::NAN,
                    oracle_q: f64::NAN,
                    relative_gap: f64::NAN,
                    ordered_permutation: String::new(),
                    oracle_permutation: String::new(),
                    seed,
                    status: format!("failed:{e}"),
                }
            }
        };
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(failed)
}

fn run_rows(common: &Common, cfg: ExperimentConfig) -> anyhow::Result<bool> {
    cfg.validate().map_err(config_err)?;
    let rows = run_experiment(&cfg).map_err(config_err)?;
    write_csv(&rows, common.output()?)?;
    Ok(rows.iter().any(|r| r.failed()))
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Order(common) => run_order(&common),
        Command::Oracle(common) => run_oracle(&common),
        Command::Solve(common) => {
            let mut cfg = common.load()?;
            cfg.sweep = None;
            run_rows(&common, cfg)
        }
        Command::Sweep { common, param, values } => {
            let mut cfg = common.load()?;
            match (param, values.is_empty()) {
                (Some(p), false) => {
                    cfg.sweep = Some(Sweep {
                        param: p.parse::<SweepParam>().map_err(config_err)?,
                        values: values.iter().map(|v| SweepValue::parse(v)).collect(),
                    });
                }
                (None, true) => {
                    if cfg.sweep.is_none() {
                        bail!(config_err("no sweep given: pass --param and --values or a [sweep] table"));
                    }
                }
                _ => bail!(config_err("--param and --values must be given together")),
            }
            run_rows(&common, cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("warning: some rows failed; see the status column");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
