//! Command-line front end. Exit codes: 0 all verdicts pass, 2 any failure,
//! 3 inconclusive only, 1 runtime or usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;

use crate::brw::{BarrierSpec, Population, DEFAULT_MAX_PARTICLES};
use crate::error::{Error, Result};
use crate::experiments::{
    read_report, run_experiment, write_artifacts, ComparisonReport, ExperimentConfig, ExperimentKind, Outcome, CONFIG_FIELDS,
};
use crate::functional::GridFunctional;
use crate::gibbs::{self, TrajectoryMode};
use crate::laws::{boundary_check, ReproductionLaw, EXACT_TOLERANCE};
use crate::rng::Streams;

/// Environment variable overriding the output directory.
pub const OUT_ENV: &str = "BRWLAB_OUT";
const DEFAULT_OUT: &str = "brwlab-out";

#[derive(Debug, Parser)]
#[command(name = "brwlab", version, about = "Monte Carlo laboratory for branching random walks in the boundary case")]
pub struct Cli {
    /// Experiment config (TOML, schema brwlab.experiment/1).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// RNG seed; required by every sampling command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check supercriticality, the boundary normalisation and moment conditions.
    CheckLaw(CheckLawArgs),
    /// Random-walk calibration: c0*theta identity, Rayleigh endpoint, two-barrier, LLT, ballot.
    CalibrateRw(LawArg),
    /// Grow one tree and store a snapshot.
    Simulate(SimulateArgs),
    /// Gibbs trajectory means on a stored tree.
    Gibbs(GibbsArgs),
    /// Overlap mass on a stored tree.
    Overlap(OverlapArgs),
    /// Run the experiment described by --config.
    Experiment(ExperimentArgs),
    /// Summarise a report.json and exit with its verdict code.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct LawArg {
    /// Built-in law name or law TOML path; overrides regime.law.
    #[arg(long)]
    pub law: Option<String>,
}

#[derive(Debug, Args)]
pub struct CheckLawArgs {
    #[arg(long, default_value = "gaussian_dyadic")]
    pub law: String,
    /// Offspring draws for the Monte Carlo cross-check (needs --seed).
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    #[arg(long, default_value_t = EXACT_TOLERANCE)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "gaussian_dyadic")]
    pub law: String,
    #[arg(long)]
    pub n: usize,
    /// Lower barrier -L.
    #[arg(long)]
    pub l: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_PARTICLES)]
    pub max_particles: usize,
}

#[derive(Debug, Args)]
pub struct GibbsArgs {
    /// Snapshot written by `simulate`.
    #[arg(long)]
    pub snapshot: PathBuf,
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 64)]
    pub m: usize,
    /// Path scaling sigma (default: sqrt(psi''(beta)) of the law in the snapshot).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Apply the drift adjustment with psi'(beta).
    #[arg(long)]
    pub drift: bool,
}

#[derive(Debug, Args)]
pub struct OverlapArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    /// Sample this many pairs (needs --seed) besides the exact mass.
    #[arg(long, default_value_t = 0)]
    pub pairs: usize,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Print the default config and exit.
    #[arg(long)]
    pub dump_default: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A report.json, or a directory holding one (default: the output directory).
    pub path: Option<PathBuf>,
}

fn config_help() -> String {
    let mut s = String::from("Config fields (TOML):\n");
    for (k, v) in CONFIG_FIELDS {
        s.push_str(&format!("  {k:<28} {v}\n"));
    }
    s
}

/// Parse `args`, run, and return the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let help = config_help();
    let cmd = Cli::command()
        .mut_subcommand("experiment", |c| c.after_help(help.clone()))
        .mut_subcommand("calibrate-rw", |c| c.after_help(help.clone()))
        .after_long_help(help.clone());
    let cli = match cmd.try_get_matches_from(args).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(Error::invalid(format!("thread pool: {e}"))),
        },
        None => dispatch(&cli),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn require_seed(cli: &Cli, config_seed: Option<u64>, what: &str) -> Result<u64> {
    cli.seed.or(config_seed).ok_or_else(|| Error::invalid(format!("{what} samples and needs --seed (or `seed` in the config)")))
}

fn out_dir(cli: &Cli, config: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| config.and_then(|c| c.output_dir.as_ref().map(PathBuf::from)))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_config(cli: &Cli) -> Result<Option<ExperimentConfig>> {
    cli.config.as_deref().map(ExperimentConfig::from_file).transpose()
}

pub fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::CheckLaw(a) => {
            let law = ReproductionLaw::resolve(&a.law)?;
            let seed = if a.samples > 0 { require_seed(cli, None, "check-law --samples")? } else { 0 };
            let d = boundary_check(&law, a.samples, a.tolerance, &Streams::new(seed, "check-law"));
            print_json(&d)?;
            Ok(if d.accepted { 0 } else { 2 })
        }
        Command::CalibrateRw(a) => {
            let mut cfg = load_config(cli)?.unwrap_or_default();
            cfg.kind = ExperimentKind::RwCalibration;
            if cfg.experiment_id == "default" {
                cfg.experiment_id = "calibrate-rw".into();
            }
            if let Some(l) = &a.law {
                cfg.regime.law = l.clone();
            }
            run_and_write(cli, &cfg)
        }
        Command::Experiment(a) => {
            if a.dump_default {
                print!("{}", ExperimentConfig::default().to_toml_string());
                return Ok(0);
            }
            let cfg = load_config(cli)?.ok_or_else(|| Error::invalid("experiment needs --config"))?;
            run_and_write(cli, &cfg)
        }
        Command::Simulate(a) => {
            let seed = require_seed(cli, None, "simulate")?;
            let law = ReproductionLaw::resolve(&a.law)?;
            let barrier = a.l.map_or(BarrierSpec::NONE, BarrierSpec::lower);
            let pop = Population::simulate(&law, a.n, &barrier, a.max_particles, &mut Streams::new(seed, "simulate").rng(0))?;
            let dir = out_dir(cli, None);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join("population.brw");
            pop.write_snapshot(&path)?;
            #[derive(Serialize)]
            struct Summary<'a> {
                snapshot: &'a Path,
                law: &'a str,
                generation: usize,
                particles: usize,
                alive: bool,
                readout: crate::brw::MartingaleReadout,
            }
            print_json(&Summary {
                snapshot: &path,
                law: &law.name,
                generation: pop.generation(),
                particles: pop.last().len(),
                alive: pop.alive,
                readout: pop.readout(1.0, None, None),
            })?;
            Ok(0)
        }
        Command::Gibbs(a) => {
            let pop = Population::read_snapshot(&a.snapshot)?;
            let law = ReproductionLaw::resolve(&pop.law_name)?;
            let (_, dpsi, d2psi) = law.psi_derivatives(a.beta);
            let sigma = a.sigma.unwrap_or_else(|| d2psi.sqrt());
            let mode = if a.drift { TrajectoryMode::Drift { sigma, psi_prime: dpsi } } else { TrajectoryMode::Plain { sigma } };
            let g = gibbs::gibbs(&pop, a.beta)?;
            let means = gibbs::trajectory_means(&pop, &g, &GridFunctional::BATTERY, a.m, mode)?;
            #[derive(Serialize)]
            struct Out {
                beta: f64,
                log_w: f64,
                mode: TrajectoryMode,
                means: Vec<(String, f64)>,
            }
            print_json(&Out {
                beta: a.beta,
                log_w: g.log_w,
                mode,
                means: GridFunctional::BATTERY.iter().map(|f| f.id().to_string()).zip(means).collect(),
            })?;
            Ok(0)
        }
        Command::Overlap(a) => {
            let pop = Population::read_snapshot(&a.snapshot)?;
            let g = gibbs::gibbs(&pop, a.beta)?;
            let exact = gibbs::overlap_mass(&pop, &g, a.eps)?;
            let sampled = if a.pairs > 0 {
                let seed = require_seed(cli, None, "overlap --pairs")?;
                let s = gibbs::sample_pairs_overlap(&pop, &g, a.pairs, &mut Streams::new(seed, "overlap").rng(0))?;
                Some(s.pairs.iter().filter(|&&o| o >= a.eps).count() as f64 / a.pairs as f64)
            } else {
                None
            };
            #[derive(Serialize)]
            struct Out {
                beta: f64,
                eps: f64,
                exact_mass: f64,
                sampled_mass: Option<f64>,
            }
            print_json(&Out { beta: a.beta, eps: a.eps, exact_mass: exact, sampled_mass: sampled })?;
            Ok(0)
        }
        Command::Report(a) => {
            let mut path = a.path.clone().unwrap_or_else(|| out_dir(cli, None));
            if path.is_dir() {
                path = path.join("report.json");
            }
            let report = read_report(&path)?;
            print_summary(&report);
            Ok(report.exit_code())
        }
    }
}

fn run_and_write(cli: &Cli, cfg: &ExperimentConfig) -> Result<i32> {
    let seed = require_seed(cli, cfg.seed, "experiment")?;
    let report = run_experiment(cfg, seed)?;
    let dir = out_dir(cli, Some(cfg));
    for p in write_artifacts(&dir, &report)? {
        eprintln!("wrote {}", p.display());
    }
    print_summary(&report);
    Ok(report.exit_code())
}

fn print_summary(report: &ComparisonReport) {
    println!("{} ({:?}, seed {})", report.experiment_id, report.kind, report.seed);
    for v in &report.verdicts {
        let tag = match v.outcome {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::Inconclusive => "INCONCLUSIVE",
        };
        println!("  {tag:<12} {:<32} observed {:.6} threshold {} ({})", v.criterion, v.observed, v.threshold, v.rule);
    }
    for n in &report.notes {
        println!("  note: {n}");
    }
}
