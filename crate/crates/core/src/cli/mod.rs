//! Command-line orchestration: configuration, experiment runs, result files
//! and the embedded self-test.
//!
//! Exit codes: 0 on success, 1 on runtime or invariant failure, 2 on usage
//! errors.

mod config;
mod output;
mod selftest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

pub use config::{ConfigOverrides, Mode, RunConfig};
pub use output::{format_g17, write_results, Manifest, ManifestTrial, StepRow, SummaryRow, STEPS_HEADER, SUMMARY_HEADER};
pub use selftest::{run_selftest, CheckOutcome, Fault, INVARIANTS};

use crate::bandits::Algorithm;
use crate::benchmarks::{run_benchmark, run_task_trial, TaskTrialRecord};
use crate::error::{Error, Result};
use crate::rng::TrialSeeds;
use crate::stats::RunningStats;

pub const EXIT_SUCCESS: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "mab-deform", version, about = "Bandit-based deformation model selection experiments")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthetic regret benchmark on an underactuated linear system.
    Synth(ExperimentArgs),
    /// Closed-loop manipulation task in the kinematic toy world.
    Task(ExperimentArgs),
    /// Run the embedded invariant suite.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct ExperimentArgs {
    /// JSON file with flat kebab-case keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Synthetic preset: small, medium, large or custom.
    #[arg(long)]
    preset: Option<String>,
    /// Task scenario: line-to-arc, chain-spread or chain-around-obstacle.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    models: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Comma-separated: ucb1-normal, kf-manb, kf-mandb.
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<Algorithm>>,
    #[arg(long)]
    runs: Option<usize>,
    /// Pulls per synthetic trial or steps per task trial.
    #[arg(long, visible_alias = "steps")]
    pulls: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Rotational weight of the twist inner product.
    #[arg(long)]
    c: Option<f64>,
    /// Obstacle avoidance decay rate.
    #[arg(long)]
    beta: Option<f64>,
    /// Stretching threshold.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    v_max_e: Option<f64>,
    #[arg(long)]
    v_max_o: Option<f64>,
    #[arg(long)]
    gripper_radius: Option<f64>,
    /// Correlation strength of the joint filter.
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    sigma_tr: Option<f64>,
    #[arg(long)]
    sigma_obs: Option<f64>,
    #[arg(long)]
    system_noise: Option<f64>,
    #[arg(long)]
    model_noise: Option<f64>,
    #[arg(long)]
    scaled_similarity: Option<bool>,
    #[arg(long)]
    evaluate_regret: Option<bool>,
    /// Directory for steps.csv, summary.csv and manifest.json.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Worker threads for independent trials.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    /// Print invariant names and exit.
    #[arg(long)]
    list: bool,
    /// Inject a fault to confirm the suite catches it.
    #[arg(long)]
    inject: Option<Fault>,
}

impl ExperimentArgs {
    fn into_overrides(self, mode: Mode) -> Result<ConfigOverrides> {
        let preset = match (mode, self.preset, self.scenario) {
            (Mode::Synth, _, Some(_)) => return Err(Error::usage("scenario", "only valid for `task`")),
            (Mode::Task, Some(_), _) => return Err(Error::usage("preset", "only valid for `synth`; use --scenario")),
            (_, p, s) => p.or(s),
        };
        let cli = ConfigOverrides {
            command: None,
            preset,
            models: self.models,
            n: self.n,
            m: self.m,
            algorithms: self.algorithms,
            runs: self.runs,
            pulls: self.pulls,
            seed: self.seed,
            c: self.c,
            beta: self.beta,
            lambda: self.lambda,
            v_max_e: self.v_max_e,
            v_max_o: self.v_max_o,
            gripper_radius: self.gripper_radius,
            xi: self.xi,
            sigma_tr: self.sigma_tr,
            sigma_obs: self.sigma_obs,
            system_noise: self.system_noise,
            model_noise: self.model_noise,
            scaled_similarity: self.scaled_similarity,
            evaluate_regret: self.evaluate_regret,
            output: self.output,
            jobs: self.jobs,
        };
        let file = match &self.config {
            Some(path) => ConfigOverrides::from_file(path)?,
            None => ConfigOverrides::default(),
        };
        Ok(cli.or(file))
    }
}

/// A parsed command line.
#[derive(Debug, Clone, PartialEq)]
pub enum Invocation {
    Run(Box<RunConfig>),
    Selftest { list: bool, inject: Option<Fault> },
}

fn parse_invocation<I, T>(args: I) -> std::result::Result<Result<Invocation>, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    Ok(match cli.command {
        Command::Synth(a) => a.into_overrides(Mode::Synth).and_then(|o| RunConfig::resolve(Mode::Synth, o)).map(|c| Invocation::Run(Box::new(c))),
        Command::Task(a) => a.into_overrides(Mode::Task).and_then(|o| RunConfig::resolve(Mode::Task, o)).map(|c| Invocation::Run(Box::new(c))),
        Command::Selftest(a) => Ok(Invocation::Selftest {
            list: a.list,
            inject: a.inject,
        }),
    })
}

/// Resolves flags over an optional config file over the defaults.
pub fn parse_config<I, T>(args: I) -> Result<Invocation>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    parse_invocation(args).map_err(|e| Error::usage("arguments", e.to_string()))?
}

/// Everything an experiment produced, ready to be written.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub summary: Vec<SummaryRow>,
    /// `(run, algorithm, steps)` in run order.
    pub trials: Vec<(usize, Algorithm, Vec<crate::controller::StepRecord>)>,
    pub seeds: Vec<ManifestTrial>,
}

fn summary_rows(preset: &str, algorithms: &[Algorithm], totals: &[(Algorithm, f64)]) -> Vec<SummaryRow> {
    algorithms
        .iter()
        .map(|&algorithm| {
            let stats: RunningStats = totals.iter().filter(|(a, _)| *a == algorithm).map(|(_, r)| *r).collect();
            SummaryRow {
                preset: preset.into(),
                algorithm,
                runs: stats.count(),
                mean_total_regret: stats.mean(),
                std_total_regret: stats.sample_std(),
            }
        })
        .collect()
}

pub fn run_experiment(config: &RunConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let seeds = (0..config.runs)
        .map(|run| ManifestTrial {
            run,
            seeds: TrialSeeds::for_trial(config.seed, run),
        })
        .collect();
    match config.command {
        Mode::Synth => {
            let result = run_benchmark(
                &config.benchmark_preset(),
                &config.algorithms,
                config.bandit_params(),
                config.seed,
                config.jobs,
            )?;
            let totals: Vec<_> = result.records.iter().map(|r| (r.algorithm, r.trial.total_regret())).collect();
            Ok(ExperimentOutput {
                summary: summary_rows(&config.preset, &config.algorithms, &totals),
                trials: result.records.into_iter().map(|r| (r.run, r.algorithm, r.trial.steps)).collect(),
                seeds,
            })
        }
        Mode::Task => {
            let scenario = config.scenario()?;
            let options = config.task_options()?;
            let jobs: Vec<(usize, Algorithm)> = (0..config.runs)
                .flat_map(|run| config.algorithms.iter().map(move |&a| (run, a)))
                .collect();
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(config.jobs)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            let records: Vec<TaskTrialRecord> = pool.install(|| {
                jobs.par_iter()
                    .map(|&(run, a)| run_task_trial(scenario, a, &options, config.seed, run))
                    .collect::<Result<_>>()
            })?;
            let totals: Vec<_> = records
                .iter()
                .map(|r| (r.algorithm, r.steps.last().map_or(0.0, |s| s.cum_regret)))
                .collect();
            Ok(ExperimentOutput {
                summary: summary_rows(&config.preset, &config.algorithms, &totals),
                trials: jobs.iter().zip(records).map(|(&(run, a), r)| (run, a, r.steps)).collect(),
                seeds,
            })
        }
    }
}

fn write_output(config: &RunConfig, out: &ExperimentOutput) -> Result<()> {
    let Some(dir) = &config.output else {
        return Ok(());
    };
    let steps: Vec<StepRow<'_>> = out
        .trials
        .iter()
        .flat_map(|(run, algorithm, steps)| {
            steps.iter().map(move |record| StepRow {
                run: *run,
                algorithm: *algorithm,
                record,
            })
        })
        .collect();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config,
        trials: out.seeds.clone(),
    };
    write_results(dir, &steps, &out.summary, &manifest)?;
    Ok(())
}

fn print_summary(out: &ExperimentOutput) {
    println!("{SUMMARY_HEADER}");
    for r in &out.summary {
        println!(
            "{},{},{},{},{}",
            r.preset,
            r.algorithm,
            r.runs,
            format_g17(r.mean_total_regret),
            format_g17(r.std_total_regret)
        );
    }
}

fn selftest(list: bool, inject: Option<Fault>) -> u8 {
    if list {
        for (name, _) in INVARIANTS {
            println!("{name}");
        }
        return EXIT_SUCCESS;
    }
    let outcomes = run_selftest(inject);
    let mut failed = 0;
    for o in &outcomes {
        match &o.result {
            Ok(()) => println!("PASS {}", o.name),
            Err(msg) => {
                failed += 1;
                println!("FAIL {}: {msg}", o.name);
            }
        }
    }
    if failed == 0 {
        EXIT_SUCCESS
    } else {
        eprintln!("{failed} of {} invariants failed", outcomes.len());
        EXIT_FAILURE
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage { .. } => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Entry point shared by the binary and tests; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let invocation = match parse_invocation(args) {
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_SUCCESS };
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
        Ok(Ok(inv)) => inv,
    };
    match invocation {
        Invocation::Selftest { list, inject } => selftest(list, inject),
        Invocation::Run(config) => match run_experiment(&config).and_then(|out| {
            write_output(&config, &out)?;
            Ok(out)
        }) {
            Ok(out) => {
                print_summary(&out);
                EXIT_SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&e)
            }
        },
    }
}
