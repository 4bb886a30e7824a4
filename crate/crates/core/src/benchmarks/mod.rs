//! Synthetic regret experiments and toy manipulation tasks.

mod synthetic;
mod toy;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use synthetic::{
    make_synthetic_models, make_synthetic_system, run_synthetic_trial, Policy, SyntheticSystem, SyntheticTrial,
    TrialRecord, INITIAL_STATE,
};
pub use toy::{make_toy_world, Scenario, ToyWorld, CHAIN_POINTS, CHAIN_SPACING, TOY_DT, TRUE_RIGIDITY};

use crate::bandits::{Algorithm, Bandit, BanditParams, KalmanNoise};
use crate::controller::{max_stretch, ControllerConfig, StepRecord, TaskRunner, World};
use crate::error::{Error, Result};
use crate::models::{model_set_factory, ModelSetConfig};
use crate::rng::TrialSeeds;
use crate::stats::RunningStats;

/// Size and noise of one synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkPreset {
    pub name: String,
    pub models: usize,
    pub n: usize,
    pub m: usize,
    pub pulls: usize,
    pub runs: usize,
    /// Half-width of the uniform noise added to `[I; 0]`.
    pub system_noise: f64,
    /// Half-width of the uniform noise added to the true Jacobian per model.
    pub model_noise: f64,
    pub max_velocity: f64,
}

impl BenchmarkPreset {
    fn sized(name: &str, models: usize, n: usize, m: usize) -> Self {
        Self {
            name: name.into(),
            models,
            n,
            m,
            pulls: 1000,
            runs: 100,
            system_noise: 0.1,
            model_noise: 0.025,
            max_velocity: 0.1,
        }
    }

    pub fn small() -> Self {
        Self::sized("small", 10, 3, 2)
    }

    pub fn medium() -> Self {
        Self::sized("medium", 60, 147, 6)
    }

    pub fn large() -> Self {
        Self::sized("large", 60, 6075, 12)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "small" => Ok(Self::small()),
            "medium" => Ok(Self::medium()),
            "large" => Ok(Self::large()),
            _ => Err(Error::usage("preset", format!("unknown preset `{name}` (expected small, medium or large)"))),
        }
    }

    /// Explicit `(M, n, m)` with the standard noise and trial length.
    pub fn custom(models: usize, n: usize, m: usize) -> Self {
        Self::sized("custom", models, n, m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models == 0 || self.pulls == 0 || self.runs == 0 {
            return Err(Error::Config("models, pulls and runs must be positive".into()));
        }
        if self.m == 0 || self.m >= self.n {
            return Err(Error::Config(format!("need 0 < m < n, got n = {}, m = {}", self.n, self.m)));
        }
        if !(self.system_noise >= 0.0 && self.model_noise >= 0.0 && self.max_velocity > 0.0) {
            return Err(Error::Config("noise widths must be non-negative and the velocity limit positive".into()));
        }
        Ok(())
    }
}

/// Bandit noise used for the synthetic experiments.
pub fn synthetic_bandit_params() -> BanditParams {
    BanditParams {
        noise: KalmanNoise {
            transition: 1.0,
            observation: 1.0,
        },
        correlation: 0.9,
    }
}

/// Bandit noise used for the manipulation tasks.
pub fn task_bandit_params() -> BanditParams {
    BanditParams {
        noise: KalmanNoise {
            transition: 0.1,
            observation: 0.01,
        },
        correlation: 0.9,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub runs: u64,
    pub mean_total_regret: f64,
    pub std_total_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub run: usize,
    pub algorithm: Algorithm,
    pub seeds: TrialSeeds,
    pub trial: TrialRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    /// Ordered by run, then by the requested algorithm order.
    pub records: Vec<RunRecord>,
    pub summary: Vec<AlgorithmSummary>,
}

fn run_one(preset: &BenchmarkPreset, algorithms: &[Algorithm], params: BanditParams, seed: u64, run: usize) -> Result<Vec<RunRecord>> {
    let seeds = TrialSeeds::for_trial(seed, run);
    let system = make_synthetic_system(preset.n, preset.m, preset.system_noise, &mut seeds.system())?;
    let models = make_synthetic_models(&system, preset.models, preset.model_noise, &mut seeds.models());
    let trial = SyntheticTrial::new(&system, &models)?;
    algorithms
        .iter()
        .map(|&algorithm| {
            let record = trial.run(
                Policy::Bandit(algorithm),
                preset.pulls,
                preset.max_velocity,
                params,
                &mut seeds.selection(),
            )?;
            Ok(RunRecord {
                run,
                algorithm,
                seeds,
                trial: record,
            })
        })
        .collect()
}

/// Runs `preset.runs` trials per algorithm on up to `jobs` threads. Every
/// algorithm of a run sees the same system and model set; results do not
/// depend on `jobs`.
pub fn run_benchmark(
    preset: &BenchmarkPreset,
    algorithms: &[Algorithm],
    params: BanditParams,
    seed: u64,
    jobs: usize,
) -> Result<BenchmarkResult> {
    preset.validate()?;
    if algorithms.is_empty() {
        return Err(Error::Config("no algorithms selected".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let per_run: Vec<Vec<RunRecord>> = pool.install(|| {
        (0..preset.runs)
            .into_par_iter()
            .map(|run| run_one(preset, algorithms, params, seed, run))
            .collect::<Result<_>>()
    })?;
    let records: Vec<RunRecord> = per_run.into_iter().flatten().collect();
    let summary = summarize(&records, algorithms);
    Ok(BenchmarkResult { records, summary })
}

/// Mean and sample standard deviation of total regret per algorithm,
/// accumulated in record order.
pub fn summarize(records: &[RunRecord], algorithms: &[Algorithm]) -> Vec<AlgorithmSummary> {
    algorithms
        .iter()
        .map(|&algorithm| {
            let stats: RunningStats = records
                .iter()
                .filter(|r| r.algorithm == algorithm)
                .map(|r| r.trial.total_regret())
                .collect();
            AlgorithmSummary {
                algorithm,
                runs: stats.count(),
                mean_total_regret: stats.mean(),
                std_total_regret: stats.sample_std(),
            }
        })
        .collect()
}

/// Outcome of one closed-loop task trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskTrialRecord {
    pub scenario: Scenario,
    pub algorithm: Algorithm,
    pub initial_error: f64,
    pub steps: Vec<StepRecord>,
    /// Largest pairwise stretch beyond relaxed distance at the end.
    pub final_max_stretch: f64,
    /// Smallest gripper-obstacle clearance seen, including the start.
    pub min_obstacle_distance: f64,
}

impl TaskTrialRecord {
    pub fn final_error(&self) -> f64 {
        self.steps.last().map_or(self.initial_error, |s| s.error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskOptions {
    pub steps: usize,
    pub controller: ControllerConfig,
    pub bandit: BanditParams,
    pub evaluate_regret: bool,
}

impl TaskOptions {
    pub fn for_scenario(scenario: Scenario, steps: usize) -> Self {
        Self {
            steps,
            controller: scenario.controller_config(),
            bandit: task_bandit_params(),
            evaluate_regret: false,
        }
    }
}

/// Runs the standard 60-model set on a toy scenario.
pub fn run_task_trial(scenario: Scenario, algorithm: Algorithm, options: &TaskOptions, seed: u64, run: usize) -> Result<TaskTrialRecord> {
    let world = make_toy_world(scenario)?;
    let models = model_set_factory(
        &ModelSetConfig::standard(scenario.adaptive_seed_k()),
        world.geometry(),
        &world.scene(),
    )?;
    let bandit = Bandit::new(algorithm, models.len(), options.bandit)?;
    let seeds = TrialSeeds::for_trial(seed, run);
    let initial_error = world.error();
    let radius = options.controller.gripper_radius;
    let mut min_obstacle_distance = world.min_obstacle_distance(radius);
    let mut runner = TaskRunner::new(world, models, bandit, options.controller, seeds.selection())?
        .with_regret_evaluation(options.evaluate_regret);
    let mut steps = Vec::with_capacity(options.steps);
    for _ in 0..options.steps {
        let record = runner.main_loop_step()?;
        min_obstacle_distance = min_obstacle_distance.min(record.min_obstacle_distance);
        steps.push(record);
    }
    let world = runner.world();
    Ok(TaskTrialRecord {
        scenario,
        algorithm,
        initial_error,
        steps,
        final_max_stretch: max_stretch(world.points(), world.relaxed_distances()),
        min_obstacle_distance,
    })
}
