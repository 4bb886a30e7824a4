use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bandits::{Algorithm, BanditParams, KalmanNoise};
use crate::benchmarks::{BenchmarkPreset, Scenario, TaskOptions, CHAIN_POINTS};
use crate::controller::ControllerConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Synth,
    Task,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Synth => "synth",
            Mode::Task => "task",
        }
    }
}

/// Fully resolved experiment configuration. Serializes to the same flat
/// kebab-case keys accepted by `--config` files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    pub command: Mode,
    /// Synthetic preset (`small`, `medium`, `large`, `custom`) or task
    /// scenario name.
    pub preset: String,
    pub models: usize,
    pub n: usize,
    pub m: usize,
    pub algorithms: Vec<Algorithm>,
    pub runs: usize,
    /// Pulls per synthetic trial or controller steps per task trial.
    pub pulls: usize,
    pub seed: u64,
    pub c: f64,
    pub beta: f64,
    pub lambda: f64,
    pub v_max_e: f64,
    pub v_max_o: f64,
    pub gripper_radius: f64,
    pub xi: f64,
    pub sigma_tr: f64,
    pub sigma_obs: f64,
    pub system_noise: f64,
    pub model_noise: f64,
    pub scaled_similarity: bool,
    pub evaluate_regret: bool,
    pub output: Option<PathBuf>,
    pub jobs: usize,
}

/// Partial configuration from a file or the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ConfigOverrides {
    pub command: Option<Mode>,
    pub preset: Option<String>,
    pub models: Option<usize>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub algorithms: Option<Vec<Algorithm>>,
    pub runs: Option<usize>,
    pub pulls: Option<usize>,
    pub seed: Option<u64>,
    pub c: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub v_max_e: Option<f64>,
    pub v_max_o: Option<f64>,
    pub gripper_radius: Option<f64>,
    pub xi: Option<f64>,
    pub sigma_tr: Option<f64>,
    pub sigma_obs: Option<f64>,
    pub system_noise: Option<f64>,
    pub model_noise: Option<f64>,
    pub scaled_similarity: Option<bool>,
    pub evaluate_regret: Option<bool>,
    pub output: Option<PathBuf>,
    pub jobs: Option<usize>,
}

macro_rules! with_value_fields {
    ($mac:ident!($($args:tt)*)) => {
        $mac!($($args)*; models, n, m, algorithms, runs, pulls, seed, c, beta, lambda, v_max_e, v_max_o,
            gripper_radius, xi, sigma_tr, sigma_obs, system_noise, model_noise, scaled_similarity,
            evaluate_regret, jobs)
    };
}

macro_rules! merge {
    ($hi:ident, $lo:ident; $($f:ident),*) => {
        ConfigOverrides {
            command: $hi.command.or($lo.command),
            preset: $hi.preset.or($lo.preset),
            output: $hi.output.or($lo.output),
            $($f: $hi.$f.or($lo.$f)),*
        }
    };
}

macro_rules! apply {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $(if let Some(v) = $src.$f { $dst.$f = v; })*
    };
}

impl ConfigOverrides {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::usage("config", format!("{}: {e}", path.display())))
    }

    /// Field-wise merge; values set in `self` win.
    pub fn or(self, base: ConfigOverrides) -> ConfigOverrides {
        let hi = self;
        let lo = base;
        with_value_fields!(merge!(hi, lo))
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl RunConfig {
    /// Defaults for `mode` and the named preset or scenario.
    pub fn defaults(mode: Mode, preset: &str) -> Result<Self> {
        match mode {
            Mode::Synth => {
                let p = if preset == "custom" {
                    BenchmarkPreset::small()
                } else {
                    BenchmarkPreset::by_name(preset)?
                };
                Ok(Self {
                    command: mode,
                    preset: preset.into(),
                    models: p.models,
                    n: p.n,
                    m: p.m,
                    algorithms: Algorithm::ALL.to_vec(),
                    runs: p.runs,
                    pulls: p.pulls,
                    seed: 0,
                    // The synthetic system has no rotations, obstacles or stretching.
                    c: 0.0,
                    beta: 0.0,
                    lambda: 0.0,
                    v_max_e: p.max_velocity,
                    v_max_o: 0.0,
                    gripper_radius: 0.0,
                    xi: 0.9,
                    sigma_tr: 1.0,
                    sigma_obs: 1.0,
                    system_noise: p.system_noise,
                    model_noise: p.model_noise,
                    scaled_similarity: false,
                    evaluate_regret: true,
                    output: None,
                    jobs: default_jobs(),
                })
            }
            Mode::Task => {
                let scenario: Scenario = preset.parse()?;
                let ctrl = scenario.controller_config();
                let grippers = match scenario {
                    Scenario::LineToArc => 1,
                    _ => 2,
                };
                Ok(Self {
                    command: mode,
                    preset: preset.into(),
                    models: 60,
                    n: 3 * CHAIN_POINTS,
                    m: 6 * grippers,
                    algorithms: Algorithm::ALL.to_vec(),
                    runs: 1,
                    pulls: 1000,
                    seed: 0,
                    c: ctrl.rotation_scale,
                    beta: ctrl.obstacle_scale,
                    lambda: ctrl.stretching_threshold,
                    v_max_e: ctrl.max_servo_velocity,
                    v_max_o: ctrl.max_obstacle_velocity,
                    gripper_radius: ctrl.gripper_radius,
                    xi: 0.9,
                    sigma_tr: 0.1,
                    sigma_obs: 0.01,
                    system_noise: 0.0,
                    model_noise: 0.0,
                    scaled_similarity: ctrl.scaled_similarity,
                    evaluate_regret: true,
                    output: None,
                    jobs: default_jobs(),
                })
            }
        }
    }

    /// Defaults for the selected mode, then `overrides` on top.
    pub fn resolve(mode: Mode, overrides: ConfigOverrides) -> Result<Self> {
        if let Some(cmd) = overrides.command {
            if cmd != mode {
                return Err(Error::usage("command", format!("config is for `{}`, invoked as `{}`", cmd.name(), mode.name())));
            }
        }
        let explicit_dims = overrides.models.is_some() || overrides.n.is_some() || overrides.m.is_some();
        let preset = match (&overrides.preset, mode) {
            (Some(p), _) => p.clone(),
            (None, Mode::Synth) if explicit_dims => "custom".into(),
            (None, Mode::Synth) => "small".into(),
            (None, Mode::Task) => Scenario::ChainSpread.name().into(),
        };
        let mut cfg = Self::defaults(mode, &preset)?;
        let task_defaults = (cfg.models, cfg.n, cfg.m);
        let src = overrides;
        if let Some(out) = src.output.clone() {
            cfg.output = Some(out);
        }
        with_value_fields!(apply!(cfg, src));
        if mode == Mode::Task {
            // Sizes follow from the scenario and the standard model set.
            (cfg.models, cfg.n, cfg.m) = task_defaults;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::usage(key, format!("must be positive, got {v}")))
            }
        };
        let non_negative = |key: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::usage(key, format!("must be non-negative, got {v}")))
            }
        };
        for (key, v) in [("models", self.models), ("runs", self.runs), ("pulls", self.pulls), ("jobs", self.jobs)] {
            if v == 0 {
                return Err(Error::usage(key, "must be at least 1"));
            }
        }
        if self.algorithms.is_empty() {
            return Err(Error::usage("algorithms", "at least one algorithm is required"));
        }
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(Error::usage("xi", format!("must lie in [0, 1], got {}", self.xi)));
        }
        positive("sigma-tr", self.sigma_tr)?;
        positive("sigma-obs", self.sigma_obs)?;
        positive("v-max-e", self.v_max_e)?;
        non_negative("c", self.c)?;
        non_negative("lambda", self.lambda)?;
        non_negative("gripper-radius", self.gripper_radius)?;
        non_negative("system-noise", self.system_noise)?;
        non_negative("model-noise", self.model_noise)?;
        match self.command {
            Mode::Synth => {
                if self.m == 0 || self.m >= self.n {
                    return Err(Error::usage("m", format!("need 0 < m < n, got n = {}, m = {}", self.n, self.m)));
                }
            }
            Mode::Task => {
                self.preset.parse::<Scenario>()?;
                positive("beta", self.beta)?;
                positive("v-max-o", self.v_max_o)?;
            }
        }
        Ok(())
    }

    pub fn bandit_params(&self) -> BanditParams {
        BanditParams {
            noise: KalmanNoise {
                transition: self.sigma_tr,
                observation: self.sigma_obs,
            },
            correlation: self.xi,
        }
    }

    pub fn benchmark_preset(&self) -> BenchmarkPreset {
        BenchmarkPreset {
            name: self.preset.clone(),
            models: self.models,
            n: self.n,
            m: self.m,
            pulls: self.pulls,
            runs: self.runs,
            system_noise: self.system_noise,
            model_noise: self.model_noise,
            max_velocity: self.v_max_e,
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        self.preset.parse()
    }

    pub fn task_options(&self) -> Result<TaskOptions> {
        let mut options = TaskOptions::for_scenario(self.scenario()?, self.pulls);
        options.controller = ControllerConfig {
            rotation_scale: self.c,
            obstacle_scale: self.beta,
            stretching_threshold: self.lambda,
            max_servo_velocity: self.v_max_e,
            max_obstacle_velocity: self.v_max_o,
            gripper_radius: self.gripper_radius,
            scaled_similarity: self.scaled_similarity,
        };
        options.bandit = self.bandit_params();
        options.evaluate_regret = self.evaluate_regret;
        Ok(options)
    }

    /// The configuration as overrides, e.g. for writing a config file.
    pub fn to_overrides(&self) -> ConfigOverrides {
        serde_json::from_value(serde_json::to_value(self).expect("config serializes"))
            .expect("every resolved key is an override key")
    }
}
