use nalgebra::{DMatrix, DVector, Vector3};
use serde::Serialize;

use super::{alignment_error, combine_terms, error_correction, obstacle_repulsion, stretching_correction};
use super::{ControllerConfig, DesiredMotion, Obstacle, TargetSet};
use crate::bandits::{anneal_eta, command_similarity_matrix, compute_reward, Bandit, RewardObservation};
use crate::error::{Error, Result};
use crate::geometry::{GripperPose, RobotCommand};
use crate::models::{BoxedModel, CommandLimits, GeodesicDistanceMatrix, Scene};
use crate::rng::StreamRng;
use crate::solver::solve_calls;

/// A sensed, commandable environment holding one deformable object.
pub trait World: Clone {
    fn points(&self) -> &[Vector3<f64>];
    fn grippers(&self) -> &[GripperPose];
    fn targets(&self) -> &TargetSet;
    fn obstacles(&self) -> &[Obstacle];
    /// Geodesic distances of the object at rest.
    fn relaxed_distances(&self) -> &GeodesicDistanceMatrix;
    /// Duration a velocity command is applied for.
    fn dt(&self) -> f64;
    fn step(&mut self, command: &RobotCommand) -> Result<()>;

    fn error(&self) -> f64 {
        alignment_error(self.points(), self.targets())
    }

    /// Smallest signed gripper clearance; infinite without obstacles.
    fn min_obstacle_distance(&self, gripper_radius: f64) -> f64 {
        self.grippers()
            .iter()
            .flat_map(|g| self.obstacles().iter().map(move |o| o.signed_distance(&g.translation, gripper_radius)))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub arm: usize,
    pub reward: f64,
    /// Best reward any arm would have earned; NaN when not evaluated.
    pub best_reward: f64,
    /// Error after the step.
    pub error: f64,
    pub eta: f64,
    pub cum_regret: f64,
    /// Solves issued to choose and build the executed command.
    pub solver_calls: u64,
    pub min_obstacle_distance: f64,
}

/// Closed-loop controller state for one trial.
#[derive(Debug)]
pub struct TaskRunner<W> {
    world: W,
    models: Vec<BoxedModel>,
    bandit: Bandit,
    config: ControllerConfig,
    rng: StreamRng,
    eta: f64,
    step: usize,
    cum_regret: f64,
    evaluate_regret: bool,
}

impl<W: World> TaskRunner<W> {
    pub fn new(world: W, models: Vec<BoxedModel>, bandit: Bandit, config: ControllerConfig, rng: StreamRng) -> Result<Self> {
        config.validate()?;
        if models.is_empty() {
            return Err(Error::Config("model set is empty".into()));
        }
        if bandit.arms() != models.len() {
            return Err(Error::Config(format!(
                "bandit has {} arms for {} models",
                bandit.arms(),
                models.len()
            )));
        }
        Ok(Self {
            world,
            models,
            bandit,
            config,
            rng,
            eta: 1.0,
            step: 0,
            cum_regret: 0.0,
            evaluate_regret: false,
        })
    }

    /// Also evaluate every arm on a copy of the world to report regret.
    pub fn with_regret_evaluation(mut self, on: bool) -> Self {
        self.evaluate_regret = on;
        self
    }

    pub fn world(&self) -> &W {
        &self.world
    }

    pub fn bandit(&self) -> &Bandit {
        &self.bandit
    }

    pub fn models(&self) -> &[BoxedModel] {
        &self.models
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    fn limits(&self) -> CommandLimits {
        CommandLimits {
            max_norm: self.config.max_servo_velocity,
            rotation_scale: (self.config.rotation_scale > 0.0).then_some(self.config.rotation_scale),
        }
    }

    pub fn desired_motion(&self) -> Result<DesiredMotion> {
        let points = self.world.points();
        let e = error_correction(points, self.world.targets());
        let s = stretching_correction(self.world.relaxed_distances(), self.config.stretching_threshold, points)?;
        combine_terms(&e, &s)
    }

    fn model_command(&self, m: usize, desired: &DesiredMotion) -> Result<DVector<f64>> {
        let scene = Scene {
            grippers: self.world.grippers(),
            points: self.world.points(),
        };
        self.models[m].command(&scene, &desired.delta, &desired.weights, &self.limits())
    }

    fn repulse(&self, command: &DVector<f64>) -> Result<RobotCommand> {
        let q = RobotCommand::from_vector(command)?;
        obstacle_repulsion(&q, self.world.obstacles(), self.world.grippers(), &self.config)
    }

    fn trial_reward(&self, command: &RobotCommand) -> Result<f64> {
        let mut world = self.world.clone();
        let before = world.error();
        world.step(command)?;
        Ok(compute_reward(before, world.error()))
    }

    /// One iteration: select, command, execute, reward, learn.
    pub fn main_loop_step(&mut self) -> Result<StepRecord> {
        let arm = self.bandit.select(&mut self.rng);
        let desired = self.desired_motion()?;

        let calls_before = solve_calls();
        let proposals: Vec<Option<DVector<f64>>> = if self.bandit.algorithm().uses_similarity() {
            (0..self.models.len())
                .map(|m| self.model_command(m, &desired).map(Some))
                .collect::<Result<_>>()?
        } else {
            (0..self.models.len())
                .map(|m| if m == arm { self.model_command(m, &desired).map(Some) } else { Ok(None) })
                .collect::<Result<_>>()?
        };
        let solver_calls = solve_calls() - calls_before;
        let chosen = proposals[arm].as_ref().expect("chosen arm always has a command");
        let executed = self.repulse(chosen)?;

        let best_reward = if self.evaluate_regret {
            let mut best = f64::NEG_INFINITY;
            for (m, proposal) in proposals.iter().enumerate() {
                let q = match proposal {
                    Some(q) => q.clone(),
                    None => self.model_command(m, &desired)?,
                };
                best = best.max(self.trial_reward(&self.repulse(&q)?)?);
            }
            Some(best)
        } else {
            None
        };

        let before_points = self.world.points().to_vec();
        let before = self.world.error();
        self.world.step(&executed)?;
        let after = self.world.error();
        let reward = compute_reward(before, after);
        if !reward.is_finite() {
            return Err(Error::Numerical(format!("non-finite error after step {}", self.step)));
        }

        self.eta = anneal_eta(self.eta, reward);
        let similarity: Option<DMatrix<f64>> = if self.bandit.algorithm().uses_similarity() {
            let commands = proposals
                .iter()
                .map(|q| RobotCommand::from_vector(q.as_ref().expect("all arms proposed")))
                .collect::<Result<Vec<_>>>()?;
            let c = if self.config.scaled_similarity { self.config.rotation_scale } else { 1.0 };
            Some(command_similarity_matrix(&commands, c))
        } else {
            None
        };
        self.bandit
            .update(RewardObservation { arm, reward }, self.eta, similarity.as_ref())?;

        let dt = self.world.dt();
        let q = executed.to_vector();
        let observed = DVector::from_iterator(
            3 * before_points.len(),
            self.world
                .points()
                .iter()
                .zip(&before_points)
                .flat_map(|(a, b)| ((a - b) / dt).iter().copied().collect::<Vec<_>>()),
        );
        for model in &mut self.models {
            model.observe(&q, &observed)?;
        }

        let best_reward = best_reward.unwrap_or(f64::NAN);
        if best_reward.is_finite() {
            self.cum_regret += best_reward - reward;
        }
        let record = StepRecord {
            step: self.step,
            arm,
            reward,
            best_reward,
            error: after,
            eta: self.eta,
            cum_regret: self.cum_regret,
            solver_calls,
            min_obstacle_distance: self.world.min_obstacle_distance(self.config.gripper_radius),
        };
        self.step += 1;
        Ok(record)
    }

    pub fn run(&mut self, steps: usize) -> Result<Vec<StepRecord>> {
        (0..steps).map(|_| self.main_loop_step()).collect()
    }
}
