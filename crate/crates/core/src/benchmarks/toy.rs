//! Deterministic kinematic stand-in for a physics simulator.
//!
//! A chain of points moves under a hidden diminishing-rigidity Jacobian whose
//! parameters are not on the model grid. Targets are produced by driving the
//! hidden dynamics with a scripted command, so every task is reachable.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerConfig, Obstacle, TargetSet, World};
use crate::error::{Error, Result};
use crate::geometry::{GripperPose, GripperTwist, RobotCommand};
use crate::models::{
    chain_edges, geodesic_distance_matrix, rigidity_jacobian, DiminishingRigidityParams, GeodesicDistanceMatrix,
    RigidityGeometry, Scene,
};

pub const CHAIN_POINTS: usize = 20;
pub const CHAIN_SPACING: f64 = 0.025;
pub const TOY_DT: f64 = 0.01;
/// Hidden rigidity of the simulated object.
pub const TRUE_RIGIDITY: DiminishingRigidityParams = DiminishingRigidityParams {
    k_trans: 10.0,
    k_rot: 10.0,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    LineToArc,
    ChainSpread,
    ChainAroundObstacle,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::LineToArc, Scenario::ChainSpread, Scenario::ChainAroundObstacle];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::LineToArc => "line-to-arc",
            Scenario::ChainSpread => "chain-spread",
            Scenario::ChainAroundObstacle => "chain-around-obstacle",
        }
    }

    /// Controller parameters: rope column for the single-gripper task,
    /// coverage column for the two-gripper tasks.
    pub fn controller_config(self) -> ControllerConfig {
        match self {
            Scenario::LineToArc => ControllerConfig::rope_winding(),
            _ => ControllerConfig::table_coverage(),
        }
    }

    /// Rigidity of the Jacobian that seeds the adaptive models.
    pub fn adaptive_seed_k(self) -> f64 {
        match self {
            Scenario::LineToArc => 10.0,
            _ => 14.0,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            Error::usage(
                "scenario",
                format!("unknown scenario `{s}` (expected line-to-arc, chain-spread or chain-around-obstacle)"),
            )
        })
    }
}

#[derive(Debug, Clone)]
pub struct ToyWorld {
    scenario: Scenario,
    points: Vec<Vector3<f64>>,
    grippers: Vec<GripperPose>,
    grasped: Vec<Vec<usize>>,
    targets: TargetSet,
    obstacles: Vec<Obstacle>,
    relaxed: Arc<GeodesicDistanceMatrix>,
    geometry: Arc<RigidityGeometry>,
    truth: DiminishingRigidityParams,
    dt: f64,
    frozen: Option<Arc<DMatrix<f64>>>,
}

fn chain(spacing: f64) -> Vec<Vector3<f64>> {
    let mid = (CHAIN_POINTS - 1) as f64 / 2.0;
    (0..CHAIN_POINTS).map(|i| Vector3::new((i as f64 - mid) * spacing, 0.0, 0.0)).collect()
}

impl ToyWorld {
    /// Builds a world with placeholder targets; `targets` are then produced
    /// by driving the hidden dynamics with `script` for `script_steps`.
    fn scripted(
        scenario: Scenario,
        relaxed_points: &[Vector3<f64>],
        points: Vec<Vector3<f64>>,
        grasped: Vec<Vec<usize>>,
        obstacles: Vec<Obstacle>,
        script: &RobotCommand,
        script_steps: usize,
    ) -> Result<Self> {
        let relaxed = Arc::new(geodesic_distance_matrix(relaxed_points, &chain_edges(relaxed_points))?);
        let geometry = Arc::new(RigidityGeometry::new(&relaxed, &grasped)?);
        let grippers = grasped.iter().map(|held| GripperPose::from_translation(points[held[0]])).collect();
        let mut world = Self {
            scenario,
            targets: TargetSet::new(points.clone())?,
            points,
            grippers,
            grasped,
            obstacles,
            relaxed,
            geometry,
            truth: TRUE_RIGIDITY,
            dt: TOY_DT,
            frozen: None,
        };
        let mut driven = world.clone();
        for _ in 0..script_steps {
            driven.step(script)?;
        }
        world.targets = TargetSet::new(driven.points)?;
        Ok(world)
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn geometry(&self) -> Arc<RigidityGeometry> {
        self.geometry.clone()
    }

    pub fn grasped(&self) -> &[Vec<usize>] {
        &self.grasped
    }

    pub fn scene(&self) -> Scene<'_> {
        Scene {
            grippers: &self.grippers,
            points: &self.points,
        }
    }

    pub fn true_jacobian(&self) -> Result<DMatrix<f64>> {
        match &self.frozen {
            Some(j) => Ok(j.as_ref().clone()),
            None => rigidity_jacobian(&self.truth, &self.geometry, &self.grippers, &self.points),
        }
    }

    /// Keep the current hidden Jacobian for all later steps, making the
    /// world exactly linear in the command.
    pub fn freeze_jacobian(&mut self) -> Result<()> {
        self.frozen = None;
        self.frozen = Some(Arc::new(self.true_jacobian()?));
        Ok(())
    }
}

/// Builds one of the named scenarios.
pub fn make_toy_world(scenario: Scenario) -> Result<ToyWorld> {
    let relaxed = chain(CHAIN_SPACING);
    let last = CHAIN_POINTS - 1;
    let translate = |v: [[f64; 3]; 2]| {
        RobotCommand::new(
            v.iter()
                .map(|t| GripperTwist::new(Vector3::from(*t), Vector3::zeros()))
                .collect(),
        )
    };
    match scenario {
        Scenario::LineToArc => {
            // Gripper at one end sweeps sideways while turning about z.
            let script = RobotCommand::new(vec![GripperTwist::new(Vector3::new(0.0, 0.1, 0.0), Vector3::new(0.0, 0.0, 1.0))]);
            ToyWorld::scripted(scenario, &relaxed, relaxed.clone(), vec![vec![0]], vec![], &script, 60)
        }
        Scenario::ChainSpread => {
            // Compressed chain pulled apart and lifted by both ends.
            let compressed = chain(CHAIN_SPACING / 2.0);
            let table = Obstacle::plane(Vector3::new(0.0, 0.0, -0.03), Vector3::z())?;
            let script = translate([[-0.12, 0.05, 0.0], [0.12, 0.05, 0.0]]);
            ToyWorld::scripted(scenario, &relaxed, compressed, vec![vec![0], vec![last]], vec![table], &script, 100)
        }
        Scenario::ChainAroundObstacle => {
            // Chain carried sideways past a sphere beside one gripper's path.
            let post = Obstacle::sphere(Vector3::new(relaxed[last].x + 0.0625, 0.075, 0.0), 0.03)?;
            let script = translate([[0.0, 0.15, 0.0], [0.0, 0.15, 0.0]]);
            ToyWorld::scripted(scenario, &relaxed, relaxed.clone(), vec![vec![0], vec![last]], vec![post], &script, 100)
        }
    }
}

impl World for ToyWorld {
    fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    fn grippers(&self) -> &[GripperPose] {
        &self.grippers
    }

    fn targets(&self) -> &TargetSet {
        &self.targets
    }

    fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    fn relaxed_distances(&self) -> &GeodesicDistanceMatrix {
        &self.relaxed
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    /// `P += J_true(q) q' dt`, then integrate the gripper poses.
    fn step(&mut self, command: &RobotCommand) -> Result<()> {
        if command.gripper_count() != self.grippers.len() {
            return Err(Error::dim(format!(
                "{} gripper twists for {} grippers",
                command.gripper_count(),
                self.grippers.len()
            )));
        }
        if !command.twists.iter().all(GripperTwist::is_finite) {
            return Err(Error::Numerical("non-finite gripper command".into()));
        }
        let q: DVector<f64> = command.to_vector();
        let j = self.true_jacobian()?;
        let delta = j * q * self.dt;
        for (i, p) in self.points.iter_mut().enumerate() {
            *p += delta.fixed_rows::<3>(3 * i);
        }
        for (pose, twist) in self.grippers.iter_mut().zip(&command.twists) {
            *pose = pose.integrate(twist, self.dt);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenarios_parse_and_build() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
            let w = make_toy_world(s).unwrap();
            assert_eq!(w.points().len(), CHAIN_POINTS);
            assert!(w.error() > 0.0);
            assert!(w.min_obstacle_distance(0.01) > 0.0);
        }
        assert!("rope".parse::<Scenario>().is_err());
    }

    #[test]
    fn zero_command_leaves_state_unchanged() {
        let mut w = make_toy_world(Scenario::ChainSpread).unwrap();
        let before = w.points().to_vec();
        w.step(&RobotCommand::zeros(2)).unwrap();
        assert_eq!(w.points(), &before[..]);
    }

    #[test]
    fn grasped_point_moves_with_gripper() {
        let mut w = make_toy_world(Scenario::ChainSpread).unwrap();
        let before = w.points()[0];
        let twist = GripperTwist::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros());
        w.step(&RobotCommand::new(vec![twist, GripperTwist::default()])).unwrap();
        assert_close!((w.points()[0] - before).x, TOY_DT, 1e-15);
        assert_eq!(w.grippers()[0].translation.x, before.x + TOY_DT);
    }

    #[test]
    fn frozen_world_is_linear() {
        let mut w = make_toy_world(Scenario::LineToArc).unwrap();
        w.freeze_jacobian().unwrap();
        let start = w.clone();
        let q = RobotCommand::new(vec![GripperTwist::new(Vector3::new(0.1, -0.2, 0.05), Vector3::new(0.3, 0.0, -0.7))]);
        let back = RobotCommand::new(q.twists.iter().map(|t| GripperTwist::new(-t.v, -t.omega)).collect());
        w.step(&q).unwrap();
        w.step(&back).unwrap();
        for (a, b) in w.points().iter().zip(start.points()) {
            assert!((a - b).norm() < 1e-9);
        }
        for (a, b) in w.grippers().iter().zip(start.grippers()) {
            assert!((a.translation - b.translation).norm() < 1e-9);
            assert!((a.rotation.matrix() - b.rotation.matrix()).amax() < 1e-9);
        }
    }
}
