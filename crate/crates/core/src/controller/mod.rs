//! Desired-motion terms, obstacle repulsion and the closed-loop main step.
//!
//! Per step the controller pulls every object point that is nearest to a
//! target toward it, adds a pairwise restoring motion for over-stretched
//! pairs, asks the selected model for a gripper command, blends in obstacle
//! avoidance and executes the result. The resulting drop in alignment error
//! is the reward fed back to the bandit.

mod repulsion;
mod runner;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

pub use repulsion::{obstacle_repulsion, proximity, Obstacle, Proximity, MIN_PROXIMITY_DISTANCE};
pub use runner::{StepRecord, TaskRunner, World};

use crate::error::{Error, Result};
use crate::models::GeodesicDistanceMatrix;

/// Static task target points.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    targets: Vec<Vector3<f64>>,
}

impl TargetSet {
    pub fn new(targets: Vec<Vector3<f64>>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidInput("target set is empty".into()));
        }
        if !targets.iter().all(|t| t.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidInput("non-finite target".into()));
        }
        Ok(Self { targets })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Stacked per-point desired velocity (3P) and per-point weights (P).
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredMotion {
    pub delta: DVector<f64>,
    pub weights: DVector<f64>,
}

impl DesiredMotion {
    pub fn zeros(points: usize) -> Self {
        Self {
            delta: DVector::zeros(3 * points),
            weights: DVector::zeros(points),
        }
    }

    pub fn point_count(&self) -> usize {
        self.weights.len()
    }

    pub fn velocity(&self, i: usize) -> Vector3<f64> {
        self.delta.fixed_rows::<3>(3 * i).into_owned()
    }

    fn add_velocity(&mut self, i: usize, v: &Vector3<f64>) {
        let mut row = self.delta.fixed_rows_mut::<3>(3 * i);
        row += v;
    }

    fn raise_weight(&mut self, i: usize, w: f64) {
        self.weights[i] = self.weights[i].max(w);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Rotational weight `c` of the twist inner product.
    pub rotation_scale: f64,
    /// Obstacle avoidance decay `beta` (1/m).
    pub obstacle_scale: f64,
    /// Stretching threshold `lambda` (m).
    pub stretching_threshold: f64,
    /// Servoing command limit `v_max^e`.
    pub max_servo_velocity: f64,
    /// Obstacle avoidance command magnitude `v_max^o`.
    pub max_obstacle_velocity: f64,
    /// Grippers are treated as spheres of this radius (m).
    pub gripper_radius: f64,
    /// Use the `c`-scaled inner product for command similarity.
    pub scaled_similarity: bool,
}

impl ControllerConfig {
    pub fn rope_winding() -> Self {
        Self {
            rotation_scale: 0.0025,
            obstacle_scale: 200.0,
            stretching_threshold: 0.005,
            max_servo_velocity: 0.2,
            max_obstacle_velocity: 0.2,
            gripper_radius: 0.01,
            scaled_similarity: true,
        }
    }

    pub fn table_coverage() -> Self {
        Self {
            obstacle_scale: 1000.0,
            stretching_threshold: 0.03,
            ..Self::rope_winding()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        if !positive(self.obstacle_scale) {
            return Err(Error::Config("obstacle scale must be positive".into()));
        }
        if !non_negative(self.stretching_threshold) {
            return Err(Error::Config("stretching threshold must be non-negative".into()));
        }
        if !positive(self.max_servo_velocity) || !positive(self.max_obstacle_velocity) {
            return Err(Error::Config("velocity limits must be positive".into()));
        }
        if !non_negative(self.rotation_scale) || !non_negative(self.gripper_radius) {
            return Err(Error::Config("rotation scale and gripper radius must be non-negative".into()));
        }
        Ok(())
    }
}

/// Index of the point nearest to `x`; the lowest index wins ties.
fn nearest(points: &[Vector3<f64>], x: &Vector3<f64>) -> Option<(usize, f64)> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, (p - x).norm_squared()))
        .fold(None, |best, (i, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((i, d)),
        })
        .map(|(i, d)| (i, d.sqrt()))
}

/// Alignment error: sum over targets of the distance to the nearest point.
pub fn alignment_error(points: &[Vector3<f64>], targets: &TargetSet) -> f64 {
    targets
        .points()
        .iter()
        .map(|t| nearest(points, t).map_or(f64::INFINITY, |(_, d)| d))
        .sum()
}

/// Largest pairwise excess of current over relaxed distance.
pub fn max_stretch(points: &[Vector3<f64>], relaxed: &GeodesicDistanceMatrix) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            worst = worst.max((points[j] - points[i]).norm() - relaxed.get(i, j));
        }
    }
    worst
}

/// Pull the nearest object point toward each target.
pub fn error_correction(points: &[Vector3<f64>], targets: &TargetSet) -> DesiredMotion {
    let mut motion = DesiredMotion::zeros(points.len());
    for t in targets.points() {
        if let Some((k, dist)) = nearest(points, t) {
            motion.add_velocity(k, &(t - points[k]));
            motion.raise_weight(k, dist);
        }
    }
    motion
}

/// Pairwise restoring motion for pairs stretched more than `threshold`
/// beyond their relaxed geodesic distance.
pub fn stretching_correction(
    relaxed: &GeodesicDistanceMatrix,
    threshold: f64,
    points: &[Vector3<f64>],
) -> Result<DesiredMotion> {
    let p = points.len();
    if relaxed.len() != p {
        return Err(Error::dim(format!("{} relaxed distances for {p} points", relaxed.len())));
    }
    let mut motion = DesiredMotion::zeros(p);
    for i in 0..p {
        for j in i + 1..p {
            let diff = points[j] - points[i];
            let excess = diff.norm() - relaxed.get(i, j);
            if excess > threshold {
                let v = diff * (excess / 2.0);
                motion.add_velocity(i, &v);
                motion.add_velocity(j, &-v);
                motion.raise_weight(i, excess);
                motion.raise_weight(j, excess);
            }
        }
    }
    Ok(motion)
}

/// Stretching term plus the part of the error term orthogonal to it.
pub fn combine_terms(error: &DesiredMotion, stretching: &DesiredMotion) -> Result<DesiredMotion> {
    let p = error.point_count();
    if stretching.point_count() != p || error.delta.len() != 3 * p || stretching.delta.len() != 3 * p {
        return Err(Error::dim("error and stretching terms cover different point counts"));
    }
    let mut out = DesiredMotion::zeros(p);
    for i in 0..p {
        let s = stretching.velocity(i);
        let e = error.velocity(i);
        let s_sq = s.norm_squared();
        let along = if s_sq > 0.0 { s * (e.dot(&s) / s_sq) } else { Vector3::zeros() };
        out.add_velocity(i, &(s + e - along));
    }
    out.weights = &error.weights + &stretching.weights;
    Ok(out)
}
