use nalgebra::{Matrix3x6, Matrix6, Vector3, Vector6};

use super::ControllerConfig;
use crate::error::{Error, Result};
use crate::geometry::{rigid_point_jacobian, GripperPose, GripperTwist, RobotCommand};

/// Distances at or below zero (penetration) are reported as this value.
pub const MIN_PROXIMITY_DISTANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Obstacle {
    Sphere { center: Vector3<f64>, radius: f64 },
    /// Half-space boundary; `normal` points into free space.
    Plane { point: Vector3<f64>, normal: Vector3<f64> },
}

impl Obstacle {
    pub fn sphere(center: Vector3<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidInput(format!("sphere radius {radius} must be positive")));
        }
        Ok(Obstacle::Sphere { center, radius })
    }

    /// The normal is normalized; it must be non-zero.
    pub fn plane(point: Vector3<f64>, normal: Vector3<f64>) -> Result<Self> {
        let n = normal.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidInput("plane normal must be non-zero".into()));
        }
        Ok(Obstacle::Plane {
            point,
            normal: normal / n,
        })
    }

    /// Signed clearance between a sphere of radius `r` at `x` and the
    /// obstacle; negative when they overlap.
    pub fn signed_distance(&self, x: &Vector3<f64>, r: f64) -> f64 {
        self.closest(x, r).0
    }

    /// Signed clearance, outward unit direction and closest obstacle point.
    fn closest(&self, x: &Vector3<f64>, r: f64) -> (f64, Vector3<f64>, Vector3<f64>) {
        match *self {
            Obstacle::Sphere { center, radius } => {
                let offset = x - center;
                let dist = offset.norm();
                let dir = if dist > 0.0 { offset / dist } else { Vector3::z() };
                (dist - radius - r, dir, center + dir * radius)
            }
            Obstacle::Plane { point, normal } => {
                let height = (x - point).dot(&normal);
                (height - r, normal, x - normal * height)
            }
        }
    }
}

/// Closest approach between one gripper and the obstacle set.
#[derive(Debug, Clone, PartialEq)]
pub struct Proximity {
    /// Rigid point Jacobian at the gripper's closest point.
    pub jacobian: Matrix3x6<f64>,
    /// Unit direction from the obstacle toward the gripper.
    pub direction: Vector3<f64>,
    pub distance: f64,
    pub gripper_point: Vector3<f64>,
    pub obstacle_point: Vector3<f64>,
}

pub fn proximity(gripper: &GripperPose, gripper_radius: f64, obstacles: &[Obstacle]) -> Result<Proximity> {
    let x = gripper.translation;
    let (distance, direction, obstacle_point) = obstacles
        .iter()
        .map(|o| o.closest(&x, gripper_radius))
        .fold(None, |best: Option<(f64, Vector3<f64>, Vector3<f64>)>, cur| match best {
            Some(b) if b.0 <= cur.0 => Some(b),
            _ => Some(cur),
        })
        .ok_or_else(|| Error::InvalidInput("proximity query needs at least one obstacle".into()))?;
    let gripper_point = x - direction * gripper_radius;
    Ok(Proximity {
        jacobian: rigid_point_jacobian(gripper, &gripper_point),
        direction,
        distance: distance.max(MIN_PROXIMITY_DISTANCE),
        gripper_point,
        obstacle_point,
    })
}

/// `J^+ = J^T (J J^T)^{-1}`; `J J^T = I + S S^T` is always invertible for a
/// rigid point Jacobian.
fn pseudo_inverse(j: &Matrix3x6<f64>) -> Result<nalgebra::Matrix6x3<f64>> {
    let jjt = j * j.transpose();
    let inv = jjt
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular point Jacobian".into()))?;
    Ok(j.transpose() * inv)
}

/// Blend each gripper's command with motion away from its nearest obstacle,
/// weighted by `gamma = exp(-beta d)`.
pub fn obstacle_repulsion(
    desired: &RobotCommand,
    obstacles: &[Obstacle],
    grippers: &[GripperPose],
    config: &ControllerConfig,
) -> Result<RobotCommand> {
    if desired.gripper_count() != grippers.len() {
        return Err(Error::dim(format!(
            "{} gripper twists for {} grippers",
            desired.gripper_count(),
            grippers.len()
        )));
    }
    if obstacles.is_empty() {
        return Ok(desired.clone());
    }
    let twists = desired
        .twists
        .iter()
        .zip(grippers)
        .map(|(twist, pose)| {
            let prox = proximity(pose, config.gripper_radius, obstacles)?;
            let gamma = (-config.obstacle_scale * prox.distance).exp();
            let q = twist.to_vector();
            if gamma == 0.0 {
                return Ok(*twist);
            }
            let pinv = pseudo_inverse(&prox.jacobian)?;
            let away = pinv * prox.direction;
            let away_norm = away.norm();
            let avoid = if away_norm > 0.0 {
                away * (config.max_obstacle_velocity / away_norm)
            } else {
                Vector6::zeros()
            };
            let nullspace = Matrix6::identity() - pinv * prox.jacobian;
            let blended = (avoid + nullspace * q) * gamma + q * (1.0 - gamma);
            Ok(GripperTwist::from_vector(&blended))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RobotCommand::new(twists))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config() -> ControllerConfig {
        ControllerConfig {
            gripper_radius: 0.0,
            ..ControllerConfig::table_coverage()
        }
    }

    #[test]
    fn proximity_examples() {
        let g = GripperPose::from_translation(Vector3::new(0.2, 0.0, 0.0));
        let sphere = Obstacle::sphere(Vector3::zeros(), 0.1).unwrap();
        let p = proximity(&g, 0.0, &[sphere]).unwrap();
        assert_close!(p.distance, 0.1, 1e-15);
        assert_eq!(p.direction, Vector3::x());

        let g = GripperPose::from_translation(Vector3::new(0.0, 0.0, 0.3));
        let plane = Obstacle::plane(Vector3::zeros(), Vector3::z()).unwrap();
        let p = proximity(&g, 0.0, &[plane]).unwrap();
        assert_close!(p.distance, 0.3, 1e-15);
        assert_eq!(p.direction, Vector3::z());

        assert!(proximity(&g, 0.0, &[]).is_err());
    }

    #[test]
    fn proximity_is_minimum_over_obstacles() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let g = GripperPose::from_translation(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
            let obstacles = [
                Obstacle::sphere(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)), 0.05).unwrap(),
                Obstacle::plane(Vector3::new(0.0, 0.0, -1.5), Vector3::z()).unwrap(),
            ];
            let brute = obstacles
                .iter()
                .map(|o| proximity(&g, 0.01, std::slice::from_ref(o)).unwrap().distance)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(proximity(&g, 0.01, &obstacles).unwrap().distance, brute);
        }
    }

    #[test]
    fn penetration_is_clamped() {
        let g = GripperPose::from_translation(Vector3::new(0.0, 0.0, -0.1));
        let plane = Obstacle::plane(Vector3::zeros(), Vector3::z()).unwrap();
        let p = proximity(&g, 0.01, &[plane]).unwrap();
        assert_eq!(p.distance, MIN_PROXIMITY_DISTANCE);
        assert_eq!(p.direction, Vector3::z());
    }

    #[test]
    fn far_field_leaves_command_unchanged() {
        let cfg = config();
        let d = 1000.0 / cfg.obstacle_scale;
        let g = GripperPose::from_translation(Vector3::new(0.0, 0.0, d));
        let plane = Obstacle::plane(Vector3::zeros(), Vector3::z()).unwrap();
        let q = RobotCommand::new(vec![GripperTwist::new(Vector3::new(0.1, -0.2, -0.3), Vector3::new(0.4, 0.0, 1.0))]);
        let out = obstacle_repulsion(&q, &[plane], &[g], &cfg).unwrap();
        assert!((out.to_vector() - q.to_vector()).amax() <= 1e-9);
    }

    #[test]
    fn contact_pushes_away_at_full_speed() {
        let cfg = config();
        let g = GripperPose::from_translation(Vector3::new(0.0, 0.0, 0.0));
        let plane = Obstacle::plane(Vector3::zeros(), Vector3::z()).unwrap();
        let q = RobotCommand::new(vec![GripperTwist::new(Vector3::new(0.05, 0.0, -0.3), Vector3::zeros())]);
        let out = obstacle_repulsion(&q, &[plane], &[g], &cfg).unwrap();
        let t = out.twists[0];
        let gamma = (-cfg.obstacle_scale * MIN_PROXIMITY_DISTANCE).exp();
        // Translation at the gripper center has no nullspace.
        assert_close!(t.v.z, gamma * cfg.max_obstacle_velocity - (1.0 - gamma) * 0.3, 1e-15);
        assert_close!(t.v.x, (1.0 - gamma) * 0.05, 1e-15);
    }

    #[test]
    fn nullspace_projector_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let pose = GripperPose::from_translation(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
            let point = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let j = rigid_point_jacobian(&pose, &point);
            let pinv = pseudo_inverse(&j).unwrap();
            let n = Matrix6::identity() - pinv * j;
            assert!((n * n - n).amax() < 1e-10);
            assert!((j * pinv - nalgebra::Matrix3::identity()).amax() < 1e-12);
        }
    }

    #[test]
    fn contact_never_moves_toward_obstacle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = ControllerConfig {
            gripper_radius: 0.02,
            ..config()
        };
        for _ in 0..500 {
            let center = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let dir = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            let g = GripperPose::from_translation(center + dir * (0.1 + cfg.gripper_radius));
            let sphere = Obstacle::sphere(center, 0.1).unwrap();
            let q = RobotCommand::from_vector(&nalgebra::DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0))).unwrap();
            let out = obstacle_repulsion(&q, &[sphere], &[g], &cfg).unwrap();
            let prox = proximity(&g, cfg.gripper_radius, &[sphere]).unwrap();
            let gamma = (-cfg.obstacle_scale * prox.distance).exp();
            // Only the (1 - gamma) share of the raw command can point inward.
            let approach = prox.direction.dot(&(prox.jacobian * out.twists[0].to_vector()));
            let raw = prox.direction.dot(&(prox.jacobian * q.twists[0].to_vector()));
            assert!(approach >= (1.0 - gamma) * raw.min(0.0) - 1e-9);
        }
    }
}
