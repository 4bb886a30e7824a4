//! Gripper poses, twists and the scaled twist inner product.
//!
//! Grippers are free-floating rigid bodies. Twists are expressed in the
//! world frame: `v` is the velocity of the gripper origin and `omega` the
//! angular velocity about world axes through that origin.

use nalgebra::{DVector, Matrix3, Matrix3x6, Rotation3, Vector3, Vector6};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Right-handed cross-product matrix: `skew(x) * y == x.cross(&y)`.
pub fn skew(x: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -x.z, x.y, x.z, 0.0, -x.x, -x.y, x.x, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripperPose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl GripperPose {
    /// Builds a pose from a raw rotation matrix, rejecting anything that is
    /// not a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if !(ortho <= ORTHONORMAL_TOL && (det - 1.0).abs() <= ORTHONORMAL_TOL) {
            return Err(Error::InvalidInput(format!(
                "rotation is not orthonormal (|R^T R - I| = {ortho:e}, det = {det})"
            )));
        }
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("non-finite translation".into()));
        }
        Ok(Self {
            rotation: Rotation3::from_matrix_unchecked(rotation),
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation,
        }
    }

    /// Applies `twist` for `dt` seconds.
    pub fn integrate(&self, twist: &GripperTwist, dt: f64) -> Self {
        let delta = Rotation3::new(twist.omega * dt);
        let mut rotation = delta * self.rotation;
        rotation.renormalize();
        Self {
            rotation,
            translation: self.translation + twist.v * dt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GripperTwist {
    pub v: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl GripperTwist {
    pub fn new(v: Vector3<f64>, omega: Vector3<f64>) -> Self {
        Self { v, omega }
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self {
            v: x.fixed_rows::<3>(0).into_owned(),
            omega: x.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.v.x,
            self.v.y,
            self.v.z,
            self.omega.x,
            self.omega.y,
            self.omega.z,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().chain(self.omega.iter()).all(|x| x.is_finite())
    }
}

/// Stacked twists of all grippers, gripper-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RobotCommand {
    pub twists: Vec<GripperTwist>,
}

impl RobotCommand {
    pub fn new(twists: Vec<GripperTwist>) -> Self {
        Self { twists }
    }

    pub fn zeros(grippers: usize) -> Self {
        Self {
            twists: vec![GripperTwist::default(); grippers],
        }
    }

    pub fn gripper_count(&self) -> usize {
        self.twists.len()
    }

    /// Unpacks a `6G` vector laid out as `[v_1, w_1, v_2, w_2, ...]`.
    pub fn from_vector(x: &DVector<f64>) -> Result<Self> {
        if !x.len().is_multiple_of(6) {
            return Err(Error::dim(format!(
                "command vector length {} is not a multiple of 6",
                x.len()
            )));
        }
        let twists = (0..x.len() / 6)
            .map(|g| GripperTwist::from_vector(&x.fixed_rows::<6>(6 * g).into_owned()))
            .collect();
        Ok(Self { twists })
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(6 * self.twists.len());
        for (g, t) in self.twists.iter().enumerate() {
            x.fixed_rows_mut::<6>(6 * g).copy_from(&t.to_vector());
        }
        x
    }
}

/// `<a, b>_c = v_a . v_b + c * w_a . w_b`
pub fn twist_inner_product(a: &GripperTwist, b: &GripperTwist, c: f64) -> f64 {
    a.v.dot(&b.v) + c * a.omega.dot(&b.omega)
}

pub fn command_inner_product(a: &RobotCommand, b: &RobotCommand, c: f64) -> Result<f64> {
    if a.gripper_count() != b.gripper_count() {
        return Err(Error::dim(format!(
            "commands have {} and {} grippers",
            a.gripper_count(),
            b.gripper_count()
        )));
    }
    Ok(a.twists
        .iter()
        .zip(&b.twists)
        .map(|(x, y)| twist_inner_product(x, y, c))
        .sum())
}

pub fn command_norm(a: &RobotCommand, c: f64) -> f64 {
    a.twists
        .iter()
        .map(|t| twist_inner_product(t, t, c))
        .sum::<f64>()
        .max(0.0)
        .sqrt()
}

/// Jacobian mapping a gripper twist to the velocity of a world point rigidly
/// attached to that gripper: `[I | -skew(p - t)]`.
pub fn rigid_point_jacobian(pose: &GripperPose, point: &Vector3<f64>) -> Matrix3x6<f64> {
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    j.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-skew(&(point - pose.translation))));
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec3(rng: &mut impl Rng) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
    }

    fn random_twist(rng: &mut impl Rng) -> GripperTwist {
        GripperTwist::new(random_vec3(rng), random_vec3(rng))
    }

    #[test]
    fn twist_inner_product_examples() {
        let unit_v = GripperTwist::new(Vector3::x(), Vector3::zeros());
        let unit_w = GripperTwist::new(Vector3::zeros(), Vector3::x());
        assert_eq!(twist_inner_product(&unit_v, &unit_v, 0.0025), 1.0);
        assert_close!(twist_inner_product(&unit_w, &unit_w, 0.0025), 0.0025, 1e-18);
        assert_eq!(twist_inner_product(&unit_v, &unit_w, 0.7), 0.0);
    }

    #[test]
    fn command_inner_product_examples() {
        let unit = RobotCommand::new(vec![
            GripperTwist::new(Vector3::x(), Vector3::zeros()),
            GripperTwist::new(Vector3::y(), Vector3::zeros()),
        ]);
        assert_eq!(command_inner_product(&unit, &unit, 0.0).unwrap(), 2.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = RobotCommand::new((0..3).map(|_| random_twist(&mut rng)).collect());
        let neg = RobotCommand::from_vector(&(-a.to_vector())).unwrap();
        let c = 0.3;
        assert_close!(
            command_inner_product(&a, &neg, c).unwrap(),
            -command_norm(&a, c).powi(2),
            1e-12
        );

        // Flattened weighted dot product, written out element by element.
        let b = RobotCommand::new((0..3).map(|_| random_twist(&mut rng)).collect());
        let (fa, fb) = (a.to_vector(), b.to_vector());
        let mut expected = 0.0;
        for k in 0..fa.len() {
            let w = if k % 6 < 3 { 1.0 } else { c };
            expected += w * fa[k] * fb[k];
        }
        assert_close!(command_inner_product(&a, &b, c).unwrap(), expected, 1e-12);
    }

    #[test]
    fn command_inner_product_rejects_mismatch() {
        let a = RobotCommand::zeros(2);
        let b = RobotCommand::zeros(3);
        assert!(matches!(
            command_inner_product(&a, &b, 1.0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn rigid_jacobian_examples() {
        let pose = GripperPose::from_translation(Vector3::new(0.3, -0.2, 1.0));
        let j = rigid_point_jacobian(&pose, &pose.translation);
        let mut expected = Matrix3x6::zeros();
        expected.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
        assert_eq!(j, expected);

        let origin = GripperPose::from_translation(Vector3::zeros());
        let j = rigid_point_jacobian(&origin, &Vector3::x());
        let pdot = j * Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_close!((pdot - Vector3::y()).norm(), 0.0, 1e-15);
    }

    #[test]
    fn rigid_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..100 {
            let rot = Rotation3::new(random_vec3(&mut rng));
            let pose = GripperPose {
                rotation: rot,
                translation: random_vec3(&mut rng),
            };
            let point = pose.translation + random_vec3(&mut rng);
            let twist = random_twist(&mut rng);
            // Transport the point with the gripper under exp-map perturbation.
            let transport = |s: f64| {
                let moved = pose.integrate(&twist, s);
                let body = pose.rotation.inverse() * (point - pose.translation);
                moved.translation + moved.rotation * body
            };
            let fd = (transport(h) - transport(-h)) / (2.0 * h);
            let analytic = rigid_point_jacobian(&pose, &point) * twist.to_vector();
            assert!((fd - analytic).amax() < 1e-6, "fd {fd} vs {analytic}");
        }
    }

    #[test]
    fn pose_validation() {
        assert!(GripperPose::new(Matrix3::identity() * 2.0, Vector3::zeros()).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(GripperPose::new(reflect, Vector3::zeros()).is_err());
        let rot = *Rotation3::new(Vector3::new(0.1, 0.2, 0.3)).matrix();
        assert!(GripperPose::new(rot, Vector3::zeros()).is_ok());
    }

    #[test]
    fn command_vector_layout() {
        let x = DVector::from_fn(12, |i, _| i as f64);
        let cmd = RobotCommand::from_vector(&x).unwrap();
        assert_eq!(cmd.twists[1].v, Vector3::new(6.0, 7.0, 8.0));
        assert_eq!(cmd.twists[0].omega, Vector3::new(3.0, 4.0, 5.0));
        assert_eq!(cmd.to_vector(), x);
        assert!(RobotCommand::from_vector(&DVector::zeros(7)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn twist() -> impl Strategy<Value = GripperTwist> {
            prop::array::uniform6(-10.0f64..10.0).prop_map(|a| {
                GripperTwist::new(Vector3::new(a[0], a[1], a[2]), Vector3::new(a[3], a[4], a[5]))
            })
        }

        proptest! {
            #[test]
            fn self_product_non_negative(a in twist(), c in 0.0f64..5.0) {
                prop_assert!(twist_inner_product(&a, &a, c) >= 0.0);
            }

            #[test]
            fn symmetric(a in twist(), b in twist(), c in 0.0f64..5.0) {
                prop_assert_eq!(twist_inner_product(&a, &b, c), twist_inner_product(&b, &a, c));
            }

            #[test]
            fn cauchy_schwarz(
                a in prop::collection::vec(twist(), 3),
                b in prop::collection::vec(twist(), 3),
                c in 0.0f64..5.0,
            ) {
                let (a, b) = (RobotCommand::new(a), RobotCommand::new(b));
                let lhs = command_inner_product(&a, &b, c).unwrap().abs();
                let rhs = command_norm(&a, c) * command_norm(&b, c);
                prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
            }
        }
    }
}
