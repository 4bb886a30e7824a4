//! Deformation models: the prediction / command-generation interface and the
//! Jacobian-based families used as bandit arms.

use std::borrow::Cow;
use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GripperPose;
use crate::solver::{solve_ball_constrained_wls, WeightedLeastSquaresProblem};

mod adaptive;
mod geodesic;
mod rigidity;

pub use adaptive::{
    broyden_update, AdaptiveJacobianModel, AdaptiveJacobianState, BroydenStatus,
    MIN_COMMAND_NORM_SQ,
};
pub use geodesic::{chain_edges, geodesic_distance_matrix, mesh_edges, Edge, GeodesicDistanceMatrix};
pub use rigidity::{
    diminishing_rigidity_jacobian, rigidity_jacobian, DiminishingRigidityModel,
    DiminishingRigidityParams, RigidityGeometry,
};

/// Sensed configuration a model is evaluated at.
#[derive(Debug, Clone, Copy)]
pub struct Scene<'a> {
    pub grippers: &'a [GripperPose],
    pub points: &'a [Vector3<f64>],
}

impl Scene<'static> {
    /// For models that ignore the configuration.
    pub fn empty() -> Self {
        Scene {
            grippers: &[],
            points: &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandLimits {
    pub max_norm: f64,
    /// When set to `c > 0`, the command norm is the `c`-scaled twist norm
    /// instead of the plain Euclidean norm of the stacked vector.
    pub rotation_scale: Option<f64>,
}

impl CommandLimits {
    pub fn euclidean(max_norm: f64) -> Self {
        Self {
            max_norm,
            rotation_scale: None,
        }
    }
}

/// `psi(P_d, W)`: weighted least-squares command under the velocity limit.
pub fn command_from_jacobian(
    jacobian: &DMatrix<f64>,
    desired: &DVector<f64>,
    weights: &DVector<f64>,
    limits: &CommandLimits,
) -> Result<DVector<f64>> {
    match limits.rotation_scale {
        Some(c) if c > 0.0 => {
            if !jacobian.ncols().is_multiple_of(6) {
                return Err(Error::dim("c-scaled norm needs a 6G-column Jacobian"));
            }
            // Substitute q = S z with ||z|| = ||q||_c.
            let scale = DVector::from_fn(jacobian.ncols(), |k, _| {
                if k % 6 < 3 {
                    1.0
                } else {
                    1.0 / c.sqrt()
                }
            });
            let mut scaled = jacobian.clone();
            for (mut col, s) in scaled.column_iter_mut().zip(scale.iter()) {
                col *= *s;
            }
            let problem = WeightedLeastSquaresProblem::new(
                scaled,
                desired.clone(),
                weights.clone(),
                limits.max_norm,
            )?;
            let z = solve_ball_constrained_wls(&problem)?;
            Ok(z.component_mul(&scale))
        }
        _ => {
            let problem = WeightedLeastSquaresProblem::new(
                jacobian.clone(),
                desired.clone(),
                weights.clone(),
                limits.max_norm,
            )?;
            solve_ball_constrained_wls(&problem)
        }
    }
}

/// A deformation model `phi(q) = J q` paired with its command function.
pub trait DeformationModel: Debug + Send {
    fn label(&self) -> String;

    fn jacobian(&self, scene: &Scene<'_>) -> Result<Cow<'_, DMatrix<f64>>>;

    fn predict(&self, scene: &Scene<'_>, command: &DVector<f64>) -> Result<DVector<f64>> {
        let j = self.jacobian(scene)?;
        if j.ncols() != command.len() {
            return Err(Error::dim(format!(
                "model expects {} command entries, got {}",
                j.ncols(),
                command.len()
            )));
        }
        Ok(j.as_ref() * command)
    }

    fn command(
        &self,
        scene: &Scene<'_>,
        desired: &DVector<f64>,
        weights: &DVector<f64>,
        limits: &CommandLimits,
    ) -> Result<DVector<f64>> {
        let j = self.jacobian(scene)?;
        command_from_jacobian(&j, desired, weights, limits)
    }

    /// Feeds back an executed command and the observed object velocity.
    /// Returns whether the model changed.
    fn observe(&mut self, _command: &DVector<f64>, _observed: &DVector<f64>) -> Result<bool> {
        Ok(false)
    }
}

pub type BoxedModel = Box<dyn DeformationModel>;

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantJacobianModel {
    jacobian: DMatrix<f64>,
}

impl ConstantJacobianModel {
    pub fn new(jacobian: DMatrix<f64>) -> Self {
        Self { jacobian }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.jacobian
    }
}

impl DeformationModel for ConstantJacobianModel {
    fn label(&self) -> String {
        format!("constant({}x{})", self.jacobian.nrows(), self.jacobian.ncols())
    }

    fn jacobian(&self, _scene: &Scene<'_>) -> Result<Cow<'_, DMatrix<f64>>> {
        Ok(Cow::Borrowed(&self.jacobian))
    }
}

/// `count` copies of `truth`, each perturbed elementwise by `U(-h, h)`.
pub fn noisy_constant_models(
    truth: &DMatrix<f64>,
    count: usize,
    half_width: f64,
    rng: &mut impl Rng,
) -> Vec<ConstantJacobianModel> {
    (0..count)
        .map(|_| ConstantJacobianModel::new(perturb_uniform(truth, half_width, rng)))
        .collect()
}

pub(crate) fn perturb_uniform(m: &DMatrix<f64>, half_width: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    // Column-major fill order, so a given stream always yields the same matrix.
    let mut out = m.clone();
    if half_width > 0.0 {
        for x in out.iter_mut() {
            *x += rng.random_range(-half_width..=half_width);
        }
    }
    out
}

/// Parameter grids for an object model set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSetConfig {
    pub k_trans: Vec<f64>,
    pub k_rot: Vec<f64>,
    pub learning_rates: Vec<f64>,
    /// Rigidity parameters of the Jacobian that seeds every adaptive model.
    pub adaptive_seed: DiminishingRigidityParams,
}

impl ModelSetConfig {
    /// 7 x 7 rigidity grid over {0, 4, ..., 24} plus 11 adaptive models with
    /// learning rates 1, 0.1, ..., 1e-10.
    pub fn standard(seed_k: f64) -> Self {
        let grid: Vec<f64> = (0..7).map(|i| 4.0 * i as f64).collect();
        Self {
            k_trans: grid.clone(),
            k_rot: grid,
            learning_rates: (0..11).map(|i| 10f64.powi(-i)).collect(),
            adaptive_seed: DiminishingRigidityParams {
                k_trans: seed_k,
                k_rot: seed_k,
            },
        }
    }

    pub fn model_count(&self) -> usize {
        self.k_trans.len() * self.k_rot.len() + self.learning_rates.len()
    }
}

/// Builds the model set in a fixed order: rigidity models row-major over
/// `(k_trans, k_rot)`, then adaptive models by descending learning rate.
pub fn model_set_factory(
    config: &ModelSetConfig,
    geometry: Arc<RigidityGeometry>,
    initial: &Scene<'_>,
) -> Result<Vec<BoxedModel>> {
    if config.model_count() == 0 {
        return Err(Error::Config("model set grids are empty".into()));
    }
    let mut models: Vec<BoxedModel> = Vec::with_capacity(config.model_count());
    for &kt in &config.k_trans {
        for &kr in &config.k_rot {
            let params = DiminishingRigidityParams::new(kt, kr)?;
            models.push(Box::new(DiminishingRigidityModel::new(params, geometry.clone())));
        }
    }
    if !config.learning_rates.is_empty() {
        let seed = rigidity_jacobian(
            &DiminishingRigidityParams::new(config.adaptive_seed.k_trans, config.adaptive_seed.k_rot)?,
            &geometry,
            initial.grippers,
            initial.points,
        )?;
        let mut rates = config.learning_rates.clone();
        rates.sort_by(|a, b| b.total_cmp(a));
        for rate in rates {
            let state = AdaptiveJacobianState::new(seed.clone(), rate)?;
            models.push(Box::new(AdaptiveJacobianModel::new(state)));
        }
    }
    Ok(models)
}
