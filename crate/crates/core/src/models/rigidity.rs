use std::borrow::Cow;
use std::sync::Arc;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::{DeformationModel, GeodesicDistanceMatrix, Scene};
use crate::error::{Error, Result};
use crate::geometry::{rigid_point_jacobian, GripperPose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiminishingRigidityParams {
    pub k_trans: f64,
    pub k_rot: f64,
}

impl DiminishingRigidityParams {
    pub fn new(k_trans: f64, k_rot: f64) -> Result<Self> {
        if !(k_trans >= 0.0 && k_rot >= 0.0) || !k_trans.is_finite() || !k_rot.is_finite() {
            return Err(Error::Config(format!(
                "rigidity parameters must be finite and non-negative (k_trans = {k_trans}, k_rot = {k_rot})"
            )));
        }
        Ok(Self { k_trans, k_rot })
    }

    /// `(w_trans, w_rot)` at distance `d` from the gripper.
    pub fn weights(&self, d: f64) -> (f64, f64) {
        ((-self.k_trans * d).exp(), (-self.k_rot * d).exp())
    }
}

/// Distance from every point to every gripper, measured as the relaxed
/// geodesic distance to the nearest point held by that gripper.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidityGeometry {
    distances: DMatrix<f64>,
}

impl RigidityGeometry {
    pub fn new(geodesic: &GeodesicDistanceMatrix, grasped: &[Vec<usize>]) -> Result<Self> {
        let p = geodesic.len();
        let mut distances = DMatrix::zeros(p, grasped.len());
        for (g, held) in grasped.iter().enumerate() {
            if held.is_empty() {
                return Err(Error::Config(format!("gripper {g} grasps no points")));
            }
            if let Some(&bad) = held.iter().find(|&&i| i >= p) {
                return Err(Error::Config(format!(
                    "gripper {g} grasps point {bad}, object has {p}"
                )));
            }
            for i in 0..p {
                distances[(i, g)] = held
                    .iter()
                    .map(|&k| geodesic.get(i, k))
                    .fold(f64::INFINITY, f64::min);
            }
        }
        Ok(Self { distances })
    }

    pub fn point_count(&self) -> usize {
        self.distances.nrows()
    }

    pub fn gripper_count(&self) -> usize {
        self.distances.ncols()
    }

    pub fn distance(&self, point: usize, gripper: usize) -> f64 {
        self.distances[(point, gripper)]
    }
}

/// Assembles the `3P x 6G` diminishing-rigidity Jacobian for the current
/// gripper poses and point positions.
pub fn rigidity_jacobian(
    params: &DiminishingRigidityParams,
    geometry: &RigidityGeometry,
    grippers: &[GripperPose],
    points: &[Vector3<f64>],
) -> Result<DMatrix<f64>> {
    let (p, g) = (geometry.point_count(), geometry.gripper_count());
    if grippers.len() != g || points.len() != p {
        return Err(Error::dim(format!(
            "geometry is {p} points x {g} grippers, scene has {} points x {} grippers",
            points.len(),
            grippers.len()
        )));
    }
    let mut j = DMatrix::zeros(3 * p, 6 * g);
    for (gi, pose) in grippers.iter().enumerate() {
        for (i, point) in points.iter().enumerate() {
            let (wt, wr) = params.weights(geometry.distance(i, gi));
            let rigid = rigid_point_jacobian(pose, point);
            let mut block = j.fixed_view_mut::<3, 6>(3 * i, 6 * gi);
            block
                .fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&(rigid.fixed_view::<3, 3>(0, 0) * wt));
            block
                .fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&(rigid.fixed_view::<3, 3>(0, 3) * wr));
        }
    }
    Ok(j)
}

pub fn diminishing_rigidity_jacobian(
    params: &DiminishingRigidityParams,
    geodesic: &GeodesicDistanceMatrix,
    grippers: &[GripperPose],
    grasped: &[Vec<usize>],
    points: &[Vector3<f64>],
) -> Result<DMatrix<f64>> {
    let geometry = RigidityGeometry::new(geodesic, grasped)?;
    rigidity_jacobian(params, &geometry, grippers, points)
}

#[derive(Debug, Clone)]
pub struct DiminishingRigidityModel {
    params: DiminishingRigidityParams,
    geometry: Arc<RigidityGeometry>,
}

impl DiminishingRigidityModel {
    pub fn new(params: DiminishingRigidityParams, geometry: Arc<RigidityGeometry>) -> Self {
        Self { params, geometry }
    }

    pub fn params(&self) -> DiminishingRigidityParams {
        self.params
    }
}

impl DeformationModel for DiminishingRigidityModel {
    fn label(&self) -> String {
        format!(
            "diminishing-rigidity(k_trans={}, k_rot={})",
            self.params.k_trans, self.params.k_rot
        )
    }

    fn jacobian(&self, scene: &Scene<'_>) -> Result<Cow<'_, DMatrix<f64>>> {
        rigidity_jacobian(&self.params, &self.geometry, scene.grippers, scene.points).map(Cow::Owned)
    }
}
