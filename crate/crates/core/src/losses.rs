//! Supervision losses: transformation, depth-map reprojection, Chamfer
//! point-cloud loss, and their weighted total.

use crate::camera_projection::{
    back_project, back_project_nearest, densify_maxpool, project, rasterize, CameraIntrinsics, PointCloud,
    ProjectedPoints, ProjectionError,
};
use crate::dataset::LoadedSample;
use crate::nn_grid::NearestNeighborGrid;
use crate::se3::{compose, RigidTransform, RotationVector, TranslationVector};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("no point projects in front of the camera under both transforms")]
    NoCorrespondence,
    #[error("{0} point cloud is empty")]
    EmptyCloud(&'static str),
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("loss weights must be finite and nonnegative")]
    InvalidWeights,
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

/// Weights of the total loss and the rotation scale inside the
/// transformation term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_t: f64,
    pub lambda_d: f64,
    pub lambda_p: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    /// Initial training weights `(λt, λd, λp) = (4, 1, 40)`, `α = 1`.
    fn default() -> Self {
        Self {
            lambda_t: 4.0,
            lambda_d: 1.0,
            lambda_p: 40.0,
            alpha: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if [self.lambda_t, self.lambda_d, self.lambda_p, self.alpha].into_iter().all(ok) {
            Ok(())
        } else {
            Err(LossError::InvalidWeights)
        }
    }

    pub fn has_geometric_term(&self) -> bool {
        self.lambda_d > 0.0 || self.lambda_p > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub transformation: f64,
    pub depth_map: f64,
    pub point_cloud: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(w: &LossWeights, transformation: f64, depth_map: f64, point_cloud: f64) -> Self {
        Self {
            transformation,
            depth_map,
            point_cloud,
            total: w.lambda_t * transformation + w.lambda_d * depth_map + w.lambda_p * point_cloud,
        }
    }
}

/// `α·‖r_pred − r_gt‖ + ‖t_pred − t_gt‖` (plain norms, not squared).
pub fn transformation_loss(
    r_pred: &RotationVector,
    r_gt: &RotationVector,
    t_pred: &TranslationVector,
    t_gt: &TranslationVector,
    alpha: f64,
) -> f64 {
    alpha * (r_pred.0 - r_gt.0).norm() + (t_pred.0 - t_gt.0).norm()
}

/// Mean squared pixel distance between the two projections of each point,
/// over points that land in front of the camera in both.
pub fn reprojection_loss(pred: &ProjectedPoints, gt: &ProjectedPoints) -> Result<f64, LossError> {
    // Both record lists are sorted by source index.
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    let mut n = 0usize;
    while i < pred.records.len() && j < gt.records.len() {
        let (a, b) = (&pred.records[i], &gt.records[j]);
        match a.source_index.cmp(&b.source_index) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                let (du, dv) = (a.u - b.u, a.v - b.v);
                sum += du * du + dv * dv;
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    if n == 0 {
        return Err(LossError::NoCorrespondence);
    }
    Ok(sum / n as f64)
}

/// Depth-map loss between `y_pred = P·T_pred·base·x` and
/// `y_gt = P·T_gt·base·x`, where `base = T_rand·T`.
pub fn depth_map_loss(
    pc: &PointCloud,
    k: &CameraIntrinsics,
    base: &RigidTransform,
    t_pred: &RigidTransform,
    t_gt: &RigidTransform,
) -> Result<f64, LossError> {
    if pc.is_empty() {
        return Err(LossError::EmptyCloud("input"));
    }
    let pred = project(pc, k, &compose(t_pred, base));
    let gt = project(pc, k, &compose(t_gt, base));
    reprojection_loss(&pred, &gt)
}

fn mean_nearest_sq(queries: &[Vector3<f64>], index: &NearestNeighborGrid) -> f64 {
    let d: Vec<f64> = queries.par_iter().map(|q| index.nearest(q).1).collect();
    d.iter().sum::<f64>() / queries.len() as f64
}

/// Symmetric Chamfer distance with per-set means of squared
/// nearest-neighbor distances.
pub fn chamfer_loss(s_pred: &PointCloud, s_gt: &PointCloud) -> Result<f64, LossError> {
    let gt_index = NearestNeighborGrid::new(&s_gt.points).ok_or(LossError::EmptyCloud("ground-truth"))?;
    chamfer_against(s_pred.points.clone(), &gt_index)
}

fn chamfer_against(s_pred: Vec<Vector3<f64>>, gt_index: &NearestNeighborGrid) -> Result<f64, LossError> {
    let pred_index = NearestNeighborGrid::from_vec(s_pred).ok_or(LossError::EmptyCloud("predicted"))?;
    Ok(mean_nearest_sq(pred_index.points(), gt_index) + mean_nearest_sq(gt_index.points(), &pred_index))
}

/// Options that change how the geometric losses are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossOptions {
    /// Max-pool window applied to both depth maps before back-projection.
    pub densify_window: Option<usize>,
}

/// Evaluates losses for many predictions on one sample, caching everything
/// that depends only on the ground truth.
pub struct LossEvaluator<'a> {
    sample: &'a LoadedSample,
    weights: LossWeights,
    options: LossOptions,
    base: RigidTransform,
    gt_projection: ProjectedPoints,
    gt_index: NearestNeighborGrid,
}

impl<'a> LossEvaluator<'a> {
    pub fn new(sample: &'a LoadedSample, weights: LossWeights, options: LossOptions) -> Result<Self, LossError> {
        weights.validate()?;
        if sample.cloud.is_empty() {
            return Err(LossError::EmptyCloud("input"));
        }
        let rec = &sample.record;
        let base = rec.miscalibrated_extrinsics();
        let gt_ext = compose(&rec.target, &base);
        let gt_projection = project(&sample.cloud, &rec.intrinsics, &gt_ext);
        let gt_cloud = back_projected(&gt_projection, &rec.intrinsics, options.densify_window)?;
        let gt_index = NearestNeighborGrid::from_vec(gt_cloud.points).ok_or(LossError::EmptyCloud("ground-truth"))?;
        Ok(Self {
            sample,
            weights,
            options,
            base,
            gt_projection,
            gt_index,
        })
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    fn projection(&self, prediction: &RigidTransform) -> ProjectedPoints {
        let rec = &self.sample.record;
        project(&self.sample.cloud, &rec.intrinsics, &compose(prediction, &self.base))
    }

    fn point_cloud_term(&self, pred_projection: &ProjectedPoints) -> Result<f64, LossError> {
        let k = &self.sample.record.intrinsics;
        let pred_cloud = back_projected(pred_projection, k, self.options.densify_window)?;
        chamfer_against(pred_cloud.points, &self.gt_index)
    }

    /// All three components and their weighted sum.
    pub fn evaluate(&self, prediction: &RigidTransform) -> Result<LossBreakdown, LossError> {
        let rec = &self.sample.record;
        let lt = transformation_loss(
            &prediction.rotvec(),
            &rec.target.rotvec(),
            &prediction.translation(),
            &rec.target.translation(),
            self.weights.alpha,
        );
        let pp = self.projection(prediction);
        let ld = reprojection_loss(&pp, &self.gt_projection)?;
        let lp = self.point_cloud_term(&pp)?;
        Ok(LossBreakdown::combine(&self.weights, lt, ld, lp))
    }

    /// `λd·Ld + λp·Lp`, skipping zero-weighted terms. This is what the
    /// direct optimizer minimizes; the transformation term needs the
    /// unknown ground truth and is left out.
    pub fn geometric(&self, prediction: &RigidTransform) -> Result<f64, LossError> {
        let pp = self.projection(prediction);
        let mut total = 0.0;
        if self.weights.lambda_d > 0.0 {
            total += self.weights.lambda_d * reprojection_loss(&pp, &self.gt_projection)?;
        }
        if self.weights.lambda_p > 0.0 {
            total += self.weights.lambda_p * self.point_cloud_term(&pp)?;
        }
        Ok(total)
    }
}

fn back_projected(
    pp: &ProjectedPoints,
    k: &CameraIntrinsics,
    densify_window: Option<usize>,
) -> Result<PointCloud, LossError> {
    match densify_window {
        Some(w) => Ok(back_project(&densify_maxpool(&rasterize(pp, k), w)?, k)),
        None => Ok(back_project_nearest(pp, k)),
    }
}

/// Total loss of `prediction` (the predicted `T_gt`) on `sample`.
pub fn total_loss(sample: &LoadedSample, prediction: &RigidTransform, w: &LossWeights) -> Result<LossBreakdown, LossError> {
    LossEvaluator::new(sample, *w, LossOptions::default())?.evaluate(prediction)
}

/// 6-parameter view `[rx, ry, rz, tx, ty, tz]` of a transform.
pub fn to_params(t: &RigidTransform) -> [f64; 6] {
    let (r, tr) = (t.rotvec().0, t.translation().0);
    [r.x, r.y, r.z, tr.x, tr.y, tr.z]
}

pub fn from_params(p: &[f64; 6]) -> RigidTransform {
    RigidTransform::from_parts(
        RotationVector::new(p[0], p[1], p[2]),
        TranslationVector::new(p[3], p[4], p[5]),
    )
}

/// Central differences of `f` at `x` with step `h` on every coordinate.
pub fn central_difference<E, F>(mut f: F, x: &[f64; 6], h: f64) -> Result<[f64; 6], E>
where
    F: FnMut(&[f64; 6]) -> Result<f64, E>,
{
    let mut g = [0.0; 6];
    for i in 0..6 {
        let mut hi = *x;
        let mut lo = *x;
        hi[i] += h;
        lo[i] -= h;
        g[i] = (f(&hi)? - f(&lo)?) / (2.0 * h);
    }
    Ok(g)
}

/// Finite-difference gradient of the total loss with respect to the
/// prediction's rotation vector and translation.
pub fn loss_gradient_fd(
    sample: &LoadedSample,
    at: &RigidTransform,
    w: &LossWeights,
    h: f64,
) -> Result<[f64; 6], LossError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(LossError::InvalidStep(h));
    }
    let eval = LossEvaluator::new(sample, *w, LossOptions::default())?;
    central_difference(|p| eval.evaluate(&from_params(p)).map(|b| b.total), &to_params(at), h)
}
