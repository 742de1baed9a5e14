//! Pinhole projection between point clouds and depth maps.

use crate::se3::RigidTransform;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Near-plane cutoff in meters; points at or closer than this are dropped.
pub const Z_MIN: f64 = 0.1;

/// Densification window used when none is given.
pub const DEFAULT_DENSIFY_WINDOW: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("densification window must be odd and positive, got {0}")]
    InvalidWindow(usize),
    #[error("intensity has {intensity} entries for {points} points")]
    IntensityLength { points: usize, intensity: usize },
    #[error("non-finite point coordinate at index {0}")]
    NonFinitePoint(usize),
}

/// Pinhole camera model in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, ProjectionError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// The rectified left color camera of the KITTI 2011_09_26 drives.
    pub fn kitti_like() -> Self {
        Self {
            fx: 721.5377,
            fy: 721.5377,
            cx: 609.5593,
            cy: 172.854,
            width: 1242,
            height: 375,
        }
    }

    pub fn validate(&self) -> Result<(), ProjectionError> {
        let bad = |msg: String| Err(ProjectionError::InvalidIntrinsics(msg));
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return bad(format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return bad(format!("cx={} outside (0, {})", self.cx, self.width));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return bad(format!("cy={} outside (0, {})", self.cy, self.height));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Ordered 3D points in meters, with optional per-point intensity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub intensity: Option<Vec<f32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            intensity: None,
        }
    }

    pub fn with_intensity(points: Vec<Vector3<f64>>, intensity: Vec<f32>) -> Result<Self, ProjectionError> {
        if points.len() != intensity.len() {
            return Err(ProjectionError::IntensityLength {
                points: points.len(),
                intensity: intensity.len(),
            });
        }
        Ok(Self {
            points,
            intensity: Some(intensity),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<(), ProjectionError> {
        match self.points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            Some(i) => Err(ProjectionError::NonFinitePoint(i)),
            None => Ok(()),
        }
    }
}

/// One point that landed in front of the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub source_index: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProjectedPoints {
    pub records: Vec<ProjectedPoint>,
}

impl ProjectedPoints {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Per-pixel metric depth, row-major. `None` marks a missing pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<Option<f64>>,
    /// Index of the cloud point that produced each pixel, when known.
    pub provenance: Option<Vec<Option<usize>>>,
}

impl DepthMap {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            depth: vec![None; width as usize * height as usize],
            provenance: None,
        }
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        if x >= self.width || y >= self.height {
            return None;
        }
        self.depth[self.index(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, depth: Option<f64>) {
        let i = self.index(x, y);
        self.depth[i] = depth;
    }

    pub fn present_count(&self) -> usize {
        self.depth.iter().filter(|d| d.is_some()).count()
    }

    /// `(x, y, depth)` for every present pixel in row-major order.
    pub fn iter_present(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        let w = self.width as usize;
        self.depth
            .iter()
            .enumerate()
            .filter_map(move |(i, d)| d.map(|d| ((i % w) as u32, (i / w) as u32, d)))
    }
}

/// Maps every point through `t`, keeping order and intensities.
pub fn transform_cloud(pc: &PointCloud, t: &RigidTransform) -> PointCloud {
    PointCloud {
        points: pc.points.iter().map(|p| t.transform_point(p)).collect(),
        intensity: pc.intensity.clone(),
    }
}

/// Projects `pc` through extrinsics `t` and intrinsics `k`. Points with
/// camera-frame depth at or below [`Z_MIN`] are dropped; pixel bounds are
/// not checked here.
pub fn project(pc: &PointCloud, k: &CameraIntrinsics, t: &RigidTransform) -> ProjectedPoints {
    let records = pc
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let c = t.transform_point(p);
            project_camera_point(&c, k).map(|(u, v)| ProjectedPoint {
                u,
                v,
                depth: c.z,
                source_index: i,
            })
        })
        .collect();
    ProjectedPoints { records }
}

#[inline]
pub(crate) fn project_camera_point(c: &Vector3<f64>, k: &CameraIntrinsics) -> Option<(f64, f64)> {
    if c.z > Z_MIN {
        Some((k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy))
    } else {
        None
    }
}

/// Z-buffers projected records into a depth map: nearest-integer pixels,
/// smallest depth wins, ties keep the earlier record.
pub fn rasterize(pp: &ProjectedPoints, k: &CameraIntrinsics) -> DepthMap {
    let mut dm = DepthMap::empty(k.width, k.height);
    let mut prov: Vec<Option<usize>> = vec![None; dm.depth.len()];
    let (w, h) = (k.width as f64, k.height as f64);
    for rec in &pp.records {
        let (pu, pv) = (rec.u.round(), rec.v.round());
        if !(pu >= 0.0 && pu < w && pv >= 0.0 && pv < h) {
            continue;
        }
        let i = dm.index(pu as u32, pv as u32);
        match dm.depth[i] {
            Some(d) if d <= rec.depth => {}
            _ => {
                dm.depth[i] = Some(rec.depth);
                prov[i] = Some(rec.source_index);
            }
        }
    }
    dm.provenance = Some(prov);
    dm
}

/// Lifts every present pixel back to a 3D point in the camera frame.
pub fn back_project(dm: &DepthMap, k: &CameraIntrinsics) -> PointCloud {
    let points = dm
        .iter_present()
        .map(|(x, y, d)| {
            Vector3::new((x as f64 - k.cx) * d / k.fx, (y as f64 - k.cy) * d / k.fy, d)
        })
        .collect();
    PointCloud::new(points)
}

/// Same points, in the same order, as `back_project(&rasterize(pp, k), k)`,
/// without materializing the full image.
pub fn back_project_nearest(pp: &ProjectedPoints, k: &CameraIntrinsics) -> PointCloud {
    let (w, h) = (k.width as f64, k.height as f64);
    // Depths are > Z_MIN, so their bit patterns order like the values.
    let mut hits: Vec<(u64, u64)> = pp
        .records
        .iter()
        .filter_map(|rec| {
            let (pu, pv) = (rec.u.round(), rec.v.round());
            (pu >= 0.0 && pu < w && pv >= 0.0 && pv < h)
                .then(|| (pv as u64 * k.width as u64 + pu as u64, rec.depth.to_bits()))
        })
        .collect();
    hits.sort_unstable();
    hits.dedup_by_key(|hit| hit.0);
    let points = hits
        .iter()
        .map(|&(pix, bits)| {
            let d = f64::from_bits(bits);
            let (x, y) = ((pix % k.width as u64) as f64, (pix / k.width as u64) as f64);
            Vector3::new((x - k.cx) * d / k.fx, (y - k.cy) * d / k.fy, d)
        })
        .collect();
    PointCloud::new(points)
}

/// Stride-1 max-pool over a `window × window` neighborhood; pixels whose
/// neighborhood is entirely missing stay missing.
pub fn densify_maxpool(dm: &DepthMap, window: usize) -> Result<DepthMap, ProjectionError> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(ProjectionError::InvalidWindow(window));
    }
    if window == 1 {
        return Ok(dm.clone());
    }
    let r = window / 2;
    let (w, h) = (dm.width as usize, dm.height as usize);
    let max_opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    };

    // Max is separable: rows first, then columns.
    let mut rows = vec![None; w * h];
    for y in 0..h {
        let line = &dm.depth[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = line[lo..=hi].iter().copied().fold(None, max_opt);
        }
    }
    let mut out = DepthMap::empty(dm.width, dm.height);
    for x in 0..w {
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(h - 1);
            out.depth[y * w + x] = (lo..=hi).map(|yy| rows[yy * w + x]).fold(None, max_opt);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{RotationVector, TranslationVector};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(700.0, 700.0, 600.0, 180.0, 1200, 360).unwrap()
    }

    #[test]
    fn sparse_back_projection_matches_raster_path() {
        let mut pts = Vec::new();
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..4000 {
            // Coarse coordinates force many pixel collisions and equal depths.
            let z = 1.0 + (next() * 8.0).floor();
            pts.push(Vector3::new((next() - 0.5) * 2.0 * z, (next() - 0.5) * 0.8 * z, z));
        }
        pts.push(Vector3::new(0.0, 0.0, -1.0));
        let pc = PointCloud::new(pts);
        let pp = project(&pc, &k(), &RigidTransform::identity());
        let a = back_project(&rasterize(&pp, &k()), &k());
        let b = back_project_nearest(&pp, &k());
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn on_and_off_axis_points() {
        let pc = PointCloud::new(vec![Vector3::new(0.0, 0.0, 5.0), Vector3::new(1.0, 0.0, 5.0)]);
        let pp = project(&pc, &k(), &RigidTransform::identity());
        assert_eq!(pp.records[0], ProjectedPoint { u: 600.0, v: 180.0, depth: 5.0, source_index: 0 });
        assert_eq!(pp.records[1].u, 740.0);
        assert_eq!(pp.records[1].v, 180.0);
    }

    #[test]
    fn points_behind_or_at_near_plane_dropped() {
        let pc = PointCloud::new(vec![
            Vector3::new(0.0, 0.0, -5.0),
            Vector3::new(0.0, 0.0, Z_MIN),
            Vector3::new(0.0, 0.0, 0.2),
        ]);
        let pp = project(&pc, &k(), &RigidTransform::identity());
        assert_eq!(pp.len(), 1);
        assert_eq!(pp.records[0].source_index, 2);
    }

    #[test]
    fn transform_cloud_basics() {
        let pc = PointCloud::with_intensity(vec![Vector3::new(0.0, 0.0, 1.0)], vec![0.5]).unwrap();
        let moved = transform_cloud(&pc, &RigidTransform::translate(0.0, 0.0, 1.0));
        assert_eq!(moved.points[0], Vector3::new(0.0, 0.0, 2.0));
        assert_eq!(moved.intensity, Some(vec![0.5]));
        assert_eq!(transform_cloud(&pc, &RigidTransform::identity()), pc);
        assert!(PointCloud::with_intensity(vec![], vec![1.0]).is_err());
    }

    #[test]
    fn zbuffer_keeps_nearest() {
        let pp = ProjectedPoints {
            records: vec![
                ProjectedPoint { u: 10.2, v: 20.4, depth: 9.0, source_index: 0 },
                ProjectedPoint { u: 9.8, v: 19.6, depth: 4.0, source_index: 1 },
                ProjectedPoint { u: 10.0, v: 20.0, depth: 4.0, source_index: 2 },
            ],
        };
        let dm = rasterize(&pp, &k());
        assert_eq!(dm.get(10, 20), Some(4.0));
        assert_eq!(dm.provenance.as_ref().unwrap()[20 * 1200 + 10], Some(1));
        assert_eq!(dm.present_count(), 1);
    }

    #[test]
    fn rasterize_drops_out_of_bounds() {
        let pp = ProjectedPoints {
            records: vec![
                ProjectedPoint { u: -0.6, v: 3.0, depth: 1.0, source_index: 0 },
                ProjectedPoint { u: -0.4, v: 3.0, depth: 1.0, source_index: 1 },
                ProjectedPoint { u: 1199.6, v: 3.0, depth: 1.0, source_index: 2 },
                ProjectedPoint { u: 5.0, v: 359.4, depth: 1.0, source_index: 3 },
            ],
        };
        let dm = rasterize(&pp, &k());
        assert_eq!(dm.present_count(), 2);
        assert_eq!(dm.get(0, 3), Some(1.0));
        assert_eq!(dm.get(5, 359), Some(1.0));
        assert_eq!(rasterize(&ProjectedPoints::default(), &k()).present_count(), 0);
    }

    #[test]
    fn back_project_principal_point() {
        let mut dm = DepthMap::empty(1200, 360);
        dm.set(600, 180, Some(5.0));
        let pc = back_project(&dm, &k());
        assert_eq!(pc.points, vec![Vector3::new(0.0, 0.0, 5.0)]);
        assert!(back_project(&DepthMap::empty(4, 4), &k()).is_empty());
    }

    #[test]
    fn densify_windows() {
        let mut dm = DepthMap::empty(8, 6);
        dm.set(0, 0, Some(7.0));
        dm.set(4, 3, Some(7.0));
        assert_eq!(densify_maxpool(&dm, 1).unwrap(), dm);
        let out = densify_maxpool(&dm, 3).unwrap();
        for y in 2..=4 {
            for x in 3..=5 {
                assert_eq!(out.get(x, y), Some(7.0));
            }
        }
        assert_eq!(out.get(1, 1), Some(7.0));
        assert_eq!(out.get(2, 2), None);
        assert_eq!(out.present_count(), 4 + 9);
        assert_eq!(densify_maxpool(&dm, 4), Err(ProjectionError::InvalidWindow(4)));
        assert_eq!(densify_maxpool(&dm, 0), Err(ProjectionError::InvalidWindow(0)));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 2.0, 0.0, 4, 4).is_err());
        CameraIntrinsics::kitti_like().validate().unwrap();
    }

    #[test]
    fn factorized_projection_agrees() {
        let a = RigidTransform::from_parts(RotationVector::new(0.02, -0.01, 0.03), TranslationVector::new(0.1, 0.0, -0.2));
        let b = RigidTransform::from_parts(RotationVector::new(-0.01, 0.04, 0.0), TranslationVector::new(0.0, 0.3, 0.1));
        let pc = PointCloud::new((0..50).map(|i| Vector3::new(i as f64 * 0.1 - 2.5, 0.5, 6.0 + i as f64 * 0.05)).collect());
        let lhs = project(&pc, &k(), &a.compose(&b));
        let rhs = project(&transform_cloud(&pc, &b), &k(), &a);
        assert_eq!(lhs.len(), rhs.len());
        for (l, r) in lhs.records.iter().zip(&rhs.records) {
            assert_eq!(l.source_index, r.source_index);
            assert!((l.u - r.u).abs() < 1e-9 && (l.v - r.v).abs() < 1e-9 && (l.depth - r.depth).abs() < 1e-12);
        }
    }
}
