//! KITTI raw ingestion, synthetic scenes, miscalibration synthesis and the
//! dataset manifest.

use crate::camera_projection::{CameraIntrinsics, PointCloud, ProjectionError};
use crate::se3::{
    compose, invert, sample_random_transform, MiscalibRange, RigidTransform, Se3Error,
};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Orthonormality tolerance for rotations read from KITTI calibration text.
pub const KITTI_ORTHONORMAL_TOL: f64 = 1e-4;

/// Bytes per velodyne record: x, y, z, reflectance as little-endian f32.
pub const VELODYNE_RECORD_BYTES: usize = 16;

/// Tolerance for the `target ∘ miscalibration = I` law.
pub const INVERSE_LAW_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("truncated velodyne file: {len} bytes is not a multiple of 16")]
    TruncatedVelodyne { len: usize },
    #[error("calibration key {0} not found")]
    MissingKey(String),
    #[error("calibration key {key}: malformed number {token:?}")]
    MalformedFloat { key: String, token: String },
    #[error("calibration key {key}: expected {expected} values, found {found}")]
    WrongValueCount {
        key: String,
        expected: usize,
        found: usize,
    },
    #[error("calibration key {key}: rotation not orthonormal (residual {residual:.3e})")]
    NonOrthonormal { key: String, residual: f64 },
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("invalid scene spec: {0}")]
    InvalidScene(String),
    #[error("invalid synthesis request: {0}")]
    InvalidRequest(String),
    #[error("manifest parse error: {0}")]
    ManifestParse(String),
    #[error("unsupported manifest schema version {found} (supported: {supported})")]
    SchemaVersion { found: u64, supported: u32 },
    #[error("manifest invariant violated: {0}")]
    ManifestInvariant(String),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

// ---------------------------------------------------------------------------
// KITTI velodyne

/// Decodes consecutive `(x, y, z, reflectance)` float32 records.
pub fn parse_velodyne_bytes(bytes: &[u8]) -> Result<PointCloud, DatasetError> {
    if !bytes.len().is_multiple_of(VELODYNE_RECORD_BYTES) {
        return Err(DatasetError::TruncatedVelodyne { len: bytes.len() });
    }
    let n = bytes.len() / VELODYNE_RECORD_BYTES;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(VELODYNE_RECORD_BYTES) {
        let f = |i: usize| f32::from_le_bytes([rec[i], rec[i + 1], rec[i + 2], rec[i + 3]]);
        points.push(Vector3::new(f(0) as f64, f(4) as f64, f(8) as f64));
        intensity.push(f(12));
    }
    Ok(PointCloud::with_intensity(points, intensity)?)
}

pub fn load_kitti_velodyne(path: &Path) -> Result<PointCloud, DatasetError> {
    let bytes = std::fs::read(path).map_err(|source| DatasetError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    parse_velodyne_bytes(&bytes)
}

/// Inverse of [`parse_velodyne_bytes`]; missing intensities are written as 0.
pub fn encode_velodyne(pc: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(pc.len() * VELODYNE_RECORD_BYTES);
    for (i, p) in pc.points.iter().enumerate() {
        let r = pc.intensity.as_ref().map(|v| v[i]).unwrap_or(0.0);
        for v in [p.x as f32, p.y as f32, p.z as f32, r] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// KITTI calibration text

/// `KEY: v1 v2 ...` lines. Values stay as text until a key is requested, so
/// non-numeric entries such as `calib_time` do not fail parsing.
#[derive(Debug, Clone, Default)]
pub struct CalibText {
    entries: HashMap<String, String>,
}

impl CalibText {
    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|line| {
                let (key, rest) = line.split_once(':')?;
                let key = key.trim();
                (!key.is_empty()).then(|| (key.to_string(), rest.trim().to_string()))
            })
            .collect();
        Self { entries }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn floats(&self, key: &str) -> Result<Vec<f64>, DatasetError> {
        let raw = self
            .entries
            .get(key)
            .ok_or_else(|| DatasetError::MissingKey(key.to_string()))?;
        raw.split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| DatasetError::MalformedFloat {
                        key: key.to_string(),
                        token: tok.to_string(),
                    })
            })
            .collect()
    }

    pub fn floats_exact(&self, key: &str, expected: usize) -> Result<Vec<f64>, DatasetError> {
        let v = self.floats(key)?;
        if v.len() != expected {
            return Err(DatasetError::WrongValueCount {
                key: key.to_string(),
                expected,
                found: v.len(),
            });
        }
        Ok(v)
    }

    fn rotation(&self, key: &str) -> Result<Matrix3<f64>, DatasetError> {
        let m = Matrix3::from_row_slice(&self.floats_exact(key, 9)?);
        let residual = crate::se3::orthonormality_residual(&m);
        if residual > KITTI_ORTHONORMAL_TOL || m.determinant() <= 0.0 {
            return Err(DatasetError::NonOrthonormal {
                key: key.to_string(),
                residual,
            });
        }
        Ok(m)
    }
}

/// Intrinsics of rectified camera 2 and the LiDAR-to-camera-2 extrinsics.
///
/// The extrinsics fold together: velodyne→cam0 `[R|T]`, the rectifying
/// rotation `R_rect_00`, and the baseline offset `K⁻¹·p₄` carried in the
/// fourth column of `P_rect_02`. A skew term in `P_rect_02` is not modeled.
pub fn kitti_calibration_from_text(
    cam_to_cam: &str,
    velo_to_cam: &str,
) -> Result<(CameraIntrinsics, RigidTransform), DatasetError> {
    let cam = CalibText::parse(cam_to_cam);
    let velo = CalibText::parse(velo_to_cam);

    let p = cam.floats_exact("P_rect_02", 12)?;
    let r_rect = cam.rotation("R_rect_00")?;
    let r = velo.rotation("R")?;
    let t = Vector3::from_row_slice(&velo.floats_exact("T", 3)?);

    let (fx, fy, cx, cy) = (p[0], p[5], p[2], p[6]);
    let (width, height) = if cam.contains("S_rect_02") {
        let s = cam.floats_exact("S_rect_02", 2)?;
        (s[0].round() as u32, s[1].round() as u32)
    } else {
        (1242, 375)
    };
    let k = CameraIntrinsics::new(fx, fy, cx, cy, width, height)
        .map_err(|e| DatasetError::InvalidCalibration(e.to_string()))?;

    let p4 = Vector3::new(p[3], p[7], p[11]);
    let bz = p4.z;
    let by = (p4.y - cy * bz) / fy;
    let bx = (p4.x - cx * bz - p[1] * by) / fx;
    let baseline = Vector3::new(bx, by, bz);

    let rotation = r_rect * r;
    let translation = r_rect * t + baseline;
    let ext = RigidTransform::from_matrix_with_tolerance(&rotation, translation, KITTI_ORTHONORMAL_TOL * 3.0)
        .map_err(|e: Se3Error| DatasetError::InvalidCalibration(e.to_string()))?;
    Ok((k, ext))
}

pub fn load_kitti_calibration(
    cam_to_cam_path: &Path,
    velo_to_cam_path: &Path,
) -> Result<(CameraIntrinsics, RigidTransform), DatasetError> {
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|source| DatasetError::Unreadable {
            path: p.to_path_buf(),
            source,
        })
    };
    kitti_calibration_from_text(&read(cam_to_cam_path)?, &read(velo_to_cam_path)?)
}

// ---------------------------------------------------------------------------
// Synthetic scenes

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    RandomFrustum,
    GroundPlaneWalls,
    Boxes,
}

impl std::str::FromStr for SceneKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random-frustum" => Ok(Self::RandomFrustum),
            "ground-plane-walls" => Ok(Self::GroundPlaneWalls),
            "boxes" => Ok(Self::Boxes),
            other => Err(format!("unknown scene kind {other:?}")),
        }
    }
}

/// A procedural scene in the LiDAR frame (x forward, y left, z up).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub point_count: usize,
    /// Forward depth of the scene in meters.
    pub extent: f64,
    pub seed: u64,
}

/// Height of the synthetic LiDAR above the ground plane.
pub const SENSOR_HEIGHT: f64 = 1.73;

/// The three planes of a ground-plane-walls scene, as `(normal axis, offset)`:
/// ground `z = −h`, side wall `y = 0.2·extent`, back wall `x = extent`.
pub fn ground_plane_walls_planes(extent: f64) -> [(usize, f64); 3] {
    [(2, -SENSOR_HEIGHT), (1, 0.2 * extent), (0, extent)]
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.point_count == 0 {
            return Err(DatasetError::InvalidScene("point_count must be positive".into()));
        }
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return Err(DatasetError::InvalidScene(format!("extent must be positive, got {}", self.extent)));
        }
        if self.kind == SceneKind::GroundPlaneWalls && self.extent <= 8.0 {
            return Err(DatasetError::InvalidScene("ground-plane-walls needs extent > 8 m".into()));
        }
        Ok(())
    }
}

/// Deterministic procedural cloud.
pub fn generate_scene(spec: &SceneSpec) -> Result<PointCloud, DatasetError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.point_count;
    let e = spec.extent;
    let h = SENSOR_HEIGHT;
    let mut pts = Vec::with_capacity(n);
    match spec.kind {
        SceneKind::RandomFrustum => {
            for _ in 0..n {
                let x = rng.gen_range(2.0f64.min(e * 0.5)..=e);
                let y = rng.gen_range(-0.7..=0.7) * x;
                let z = rng.gen_range(-0.22..=0.22) * x;
                pts.push(Vector3::new(x, y, z));
            }
        }
        SceneKind::GroundPlaneWalls => {
            let [(_, ground), (_, wall_y), (_, back_x)] = ground_plane_walls_planes(e);
            for i in 0..n {
                let p = match i % 10 {
                    0..=3 => {
                        let x = rng.gen_range(8.0..=back_x);
                        Vector3::new(x, rng.gen_range(-0.6..=0.6) * x, ground)
                    }
                    4..=6 => Vector3::new(
                        rng.gen_range(0.3 * e..=back_x),
                        wall_y,
                        rng.gen_range(ground..=2.5),
                    ),
                    _ => Vector3::new(
                        back_x,
                        rng.gen_range(-0.6 * e..=wall_y),
                        rng.gen_range(ground..=0.2 * e),
                    ),
                };
                pts.push(p);
            }
        }
        SceneKind::Boxes => {
            let boxes: Vec<(Vector3<f64>, Vector3<f64>)> = (0..6)
                .map(|_| {
                    let x = rng.gen_range(6.0f64.min(e * 0.5)..=e);
                    let c = Vector3::new(x, rng.gen_range(-0.5..=0.5) * x, -h + 1.0);
                    let half = Vector3::new(
                        rng.gen_range(0.5..=2.0),
                        rng.gen_range(0.5..=2.0),
                        rng.gen_range(0.5..=1.5),
                    );
                    (c, half)
                })
                .collect();
            for i in 0..n {
                if i % 3 == 0 {
                    let x = rng.gen_range(4.0f64.min(e * 0.5)..=e);
                    pts.push(Vector3::new(x, rng.gen_range(-0.6..=0.6) * x, -h));
                    continue;
                }
                let (c, half) = boxes[rng.gen_range(0..boxes.len())];
                let axis = rng.gen_range(0..3);
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let mut p = Vector3::new(
                    rng.gen_range(-1.0..=1.0),
                    rng.gen_range(-1.0..=1.0),
                    rng.gen_range(-1.0..=1.0),
                );
                p[axis] = sign;
                pts.push(c + p.component_mul(&half));
            }
        }
    }
    Ok(PointCloud::new(pts))
}

// ---------------------------------------------------------------------------
// Samples and manifest

/// Where a sample's point cloud comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudSource {
    /// KITTI velodyne `.bin`; relative paths resolve against the manifest.
    File(String),
    /// Generated on demand from a procedural spec.
    Scene(SceneSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibSample {
    pub id: String,
    pub cloud: CloudSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    pub intrinsics: CameraIntrinsics,
    /// Calibrated extrinsics `T`.
    pub base_extrinsics: RigidTransform,
    /// Injected `T_rand`.
    pub miscalibration: RigidTransform,
    /// `T_gt = T_rand⁻¹`.
    pub target: RigidTransform,
}

impl CalibSample {
    /// The miscalibrated extrinsics `T_rand · T`.
    pub fn miscalibrated_extrinsics(&self) -> RigidTransform {
        compose(&self.miscalibration, &self.base_extrinsics)
    }

    pub fn inverse_law_residual(&self) -> f64 {
        let c = compose(&self.target, &self.miscalibration);
        (c.to_homogeneous() - nalgebra::Matrix4::identity()).abs().max()
    }
}

/// A sample with its cloud in memory.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub record: CalibSample,
    pub cloud: PointCloud,
}

impl LoadedSample {
    pub fn new(record: CalibSample, cloud: PointCloud) -> Self {
        Self { record, cloud }
    }
}

pub fn load_cloud(source: &CloudSource, base_dir: &Path) -> Result<PointCloud, DatasetError> {
    match source {
        CloudSource::File(p) => load_kitti_velodyne(&base_dir.join(p)),
        CloudSource::Scene(spec) => generate_scene(spec),
    }
}

pub fn materialize(sample: &CalibSample, base_dir: &Path) -> Result<LoadedSample, DatasetError> {
    Ok(LoadedSample::new(sample.clone(), load_cloud(&sample.cloud, base_dir)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub range: MiscalibRange,
    pub samples: Vec<CalibSample>,
}

impl DatasetManifest {
    pub fn empty(seed: u64, range: MiscalibRange) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            seed,
            range,
            samples: Vec::new(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&CalibSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::ManifestInvariant(m));
        self.range
            .validate()
            .map_err(|e| DatasetError::ManifestInvariant(e.to_string()))?;
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return bad(format!("duplicate sample id {:?}", s.id));
            }
            if !self.range.contains(&s.miscalibration, 1e-9) {
                return bad(format!("sample {:?} miscalibration outside range", s.id));
            }
            let res = s.inverse_law_residual();
            if !(res <= INVERSE_LAW_TOL) {
                return bad(format!("sample {:?}: target is not the inverse of miscalibration ({res:.3e})", s.id));
            }
            s.intrinsics
                .validate()
                .map_err(|e| DatasetError::ManifestInvariant(format!("sample {:?}: {e}", s.id)))?;
        }
        Ok(())
    }
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-sample seed: `splitmix64(splitmix64(seed) ^ index)`.
pub fn derive_sample_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index)
}

/// Builds `count` samples, cycling through `clouds`, each with an
/// independent miscalibration and its inverse as target.
pub fn synthesize_samples(
    clouds: &[CloudSource],
    intrinsics: &CameraIntrinsics,
    base: &RigidTransform,
    range: &MiscalibRange,
    count: usize,
    seed: u64,
) -> Result<DatasetManifest, DatasetError> {
    if count == 0 {
        return Err(DatasetError::InvalidRequest("count must be positive".into()));
    }
    if clouds.is_empty() {
        return Err(DatasetError::InvalidRequest("at least one cloud is required".into()));
    }
    range
        .validate()
        .map_err(|e| DatasetError::InvalidRequest(e.to_string()))?;
    intrinsics.validate()?;
    for c in clouds {
        if let CloudSource::Scene(spec) = c {
            spec.validate()?;
        }
    }
    let width = count.to_string().len().max(6);
    let samples = (0..count)
        .map(|i| {
            let miscalibration = sample_random_transform(range, derive_sample_seed(seed, i as u64));
            CalibSample {
                id: format!("{i:0width$}"),
                cloud: clouds[i % clouds.len()].clone(),
                image_path: None,
                intrinsics: *intrinsics,
                base_extrinsics: *base,
                miscalibration,
                target: invert(&miscalibration),
            }
        })
        .collect();
    Ok(DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed,
        range: *range,
        samples,
    })
}

pub fn manifest_to_json(m: &DatasetManifest) -> String {
    serde_json::to_string_pretty(m).expect("manifest serializes") + "\n"
}

/// Parses and validates a manifest, checking the schema version before
/// anything else is deserialized.
pub fn manifest_from_json(text: &str) -> Result<DatasetManifest, DatasetError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| DatasetError::ManifestParse(e.to_string()))?;
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| DatasetError::ManifestParse("missing integer schema_version".into()))?;
    if version != MANIFEST_SCHEMA_VERSION as u64 {
        return Err(DatasetError::SchemaVersion {
            found: version,
            supported: MANIFEST_SCHEMA_VERSION,
        });
    }
    let m: DatasetManifest =
        serde_json::from_value(value).map_err(|e| DatasetError::ManifestParse(e.to_string()))?;
    m.validate()?;
    Ok(m)
}

pub fn save_manifest(m: &DatasetManifest, path: &Path) -> Result<(), DatasetError> {
    std::fs::write(path, manifest_to_json(m)).map_err(|source| DatasetError::Unwritable {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    manifest_from_json(&text)
}
