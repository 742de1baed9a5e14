//! Rigid-body transforms in SE(3).
//!
//! Rotations are exchanged as rotation vectors (axis scaled by angle) and
//! converted with Rodrigues' formula. A [`RigidTransform`] stores its
//! rotation vector as the canonical representation and caches the matrix,
//! so the JSON form `{"rotvec":[..],"translation":[..]}` round-trips bit
//! for bit.

use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::f64::consts::PI;
use thiserror::Error;

/// Orthonormality residual accepted by [`matrix_to_rotvec`] and friends.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// Below this angle Rodrigues' formula switches to its Taylor expansion.
const SMALL_ANGLE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Se3Error {
    #[error("matrix is not orthonormal: residual {residual:.3e} exceeds {tolerance:.3e}")]
    NotOrthonormal { residual: f64, tolerance: f64 },
    #[error("matrix has determinant {0:.6}, not a proper rotation")]
    Reflection(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("expected 12 numbers for a row-major 3x4 transform, found {0}")]
    WrongLength(usize),
    #[error("invalid number {0:?}")]
    BadNumber(String),
    #[error("invalid miscalibration range: rot_max {rot_max}, trans_max {trans_max}")]
    InvalidRange { rot_max: f64, trans_max: f64 },
}

/// Axis-angle rotation: direction is the axis, norm is the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RotationVector(pub Vector3<f64>);

impl RotationVector {
    pub fn new(rx: f64, ry: f64, rz: f64) -> Self {
        Self(Vector3::new(rx, ry, rz))
    }

    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        rotvec_to_matrix(self)
    }

    fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

/// Translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TranslationVector(pub Vector3<f64>);

impl TranslationVector {
    pub fn new(tx: f64, ty: f64, tz: f64) -> Self {
        Self(Vector3::new(tx, ty, tz))
    }

    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula. Total on finite input; the zero vector maps to the
/// identity exactly.
pub fn rotvec_to_matrix(r: &RotationVector) -> Matrix3<f64> {
    let theta = r.angle();
    let k = skew(&r.0);
    let k2 = k * k;
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + k + k2 * 0.5;
    }
    let half = 0.5 * theta;
    let a = theta.sin() / theta;
    // (1 - cos θ) / θ², written without the cancellation.
    let b = 2.0 * (half.sin() / theta).powi(2);
    Matrix3::identity() + k * a + k2 * b
}

/// Frobenius norm of `RᵀR − I`.
pub fn orthonormality_residual(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).norm()
}

/// Checks that `m` is a proper rotation within `tolerance`.
pub fn check_rotation(m: &Matrix3<f64>, tolerance: f64) -> Result<(), Se3Error> {
    if m.iter().any(|c| !c.is_finite()) {
        return Err(Se3Error::NonFinite("rotation matrix"));
    }
    let residual = orthonormality_residual(m);
    if residual > tolerance {
        return Err(Se3Error::NotOrthonormal {
            residual,
            tolerance,
        });
    }
    let det = m.determinant();
    if det <= 0.0 {
        return Err(Se3Error::Reflection(det));
    }
    Ok(())
}

/// Inverse of Rodrigues' formula, returning the canonical angle in `[0, π]`.
pub fn matrix_to_rotvec(m: &Matrix3<f64>) -> Result<RotationVector, Se3Error> {
    check_rotation(m, ORTHONORMAL_TOL)?;
    Ok(log_unchecked(m))
}

fn log_unchecked(m: &Matrix3<f64>) -> RotationVector {
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    // sin θ · axis
    let w = 0.5 * Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin = w.norm();
    let theta = sin.atan2(cos);

    if theta < SMALL_ANGLE {
        return RotationVector(w);
    }
    if cos >= 0.0 {
        return RotationVector(w * (theta / sin));
    }

    // Past π/2 the antisymmetric part loses precision; read the axis from
    // the symmetric part, which equals cos θ·I + (1 − cos θ)·u·uᵀ.
    let sym = 0.5 * (m + m.transpose());
    let outer = (sym - Matrix3::identity() * cos) / (1.0 - cos);
    let k = (0..3)
        .max_by(|&i, &j| outer[(i, i)].total_cmp(&outer[(j, j)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = outer.column(k).into_owned() / outer[(k, k)].max(0.0).sqrt();
    axis.normalize_mut();

    let d = axis.dot(&w);
    if sin > 1e-12 {
        if d < 0.0 {
            axis = -axis;
        }
    } else {
        // θ = π: both signs are valid; make the largest component positive.
        let big = (0..3)
            .max_by(|&i, &j| axis[i].abs().total_cmp(&axis[j].abs()))
            .unwrap_or(0);
        if axis[big] < 0.0 {
            axis = -axis;
        }
    }
    RotationVector(axis * theta)
}

/// Nearest rotation in the Frobenius sense.
fn project_to_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return *m,
    };
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Rotation built as `Rz(yaw)·Ry(pitch)·Rx(roll)`.
pub fn rotation_from_euler_xyz(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
    let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

/// Decomposes `R = Rz(yaw)·Ry(pitch)·Rx(roll)` into `[roll, pitch, yaw]`,
/// with pitch in `[−π/2, π/2]`.
pub fn euler_xyz(m: &Matrix3<f64>) -> [f64; 3] {
    let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    [roll, pitch, yaw]
}

/// A rigid transform `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotvec: RotationVector,
    rotation: Matrix3<f64>,
    translation: TranslationVector,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotvec: RotationVector::zero(),
            rotation: Matrix3::identity(),
            translation: TranslationVector::zero(),
        }
    }

    /// Pure translation.
    pub fn translate(tx: f64, ty: f64, tz: f64) -> Self {
        Self {
            translation: TranslationVector::new(tx, ty, tz),
            ..Self::identity()
        }
    }

    /// Builds a transform from a rotation vector. Vectors longer than π are
    /// wrapped to the canonical representative.
    pub fn from_parts(rotvec: RotationVector, translation: TranslationVector) -> Self {
        let mut rotvec = rotvec;
        let mut rotation = rotvec_to_matrix(&rotvec);
        if rotvec.angle() > PI {
            rotvec = log_unchecked(&rotation);
            rotation = rotvec_to_matrix(&rotvec);
        }
        Self {
            rotvec,
            rotation,
            translation,
        }
    }

    fn from_rotation_unchecked(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self::from_parts(log_unchecked(rotation), TranslationVector(translation))
    }

    /// Builds a transform from a rotation matrix, rejecting anything outside
    /// [`ORTHONORMAL_TOL`].
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, Se3Error> {
        Self::from_matrix_with_tolerance(rotation, translation, ORTHONORMAL_TOL)
    }

    /// Like [`RigidTransform::from_matrix`] but with a caller-chosen
    /// tolerance; the matrix is projected onto SO(3) before conversion.
    pub fn from_matrix_with_tolerance(
        rotation: &Matrix3<f64>,
        translation: Vector3<f64>,
        tolerance: f64,
    ) -> Result<Self, Se3Error> {
        check_rotation(rotation, tolerance)?;
        if translation.iter().any(|c| !c.is_finite()) {
            return Err(Se3Error::NonFinite("translation"));
        }
        Ok(Self::from_rotation_unchecked(&project_to_rotation(rotation), translation))
    }

    /// Parses the KITTI row-major `[R | t]` layout.
    pub fn from_row_major_3x4(values: &[f64]) -> Result<Self, Se3Error> {
        if values.len() != 12 {
            return Err(Se3Error::WrongLength(values.len()));
        }
        let r = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
            values[10],
        );
        let t = Vector3::new(values[3], values[7], values[11]);
        Self::from_matrix(&r, t)
    }

    /// Text form of [`RigidTransform::from_row_major_3x4`], separated by
    /// whitespace and/or commas.
    pub fn parse_row_major_3x4(text: &str) -> Result<Self, Se3Error> {
        let values = text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|tok| !tok.is_empty())
            .map(|tok| tok.parse::<f64>().map_err(|_| Se3Error::BadNumber(tok.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_row_major_3x4(&values)
    }

    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation.0;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn rotvec(&self) -> RotationVector {
        self.rotvec
    }

    pub fn translation(&self) -> TranslationVector {
        self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut h = Matrix4::identity();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation.0);
        h
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation.0
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        compose(self, other)
    }

    pub fn inverse(&self) -> RigidTransform {
        invert(self)
    }
}

/// Homogeneous product `a·b`: the result applies `b`, then `a`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    let r = a.rotation * b.rotation;
    let t = a.rotation * b.translation.0 + a.translation.0;
    RigidTransform::from_rotation_unchecked(&r, t)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    let rt = t.rotation.transpose();
    RigidTransform {
        rotvec: RotationVector(-t.rotvec.0),
        rotation: rotvec_to_matrix(&RotationVector(-t.rotvec.0)),
        translation: TranslationVector(-(rt * t.translation.0)),
    }
}

/// Relative rotation angle `(1/√2)·‖log(R_predᵀ R_gt)‖_F`, in radians.
pub fn geodesic_rotation_error(r_pred: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> Result<f64, Se3Error> {
    check_rotation(r_pred, ORTHONORMAL_TOL)?;
    check_rotation(r_gt, ORTHONORMAL_TOL)?;
    Ok(log_unchecked(&(r_pred.transpose() * r_gt)).angle())
}

/// How the rotational part of a miscalibration is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RotationSampling {
    /// Roll, pitch and yaw each uniform in `[−rot_max, rot_max]`, composed
    /// as `Rz·Ry·Rx`.
    #[default]
    PerAxisEuler,
    /// Uniform axis on the sphere, angle uniform in `[0, rot_max]`.
    RotvecNorm,
}

/// Per-axis miscalibration bounds (radians, meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiscalibRange {
    pub rot_max: f64,
    pub trans_max: f64,
    #[serde(default)]
    pub sampling: RotationSampling,
}

impl MiscalibRange {
    pub fn new(rot_max: f64, trans_max: f64) -> Result<Self, Se3Error> {
        let range = Self {
            rot_max,
            trans_max,
            sampling: RotationSampling::PerAxisEuler,
        };
        range.validate()?;
        Ok(range)
    }

    pub fn with_sampling(mut self, sampling: RotationSampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn zero() -> Self {
        Self {
            rot_max: 0.0,
            trans_max: 0.0,
            sampling: RotationSampling::PerAxisEuler,
        }
    }

    pub fn validate(&self) -> Result<(), Se3Error> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.rot_max) && ok(self.trans_max) {
            Ok(())
        } else {
            Err(Se3Error::InvalidRange {
                rot_max: self.rot_max,
                trans_max: self.trans_max,
            })
        }
    }

    /// Whether `t` could have been drawn from this range, allowing `slack`
    /// for round-off.
    pub fn contains(&self, t: &RigidTransform, slack: f64) -> bool {
        let rot_ok = match self.sampling {
            RotationSampling::PerAxisEuler => euler_xyz(t.rotation())
                .iter()
                .all(|a| a.abs() <= self.rot_max + slack),
            RotationSampling::RotvecNorm => t.rotvec().angle() <= self.rot_max + slack,
        };
        rot_ok && t.translation().0.iter().all(|c| c.abs() <= self.trans_max + slack)
    }

    /// Both bounds strictly below `other`'s.
    pub fn strictly_inside(&self, other: &MiscalibRange) -> bool {
        self.rot_max < other.rot_max && self.trans_max < other.trans_max
    }
}

/// Draws a random miscalibration; deterministic per seed.
pub fn sample_random_transform(range: &MiscalibRange, seed: u64) -> RigidTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = range.rot_max;
    let s = range.trans_max;
    let rotation = match range.sampling {
        RotationSampling::PerAxisEuler => {
            let roll = rng.gen_range(-a..=a);
            let pitch = rng.gen_range(-a..=a);
            let yaw = rng.gen_range(-a..=a);
            rotation_from_euler_xyz(roll, pitch, yaw)
        }
        RotationSampling::RotvecNorm => {
            let z: f64 = rng.gen_range(-1.0..=1.0);
            let phi: f64 = rng.gen_range(0.0..2.0 * PI);
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let axis = Vector3::new(rho * phi.cos(), rho * phi.sin(), z);
            let angle = rng.gen_range(0.0..=a);
            rotvec_to_matrix(&RotationVector(axis * angle))
        }
    };
    let t = Vector3::new(
        rng.gen_range(-s..=s),
        rng.gen_range(-s..=s),
        rng.gen_range(-s..=s),
    );
    RigidTransform::from_rotation_unchecked(&rotation, t)
}

#[derive(Serialize, Deserialize)]
struct TransformRecord {
    rotvec: [f64; 3],
    translation: [f64; 3],
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TransformRepr {
    Record(TransformRecord),
    RowMajor(Vec<f64>),
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let r = &self.rotvec.0;
        let t = &self.translation.0;
        TransformRecord {
            rotvec: [r.x, r.y, r.z],
            translation: [t.x, t.y, t.z],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        match TransformRepr::deserialize(deserializer)? {
            TransformRepr::Record(rec) => {
                let rotvec = RotationVector::new(rec.rotvec[0], rec.rotvec[1], rec.rotvec[2]);
                let translation = TranslationVector::new(
                    rec.translation[0],
                    rec.translation[1],
                    rec.translation[2],
                );
                if !rotvec.is_finite() || translation.0.iter().any(|c| !c.is_finite()) {
                    return Err(D::Error::custom("non-finite transform component"));
                }
                Ok(RigidTransform::from_parts(rotvec, translation))
            }
            TransformRepr::RowMajor(values) => {
                RigidTransform::from_row_major_3x4(&values).map_err(D::Error::custom)
            }
        }
    }
}
