//! Error metrics, aggregate statistics and report rendering.

use crate::camera_projection::DepthMap;
use crate::dataset::DatasetManifest;
use crate::optimizer::{prediction_error, CalibrationResult};
use crate::se3::{euler_xyz, RigidTransform, RotationVector, TranslationVector};
use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction for unknown sample id {0:?}")]
    UnknownId(String),
    #[error("no records to summarize")]
    Empty,
    #[error("line {line}: {message}")]
    BadPrediction { line: usize, message: String },
    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("depth map is {depth_w}x{depth_h} but image is {image_w}x{image_h}")]
    DimensionMismatch {
        depth_w: u32,
        depth_h: u32,
        image_w: u32,
        image_h: u32,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot encode {path}: {message}")]
    Encode { path: PathBuf, message: String },
}

/// A predicted `T_gt` for one sample, from the direct optimizer or any
/// external estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub predicted: RigidTransform,
}

impl From<&CalibrationResult> for Prediction {
    fn from(r: &CalibrationResult) -> Self {
        Self {
            sample_id: r.sample_id.clone(),
            predicted: r.predicted,
        }
    }
}

#[derive(Deserialize)]
struct FlatPrediction {
    sample_id: String,
    rotvec: [f64; 3],
    translation: [f64; 3],
}

/// Parses JSON-lines predictions. Each line is either a calibration result
/// (`{"sample_id", "predicted": {...}, ...}`) or a flat record
/// `{"sample_id", "rotvec", "translation"}`. Blank lines are skipped.
pub fn parse_predictions_jsonl(text: &str) -> Result<Vec<Prediction>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| EvalError::BadPrediction { line: i + 1, message };
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let pred = if value.get("predicted").is_some() {
            serde_json::from_value::<Prediction>(value).map_err(|e| bad(e.to_string()))?
        } else {
            let flat: FlatPrediction = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
            let predicted: RigidTransform = serde_json::from_value(serde_json::json!({
                "rotvec": flat.rotvec,
                "translation": flat.translation,
            }))
            .map_err(|e| bad(e.to_string()))?;
            Prediction {
                sample_id: flat.sample_id,
                predicted,
            }
        };
        out.push(pred);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub injected_rotvec: RotationVector,
    pub injected_translation: TranslationVector,
    /// Geodesic rotation error, radians.
    pub geodesic_error: f64,
    /// `|roll|, |pitch|, |yaw|` differences of the XYZ decompositions, radians.
    pub euler_error: [f64; 3],
    /// Per-axis absolute translation error, meters.
    pub translation_error: [f64; 3],
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a < -PI {
        a += 2.0 * PI;
    }
    a
}

pub fn evaluate_one(sample_id: &str, predicted: &RigidTransform, manifest: &DatasetManifest) -> Result<EvalRecord, EvalError> {
    let s = manifest
        .get(sample_id)
        .ok_or_else(|| EvalError::UnknownId(sample_id.to_string()))?;
    let (geodesic_error, translation_error) = prediction_error(predicted, &s.target);
    let ep = euler_xyz(predicted.rotation());
    let eg = euler_xyz(s.target.rotation());
    let euler_error = [0, 1, 2].map(|i| wrap_angle(ep[i] - eg[i]).abs());
    Ok(EvalRecord {
        sample_id: sample_id.to_string(),
        injected_rotvec: s.miscalibration.rotvec(),
        injected_translation: s.miscalibration.translation(),
        geodesic_error,
        euler_error,
        translation_error,
    })
}

pub fn evaluate_batch(predictions: &[Prediction], manifest: &DatasetManifest) -> Result<Vec<EvalRecord>, EvalError> {
    predictions
        .iter()
        .map(|p| evaluate_one(&p.sample_id, &p.predicted, manifest))
        .collect()
}

/// Fixed-width bins starting at 0; the last bin also holds anything past it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn build(values: &[f64], bin_width: f64, bins: usize) -> Self {
        let mut counts = vec![0u64; bins.max(1)];
        let last = counts.len() - 1;
        for &v in values {
            let b = (v / bin_width).floor();
            let b = if b.is_finite() && b >= 0.0 { (b as usize).min(last) } else { last };
            counts[b] += 1;
        }
        Self { bin_width, counts }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub injected: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub geodesic_bin_deg: f64,
    pub translation_bin_m: f64,
    pub bins: usize,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            geodesic_bin_deg: 0.1,
            translation_bin_m: 0.005,
            bins: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub count: usize,
    /// Roll, pitch, yaw MAE in degrees.
    pub rotation_mae_deg: [f64; 3],
    /// X, Y, Z MAE in meters.
    pub translation_mae_m: [f64; 3],
    pub mean_geodesic_deg: f64,
    pub mean_axis_rotation_mae_deg: f64,
    pub mean_axis_translation_mae_m: f64,
    pub mean_translation_norm_m: f64,
    /// Geodesic error, degrees.
    pub geodesic_histogram: Histogram,
    /// Euclidean norm of the translation error, meters.
    pub translation_histogram: Histogram,
    /// Per axis: injected |angle| (deg) against error (deg), sorted by injected.
    pub rotation_curves: [Vec<CurvePoint>; 3],
    /// Per axis: injected |offset| (m) against error (m), sorted by injected.
    pub translation_curves: [Vec<CurvePoint>; 3],
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

pub fn summarize(records: &[EvalRecord]) -> Result<EvalSummary, EvalError> {
    summarize_with(records, &HistogramSpec::default())
}

pub fn summarize_with(records: &[EvalRecord], spec: &HistogramSpec) -> Result<EvalSummary, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let rotation_mae_deg = [0, 1, 2].map(|a| mean(records.iter().map(|r| r.euler_error[a].to_degrees())));
    let translation_mae_m = [0, 1, 2].map(|a| mean(records.iter().map(|r| r.translation_error[a])));
    let norms: Vec<f64> = records
        .iter()
        .map(|r| r.translation_error.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let geo_deg: Vec<f64> = records.iter().map(|r| r.geodesic_error.to_degrees()).collect();

    let curve = |injected: &dyn Fn(&EvalRecord) -> f64, error: &dyn Fn(&EvalRecord) -> f64| {
        let mut pts: Vec<CurvePoint> = records
            .iter()
            .map(|r| CurvePoint {
                injected: injected(r),
                error: error(r),
            })
            .collect();
        pts.sort_by(|a, b| a.injected.total_cmp(&b.injected).then(a.error.total_cmp(&b.error)));
        pts
    };
    let rotation_curves = [0, 1, 2].map(|a| {
        curve(
            &|r| euler_xyz(&r.injected_rotvec.to_matrix())[a].abs().to_degrees(),
            &|r| r.euler_error[a].to_degrees(),
        )
    });
    let translation_curves =
        [0, 1, 2].map(|a| curve(&|r| r.injected_translation.0[a].abs(), &|r| r.translation_error[a]));

    Ok(EvalSummary {
        count: records.len(),
        rotation_mae_deg,
        translation_mae_m,
        mean_geodesic_deg: mean(geo_deg.iter().copied()),
        mean_axis_rotation_mae_deg: mean(rotation_mae_deg.iter().copied()),
        mean_axis_translation_mae_m: mean(translation_mae_m.iter().copied()),
        mean_translation_norm_m: mean(norms.iter().copied()),
        geodesic_histogram: Histogram::build(&geo_deg, spec.geodesic_bin_deg, spec.bins),
        translation_histogram: Histogram::build(&norms, spec.translation_bin_m, spec.bins),
        rotation_curves,
        translation_curves,
    })
}

// ---------------------------------------------------------------------------
// Overlay

/// Opacity of depth pixels drawn over the image.
pub const OVERLAY_ALPHA: f64 = 1.0;

/// Blue at `t = 0` to red at `t = 1`.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    [(255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8]
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Draws present depth pixels over `image`, colored linearly between the
/// 1st and 99th depth percentiles.
pub fn overlay_depth(image: &RgbImage, dm: &DepthMap, alpha: f64) -> Result<RgbImage, EvalError> {
    if image.width() != dm.width || image.height() != dm.height {
        return Err(EvalError::DimensionMismatch {
            depth_w: dm.width,
            depth_h: dm.height,
            image_w: image.width(),
            image_h: image.height(),
        });
    }
    let mut out = image.clone();
    let mut depths: Vec<f64> = dm.iter_present().map(|(_, _, d)| d).collect();
    if depths.is_empty() {
        return Ok(out);
    }
    depths.sort_by(f64::total_cmp);
    let lo = percentile(&depths, 0.01);
    let hi = percentile(&depths, 0.99);
    let span = hi - lo;
    for (x, y, d) in dm.iter_present() {
        let t = if span > 0.0 { (d - lo) / span } else { 0.0 };
        let c = colormap(t);
        let px = out.get_pixel_mut(x, y);
        for i in 0..3 {
            px.0[i] = (alpha * c[i] as f64 + (1.0 - alpha) * px.0[i] as f64).round() as u8;
        }
    }
    Ok(out)
}

pub fn render_overlay(image_path: &Path, dm: &DepthMap, out_path: &Path) -> Result<(), EvalError> {
    let img = image::open(image_path)
        .map_err(|e| EvalError::Decode {
            path: image_path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let out = overlay_depth(&img, dm, OVERLAY_ALPHA)?;
    out.save_with_format(out_path, ImageFormat::Png)
        .map_err(|e| EvalError::Encode {
            path: out_path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Solid-color image, handy for overlays when no camera frame is at hand.
pub fn blank_image(width: u32, height: u32, color: [u8; 3]) -> RgbImage {
    RgbImage::from_pixel(width, height, Rgb(color))
}

// ---------------------------------------------------------------------------
// Report

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const AXIS_COLORS: [&str; 3] = ["#d62728", "#2ca02c", "#1f77b4"];

fn svg_header(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, SVG_W / 2.0);
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/><line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{y0}" stroke="black"/>"#,
        y0 = SVG_H - MARGIN,
        x1 = SVG_W - MARGIN
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{x_label}</text>"#, SVG_W / 2.0, SVG_H - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">{y_label}</text>"#,
        SVG_H / 2.0,
        SVG_H / 2.0
    );
    s
}

fn scale_max(v: f64) -> f64 {
    if v > 0.0 && v.is_finite() {
        v
    } else {
        1.0
    }
}

/// Error-vs-injected curves, one polyline per axis.
pub fn curve_svg(title: &str, x_label: &str, y_label: &str, curves: &[Vec<CurvePoint>; 3], names: [&str; 3]) -> String {
    let x_max = scale_max(curves.iter().flatten().map(|p| p.injected).fold(0.0, f64::max));
    let y_max = scale_max(curves.iter().flatten().map(|p| p.error).fold(0.0, f64::max));
    let (pw, ph) = (SVG_W - 2.0 * MARGIN, SVG_H - 2.0 * MARGIN);
    let mut s = svg_header(title, x_label, y_label);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}" font-size="10">{y_max:.4}</text>"#, MARGIN - 5.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{x_max:.4}</text>"#, SVG_W - MARGIN, SVG_H - MARGIN + 14.0);
    for (a, pts) in curves.iter().enumerate() {
        let mut coords = String::new();
        for p in pts {
            let x = MARGIN + pw * p.injected / x_max;
            let y = SVG_H - MARGIN - ph * p.error / y_max;
            let _ = write!(coords, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(
            s,
            r#"<polyline data-axis="{}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            names[a],
            AXIS_COLORS[a],
            coords.trim_end()
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{}">{}</text>"#,
            SVG_W - MARGIN - 60.0,
            MARGIN + 14.0 * a as f64,
            AXIS_COLORS[a],
            names[a]
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn histogram_svg(title: &str, x_label: &str, h: &Histogram) -> String {
    let peak = scale_max(h.counts.iter().copied().max().unwrap_or(0) as f64);
    let (pw, ph) = (SVG_W - 2.0 * MARGIN, SVG_H - 2.0 * MARGIN);
    let bw = pw / h.counts.len() as f64;
    let mut s = svg_header(title, x_label, "count");
    for (i, &c) in h.counts.iter().enumerate() {
        let height = ph * c as f64 / peak;
        let _ = writeln!(
            s,
            r#"<rect data-bin="{i}" data-count="{c}" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="steelblue"/>"#,
            MARGIN + bw * i as f64,
            SVG_H - MARGIN - height,
            (bw - 1.0).max(0.5),
            height
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{:.4}</text>"#,
        SVG_W - MARGIN,
        SVG_H - MARGIN + 14.0,
        h.bin_width * h.counts.len() as f64
    );
    s.push_str("</svg>\n");
    s
}

/// Files written by [`render_report`].
pub const REPORT_FILES: [&str; 5] = [
    "summary.json",
    "rotation_error_curve.svg",
    "translation_error_curve.svg",
    "geodesic_histogram.svg",
    "translation_histogram.svg",
];

pub fn render_report(summary: &EvalSummary, out_dir: &Path) -> Result<(), EvalError> {
    let write = |name: &str, text: String| {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(|source| EvalError::Io { path, source })
    };
    write(REPORT_FILES[0], serde_json::to_string_pretty(summary).expect("summary serializes") + "\n")?;
    write(
        REPORT_FILES[1],
        curve_svg("Rotation error vs miscalibration", "injected (deg)", "error (deg)", &summary.rotation_curves, ["roll", "pitch", "yaw"]),
    )?;
    write(
        REPORT_FILES[2],
        curve_svg("Translation error vs miscalibration", "injected (m)", "error (m)", &summary.translation_curves, ["x", "y", "z"]),
    )?;
    write(REPORT_FILES[3], histogram_svg("Geodesic rotation error", "error (deg)", &summary.geodesic_histogram))?;
    write(REPORT_FILES[4], histogram_svg("Translation error norm", "error (m)", &summary.translation_histogram))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera_projection::CameraIntrinsics;
    use crate::dataset::{synthesize_samples, CloudSource, SceneKind, SceneSpec};
    use crate::se3::MiscalibRange;

    fn manifest(count: usize) -> DatasetManifest {
        let spec = SceneSpec { kind: SceneKind::RandomFrustum, point_count: 10, extent: 10.0, seed: 0 };
        synthesize_samples(
            &[CloudSource::Scene(spec)],
            &CameraIntrinsics::kitti_like(),
            &RigidTransform::identity(),
            &MiscalibRange::new(10f64.to_radians(), 0.25).unwrap(),
            count,
            5,
        )
        .unwrap()
    }

    fn record(euler_deg: [f64; 3], t: [f64; 3], geo_deg: f64) -> EvalRecord {
        EvalRecord {
            sample_id: "x".into(),
            injected_rotvec: RotationVector::zero(),
            injected_translation: TranslationVector::zero(),
            geodesic_error: geo_deg.to_radians(),
            euler_error: euler_deg.map(f64::to_radians),
            translation_error: t,
        }
    }

    #[test]
    fn perfect_and_identity_predictions() {
        let m = manifest(20);
        let perfect: Vec<_> = m.samples.iter().map(|s| Prediction { sample_id: s.id.clone(), predicted: s.target }).collect();
        for r in evaluate_batch(&perfect, &m).unwrap() {
            assert!(r.geodesic_error < 1e-12);
            assert!(r.euler_error.iter().chain(&r.translation_error).all(|v| *v < 1e-12));
        }
        let ident: Vec<_> = m.samples.iter().map(|s| Prediction { sample_id: s.id.clone(), predicted: RigidTransform::identity() }).collect();
        for (r, s) in evaluate_batch(&ident, &m).unwrap().iter().zip(&m.samples) {
            assert!((r.geodesic_error - s.miscalibration.rotvec().angle()).abs() < 1e-12);
            let tn = r.translation_error.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((tn - s.miscalibration.translation().0.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_id_is_reported() {
        let m = manifest(2);
        let p = vec![Prediction { sample_id: "nope".into(), predicted: RigidTransform::identity() }];
        assert!(matches!(evaluate_batch(&p, &m), Err(EvalError::UnknownId(id)) if id == "nope"));
    }

    #[test]
    fn mae_of_two_records() {
        let s = summarize(&[record([0.1, 0.0, 0.0], [0.0; 3], 0.1), record([0.3, 0.0, 0.0], [0.0; 3], 0.3)]).unwrap();
        assert!((s.rotation_mae_deg[0] - 0.2).abs() < 1e-12);
        assert!((s.mean_geodesic_deg - 0.2).abs() < 1e-12);
        assert!(matches!(summarize(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn zero_summary() {
        let s = summarize(&[record([0.0; 3], [0.0; 3], 0.0)]).unwrap();
        assert_eq!(s.rotation_mae_deg, [0.0; 3]);
        assert_eq!(s.translation_mae_m, [0.0; 3]);
        assert_eq!(s.geodesic_histogram.counts[0], 1);
        let svg = curve_svg("t", "x", "y", &s.rotation_curves, ["roll", "pitch", "yaw"]);
        assert!(svg.contains(&format!("points=\"{:.2},{:.2}\"", MARGIN, SVG_H - MARGIN)));
    }

    #[test]
    fn prediction_lines_both_forms() {
        let text = r#"{"sample_id":"a","rotvec":[0.0,0.0,0.1],"translation":[1.0,0.0,0.0]}

{"sample_id":"b","predicted":{"rotvec":[0,0,0],"translation":[0,0,0]},"converged":true}
"#;
        let p = parse_predictions_jsonl(text).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].predicted, RigidTransform::identity());
        assert!((p[0].predicted.rotvec().0.z - 0.1).abs() < 1e-15);
        assert!(matches!(parse_predictions_jsonl("{\"sample_id\":1}"), Err(EvalError::BadPrediction { line: 1, .. })));
        assert!(parse_predictions_jsonl("").unwrap().is_empty());
    }

    #[test]
    fn overlay_rules() {
        let img = blank_image(6, 4, [10, 20, 30]);
        let empty = DepthMap::empty(6, 4);
        assert_eq!(overlay_depth(&img, &empty, OVERLAY_ALPHA).unwrap(), img);
        let mut one = DepthMap::empty(6, 4);
        one.set(2, 1, Some(3.0));
        let out = overlay_depth(&img, &one, OVERLAY_ALPHA).unwrap();
        assert_eq!(out.get_pixel(2, 1).0, [0, 0, 255]);
        assert_eq!(out.get_pixel(0, 0).0, [10, 20, 30]);
        let mut two = one.clone();
        two.set(3, 1, Some(30.0));
        let out = overlay_depth(&img, &two, OVERLAY_ALPHA).unwrap();
        assert_eq!(out.get_pixel(3, 1).0, [255, 0, 0]);
        assert!(matches!(overlay_depth(&img, &DepthMap::empty(5, 4), 1.0), Err(EvalError::DimensionMismatch { .. })));
    }

    #[test]
    fn overlay_files_and_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("img.png");
        blank_image(4, 4, [0, 0, 0]).save(&img_path).unwrap();
        let mut dm = DepthMap::empty(4, 4);
        dm.set(1, 1, Some(2.0));
        let out = dir.path().join("o.png");
        render_overlay(&img_path, &dm, &out).unwrap();
        assert_eq!(image::open(&out).unwrap().to_rgb8().get_pixel(1, 1).0, [0, 0, 255]);
        std::fs::write(dir.path().join("bad.png"), b"xx").unwrap();
        assert!(matches!(render_overlay(&dir.path().join("bad.png"), &dm, &out), Err(EvalError::Decode { .. })));
    }

    #[test]
    fn report_files_deterministic() {
        let m = manifest(30);
        let preds: Vec<_> = m.samples.iter().map(|s| Prediction { sample_id: s.id.clone(), predicted: RigidTransform::identity() }).collect();
        let summary = summarize(&evaluate_batch(&preds, &m).unwrap()).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        render_report(&summary, a.path()).unwrap();
        render_report(&summary, b.path()).unwrap();
        for f in REPORT_FILES {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
        let svg = std::fs::read_to_string(a.path().join(REPORT_FILES[1])).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
    }
}
