//! Command-line front end.

use crate::camera_projection::{densify_maxpool, project, rasterize, CameraIntrinsics, DepthMap, PointCloud};
use crate::dataset::{
    derive_sample_seed, load_kitti_calibration, load_kitti_velodyne, load_manifest, manifest_to_json, materialize,
    synthesize_samples, CloudSource, DatasetError, DatasetManifest, SceneKind, SceneSpec,
};
use crate::depth_io::{load_depth_png, save_depth_png, DepthIoError};
use crate::evaluation::{
    blank_image, evaluate_batch, overlay_depth, parse_predictions_jsonl, render_overlay, render_report,
    summarize_with, EvalError, HistogramSpec, OVERLAY_ALPHA,
};
use crate::losses::{LossOptions, LossWeights};
use crate::optimizer::{
    optimize_refined, optimize_single, CalibrationResult, Method, OptimizerError, RefinementSchedule,
};
use crate::se3::{compose, MiscalibRange, RigidTransform, RotationSampling};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashSet;
use std::io::{BufRead, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "CALIBFORGE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "calibforge", version, about = "LiDAR-camera extrinsic calibration toolkit")]
pub struct Cli {
    /// Worker threads for per-sample work; defaults to available cores.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    /// Leave wall-clock timestamps out of resolved configs.
    #[arg(long, global = true)]
    pub no_timestamps: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a manifest of miscalibrated samples.
    Synth(SynthArgs),
    /// Project a point cloud to a depth PNG.
    Project(ProjectArgs),
    /// Recover the miscalibration of every sample in a manifest.
    Calibrate(CalibrateArgs),
    /// Score predictions against a manifest and render the report.
    Eval(EvalArgs),
    /// Draw a depth PNG over a camera image.
    Overlay(OverlayArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct RangeArgs {
    /// Rotation bound, e.g. `10deg` or `0.17rad`.
    #[arg(long, value_parser = parse_angle)]
    pub range_rot: f64,
    /// Translation bound in meters.
    #[arg(long)]
    pub range_trans: f64,
    #[arg(long, default_value = "per-axis-euler", value_parser = parse_sampling)]
    pub rotation_sampling: RotationSampling,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Procedural scene kind.
    #[arg(long, conflicts_with = "kitti_dir", required_unless_present = "kitti_dir", value_parser = parse_scene)]
    pub scene: Option<SceneKind>,
    /// KITTI raw drive directory holding `velodyne_points/data/*.bin`;
    /// calibration files are looked up here and in its parent.
    #[arg(long)]
    pub kitti_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    pub points: usize,
    /// Scene extent in meters.
    #[arg(long, default_value_t = 40.0)]
    pub extent: f64,
    /// Distinct scenes to cycle through; defaults to one per sample.
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub count: usize,
    #[command(flatten)]
    pub range: RangeArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ProjectArgs {
    /// KITTI velodyne `.bin`.
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    pub cloud: Option<PathBuf>,
    /// Directory with `calib_cam_to_cam.txt` and `calib_velo_to_cam.txt`.
    #[arg(long, conflicts_with_all = ["intrinsics", "manifest"])]
    pub kitti_calib: Option<PathBuf>,
    /// `fx,fy,cx,cy,width,height`.
    #[arg(long, value_parser = parse_intrinsics)]
    pub intrinsics: Option<CameraIntrinsics>,
    /// Twelve row-major numbers of `[R|t]`, comma or space separated;
    /// identity by default.
    #[arg(long)]
    pub extrinsics: Option<String>,
    /// Project a manifest sample instead of a loose cloud.
    #[arg(long, requires = "sample")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub sample: Option<String>,
    /// With `--manifest`: use the miscalibrated extrinsics.
    #[arg(long)]
    pub miscalibrated: bool,
    /// Max-pool window applied after rasterization.
    #[arg(long)]
    pub densify: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Results file, one JSON record per line.
    #[arg(long)]
    pub out: PathBuf,
    /// 1 runs the single-stage optimizer; more runs staged refinement.
    #[arg(long, default_value_t = 1)]
    pub stages: usize,
    /// Range reduction between consecutive stages.
    #[arg(long, default_value_t = 5.0)]
    pub shrink: f64,
    #[arg(long, default_value = "nelder-mead", value_parser = parse_method)]
    pub method: Method,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_d: f64,
    #[arg(long, default_value_t = 40.0)]
    pub lambda_p: f64,
    #[arg(long, default_value_t = 4.0)]
    pub lambda_t: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Densify depth maps inside the point-cloud loss.
    #[arg(long)]
    pub densify: Option<usize>,
    /// Keep complete lines of an existing output and skip their samples.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON-lines predictions.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Output directory (created if its parent exists).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub hist_bin_deg: f64,
    #[arg(long, default_value_t = 0.005)]
    pub hist_bin_m: f64,
    #[arg(long, default_value_t = 20)]
    pub hist_bins: usize,
    /// Render corrected-projection overlays for the first N predictions.
    #[arg(long, default_value_t = 0)]
    pub overlays: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct OverlayArgs {
    #[arg(long)]
    pub depth: PathBuf,
    /// Camera frame; a black canvas of the depth size when absent.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

// ---------------------------------------------------------------------------
// Errors

/// An error with a stable machine-readable code.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new("INVALID_ARGUMENT", message)
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": { "code": self.code, "message": self.message } }).to_string()
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}

fn io_error(path: &Path, e: &std::io::Error) -> CliError {
    let code = if e.kind() == std::io::ErrorKind::NotFound {
        "PATH_NOT_FOUND"
    } else {
        "IO_ERROR"
    };
    CliError::new(code, format!("{}: {e}", path.display()))
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match &e {
            DatasetError::Unreadable { path, source } | DatasetError::Unwritable { path, source } => io_error(path, source),
            DatasetError::ManifestParse(_) | DatasetError::SchemaVersion { .. } => Self::new("PARSE_ERROR", e.to_string()),
            DatasetError::InvalidRequest(_) | DatasetError::InvalidScene(_) => Self::invalid(e.to_string()),
            _ => Self::new("INVALID_INPUT", e.to_string()),
        }
    }
}

impl From<DepthIoError> for CliError {
    fn from(e: DepthIoError) -> Self {
        match &e {
            DepthIoError::Io { path, source } => io_error(path, source),
            _ => Self::new("PARSE_ERROR", e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match &e {
            EvalError::Io { path, source } => io_error(path, source),
            EvalError::UnknownId(_) | EvalError::DimensionMismatch { .. } | EvalError::Empty => {
                Self::new("INVALID_INPUT", e.to_string())
            }
            EvalError::Decode { path, .. } if !path.exists() => {
                Self::new("PATH_NOT_FOUND", e.to_string())
            }
            _ => Self::new("PARSE_ERROR", e.to_string()),
        }
    }
}

impl From<OptimizerError> for CliError {
    fn from(e: OptimizerError) -> Self {
        match &e {
            OptimizerError::InvalidConfig(_) | OptimizerError::InvalidSchedule(_) | OptimizerError::NoGeometricWeight => {
                Self::invalid(e.to_string())
            }
            _ => Self::new("OPTIMIZER_ERROR", e.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// Value parsers

/// Angle with a mandatory `deg` or `rad` suffix, returned in radians.
pub fn parse_angle(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let (num, to_rad) = if let Some(n) = s.strip_suffix("deg") {
        (n, true)
    } else if let Some(n) = s.strip_suffix("rad") {
        (n, false)
    } else {
        return Err(format!("angle {s:?} needs a unit suffix (deg or rad)"));
    };
    let v: f64 = num.trim().parse().map_err(|_| format!("bad angle {s:?}"))?;
    if !v.is_finite() {
        return Err(format!("bad angle {s:?}"));
    }
    Ok(if to_rad { v.to_radians() } else { v })
}

fn parse_scene(s: &str) -> Result<SceneKind, String> {
    s.parse::<SceneKind>().map_err(|e| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

fn parse_sampling(s: &str) -> Result<RotationSampling, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown rotation sampling {s:?}"))
}

fn parse_intrinsics(s: &str) -> Result<CameraIntrinsics, String> {
    let v: Vec<&str> = s.split(',').map(str::trim).collect();
    if v.len() != 6 {
        return Err("expected fx,fy,cx,cy,width,height".into());
    }
    let f = |i: usize| v[i].parse::<f64>().map_err(|_| format!("bad number {:?}", v[i]));
    let u = |i: usize| v[i].parse::<u32>().map_err(|_| format!("bad size {:?}", v[i]));
    CameraIntrinsics::new(f(0)?, f(1)?, f(2)?, f(3)?, u(4)?, u(5)?).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// Shared plumbing

/// Path of the resolved config written beside `out`.
pub fn config_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".config.json");
    out.with_file_name(name)
}

fn require_parent(out: &Path) -> Result<(), CliError> {
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => return Ok(()),
    };
    if parent.is_dir() {
        Ok(())
    } else {
        Err(CliError::new("PATH_NOT_FOUND", format!("output directory {} does not exist", parent.display())))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| io_error(path, &e))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, &e))
}

#[derive(Serialize)]
struct ResolvedConfig<'a, T: Serialize, R: Serialize> {
    subcommand: &'a str,
    args: &'a T,
    threads: usize,
    resolved: R,
    #[serde(skip_serializing_if = "Option::is_none")]
    created_unix: Option<u64>,
}

struct Context {
    threads: usize,
    timestamps: bool,
}

impl Context {
    fn write_config<T: Serialize, R: Serialize>(&self, out: &Path, sub: &str, args: &T, resolved: R) -> Result<(), CliError> {
        let cfg = ResolvedConfig {
            subcommand: sub,
            args,
            threads: self.threads,
            resolved,
            created_unix: self
                .timestamps
                .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)),
        };
        let text = serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n";
        write_file(&config_path(out), text.as_bytes())
    }
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Default extrinsics for synthetic scenes: LiDAR axes (x forward, y left,
/// z up) to camera axes (x right, y down, z forward) with a small offset.
pub fn default_synthetic_extrinsics() -> RigidTransform {
    let r = nalgebra::Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    RigidTransform::from_matrix(&r, nalgebra::Vector3::new(0.0, -0.08, -0.27)).expect("axis swap is a rotation")
}

fn find_calib(dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    for d in [Some(dir), dir.parent()].into_iter().flatten() {
        let p = d.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(CliError::new("PATH_NOT_FOUND", format!("{name} not found in {} or its parent", dir.display())))
}

fn kitti_calib(dir: &Path) -> Result<(CameraIntrinsics, RigidTransform), CliError> {
    let cam = find_calib(dir, "calib_cam_to_cam.txt")?;
    let velo = find_calib(dir, "calib_velo_to_cam.txt")?;
    Ok(load_kitti_calibration(&cam, &velo)?)
}

// ---------------------------------------------------------------------------
// Subcommands

fn cmd_synth(ctx: &Context, a: &SynthArgs) -> Result<(), CliError> {
    require_parent(&a.out)?;
    let range = MiscalibRange::new(a.range.range_rot, a.range.range_trans)
        .map_err(|e| CliError::invalid(e.to_string()))?
        .with_sampling(a.range.rotation_sampling);
    if a.count == 0 {
        return Err(CliError::invalid("--count must be positive"));
    }
    let manifest = if let Some(kind) = a.scene {
        let scenes = a.scenes.unwrap_or(a.count).max(1);
        let clouds: Vec<CloudSource> = (0..scenes)
            .map(|i| {
                CloudSource::Scene(SceneSpec {
                    kind,
                    point_count: a.points,
                    extent: a.extent,
                    seed: derive_sample_seed(a.seed ^ 0x5ce7e, i as u64),
                })
            })
            .collect();
        synthesize_samples(&clouds, &CameraIntrinsics::kitti_like(), &default_synthetic_extrinsics(), &range, a.count, a.seed)?
    } else {
        let dir = a.kitti_dir.as_ref().expect("clap enforces a source");
        synth_kitti(dir, &a.out, &range, a.count, a.seed)?
    };
    write_file(&a.out, manifest_to_json(&manifest).as_bytes())?;
    ctx.write_config(&a.out, "synth", a, range)
}

fn relative_to(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().into_owned()
}

fn synth_kitti(dir: &Path, out: &Path, range: &MiscalibRange, count: usize, seed: u64) -> Result<DatasetManifest, CliError> {
    let (k, base) = kitti_calib(dir)?;
    let velo_dir = dir.join("velodyne_points").join("data");
    let rd = std::fs::read_dir(&velo_dir).map_err(|e| io_error(&velo_dir, &e))?;
    let mut bins: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    bins.sort();
    if bins.is_empty() {
        return Err(CliError::new("INVALID_INPUT", format!("no .bin scans in {}", velo_dir.display())));
    }
    let out_dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let out_abs = std::fs::canonicalize(if out_dir.as_os_str().is_empty() { Path::new(".") } else { &out_dir })
        .map_err(|e| io_error(&out_dir, &e))?;
    let mut rel = Vec::with_capacity(bins.len());
    let mut images = Vec::with_capacity(bins.len());
    for b in &bins {
        let abs = std::fs::canonicalize(b).map_err(|e| io_error(b, &e))?;
        rel.push(CloudSource::File(relative_to(&abs, &out_abs)));
        let stem = b.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let img = dir.join("image_02").join("data").join(format!("{stem}.png"));
        images.push(img.is_file().then(|| {
            std::fs::canonicalize(&img)
                .map(|p| relative_to(&p, &out_abs))
                .unwrap_or_else(|_| img.to_string_lossy().into_owned())
        }));
    }
    let mut m = synthesize_samples(&rel, &k, &base, range, count, seed)?;
    for (i, s) in m.samples.iter_mut().enumerate() {
        s.image_path = images[i % images.len()].clone();
    }
    Ok(m)
}

fn cmd_project(ctx: &Context, a: &ProjectArgs) -> Result<(), CliError> {
    require_parent(&a.out)?;
    let (cloud, k, ext): (PointCloud, CameraIntrinsics, RigidTransform) = if let Some(mpath) = &a.manifest {
        let m = load_manifest(mpath)?;
        let id = a.sample.as_deref().unwrap_or_default();
        let s = m
            .get(id)
            .ok_or_else(|| CliError::new("INVALID_INPUT", format!("sample {id:?} not in manifest")))?;
        let loaded = materialize(s, &base_dir(mpath))?;
        let ext = if a.miscalibrated {
            s.miscalibrated_extrinsics()
        } else {
            compose(&s.target, &s.miscalibrated_extrinsics())
        };
        (loaded.cloud, s.intrinsics, ext)
    } else {
        let cloud = load_kitti_velodyne(a.cloud.as_ref().expect("clap enforces a cloud"))?;
        let (k, default_ext) = match (&a.kitti_calib, a.intrinsics) {
            (Some(dir), _) => kitti_calib(dir)?,
            (None, Some(k)) => (k, RigidTransform::identity()),
            (None, None) => return Err(CliError::invalid("one of --kitti-calib or --intrinsics is required")),
        };
        let ext = match &a.extrinsics {
            Some(text) => RigidTransform::parse_row_major_3x4(text).map_err(|e| CliError::invalid(format!("--extrinsics: {e}")))?,
            None => default_ext,
        };
        (cloud, k, ext)
    };
    let mut dm = rasterize(&project(&cloud, &k, &ext), &k);
    if let Some(w) = a.densify {
        dm = densify_maxpool(&dm, w).map_err(|e| CliError::invalid(e.to_string()))?;
    }
    save_depth_png(&dm, &a.out)?;
    ctx.write_config(&a.out, "project", a, serde_json::json!({ "intrinsics": k, "extrinsics": ext, "present_pixels": dm.present_count() }))
}

/// Truncates a trailing partial line and returns the ids already written.
fn prepare_resume(path: &Path) -> Result<HashSet<String>, CliError> {
    let mut done = HashSet::new();
    let mut f = match std::fs::OpenOptions::new().read(true).write(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(done),
        Err(e) => return Err(io_error(path, &e)),
    };
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| io_error(path, &e))?;
    let mut keep = 0usize;
    for line in bytes.split_inclusive(|&b| b == b'\n') {
        if !line.ends_with(b"\n") {
            break;
        }
        let text = std::str::from_utf8(line).map_err(|_| CliError::new("PARSE_ERROR", "results file is not UTF-8"))?;
        if text.trim().is_empty() {
            keep += line.len();
            continue;
        }
        match serde_json::from_str::<serde_json::Value>(text) {
            Ok(v) => match v.get("sample_id").and_then(|s| s.as_str()) {
                Some(id) => {
                    done.insert(id.to_string());
                }
                None => break,
            },
            Err(_) => break,
        }
        keep += line.len();
    }
    f.set_len(keep as u64).map_err(|e| io_error(path, &e))?;
    f.seek(SeekFrom::End(0)).map_err(|e| io_error(path, &e))?;
    Ok(done)
}

fn cmd_calibrate(ctx: &Context, a: &CalibrateArgs) -> Result<(), CliError> {
    require_parent(&a.out)?;
    let manifest = load_manifest(&a.manifest)?;
    let weights = LossWeights {
        lambda_t: a.lambda_t,
        lambda_d: a.lambda_d,
        lambda_p: a.lambda_p,
        alpha: a.alpha,
    };
    weights.validate().map_err(|e| CliError::invalid(e.to_string()))?;
    if !weights.has_geometric_term() {
        return Err(CliError::invalid("at least one of --lambda-d, --lambda-p must be positive"));
    }
    if a.stages == 0 {
        return Err(CliError::invalid("--stages must be at least 1"));
    }
    if manifest.range.rot_max == 0.0 && manifest.range.trans_max == 0.0 && a.stages > 1 {
        return Err(CliError::invalid("a zero-range manifest supports a single stage only"));
    }
    let mut schedule = RefinementSchedule::geometric(&manifest.range, a.stages, a.shrink)?;
    for st in &mut schedule.stages {
        st.config.method = a.method;
        if let Some(n) = a.max_iters {
            st.config.max_iters = n;
        }
        if let Some(t) = a.tol {
            st.config.convergence_tol = t;
        }
        st.config.loss_options = LossOptions { densify_window: a.densify };
        st.config.validate()?;
    }
    schedule.validate()?;

    let done = if a.resume { prepare_resume(&a.out)? } else { HashSet::new() };
    let mut file = if a.resume {
        std::fs::OpenOptions::new().create(true).append(true).open(&a.out)
    } else {
        std::fs::File::create(&a.out)
    }
    .map_err(|e| io_error(&a.out, &e))?;
    ctx.write_config(&a.out, "calibrate", a, serde_json::json!({ "weights": weights, "schedule": schedule }))?;

    let base = base_dir(&a.manifest);
    let todo: Vec<_> = manifest.samples.iter().filter(|s| !done.contains(&s.id)).collect();
    let run_one = |s: &crate::dataset::CalibSample| -> Result<CalibrationResult, CliError> {
        let loaded = materialize(s, &base)?;
        let r = if a.stages == 1 {
            optimize_single(&loaded, &weights, &schedule.stages[0].config)?
        } else {
            optimize_refined(&loaded, &weights, &schedule)?
        };
        Ok(r)
    };
    // Results stream out in manifest order in chunks of one per worker.
    let chunk = ctx.threads.max(1);
    for group in todo.chunks(chunk) {
        let results: Vec<Result<CalibrationResult, CliError>> = group.par_iter().map(|s| run_one(s)).collect();
        for r in results {
            let r = r?;
            let line = serde_json::to_string(&r).expect("result serializes") + "\n";
            file.write_all(line.as_bytes()).map_err(|e| io_error(&a.out, &e))?;
            file.flush().map_err(|e| io_error(&a.out, &e))?;
        }
    }
    Ok(())
}

fn cmd_eval(ctx: &Context, a: &EvalArgs) -> Result<(), CliError> {
    require_parent(&a.out)?;
    let manifest = load_manifest(&a.manifest)?;
    let preds = parse_predictions_jsonl(&read_text(&a.predictions)?)?;
    if !(a.hist_bin_deg > 0.0 && a.hist_bin_m > 0.0 && a.hist_bins > 0) {
        return Err(CliError::invalid("histogram bins must be positive"));
    }
    if !a.out.is_dir() {
        std::fs::create_dir(&a.out).map_err(|e| io_error(&a.out, &e))?;
    }
    let records = {
        let chunks: Vec<_> = preds.par_chunks(64).map(|c| evaluate_batch(c, &manifest)).collect();
        let mut all = Vec::with_capacity(preds.len());
        for c in chunks {
            all.extend(c?);
        }
        all
    };
    let spec = HistogramSpec {
        geodesic_bin_deg: a.hist_bin_deg,
        translation_bin_m: a.hist_bin_m,
        bins: a.hist_bins,
    };
    let summary = summarize_with(&records, &spec)?;
    let mut lines = String::new();
    for r in &records {
        lines.push_str(&serde_json::to_string(r).expect("record serializes"));
        lines.push('\n');
    }
    write_file(&a.out.join("records.jsonl"), lines.as_bytes())?;
    render_report(&summary, &a.out)?;

    let base = base_dir(&a.manifest);
    for p in preds.iter().take(a.overlays) {
        let s = manifest.get(&p.sample_id).expect("ids were checked by evaluation");
        let loaded = materialize(s, &base)?;
        let ext = compose(&p.predicted, &s.miscalibrated_extrinsics());
        let dm = rasterize(&project(&loaded.cloud, &s.intrinsics, &ext), &s.intrinsics);
        let out = a.out.join(format!("overlay_{}.png", p.sample_id));
        match &s.image_path {
            Some(img) => render_overlay(&base.join(img), &dm, &out)?,
            None => write_overlay(&blank_image(dm.width, dm.height, [0, 0, 0]), &dm, &out)?,
        }
    }
    ctx.write_config(&a.out.join("eval"), "eval", a, spec)
}

fn write_overlay(img: &image::RgbImage, dm: &DepthMap, out: &Path) -> Result<(), CliError> {
    let o = overlay_depth(img, dm, OVERLAY_ALPHA)?;
    o.save_with_format(out, image::ImageFormat::Png)
        .map_err(|e| CliError::new("IO_ERROR", format!("{}: {e}", out.display())))
}

fn cmd_overlay(ctx: &Context, a: &OverlayArgs) -> Result<(), CliError> {
    require_parent(&a.out)?;
    let dm = load_depth_png(&a.depth)?;
    match &a.image {
        Some(img) => render_overlay(img, &dm, &a.out)?,
        None => write_overlay(&blank_image(dm.width, dm.height, [0, 0, 0]), &dm, &a.out)?,
    }
    ctx.write_config(&a.out, "overlay", a, serde_json::Value::Null)
}

/// Parses `args`, runs the subcommand and returns the process exit code.
/// Errors are printed to stderr as a single JSON object.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let msg = e.render().to_string();
            eprintln!("{}", CliError::new("USAGE", msg.trim_end()).to_json());
            return 2;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            1
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let threads = match cli.threads {
        Some(0) => return Err(CliError::invalid("--threads must be positive")),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let ctx = Context {
        threads,
        timestamps: !cli.no_timestamps,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::new("IO_ERROR", e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Project(a) => cmd_project(&ctx, a),
        Command::Calibrate(a) => cmd_calibrate(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Overlay(a) => cmd_overlay(&ctx, a),
    })
}

/// Reads the sample ids of a results file, ignoring a trailing partial line.
pub fn completed_ids(path: &Path) -> std::io::Result<Vec<String>> {
    let f = std::fs::File::open(path)?;
    let mut ids = Vec::new();
    for line in std::io::BufReader::new(f).lines() {
        let line = line?;
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(&line) {
            if let Some(id) = v.get("sample_id").and_then(|s| s.as_str()) {
                ids.push(id.to_string());
            }
        }
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles_need_units() {
        assert!((parse_angle("10deg").unwrap() - 10f64.to_radians()).abs() < 1e-15);
        assert_eq!(parse_angle("0.5rad").unwrap(), 0.5);
        assert!(parse_angle("10").is_err());
        assert!(parse_angle("xdeg").is_err());
    }

    #[test]
    fn config_sits_beside_output() {
        assert_eq!(config_path(Path::new("a/m.json")), PathBuf::from("a/m.json.config.json"));
    }

    #[test]
    fn synthetic_extrinsics_look_forward() {
        let t = default_synthetic_extrinsics();
        let p = t.transform_point(&nalgebra::Vector3::new(10.0, 0.0, 0.0));
        assert!(p.z > 9.0 && p.x.abs() < 1e-12);
    }

    #[test]
    fn missing_output_dir() {
        let code = run(["calibforge", "synth", "--scene", "random-frustum", "--count", "1", "--range-rot", "1deg", "--range-trans", "0.1", "--out", "/nonexistent/dir/m.json"]);
        assert_eq!(code, 1);
        let err = cmd_synth(
            &Context { threads: 1, timestamps: false },
            &SynthArgs {
                scene: Some(SceneKind::RandomFrustum),
                kitti_dir: None,
                points: 10,
                extent: 10.0,
                scenes: None,
                count: 1,
                range: RangeArgs { range_rot: 0.1, range_trans: 0.1, rotation_sampling: RotationSampling::PerAxisEuler },
                seed: 0,
                out: PathBuf::from("/nonexistent/dir/m.json"),
            },
        )
        .unwrap_err();
        assert_eq!(err.code, "PATH_NOT_FOUND");
    }

    #[test]
    fn resume_truncates_partial_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        std::fs::write(&p, "{\"sample_id\":\"a\"}\n{\"sample_id\":\"b\"}\n{\"sample_").unwrap();
        let done = prepare_resume(&p).unwrap();
        assert_eq!(done.len(), 2);
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "{\"sample_id\":\"a\"}\n{\"sample_id\":\"b\"}\n");
        assert_eq!(completed_ids(&p).unwrap(), vec!["a", "b"]);
    }
}
