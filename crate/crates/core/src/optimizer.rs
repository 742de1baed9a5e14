//! Direct 6DoF recovery by minimizing the geometric losses, and staged
//! coarse-to-fine refinement.
//!
//! Each stage searches a local 6-vector `δ = (rotvec, translation)` around
//! the current estimate `T_acc`, evaluating `exp(δ) ∘ T_acc`. The stage's
//! transform `T_i = exp(δ*)` is chained so that
//! `T_pred⁻¹ = T_0⁻¹·T_1⁻¹·…`, i.e. `T_pred = …·T_1·T_0`.

use crate::dataset::{CalibSample, LoadedSample};
use crate::losses::{central_difference, from_params, LossBreakdown, LossError, LossEvaluator, LossOptions, LossWeights};
use crate::se3::{compose, geodesic_rotation_error, invert, MiscalibRange, RigidTransform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fraction of a stage's range used as the initial simplex / step size.
pub const INITIAL_STEP_FRACTION: f64 = 0.2;

pub const DEFAULT_STEP_TOL: f64 = 1e-6;

fn default_step_tol() -> f64 {
    DEFAULT_STEP_TOL
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("optimization needs a geometric loss weight (lambda_d or lambda_p) > 0")]
    NoGeometricWeight,
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("invalid refinement schedule: {0}")]
    InvalidSchedule(String),
    #[error("loss is undefined at the starting point: {0}")]
    DegenerateStart(LossError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    NelderMead,
    GradientDescentFd,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nelder-mead" | "nm" => Ok(Self::NelderMead),
            "gradient-descent-fd" | "gd" => Ok(Self::GradientDescentFd),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

/// Initial search scale in radians and meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSize {
    pub rot: f64,
    pub trans: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    pub max_iters: usize,
    pub initial_step: StepSize,
    /// Converged once the loss spread across the simplex (or the last
    /// accepted decrease, for gradient descent) falls to this value.
    pub convergence_tol: f64,
    /// Converged once the simplex (or the line-search step) spans at most
    /// this much, in units of `initial_step`.
    #[serde(default = "default_step_tol")]
    pub step_tol: f64,
    /// Finite-difference step for gradient descent.
    pub fd_step: f64,
    #[serde(default)]
    pub loss_options: LossOptions,
}

impl OptimizerConfig {
    /// Nelder–Mead defaults scaled to `range`.
    pub fn for_range(range: &MiscalibRange) -> Self {
        let frac = |v: f64| if v > 0.0 { v * INITIAL_STEP_FRACTION } else { 1e-3 };
        Self {
            method: Method::NelderMead,
            max_iters: 3000,
            initial_step: StepSize {
                rot: frac(range.rot_max),
                trans: frac(range.trans_max),
            },
            convergence_tol: 1e-12,
            step_tol: DEFAULT_STEP_TOL,
            fd_step: 1e-6,
            loss_options: LossOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::InvalidConfig(m.to_string()));
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.initial_step.rot) || !pos(self.initial_step.trans) {
            return bad("initial steps must be positive");
        }
        if !pos(self.convergence_tol) || !pos(self.fd_step) || !pos(self.step_tol) {
            return bad("tolerances must be positive");
        }
        Ok(())
    }

    fn scales(&self) -> [f64; 6] {
        let (r, t) = (self.initial_step.rot, self.initial_step.trans);
        [r, r, r, t, t, t]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementStage {
    pub range: MiscalibRange,
    pub config: OptimizerConfig,
}

/// Stages ordered from the largest range to the smallest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementSchedule {
    pub stages: Vec<RefinementStage>,
}

impl RefinementSchedule {
    pub fn new(stages: Vec<RefinementStage>) -> Result<Self, OptimizerError> {
        let s = Self { stages };
        s.validate()?;
        Ok(s)
    }

    /// `count` stages starting at `range`, each `shrink` times smaller.
    pub fn geometric(range: &MiscalibRange, count: usize, shrink: f64) -> Result<Self, OptimizerError> {
        if !(shrink > 1.0) {
            return Err(OptimizerError::InvalidSchedule(format!("shrink factor must exceed 1, got {shrink}")));
        }
        let stages = (0..count)
            .map(|i| {
                let f = shrink.powi(i as i32);
                let r = MiscalibRange {
                    rot_max: range.rot_max / f,
                    trans_max: range.trans_max / f,
                    sampling: range.sampling,
                };
                RefinementStage {
                    range: r,
                    config: OptimizerConfig::for_range(&r),
                }
            })
            .collect();
        Self::new(stages)
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.stages.is_empty() {
            return Err(OptimizerError::InvalidSchedule("no stages".into()));
        }
        for (i, pair) in self.stages.windows(2).enumerate() {
            if !pair[1].range.strictly_inside(&pair[0].range) {
                return Err(OptimizerError::InvalidSchedule(format!(
                    "stage {} range is not strictly smaller than stage {i}",
                    i + 1
                )));
            }
        }
        for s in &self.stages {
            s.config.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub sample_id: String,
    /// `T_pred`, the estimate of the sample's target.
    pub predicted: RigidTransform,
    /// `T_i` of every stage, first stage first.
    pub per_stage: Vec<RigidTransform>,
    /// Geometric objective at the end of each stage.
    pub stage_losses: Vec<f64>,
    pub final_loss: LossBreakdown,
    pub iterations_used: usize,
    pub converged: bool,
    /// Best objective value after every iteration, all stages concatenated.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

/// `T_pred` from stage transforms: `T_pred⁻¹ = T_0⁻¹·T_1⁻¹·…`.
pub fn compose_stage_chain(per_stage: &[RigidTransform]) -> RigidTransform {
    let inv = per_stage
        .iter()
        .fold(RigidTransform::identity(), |acc, t| compose(&acc, &invert(t)));
    invert(&inv)
}

struct StageOutcome {
    delta: [f64; 6],
    value: f64,
    iterations: usize,
    converged: bool,
}

fn local_transform(delta: &[f64; 6], center: &RigidTransform) -> RigidTransform {
    compose(&from_params(delta), center)
}

/// Nelder–Mead in coordinates scaled by `scales`, starting from the origin.
fn nelder_mead<F>(f: &F, scales: &[f64; 6], start_value: f64, cfg: &OptimizerConfig, trace: &mut Vec<f64>) -> StageOutcome
where
    F: Fn(&[f64; 6]) -> f64,
{
    const N: usize = 6;
    let eval = |y: &[f64; N]| {
        let mut x = [0.0; N];
        for i in 0..N {
            x[i] = y[i] * scales[i];
        }
        f(&x)
    };
    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push(([0.0; N], start_value));
    for i in 0..N {
        let mut y = [0.0; N];
        y[i] = 1.0;
        simplex.push((y, eval(&y)));
    }
    let order = |s: &mut Vec<([f64; N], f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    order(&mut simplex);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        let best = simplex[0].1;
        let worst = simplex[N].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(y, _)| y.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (worst - best).abs() <= cfg.convergence_tol || diameter <= cfg.step_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = [0.0; N];
        for (y, _) in &simplex[..N] {
            for i in 0..N {
                centroid[i] += y[i] / N as f64;
            }
        }
        let along = |t: f64| {
            let mut y = [0.0; N];
            for i in 0..N {
                y[i] = centroid[i] + t * (simplex[N].0[i] - centroid[i]);
            }
            y
        };
        let reflected = along(-1.0);
        let fr = eval(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(-2.0);
            let fe = eval(&expanded);
            simplex[N] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < simplex[N].1 {
                let c = along(-0.5);
                let v = eval(&c);
                (c, v)
            } else {
                let c = along(0.5);
                let v = eval(&c);
                (c, v)
            };
            if fc < simplex[N].1.min(fr) {
                simplex[N] = (contracted, fc);
            } else {
                let b = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    for i in 0..N {
                        v.0[i] = b[i] + 0.5 * (v.0[i] - b[i]);
                    }
                    v.1 = eval(&v.0);
                }
            }
        }
        order(&mut simplex);
        trace.push(simplex[0].1);
    }
    let mut delta = [0.0; N];
    for i in 0..N {
        delta[i] = simplex[0].0[i] * scales[i];
    }
    StageOutcome {
        delta,
        value: simplex[0].1,
        iterations,
        converged,
    }
}

/// Steepest descent on scaled coordinates with finite-difference gradients
/// and backtracking; only strict decreases are accepted.
fn gradient_descent<F>(f: &F, scales: &[f64; 6], start_value: f64, cfg: &OptimizerConfig, trace: &mut Vec<f64>) -> StageOutcome
where
    F: Fn(&[f64; 6]) -> f64,
{
    let eval = |y: &[f64; 6]| {
        let mut x = [0.0; 6];
        for i in 0..6 {
            x[i] = y[i] * scales[i];
        }
        f(&x)
    };
    let mut y = [0.0; 6];
    let mut value = start_value;
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        let g = central_difference(|p| Ok::<_, ()>(eval(p)), &y, cfg.fd_step).unwrap_or([0.0; 6]);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = None;
        while step > cfg.step_tol {
            let mut cand = y;
            for i in 0..6 {
                cand[i] -= step * g[i] / norm;
            }
            let v = eval(&cand);
            if v < value - 1e-4 * step * norm {
                accepted = Some((cand, v));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, v)) => {
                let decrease = value - v;
                y = cand;
                value = v;
                step *= 2.0;
                trace.push(value);
                if decrease <= cfg.convergence_tol {
                    converged = true;
                    break;
                }
            }
            None => {
                converged = true;
                trace.push(value);
                break;
            }
        }
    }
    let mut delta = [0.0; 6];
    for i in 0..6 {
        delta[i] = y[i] * scales[i];
    }
    StageOutcome {
        delta,
        value,
        iterations,
        converged,
    }
}

fn run_stage(
    eval: &LossEvaluator<'_>,
    center: &RigidTransform,
    cfg: &OptimizerConfig,
    trace: &mut Vec<f64>,
) -> Result<StageOutcome, OptimizerError> {
    cfg.validate()?;
    let start = eval.geometric(center).map_err(OptimizerError::DegenerateStart)?;
    // Configurations where no point projects are treated as infinitely bad.
    let objective = |d: &[f64; 6]| eval.geometric(&local_transform(d, center)).unwrap_or(f64::INFINITY);
    let scales = cfg.scales();
    let out = match cfg.method {
        Method::NelderMead => nelder_mead(&objective, &scales, start, cfg, trace),
        Method::GradientDescentFd => gradient_descent(&objective, &scales, start, cfg, trace),
    };
    if out.value <= start {
        Ok(out)
    } else {
        Ok(StageOutcome {
            delta: [0.0; 6],
            value: start,
            ..out
        })
    }
}

fn check_weights(w: &LossWeights) -> Result<(), OptimizerError> {
    w.validate()?;
    if !w.has_geometric_term() {
        return Err(OptimizerError::NoGeometricWeight);
    }
    Ok(())
}

fn finish(
    sample: &LoadedSample,
    w: &LossWeights,
    options: LossOptions,
    per_stage: Vec<RigidTransform>,
    stage_losses: Vec<f64>,
    iterations_used: usize,
    converged: bool,
    trace: Vec<f64>,
) -> Result<CalibrationResult, OptimizerError> {
    let predicted = compose_stage_chain(&per_stage);
    let final_loss = LossEvaluator::new(sample, *w, options)?.evaluate(&predicted)?;
    Ok(CalibrationResult {
        sample_id: sample.record.id.clone(),
        predicted,
        per_stage,
        stage_losses,
        final_loss,
        iterations_used,
        converged,
        trace,
    })
}

/// Single-stage recovery starting from the identity prediction. A run that
/// exhausts its budget still returns its best iterate with
/// `converged == false`.
pub fn optimize_single(sample: &LoadedSample, w: &LossWeights, cfg: &OptimizerConfig) -> Result<CalibrationResult, OptimizerError> {
    check_weights(w)?;
    cfg.validate()?;
    let eval = LossEvaluator::new(sample, *w, cfg.loss_options)?;
    let mut trace = Vec::new();
    let out = run_stage(&eval, &RigidTransform::identity(), cfg, &mut trace)?;
    finish(
        sample,
        w,
        cfg.loss_options,
        vec![from_params(&out.delta)],
        vec![out.value],
        out.iterations,
        out.converged,
        trace,
    )
}

/// Staged recovery: stage `i` searches around the estimate left by the
/// stages before it, with its own range-scaled steps.
pub fn optimize_refined(sample: &LoadedSample, w: &LossWeights, sched: &RefinementSchedule) -> Result<CalibrationResult, OptimizerError> {
    check_weights(w)?;
    sched.validate()?;
    let mut per_stage = Vec::with_capacity(sched.stages.len());
    let mut stage_losses = Vec::with_capacity(sched.stages.len());
    let mut acc = RigidTransform::identity();
    let mut iterations = 0;
    let mut converged = true;
    let mut trace = Vec::new();
    let mut evaluator: Option<(LossOptions, LossEvaluator<'_>)> = None;
    for stage in &sched.stages {
        let opts = stage.config.loss_options;
        if evaluator.as_ref().map(|(o, _)| *o != opts).unwrap_or(true) {
            evaluator = Some((opts, LossEvaluator::new(sample, *w, opts)?));
        }
        let eval = &evaluator.as_ref().expect("evaluator initialized").1;
        let out = run_stage(eval, &acc, &stage.config, &mut trace)?;
        let t_i = from_params(&out.delta);
        acc = compose(&t_i, &acc);
        per_stage.push(t_i);
        stage_losses.push(out.value);
        iterations += out.iterations;
        converged &= out.converged;
    }
    let last_opts = sched
        .stages
        .last()
        .map(|s| s.config.loss_options)
        .unwrap_or_default();
    finish(sample, w, last_opts, per_stage, stage_losses, iterations, converged, trace)
}

/// Geodesic rotation error (radians) and per-axis absolute translation
/// error (meters) of a result against the sample's target.
pub fn evaluate_against_truth(result: &CalibrationResult, sample: &CalibSample) -> (f64, [f64; 3]) {
    prediction_error(&result.predicted, &sample.target)
}

pub fn prediction_error(predicted: &RigidTransform, target: &RigidTransform) -> (f64, [f64; 3]) {
    let geo = geodesic_rotation_error(predicted.rotation(), target.rotation())
        .expect("transforms always hold proper rotations");
    let d = predicted.translation().0 - target.translation().0;
    (geo, [d.x.abs(), d.y.abs(), d.z.abs()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{RotationVector, TranslationVector};

    #[test]
    fn chain_of_identities_is_identity() {
        assert_eq!(compose_stage_chain(&[RigidTransform::identity(); 3]), RigidTransform::identity());
        assert_eq!(compose_stage_chain(&[]), RigidTransform::identity());
    }

    #[test]
    fn chain_order() {
        let t0 = RigidTransform::from_parts(RotationVector::new(0.1, 0.0, 0.0), TranslationVector::new(1.0, 0.0, 0.0));
        let t1 = RigidTransform::from_parts(RotationVector::new(0.0, 0.2, 0.0), TranslationVector::new(0.0, 1.0, 0.0));
        let expect = compose(&t1, &t0);
        let got = compose_stage_chain(&[t0, t1]);
        assert!((got.to_homogeneous() - expect.to_homogeneous()).abs().max() < 1e-12);
    }

    #[test]
    fn schedule_must_shrink() {
        let big = MiscalibRange::new(0.2, 0.3).unwrap();
        let small = MiscalibRange::new(0.05, 0.3).unwrap();
        let stage = |r: MiscalibRange| RefinementStage { range: r, config: OptimizerConfig::for_range(&r) };
        assert!(RefinementSchedule::new(vec![stage(big), stage(small)]).is_err());
        assert!(RefinementSchedule::new(vec![]).is_err());
        assert!(RefinementSchedule::geometric(&big, 3, 5.0).is_ok());
        assert!(RefinementSchedule::geometric(&big, 2, 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = OptimizerConfig::for_range(&MiscalibRange::new(0.2, 0.3).unwrap());
        c.validate().unwrap();
        c.max_iters = 0;
        assert!(c.validate().is_err());
        let z = OptimizerConfig::for_range(&MiscalibRange::zero());
        z.validate().unwrap();
    }

    #[test]
    fn nelder_mead_on_quadratic() {
        let f = |x: &[f64; 6]| x.iter().enumerate().map(|(i, v)| (v - 0.1 * i as f64).powi(2) * (i + 1) as f64).sum::<f64>();
        let cfg = OptimizerConfig::for_range(&MiscalibRange::new(1.0, 1.0).unwrap());
        let mut trace = Vec::new();
        let out = nelder_mead(&f, &cfg.scales(), f(&[0.0; 6]), &cfg, &mut trace);
        assert!(out.converged);
        for (i, v) in out.delta.iter().enumerate() {
            assert!((v - 0.1 * i as f64).abs() < 1e-5, "{:?}", out.delta);
        }
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn gradient_descent_on_quadratic() {
        let f = |x: &[f64; 6]| x.iter().map(|v| (v - 0.3).powi(2)).sum::<f64>();
        let mut cfg = OptimizerConfig::for_range(&MiscalibRange::new(1.0, 1.0).unwrap());
        cfg.method = Method::GradientDescentFd;
        let mut trace = Vec::new();
        let out = gradient_descent(&f, &cfg.scales(), f(&[0.0; 6]), &cfg, &mut trace);
        assert!(out.value < 1e-8, "{}", out.value);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
