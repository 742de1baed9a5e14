use calibforge::camera_projection::CameraIntrinsics;
use calibforge::cli::default_synthetic_extrinsics;
use calibforge::dataset::{materialize, synthesize_samples, CloudSource, LoadedSample, SceneKind, SceneSpec};
use calibforge::losses::{total_loss, LossWeights};
use calibforge::optimizer::{
    compose_stage_chain, optimize_refined, optimize_single, Method,
    OptimizerConfig, RefinementSchedule, RefinementStage,
};
use calibforge::se3::{MiscalibRange, RigidTransform};
use std::path::Path;

fn sample(seed: u64, points: usize, range: &MiscalibRange) -> LoadedSample {
    let spec = SceneSpec { kind: SceneKind::GroundPlaneWalls, point_count: points, extent: 40.0, seed };
    let m = synthesize_samples(
        &[CloudSource::Scene(spec)],
        &CameraIntrinsics::kitti_like(),
        &default_synthetic_extrinsics(),
        range,
        1,
        seed,
    )
    .unwrap();
    materialize(&m.samples[0], Path::new(".")).unwrap()
}

#[test]
fn one_stage_schedule_equals_single_run() {
    let range = MiscalibRange::new(4f64.to_radians(), 0.1).unwrap();
    let s = sample(3, 1500, &range);
    let w = LossWeights::default();
    let mut cfg = OptimizerConfig::for_range(&range);
    cfg.max_iters = 150;
    let single = optimize_single(&s, &w, &cfg).unwrap();
    let sched = RefinementSchedule::new(vec![RefinementStage { range, config: cfg }]).unwrap();
    let refined = optimize_refined(&s, &w, &sched).unwrap();
    assert_eq!(single.predicted, refined.predicted);
    assert_eq!(single.stage_losses, refined.stage_losses);
    assert_eq!(single.iterations_used, refined.iterations_used);
    assert_eq!(single.trace, refined.trace);

    // Same inputs, same bits.
    let again = optimize_single(&s, &w, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&again).unwrap(), serde_json::to_string(&single).unwrap());
}

#[test]
fn trace_is_monotone_and_respects_budget() {
    let range = MiscalibRange::new(5f64.to_radians(), 0.15).unwrap();
    let s = sample(9, 1500, &range);
    let w = LossWeights::default();
    for method in [Method::NelderMead, Method::GradientDescentFd] {
        let mut cfg = OptimizerConfig::for_range(&range);
        cfg.method = method;
        cfg.max_iters = 60;
        let r = optimize_single(&s, &w, &cfg).unwrap();
        assert!(r.iterations_used <= 60);
        assert!(r.trace.windows(2).all(|p| p[1] <= p[0]), "{method:?} trace went up");
        let start = total_loss(&s, &RigidTransform::identity(), &w).unwrap();
        let geometric_start = w.lambda_d * start.depth_map + w.lambda_p * start.point_cloud;
        assert!(r.stage_losses[0] < geometric_start, "{method:?} made no progress");
    }
}

#[test]
fn refined_prediction_is_the_stage_chain() {
    let range = MiscalibRange::new(10f64.to_radians(), 0.25).unwrap();
    let s = sample(21, 1500, &range);
    let mut sched = RefinementSchedule::geometric(&range, 3, 5.0).unwrap();
    for st in &mut sched.stages {
        st.config.max_iters = 120;
    }
    let r = optimize_refined(&s, &LossWeights::default(), &sched).unwrap();
    assert_eq!(r.per_stage.len(), 3);
    assert_eq!(r.stage_losses.len(), 3);
    assert!(r.stage_losses.windows(2).all(|p| p[1] <= p[0]));
    let chain = compose_stage_chain(&r.per_stage);
    assert!((chain.to_homogeneous() - r.predicted.to_homogeneous()).abs().max() <= 1e-9);
}

#[test]
fn invalid_configuration_is_rejected_before_work() {
    let range = MiscalibRange::new(0.1, 0.1).unwrap();
    let s = sample(1, 200, &range);
    let mut cfg = OptimizerConfig::for_range(&range);
    cfg.max_iters = 0;
    assert!(optimize_single(&s, &LossWeights::default(), &cfg).is_err());
    let w = LossWeights { lambda_t: 1.0, lambda_d: 0.0, lambda_p: 0.0, alpha: 1.0 };
    assert!(optimize_single(&s, &w, &OptimizerConfig::for_range(&range)).is_err());
    assert!(RefinementSchedule::geometric(&range, 2, 1.0).is_err());
}
