//! End-to-end experiment: simulate an urban drive, estimate it under a
//! chosen prior, and score the estimate with the segment metric.

use nalgebra::Vector6;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::factors::{Loss, Measurement};
use crate::interp::Trajectory;
use crate::liegroup::{exp_map, Pose};
use crate::metric::{segment_translation_error, SegmentErrors};
use crate::prior::{Knot, PriorOrder};
use crate::sim::{landmarks_along, synthesize_measurements, urban_profile, GroundTruth, World};
use crate::solver::{solve, Problem, SolveReport, SolverOptions};

/// Ground truth and the measurements synthesized from it.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub ground_truth: GroundTruth,
    pub world: World,
    pub measurements: Vec<Measurement<f64>>,
}

// Independent streams for the profile, the landmarks, and the measurements.
fn stream(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k)
}

pub fn simulate(cfg: &ExperimentConfig, seed: u64) -> Result<Simulation> {
    let s = &cfg.sim;
    let ground_truth = urban_profile(s.duration, 1.0 / s.sample_rate, stream(seed, 0))?;
    let world = World {
        landmarks: landmarks_along(&ground_truth, s.landmarks, s.landmark_box, stream(seed, 1))?,
        noise_std: s.noise_std,
        sensor_range: s.sensor_range,
        rate_hz: s.measurement_rate,
        plane_fraction: s.plane_fraction,
    };
    let measurements = synthesize_measurements(&ground_truth, &world, stream(seed, 2))?;
    Ok(Simulation {
        ground_truth,
        world,
        measurements,
    })
}

/// Knot times `0, h, 2h, ...` covering `[0, end]`.
pub fn knot_times(end: f64, spacing: f64) -> Vec<f64> {
    let n = (end / spacing - 1e-9).ceil().max(1.0) as usize;
    (0..=n).map(|k| k as f64 * spacing).collect()
}

/// Constant-velocity (WNOA) or constant-acceleration (WNOJ) prediction.
fn predict(k: &Knot<f64>, order: PriorOrder, t: f64) -> Knot<f64> {
    let s = t - k.t;
    let acc = match order {
        PriorOrder::Wnoa => Vector6::zeros(),
        PriorOrder::Wnoj => k.acceleration,
    };
    let pose = exp_map(&(k.velocity * s + acc * (0.5 * s * s))) * k.pose;
    Knot::new(t, pose, k.velocity + acc * s, acc)
}

fn measurements_between(ms: &[Measurement<f64>], t0: f64, t1: f64) -> Vec<Measurement<f64>> {
    let lo = ms.partition_point(|m| m.tau < t0);
    let hi = ms.partition_point(|m| m.tau <= t1);
    ms[lo..hi].to_vec()
}

/// Estimates the trajectory from measurements sorted by time, starting from
/// rest at the identity. A sliding window solved sequentially provides the
/// initial guess for one batch solve over all knots.
pub fn estimate(
    measurements: &[Measurement<f64>],
    cfg: &ExperimentConfig,
    order: PriorOrder,
) -> Result<(Trajectory<f64>, SolveReport<f64>)> {
    if measurements.is_empty() {
        return Err(Error::InvalidProblem("no measurements to estimate from".into()));
    }
    if measurements.windows(2).any(|w| w[1].tau < w[0].tau) {
        return Err(Error::InvalidProblem("measurements must be sorted by time".into()));
    }
    let prior = cfg.prior_config(order)?;
    let opts = cfg.solver_options();
    let end = measurements[measurements.len() - 1].tau;
    if !(measurements[0].tau >= 0.0) {
        return Err(Error::InvalidTime(format!(
            "measurement time {} precedes the start at 0",
            measurements[0].tau
        )));
    }
    let times = knot_times(end, cfg.solver.knot_spacing);
    let last = times.len() - 1;

    let mut knots = vec![Knot::new(0.0, Pose::identity(), Vector6::zeros(), Vector6::zeros())];
    let init_opts = SolverOptions {
        max_iterations: opts.max_iterations.min(10),
        ..opts
    };
    let step = cfg.solver.init_step;
    let window = cfg.solver.init_window;
    let mut cur = 0;
    while cur < last {
        let new_end = (cur + step).min(last);
        for &t in &times[cur + 1..=new_end] {
            let next = predict(&knots[knots.len() - 1], order, t);
            knots.push(next);
        }
        let w0 = new_end.saturating_sub(window);
        let local = measurements_between(measurements, times[w0], times[new_end]);
        if !local.is_empty() {
            let traj = Trajectory::new(order, knots[w0..=new_end].to_vec())?;
            // Least squares has a far wider basin than the saturating robust
            // cost, which loses lock whenever the prediction is off by more
            // than a few noise deviations.
            let problem = Problem::new(traj, prior.clone(), local, 0.0)?.with_loss(Loss::Quadratic);
            let (solved, _) = solve(&problem, &init_opts)?;
            knots[w0..=new_end].copy_from_slice(solved.knots());
        }
        cur = new_end;
    }

    let traj = Trajectory::new(order, knots)?;
    let problem = Problem::new(traj, prior, measurements.to_vec(), 0.0)?.with_loss(cfg.solver.loss);
    solve(&problem, &opts)
}

/// Scores an estimate against ground truth at the estimate's knot times.
pub fn evaluate(estimate: &Trajectory<f64>, gt: &GroundTruth, lengths: &[f64]) -> Result<SegmentErrors> {
    let mut est = Vec::with_capacity(estimate.len());
    let mut truth = Vec::with_capacity(estimate.len());
    for k in estimate.knots() {
        if k.t > gt.end() {
            break;
        }
        // stored poses map the reference frame into the sensor frame
        est.push(k.pose.inverse());
        truth.push(gt.pose_at(k.t)?.inverse());
    }
    segment_translation_error(&est, &truth, lengths)
}

/// One estimator run and its score.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub order: PriorOrder,
    pub trajectory: Trajectory<f64>,
    pub report: SolveReport<f64>,
    pub errors: SegmentErrors,
}

pub fn run(sim: &Simulation, cfg: &ExperimentConfig, order: PriorOrder) -> Result<RunOutcome> {
    let (trajectory, report) = estimate(&sim.measurements, cfg, order)?;
    let errors = evaluate(&trajectory, &sim.ground_truth, &cfg.metric.segment_lengths)?;
    Ok(RunOutcome {
        order,
        trajectory,
        report,
        errors,
    })
}

/// WNOA and WNOJ estimates from one shared measurement set.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub seed: u64,
    pub wnoa: RunOutcome,
    pub wnoj: RunOutcome,
}

pub fn compare(cfg: &ExperimentConfig, seed: u64) -> Result<Comparison> {
    let sim = simulate(cfg, seed)?;
    Ok(Comparison {
        seed,
        wnoa: run(&sim, cfg, PriorOrder::Wnoa)?,
        wnoj: run(&sim, cfg, PriorOrder::Wnoj)?,
    })
}
