//! Synthetic ground truth, prior sampling, measurement synthesis, and the
//! one-step estimator-bias experiment.

use nalgebra::{Matrix3, Vector3, Vector4, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::factors::{Loss, Measurement};
use crate::interp::Trajectory;
use crate::liegroup::{exp_map, Pose};
use crate::prior::{Knot, PriorConfig, PriorOrder};
use crate::solver::{PriorWeighting, Problem, SolverOptions};

/// One dense ground-truth sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtSample {
    pub t: f64,
    pub pose: Pose<f64>,
    pub velocity: Vector6<f64>,
    pub acceleration: Vector6<f64>,
}

/// Dense ground-truth trajectory. Between samples the motion is
/// `T(t_k + s) = exp((s varpi_k + s^2/2 varpi_dot_k)^) T_k`, the same step the
/// generators integrate with, so queries between samples are exact.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub samples: Vec<GtSample>,
    /// How the trajectory was produced, for run summaries.
    pub descriptor: String,
}

fn advance(s: &GtSample, dt: f64) -> Pose<f64> {
    exp_map(&(s.velocity * dt + s.acceleration * (0.5 * dt * dt))) * s.pose
}

impl GroundTruth {
    pub fn start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    fn index_at(&self, t: f64) -> Result<usize> {
        if !(t >= self.start() && t <= self.end()) {
            return Err(Error::QueryOutOfRange {
                tau: t,
                start: self.start(),
                end: self.end(),
            });
        }
        let k = self.samples.partition_point(|s| s.t <= t);
        Ok(k.saturating_sub(1).min(self.samples.len() - 1))
    }

    /// Pose at any time inside the sampled span.
    pub fn pose_at(&self, t: f64) -> Result<Pose<f64>> {
        let k = self.index_at(t)?;
        let s = &self.samples[k];
        Ok(advance(s, t - s.t))
    }

    /// Full state at any time inside the sampled span.
    pub fn state_at(&self, t: f64) -> Result<GtSample> {
        let k = self.index_at(t)?;
        let s = &self.samples[k];
        let dt = t - s.t;
        Ok(GtSample {
            t,
            pose: advance(s, dt),
            velocity: s.velocity + s.acceleration * dt,
            acceleration: s.acceleration,
        })
    }

    /// Ground-truth knots at the given times, tagged with `order`.
    pub fn knots(&self, times: &[f64], order: PriorOrder) -> Result<Trajectory<f64>> {
        let knots = times
            .iter()
            .map(|&t| {
                let s = self.state_at(t)?;
                let acc = match order {
                    PriorOrder::Wnoa => Vector6::zeros(),
                    PriorOrder::Wnoj => s.acceleration,
                };
                Ok(Knot::new(t, s.pose, s.velocity, acc))
            })
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(order, knots)
    }
}

fn check_step(duration: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0 && duration.is_finite() && duration > 0.0) {
        return Err(Error::InvalidTime(format!(
            "duration {duration} and step {dt} must be positive"
        )));
    }
    Ok((duration / dt).round() as usize)
}

/// Euler-Maruyama sample of the prior SDE starting at the identity with the
/// given velocity and acceleration. White noise of variance `qc * dt` per
/// step drives the acceleration (WNOA) or the jerk (WNOJ). Zero entries of
/// `qc` are allowed and switch the noise off in that degree of freedom.
pub fn sample_prior_trajectory(
    order: PriorOrder,
    qc: &Vector6<f64>,
    initial_velocity: &Vector6<f64>,
    initial_acceleration: &Vector6<f64>,
    duration: f64,
    dt: f64,
    seed: u64,
) -> Result<GroundTruth> {
    let steps = check_step(duration, dt)?;
    if qc.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
        return Err(Error::InvalidPrior(
            "sampling spectral densities must be non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = qc.map(|q| (q * dt).sqrt());
    let mut cur = GtSample {
        t: 0.0,
        pose: Pose::identity(),
        velocity: *initial_velocity,
        acceleration: match order {
            PriorOrder::Wnoa => Vector6::zeros(),
            PriorOrder::Wnoj => *initial_acceleration,
        },
    };
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push(cur);
    for k in 1..=steps {
        let noise = Vector6::from_fn(|i, _| {
            let n: f64 = StandardNormal.sample(&mut rng);
            n * sd[i]
        });
        let pose = advance(&cur, dt);
        let (velocity, acceleration) = match order {
            PriorOrder::Wnoa => (cur.velocity + noise, Vector6::zeros()),
            PriorOrder::Wnoj => (
                cur.velocity + cur.acceleration * dt,
                cur.acceleration + noise,
            ),
        };
        cur = GtSample {
            t: k as f64 * dt,
            pose,
            velocity,
            acceleration,
        };
        samples.push(cur);
    }
    Ok(GroundTruth {
        samples,
        descriptor: format!("{order} prior sample, seed {seed}"),
    })
}

/// Constant body acceleration held for `duration` seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileSegment {
    pub duration: f64,
    pub acceleration: Vector6<f64>,
}

/// Integrates a sequence of constant-acceleration segments from the identity
/// pose at `initial_velocity`, sampling every `dt`. Segment boundaries are
/// honoured exactly even when they fall between samples.
pub fn make_piecewise_profile(
    segments: &[ProfileSegment],
    initial_velocity: &Vector6<f64>,
    dt: f64,
) -> Result<GroundTruth> {
    let total: f64 = segments.iter().map(|s| s.duration).sum();
    check_step(total, dt)?;
    if segments.iter().any(|s| !(s.duration > 0.0)) {
        return Err(Error::InvalidTime("segment durations must be positive".into()));
    }
    let mut samples = Vec::new();
    let mut cur = GtSample {
        t: 0.0,
        pose: Pose::identity(),
        velocity: *initial_velocity,
        acceleration: segments[0].acceleration,
    };
    samples.push(cur);
    let mut seg_end = 0.0;
    for (idx, seg) in segments.iter().enumerate() {
        seg_end += seg.duration;
        cur.acceleration = seg.acceleration;
        // Boundary sample so every dense interval has one constant acceleration.
        if let Some(last) = samples.last_mut() {
            last.acceleration = seg.acceleration;
        }
        let last_seg = idx + 1 == segments.len();
        loop {
            let next_t = cur.t + dt;
            let (target, boundary) = if next_t >= seg_end - 1e-9 * dt.max(1.0) {
                (seg_end, true)
            } else {
                (next_t, false)
            };
            let h = target - cur.t;
            if h > 1e-12 {
                cur = GtSample {
                    t: target,
                    pose: advance(&cur, h),
                    velocity: cur.velocity + cur.acceleration * h,
                    acceleration: cur.acceleration,
                };
                samples.push(cur);
            }
            if boundary {
                break;
            }
        }
        if last_seg {
            break;
        }
    }
    Ok(GroundTruth {
        samples,
        descriptor: format!("piecewise profile, {} segments", segments.len()),
    })
}

/// Moving average of a piecewise-constant acceleration over `window` seconds,
/// resampled as one segment per `dt`. Each step in acceleration becomes a
/// linear ramp, so jerk stays below `|step| / window`, while every velocity
/// change is preserved. The acceleration is taken as zero outside the segments.
pub fn smooth_profile(segments: &[ProfileSegment], window: f64, dt: f64) -> Result<Vec<ProfileSegment>> {
    let total: f64 = segments.iter().map(|s| s.duration).sum();
    check_step(total, dt)?;
    if !(window > 0.0) {
        return Err(Error::InvalidTime(format!("smoothing window {window} must be positive")));
    }
    // integral of the acceleration from 0 to t
    let integral = |t: f64| {
        let mut acc = Vector6::zeros();
        let mut start = 0.0;
        for s in segments {
            let end = start + s.duration;
            let hi = t.min(end);
            if hi > start {
                acc += s.acceleration * (hi - start);
            }
            if t <= end {
                break;
            }
            start = end;
        }
        acc
    };
    let steps = (total / dt).round().max(1.0) as usize;
    let h = total / steps as f64;
    Ok((0..steps)
        .map(|k| {
            let mid = (k as f64 + 0.5) * h;
            let lo = (mid - 0.5 * window).max(0.0);
            let hi = (mid + 0.5 * window).min(total);
            ProfileSegment {
                duration: h,
                acceleration: (integral(hi) - integral(lo)) / window,
            }
        })
        .collect())
}

/// Seconds over which manoeuvre accelerations ramp in and out.
const JERK_WINDOW: f64 = 1.0;

/// Random urban-driving profile: a rest period, then accelerate, cruise,
/// brake, and turn manoeuvres. Accelerations ramp over one second, so the
/// motion is jerk-limited like a real vehicle.
pub fn urban_profile(duration: f64, dt: f64, seed: u64) -> Result<GroundTruth> {
    check_step(duration, dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = vec![ProfileSegment {
        duration: 2.0,
        acceleration: Vector6::zeros(),
    }];
    let mut t = 2.0;
    let mut speed = 0.0_f64;
    let accel = |fwd: f64, yaw: f64| Vector6::new(fwd, 0.0, 0.0, 0.0, 0.0, yaw);
    while t < duration {
        let choice: f64 = rng.random();
        let push = |segs: &mut Vec<ProfileSegment>, d: f64, a: Vector6<f64>| {
            segs.push(ProfileSegment {
                duration: d,
                acceleration: a,
            });
        };
        if speed < 3.0 || (choice < 0.3 && speed < 12.0) {
            // accelerate
            let a = rng.random_range(1.0..2.5);
            let d = rng.random_range(2.0..5.0_f64).min((15.0 - speed) / a).max(0.5);
            push(&mut segments, d, accel(a, 0.0));
            speed += a * d;
            t += d;
        } else if choice < 0.5 {
            // brake, not to a full stop
            let a = rng.random_range(1.0..3.0);
            let d = rng.random_range(1.0..4.0_f64).min((speed - 2.0) / a).max(0.3);
            push(&mut segments, d, accel(-a, 0.0));
            speed -= a * d;
            t += d;
        } else if choice < 0.75 {
            // cruise
            let d = rng.random_range(2.0..6.0);
            push(&mut segments, d, Vector6::zeros());
            t += d;
        } else {
            // turn: ramp the yaw rate up, hold, ramp down
            let alpha = rng.random_range(0.2..0.5) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let ramp = rng.random_range(1.0..2.0);
            let hold = rng.random_range(1.0..3.0);
            push(&mut segments, ramp, accel(0.0, alpha));
            push(&mut segments, hold, Vector6::zeros());
            push(&mut segments, ramp, accel(0.0, -alpha));
            t += 2.0 * ramp + hold;
        }
    }
    // trim to the requested duration
    let mut acc = 0.0;
    let mut trimmed = Vec::new();
    for s in segments {
        if acc >= duration {
            break;
        }
        let d = s.duration.min(duration - acc);
        trimmed.push(ProfileSegment {
            duration: d,
            acceleration: s.acceleration,
        });
        acc += d;
    }
    let smooth = smooth_profile(&trimmed, JERK_WINDOW, dt)?;
    let mut gt = make_piecewise_profile(&smooth, &Vector6::zeros(), dt)?;
    gt.descriptor = format!("urban profile, seed {seed}");
    Ok(gt)
}

/// Synthetic landmarks and the sensor that observes them.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub landmarks: Vec<Vector3<f64>>,
    /// Per-axis standard deviation of the point noise (meters).
    pub noise_std: f64,
    /// Landmarks farther than this from the sensor are not observed.
    pub sensor_range: f64,
    /// Measurement rate (Hz); measurement times are spread continuously.
    pub rate_hz: f64,
    /// Fraction of measurements synthesized as point-to-plane.
    pub plane_fraction: f64,
}

/// Scatters `count` landmarks uniformly in axis-aligned boxes of edge `box_size`
/// centred on randomly chosen sensor positions along the trajectory.
pub fn landmarks_along(gt: &GroundTruth, count: usize, box_size: f64, seed: u64) -> Result<Vec<Vector3<f64>>> {
    if count == 0 {
        return Err(Error::Config("landmark count must be at least one".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 0.5 * box_size;
    (0..count)
        .map(|_| {
            let t = rng.random_range(gt.start()..=gt.end());
            let centre = gt.pose_at(t)?.inverse().translation();
            let off = Vector3::from_fn(|_, _| rng.random_range(-half..half));
            Ok(centre + off)
        })
        .collect()
}

fn homog(v: &Vector3<f64>) -> Vector4<f64> {
    Vector4::new(v.x, v.y, v.z, 1.0)
}

/// Measures landmarks at `rate_hz` continuous times. At each time one
/// landmark within range is chosen, cycling through the visible set, and
/// observed as `p = T(tau) q + noise` in the sensor frame.
pub fn synthesize_measurements(gt: &GroundTruth, world: &World, seed: u64) -> Result<Vec<Measurement<f64>>> {
    if world.landmarks.is_empty() {
        return Err(Error::Config("world has no landmarks".into()));
    }
    if !(world.rate_hz > 0.0 && world.noise_std >= 0.0 && world.sensor_range > 0.0) {
        return Err(Error::Config(
            "rate, noise, and sensor range must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = 1.0 / world.rate_hz;
    let count = ((gt.end() - gt.start()) / period).floor() as usize;
    let sigma = world.noise_std;
    let cov = Matrix3::identity() * (sigma * sigma).max(1e-12);
    let mut out = Vec::with_capacity(count);
    let mut cursor = 0usize;
    for k in 1..=count {
        // jitter inside the slot keeps measurement times off the knot grid
        let tau = gt.start() + (k as f64 - rng.random_range(0.05..0.95)) * period;
        let pose = gt.pose_at(tau)?;
        let centre = pose.inverse().translation();
        let visible: Vec<usize> = world
            .landmarks
            .iter()
            .enumerate()
            .filter(|(_, l)| (*l - centre).norm() <= world.sensor_range)
            .map(|(i, _)| i)
            .collect();
        if visible.is_empty() {
            continue;
        }
        let q = world.landmarks[visible[cursor % visible.len()]];
        cursor = cursor.wrapping_add(1 + rng.random_range(0..visible.len()));
        let noise = Vector3::from_fn(|_, _| {
            let n: f64 = StandardNormal.sample(&mut rng);
            n * sigma
        });
        let clean = pose.transform_point(&q);
        let p = homog(&(clean + noise));
        let m = if rng.random::<f64>() < world.plane_fraction {
            let raw = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let n_ref: Vector3<f64> = raw.normalize();
            let normal = pose.rotation() * n_ref;
            Measurement::plane(tau, p, homog(&q), normal, 1.0 / (sigma * sigma).max(1e-12))?
        } else {
            Measurement::point(tau, p, homog(&q), cov)?
        };
        out.push(m);
    }
    Ok(out)
}

/// Outcome of the one-step bias experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasExperimentResult {
    /// Pose perturbation of the second knot after one Gauss-Newton step.
    pub delta_xi: Vector6<f64>,
    /// Closed-form prediction (zero for WNOJ, whose prior mean is exact here).
    pub closed_form: Vector6<f64>,
    /// Denominator of the closed form; only defined for forward WNOA runs.
    pub m_denominator: Option<f64>,
}

/// `m = (a - 4x)^2 + 16 (y^2 + z^2 + 2)`.
pub fn bias_denominator(a: f64, p: &Vector3<f64>) -> f64 {
    (a - 4.0 * p.x).powi(2) + 16.0 * (p.y * p.y + p.z * p.z + 2.0)
}

/// Closed-form one-step WNOA pose perturbation under forward acceleration `a`
/// with one unit-covariance point measurement whose transformed point is `p`.
pub fn bias_closed_form(a: f64, p: &Vector3<f64>) -> Vector6<f64> {
    let (x, y, z) = (p.x, p.y, p.z);
    let m = bias_denominator(a, p);
    Vector6::new(
        -0.25 * a * ((a - 4.0 * x).powi(2) + 32.0 * (y * y + z * z + 1.0)),
        a * y * (a + 4.0 * x),
        a * z * (a + 4.0 * x),
        0.0,
        8.0 * a * z,
        -8.0 * a * y,
    ) / m
}

/// Runs the bias setup with acceleration `a` along body degree of freedom
/// `axis` (0 = forward, 5 = yaw).
pub fn run_bias_experiment_axis(
    a: f64,
    axis: usize,
    point: &Vector3<f64>,
    order: PriorOrder,
) -> Result<BiasExperimentResult> {
    if axis >= 6 {
        return Err(Error::Config(format!("axis {axis} out of range")));
    }
    let mut acc = Vector6::zeros();
    acc[axis] = a;
    // Start at rest at the identity and accelerate for one second.
    let k0 = Knot::new(
        0.0,
        Pose::identity(),
        Vector6::zeros(),
        if order == PriorOrder::Wnoj { acc } else { Vector6::zeros() },
    );
    let t1 = exp_map(&(acc * 0.5));
    let k1 = Knot::new(
        1.0,
        t1,
        acc,
        if order == PriorOrder::Wnoj { acc } else { Vector6::zeros() },
    );
    let q = t1.inverse().transform_point(point);
    let m = Measurement::point(1.0, homog(point), homog(&q), Matrix3::identity())?;
    let cfg = PriorConfig::new(order, Vector6::repeat(1.0))?;
    let traj = Trajectory::new(order, vec![k0, k1])?;
    let problem = Problem::new(traj, cfg, vec![m], 0.0)?
        .with_fixed(&[0])?
        .with_loss(Loss::Quadratic)
        .with_prior_weighting(PriorWeighting::Identity);
    let (_, step) = problem.gauss_newton_step(&SolverOptions::default())?;
    let delta_xi = Vector6::from_column_slice(&step.delta[1].as_slice()[..6]);
    let forward_wnoa = order == PriorOrder::Wnoa && axis == 0;
    Ok(BiasExperimentResult {
        delta_xi,
        closed_form: if forward_wnoa { bias_closed_form(a, point) } else { Vector6::zeros() },
        m_denominator: forward_wnoa.then(|| bias_denominator(a, point)),
    })
}

/// Bias setup with forward acceleration `a`; `point` is the measured point
/// `T_op q` at the second knot.
pub fn run_bias_experiment(a: f64, point: &Vector3<f64>, order: PriorOrder) -> Result<BiasExperimentResult> {
    run_bias_experiment_axis(a, 0, point, order)
}
