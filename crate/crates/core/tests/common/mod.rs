//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use ctsteam::liegroup::{curly_hat, exp_map, log_map, skew};
use ctsteam::prior::{local_state_at_knots, perturb_knot, PriorOrder};
use ctsteam::sim::sample_prior_trajectory;
use ctsteam::InvJacobian;
use ctsteam::{Knot, Pose};
use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Matrix6, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec6(rng: &mut ChaCha8Rng, scale: f64) -> Vector6<f64> {
    Vector6::from_fn(|_, _| rng.random_range(-scale..scale))
}

pub fn random_vec3(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-scale..scale))
}

pub fn random_pose(rng: &mut ChaCha8Rng, trans: f64, rot: f64) -> Pose<f64> {
    let mut xi = random_vec6(rng, trans);
    for k in 3..6 {
        xi[k] = rng.random_range(-rot..rot);
    }
    exp_map(&xi)
}

/// Bernoulli numbers B_0..B_14 (B_1 = -1/2 convention).
const BERNOULLI: [f64; 15] = [
    1.0,
    -0.5,
    1.0 / 6.0,
    0.0,
    -1.0 / 30.0,
    0.0,
    1.0 / 42.0,
    0.0,
    -1.0 / 30.0,
    0.0,
    5.0 / 66.0,
    0.0,
    -691.0 / 2730.0,
    0.0,
    7.0 / 6.0,
];

/// Truncated series `sum_n B_n / n! (xi^curlywedge)^n` for the inverse left Jacobian.
pub fn bernoulli_inv_left_jacobian(xi: &Vector6<f64>, terms: usize) -> Matrix6<f64> {
    let c = curly_hat(xi);
    let mut power = Matrix6::identity();
    let mut fact = 1.0;
    let mut sum = Matrix6::zeros();
    for n in 0..terms.min(BERNOULLI.len()) {
        if n > 0 {
            fact *= n as f64;
        }
        sum += power * (BERNOULLI[n] / fact);
        power *= c;
    }
    sum
}

/// Truncated matrix-exponential series.
pub fn expm_series(m: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..terms {
        term = &term * m / k as f64;
        sum += &term;
    }
    sum
}

pub fn se3_hat(xi: &Vector6<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&skew(&Vector3::new(xi[3], xi[4], xi[5])));
    m[(0, 3)] = xi[0];
    m[(1, 3)] = xi[1];
    m[(2, 3)] = xi[2];
    m
}

/// `exp(xi^)` via the series of the 4x4 matrix.
pub fn expm_pose(xi: &Vector6<f64>, terms: usize) -> Matrix4<f64> {
    let m = DMatrix::from_column_slice(4, 4, se3_hat(xi).as_slice());
    let e = expm_series(&m, terms);
    Matrix4::from_column_slice(e.as_slice())
}

/// Gauss-Legendre nodes and weights on [-1, 1], 8 points.
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// Composite Gauss-Legendre quadrature of a matrix-valued integrand on [a, b].
pub fn quad_matrix<F: Fn(f64) -> DMatrix<f64>>(f: F, a: f64, b: f64, panels: usize) -> DMatrix<f64> {
    let h = (b - a) / panels as f64;
    let mut sum: Option<DMatrix<f64>> = None;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
            let s = lo + 0.5 * h * (x + 1.0);
            let v = f(s) * (0.5 * h * w);
            sum = Some(match sum {
                Some(acc) => acc + v,
                None => v,
            });
        }
    }
    sum.expect("at least one panel")
}

/// SO(3) left Jacobian from its integral definition `int_0^1 C(a phi) da`.
pub fn so3_left_jacobian_quadrature(phi: &Vector3<f64>) -> Matrix3<f64> {
    let q = quad_matrix(
        |a| {
            let xi = Vector6::new(0.0, 0.0, 0.0, a * phi.x, a * phi.y, a * phi.z);
            let c = expm_pose(&xi, 40);
            DMatrix::from_fn(3, 3, |r, cc| c[(r, cc)])
        },
        0.0,
        1.0,
        16,
    );
    Matrix3::from_fn(|r, c| q[(r, c)])
}

/// Drift matrix `A` and noise map `L` of the local LTI SDE.
pub fn lti_system(order: PriorOrder) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = order.dim();
    let mut a = DMatrix::zeros(n, n);
    for b in 0..order.blocks() - 1 {
        for k in 0..6 {
            a[(6 * b + k, 6 * (b + 1) + k)] = 1.0;
        }
    }
    let mut l = DMatrix::zeros(n, 6);
    for k in 0..6 {
        l[(n - 6 + k, k)] = 1.0;
    }
    (a, l)
}

/// Transition from the matrix exponential of the drift.
pub fn transition_oracle(order: PriorOrder, dt: f64) -> DMatrix<f64> {
    let (a, _) = lti_system(order);
    expm_series(&(a * dt), 12)
}

/// `int_0^dt Phi(dt - s) L Qc L^T Phi(dt - s)^T ds` by quadrature.
pub fn covariance_quadrature(order: PriorOrder, dt: f64, qc: &Vector6<f64>) -> DMatrix<f64> {
    cross_covariance_quadrature(order, dt, dt, qc)
}

/// `int_0^min(s,t) Phi(s - u) L Qc L^T Phi(t - u)^T du`.
pub fn cross_covariance_quadrature(order: PriorOrder, s: f64, t: f64, qc: &Vector6<f64>) -> DMatrix<f64> {
    let (_, l) = lti_system(order);
    let qcm = DMatrix::from_diagonal(&DVector::from_column_slice(qc.as_slice()));
    let lql = &l * qcm * l.transpose();
    let hi = s.min(t);
    quad_matrix(
        |u| transition_oracle(order, s - u) * &lql * transition_oracle(order, t - u).transpose(),
        0.0,
        hi,
        8,
    )
}

pub fn max_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = b.amax().max(1e-300);
    (a - b).amax() / scale
}

/// Relative error used for Jacobian comparisons: entrywise difference scaled
/// by the larger of the matrix magnitude and one.
pub fn jac_rel_err(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    let scale = numeric.amax().max(analytic.amax()).max(1.0);
    (analytic - numeric).amax() / scale
}

/// Central-difference Jacobian of a vector function of a knot perturbation.
pub fn fd_knot<F: Fn(&Knot<f64>) -> DVector<f64>>(
    knot: &Knot<f64>,
    order: PriorOrder,
    h: f64,
    f: F,
) -> DMatrix<f64> {
    let n = order.dim();
    let base = f(knot);
    let mut j = DMatrix::zeros(base.len(), n);
    for c in 0..n {
        let mut d = vec![0.0; n];
        d[c] = h;
        let plus = f(&perturb_knot(knot, order, &d));
        d[c] = -h;
        let minus = f(&perturb_knot(knot, order, &d));
        j.set_column(c, &((plus - minus) / (2.0 * h)));
    }
    j
}

/// Left-perturbation difference `ln(A B^-1)` as a vector.
pub fn pose_diff(a: &Pose<f64>, b: &Pose<f64>) -> DVector<f64> {
    let d = log_map(&(*a * b.inverse())).expect("small difference");
    DVector::from_column_slice(d.as_slice())
}

/// A random knot pair close to the prior mean with interval `dt`.
pub fn near_mean_pair(rng: &mut ChaCha8Rng, order: PriorOrder, dt: f64) -> (Knot<f64>, Knot<f64>) {
    let v = random_vec6(rng, 1.0);
    let a = if order == PriorOrder::Wnoj {
        random_vec6(rng, 0.5)
    } else {
        Vector6::zeros()
    };
    let ti = rng.random_range(0.0..5.0);
    let pi = random_pose(rng, 5.0, 1.0);
    let ki = Knot::new(ti, pi, v, a);
    let xi = v * dt + a * (0.5 * dt * dt) + random_vec6(rng, 0.02);
    let pj = exp_map(&xi) * pi;
    let kj = Knot::new(
        ti + dt,
        pj,
        v + a * dt + random_vec6(rng, 0.05),
        a + random_vec6(rng, 0.05),
    );
    (ki, kj)
}

/// Empirical covariance of the local state at `duration` over `count`
/// prior samples from rest, integrated at `dt` with `Q_c = qc`.
pub fn sampled_local_covariance(
    order: PriorOrder,
    qc: &Vector6<f64>,
    count: usize,
    duration: f64,
    dt: f64,
    seed: u64,
) -> DMatrix<f64> {
    let n = order.dim();
    let start = Knot::new(0.0, Pose::identity(), Vector6::zeros(), Vector6::zeros());
    let mut sum = DVector::<f64>::zeros(n);
    let mut outer = DMatrix::<f64>::zeros(n, n);
    for i in 0..count {
        let z = Vector6::zeros();
        let gt = sample_prior_trajectory(order, qc, &z, &z, duration, dt, seed + i as u64).unwrap();
        let end = gt.samples.last().unwrap();
        let kj = Knot::new(duration, end.pose, end.velocity, end.acceleration);
        let g = local_state_at_knots(order, &start, &kj, InvJacobian::Exact).unwrap().at_j;
        sum += &g;
        outer += &g * g.transpose();
    }
    let m = count as f64;
    let mean = sum / m;
    (outer - &mean * mean.transpose() * m) / (m - 1.0)
}

/// Worst Frobenius relative error over the 6x6 blocks of `b`.
pub fn block_frobenius_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let blocks = b.nrows() / 6;
    let mut worst: f64 = 0.0;
    for r in 0..blocks {
        for c in 0..blocks {
            let ab = a.view((6 * r, 6 * c), (6, 6));
            let bb = b.view((6 * r, 6 * c), (6, 6));
            worst = worst.max((ab - bb).norm() / bb.norm());
        }
    }
    worst
}
