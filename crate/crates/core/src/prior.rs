//! White-noise-on-acceleration (WNOA) and white-noise-on-jerk (WNOJ) motion priors.
//!
//! Between two knots the local pose variable `xi(t) = ln(T(t) T_i^-1)` obeys a
//! linear time-invariant SDE whose state is `[xi; xi'] ` (WNOA) or
//! `[xi; xi'; xi'']` (WNOJ). Every matrix here is a small scalar matrix
//! Kronecker'd with a 6x6 block because `Q_c` is diagonal.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{curly_hat, inv_left_jacobian, log_map, BodyAcceleration, BodyVelocity, Pose};
use crate::scalar::{lit, to_f64, Real};

/// Which derivative of the local pose is driven by white noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorOrder {
    /// White noise on acceleration; the mean is constant body velocity.
    Wnoa,
    /// White noise on jerk; the mean is constant body acceleration.
    Wnoj,
}

impl PriorOrder {
    /// Number of 6-dimensional blocks in the local state.
    pub fn blocks(self) -> usize {
        match self {
            PriorOrder::Wnoa => 2,
            PriorOrder::Wnoj => 3,
        }
    }

    /// Dimension of the local state and of one knot's perturbation.
    pub fn dim(self) -> usize {
        6 * self.blocks()
    }

    pub fn name(self) -> &'static str {
        match self {
            PriorOrder::Wnoa => "wnoa",
            PriorOrder::Wnoj => "wnoj",
        }
    }
}

impl std::fmt::Display for PriorOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PriorOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wnoa" => Ok(PriorOrder::Wnoa),
            "wnoj" => Ok(PriorOrder::Wnoj),
            other => Err(Error::InvalidPrior(format!(
                "unknown prior order `{other}` (expected wnoa or wnoj)"
            ))),
        }
    }
}

/// Prior order plus the diagonal of the power-spectral-density matrix `Q_c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorConfig<T: Real> {
    order: PriorOrder,
    qc_diag: Vector6<T>,
}

impl<T: Real> PriorConfig<T> {
    pub fn new(order: PriorOrder, qc_diag: Vector6<T>) -> Result<Self> {
        for (k, q) in qc_diag.iter().enumerate() {
            if !(q.is_finite() && *q > T::zero()) {
                return Err(Error::InvalidPrior(format!(
                    "qc_diag[{k}] must be positive and finite, got {}",
                    to_f64(*q)
                )));
            }
        }
        Ok(Self { order, qc_diag })
    }

    pub fn order(&self) -> PriorOrder {
        self.order
    }

    pub fn qc_diag(&self) -> &Vector6<T> {
        &self.qc_diag
    }

    pub fn with_order(&self, order: PriorOrder) -> Self {
        Self { order, ..*self }
    }
}

/// Timestamped trajectory state. `acceleration` is carried by WNOJ
/// trajectories and stays zero (and is ignored) under WNOA.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Knot<T: Real> {
    pub t: T,
    pub pose: Pose<T>,
    pub velocity: BodyVelocity<T>,
    pub acceleration: BodyAcceleration<T>,
}

impl<T: Real> Knot<T> {
    pub fn new(
        t: T,
        pose: Pose<T>,
        velocity: BodyVelocity<T>,
        acceleration: BodyAcceleration<T>,
    ) -> Self {
        Self {
            t,
            pose,
            velocity,
            acceleration,
        }
    }

    /// Knot without acceleration, as used by the WNOA prior.
    pub fn with_velocity(t: T, pose: Pose<T>, velocity: BodyVelocity<T>) -> Self {
        Self::new(t, pose, velocity, Vector6::zeros())
    }
}

/// How `J(xi)^-1` is evaluated when mapping body velocity into the local
/// variables.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InvJacobian {
    /// Closed-form inverse left Jacobian.
    Exact,
    /// `1 - xi^curlywedge / 2`; the estimator default.
    #[default]
    FirstOrder,
    /// `J^-1 ~ 1`, the crude substitution under which WNOJ reduces to WNOA.
    Identity,
}

impl InvJacobian {
    fn apply<T: Real>(self, xi: &Vector6<T>, v: &Vector6<T>) -> Vector6<T> {
        match self {
            InvJacobian::Exact => inv_left_jacobian(xi) * v,
            InvJacobian::FirstOrder => v - curly_hat(xi) * v * lit::<T>(0.5),
            InvJacobian::Identity => *v,
        }
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn check_positive<T: Real>(dt: T) -> Result<()> {
    if dt.is_finite() && dt > T::zero() {
        Ok(())
    } else {
        Err(Error::InvalidTime(format!(
            "time step must be positive, got {}",
            to_f64(dt)
        )))
    }
}

/// Expands an `n x n` scalar matrix into `6n x 6n` with `block(r, c) * I6`.
pub(crate) fn kron_identity<T: Real>(s: &DMatrix<T>) -> DMatrix<T> {
    kron_diag(s, &Vector6::repeat(T::one()))
}

/// Expands an `n x n` scalar matrix into `6n x 6n` with `block(r, c) * diag(d)`.
pub(crate) fn kron_diag<T: Real>(s: &DMatrix<T>, d: &Vector6<T>) -> DMatrix<T> {
    let n = s.nrows();
    let mut m = DMatrix::zeros(6 * n, 6 * n);
    for r in 0..n {
        for c in 0..n {
            for k in 0..6 {
                m[(6 * r + k, 6 * c + k)] = s[(r, c)] * d[k];
            }
        }
    }
    m
}

/// Scalar transition coefficients: entry `(r, c)` is `dt^(c-r) / (c-r)!`.
pub fn transition_scalar<T: Real>(order: PriorOrder, dt: T) -> DMatrix<T> {
    let n = order.blocks();
    DMatrix::from_fn(n, n, |r, c| {
        if c < r {
            T::zero()
        } else {
            let k = c - r;
            dt.powi(k as i32) / lit(factorial(k))
        }
    })
}

/// Scalar process-covariance coefficients (multiply by `Q_c`).
pub fn process_cov_scalar<T: Real>(order: PriorOrder, dt: T) -> DMatrix<T> {
    let n = order.blocks();
    DMatrix::from_fn(n, n, |r, c| {
        let k = n - 1 - r;
        let l = n - 1 - c;
        let p = k + l + 1;
        dt.powi(p as i32) / lit(p as f64 * factorial(k) * factorial(l))
    })
}

/// Scalar inverse process-covariance coefficients (multiply by `Q_c^-1`).
pub fn process_cov_inv_scalar<T: Real>(order: PriorOrder, dt: T) -> DMatrix<T> {
    let i1 = T::one() / dt;
    let i2 = i1 * i1;
    let i3 = i2 * i1;
    match order {
        PriorOrder::Wnoa => {
            let (a, b, c) = (i3 * lit(12.0), -i2 * lit(6.0), i1 * lit(4.0));
            DMatrix::from_row_slice(2, 2, &[a, b, b, c])
        }
        PriorOrder::Wnoj => {
            let i4 = i2 * i2;
            let i5 = i4 * i1;
            let a = i5 * lit(720.0);
            let b = -i4 * lit(360.0);
            let c = i3 * lit(60.0);
            let d = i3 * lit(192.0);
            let e = -i2 * lit(36.0);
            let f = i1 * lit(9.0);
            DMatrix::from_row_slice(3, 3, &[a, b, c, b, d, e, c, e, f])
        }
    }
}

/// State transition `Phi(t + dt, t)` of the local LTI SDE.
pub fn transition<T: Real>(order: PriorOrder, dt: T) -> Result<DMatrix<T>> {
    if !(dt.is_finite() && dt >= T::zero()) {
        return Err(Error::InvalidTime(format!(
            "transition interval must be non-negative, got {}",
            to_f64(dt)
        )));
    }
    Ok(kron_identity(&transition_scalar(order, dt)))
}

/// Process-noise covariance accumulated over `dt`.
pub fn process_cov<T: Real>(order: PriorOrder, dt: T, cfg: &PriorConfig<T>) -> Result<DMatrix<T>> {
    check_positive(dt)?;
    Ok(kron_diag(&process_cov_scalar(order, dt), cfg.qc_diag()))
}

/// Closed-form inverse of [`process_cov`].
pub fn process_cov_inv<T: Real>(
    order: PriorOrder,
    dt: T,
    cfg: &PriorConfig<T>,
) -> Result<DMatrix<T>> {
    check_positive(dt)?;
    let inv_qc = cfg.qc_diag().map(|q| T::one() / q);
    Ok(kron_diag(&process_cov_inv_scalar(order, dt), &inv_qc))
}

/// Local state `gamma_i(t)` at the two knots bounding an interval.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalStatePair<T: Real> {
    pub at_i: DVector<T>,
    pub at_j: DVector<T>,
}

/// Local-variable pieces shared by the error, its Jacobians, and interpolation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LocalParts<T: Real> {
    /// `ln(T_j T_i^-1)`
    pub xi: Vector6<T>,
    /// `J^-1 varpi_j`
    pub w: Vector6<T>,
    /// `-1/2 (J^-1 varpi_j)^curlywedge varpi_j + J^-1 varpi_dot_j`
    pub a: Vector6<T>,
    /// `d xi / d dxi_j = J(xi)^-1`
    pub dxi_dj: Matrix6<T>,
    /// `d xi / d dxi_i = -J(xi)^-1 Ad(T_j T_i^-1)`
    pub dxi_di: Matrix6<T>,
}

pub(crate) fn local_parts<T: Real>(
    ki: &Knot<T>,
    kj: &Knot<T>,
    mode: InvJacobian,
) -> Result<LocalParts<T>> {
    let rel = kj.pose * ki.pose.inverse();
    let xi = log_map(&rel)?;
    let w = mode.apply(&xi, &kj.velocity);
    let a = curly_hat(&w) * kj.velocity * lit::<T>(-0.5) + mode.apply(&xi, &kj.acceleration);
    let dxi_dj = inv_left_jacobian(&xi);
    let dxi_di = -(dxi_dj * rel.adjoint());
    Ok(LocalParts {
        xi,
        w,
        a,
        dxi_dj,
        dxi_di,
    })
}

fn stack<T: Real>(blocks: &[Vector6<T>]) -> DVector<T> {
    let mut v = DVector::zeros(6 * blocks.len());
    for (b, x) in blocks.iter().enumerate() {
        v.fixed_rows_mut::<6>(6 * b).copy_from(x);
    }
    v
}

fn check_order<T: Real>(ki: &Knot<T>, kj: &Knot<T>) -> Result<T> {
    let dt = kj.t - ki.t;
    if !(dt.is_finite() && dt > T::zero()) {
        return Err(Error::InvalidTime(format!(
            "knot times must be strictly increasing ({} then {})",
            to_f64(ki.t),
            to_f64(kj.t)
        )));
    }
    Ok(dt)
}

/// Local states at both ends of an interval, with `J^-1` evaluated per `mode`.
pub fn local_state_at_knots<T: Real>(
    order: PriorOrder,
    ki: &Knot<T>,
    kj: &Knot<T>,
    mode: InvJacobian,
) -> Result<LocalStatePair<T>> {
    let p = local_parts(ki, kj, mode)?;
    // At t_i the local pose is zero, so J^-1 = 1 and the curly-hat term vanishes.
    let (at_i, at_j) = match order {
        PriorOrder::Wnoa => (
            stack(&[Vector6::zeros(), ki.velocity]),
            stack(&[p.xi, p.w]),
        ),
        PriorOrder::Wnoj => (
            stack(&[Vector6::zeros(), ki.velocity, ki.acceleration]),
            stack(&[p.xi, p.w, p.a]),
        ),
    };
    Ok(LocalStatePair { at_i, at_j })
}

/// Prior error `gamma_i(t_j) - Phi gamma_i(t_i)` together with its weight.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorError<T: Real> {
    pub e: DVector<T>,
    pub q_inv: DMatrix<T>,
}

impl<T: Real> PriorError<T> {
    /// `1/2 e^T Q^-1 e`
    pub fn cost(&self) -> T {
        (self.e.transpose() * &self.q_inv * &self.e)[(0, 0)] * lit(0.5)
    }
}

/// Prior error in global variables with `J^-1` evaluated per `mode`.
pub fn prior_error_with<T: Real>(
    ki: &Knot<T>,
    kj: &Knot<T>,
    cfg: &PriorConfig<T>,
    mode: InvJacobian,
) -> Result<PriorError<T>> {
    let order = cfg.order();
    let dt = check_order(ki, kj)?;
    let pair = local_state_at_knots(order, ki, kj, mode)?;
    let phi = kron_identity(&transition_scalar(order, dt));
    Ok(PriorError {
        e: pair.at_j - phi * pair.at_i,
        q_inv: process_cov_inv(order, dt, cfg)?,
    })
}

/// Prior error using the first-order `J^-1` approximation.
pub fn prior_error<T: Real>(
    ki: &Knot<T>,
    kj: &Knot<T>,
    cfg: &PriorConfig<T>,
) -> Result<PriorError<T>> {
    prior_error_with(ki, kj, cfg, InvJacobian::FirstOrder)
}

/// Jacobians of the prior error with respect to the perturbations of both
/// knots, each ordered `[dxi, dvarpi(, dvarpi_dot)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorJacobians<T: Real> {
    pub wrt_i: DMatrix<T>,
    pub wrt_j: DMatrix<T>,
}

/// Analytic Jacobians of [`prior_error`].
///
/// The log term is differentiated exactly; the velocity and acceleration
/// terms use the same first-order `J^-1` as the error itself.
pub fn prior_error_jacobians<T: Real>(
    ki: &Knot<T>,
    kj: &Knot<T>,
    cfg: &PriorConfig<T>,
) -> Result<PriorJacobians<T>> {
    let order = cfg.order();
    let dt = check_order(ki, kj)?;
    let p = local_parts(ki, kj, InvJacobian::FirstOrder)?;
    let blocks = order.blocks();
    let n = order.dim();
    let half = lit::<T>(0.5);
    let eye = Matrix6::<T>::identity();

    let dxi_dj = p.dxi_dj;
    let dxi_di = p.dxi_di;

    let vj = curly_hat(&kj.velocity);
    let xi_c = curly_hat(&p.xi);
    let dw_dvj = eye - xi_c * half;

    // d e_r / d xi for each block row
    let mut de_dxi = vec![eye, vj * half];
    // d e_r / d varpi_j
    let mut de_dvj = vec![Matrix6::zeros(), dw_dvj];
    if order == PriorOrder::Wnoj {
        let aj = curly_hat(&kj.acceleration);
        de_dxi.push(vj * vj * lit::<T>(0.25) + aj * half);
        de_dvj.push(vj * dw_dvj * half - curly_hat(&p.w) * half);
    }

    let phi = transition_scalar(order, dt);
    let mut wrt_i = DMatrix::zeros(n, n);
    let mut wrt_j = DMatrix::zeros(n, n);
    for r in 0..blocks {
        wrt_i
            .fixed_view_mut::<6, 6>(6 * r, 0)
            .copy_from(&(de_dxi[r] * dxi_di));
        wrt_j
            .fixed_view_mut::<6, 6>(6 * r, 0)
            .copy_from(&(de_dxi[r] * dxi_dj));
        wrt_j.fixed_view_mut::<6, 6>(6 * r, 6).copy_from(&de_dvj[r]);
        // gamma_i(t_i) = [0; varpi_i; varpi_dot_i] enters through -Phi.
        for c in 1..blocks {
            wrt_i
                .fixed_view_mut::<6, 6>(6 * r, 6 * c)
                .copy_from(&(eye * -phi[(r, c)]));
        }
    }
    if order == PriorOrder::Wnoj {
        wrt_j
            .fixed_view_mut::<6, 6>(12, 12)
            .copy_from(&dw_dvj);
    }
    Ok(PriorJacobians { wrt_i, wrt_j })
}

/// Applies a stacked perturbation `[dxi, dvarpi(, dvarpi_dot)]` to a knot:
/// `T <- exp(dxi^) T`, velocity and acceleration additively.
pub fn perturb_knot<T: Real>(k: &Knot<T>, order: PriorOrder, delta: &[T]) -> Knot<T> {
    let block = |b: usize| Vector6::from_column_slice(&delta[6 * b..6 * b + 6]);
    let mut out = *k;
    out.pose = k.pose.perturb_left(&block(0));
    out.velocity += block(1);
    if order == PriorOrder::Wnoj {
        out.acceleration += block(2);
    }
    out
}

/// Central-difference Jacobians of the prior error under `mode`. Used to
/// validate the analytic path and as the exact-linearization option.
pub fn numeric_prior_jacobians<T: Real>(
    ki: &Knot<T>,
    kj: &Knot<T>,
    cfg: &PriorConfig<T>,
    mode: InvJacobian,
    step: T,
) -> Result<PriorJacobians<T>> {
    let order = cfg.order();
    let n = order.dim();
    let mut wrt_i = DMatrix::zeros(n, n);
    let mut wrt_j = DMatrix::zeros(n, n);
    let two_h = step + step;
    for c in 0..n {
        let mut d = vec![T::zero(); n];
        d[c] = step;
        let plus = prior_error_with(&perturb_knot(ki, order, &d), kj, cfg, mode)?.e;
        d[c] = -step;
        let minus = prior_error_with(&perturb_knot(ki, order, &d), kj, cfg, mode)?.e;
        wrt_i.set_column(c, &((plus - minus) / two_h));
        d[c] = step;
        let plus = prior_error_with(ki, &perturb_knot(kj, order, &d), cfg, mode)?.e;
        d[c] = -step;
        let minus = prior_error_with(ki, &perturb_knot(kj, order, &d), cfg, mode)?.e;
        wrt_j.set_column(c, &((plus - minus) / two_h));
    }
    Ok(PriorJacobians { wrt_i, wrt_j })
}

/// Distance between the leading two WNOJ error blocks under `J^-1 ~ 1` and
/// the WNOA error for the same knots. Both knots should carry zero
/// acceleration.
pub fn wnoa_recovery_check<T: Real>(
    ki: &Knot<T>,
    kj: &Knot<T>,
    qc_diag: &Vector6<T>,
) -> Result<T> {
    let wnoj = PriorConfig::new(PriorOrder::Wnoj, *qc_diag)?;
    let wnoa = wnoj.with_order(PriorOrder::Wnoa);
    let ej = prior_error_with(ki, kj, &wnoj, InvJacobian::Identity)?.e;
    let ea = prior_error(ki, kj, &wnoa)?.e;
    Ok((ej.rows(0, 12) - ea).norm())
}
