//! Gaussian-process interpolation between knots and trajectory queries.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::liegroup::{curly_hat, exp_map, left_jacobian, Pose};
use crate::prior::{
    kron_identity, local_parts, local_state_at_knots, process_cov, process_cov_inv,
    process_cov_inv_scalar, process_cov_scalar, transition, transition_scalar, InvJacobian, Knot,
    LocalParts, PriorConfig, PriorOrder,
};
use crate::scalar::{lit, to_f64, Real};

/// Interpolation coefficients in full `6n x 6n` form:
/// `gamma(tau) = lambda gamma(t_i) + omega gamma(t_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpCoeffs<T: Real> {
    pub lambda: DMatrix<T>,
    pub omega: DMatrix<T>,
    pub tau: T,
    pub t_i: T,
    pub t_j: T,
}

/// The same coefficients as [`InterpCoeffs`] in scalar `n x n` form. With a
/// diagonal `Q_c` every 6x6 block is a multiple of the identity and the
/// multiple does not depend on `Q_c`.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpWeights<T: Real> {
    pub order: PriorOrder,
    pub lambda: DMatrix<T>,
    pub omega: DMatrix<T>,
}

fn check_query<T: Real>(t_i: T, tau: T, t_j: T) -> Result<()> {
    if !(t_i < t_j) {
        return Err(Error::InvalidTime(format!(
            "interval [{}, {}] is empty",
            to_f64(t_i),
            to_f64(t_j)
        )));
    }
    if !(tau >= t_i && tau <= t_j) {
        return Err(Error::QueryOutOfRange {
            tau: to_f64(tau),
            start: to_f64(t_i),
            end: to_f64(t_j),
        });
    }
    Ok(())
}

impl<T: Real> InterpWeights<T> {
    pub fn new(order: PriorOrder, t_i: T, tau: T, t_j: T) -> Result<Self> {
        check_query(t_i, tau, t_j)?;
        let n = order.blocks();
        if tau == t_i {
            return Ok(Self {
                order,
                lambda: DMatrix::identity(n, n),
                omega: DMatrix::zeros(n, n),
            });
        }
        if tau == t_j {
            return Ok(Self {
                order,
                lambda: DMatrix::zeros(n, n),
                omega: DMatrix::identity(n, n),
            });
        }
        let s = tau - t_i;
        let dt = t_j - t_i;
        let omega = process_cov_scalar(order, s)
            * transition_scalar(order, t_j - tau).transpose()
            * process_cov_inv_scalar(order, dt);
        let lambda = transition_scalar(order, s) - &omega * transition_scalar(order, dt);
        Ok(Self {
            order,
            lambda,
            omega,
        })
    }

    /// Expands to the full block form.
    pub fn to_coeffs(&self, t_i: T, tau: T, t_j: T) -> InterpCoeffs<T> {
        InterpCoeffs {
            lambda: kron_identity(&self.lambda),
            omega: kron_identity(&self.omega),
            tau,
            t_i,
            t_j,
        }
    }
}

/// Interpolation coefficients computed from the full transition and
/// covariance matrices, `Omega = Q(s) Phi(t_j, tau)^T Q(dt)^-1` and
/// `Lambda = Phi(s) - Omega Phi(dt)`.
pub fn interp_coeffs<T: Real>(
    order: PriorOrder,
    t_i: T,
    tau: T,
    t_j: T,
    cfg: &PriorConfig<T>,
) -> Result<InterpCoeffs<T>> {
    check_query(t_i, tau, t_j)?;
    let n = order.dim();
    let (lambda, omega) = if tau == t_i {
        (DMatrix::identity(n, n), DMatrix::zeros(n, n))
    } else if tau == t_j {
        (DMatrix::zeros(n, n), DMatrix::identity(n, n))
    } else {
        let dt = t_j - t_i;
        let omega = process_cov(order, tau - t_i, cfg)?
            * transition(order, t_j - tau)?.transpose()
            * process_cov_inv(order, dt, cfg)?;
        let lambda = transition(order, tau - t_i)? - &omega * transition(order, dt)?;
        (lambda, omega)
    };
    Ok(InterpCoeffs {
        lambda,
        omega,
        tau,
        t_i,
        t_j,
    })
}

/// Jacobians of the left perturbation of `T(tau)` with respect to the
/// perturbations `[dxi, dvarpi(, dvarpi_dot)]` of the two bounding knots.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpJacobians<T: Real> {
    pub wrt_i: DMatrix<T>,
    pub wrt_j: DMatrix<T>,
}

/// Interpolated pose and, optionally, its Jacobians.
#[derive(Clone, Debug)]
pub(crate) struct InterpEval<T: Real> {
    pub pose: Pose<T>,
    pub jac: Option<InterpJacobians<T>>,
}

fn block_at<T: Real>(
    order: PriorOrder,
    at_pose: Matrix6<T>,
    at_vel: Matrix6<T>,
    at_acc: Matrix6<T>,
) -> DMatrix<T> {
    let mut m = DMatrix::zeros(6, order.dim());
    m.fixed_view_mut::<6, 6>(0, 0).copy_from(&at_pose);
    m.fixed_view_mut::<6, 6>(0, 6).copy_from(&at_vel);
    if order == PriorOrder::Wnoj {
        m.fixed_view_mut::<6, 6>(0, 12).copy_from(&at_acc);
    }
    m
}

/// Evaluates the interpolated pose between `ki` and `kj` with precomputed
/// weights. Jacobians are only available for the first-order `J^-1` mode.
pub(crate) fn eval_interp<T: Real>(
    ki: &Knot<T>,
    kj: &Knot<T>,
    w: &InterpWeights<T>,
    mode: InvJacobian,
    with_jac: bool,
) -> Result<InterpEval<T>> {
    let order = w.order;
    let n = order.dim();
    let z = Matrix6::zeros();
    let eye = Matrix6::<T>::identity();
    let lam = &w.lambda;
    let om = &w.omega;

    if with_jac && mode != InvJacobian::FirstOrder {
        return Err(Error::InvalidProblem(
            "analytic interpolation Jacobians require the first-order J^-1 mode".into(),
        ));
    }
    // Endpoints bypass the formula; the weights are exact there anyway.
    if om.iter().all(|x| *x == T::zero()) {
        let jac = with_jac.then(|| InterpJacobians {
            wrt_i: block_at(order, eye, z, z),
            wrt_j: DMatrix::zeros(6, n),
        });
        return Ok(InterpEval { pose: ki.pose, jac });
    }
    if lam.iter().all(|x| *x == T::zero()) {
        let jac = with_jac.then(|| InterpJacobians {
            wrt_i: DMatrix::zeros(6, n),
            wrt_j: block_at(order, eye, z, z),
        });
        return Ok(InterpEval { pose: kj.pose, jac });
    }

    let p = local_parts(ki, kj, mode)?;
    eval_interior(ki, kj, w, &p, with_jac)
}

/// Interior evaluation with the interval's local variables precomputed.
/// `parts` must have been built with the first-order `J^-1` mode when
/// Jacobians are requested.
pub(crate) fn eval_interior<T: Real>(
    ki: &Knot<T>,
    kj: &Knot<T>,
    w: &InterpWeights<T>,
    p: &LocalParts<T>,
    with_jac: bool,
) -> Result<InterpEval<T>> {
    let order = w.order;
    let z = Matrix6::zeros();
    let eye = Matrix6::<T>::identity();
    let lam = &w.lambda;
    let om = &w.omega;
    let mut xi_tau = ki.velocity * lam[(0, 1)] + p.xi * om[(0, 0)] + p.w * om[(0, 1)];
    if order == PriorOrder::Wnoj {
        xi_tau += ki.acceleration * lam[(0, 2)] + p.a * om[(0, 2)];
    }
    let step = exp_map(&xi_tau);
    let pose = step * ki.pose;
    if !with_jac {
        return Ok(InterpEval { pose, jac: None });
    }

    let half = lit::<T>(0.5);
    let j_tau = left_jacobian(&xi_tau);
    let vj = curly_hat(&kj.velocity);
    let dw_dv = eye - curly_hat(&p.xi) * half;

    let mut d = eye * om[(0, 0)] + vj * (half * om[(0, 1)]);
    let mut dvel_j = dw_dv * om[(0, 1)];
    let mut dacc_j = z;
    let mut dacc_i = z;
    if order == PriorOrder::Wnoj {
        let aj = curly_hat(&kj.acceleration);
        d += (vj * vj * lit::<T>(0.25) + aj * half) * om[(0, 2)];
        dvel_j += (vj * dw_dv * half - curly_hat(&p.w) * half) * om[(0, 2)];
        dacc_j = j_tau * dw_dv * om[(0, 2)];
        dacc_i = j_tau * lam[(0, 2)];
    }
    let jd = j_tau * d;
    let wrt_i = block_at(
        order,
        jd * p.dxi_di + step.adjoint(),
        j_tau * lam[(0, 1)],
        dacc_i,
    );
    let wrt_j = block_at(order, jd * p.dxi_dj, j_tau * dvel_j, dacc_j);
    Ok(InterpEval {
        pose,
        jac: Some(InterpJacobians { wrt_i, wrt_j }),
    })
}

/// Pose at `tau` in `[ki.t, kj.t]` with `J^-1` evaluated per `mode`.
pub fn interpolate_pose_with<T: Real>(
    ki: &Knot<T>,
    kj: &Knot<T>,
    tau: T,
    cfg: &PriorConfig<T>,
    mode: InvJacobian,
) -> Result<Pose<T>> {
    let w = InterpWeights::new(cfg.order(), ki.t, tau, kj.t)?;
    Ok(eval_interp(ki, kj, &w, mode, false)?.pose)
}

/// GP-interpolated pose at `tau` in `[ki.t, kj.t]`.
///
/// With a diagonal `Q_c` the result does not depend on the `Q_c` values, only
/// on the prior order carried by `cfg`.
pub fn interpolate_pose<T: Real>(
    ki: &Knot<T>,
    kj: &Knot<T>,
    tau: T,
    cfg: &PriorConfig<T>,
) -> Result<Pose<T>> {
    interpolate_pose_with(ki, kj, tau, cfg, InvJacobian::FirstOrder)
}

/// Jacobians of the interpolated pose with respect to both knots.
pub fn interpolation_jacobians<T: Real>(
    ki: &Knot<T>,
    kj: &Knot<T>,
    tau: T,
    cfg: &PriorConfig<T>,
) -> Result<InterpJacobians<T>> {
    let w = InterpWeights::new(cfg.order(), ki.t, tau, kj.t)?;
    let eval = eval_interp(ki, kj, &w, InvJacobian::FirstOrder, true)?;
    Ok(eval.jac.expect("jacobians requested"))
}

/// Interpolated local state `gamma_i(tau)` and the body velocity recovered
/// from it as `J(xi) xi'`.
pub fn interpolate_state<T: Real>(
    ki: &Knot<T>,
    kj: &Knot<T>,
    tau: T,
    cfg: &PriorConfig<T>,
) -> Result<(Pose<T>, DVector<T>, Vector6<T>)> {
    let order = cfg.order();
    let c = InterpWeights::new(order, ki.t, tau, kj.t)?.to_coeffs(ki.t, tau, kj.t);
    let pair = local_state_at_knots(order, ki, kj, InvJacobian::FirstOrder)?;
    let gamma = &c.lambda * pair.at_i + &c.omega * pair.at_j;
    let xi: Vector6<T> = gamma.fixed_rows::<6>(0).into_owned();
    let xi_dot: Vector6<T> = gamma.fixed_rows::<6>(6).into_owned();
    let pose = exp_map(&xi) * ki.pose;
    let velocity = left_jacobian(&xi) * xi_dot;
    Ok((pose, gamma, velocity))
}

/// Distance `|ln(T_a T_b^-1)|` between the WNOJ interpolation under
/// `J^-1 ~ 1` and the WNOA interpolation of the same knots (zero
/// accelerations expected).
pub fn wnoj_interp_recovery<T: Real>(
    ki: &Knot<T>,
    kj: &Knot<T>,
    tau: T,
    qc_diag: &Vector6<T>,
) -> Result<T> {
    let wnoj = PriorConfig::new(PriorOrder::Wnoj, *qc_diag)?;
    let wnoa = wnoj.with_order(PriorOrder::Wnoa);
    let a = interpolate_pose_with(ki, kj, tau, &wnoj, InvJacobian::Identity)?;
    let b = interpolate_pose(ki, kj, tau, &wnoa)?;
    Ok(crate::liegroup::log_map(&(a * b.inverse()))?.norm())
}

/// Where a query time falls relative to the knots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    /// Exactly at knot `k`.
    AtKnot(usize),
    /// Strictly inside the interval `[k, k + 1]`.
    Between(usize),
    /// After the last knot `k`; extrapolated with the prior mean.
    After(usize),
}

/// Time-ordered knots tagged with a prior order.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T: Real> {
    order: PriorOrder,
    knots: Vec<Knot<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn new(order: PriorOrder, knots: Vec<Knot<T>>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidProblem("trajectory has no knots".into()));
        }
        for k in &knots {
            if !k.t.is_finite() {
                return Err(Error::InvalidTime("non-finite knot time".into()));
            }
        }
        for pair in knots.windows(2) {
            if !(pair[1].t > pair[0].t) {
                return Err(Error::InvalidTime(format!(
                    "knot times must be strictly increasing ({} then {})",
                    to_f64(pair[0].t),
                    to_f64(pair[1].t)
                )));
            }
        }
        Ok(Self { order, knots })
    }

    pub fn order(&self) -> PriorOrder {
        self.order
    }

    pub fn knots(&self) -> &[Knot<T>] {
        &self.knots
    }

    pub fn knots_mut(&mut self) -> &mut [Knot<T>] {
        &mut self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn start(&self) -> T {
        self.knots[0].t
    }

    pub fn end(&self) -> T {
        self.knots[self.knots.len() - 1].t
    }

    /// Classifies a query time. Times before the first knot are rejected.
    pub fn locate(&self, tau: T) -> Result<Segment> {
        if !(tau >= self.start()) {
            return Err(Error::QueryOutOfRange {
                tau: to_f64(tau),
                start: to_f64(self.start()),
                end: to_f64(self.end()),
            });
        }
        let last = self.knots.len() - 1;
        if tau > self.end() {
            return Ok(Segment::After(last));
        }
        // first knot with t > tau
        let k = self.knots.partition_point(|k| k.t <= tau);
        let i = k - 1;
        if self.knots[i].t == tau {
            Ok(Segment::AtKnot(i))
        } else {
            Ok(Segment::Between(i))
        }
    }

    /// Pose at an arbitrary time at or after the first knot.
    pub fn pose_at(&self, tau: T) -> Result<Pose<T>> {
        match self.locate(tau)? {
            Segment::AtKnot(k) => Ok(self.knots[k].pose),
            Segment::Between(i) => {
                let w = InterpWeights::new(self.order, self.knots[i].t, tau, self.knots[i + 1].t)?;
                Ok(eval_interp(
                    &self.knots[i],
                    &self.knots[i + 1],
                    &w,
                    InvJacobian::FirstOrder,
                    false,
                )?
                .pose)
            }
            Segment::After(k) => Ok(extrapolate(&self.knots[k], self.order, tau - self.knots[k].t).0),
        }
    }
}

/// Prior-mean extrapolation `exp((s varpi + s^2/2 varpi_dot)^) T_k` and its
/// Jacobian with respect to the knot perturbation.
pub(crate) fn extrapolate<T: Real>(k: &Knot<T>, order: PriorOrder, s: T) -> (Pose<T>, DMatrix<T>) {
    let mut zeta = k.velocity * s;
    if order == PriorOrder::Wnoj {
        zeta += k.acceleration * (s * s * lit(0.5));
    }
    let step = exp_map(&zeta);
    let jz = left_jacobian(&zeta);
    let jac = block_at(order, step.adjoint(), jz * s, jz * (s * s * lit(0.5)));
    (step * k.pose, jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg(order: PriorOrder) -> PriorConfig<f64> {
        PriorConfig::new(order, Vector6::repeat(1.0)).unwrap()
    }

    #[test]
    fn weights_at_endpoints() {
        for order in [PriorOrder::Wnoa, PriorOrder::Wnoj] {
            let n = order.blocks();
            let a = InterpWeights::<f64>::new(order, 1.0, 1.0, 2.0).unwrap();
            assert_eq!(a.lambda, DMatrix::identity(n, n));
            assert_eq!(a.omega, DMatrix::zeros(n, n));
            let b = InterpWeights::<f64>::new(order, 1.0, 2.0, 2.0).unwrap();
            assert_eq!(b.lambda, DMatrix::zeros(n, n));
            assert_eq!(b.omega, DMatrix::identity(n, n));
        }
    }

    #[test]
    fn weights_approach_endpoints_continuously() {
        let near = InterpWeights::<f64>::new(PriorOrder::Wnoj, 0.0, 1.0 - 1e-7, 1.0).unwrap();
        assert_relative_eq!(near.omega, DMatrix::identity(3, 3), epsilon = 1e-4);
        assert!(near.lambda.norm() < 1e-4);
    }

    #[test]
    fn scalar_and_full_paths_agree() {
        let q = Vector6::new(0.3, 2.0, 1.0, 0.01, 0.5, 4.0);
        for order in [PriorOrder::Wnoa, PriorOrder::Wnoj] {
            let c = PriorConfig::new(order, q).unwrap();
            let full = interp_coeffs(order, 0.2, 0.37, 0.9, &c).unwrap();
            let fast = InterpWeights::new(order, 0.2, 0.37, 0.9)
                .unwrap()
                .to_coeffs(0.2, 0.37, 0.9);
            assert_relative_eq!(full.lambda, fast.lambda, epsilon = 1e-10);
            assert_relative_eq!(full.omega, fast.omega, epsilon = 1e-10);
        }
    }

    #[test]
    fn query_outside_interval_rejected() {
        assert!(matches!(
            InterpWeights::<f64>::new(PriorOrder::Wnoa, 0.0, 1.5, 1.0),
            Err(Error::QueryOutOfRange { .. })
        ));
        let k = Knot::with_velocity(0.0, Pose::identity(), Vector6::zeros());
        let traj = Trajectory::new(PriorOrder::Wnoa, vec![k]).unwrap();
        assert!(traj.pose_at(-0.1).is_err());
    }

    #[test]
    fn straight_line_midpoint() {
        let v = Vector6::new(2.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let ki = Knot::with_velocity(0.0, Pose::identity(), v);
        let kj = Knot::with_velocity(1.0, exp_map(&v), v);
        let t = interpolate_pose(&ki, &kj, 0.5, &cfg(PriorOrder::Wnoa)).unwrap();
        assert_relative_eq!(t.translation().x, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn endpoint_jacobians() {
        let v = Vector6::new(1.0, 0.2, 0.0, 0.0, 0.1, 0.3);
        let ki = Knot::new(0.0, Pose::identity(), v, v * 0.1);
        let kj = Knot::new(0.5, exp_map(&(v * 0.5)), v, v * 0.1);
        let c = cfg(PriorOrder::Wnoj);
        let at_i = interpolation_jacobians(&ki, &kj, 0.0, &c).unwrap();
        assert_eq!(
            at_i.wrt_i.view((0, 0), (6, 6)).into_owned(),
            DMatrix::<f64>::identity(6, 6)
        );
        assert_eq!(at_i.wrt_j, DMatrix::zeros(6, 18));
        let at_j = interpolation_jacobians(&ki, &kj, 0.5, &c).unwrap();
        assert_eq!(
            at_j.wrt_j.view((0, 0), (6, 6)).into_owned(),
            DMatrix::<f64>::identity(6, 6)
        );
        assert_eq!(at_j.wrt_i, DMatrix::zeros(6, 18));
    }

    #[test]
    fn locate_classifies_queries() {
        let knots = (0..4)
            .map(|k| Knot::with_velocity(k as f64, Pose::identity(), Vector6::zeros()))
            .collect();
        let traj = Trajectory::new(PriorOrder::Wnoa, knots).unwrap();
        assert_eq!(traj.locate(0.0).unwrap(), Segment::AtKnot(0));
        assert_eq!(traj.locate(1.5).unwrap(), Segment::Between(1));
        assert_eq!(traj.locate(3.0).unwrap(), Segment::AtKnot(3));
        assert_eq!(traj.locate(3.2).unwrap(), Segment::After(3));
    }

    #[test]
    fn duplicate_knot_times_rejected() {
        let k = Knot::with_velocity(1.0, Pose::<f64>::identity(), Vector6::zeros());
        assert!(Trajectory::new(PriorOrder::Wnoa, vec![k, k]).is_err());
    }

    #[test]
    fn extrapolation_follows_constant_acceleration() {
        let v = Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let a = Vector6::new(2.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let k = Knot::new(0.0, Pose::identity(), v, a);
        let traj = Trajectory::new(PriorOrder::Wnoj, vec![k]).unwrap();
        let p = traj.pose_at(0.5).unwrap();
        assert_relative_eq!(p.translation().x, 0.5 + 0.25, epsilon = 1e-14);
    }
}
