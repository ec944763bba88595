//! SE(3) and so(3) primitives.
//!
//! Tangent vectors are ordered `[rho; phi]`: translational part first,
//! rotational part second. Poses act on homogeneous points from the left and
//! perturbations are applied on the left, `T <- exp(dxi^) T`.

use std::ops::Mul;

use nalgebra::{
    Matrix3, Matrix4, Matrix4x6, Matrix6, Rotation3, UnitQuaternion, Vector3, Vector4, Vector6,
};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Element of se(3) in vector form, `[rho; phi]`.
pub type Tangent<T> = Vector6<T>;
/// Body-centric velocity `[nu; omega]`.
pub type BodyVelocity<T> = Vector6<T>;
/// Body-centric acceleration.
pub type BodyAcceleration<T> = Vector6<T>;

/// Below this rotation angle exp/log switch to their Taylor expansions.
const SMALL_ANGLE: f64 = 1e-6;
/// Logarithm is refused when the angle is within this distance of pi.
const PI_MARGIN: f64 = 1e-6;

/// Rigid transform on SE(3) stored as a 4x4 homogeneous matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose<T: Real> {
    m: Matrix4<T>,
}

impl<T: Real> Pose<T> {
    pub fn identity() -> Self {
        Self {
            m: Matrix4::identity(),
        }
    }

    /// Validates a homogeneous matrix and wraps it.
    pub fn new(m: Matrix4<T>) -> Result<Self> {
        let tol = T::structure_tolerance();
        for c in 0..4 {
            let expected = if c == 3 { T::one() } else { T::zero() };
            if m[(3, c)] != expected {
                return Err(Error::InvalidPose(format!(
                    "bottom row must be [0 0 0 1], found entry {} at column {c}",
                    to_f64(m[(3, c)])
                )));
            }
        }
        let rot: Matrix3<T> = m.fixed_view::<3, 3>(0, 0).into_owned();
        if !rot.iter().all(|x| x.is_finite()) || !m.column(3).iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidPose("non-finite entry".into()));
        }
        let ortho = (rot.transpose() * rot - Matrix3::identity()).norm();
        if ortho >= tol {
            return Err(Error::InvalidPose(format!(
                "rotation block is not orthonormal (|R^T R - I|_F = {:e})",
                to_f64(ortho)
            )));
        }
        let det = rot.determinant();
        if (det - T::one()).abs() >= tol {
            return Err(Error::InvalidPose(format!(
                "rotation determinant is {}",
                to_f64(det)
            )));
        }
        Ok(Self { m })
    }

    pub fn from_parts(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self> {
        Self::new(assemble(&rotation, &translation))
    }

    /// Builds a pose from a (not necessarily normalized) quaternion and a translation.
    pub fn from_quaternion(q: nalgebra::Quaternion<T>, translation: Vector3<T>) -> Result<Self> {
        if q.norm() <= T::default_epsilon() {
            return Err(Error::InvalidPose("zero quaternion".into()));
        }
        let unit = UnitQuaternion::from_quaternion(q);
        Ok(Self {
            m: assemble(&unit.to_rotation_matrix().into_inner(), &translation),
        })
    }

    pub fn matrix(&self) -> &Matrix4<T> {
        &self.m
    }

    pub fn rotation(&self) -> Matrix3<T> {
        self.m.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<T> {
        self.m.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn quaternion(&self) -> UnitQuaternion<T> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation()))
    }

    pub fn inverse(&self) -> Self {
        let ct = self.rotation().transpose();
        Self {
            m: assemble(&ct, &(-(ct * self.translation()))),
        }
    }

    /// Applies the transform to a homogeneous point.
    pub fn transform(&self, p: &Vector4<T>) -> Vector4<T> {
        self.m * p
    }

    /// Applies the transform to a Euclidean point.
    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation() * p + self.translation()
    }

    /// 6x6 adjoint, `[[C, r^ C], [0, C]]`.
    pub fn adjoint(&self) -> Matrix6<T> {
        let c = self.rotation();
        let rc = skew(&self.translation()) * c;
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&c);
        ad.fixed_view_mut::<3, 3>(0, 3).copy_from(&rc);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&c);
        ad
    }

    /// Left perturbation `exp(delta^) T`.
    pub fn perturb_left(&self, delta: &Tangent<T>) -> Self {
        exp_map(delta) * *self
    }
}

impl<T: Real> Default for Pose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Mul for Pose<T> {
    type Output = Pose<T>;

    fn mul(self, rhs: Self) -> Self {
        Pose { m: self.m * rhs.m }
    }
}

impl<T: Real> Mul<&Pose<T>> for &Pose<T> {
    type Output = Pose<T>;

    fn mul(self, rhs: &Pose<T>) -> Pose<T> {
        Pose { m: self.m * rhs.m }
    }
}

fn assemble<T: Real>(c: &Matrix3<T>, r: &Vector3<T>) -> Matrix4<T> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(c);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(r);
    m
}

#[inline]
fn rho<T: Real>(xi: &Tangent<T>) -> Vector3<T> {
    xi.fixed_rows::<3>(0).into_owned()
}

#[inline]
fn phi<T: Real>(xi: &Tangent<T>) -> Vector3<T> {
    xi.fixed_rows::<3>(3).into_owned()
}

/// Skew-symmetric matrix with `skew(a) b = a x b`.
pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -v.z,
        v.y,
        v.z,
        T::zero(),
        -v.x,
        -v.y,
        v.x,
        T::zero(),
    )
}

/// `xi^`: maps `[rho; phi]` into the 4x4 Lie-algebra matrix.
pub fn hat<T: Real>(xi: &Tangent<T>) -> Matrix4<T> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&phi(xi)));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&rho(xi));
    m
}

/// Inverse of [`hat`]. Rejects matrices that are not in se(3) beyond 1e-9.
pub fn vee<T: Real>(m: &Matrix4<T>) -> Result<Tangent<T>> {
    let tol = T::structure_tolerance();
    for c in 0..4 {
        if m[(3, c)].abs() > tol {
            return Err(Error::NotInAlgebra(format!(
                "bottom row entry {c} is {}",
                to_f64(m[(3, c)])
            )));
        }
    }
    for i in 0..3 {
        if m[(i, i)].abs() > tol {
            return Err(Error::NotInAlgebra(format!(
                "rotation block diagonal entry {i} is {}",
                to_f64(m[(i, i)])
            )));
        }
        for j in (i + 1)..3 {
            if (m[(i, j)] + m[(j, i)]).abs() > tol {
                return Err(Error::NotInAlgebra(format!(
                    "rotation block is not skew-symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(Vector6::new(
        m[(0, 3)],
        m[(1, 3)],
        m[(2, 3)],
        m[(2, 1)],
        m[(0, 2)],
        m[(1, 0)],
    ))
}

/// `xi^curlywedge = [[phi^, rho^], [0, phi^]]`, the adjoint of the algebra.
pub fn curly_hat<T: Real>(xi: &Tangent<T>) -> Matrix6<T> {
    let ph = skew(&phi(xi));
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&ph);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew(&rho(xi)));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&ph);
    m
}

/// `p^odot` for a homogeneous point `p = [eps; eta]`, so that
/// `hat(xi) p = odot(p) xi`.
pub fn odot<T: Real>(p: &Vector4<T>) -> Matrix4x6<T> {
    let eps = Vector3::new(p.x, p.y, p.z);
    let mut m = Matrix4x6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() * p.w));
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&eps)));
    m
}

// Rotation-angle coefficient functions. The higher-order ones cancel badly
// well above `SMALL_ANGLE`, so they switch to their series at a larger angle
// that depends on the working precision.

fn series_angle<T: Real>() -> T {
    if T::default_epsilon() > lit(1e-10) {
        T::one()
    } else {
        lit(0.2)
    }
}

/// sin(t)/t
fn coef_sinc<T: Real>(t: T) -> T {
    if t < lit(SMALL_ANGLE) {
        let t2 = t * t;
        T::one() - t2 / lit(6.0) + t2 * t2 / lit(120.0)
    } else {
        t.sin() / t
    }
}

/// (1 - cos t)/t^2, evaluated as 2 sin^2(t/2)/t^2 to avoid cancellation.
fn coef_cos2<T: Real>(t: T) -> T {
    if t < lit(SMALL_ANGLE) {
        let t2 = t * t;
        lit::<T>(0.5) - t2 / lit(24.0) + t2 * t2 / lit(720.0)
    } else {
        let s = coef_sinc(t * lit(0.5));
        s * s * lit(0.5)
    }
}

/// (t - sin t)/t^3
fn coef_sin3<T: Real>(t: T) -> T {
    if t < series_angle() {
        let t2 = t * t;
        lit::<T>(1.0 / 6.0) - t2 / lit(120.0) + t2 * t2 / lit(5040.0)
            - t2 * t2 * t2 / lit(362880.0)
    } else {
        (t - t.sin()) / (t * t * t)
    }
}

/// (t^2 + 2 cos t - 2)/(2 t^4)
fn coef_cos4<T: Real>(t: T) -> T {
    let t2 = t * t;
    if t < series_angle() {
        lit::<T>(1.0 / 24.0) - t2 / lit(720.0) + t2 * t2 / lit(40320.0)
            - t2 * t2 * t2 / lit(3628800.0)
    } else {
        (t2 + lit::<T>(2.0) * t.cos() - lit(2.0)) / (lit::<T>(2.0) * t2 * t2)
    }
}

/// (2t - 3 sin t + t cos t)/(2 t^5)
fn coef_mixed5<T: Real>(t: T) -> T {
    let t2 = t * t;
    if t < series_angle() {
        lit::<T>(1.0 / 120.0) - t2 / lit(2520.0) + t2 * t2 / lit(120960.0)
            - t2 * t2 * t2 / lit(9979200.0)
    } else {
        (lit::<T>(2.0) * t - lit::<T>(3.0) * t.sin() + t * t.cos()) / (lit::<T>(2.0) * t2 * t2 * t)
    }
}

/// 1/t^2 - (1 + cos t)/(2 t sin t)
fn coef_invjac<T: Real>(t: T) -> T {
    let t2 = t * t;
    if t < series_angle() {
        lit::<T>(1.0 / 12.0) + t2 / lit(720.0) + t2 * t2 / lit(30240.0)
            + t2 * t2 * t2 / lit(1209600.0)
    } else {
        T::one() / t2 - (T::one() + t.cos()) / (lit::<T>(2.0) * t * t.sin())
    }
}

/// Rodrigues' formula.
pub fn so3_exp<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    let t = phi.norm();
    let ph = skew(phi);
    Matrix3::identity() + ph * coef_sinc(t) + ph * ph * coef_cos2(t)
}

/// Principal-branch rotation logarithm; angles within 1e-6 of pi are refused.
pub fn so3_log<T: Real>(c: &Matrix3<T>) -> Result<Vector3<T>> {
    let w = Vector3::new(
        c[(2, 1)] - c[(1, 2)],
        c[(0, 2)] - c[(2, 0)],
        c[(1, 0)] - c[(0, 1)],
    );
    let s = w.norm() * lit(0.5);
    let cos = (c.trace() - T::one()) * lit(0.5);
    let angle = s.atan2(cos);
    if T::pi() - angle < lit(PI_MARGIN) {
        return Err(Error::IllConditionedLog {
            angle: to_f64(angle),
        });
    }
    if angle < lit(SMALL_ANGLE) {
        // angle/sin(angle) ~ 1 + angle^2/6
        Ok(w * (lit::<T>(0.5) * (T::one() + angle * angle / lit(6.0))))
    } else {
        Ok(w * (angle / (lit::<T>(2.0) * s)))
    }
}

/// SO(3) left Jacobian `J(phi)`.
pub fn so3_left_jacobian<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    let t = phi.norm();
    let ph = skew(phi);
    Matrix3::identity() + ph * coef_cos2(t) + ph * ph * coef_sin3(t)
}

/// Closed-form inverse of [`so3_left_jacobian`].
pub fn so3_inv_left_jacobian<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    let t = phi.norm();
    let ph = skew(phi);
    Matrix3::identity() - ph * lit::<T>(0.5) + ph * ph * coef_invjac(t)
}

/// Off-diagonal block `Q(rho, phi)` of the SE(3) left Jacobian.
fn se3_q_block<T: Real>(xi: &Tangent<T>) -> Matrix3<T> {
    let rx = skew(&rho(xi));
    let px = skew(&phi(xi));
    let t = phi(xi).norm();
    let pr = px * rx;
    let rp = rx * px;
    let prp = pr * px;
    let ppr = px * pr;
    let rpp = rp * px;
    rx * lit::<T>(0.5)
        + (pr + rp + prp) * coef_sin3(t)
        + (ppr + rpp - prp * lit::<T>(3.0)) * coef_cos4(t)
        + (prp * px + px * prp) * coef_mixed5(t)
}

/// `exp(xi^)` in closed form.
pub fn exp_map<T: Real>(xi: &Tangent<T>) -> Pose<T> {
    let ph = phi(xi);
    let c = so3_exp(&ph);
    let r = so3_left_jacobian(&ph) * rho(xi);
    Pose { m: assemble(&c, &r) }
}

/// `ln(T)^vee` on the principal branch.
pub fn log_map<T: Real>(pose: &Pose<T>) -> Result<Tangent<T>> {
    let ph = so3_log(&pose.rotation())?;
    let rh = so3_inv_left_jacobian(&ph) * pose.translation();
    Ok(Vector6::new(rh.x, rh.y, rh.z, ph.x, ph.y, ph.z))
}

/// SE(3) left Jacobian `[[J, Q], [0, J]]`.
pub fn left_jacobian<T: Real>(xi: &Tangent<T>) -> Matrix6<T> {
    let j = so3_left_jacobian(&phi(xi));
    let q = se3_q_block(xi);
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&q);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    m
}

/// Analytic inverse of the SE(3) left Jacobian, `[[J^-1, -J^-1 Q J^-1], [0, J^-1]]`.
pub fn inv_left_jacobian<T: Real>(xi: &Tangent<T>) -> Matrix6<T> {
    let ji = so3_inv_left_jacobian(&phi(xi));
    let q = se3_q_block(xi);
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&ji);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-(ji * q * ji)));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&ji);
    m
}

/// First-order approximation `1 - xi^curlywedge / 2` of the inverse left Jacobian.
pub fn inv_left_jacobian_approx<T: Real>(xi: &Tangent<T>) -> Matrix6<T> {
    Matrix6::identity() - curly_hat(xi) * lit::<T>(0.5)
}
