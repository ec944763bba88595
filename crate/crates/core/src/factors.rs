//! Point measurement factors and the Geman-McClure robust cost.

use nalgebra::{Matrix3, Matrix3x6, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{odot, Pose};
use crate::scalar::{lit, to_f64, Real};

/// Noise model of a matched point pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MeasurementKind<T: Real> {
    /// Point-to-point with 3x3 covariance `r`; `r_inv` is cached.
    Point { r: Matrix3<T>, r_inv: Matrix3<T> },
    /// Point-to-plane with unit normal and scale `beta`.
    Plane { normal: Vector3<T>, beta: T },
}

/// Point `p` observed at time `tau` in the sensor frame, matched to `q` in
/// the reference frame. Both points are homogeneous with unit last entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measurement<T: Real> {
    pub tau: T,
    pub p: Vector4<T>,
    pub q: Vector4<T>,
    pub kind: MeasurementKind<T>,
}

fn check_points<T: Real>(tau: T, p: &Vector4<T>, q: &Vector4<T>) -> Result<()> {
    if !tau.is_finite() {
        return Err(Error::InvalidMeasurement("non-finite time".into()));
    }
    if !(p.iter().all(|x| x.is_finite()) && q.iter().all(|x| x.is_finite())) {
        return Err(Error::InvalidMeasurement("non-finite point".into()));
    }
    if p.w != T::one() || q.w != T::one() {
        return Err(Error::InvalidMeasurement(
            "homogeneous points must have unit last coordinate".into(),
        ));
    }
    Ok(())
}

impl<T: Real> Measurement<T> {
    pub fn point(tau: T, p: Vector4<T>, q: Vector4<T>, r: Matrix3<T>) -> Result<Self> {
        check_points(tau, &p, &q)?;
        let asym = (r - r.transpose()).norm();
        if asym > T::structure_tolerance() * (T::one() + r.norm()) {
            return Err(Error::InvalidMeasurement(
                "point covariance must be symmetric".into(),
            ));
        }
        let chol = r.cholesky().ok_or_else(|| {
            Error::InvalidMeasurement("point covariance must be positive definite".into())
        })?;
        Ok(Self {
            tau,
            p,
            q,
            kind: MeasurementKind::Point {
                r,
                r_inv: chol.inverse(),
            },
        })
    }

    pub fn plane(tau: T, p: Vector4<T>, q: Vector4<T>, normal: Vector3<T>, beta: T) -> Result<Self> {
        check_points(tau, &p, &q)?;
        if (normal.norm() - T::one()).abs() > T::structure_tolerance() {
            return Err(Error::InvalidMeasurement(format!(
                "plane normal must have unit length, got {}",
                to_f64(normal.norm())
            )));
        }
        if !(beta.is_finite() && beta > T::zero()) {
            return Err(Error::InvalidMeasurement(format!(
                "plane scale must be positive, got {}",
                to_f64(beta)
            )));
        }
        Ok(Self {
            tau,
            p,
            q,
            kind: MeasurementKind::Plane { normal, beta },
        })
    }

    /// Information matrix `W` of the whitened norm `u = sqrt(g^T W g)`.
    pub fn information(&self) -> Matrix3<T> {
        match &self.kind {
            MeasurementKind::Point { r_inv, .. } => *r_inv,
            MeasurementKind::Plane { normal, beta } => normal * normal.transpose() * *beta,
        }
    }

    /// `S` with `S^T S = W`; whitens errors and Jacobians.
    pub fn sqrt_information(&self) -> Matrix3<T> {
        match &self.kind {
            MeasurementKind::Point { r_inv, .. } => r_inv
                .cholesky()
                .map(|c| c.l().transpose())
                .unwrap_or_else(Matrix3::zeros),
            MeasurementKind::Plane { normal, beta } => {
                let mut s = Matrix3::zeros();
                s.set_row(0, &(normal.transpose() * beta.sqrt()));
                s
            }
        }
    }
}

/// `g = D (p - T q)`: the Euclidean part of the point difference.
pub fn measurement_error<T: Real>(m: &Measurement<T>, t_tau: &Pose<T>) -> Vector3<T> {
    let d = m.p - t_tau.transform(&m.q);
    Vector3::new(d.x, d.y, d.z)
}

/// `G = -D (T q)^odot`, the derivative of `g` under `T <- exp(dxi^) T`.
pub fn measurement_jacobian<T: Real>(m: &Measurement<T>, t_tau: &Pose<T>) -> Matrix3x6<T> {
    -odot(&t_tau.transform(&m.q)).fixed_rows::<3>(0).into_owned()
}

/// Whitened error norm `u`.
pub fn whitened_norm<T: Real>(m: &Measurement<T>, g: &Vector3<T>) -> T {
    let q = (g.transpose() * m.information() * g)[(0, 0)];
    q.max(T::zero()).sqrt()
}

/// Geman-McClure cost `u^2 / (2 (1 + u^2))` and its IRLS weight `1/(1 + u^2)^2`.
pub fn robust_cost<T: Real>(u: T) -> (T, T) {
    let d = T::one() + u * u;
    (u * u * lit(0.5) / d, T::one() / (d * d))
}

/// Loss applied to the whitened norm of each measurement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    #[serde(rename = "geman_mcclure")]
    GemanMcClure,
    /// Plain least squares, `u^2 / 2` with unit weight.
    Quadratic,
}

impl Loss {
    /// `(cost, irls_weight)` at whitened norm `u`.
    pub fn evaluate<T: Real>(self, u: T) -> (T, T) {
        match self {
            Loss::GemanMcClure => robust_cost(u),
            Loss::Quadratic => (u * u * lit(0.5), T::one()),
        }
    }
}
