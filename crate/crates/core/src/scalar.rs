//! Scalar abstraction shared by the math modules.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar the estimator math is written against: `f32` or `f64`.
///
/// Transcendental functions come from [`RealField`]; literal constants and
/// conversions for reporting go through `num-traits`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Absolute tolerance used for structural checks (orthonormality, hat form).
    fn structure_tolerance() -> Self {
        let eps = Self::default_epsilon() * lit::<Self>(1000.0);
        let floor = lit::<Self>(1e-9);
        if eps > floor {
            eps
        } else {
            floor
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

/// Lossy conversion used for diagnostics and error payloads.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
