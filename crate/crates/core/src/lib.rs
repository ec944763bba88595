//! Continuous-time trajectory estimation on SE(3) with Gaussian-process
//! motion priors: white noise on acceleration (constant-velocity mean) and
//! white noise on jerk (constant-acceleration mean).
//!
//! The math modules are generic over the scalar type; the simulator,
//! experiment, and file modules work in `f64`.

pub mod blocktri;
pub mod config;
pub mod error;
pub mod experiment;
pub mod factors;
pub mod interp;
pub mod io;
pub mod liegroup;
pub mod metric;
pub mod prior;
pub mod scalar;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use factors::{Loss, Measurement, MeasurementKind};
pub use interp::{Segment, Trajectory};
pub use liegroup::{BodyAcceleration, BodyVelocity, Pose, Tangent};
pub use prior::{InvJacobian, Knot, PriorConfig, PriorOrder};
pub use scalar::Real;
pub use solver::{solve, PriorWeighting, Problem, SolveReport, SolverOptions, StepReport, Termination};

pub type Pose64 = Pose<f64>;
pub type Pose32 = Pose<f32>;
pub type Knot64 = Knot<f64>;
pub type Knot32 = Knot<f32>;
pub type Trajectory64 = Trajectory<f64>;
pub type Trajectory32 = Trajectory<f32>;
pub type PriorConfig64 = PriorConfig<f64>;
pub type PriorConfig32 = PriorConfig<f32>;
pub type Measurement64 = Measurement<f64>;
pub type Measurement32 = Measurement<f32>;
pub type Problem64 = Problem<f64>;
pub type Problem32 = Problem<f32>;
