//! State estimation for a body-mounted IMU aided by leg odometry.
//!
//! The centerpiece is a right-invariant extended Kalman filter whose state
//! couples the usual extended pose (orientation, velocity, position) with a
//! rigid placement offset between the IMU frame and the frame in which the
//! leg-odometry measurements are expressed. Estimating that offset online
//! removes the need for a precise extrinsic calibration of where the sensor
//! sits on the body.
//!
//! Modules:
//!
//! - [`lie`]: rotation and state-group operations (exp/log, adjoint, ...).
//! - [`kinematics`]: serial-chain forward kinematics and Jacobians, the
//!   source of leg-odometry measurements when joint encoders are used.
//! - [`filter`]: the proposed filter with placement-offset states.
//! - [`baseline`]: a conventional right-invariant EKF over (R, v, p) plus a
//!   contact point, used as the comparison filter.
//! - [`sim`]: a deterministic squat-motion simulator that synthesizes IMU
//!   and leg-odometry streams from an analytic trajectory.
//! - [`harness`]: Monte Carlo experiment driver, error metrics, convergence
//!   timing, and summary serialization.

pub mod baseline;
pub mod filter;
pub mod harness;
pub mod kinematics;
pub mod lie;
pub mod sim;

pub use filter::{FilterBelief, ImuSample, LegOdometryMeasurement, NoiseSpec, WorldConstants};
pub use lie::GroupState;
