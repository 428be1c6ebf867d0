//! Serial-chain forward kinematics for one stance leg.
//!
//! The chain runs from the measurement frame to the contact point and is
//! described by a Denavit-Hartenberg table of revolute joints. Evaluating
//! it at measured joint angles yields the contact position `d = fk(alpha)`;
//! the analytic geometric Jacobian turns joint rates into the contact
//! velocity `J(alpha) * alpha_dot`. Stance switching and joint limits are
//! out of scope; the squat experiment keeps both feet planted.

use crate::filter::LegOdometryMeasurement;
use crate::lie::{Mat3, Vec3};
use nalgebra::{Dyn, OMatrix, U3};
use thiserror::Error;

/// 3 x n Jacobian, one column per joint.
pub type JacobianMatrix = OMatrix<f64, U3, Dyn>;

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("chain has no joints")]
    EmptyChain,
    #[error("non-finite DH parameter in joint {index}")]
    NonFiniteParameter { index: usize },
    #[error("joint vector has length {got}, chain has {expected} joints")]
    LengthMismatch { expected: usize, got: usize },
}

/// One revolute joint in DH convention. The joint variable adds to
/// `theta_offset`; the remaining three parameters are fixed geometry.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DhJoint {
    /// Link length a, m.
    pub link_length: f64,
    /// Link twist, rad.
    pub twist: f64,
    /// Link offset along the previous z axis, m.
    pub link_offset: f64,
    /// Constant added to the joint angle, rad.
    pub theta_offset: f64,
}

impl DhJoint {
    /// Rotation and translation of this link's frame relative to the
    /// previous one, at joint angle `q`:
    /// `RotZ(theta_offset + q) TransZ(link_offset) TransX(link_length) RotX(twist)`.
    fn transform(&self, q: f64) -> (Mat3, Vec3) {
        let (st, ct) = (self.theta_offset + q).sin_cos();
        let (sa, ca) = self.twist.sin_cos();
        let rot = Mat3::new(
            ct, -st * ca, st * sa, //
            st, ct * ca, -ct * sa, //
            0.0, sa, ca,
        );
        let trans = Vec3::new(self.link_length * ct, self.link_length * st, self.link_offset);
        (rot, trans)
    }
}

/// Ordered revolute-joint descriptors from the measurement frame to the
/// contact point.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KinematicChain {
    pub joints: Vec<DhJoint>,
}

impl KinematicChain {
    pub fn new(joints: Vec<DhJoint>) -> Result<Self, KinematicsError> {
        if joints.is_empty() {
            return Err(KinematicsError::EmptyChain);
        }
        for (index, j) in joints.iter().enumerate() {
            let all = [j.link_length, j.twist, j.link_offset, j.theta_offset];
            if !all.iter().all(|v| v.is_finite()) {
                return Err(KinematicsError::NonFiniteParameter { index });
            }
        }
        Ok(KinematicChain { joints })
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    fn check_len(&self, got: usize) -> Result<(), KinematicsError> {
        if got != self.joints.len() {
            return Err(KinematicsError::LengthMismatch {
                expected: self.joints.len(),
                got,
            });
        }
        Ok(())
    }
}

/// Joint angles and rates for one chain evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    /// Joint angles, rad.
    pub alpha: Vec<f64>,
    /// Joint rates, rad/s.
    pub alpha_dot: Vec<f64>,
}

/// Contact-point position in the chain's base (measurement) frame.
pub fn fk(chain: &KinematicChain, alpha: &[f64]) -> Result<Vec3, KinematicsError> {
    chain.check_len(alpha.len())?;
    let mut rot = Mat3::identity();
    let mut pos = Vec3::zeros();
    for (joint, &q) in chain.joints.iter().zip(alpha) {
        let (r, t) = joint.transform(q);
        pos += rot * t;
        rot *= r;
    }
    Ok(pos)
}

/// Analytic geometric Jacobian of `fk`: column i is
/// `z_{i-1} x (p_end - o_{i-1})`, built in one forward pass. Analytic
/// rather than finite-difference so that differentiation error does not
/// leak into the measurement noise budget.
pub fn jacobian(chain: &KinematicChain, alpha: &[f64]) -> Result<JacobianMatrix, KinematicsError> {
    chain.check_len(alpha.len())?;
    let n = chain.joints.len();
    let mut axes = Vec::with_capacity(n);
    let mut origins = Vec::with_capacity(n);
    let mut rot = Mat3::identity();
    let mut pos = Vec3::zeros();
    for (joint, &q) in chain.joints.iter().zip(alpha) {
        axes.push(rot.column(2).into_owned());
        origins.push(pos);
        let (r, t) = joint.transform(q);
        pos += rot * t;
        rot *= r;
    }
    let mut j = JacobianMatrix::zeros(n);
    for i in 0..n {
        j.set_column(i, &axes[i].cross(&(pos - origins[i])));
    }
    Ok(j)
}

/// Evaluates the chain at a joint state and packages the result as a
/// leg-odometry sample: position from `fk`, velocity from `J alpha_dot`.
pub fn leg_odometry(
    chain: &KinematicChain,
    t: f64,
    joints: &JointState,
) -> Result<LegOdometryMeasurement, KinematicsError> {
    chain.check_len(joints.alpha.len())?;
    chain.check_len(joints.alpha_dot.len())?;
    let pos = fk(chain, &joints.alpha)?;
    let j = jacobian(chain, &joints.alpha)?;
    let rates = nalgebra::DVector::from_column_slice(&joints.alpha_dot);
    Ok(LegOdometryMeasurement {
        t,
        pos,
        vel: j * rates,
    })
}
