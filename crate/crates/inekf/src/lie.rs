//! Rotation and state-group operations.
//!
//! The filter state lives on a matrix Lie group that couples an extended
//! pose with a rigid placement offset. An element embeds into a 9x9 matrix
//! as
//!
//! ```text
//!     [ R  v  p  .  .  ]
//!     [ .  1  .  .  .  ]
//! X = [ .  .  1  .  .  ]     R, dR in SO(3); v, p, dp in R^3
//!     [ .  .  .  dR dp ]
//!     [ .  .  .  .  1  ]
//! ```
//!
//! with the top-left 5x5 block an extended pose (SE_2(3)) and the
//! bottom-right 4x4 block a rigid transform (SE(3)). Tangent vectors stack
//! five 3-vectors in the fixed order
//!
//! ```text
//! zeta = (zeta_R, zeta_v, zeta_p, zeta_dR, zeta_dp)
//! ```
//!
//! indexed by [`ROT`], [`VEL`], [`POS`], [`ROT_OFF`], [`POS_OFF`].
//!
//! All operations here are closed-form and blockwise; the dense embedding
//! exists so that tests can check them against generic matrix routines.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
/// Tangent vector of the state group.
pub type Vec15 = SVector<f64, 15>;
/// Square matrix over the tangent space (covariances, adjoints, Jacobians).
pub type Mat15 = SMatrix<f64, 15, 15>;
/// Dense embedding of a group element or algebra element.
pub type Mat9 = SMatrix<f64, 9, 9>;

/// Start of the orientation block in a tangent vector.
pub const ROT: usize = 0;
/// Start of the velocity block.
pub const VEL: usize = 3;
/// Start of the position block.
pub const POS: usize = 6;
/// Start of the placement-rotation block.
pub const ROT_OFF: usize = 9;
/// Start of the placement-translation block.
pub const POS_OFF: usize = 12;

/// Angle below which exp/log switch to their Taylor forms.
pub const SMALL_ANGLE: f64 = 1e-8;
/// Rotation angles this close to pi are rejected by the logarithm.
pub const LOG_ANGLE_MARGIN: f64 = 1e-6;
/// Orthonormality tolerance accepted by [`so3_log`].
pub const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum LieError {
    #[error("matrix is not a rotation (orthonormality residual {residual:.3e})")]
    NotARotation { residual: f64 },
    #[error("rotation angle {angle:.6} is too close to pi for a stable logarithm")]
    AngleNearPi { angle: f64 },
}

/// Skew-symmetric matrix such that `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] for (near-)skew-symmetric input, averaging the
/// off-diagonal pairs.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Exponential map of SO(3) (Rodrigues), with a second-order Taylor
/// fallback below [`SMALL_ANGLE`].
pub fn so3_exp(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let s = skew(phi);
    if theta < SMALL_ANGLE {
        return Mat3::identity() + s + 0.5 * s * s;
    }
    // 2 sin^2(t/2) / t^2 avoids cancellation in (1 - cos t) / t^2.
    let half_sin = (0.5 * theta).sin();
    let a = theta.sin() / theta;
    let b = 2.0 * half_sin * half_sin / (theta * theta);
    Mat3::identity() + a * s + b * s * s
}

/// Logarithm map of SO(3).
///
/// Rejects matrices whose orthonormality residual exceeds [`ROTATION_TOL`]
/// and angles within [`LOG_ANGLE_MARGIN`] of pi, where the axis becomes
/// ill-conditioned.
pub fn so3_log(r: &Mat3) -> Result<Vec3, LieError> {
    let residual = (r.transpose() * r - Mat3::identity()).abs().max();
    let det_residual = (r.determinant() - 1.0).abs();
    if !residual.is_finite() || residual > ROTATION_TOL || det_residual > ROTATION_TOL {
        return Err(LieError::NotARotation {
            residual: residual.max(det_residual),
        });
    }
    // `vee(R - R^T)` equals `2 sin(theta) * axis`; with cos(theta) from the
    // trace, atan2 stays accurate where acos alone would not.
    let w = vee(&(r - r.transpose()));
    let cos = 0.5 * (r.trace() - 1.0);
    let sin = 0.5 * w.norm();
    let theta = sin.atan2(cos);
    if theta >= std::f64::consts::PI - LOG_ANGLE_MARGIN {
        return Err(LieError::AngleNearPi { angle: theta });
    }
    if theta < SMALL_ANGLE {
        return Ok(0.5 * w);
    }
    Ok(w * (0.5 * theta / sin))
}

/// Left Jacobian of SO(3): `J_l(phi) = I + c1 * S + c2 * S^2` with
/// `c1 = (1 - cos t)/t^2`, `c2 = (t - sin t)/t^3`.
pub fn so3_left_jacobian(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let s = skew(phi);
    if theta < 1e-4 {
        let t2 = theta * theta;
        return Mat3::identity() + (0.5 - t2 / 24.0) * s + (1.0 / 6.0 - t2 / 120.0) * s * s;
    }
    let half_sin = (0.5 * theta).sin();
    let c1 = 2.0 * half_sin * half_sin / (theta * theta);
    let c2 = (theta - theta.sin()) / (theta * theta * theta);
    Mat3::identity() + c1 * s + c2 * s * s
}

/// Inverse of the left Jacobian of SO(3).
pub fn so3_left_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let s = skew(phi);
    if theta < 1e-4 {
        let t2 = theta * theta;
        return Mat3::identity() - 0.5 * s + (1.0 / 12.0 + t2 / 720.0) * s * s;
    }
    let c = (1.0 / (theta * theta)) * (1.0 - 0.5 * theta * (0.5 * theta).cos() / (0.5 * theta).sin());
    Mat3::identity() - 0.5 * s + c * s * s
}

/// Second integral coefficient of the rotation exponential:
/// `Gamma_2(phi) = sum_k S^k / (k + 2)!`, the double-integral analogue of
/// the left Jacobian. Used by exact strapdown propagation.
pub fn so3_gamma2(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let s = skew(phi);
    if theta < 1e-4 {
        let t2 = theta * theta;
        return 0.5 * Mat3::identity() + (1.0 / 6.0 - t2 / 120.0) * s + (1.0 / 24.0 - t2 / 720.0) * s * s;
    }
    let t2 = theta * theta;
    let c1 = (theta - theta.sin()) / (t2 * theta);
    let c2 = (0.5 * t2 + theta.cos() - 1.0) / (t2 * t2);
    0.5 * Mat3::identity() + c1 * s + c2 * s * s
}

/// Maps a tangent vector to its 9x9 Lie-algebra embedding: skew blocks on
/// the two rotation slots, the three translations as columns.
pub fn wedge(zeta: &Vec15) -> Mat9 {
    let mut m = Mat9::zeros();
    let zr: Vec3 = zeta.fixed_rows::<3>(ROT).into();
    let zdr: Vec3 = zeta.fixed_rows::<3>(ROT_OFF).into();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&zr));
    m.fixed_view_mut::<3, 1>(0, 3)
        .copy_from(&zeta.fixed_rows::<3>(VEL).into_owned());
    m.fixed_view_mut::<3, 1>(0, 4)
        .copy_from(&zeta.fixed_rows::<3>(POS).into_owned());
    m.fixed_view_mut::<3, 3>(5, 5).copy_from(&skew(&zdr));
    m.fixed_view_mut::<3, 1>(5, 8)
        .copy_from(&zeta.fixed_rows::<3>(POS_OFF).into_owned());
    m
}

/// Stacks five 3-vectors into a tangent vector in the canonical order.
pub fn tangent(rot: &Vec3, vel: &Vec3, pos: &Vec3, rot_off: &Vec3, pos_off: &Vec3) -> Vec15 {
    let mut z = Vec15::zeros();
    z.fixed_rows_mut::<3>(ROT).copy_from(rot);
    z.fixed_rows_mut::<3>(VEL).copy_from(vel);
    z.fixed_rows_mut::<3>(POS).copy_from(pos);
    z.fixed_rows_mut::<3>(ROT_OFF).copy_from(rot_off);
    z.fixed_rows_mut::<3>(POS_OFF).copy_from(pos_off);
    z
}

/// Group exponential, computed blockwise: the extended-pose block uses the
/// SE_2(3) closed form (left Jacobian on both translations), the offset
/// block the SE(3) closed form.
pub fn group_exp(zeta: &Vec15) -> GroupState {
    let zr: Vec3 = zeta.fixed_rows::<3>(ROT).into();
    let zdr: Vec3 = zeta.fixed_rows::<3>(ROT_OFF).into();
    let j = so3_left_jacobian(&zr);
    let j_off = so3_left_jacobian(&zdr);
    GroupState {
        rot: so3_exp(&zr),
        vel: j * zeta.fixed_rows::<3>(VEL),
        pos: j * zeta.fixed_rows::<3>(POS),
        rot_off: so3_exp(&zdr),
        pos_off: j_off * zeta.fixed_rows::<3>(POS_OFF),
    }
}

/// Group logarithm, the blockwise inverse of [`group_exp`].
pub fn group_log(x: &GroupState) -> Result<Vec15, LieError> {
    let zr = so3_log(&x.rot)?;
    let zdr = so3_log(&x.rot_off)?;
    let j_inv = so3_left_jacobian_inv(&zr);
    let j_off_inv = so3_left_jacobian_inv(&zdr);
    Ok(tangent(
        &zr,
        &(j_inv * x.vel),
        &(j_inv * x.pos),
        &zdr,
        &(j_off_inv * x.pos_off),
    ))
}

/// Re-projects a near-rotation onto SO(3) via the polar factor of its SVD.
pub fn orthonormalize(r: &Mat3) -> Mat3 {
    let svd = nalgebra::SVD::new(*r, true, true);
    let u = svd.u.expect("svd of 3x3 always yields u");
    let v_t = svd.v_t.expect("svd of 3x3 always yields v_t");
    let mut fixed = u * v_t;
    if fixed.determinant() < 0.0 {
        let mut u_flip = u;
        u_flip.column_mut(2).neg_mut();
        fixed = u_flip * v_t;
    }
    fixed
}

/// State-group element, stored blockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupState {
    /// Body orientation (measurement-to-world of the IMU frame).
    pub rot: Mat3,
    /// Body velocity in the world frame.
    pub vel: Vec3,
    /// Body position in the world frame.
    pub pos: Vec3,
    /// Placement rotation offset between IMU and measurement frame.
    pub rot_off: Mat3,
    /// Placement translation offset.
    pub pos_off: Vec3,
}

impl Default for GroupState {
    fn default() -> Self {
        Self::identity()
    }
}

impl GroupState {
    pub fn identity() -> Self {
        GroupState {
            rot: Mat3::identity(),
            vel: Vec3::zeros(),
            pos: Vec3::zeros(),
            rot_off: Mat3::identity(),
            pos_off: Vec3::zeros(),
        }
    }

    /// Group product, blockwise equivalent of multiplying the embeddings.
    pub fn compose(&self, other: &GroupState) -> GroupState {
        GroupState {
            rot: self.rot * other.rot,
            vel: self.rot * other.vel + self.vel,
            pos: self.rot * other.pos + self.pos,
            rot_off: self.rot_off * other.rot_off,
            pos_off: self.rot_off * other.pos_off + self.pos_off,
        }
    }

    /// Closed-form inverse.
    pub fn inverse(&self) -> GroupState {
        let rot_t = self.rot.transpose();
        let rot_off_t = self.rot_off.transpose();
        GroupState {
            rot: rot_t,
            vel: -(rot_t * self.vel),
            pos: -(rot_t * self.pos),
            rot_off: rot_off_t,
            pos_off: -(rot_off_t * self.pos_off),
        }
    }

    /// Adjoint on the 15-dimensional tangent space:
    ///
    /// ```text
    ///      [ R        .   .   .        .  ]
    ///      [ (v)x R   R   .   .        .  ]
    /// Ad = [ (p)x R   .   R   .        .  ]
    ///      [ .        .   .   dR       .  ]
    ///      [ .        .   .   (dp)x dR dR ]
    /// ```
    pub fn adjoint(&self) -> Mat15 {
        let mut ad = Mat15::zeros();
        ad.fixed_view_mut::<3, 3>(ROT, ROT).copy_from(&self.rot);
        ad.fixed_view_mut::<3, 3>(VEL, ROT)
            .copy_from(&(skew(&self.vel) * self.rot));
        ad.fixed_view_mut::<3, 3>(VEL, VEL).copy_from(&self.rot);
        ad.fixed_view_mut::<3, 3>(POS, ROT)
            .copy_from(&(skew(&self.pos) * self.rot));
        ad.fixed_view_mut::<3, 3>(POS, POS).copy_from(&self.rot);
        ad.fixed_view_mut::<3, 3>(ROT_OFF, ROT_OFF)
            .copy_from(&self.rot_off);
        ad.fixed_view_mut::<3, 3>(POS_OFF, ROT_OFF)
            .copy_from(&(skew(&self.pos_off) * self.rot_off));
        ad.fixed_view_mut::<3, 3>(POS_OFF, POS_OFF)
            .copy_from(&self.rot_off);
        ad
    }

    /// Dense 9x9 embedding. Intended for test oracles; the filter itself
    /// never forms it.
    pub fn embed(&self) -> Mat9 {
        let mut m = Mat9::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rot);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.vel);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.pos);
        m.fixed_view_mut::<3, 3>(5, 5).copy_from(&self.rot_off);
        m.fixed_view_mut::<3, 1>(5, 8).copy_from(&self.pos_off);
        m
    }

    /// Extracts the blocks back out of a dense embedding.
    pub fn from_embedding(m: &Mat9) -> GroupState {
        GroupState {
            rot: m.fixed_view::<3, 3>(0, 0).into(),
            vel: m.fixed_view::<3, 1>(0, 3).into(),
            pos: m.fixed_view::<3, 1>(0, 4).into(),
            rot_off: m.fixed_view::<3, 3>(5, 5).into(),
            pos_off: m.fixed_view::<3, 1>(5, 8).into(),
        }
    }

    /// Checks both rotation blocks for orthonormality and unit determinant
    /// within `tol`, and every entry for finiteness.
    pub fn is_valid(&self, tol: f64) -> bool {
        let ortho = |r: &Mat3| {
            (r.transpose() * r - Mat3::identity()).abs().max() <= tol
                && (r.determinant() - 1.0).abs() <= tol
        };
        let finite = self.vel.iter().all(|x| x.is_finite())
            && self.pos.iter().all(|x| x.is_finite())
            && self.pos_off.iter().all(|x| x.is_finite());
        ortho(&self.rot) && ortho(&self.rot_off) && finite
    }
}
