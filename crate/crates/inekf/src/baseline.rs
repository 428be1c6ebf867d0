//! Conventional right-invariant EKF used as the comparison baseline.
//!
//! The state is an extended pose (R, v, p) augmented with the world-frame
//! contact point d, embedded as
//!
//! ```text
//!     [ R  v  p  d ]
//!     [ .  1  .  . ]
//! X = [ .  .  1  . ]
//!     [ .  .  .  1 ]
//! ```
//!
//! with 12-dimensional tangent `(zeta_R, zeta_v, zeta_p, zeta_d)`. The
//! contact point is modelled as static up to a small drift, and the
//! leg-odometry contact position is treated as a body-frame measurement
//! `d_m = R^T (d - p) + n`. The filter has no notion of a placement offset;
//! feeding it data recorded in a displaced measurement frame is exactly the
//! model mismatch the offset-estimating filter removes.

use crate::filter::{strapdown_step, sym_condition_number, FilterError, ImuSample, NoiseSpec,
    WorldConstants, MAX_CONDITION, ORTHO_DRIFT_TOL};
use crate::lie::{orthonormalize, skew, so3_exp, so3_left_jacobian, Mat3, Vec3};
use nalgebra::{SMatrix, SVector};

pub type Vec12 = SVector<f64, 12>;
pub type Mat12 = SMatrix<f64, 12, 12>;
pub type Mat3x12 = SMatrix<f64, 3, 12>;
pub type Mat12x3 = SMatrix<f64, 12, 3>;
/// Dense embedding of a baseline state.
pub type Mat6 = SMatrix<f64, 6, 6>;

/// Tangent block offsets.
pub const ROT: usize = 0;
pub const VEL: usize = 3;
pub const POS: usize = 6;
pub const CONTACT: usize = 9;

/// Baseline state: extended pose plus world-frame contact point.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    pub rot: Mat3,
    pub vel: Vec3,
    pub pos: Vec3,
    pub contact: Vec3,
}

impl BaselineState {
    pub fn identity() -> Self {
        BaselineState {
            rot: Mat3::identity(),
            vel: Vec3::zeros(),
            pos: Vec3::zeros(),
            contact: Vec3::zeros(),
        }
    }

    pub fn compose(&self, other: &BaselineState) -> BaselineState {
        BaselineState {
            rot: self.rot * other.rot,
            vel: self.rot * other.vel + self.vel,
            pos: self.rot * other.pos + self.pos,
            contact: self.rot * other.contact + self.contact,
        }
    }

    /// Adjoint on the 12-dimensional tangent space; each translation column
    /// contributes a `(t)x R` coupling into the rotation block.
    pub fn adjoint(&self) -> Mat12 {
        let mut ad = Mat12::zeros();
        ad.fixed_view_mut::<3, 3>(ROT, ROT).copy_from(&self.rot);
        for (at, t) in [(VEL, &self.vel), (POS, &self.pos), (CONTACT, &self.contact)] {
            ad.fixed_view_mut::<3, 3>(at, ROT).copy_from(&(skew(t) * self.rot));
            ad.fixed_view_mut::<3, 3>(at, at).copy_from(&self.rot);
        }
        ad
    }

    /// Dense 6x6 embedding, for test oracles.
    pub fn embed(&self) -> Mat6 {
        let mut m = Mat6::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rot);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.vel);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.pos);
        m.fixed_view_mut::<3, 1>(0, 5).copy_from(&self.contact);
        m
    }
}

/// Group exponential of the baseline group: rotation block via Rodrigues,
/// every translation column through the left Jacobian.
pub fn baseline_exp(zeta: &Vec12) -> BaselineState {
    let zr: Vec3 = zeta.fixed_rows::<3>(ROT).into();
    let j = so3_left_jacobian(&zr);
    BaselineState {
        rot: so3_exp(&zr),
        vel: j * zeta.fixed_rows::<3>(VEL),
        pos: j * zeta.fixed_rows::<3>(POS),
        contact: j * zeta.fixed_rows::<3>(CONTACT),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineBelief {
    pub state: BaselineState,
    pub cov: Mat12,
}

#[derive(Debug, Clone)]
pub struct BaselineUpdateResult {
    pub belief: BaselineBelief,
    pub applied: bool,
}

/// Initializes the contact estimate from the first position measurement,
/// `d = p + R d_m`.
pub fn contact_from_measurement(rot: &Mat3, pos: &Vec3, d_m: &Vec3) -> Vec3 {
    pos + rot * d_m
}

/// Continuous-time error Jacobian: same gravity and integrator couplings as
/// the offset filter, contact block driftless.
pub fn baseline_error_jacobian(world: &WorldConstants) -> Mat12 {
    let mut a = Mat12::zeros();
    a.fixed_view_mut::<3, 3>(VEL, ROT).copy_from(&skew(&world.gravity));
    a.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&Mat3::identity());
    a
}

/// Process noise in invariant coordinates. The contact point receives the
/// contact-velocity drift noise; the white-noise covariance is transported
/// by the adjoint. All three channels are per-sample deviations, so their
/// densities carry a `dt` factor, mirroring the offset filter.
pub fn baseline_process_noise(state: &BaselineState, noise: &NoiseSpec, dt: f64) -> Mat12 {
    let mut cov_w = Mat12::zeros();
    for (at, sd) in [
        (ROT, noise.sd_gyro),
        (VEL, noise.sd_accel),
        (CONTACT, noise.sd_contact_vel),
    ] {
        cov_w
            .fixed_view_mut::<3, 3>(at, at)
            .copy_from(&(sd * sd * dt * Mat3::identity()));
    }
    let ad = state.adjoint();
    ad * cov_w * ad.transpose()
}

/// Propagates mean and covariance through one IMU interval. The pose block
/// shares the exact strapdown step with the offset filter; the contact
/// point is static.
pub fn baseline_predict(
    belief: &BaselineBelief,
    imu: &ImuSample,
    dt: f64,
    noise: &NoiseSpec,
    world: &WorldConstants,
) -> Result<BaselineBelief, FilterError> {
    if !(dt > 0.0) {
        return Err(FilterError::NonPositiveDt { dt });
    }
    let (rot, vel, pos) = strapdown_step(
        &belief.state.rot,
        &belief.state.vel,
        &belief.state.pos,
        &imu.gyro,
        &imu.accel,
        dt,
        &world.gravity,
    );
    let mut state = BaselineState {
        rot,
        vel,
        pos,
        contact: belief.state.contact,
    };
    let drift = (state.rot.transpose() * state.rot - Mat3::identity()).abs().max();
    if drift > ORTHO_DRIFT_TOL {
        state.rot = orthonormalize(&state.rot);
    }
    let a = baseline_error_jacobian(world);
    let phi = Mat12::identity() + a * dt + 0.5 * a * a * dt * dt;
    let q_bar = baseline_process_noise(&state, noise, dt);
    let cov = phi * (belief.cov + q_bar * dt) * phi.transpose();
    Ok(BaselineBelief {
        state,
        cov: 0.5 * (cov + cov.transpose()),
    })
}

/// Contact-position update.
///
/// The innovation `R (d_m - R^T (d - p))` is linear in the invariant error
/// with the state-independent Jacobian `H = [0, 0, -I, I]`; the update then
/// follows the standard invariant pattern with the correction exponential
/// applied on the left and the covariance in Joseph form.
pub fn baseline_update(
    belief: &BaselineBelief,
    d_m: &Vec3,
    noise: &NoiseSpec,
) -> BaselineUpdateResult {
    let state = &belief.state;
    let mut h = Mat3x12::zeros();
    h.fixed_view_mut::<3, 3>(0, POS).copy_from(&(-Mat3::identity()));
    h.fixed_view_mut::<3, 3>(0, CONTACT).copy_from(&Mat3::identity());
    let sd = noise.sd_kin_pos;
    let n = state.rot * (sd * sd * Mat3::identity()) * state.rot.transpose();
    let s = h * belief.cov * h.transpose() + n;
    let s = 0.5 * (s + s.transpose());
    if sym_condition_number(&s) >= MAX_CONDITION {
        return BaselineUpdateResult {
            belief: belief.clone(),
            applied: false,
        };
    }
    let s_inv = s.try_inverse().expect("well-conditioned by the check above");
    let gain: Mat12x3 = belief.cov * h.transpose() * s_inv;
    let predicted = state.rot.transpose() * (state.contact - state.pos);
    let innovation = state.rot * (d_m - predicted);
    let next = baseline_exp(&(gain * innovation)).compose(state);
    let i_kh = Mat12::identity() - gain * h;
    let cov = i_kh * belief.cov * i_kh.transpose() + gain * n * gain.transpose();
    BaselineUpdateResult {
        belief: BaselineBelief {
            state: next,
            cov: 0.5 * (cov + cov.transpose()),
        },
        applied: true,
    }
}

/// One predict/update cycle, mirroring the offset filter's `step`.
pub fn baseline_step(
    belief: &BaselineBelief,
    imu: &ImuSample,
    odo_pos: Option<(f64, &Vec3)>,
    dt: f64,
    noise: &NoiseSpec,
    world: &WorldConstants,
) -> Result<BaselineBelief, FilterError> {
    let predicted = baseline_predict(belief, imu, dt, noise, world)?;
    let Some((t, d_m)) = odo_pos else {
        return Ok(predicted);
    };
    let state_t = imu.t + dt;
    if (t - state_t).abs() > 0.5 * dt {
        return Err(FilterError::TimeMisaligned {
            measurement_t: t,
            state_t,
        });
    }
    Ok(baseline_update(&predicted, d_m, noise).belief)
}
