//! Right-invariant EKF with online IMU placement-offset estimation.
//!
//! The state is a [`GroupState`]: body orientation R, world-frame velocity v
//! and position p, plus the placement offset (dR, dp) that maps the IMU
//! frame to the frame the leg-odometry velocities are expressed in. IMU
//! samples drive propagation; the negated contact-point velocity serves as
//! the measurement.
//!
//! Error convention is right-invariant, `eta = Xhat * X^{-1}`, with the
//! measurement Jacobian H defined through `h(Xhat) - h(X) ~= H zeta`. The
//! update applies `exp(K * (y - h(Xhat)))` on the left and propagates the
//! covariance in Joseph form.

use crate::lie::{
    group_exp, skew, so3_exp, so3_gamma2, so3_left_jacobian, vee, GroupState, Mat15, Mat3, Mat9,
    Vec15, Vec3, POS, POS_OFF, ROT, ROT_OFF, VEL,
};
use thiserror::Error;

/// Measurement-model matrix: three measured axes by fifteen error states.
pub type Mat3x15 = nalgebra::SMatrix<f64, 3, 15>;
/// Kalman gain for a three-dimensional measurement.
pub type Mat15x3 = nalgebra::SMatrix<f64, 15, 3>;

/// Innovation covariances with a condition number at or above this are
/// rejected instead of inverted.
pub const MAX_CONDITION: f64 = 1e12;
/// Orthonormality drift that triggers re-projection of the rotation blocks.
pub const ORTHO_DRIFT_TOL: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("time step must be positive, got {dt}")]
    NonPositiveDt { dt: f64 },
    #[error("measurement at t = {measurement_t} not aligned with state at t = {state_t}")]
    TimeMisaligned { measurement_t: f64, state_t: f64 },
}

/// One IMU sample: specific force and angular rate in the IMU frame.
///
/// `t` marks the start of the sampling interval the reading represents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Angular rate, rad/s.
    pub gyro: Vec3,
    /// Specific force (accelerometer reading), m/s^2.
    pub accel: Vec3,
}

/// Leg-odometry output: the contact point and its velocity, both expressed
/// in the measurement frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegOdometryMeasurement {
    pub t: f64,
    /// Contact-point position, m.
    pub pos: Vec3,
    /// Contact-point velocity, m/s.
    pub vel: Vec3,
}

/// Noise magnitudes used for synthesis and filtering. One struct covers
/// both filters; fields a given filter does not use are simply ignored.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Accelerometer white noise, m/s^2.
    pub sd_accel: f64,
    /// Gyroscope white noise, rad/s.
    pub sd_gyro: f64,
    /// Contact-velocity measurement noise, m/s (proposed filter).
    pub sd_kin_meas: f64,
    /// Contact-position measurement noise, m (baseline filter).
    pub sd_kin_pos: f64,
    /// Placement-translation random walk, m / sqrt(s).
    pub sd_offset_p: f64,
    /// Placement-rotation random walk, rad / sqrt(s).
    pub sd_offset_r: f64,
    /// Contact-point drift, m/s (baseline filter process noise).
    pub sd_contact_vel: f64,
}

impl NoiseSpec {
    /// Tuning for the offset-estimating filter.
    pub fn proposed() -> Self {
        NoiseSpec {
            sd_accel: 0.589,
            sd_gyro: 0.055,
            sd_kin_meas: 0.2,
            sd_kin_pos: 0.05,
            sd_offset_p: 0.001,
            sd_offset_r: 0.001,
            sd_contact_vel: 0.0,
        }
    }

    /// Tuning for the conventional contact-point filter.
    pub fn baseline() -> Self {
        NoiseSpec {
            sd_accel: 0.5,
            sd_gyro: 0.05,
            sd_kin_meas: 0.2,
            sd_kin_pos: 0.05,
            sd_offset_p: 0.0,
            sd_offset_r: 0.0,
            sd_contact_vel: 0.05,
        }
    }

    /// Noise actually injected by the simulator: nominal-spec sensor grade.
    /// The filter tunings above deliberately overbound these, the same way a
    /// deployed filter overbounds a datasheet. Driving the simulator at the
    /// filter-assumed levels instead would let per-sample gyro noise reach the
    /// measurement Jacobian through the contact lever arm and fabricate
    /// offset information while the wearer stands still.
    pub fn sensor_grade() -> Self {
        NoiseSpec {
            sd_accel: 0.01,
            sd_gyro: 0.002,
            sd_kin_meas: 0.01,
            sd_kin_pos: 0.002,
            sd_offset_p: 0.0,
            sd_offset_r: 0.0,
            sd_contact_vel: 0.0,
        }
    }

    /// All channels silent; useful for noiseless synthesis.
    pub fn zero() -> Self {
        NoiseSpec {
            sd_accel: 0.0,
            sd_gyro: 0.0,
            sd_kin_meas: 0.0,
            sd_kin_pos: 0.0,
            sd_offset_p: 0.0,
            sd_offset_r: 0.0,
            sd_contact_vel: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        [
            self.sd_accel,
            self.sd_gyro,
            self.sd_kin_meas,
            self.sd_kin_pos,
            self.sd_offset_p,
            self.sd_offset_r,
            self.sd_contact_vel,
        ]
        .iter()
        .all(|sd| sd.is_finite() && *sd >= 0.0)
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::proposed()
    }
}

/// Physical constants of the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldConstants {
    /// Gravity vector, m/s^2.
    pub gravity: Vec3,
}

impl Default for WorldConstants {
    fn default() -> Self {
        WorldConstants {
            gravity: Vec3::new(0.0, 0.0, -9.81),
        }
    }
}

/// Filter belief: state estimate plus covariance over the right-invariant
/// error.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBelief {
    pub state: GroupState,
    pub cov: Mat15,
}

/// Outcome of a measurement update. `applied` is false when the innovation
/// covariance was too ill-conditioned to invert, in which case `belief` is
/// the unchanged prior.
#[derive(Debug, Clone)]
pub struct UpdateResult {
    pub belief: FilterBelief,
    pub applied: bool,
}

/// Exact strapdown step over one interval of constant IMU input.
///
/// Rotation advances by the exponential; the velocity and position updates
/// integrate the rotating specific force in closed form through the left
/// Jacobian and its double-integral analogue.
pub(crate) fn strapdown_step(
    rot: &Mat3,
    vel: &Vec3,
    pos: &Vec3,
    gyro: &Vec3,
    accel: &Vec3,
    dt: f64,
    gravity: &Vec3,
) -> (Mat3, Vec3, Vec3) {
    let phi = gyro * dt;
    let rot_next = rot * so3_exp(&phi);
    let vel_next = vel + gravity * dt + rot * so3_left_jacobian(&phi) * accel * dt;
    let pos_next =
        pos + vel * dt + 0.5 * gravity * dt * dt + rot * so3_gamma2(&phi) * accel * dt * dt;
    (rot_next, vel_next, pos_next)
}

/// Propagates the state mean through one IMU interval. The placement
/// offset has no deterministic dynamics and passes through unchanged.
pub fn propagate_state(
    x: &GroupState,
    imu: &ImuSample,
    dt: f64,
    world: &WorldConstants,
) -> Result<GroupState, FilterError> {
    if !(dt > 0.0) {
        return Err(FilterError::NonPositiveDt { dt });
    }
    let (rot, vel, pos) = strapdown_step(
        &x.rot,
        &x.vel,
        &x.pos,
        &imu.gyro,
        &imu.accel,
        dt,
        &world.gravity,
    );
    Ok(GroupState {
        rot,
        vel,
        pos,
        rot_off: x.rot_off,
        pos_off: x.pos_off,
    })
}

/// Continuous-time Jacobian A of the right-invariant error dynamics.
///
/// Only two blocks are nonzero: gravity couples orientation error into
/// velocity error, and velocity error integrates into position error.
pub fn error_jacobian(world: &WorldConstants) -> Mat15 {
    let mut a = Mat15::zeros();
    a.fixed_view_mut::<3, 3>(VEL, ROT)
        .copy_from(&skew(&world.gravity));
    a.fixed_view_mut::<3, 3>(POS, VEL)
        .copy_from(&Mat3::identity());
    a
}

/// Process noise in the right-invariant error coordinates,
/// `Qbar = Ad_X Cov(w) Ad_X^T`, with the white-noise covariance placed
/// blockwise as (gyro, accel, 0, offset rotation, offset translation).
///
/// Units: the inertial channels are per-sample deviations at the sampling
/// interval `dt`, so their spectral density is `sd^2 * dt`; the placement
/// random-walk channels are already densities (rad/sqrt(s), m/sqrt(s)) and
/// enter unscaled. Both then carry density units, matching the `* dt` in
/// the covariance propagation.
pub fn process_noise_cov(x: &GroupState, noise: &NoiseSpec, dt: f64) -> Mat15 {
    let mut cov_w = Mat15::zeros();
    let put = |m: &mut Mat15, at: usize, var: f64| {
        m.fixed_view_mut::<3, 3>(at, at)
            .copy_from(&(var * Mat3::identity()));
    };
    put(&mut cov_w, ROT, noise.sd_gyro * noise.sd_gyro * dt);
    put(&mut cov_w, VEL, noise.sd_accel * noise.sd_accel * dt);
    put(&mut cov_w, ROT_OFF, noise.sd_offset_r * noise.sd_offset_r);
    put(&mut cov_w, POS_OFF, noise.sd_offset_p * noise.sd_offset_p);
    let ad = x.adjoint();
    ad * cov_w * ad.transpose()
}

/// Discrete transition matrix over `dt`. A is nilpotent (A^3 = 0), so the
/// quadratic truncation is the exact exponential.
pub fn transition_matrix(a: &Mat15, dt: f64) -> Mat15 {
    Mat15::identity() + a * dt + 0.5 * a * a * dt * dt
}

/// Discrete covariance propagation
/// `P <- Phi P Phi^T + Phi Qbar Phi^T dt`, symmetrized.
pub fn propagate_covariance(p: &Mat15, a: &Mat15, q_bar: &Mat15, dt: f64) -> Mat15 {
    let phi = transition_matrix(a, dt);
    let next = phi * (p + q_bar * dt) * phi.transpose();
    0.5 * (next + next.transpose())
}

/// Predicted measurement
/// `h(X) = dR R^T v - (dp)x dR w - (d_m)x dR w`,
/// with the gyro reading standing in for the body rate and the measured
/// contact point standing in for forward kinematics.
pub fn predict_measurement(x: &GroupState, gyro: &Vec3, d_m: &Vec3) -> Vec3 {
    let u = x.rot_off * gyro;
    x.rot_off * (x.rot.transpose() * x.vel) - skew(&x.pos_off) * u - skew(d_m) * u
}

/// Measurement Jacobian `H = [0, dR R^T, 0, h4, (dR w)x]` where
/// `h4 = -(dR R^T v)x - (dR w)x (dp)x + (dp)x (dR w)x + (d_m)x (dR w)x`.
pub fn measurement_jacobian(x: &GroupState, gyro: &Vec3, d_m: &Vec3) -> Mat3x15 {
    let u_skew = skew(&(x.rot_off * gyro));
    let dp_skew = skew(&x.pos_off);
    let body_vel = x.rot_off * (x.rot.transpose() * x.vel);
    let h4 = -skew(&body_vel) - u_skew * dp_skew + dp_skew * u_skew + skew(d_m) * u_skew;
    let mut h = Mat3x15::zeros();
    h.fixed_view_mut::<3, 3>(0, VEL)
        .copy_from(&(x.rot_off * x.rot.transpose()));
    h.fixed_view_mut::<3, 3>(0, ROT_OFF).copy_from(&h4);
    h.fixed_view_mut::<3, 3>(0, POS_OFF).copy_from(&u_skew);
    h
}

/// Innovation noise covariance. The white kinematic term is isotropic, so
/// the invariant frame transport is the identity on it; the remaining terms
/// are built directly in the measurement frame where the innovation lives:
///
/// - gyro noise reaching the prediction through the contact and placement
///   lever arms,
/// - contact-position measurement noise scaled by the angular rate,
/// - the leading quadratic linearization terms. The first-order innovation
///   spread is a severe underestimate while the velocity and placement
///   estimates are both uncertain, and an overconfident spread lets early
///   updates collapse the placement covariance on information that is not
///   there. These terms scale with the placement covariance and vanish
///   quadratically as it converges, so they cost nothing at steady state.
pub fn measurement_noise_cov(
    belief: &FilterBelief,
    gyro: &Vec3,
    d_m: &Vec3,
    noise: &NoiseSpec,
) -> Mat3 {
    let x = &belief.state;
    let kin = noise.sd_kin_meas * noise.sd_kin_meas * Mat3::identity();
    let lever = (skew(&x.pos_off) + skew(d_m)) * x.rot_off;
    // 2.5: the endpoint rate blends the latest two interval means with
    // weights 3/2 and -1/2, which carries 2.5x one sample's white variance.
    let gyro_term = 2.5 * noise.sd_gyro * noise.sd_gyro * lever * lever.transpose();
    let rate = skew(&(x.rot_off * gyro));
    let dm_term = noise.sd_kin_pos * noise.sd_kin_pos * rate * rate.transpose();
    let tr = |at: usize| belief.cov.fixed_view::<3, 3>(at, at).trace();
    let (vt, qt, pt) = (tr(VEL), tr(ROT_OFF), tr(POS_OFF));
    let h_bar = predict_measurement(x, gyro, d_m);
    let quad = qt * (0.25 * qt * h_bar.norm_squared() + vt + pt * gyro.norm_squared()) / 3.0;
    kin + gyro_term + dm_term + quad * Mat3::identity()
}

/// Condition number of a symmetric 3x3 matrix, +inf when singular or
/// indefinite.
pub(crate) fn sym_condition_number(s: &Mat3) -> f64 {
    let eig = s.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 {
        return f64::INFINITY;
    }
    max / min
}

/// Measurement update with `y = -d_m_dot`, applying the correction on the
/// left of the state. Returns the prior untouched when the innovation
/// covariance is close to singular (condition number >= [`MAX_CONDITION`]).
pub fn update(
    belief: &FilterBelief,
    y: &Vec3,
    gyro: &Vec3,
    d_m: &Vec3,
    noise: &NoiseSpec,
) -> UpdateResult {
    let h = measurement_jacobian(&belief.state, gyro, d_m);
    let n = measurement_noise_cov(belief, gyro, d_m, noise);
    let s = h * belief.cov * h.transpose() + n;
    let s = 0.5 * (s + s.transpose());
    if sym_condition_number(&s) >= MAX_CONDITION {
        return UpdateResult {
            belief: belief.clone(),
            applied: false,
        };
    }
    let s_inv = s.try_inverse().expect("well-conditioned by the check above");
    let gain: Mat15x3 = belief.cov * h.transpose() * s_inv;
    let innovation = y - predict_measurement(&belief.state, gyro, d_m);
    let state = group_exp(&(gain * innovation)).compose(&belief.state);
    let i_kh = Mat15::identity() - gain * h;
    let cov = i_kh * belief.cov * i_kh.transpose() + gain * n * gain.transpose();
    UpdateResult {
        belief: FilterBelief {
            state,
            cov: 0.5 * (cov + cov.transpose()),
        },
        applied: true,
    }
}

/// One filter cycle: propagate state and covariance through the IMU
/// interval, then apply the leg-odometry update when a measurement is
/// present at the post-propagation instant (within half an interval).
///
/// `prev_gyro` is the preceding interval's gyro sample when one exists. An
/// integrating gyro reports the mean rate across its interval, which lags
/// the measurement instant by half a step; with the previous interval in
/// hand the update can extrapolate the endpoint rate to second order
/// instead of folding that lag into the innovation.
///
/// Re-projects the rotation blocks onto SO(3) when numerical drift exceeds
/// [`ORTHO_DRIFT_TOL`].
pub fn step(
    belief: &FilterBelief,
    imu: &ImuSample,
    prev_gyro: Option<&Vec3>,
    odo: Option<&LegOdometryMeasurement>,
    dt: f64,
    noise: &NoiseSpec,
    world: &WorldConstants,
) -> Result<FilterBelief, FilterError> {
    let mut state = propagate_state(&belief.state, imu, dt, world)?;
    let drift = (state.rot.transpose() * state.rot - Mat3::identity()).abs().max();
    if drift > ORTHO_DRIFT_TOL {
        state.rot = crate::lie::orthonormalize(&state.rot);
        state.rot_off = crate::lie::orthonormalize(&state.rot_off);
    }
    let a = error_jacobian(world);
    let q_bar = process_noise_cov(&state, noise, dt);
    let cov = propagate_covariance(&belief.cov, &a, &q_bar, dt);
    let predicted = FilterBelief { state, cov };
    let Some(meas) = odo else {
        return Ok(predicted);
    };
    let state_t = imu.t + dt;
    if (meas.t - state_t).abs() > 0.5 * dt {
        return Err(FilterError::TimeMisaligned {
            measurement_t: meas.t,
            state_t,
        });
    }
    let y = -meas.vel;
    let gyro_end = match prev_gyro {
        Some(prev) => imu.gyro + 0.5 * (imu.gyro - prev),
        None => imu.gyro,
    };
    Ok(update(&predicted, &y, &gyro_end, &meas.pos, noise).belief)
}

/// Dense embedding of the deterministic dynamics applied to an embedded
/// group element: the extended-pose block receives the strapdown flow, the
/// offset block is static.
pub fn dynamics_embedding(e: &Mat9, imu: &ImuSample, world: &WorldConstants) -> Mat9 {
    let rot: Mat3 = e.fixed_view::<3, 3>(0, 0).into();
    let vel: Vec3 = e.fixed_view::<3, 1>(0, 3).into();
    let mut f = Mat9::zeros();
    f.fixed_view_mut::<3, 3>(0, 0).copy_from(&(rot * skew(&imu.gyro)));
    f.fixed_view_mut::<3, 1>(0, 3)
        .copy_from(&(rot * imu.accel + world.gravity));
    f.fixed_view_mut::<3, 1>(0, 4).copy_from(&vel);
    f
}

/// Frobenius-norm residual of the group-affine property
/// `f(X1 X2) = f(X1) X2 + X1 f(X2) - X1 f(I) X2`, evaluated densely.
pub fn group_affine_residual(
    x1: &GroupState,
    x2: &GroupState,
    imu: &ImuSample,
    world: &WorldConstants,
) -> f64 {
    let e1 = x1.embed();
    let e2 = x2.embed();
    let id = GroupState::identity().embed();
    let lhs = dynamics_embedding(&(e1 * e2), imu, world);
    let rhs = dynamics_embedding(&e1, imu, world) * e2 + e1 * dynamics_embedding(&e2, imu, world)
        - e1 * dynamics_embedding(&id, imu, world) * e2;
    (lhs - rhs).norm()
}

/// Invariant-error dynamics `g_u(eta) = f_u(eta) - eta f_u(I)` in the dense
/// embedding; its Jacobian at the identity is [`error_jacobian`].
pub fn invariant_error_dynamics(eta: &Mat9, imu: &ImuSample, world: &WorldConstants) -> Mat9 {
    let id = GroupState::identity().embed();
    dynamics_embedding(eta, imu, world) - eta * dynamics_embedding(&id, imu, world)
}

/// Extracts a tangent vector from a Lie-algebra embedding, averaging the
/// skew blocks.
pub fn algebra_vee(m: &Mat9) -> Vec15 {
    let top: Mat3 = m.fixed_view::<3, 3>(0, 0).into();
    let bottom: Mat3 = m.fixed_view::<3, 3>(5, 5).into();
    crate::lie::tangent(
        &vee(&top),
        &m.fixed_view::<3, 1>(0, 3).into(),
        &m.fixed_view::<3, 1>(0, 4).into(),
        &vee(&bottom),
        &m.fixed_view::<3, 1>(5, 8).into(),
    )
}
