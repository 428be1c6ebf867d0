//! Synthetic squat-motion ground truth plus IMU and leg-odometry synthesis.
//!
//! The body stands still for a few seconds, then squats: sinusoidal vertical
//! translation paired with a pitch oscillation, contact point pinned to the
//! world origin. Everything is analytic, so velocities and accelerations are
//! exact and the synthesized sensor streams can be checked against the
//! ground truth they came from. Sensors are synthesized with the true frame
//! offsets applied; the filters start from zero offsets and have to find
//! them.

use crate::filter::{ImuSample, LegOdometryMeasurement, NoiseSpec, WorldConstants};
use crate::lie::{skew, so3_exp, Mat3, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::Write;
use thiserror::Error;

/// Standing height of the body origin above the ground contact, m.
pub const BASE_HEIGHT: f64 = 1.0;

/// Second-harmonic fraction of the pitch waveform relative to its
/// fundamental. Values above 0.25 would break per-half-cycle monotonicity.
pub const PITCH_HARMONIC: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must be finite and non-negative, got {value}")]
    BadAmplitude { name: &'static str, value: f64 },
    #[error("offset rotation is not orthonormal")]
    InvalidRotation,
}

/// Stand-then-squat motion description.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MotionProfile {
    /// Static phase length, s.
    pub stand_duration: f64,
    /// Squatting phase length, s.
    pub squat_duration: f64,
    /// One squat cycle, s.
    pub cycle_period: f64,
    /// Half the peak-to-peak vertical travel, m.
    pub vertical_amplitude: f64,
    /// Peak forward pitch, rad.
    pub pitch_amplitude: f64,
    /// Sensor rate, Hz.
    pub sample_rate: f64,
}

impl Default for MotionProfile {
    fn default() -> Self {
        MotionProfile {
            stand_duration: 5.0,
            squat_duration: 55.0,
            cycle_period: 1.5,
            vertical_amplitude: 0.25,
            pitch_amplitude: 20.0_f64.to_radians(),
            sample_rate: 100.0,
        }
    }
}

impl MotionProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, value) in [
            ("stand_duration", self.stand_duration),
            ("squat_duration", self.squat_duration),
            ("cycle_period", self.cycle_period),
            ("sample_rate", self.sample_rate),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(SimError::NonPositive { name, value });
            }
        }
        for (name, value) in [
            ("vertical_amplitude", self.vertical_amplitude),
            ("pitch_amplitude", self.pitch_amplitude),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(SimError::BadAmplitude { name, value });
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn total_duration(&self) -> f64 {
        self.stand_duration + self.squat_duration
    }
}

/// True IMU-to-measurement-frame placement: the misalignment the offset
/// filter estimates and the baseline filter silently absorbs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FrameOffsets {
    pub rot: Mat3,
    pub pos: Vec3,
}

impl FrameOffsets {
    pub fn new(rot: Mat3, pos: Vec3) -> Result<Self, SimError> {
        let ortho = (rot.transpose() * rot - Mat3::identity()).abs().max();
        if ortho > 1e-6 || (rot.determinant() - 1.0).abs() > 1e-6 {
            return Err(SimError::InvalidRotation);
        }
        Ok(FrameOffsets { rot, pos })
    }

    pub fn from_rotvec(rotvec: Vec3, pos: Vec3) -> Self {
        FrameOffsets {
            rot: so3_exp(&rotvec),
            pos,
        }
    }

    pub fn identity() -> Self {
        FrameOffsets {
            rot: Mat3::identity(),
            pos: Vec3::zeros(),
        }
    }
}

impl Default for FrameOffsets {
    /// A 45 degree tilt about the pitch axis and a 0.12 m displacement.
    fn default() -> Self {
        FrameOffsets::from_rotvec(
            Vec3::new(0.0, 45.0_f64.to_radians(), 0.0),
            Vec3::new(0.08, 0.08, 0.04),
        )
    }
}

/// Ground truth at one sample instant, plus the body-frame IMU values for
/// the interval this sample opens. The interval values are the constant
/// rate and specific force whose strapdown step lands exactly on the next
/// sample's rotation and velocity; they differ from the instantaneous
/// readings by a quadratic-in-dt amount, far below sensor noise, and make
/// rate-discretization error a non-issue in every downstream consumer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub rot: Mat3,
    pub vel: Vec3,
    pub pos: Vec3,
    /// World-frame acceleration at t, gravity not included.
    pub acc: Vec3,
    /// Body-frame angular rate at t.
    pub omega: Vec3,
    /// World-frame contact point; constant over the run.
    pub contact: Vec3,
    /// Constant body-frame rate reproducing the rotation over [t, t + dt).
    pub gyro_interval: Vec3,
    /// Constant body-frame specific force reproducing the velocity over
    /// [t, t + dt).
    pub accel_interval: Vec3,
}

struct InstantState {
    rot: Mat3,
    vel: Vec3,
    pos: Vec3,
    acc: Vec3,
    omega: Vec3,
}

/// Analytic state at time t. Static until the stand phase ends, then a
/// raised-cosine squat: both the height dip and the pitch lead-in start
/// with zero velocity, so the phase switch is velocity-continuous.
fn instant_state(profile: &MotionProfile, t: f64) -> InstantState {
    let tau = t - profile.stand_duration;
    if tau < 0.0 {
        return InstantState {
            rot: Mat3::identity(),
            vel: Vec3::zeros(),
            pos: Vec3::new(0.0, 0.0, BASE_HEIGHT),
            acc: Vec3::zeros(),
            omega: Vec3::zeros(),
        };
    }
    let w = std::f64::consts::TAU / profile.cycle_period;
    let (s, c) = (w * tau).sin_cos();
    let (s2, c2) = (2.0 * w * tau).sin_cos();
    let amp = profile.vertical_amplitude;
    let z = BASE_HEIGHT - amp * (1.0 - c);
    let z_dot = -amp * w * s;
    let z_ddot = -amp * w * w * c;
    // The torso pitch is not proportional to squat depth: descent starts
    // knee-dominant and shifts to a hip hinge, so the lean leads the drop
    // within each cycle. A bounded second harmonic captures that skew while
    // keeping the pitch monotone per half-cycle with peak pitch_amplitude
    // (monotonicity requires the harmonic fraction <= 0.25).
    let half_pitch = 0.5 * profile.pitch_amplitude;
    let theta = half_pitch * ((1.0 - c) + PITCH_HARMONIC * (1.0 - c2));
    let theta_dot = half_pitch * w * (s + 2.0 * PITCH_HARMONIC * s2);
    InstantState {
        rot: so3_exp(&Vec3::new(0.0, theta, 0.0)),
        vel: Vec3::new(0.0, 0.0, z_dot),
        pos: Vec3::new(0.0, 0.0, z),
        acc: Vec3::new(0.0, 0.0, z_ddot),
        omega: Vec3::new(0.0, theta_dot, 0.0),
    }
}

/// Samples the analytic trajectory at the profile's rate. The returned
/// sequence has one sample per instant k / rate for k = 0..=N with
/// N = round(total duration * rate), so N intervals separate them.
pub fn generate_trajectory(profile: &MotionProfile) -> Result<Vec<TrajectorySample>, SimError> {
    profile.validate()?;
    let dt = profile.dt();
    let steps = (profile.total_duration() * profile.sample_rate).round() as usize;
    let gravity = WorldConstants::default().gravity;
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let now = instant_state(profile, t);
        // Interval-consistent IMU values: the rotation increment's log and
        // the left-Jacobian-corrected velocity increment. The final sample
        // opens no interval and repeats its instantaneous readings.
        let (gyro_interval, accel_interval) = if k < steps {
            let next = instant_state(profile, t + dt);
            let phi = crate::lie::so3_log(&(now.rot.transpose() * next.rot))
                .expect("per-sample rotation increments are far from pi");
            let accel = crate::lie::so3_left_jacobian_inv(&phi)
                * (now.rot.transpose() * (next.vel - now.vel - gravity * dt))
                / dt;
            (phi / dt, accel)
        } else {
            (now.omega, now.rot.transpose() * (now.acc - gravity))
        };
        out.push(TrajectorySample {
            t,
            rot: now.rot,
            vel: now.vel,
            pos: now.pos,
            acc: now.acc,
            omega: now.omega,
            contact: Vec3::zeros(),
            gyro_interval,
            accel_interval,
        });
    }
    Ok(out)
}

/// Noiseless contact position in the measurement frame.
pub fn contact_in_measurement_frame(sample: &TrajectorySample, offsets: &FrameOffsets) -> Vec3 {
    offsets.rot * (sample.rot.transpose() * (sample.contact - sample.pos)) - offsets.pos
}

/// Noiseless contact velocity in the measurement frame: time derivative of
/// the position relation under a stationary contact.
pub fn contact_rate_in_measurement_frame(sample: &TrajectorySample, offsets: &FrameOffsets) -> Vec3 {
    let body_offset = sample.rot.transpose() * (sample.contact - sample.pos);
    offsets.rot * (-skew(&sample.omega) * body_offset - sample.rot.transpose() * sample.vel)
}

fn perturb(rng: &mut ChaCha8Rng, v: &Vec3, sd: f64) -> Vec3 {
    if sd == 0.0 {
        return *v;
    }
    let normal = Normal::new(0.0, sd).expect("finite sd");
    Vec3::new(
        v.x + normal.sample(rng),
        v.y + normal.sample(rng),
        v.z + normal.sample(rng),
    )
}

/// IMU stream: the interval-midpoint body rate and specific force of each
/// sample, plus white noise. One reading per trajectory sample; the last
/// one pads the stream so sensor rows align, and replay never consumes it.
pub fn synthesize_imu(traj: &[TrajectorySample], noise: &NoiseSpec, seed: u64) -> Vec<ImuSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    traj.iter()
        .map(|s| ImuSample {
            t: s.t,
            gyro: perturb(&mut rng, &s.gyro_interval, noise.sd_gyro),
            accel: perturb(&mut rng, &s.accel_interval, noise.sd_accel),
        })
        .collect()
}

/// Leg-odometry stream: instantaneous measurement-frame contact position
/// and velocity under the TRUE offsets, plus white noise per channel.
pub fn synthesize_leg_odometry(
    traj: &[TrajectorySample],
    offsets: &FrameOffsets,
    noise: &NoiseSpec,
    seed: u64,
) -> Vec<LegOdometryMeasurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    traj.iter()
        .map(|s| LegOdometryMeasurement {
            t: s.t,
            pos: perturb(&mut rng, &contact_in_measurement_frame(s, offsets), noise.sd_kin_pos),
            vel: perturb(
                &mut rng,
                &contact_rate_in_measurement_frame(s, offsets),
                noise.sd_kin_meas,
            ),
        })
        .collect()
}

/// Writes aligned sensor rows as CSV. Floats use the shortest
/// representation that parses back to the same value, so replaying an
/// exported file is bit-exact.
pub fn write_sensors_csv<W: Write>(
    out: &mut W,
    imu: &[ImuSample],
    odo: &[LegOdometryMeasurement],
) -> std::io::Result<()> {
    assert_eq!(imu.len(), odo.len(), "sensor streams must be aligned");
    writeln!(out, "t,ax,ay,az,gx,gy,gz,dmx,dmy,dmz,ddmx,ddmy,ddmz")?;
    for (i, o) in imu.iter().zip(odo) {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            i.t,
            i.accel.x,
            i.accel.y,
            i.accel.z,
            i.gyro.x,
            i.gyro.y,
            i.gyro.z,
            o.pos.x,
            o.pos.y,
            o.pos.z,
            o.vel.x,
            o.vel.y,
            o.vel.z
        )?;
    }
    Ok(())
}

/// Parses a file produced by `write_sensors_csv`.
pub fn read_sensors_csv(
    text: &str,
) -> Result<(Vec<ImuSample>, Vec<LegOdometryMeasurement>), String> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or("empty sensor file")?;
    if header.trim() != "t,ax,ay,az,gx,gy,gz,dmx,dmy,dmz,ddmx,ddmy,ddmz" {
        return Err(format!("unexpected header: {header}"));
    }
    let mut imu = Vec::new();
    let mut odo = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", lineno + 1))?;
        if fields.len() != 13 {
            return Err(format!("line {}: expected 13 fields, got {}", lineno + 1, fields.len()));
        }
        imu.push(ImuSample {
            t: fields[0],
            accel: Vec3::new(fields[1], fields[2], fields[3]),
            gyro: Vec3::new(fields[4], fields[5], fields[6]),
        });
        odo.push(LegOdometryMeasurement {
            t: fields[0],
            pos: Vec3::new(fields[7], fields[8], fields[9]),
            vel: Vec3::new(fields[10], fields[11], fields[12]),
        });
    }
    Ok((imu, odo))
}
