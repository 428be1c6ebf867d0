//! Helpers shared by the integration suites: an independent dense matrix
//! exponential, a fixed-step matrix integrator, and seeded random draws
//! over the state group.

#![allow(dead_code)]

use inekf::lie::{self, Mat15, Vec15, Vec3};
use inekf::{GroupState, ImuSample};
use nalgebra::SMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense matrix exponential by scaling and squaring of a long Taylor sum.
/// Deliberately slow and simple; it shares no code with the closed forms it
/// is used to check.
pub fn expm<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    let norm = m.norm();
    let squarings = if norm > 0.25 { (norm / 0.25).log2().ceil() as u32 } else { 0 };
    let scaled = m / 2.0_f64.powi(squarings as i32);
    let mut sum = SMatrix::<f64, N, N>::identity();
    let mut term = SMatrix::<f64, N, N>::identity();
    for k in 1..=24 {
        term = term * scaled / k as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Classical fixed-step RK4 for matrix-valued autonomous derivatives.
pub fn rk4<const R: usize, const C: usize>(
    f: impl Fn(&SMatrix<f64, R, C>) -> SMatrix<f64, R, C>,
    x0: SMatrix<f64, R, C>,
    h: f64,
    steps: usize,
) -> SMatrix<f64, R, C> {
    let mut x = x0;
    for _ in 0..steps {
        let k1 = f(&x);
        let k2 = f(&(x + k1 * (h / 2.0)));
        let k3 = f(&(x + k2 * (h / 2.0)));
        let k4 = f(&(x + k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

/// Uniform vector with each component in [-scale, scale].
pub fn rand_vec3(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::new(
        rng.gen_range(-scale..=scale),
        rng.gen_range(-scale..=scale),
        rng.gen_range(-scale..=scale),
    )
}

/// Rotation vector with a uniform random axis and angle uniform in [lo, hi].
pub fn rand_rotvec(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vec3 {
    let axis = loop {
        let v = rand_vec3(rng, 1.0);
        let n = v.norm();
        if n > 1e-2 {
            break v / n;
        }
    };
    axis * rng.gen_range(lo..=hi)
}

/// Tangent vector whose rotation blocks stay below `rot` in angle and whose
/// linear blocks are uniform at `lin` scale.
pub fn rand_tangent(rng: &mut ChaCha8Rng, rot: f64, lin: f64) -> Vec15 {
    lie::tangent(
        &rand_rotvec(rng, 0.0, rot),
        &rand_vec3(rng, lin),
        &rand_vec3(rng, lin),
        &rand_rotvec(rng, 0.0, rot),
        &rand_vec3(rng, lin),
    )
}

/// Random group element with both rotation angles bounded away from pi so
/// the logarithm stays well defined.
pub fn rand_group(rng: &mut ChaCha8Rng, lin: f64) -> GroupState {
    lie::group_exp(&rand_tangent(rng, 2.8, lin))
}

/// Random IMU reading at magnitudes the squat motion actually produces.
pub fn rand_imu(rng: &mut ChaCha8Rng) -> ImuSample {
    ImuSample {
        t: 0.0,
        gyro: rand_vec3(rng, 1.5),
        accel: rand_vec3(rng, 4.0) + Vec3::new(0.0, 0.0, 9.81),
    }
}

/// Random symmetric positive semidefinite matrix at roughly the scale of
/// the experiment's initial covariance.
pub fn rand_psd15(rng: &mut ChaCha8Rng, scale: f64) -> Mat15 {
    let mut b = Mat15::zeros();
    for i in 0..15 {
        for j in 0..15 {
            b[(i, j)] = rng.gen_range(-scale..=scale);
        }
    }
    b * b.transpose() + Mat15::identity() * 1e-4
}

pub fn max_abs<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}
