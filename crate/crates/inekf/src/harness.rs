//! Experiment harness: seeded trials, filter replay, error extraction, and
//! cross-trial aggregation for the convergence study.
//!
//! A trial synthesizes one sensor run, perturbs the initial belief, replays
//! the chosen filter, and records per-step estimate errors. An experiment
//! repeats that over many seeds and reduces the results to RMSE-over-time
//! curves and convergence-time statistics. Both filters of a comparison see
//! bit-identical sensor streams for a given trial seed.

use crate::baseline::{
    self, baseline_update, contact_from_measurement, BaselineBelief, BaselineState, Mat12,
};
use crate::filter::{
    self, FilterBelief, FilterError, ImuSample, LegOdometryMeasurement, NoiseSpec, WorldConstants,
};
use crate::lie::{so3_exp, so3_log, GroupState, Mat15, Mat3, Vec3, POS, POS_OFF, ROT, ROT_OFF, VEL};
use crate::sim::{
    generate_trajectory, synthesize_imu, synthesize_leg_odometry, FrameOffsets, MotionProfile,
    SimError, TrajectorySample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::io::Write;
use thiserror::Error;

/// Errors above this norm mark a trial as diverged.
pub const DIVERGENCE_NORM: f64 = 1e3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("non-finite estimate at step {step} (t = {t} s)")]
    NonFinite { step: usize, t: f64 },
    #[error("sensor streams too short: {got} samples")]
    TooFewSamples { got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Proposed,
    Baseline,
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FilterKind::Proposed => "proposed",
            FilterKind::Baseline => "baseline",
        })
    }
}

/// Per-axis variances of the initial belief.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct InitialUncertainty {
    pub att_var: f64,
    pub vel_var: f64,
    pub pos_var: f64,
    pub rot_off_var: f64,
    pub pos_off_var: f64,
    pub contact_var: f64,
}

impl Default for InitialUncertainty {
    fn default() -> Self {
        let att_half = 30.0_f64.to_radians();
        InitialUncertainty {
            // Variance of a uniform draw over [-r, r] is r^2 / 3.
            att_var: att_half * att_half / 3.0,
            vel_var: 1.0 / 3.0,
            pos_var: 0.1,
            rot_off_var: {
                let r = 45.0_f64.to_radians();
                r * r
            },
            pos_off_var: 0.04,
            contact_var: 0.1,
        }
    }
}

impl InitialUncertainty {
    pub fn proposed_cov(&self) -> Mat15 {
        let mut p = Mat15::zeros();
        for (at, var) in [
            (ROT, self.att_var),
            (VEL, self.vel_var),
            (POS, self.pos_var),
            (ROT_OFF, self.rot_off_var),
            (POS_OFF, self.pos_off_var),
        ] {
            for i in 0..3 {
                p[(at + i, at + i)] = var;
            }
        }
        p
    }

    pub fn baseline_cov(&self) -> Mat12 {
        let mut p = Mat12::zeros();
        for (at, var) in [
            (baseline::ROT, self.att_var),
            (baseline::VEL, self.vel_var),
            (baseline::POS, self.pos_var),
            (baseline::CONTACT, self.contact_var),
        ] {
            for i in 0..3 {
                p[(at + i, at + i)] = var;
            }
        }
        p
    }
}

/// Everything one trial needs. The initial errors are explicit so edge
/// cases (exact initialization, single-axis perturbations) are directly
/// constructible; `seed` only drives the sensor noise streams.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub seed: u64,
    pub init_vel_err: Vec3,
    /// Axis-angle initial attitude error, applied on the left.
    pub init_att_err: Vec3,
    pub offsets: FrameOffsets,
    pub profile: MotionProfile,
    /// Noise the simulator injects into the sensors.
    pub sim_noise: NoiseSpec,
    /// Noise the filter under test assumes.
    pub filter_noise: NoiseSpec,
    pub conv_threshold: f64,
    pub conv_hold: f64,
    pub init_unc: InitialUncertainty,
}

/// Per-step errors of one replay. Series hold one row per sample instant;
/// row 0 reflects the belief after the initial measurement update. The
/// offset series are empty for the baseline filter, which has no such
/// estimates. If the filter errors out mid-run the remaining rows repeat
/// the last recorded row and `diverged` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    pub filter: FilterKind,
    pub t: Vec<f64>,
    pub vel_err: Vec<Vec3>,
    /// Attitude error as a rotation vector of est * truth^T; x is roll,
    /// y pitch, z yaw.
    pub att_err: Vec<Vec3>,
    /// Rotation-vector error of the placement rotation estimate.
    pub rot_off_err: Vec<Vec3>,
    /// Placement translation estimate minus truth.
    pub pos_off_err: Vec<Vec3>,
    /// First time the velocity error norm stays below the threshold for a
    /// full hold window; infinite when that never happens.
    pub convergence_time: f64,
    /// RMS velocity error norm over the final second.
    pub final_vel_rmse: f64,
    /// Per-axis RMS attitude error over the final second.
    pub final_att_rmse: Vec3,
    pub diverged: bool,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-trial seed derivation.
pub fn trial_seed(master: u64, index: usize) -> u64 {
    splitmix64(master ^ (index as u64).wrapping_mul(0xA076_1D64_78BD_642F))
}

fn imu_seed(trial: u64) -> u64 {
    splitmix64(trial ^ 0x494D_55)
}

fn odo_seed(trial: u64) -> u64 {
    splitmix64(trial ^ 0x4F44_4F)
}

/// Rotation-vector error of an estimate against truth. A relative rotation
/// at or beyond pi has no unique log; report a half-turn on every axis,
/// which downstream thresholds treat as a gross error.
fn rotation_error(est: &Mat3, truth: &Mat3) -> Vec3 {
    so3_log(&(est * truth.transpose()))
        .unwrap_or_else(|_| Vec3::repeat(std::f64::consts::FRAC_PI_2 * 1.1547))
}

fn finite3(v: &Vec3) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn finite_mat(m: &Mat3) -> bool {
    m.iter().all(|x| x.is_finite())
}

struct ErrorRow {
    vel: Vec3,
    att: Vec3,
    rot_off: Option<Vec3>,
    pos_off: Option<Vec3>,
}

struct SeriesRecorder {
    t: Vec<f64>,
    vel: Vec<Vec3>,
    att: Vec<Vec3>,
    rot_off: Vec<Vec3>,
    pos_off: Vec<Vec3>,
    diverged: bool,
}

impl SeriesRecorder {
    fn new(capacity: usize) -> Self {
        SeriesRecorder {
            t: Vec::with_capacity(capacity),
            vel: Vec::with_capacity(capacity),
            att: Vec::with_capacity(capacity),
            rot_off: Vec::with_capacity(capacity),
            pos_off: Vec::with_capacity(capacity),
            diverged: false,
        }
    }

    fn push(&mut self, t: f64, row: ErrorRow) {
        if row.vel.norm() > DIVERGENCE_NORM || row.att.norm() > DIVERGENCE_NORM {
            self.diverged = true;
        }
        self.t.push(t);
        self.vel.push(row.vel);
        self.att.push(row.att);
        if let Some(r) = row.rot_off {
            self.rot_off.push(r);
        }
        if let Some(p) = row.pos_off {
            self.pos_off.push(p);
        }
    }

    /// Flat-lines the series to the requested length after a hard filter
    /// failure, so cross-trial aggregation keeps aligned rows.
    fn pad_to(&mut self, len: usize, dt: f64) {
        self.diverged = true;
        while self.t.len() < len {
            let t = self.t.last().copied().unwrap_or(0.0) + dt;
            self.t.push(t);
            self.vel.push(*self.vel.last().expect("at least one row before padding"));
            self.att.push(*self.att.last().expect("at least one row before padding"));
            if let Some(&r) = self.rot_off.last() {
                self.rot_off.push(r);
            }
            if let Some(&p) = self.pos_off.last() {
                self.pos_off.push(p);
            }
        }
    }
}

fn proposed_row(state: &GroupState, truth: &TrajectorySample, offsets: &FrameOffsets) -> ErrorRow {
    ErrorRow {
        vel: state.vel - truth.vel,
        att: rotation_error(&state.rot, &truth.rot),
        rot_off: Some(rotation_error(&state.rot_off, &offsets.rot)),
        pos_off: Some(state.pos_off - offsets.pos),
    }
}

fn baseline_row(state: &BaselineState, truth: &TrajectorySample) -> ErrorRow {
    ErrorRow {
        vel: state.vel - truth.vel,
        att: rotation_error(&state.rot, &truth.rot),
        rot_off: None,
        pos_off: None,
    }
}

fn proposed_finite(b: &FilterBelief) -> bool {
    finite_mat(&b.state.rot)
        && finite3(&b.state.vel)
        && finite3(&b.state.pos)
        && finite_mat(&b.state.rot_off)
        && finite3(&b.state.pos_off)
        && b.cov.iter().all(|x| x.is_finite())
}

fn baseline_finite(b: &BaselineBelief) -> bool {
    finite_mat(&b.state.rot)
        && finite3(&b.state.vel)
        && finite3(&b.state.pos)
        && finite3(&b.state.contact)
        && b.cov.iter().all(|x| x.is_finite())
}

/// Initial belief for the offset filter: perturbed attitude and velocity,
/// true position, identity placement offsets.
pub fn proposed_init(
    truth0: &TrajectorySample,
    vel_err: &Vec3,
    att_err: &Vec3,
    unc: &InitialUncertainty,
) -> FilterBelief {
    FilterBelief {
        state: GroupState {
            rot: so3_exp(att_err) * truth0.rot,
            vel: truth0.vel + vel_err,
            pos: truth0.pos,
            rot_off: Mat3::identity(),
            pos_off: Vec3::zeros(),
        },
        cov: unc.proposed_cov(),
    }
}

/// Initial belief for the baseline filter; the contact estimate comes from
/// the first position measurement.
pub fn baseline_init(
    truth0: &TrajectorySample,
    vel_err: &Vec3,
    att_err: &Vec3,
    first_meas: &Vec3,
    unc: &InitialUncertainty,
) -> BaselineBelief {
    let rot = so3_exp(att_err) * truth0.rot;
    let pos = truth0.pos;
    BaselineBelief {
        state: BaselineState {
            rot,
            vel: truth0.vel + vel_err,
            pos,
            contact: contact_from_measurement(&rot, &pos, first_meas),
        },
        cov: unc.baseline_cov(),
    }
}

/// Runs one seeded trial of the chosen filter and extracts error series.
/// Deterministic: the same config yields bit-identical results. Filter
/// breakdowns are recorded in the result rather than returned as errors.
pub fn run_trial(cfg: &TrialConfig, kind: FilterKind) -> Result<TrialResult, HarnessError> {
    let traj = generate_trajectory(&cfg.profile)?;
    if traj.len() < 2 {
        return Err(HarnessError::TooFewSamples { got: traj.len() });
    }
    let dt = cfg.profile.dt();
    let imu = synthesize_imu(&traj, &cfg.sim_noise, imu_seed(cfg.seed));
    let odo = synthesize_leg_odometry(&traj, &cfg.offsets, &cfg.sim_noise, odo_seed(cfg.seed));
    let world = WorldConstants::default();
    let steps = traj.len() - 1;
    let mut rec = SeriesRecorder::new(traj.len());

    match kind {
        FilterKind::Proposed => {
            let mut belief =
                proposed_init(&traj[0], &cfg.init_vel_err, &cfg.init_att_err, &cfg.init_unc);
            let y0 = -odo[0].vel;
            belief =
                filter::update(&belief, &y0, &imu[0].gyro, &odo[0].pos, &cfg.filter_noise).belief;
            rec.push(traj[0].t, proposed_row(&belief.state, &traj[0], &cfg.offsets));
            for k in 0..steps {
                let prev_gyro = k.checked_sub(1).map(|j| &imu[j].gyro);
                match filter::step(
                    &belief,
                    &imu[k],
                    prev_gyro,
                    Some(&odo[k + 1]),
                    dt,
                    &cfg.filter_noise,
                    &world,
                ) {
                    Ok(next) if proposed_finite(&next) => {
                        belief = next;
                        rec.push(traj[k + 1].t, proposed_row(&belief.state, &traj[k + 1], &cfg.offsets));
                    }
                    _ => {
                        rec.pad_to(traj.len(), dt);
                        break;
                    }
                }
            }
        }
        FilterKind::Baseline => {
            let mut belief = baseline_init(
                &traj[0],
                &cfg.init_vel_err,
                &cfg.init_att_err,
                &odo[0].pos,
                &cfg.init_unc,
            );
            belief = baseline_update(&belief, &odo[0].pos, &cfg.filter_noise).belief;
            rec.push(traj[0].t, baseline_row(&belief.state, &traj[0]));
            for k in 0..steps {
                match baseline::baseline_step(
                    &belief,
                    &imu[k],
                    Some((odo[k + 1].t, &odo[k + 1].pos)),
                    dt,
                    &cfg.filter_noise,
                    &world,
                ) {
                    Ok(next) if baseline_finite(&next) => {
                        belief = next;
                        rec.push(traj[k + 1].t, baseline_row(&belief.state, &traj[k + 1]));
                    }
                    _ => {
                        rec.pad_to(traj.len(), dt);
                        break;
                    }
                }
            }
        }
    }

    let vel_norms: Vec<f64> = rec.vel.iter().map(|v| v.norm()).collect();
    let convergence =
        convergence_time(&rec.t, &vel_norms, cfg.conv_threshold, cfg.conv_hold);
    let t_end = *rec.t.last().expect("non-empty series");
    let window: Vec<usize> = (0..rec.t.len()).filter(|&i| rec.t[i] >= t_end - 1.0).collect();
    let final_vel_rmse = rms(window.iter().map(|&i| vel_norms[i]));
    let final_att_rmse = Vec3::new(
        rms(window.iter().map(|&i| rec.att[i].x)),
        rms(window.iter().map(|&i| rec.att[i].y)),
        rms(window.iter().map(|&i| rec.att[i].z)),
    );
    Ok(TrialResult {
        seed: cfg.seed,
        filter: kind,
        t: rec.t,
        vel_err: rec.vel,
        att_err: rec.att,
        rot_off_err: rec.rot_off,
        pos_off_err: rec.pos_off,
        convergence_time: convergence,
        final_vel_rmse,
        final_att_rmse,
        diverged: rec.diverged,
    })
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v * v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        (sum / n as f64).sqrt()
    }
}

/// First time t* with the error below `threshold` at every sample in the
/// closed window [t*, t* + hold]. Returns infinity when no window both
/// qualifies and is fully covered by data.
pub fn convergence_time(t: &[f64], err: &[f64], threshold: f64, hold: f64) -> f64 {
    assert_eq!(t.len(), err.len(), "series lengths must match");
    assert!(threshold > 0.0, "threshold must be positive");
    let mut run_start: Option<usize> = None;
    for i in 0..err.len() {
        if err[i] < threshold {
            run_start.get_or_insert(i);
        } else {
            // The window starting at the run head succeeds only if this
            // excursion lies strictly beyond it.
            if let Some(s) = run_start {
                if t[i] > t[s] + hold {
                    return t[s];
                }
            }
            run_start = None;
        }
    }
    if let Some(s) = run_start {
        if *t.last().expect("non-empty series") >= t[s] + hold {
            return t[s];
        }
    }
    f64::INFINITY
}

/// Linear-interpolation quantile of unsorted data; infinities sort last
/// and propagate, so never-converged sentinels skew the statistic upward
/// instead of vanishing.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!((0.0..=1.0).contains(&q), "quantile must be in [0, 1]");
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in quantile input"));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi || sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    if !sorted[hi].is_finite() {
        return if frac > 0.0 { sorted[hi] } else { sorted[lo] };
    }
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Full study description. Defaults mirror the comparison experiment:
/// fifty trials, squat profile, true offsets of 45 degrees and 0.12 m.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub trials: usize,
    pub seed: u64,
    pub profile: MotionProfile,
    pub offsets: FrameOffsets,
    pub sim_noise: NoiseSpec,
    pub proposed_noise: NoiseSpec,
    pub baseline_noise: NoiseSpec,
    /// Half-range of the per-axis uniform initial velocity error, m/s.
    pub init_vel_range: f64,
    /// Half-range of the per-axis uniform initial attitude error, rad.
    pub init_att_range: f64,
    pub conv_threshold: f64,
    pub conv_hold: f64,
    pub init_unc: InitialUncertainty,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            trials: 50,
            seed: 7,
            profile: MotionProfile::default(),
            offsets: FrameOffsets::default(),
            sim_noise: NoiseSpec::sensor_grade(),
            proposed_noise: NoiseSpec::proposed(),
            baseline_noise: NoiseSpec::baseline(),
            init_vel_range: 1.0,
            init_att_range: 30.0_f64.to_radians(),
            conv_threshold: 0.1,
            conv_hold: 1.0,
            init_unc: InitialUncertainty::default(),
        }
    }
}

/// Samples the per-trial initial errors. The draw order is fixed, so the
/// k-th trial's perturbation never depends on the trial count.
pub fn trial_configs(cfg: &ExperimentConfig, kind: FilterKind) -> Vec<TrialConfig> {
    let filter_noise = match kind {
        FilterKind::Proposed => cfg.proposed_noise,
        FilterKind::Baseline => cfg.baseline_noise,
    };
    (0..cfg.trials)
        .map(|k| {
            let seed = trial_seed(cfg.seed, k);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = |range: f64| {
                Vec3::new(
                    rng.gen_range(-range..=range),
                    rng.gen_range(-range..=range),
                    rng.gen_range(-range..=range),
                )
            };
            let init_vel_err = draw(cfg.init_vel_range);
            let init_att_err = draw(cfg.init_att_range);
            TrialConfig {
                seed,
                init_vel_err,
                init_att_err,
                offsets: cfg.offsets.clone(),
                profile: cfg.profile,
                sim_noise: cfg.sim_noise,
                filter_noise,
                conv_threshold: cfg.conv_threshold,
                conv_hold: cfg.conv_hold,
                init_unc: cfg.init_unc,
            }
        })
        .collect()
}

/// Cross-trial aggregates for one filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterMetrics {
    pub filter: FilterKind,
    pub trials: usize,
    pub converged: usize,
    pub diverged: usize,
    pub median_convergence: f64,
    pub iqr_convergence: (f64, f64),
    pub t: Vec<f64>,
    /// Per-timestep RMS over trials of the velocity error norm.
    pub vel_rmse: Vec<f64>,
    pub roll_rmse: Vec<f64>,
    pub pitch_rmse: Vec<f64>,
    pub yaw_rmse: Vec<f64>,
    /// Per-timestep RMS placement-rotation error angle; empty for the
    /// baseline filter.
    pub rot_off_rmse: Vec<f64>,
    /// Per-timestep RMS placement-translation error, one series per axis.
    pub pos_off_rmse: [Vec<f64>; 3],
    /// Means of the respective RMSE curves over the final second.
    pub final_vel_rmse: f64,
    pub final_roll_rmse: f64,
    pub final_pitch_rmse: f64,
    pub final_yaw_rmse: f64,
    pub initial_yaw_rmse: f64,
    pub final_rot_off_rmse: f64,
    pub final_pos_off_rmse: [f64; 3],
}

pub struct ExperimentOutcome {
    pub results: Vec<TrialResult>,
    pub metrics: FilterMetrics,
}

/// Runs every trial of the study for one filter, in parallel, and reduces
/// the results in trial order.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    kind: FilterKind,
) -> Result<ExperimentOutcome, HarnessError> {
    let configs = trial_configs(cfg, kind);
    // Indexed parallel map keeps result order equal to trial order, so the
    // reduction below is deterministic regardless of scheduling.
    let results: Vec<TrialResult> = configs
        .par_iter()
        .map(|tc| run_trial(tc, kind))
        .collect::<Result<_, _>>()?;
    let metrics = aggregate(kind, &results);
    Ok(ExperimentOutcome { results, metrics })
}

/// Streaming single-pass reduction of per-trial series into RMSE curves
/// and convergence statistics.
pub fn aggregate(kind: FilterKind, results: &[TrialResult]) -> FilterMetrics {
    assert!(!results.is_empty(), "aggregate needs at least one trial");
    let rows = results[0].t.len();
    for r in results {
        assert_eq!(r.t.len(), rows, "trials must share the sample grid");
    }
    let n = results.len() as f64;
    let mut vel_sq = vec![0.0; rows];
    let mut roll_sq = vec![0.0; rows];
    let mut pitch_sq = vec![0.0; rows];
    let mut yaw_sq = vec![0.0; rows];
    let with_offsets = kind == FilterKind::Proposed;
    let mut rot_off_sq = vec![0.0; if with_offsets { rows } else { 0 }];
    let mut pos_off_sq = [
        vec![0.0; if with_offsets { rows } else { 0 }],
        vec![0.0; if with_offsets { rows } else { 0 }],
        vec![0.0; if with_offsets { rows } else { 0 }],
    ];
    for r in results {
        for k in 0..rows {
            vel_sq[k] += r.vel_err[k].norm_squared();
            roll_sq[k] += r.att_err[k].x * r.att_err[k].x;
            pitch_sq[k] += r.att_err[k].y * r.att_err[k].y;
            yaw_sq[k] += r.att_err[k].z * r.att_err[k].z;
            if with_offsets {
                rot_off_sq[k] += r.rot_off_err[k].norm_squared();
                for axis in 0..3 {
                    pos_off_sq[axis][k] += r.pos_off_err[k][axis] * r.pos_off_err[k][axis];
                }
            }
        }
    }
    let finish = |sq: Vec<f64>| -> Vec<f64> { sq.into_iter().map(|s| (s / n).sqrt()).collect() };
    let t = results[0].t.clone();
    let vel_rmse = finish(vel_sq);
    let roll_rmse = finish(roll_sq);
    let pitch_rmse = finish(pitch_sq);
    let yaw_rmse = finish(yaw_sq);
    let rot_off_rmse = finish(rot_off_sq);
    let pos_off_rmse = pos_off_sq.map(finish);

    let t_end = *t.last().expect("non-empty grid");
    let tail: Vec<usize> = (0..rows).filter(|&i| t[i] >= t_end - 1.0).collect();
    let tail_mean = |series: &[f64]| -> f64 {
        if series.is_empty() {
            f64::NAN
        } else {
            tail.iter().map(|&i| series[i]).sum::<f64>() / tail.len() as f64
        }
    };
    let conv_times: Vec<f64> = results.iter().map(|r| r.convergence_time).collect();
    FilterMetrics {
        filter: kind,
        trials: results.len(),
        converged: conv_times.iter().filter(|c| c.is_finite()).count(),
        diverged: results.iter().filter(|r| r.diverged).count(),
        median_convergence: median(&conv_times),
        iqr_convergence: (quantile(&conv_times, 0.25), quantile(&conv_times, 0.75)),
        final_vel_rmse: tail_mean(&vel_rmse),
        final_roll_rmse: tail_mean(&roll_rmse),
        final_pitch_rmse: tail_mean(&pitch_rmse),
        final_yaw_rmse: tail_mean(&yaw_rmse),
        initial_yaw_rmse: yaw_rmse[0],
        final_rot_off_rmse: tail_mean(&rot_off_rmse),
        final_pos_off_rmse: [
            tail_mean(&pos_off_rmse[0]),
            tail_mean(&pos_off_rmse[1]),
            tail_mean(&pos_off_rmse[2]),
        ],
        t,
        vel_rmse,
        roll_rmse,
        pitch_rmse,
        yaw_rmse,
        rot_off_rmse,
        pos_off_rmse,
    }
}

/// Replays sensor streams through the offset filter, returning the estimate
/// at every sample instant. Stops with an error on the first non-finite
/// estimate so a NaN can never propagate silently into output files.
pub fn replay_proposed(
    imu: &[ImuSample],
    odo: &[LegOdometryMeasurement],
    init: FilterBelief,
    noise: &NoiseSpec,
    dt: f64,
) -> Result<Vec<(f64, GroupState)>, HarnessError> {
    if imu.len() < 2 || odo.len() != imu.len() {
        return Err(HarnessError::TooFewSamples { got: imu.len().min(odo.len()) });
    }
    let world = WorldConstants::default();
    let mut belief = init;
    let y0 = -odo[0].vel;
    belief = filter::update(&belief, &y0, &imu[0].gyro, &odo[0].pos, noise).belief;
    let mut out = Vec::with_capacity(imu.len());
    out.push((odo[0].t, belief.state.clone()));
    for k in 0..imu.len() - 1 {
        let prev_gyro = k.checked_sub(1).map(|j| &imu[j].gyro);
        belief = filter::step(&belief, &imu[k], prev_gyro, Some(&odo[k + 1]), dt, noise, &world)?;
        if !proposed_finite(&belief) {
            return Err(HarnessError::NonFinite { step: k + 1, t: odo[k + 1].t });
        }
        out.push((odo[k + 1].t, belief.state.clone()));
    }
    Ok(out)
}

/// Baseline counterpart of `replay_proposed`.
pub fn replay_baseline(
    imu: &[ImuSample],
    odo: &[LegOdometryMeasurement],
    init: BaselineBelief,
    noise: &NoiseSpec,
    dt: f64,
) -> Result<Vec<(f64, BaselineState)>, HarnessError> {
    if imu.len() < 2 || odo.len() != imu.len() {
        return Err(HarnessError::TooFewSamples { got: imu.len().min(odo.len()) });
    }
    let world = WorldConstants::default();
    let mut belief = init;
    belief = baseline_update(&belief, &odo[0].pos, noise).belief;
    let mut out = Vec::with_capacity(imu.len());
    out.push((odo[0].t, belief.state.clone()));
    for k in 0..imu.len() - 1 {
        belief = baseline::baseline_step(
            &belief,
            &imu[k],
            Some((odo[k + 1].t, &odo[k + 1].pos)),
            dt,
            noise,
            &world,
        )?;
        if !baseline_finite(&belief) {
            return Err(HarnessError::NonFinite { step: k + 1, t: odo[k + 1].t });
        }
        out.push((odo[k + 1].t, belief.state.clone()));
    }
    Ok(out)
}

/// SHA-256 of the canonical JSON encoding of the config; recorded in the
/// summary so result files can be traced to the exact settings.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write as _;
        write!(hex, "{byte:02x}").expect("writing to string");
    }
    hex
}

/// Compact per-filter summary for the study report.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FilterSummary {
    pub filter: FilterKind,
    pub trials: usize,
    pub converged_trials: usize,
    pub diverged_trials: usize,
    /// None encodes a never-converged median.
    pub median_convergence_s: Option<f64>,
    pub iqr_convergence_s: [Option<f64>; 2],
    pub final_vel_rmse_m_s: f64,
    pub final_roll_rmse_deg: f64,
    pub final_pitch_rmse_deg: f64,
    pub final_yaw_rmse_deg: f64,
    pub initial_yaw_rmse_deg: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_rot_off_rmse_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_pos_off_rmse_m: Option<[f64; 3]>,
}

fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl FilterSummary {
    pub fn from_metrics(m: &FilterMetrics) -> Self {
        let deg = |r: f64| r.to_degrees();
        FilterSummary {
            filter: m.filter,
            trials: m.trials,
            converged_trials: m.converged,
            diverged_trials: m.diverged,
            median_convergence_s: finite_or_none(m.median_convergence),
            iqr_convergence_s: [
                finite_or_none(m.iqr_convergence.0),
                finite_or_none(m.iqr_convergence.1),
            ],
            final_vel_rmse_m_s: m.final_vel_rmse,
            final_roll_rmse_deg: deg(m.final_roll_rmse),
            final_pitch_rmse_deg: deg(m.final_pitch_rmse),
            final_yaw_rmse_deg: deg(m.final_yaw_rmse),
            initial_yaw_rmse_deg: deg(m.initial_yaw_rmse),
            final_rot_off_rmse_deg: (m.filter == FilterKind::Proposed)
                .then(|| deg(m.final_rot_off_rmse)),
            final_pos_off_rmse_m: (m.filter == FilterKind::Proposed)
                .then_some(m.final_pos_off_rmse),
        }
    }
}

/// Study report: one entry per filter plus the headline speedup ratio.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ExperimentSummary {
    pub config_hash: String,
    pub trials: usize,
    pub filters: Vec<FilterSummary>,
    /// baseline median convergence / proposed median convergence, when
    /// both are defined.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup_ratio: Option<f64>,
}

pub fn experiment_summary(cfg: &ExperimentConfig, metrics: &[FilterMetrics]) -> ExperimentSummary {
    let filters: Vec<FilterSummary> = metrics.iter().map(FilterSummary::from_metrics).collect();
    let median_of = |kind: FilterKind| {
        metrics
            .iter()
            .find(|m| m.filter == kind)
            .map(|m| m.median_convergence)
            .filter(|m| m.is_finite())
    };
    let speedup_ratio = match (median_of(FilterKind::Proposed), median_of(FilterKind::Baseline)) {
        (Some(p), Some(b)) if p > 0.0 => Some(b / p),
        _ => None,
    };
    ExperimentSummary {
        config_hash: config_hash(cfg),
        trials: cfg.trials,
        filters,
        speedup_ratio,
    }
}

/// One row per sample: time, velocity error, attitude error, and (for the
/// offset filter) placement errors. Baseline rows carry NaN placeholders in
/// the placement columns.
pub fn write_trial_csv<W: Write>(out: &mut W, r: &TrialResult) -> std::io::Result<()> {
    writeln!(out, "t,vex,vey,vez,roll,pitch,yaw,drx,dry,drz,dpx,dpy,dpz")?;
    let with_offsets = !r.rot_off_err.is_empty();
    for k in 0..r.t.len() {
        let (dr, dp) = if with_offsets {
            (r.rot_off_err[k], r.pos_off_err[k])
        } else {
            (Vec3::repeat(f64::NAN), Vec3::repeat(f64::NAN))
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t[k],
            r.vel_err[k].x,
            r.vel_err[k].y,
            r.vel_err[k].z,
            r.att_err[k].x,
            r.att_err[k].y,
            r.att_err[k].z,
            dr.x,
            dr.y,
            dr.z,
            dp.x,
            dp.y,
            dp.z
        )?;
    }
    Ok(())
}
