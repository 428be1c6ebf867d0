//! Command-line driver: synthesize sensor streams, replay them through the
//! filters, and run the Monte Carlo comparison study.
//!
//! All outputs are computed in memory and written only after every check
//! has passed, so a failing run leaves no partial files behind. Runs are
//! deterministic: the same configuration and seed produce byte-identical
//! outputs.

mod config;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use inekf::baseline::{contact_from_measurement, BaselineBelief, BaselineState};
use inekf::harness::{
    experiment_summary, replay_baseline, replay_proposed, run_experiment, ExperimentConfig,
    FilterKind, FilterMetrics, InitialUncertainty, TrialResult, DIVERGENCE_NORM,
};
use inekf::lie::{so3_log, Mat3, Vec3};
use inekf::sim::{generate_trajectory, read_sensors_csv, synthesize_imu, synthesize_leg_odometry};
use inekf::{FilterBelief, GroupState, ImuSample, LegOdometryMeasurement};

use config::{load_file, resolve, FileConfig, FlagOverrides, Resolved};

#[derive(Debug, Parser)]
#[command(
    name = "inekf-cli",
    version,
    about = "Squat-motion state estimation with online IMU placement calibration"
)]
struct Cli {
    /// TOML configuration file; individual flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for sensor noise and trial sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of Monte Carlo trials.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Which filter(s) to run.
    #[arg(long, global = true, value_enum)]
    filter: Option<FilterChoice>,
    /// Output directory (created on success).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// True placement rotation, degrees about +y.
    #[arg(long, global = true)]
    offset_deg: Option<f64>,
    /// True placement translation magnitude, m.
    #[arg(long, global = true)]
    offset_m: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FilterChoice {
    Proposed,
    Baseline,
    Both,
}

impl FilterChoice {
    fn kinds(self) -> Vec<FilterKind> {
        match self {
            FilterChoice::Proposed => vec![FilterKind::Proposed],
            FilterChoice::Baseline => vec![FilterKind::Baseline],
            FilterChoice::Both => vec![FilterKind::Proposed, FilterKind::Baseline],
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize noisy sensor streams and write sensors_<seed>.csv.
    Simulate {
        /// Total motion duration, s; scales the configured stand/squat split.
        #[arg(long)]
        duration: Option<f64>,
        /// Sample rate, Hz.
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Replay a sensors CSV through the filter(s) from a cold start and
    /// write per-step state estimates.
    Filter {
        /// Sensors CSV, as written by `simulate`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the Monte Carlo study; write summary.json and per-trial CSVs.
    Experiment,
    /// Run both filters and print their study statistics side by side.
    Compare,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => load_file(path)?,
        None => FileConfig::default(),
    };
    let flags = FlagOverrides {
        trials: cli.trials,
        seed: cli.seed,
        out_dir: cli.out_dir.clone(),
        offset_deg: cli.offset_deg,
        offset_m: cli.offset_m,
    };
    let resolved = resolve(file, flags)?;
    let choice = cli.filter.unwrap_or(FilterChoice::Both);
    match cli.command {
        Command::Simulate { duration, rate } => simulate(&resolved, duration, rate),
        Command::Filter { input } => filter_replay(&resolved, &input, choice),
        Command::Experiment => experiment(&resolved, choice),
        Command::Compare => compare(&resolved),
    }
}

/// One output file, fully rendered before anything touches the disk.
struct OutFile {
    name: String,
    content: String,
}

fn write_all(out_dir: &PathBuf, files: &[OutFile]) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;
    for f in files {
        let path = out_dir.join(&f.name);
        std::fs::write(&path, &f.content)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

/// Nine significant digits, exponent form; the fixed width keeps identical
/// runs byte-identical.
fn fmt9(x: f64) -> String {
    format!("{x:.8e}")
}

fn push_row(out: &mut String, values: &[f64]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        out.push_str(&fmt9(*v));
        first = false;
    }
    out.push('\n');
}

fn sensors_csv(imu: &[ImuSample], odo: &[LegOdometryMeasurement]) -> String {
    let mut s = String::from("t,ax,ay,az,gx,gy,gz,dmx,dmy,dmz,ddmx,ddmy,ddmz\n");
    for (i, o) in imu.iter().zip(odo) {
        push_row(
            &mut s,
            &[
                i.t, i.accel.x, i.accel.y, i.accel.z, i.gyro.x, i.gyro.y, i.gyro.z, o.pos.x,
                o.pos.y, o.pos.z, o.vel.x, o.vel.y, o.vel.z,
            ],
        );
    }
    s
}

fn trial_csv(r: &TrialResult) -> String {
    let mut s = String::from("t,vex,vey,vez,roll,pitch,yaw,drx,dry,drz,dpx,dpy,dpz\n");
    let with_offsets = !r.rot_off_err.is_empty();
    for k in 0..r.t.len() {
        let (dr, dp) = if with_offsets {
            (r.rot_off_err[k], r.pos_off_err[k])
        } else {
            (Vec3::repeat(f64::NAN), Vec3::repeat(f64::NAN))
        };
        push_row(
            &mut s,
            &[
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
                dp.z,
            ],
        );
    }
    s
}

fn attitude_vector(rot: &Mat3, step: usize) -> Result<Vec3> {
    so3_log(rot).map_err(|e| anyhow!("attitude log failed at step {step}: {e}"))
}

fn proposed_estimates_csv(rows: &[(f64, GroupState)]) -> Result<String> {
    let mut s = String::from("t,px,py,pz,vx,vy,vz,rx,ry,rz,drx,dry,drz,dpx,dpy,dpz\n");
    for (k, (t, x)) in rows.iter().enumerate() {
        let r = attitude_vector(&x.rot, k)?;
        let dr = attitude_vector(&x.rot_off, k)?;
        push_row(
            &mut s,
            &[
                *t, x.pos.x, x.pos.y, x.pos.z, x.vel.x, x.vel.y, x.vel.z, r.x, r.y, r.z, dr.x,
                dr.y, dr.z, x.pos_off.x, x.pos_off.y, x.pos_off.z,
            ],
        );
    }
    Ok(s)
}

fn baseline_estimates_csv(rows: &[(f64, BaselineState)]) -> Result<String> {
    let mut s = String::from("t,px,py,pz,vx,vy,vz,rx,ry,rz,cx,cy,cz\n");
    for (k, (t, x)) in rows.iter().enumerate() {
        let r = attitude_vector(&x.rot, k)?;
        push_row(
            &mut s,
            &[
                *t, x.pos.x, x.pos.y, x.pos.z, x.vel.x, x.vel.y, x.vel.z, r.x, r.y, r.z,
                x.contact.x, x.contact.y, x.contact.z,
            ],
        );
    }
    Ok(s)
}

/// Locates the first clearly broken row of a diverged trial for the abort
/// diagnostic.
fn first_bad_step(r: &TrialResult) -> usize {
    let bad = |v: &Vec3| !v.iter().all(|x| x.is_finite()) || v.norm() > DIVERGENCE_NORM;
    r.vel_err
        .iter()
        .zip(&r.att_err)
        .position(|(v, a)| bad(v) || bad(a))
        .unwrap_or(r.t.len().saturating_sub(1))
}

fn simulate(resolved: &Resolved, duration: Option<f64>, rate: Option<f64>) -> Result<()> {
    let cfg = &resolved.experiment;
    let mut profile = cfg.profile;
    if let Some(r) = rate {
        profile.sample_rate = r;
    }
    if let Some(d) = duration {
        if !(d > 0.0 && d.is_finite()) {
            bail!("duration must be positive, got {d}");
        }
        let scale = d / profile.total_duration();
        profile.stand_duration *= scale;
        profile.squat_duration *= scale;
    }
    profile.validate().context("invalid motion profile")?;
    let traj = generate_trajectory(&profile)?;
    let imu = synthesize_imu(&traj, &cfg.sim_noise, cfg.seed);
    let odo = synthesize_leg_odometry(&traj, &cfg.offsets, &cfg.sim_noise, cfg.seed.wrapping_add(1));
    // The grid is sampled at duration * rate intervals; the terminal
    // endpoint belongs to the next interval and is dropped, so one second
    // at 100 Hz yields exactly 100 rows.
    let rows = traj.len() - 1;
    let files = [OutFile {
        name: format!("sensors_{}.csv", cfg.seed),
        content: sensors_csv(&imu[..rows], &odo[..rows]),
    }];
    write_all(&resolved.out_dir, &files)?;
    println!(
        "wrote {} ({} rows, {:.1} s at {} Hz)",
        resolved.out_dir.join(&files[0].name).display(),
        rows,
        profile.total_duration(),
        profile.sample_rate
    );
    Ok(())
}

fn filter_replay(resolved: &Resolved, input: &PathBuf, choice: FilterChoice) -> Result<()> {
    let cfg = &resolved.experiment;
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("cannot read sensors file {}", input.display()))?;
    let (imu, odo) =
        read_sensors_csv(&text).map_err(|e| anyhow!("{}: {e}", input.display()))?;
    if imu.len() < 2 {
        bail!("sensors file has {} samples; need at least 2", imu.len());
    }
    let dt = imu[1].t - imu[0].t;
    if !(dt > 0.0 && dt.is_finite()) {
        bail!("non-increasing timestamps at the head of {}", input.display());
    }
    let unc = InitialUncertainty::default();
    let mut files = Vec::new();
    for kind in choice.kinds() {
        match kind {
            FilterKind::Proposed => {
                let init = FilterBelief {
                    state: GroupState::identity(),
                    cov: unc.proposed_cov(),
                };
                let rows = replay_proposed(&imu, &odo, init, &cfg.proposed_noise, dt)?;
                files.push(OutFile {
                    name: "estimates_proposed.csv".into(),
                    content: proposed_estimates_csv(&rows)?,
                });
            }
            FilterKind::Baseline => {
                let rot = Mat3::identity();
                let pos = Vec3::zeros();
                let init = BaselineBelief {
                    state: BaselineState {
                        rot,
                        vel: Vec3::zeros(),
                        pos,
                        contact: contact_from_measurement(&rot, &pos, &odo[0].pos),
                    },
                    cov: unc.baseline_cov(),
                };
                let rows = replay_baseline(&imu, &odo, init, &cfg.baseline_noise, dt)?;
                files.push(OutFile {
                    name: "estimates_baseline.csv".into(),
                    content: baseline_estimates_csv(&rows)?,
                });
            }
        }
    }
    write_all(&resolved.out_dir, &files)?;
    for f in &files {
        println!("wrote {}", resolved.out_dir.join(&f.name).display());
    }
    Ok(())
}

fn run_study(cfg: &ExperimentConfig, kinds: &[FilterKind]) -> Result<Vec<(FilterKind, Vec<TrialResult>, FilterMetrics)>> {
    let mut out = Vec::new();
    for &kind in kinds {
        let outcome = run_experiment(cfg, kind)?;
        if let Some((k, r)) = outcome.results.iter().enumerate().find(|(_, r)| r.diverged) {
            let step = first_bad_step(r);
            bail!(
                "{kind} filter diverged in trial {k} near step {step} (t = {:.2} s); \
                 no outputs were written",
                r.t[step]
            );
        }
        out.push((kind, outcome.results, outcome.metrics));
    }
    Ok(out)
}

fn experiment(resolved: &Resolved, choice: FilterChoice) -> Result<()> {
    let cfg = &resolved.experiment;
    let studies = run_study(cfg, &choice.kinds())?;
    let metrics: Vec<FilterMetrics> = studies.iter().map(|(_, _, m)| m.clone()).collect();
    let summary = experiment_summary(cfg, &metrics);
    let mut files = vec![OutFile {
        name: "summary.json".into(),
        content: serde_json::to_string_pretty(&summary).context("summary serialization")? + "\n",
    }];
    let traj = generate_trajectory(&cfg.profile)?;
    files.push(OutFile {
        name: format!("sensors_{}.csv", cfg.seed),
        content: sensors_csv(
            &synthesize_imu(&traj, &cfg.sim_noise, cfg.seed),
            &synthesize_leg_odometry(&traj, &cfg.offsets, &cfg.sim_noise, cfg.seed.wrapping_add(1)),
        ),
    });
    for (kind, results, _) in &studies {
        for (k, r) in results.iter().enumerate() {
            files.push(OutFile {
                name: format!("trial_{k}_{kind}.csv"),
                content: trial_csv(r),
            });
        }
    }
    write_all(&resolved.out_dir, &files)?;
    println!(
        "wrote {} files to {} (config {})",
        files.len(),
        resolved.out_dir.display(),
        &summary.config_hash[..12]
    );
    if let Some(s) = summary.speedup_ratio {
        println!("median convergence speedup: {s:.2}x");
    }
    for f in &summary.filters {
        println!(
            "{}: {}/{} converged, median {} s, final velocity RMSE {:.4} m/s",
            f.filter,
            f.converged_trials,
            f.trials,
            f.median_convergence_s
                .map_or("-".into(), |m| format!("{m:.3}")),
            f.final_vel_rmse_m_s
        );
    }
    Ok(())
}

fn compare(resolved: &Resolved) -> Result<()> {
    let cfg = &resolved.experiment;
    let studies = run_study(cfg, &[FilterKind::Proposed, FilterKind::Baseline])?;
    let metrics: Vec<FilterMetrics> = studies.iter().map(|(_, _, m)| m.clone()).collect();
    let summary = experiment_summary(cfg, &metrics);
    let files = [OutFile {
        name: "summary.json".into(),
        content: serde_json::to_string_pretty(&summary).context("summary serialization")? + "\n",
    }];
    write_all(&resolved.out_dir, &files)?;

    let p = &metrics[0];
    let b = &metrics[1];
    let s = |x: f64| {
        if x.is_finite() {
            format!("{x:.3}")
        } else {
            "never".into()
        }
    };
    let mut table = String::new();
    let mut row = |label: &str, a: String, c: String| {
        let _ = writeln!(table, "{label:<28} {a:>14} {c:>14}");
    };
    row("metric", "proposed".into(), "baseline".into());
    row("trials", p.trials.to_string(), b.trials.to_string());
    row("converged", p.converged.to_string(), b.converged.to_string());
    row(
        "median convergence [s]",
        s(p.median_convergence),
        s(b.median_convergence),
    );
    row(
        "IQR convergence [s]",
        format!("{}..{}", s(p.iqr_convergence.0), s(p.iqr_convergence.1)),
        format!("{}..{}", s(b.iqr_convergence.0), s(b.iqr_convergence.1)),
    );
    row(
        "final vel RMSE [m/s]",
        format!("{:.4}", p.final_vel_rmse),
        format!("{:.4}", b.final_vel_rmse),
    );
    row(
        "final roll RMSE [deg]",
        format!("{:.3}", p.final_roll_rmse.to_degrees()),
        format!("{:.3}", b.final_roll_rmse.to_degrees()),
    );
    row(
        "final pitch RMSE [deg]",
        format!("{:.3}", p.final_pitch_rmse.to_degrees()),
        format!("{:.3}", b.final_pitch_rmse.to_degrees()),
    );
    row(
        "final yaw RMSE [deg]",
        format!("{:.3}", p.final_yaw_rmse.to_degrees()),
        format!("{:.3}", b.final_yaw_rmse.to_degrees()),
    );
    row(
        "placement rot RMSE [deg]",
        format!("{:.3}", p.final_rot_off_rmse.to_degrees()),
        "-".into(),
    );
    row(
        "placement pos RMSE x [m]",
        format!("{:.4}", p.final_pos_off_rmse[0]),
        "-".into(),
    );
    print!("{table}");
    if let Some(s) = summary.speedup_ratio {
        println!("speedup ratio (baseline / proposed median): {s:.2}x");
    }
    println!(
        "wrote {}",
        resolved.out_dir.join("summary.json").display()
    );
    Ok(())
}
