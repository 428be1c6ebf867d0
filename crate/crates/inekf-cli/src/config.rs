//! Configuration loading: a TOML file supplies defaults, command-line flags
//! override individual values, and everything is validated before any file
//! is touched.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use inekf::harness::ExperimentConfig;
use inekf::lie::{so3_exp, Vec3};
use inekf::sim::{FrameOffsets, MotionProfile};
use inekf::NoiseSpec;

/// Default placement used when only magnitudes are given: rotation about +y,
/// translation along the unit direction of the default offset vector.
const OFFSET_ROT_AXIS: [f64; 3] = [0.0, 1.0, 0.0];
const OFFSET_POS_DIR: [f64; 3] = [2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0];

/// File-level configuration; every field is optional so a config file can
/// override any subset of the defaults. Unknown keys are rejected.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// Placement rotation magnitude, degrees about +y.
    pub offset_deg: Option<f64>,
    /// Placement translation magnitude, m along the default direction.
    pub offset_m: Option<f64>,
    pub profile: Option<MotionProfile>,
    /// Noise injected into the synthesized sensors.
    pub sim_noise: Option<NoiseSpec>,
    /// Noise assumed by the offset filter.
    pub proposed_noise: Option<NoiseSpec>,
    /// Noise assumed by the baseline filter.
    pub baseline_noise: Option<NoiseSpec>,
    pub init_vel_range: Option<f64>,
    pub init_att_range_deg: Option<f64>,
    pub conv_threshold: Option<f64>,
    pub conv_hold: Option<f64>,
}

/// Flag-level overrides, applied on top of the file values.
#[derive(Debug, Default)]
pub struct FlagOverrides {
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub offset_deg: Option<f64>,
    pub offset_m: Option<f64>,
}

/// Fully merged and validated settings.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub experiment: ExperimentConfig,
    pub out_dir: PathBuf,
}

pub fn load_file(path: &PathBuf) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("cannot parse config file {}", path.display()))
}

fn offsets_from_magnitudes(deg: f64, m: f64) -> FrameOffsets {
    let axis = Vec3::from_column_slice(&OFFSET_ROT_AXIS);
    let dir = Vec3::from_column_slice(&OFFSET_POS_DIR);
    FrameOffsets {
        rot: so3_exp(&(deg.to_radians() * axis)),
        pos: m * dir,
    }
}

fn check_noise(name: &str, n: &NoiseSpec) -> Result<()> {
    if !n.is_valid() {
        bail!("{name} has a negative or non-finite standard deviation");
    }
    Ok(())
}

/// Merges defaults, file values, and flags; validates the result.
pub fn resolve(file: FileConfig, flags: FlagOverrides) -> Result<Resolved> {
    let mut cfg = ExperimentConfig::default();
    if let Some(t) = file.trials {
        cfg.trials = t;
    }
    if let Some(s) = file.seed {
        cfg.seed = s;
    }
    if let Some(p) = file.profile {
        cfg.profile = p;
    }
    if let Some(n) = file.sim_noise {
        cfg.sim_noise = n;
    }
    if let Some(n) = file.proposed_noise {
        cfg.proposed_noise = n;
    }
    if let Some(n) = file.baseline_noise {
        cfg.baseline_noise = n;
    }
    if let Some(v) = file.init_vel_range {
        cfg.init_vel_range = v;
    }
    if let Some(deg) = file.init_att_range_deg {
        cfg.init_att_range = deg.to_radians();
    }
    if let Some(c) = file.conv_threshold {
        cfg.conv_threshold = c;
    }
    if let Some(h) = file.conv_hold {
        cfg.conv_hold = h;
    }
    if let Some(t) = flags.trials {
        cfg.trials = t;
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }

    let deg = flags.offset_deg.or(file.offset_deg);
    let m = flags.offset_m.or(file.offset_m);
    if deg.is_some() || m.is_some() {
        let deg = deg.unwrap_or(45.0);
        let m = m.unwrap_or(0.12);
        if !deg.is_finite() || !m.is_finite() {
            bail!("offset magnitudes must be finite, got {deg} deg / {m} m");
        }
        cfg.offsets = offsets_from_magnitudes(deg, m);
    }

    if cfg.trials == 0 {
        bail!("trials must be at least 1");
    }
    cfg.profile
        .validate()
        .context("invalid motion profile")?;
    check_noise("sim_noise", &cfg.sim_noise)?;
    check_noise("proposed_noise", &cfg.proposed_noise)?;
    check_noise("baseline_noise", &cfg.baseline_noise)?;
    if !(cfg.conv_threshold > 0.0 && cfg.conv_threshold.is_finite()) {
        bail!("conv_threshold must be positive, got {}", cfg.conv_threshold);
    }
    if !(cfg.conv_hold >= 0.0 && cfg.conv_hold.is_finite()) {
        bail!("conv_hold must be non-negative, got {}", cfg.conv_hold);
    }
    if !(cfg.init_vel_range >= 0.0 && cfg.init_att_range >= 0.0) {
        bail!("initial error ranges must be non-negative");
    }

    let out_dir = flags
        .out_dir
        .or(file.out_dir)
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Resolved {
        experiment: cfg,
        out_dir,
    })
}
