//! Scenario files (TOML).
//!
//! ```toml
//! name = "trot"
//! duration = 10.0        # s
//! dt = 0.001             # s
//! seed = 1
//!
//! [robot]                # leg geometry, hip layout, body and swing height
//! [gait]                 # kind = "trot" | "walk" | "pronk" | "bound" | "stand"
//! [commands]             # drive = [[t, v]], step = [[t, vx, vy]], yaw_rate = [[t, w]], ramp
//! [[terrain.plateau]]    # x_start, x_end, height
//! [noise]                # sigmas, wheel_encoder_ppr, encoder_window, [[noise.slip]]
//! [trust]                # window, k_plus, k_minus, kappa, mode
//! [filter]               # model, blend_untrusted, p0_scale, max_dt
//! [filter.noise]         # q_p, q_pdot, q_dp, q_dpdot, q_pcp, r_pcp, r_pdotk, r_pdotw
//! [metrics]              # skip
//! [check.max]            # metric = bound, enforced by `run --check`
//! [check.primary.max]    # compare: bounds on the primary run
//! [check.reference.min]  # compare: bounds on the reference run
//! [check.ratio.min]      # compare: bounds on reference / primary
//! [compare]              # contrast = "mode" | "trust"
//! ```
//! Every section is optional and unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;
use wheelleg::estimator::{ContactModel, EstimatorConfig, NoiseParams, TrustMode};
use wheelleg::gait::{GaitKind, GaitSchedule};
use wheelleg::kinematics::{IkOptions, KneeBranch, LegGeometry, QuadrupedModel, Side};
use wheelleg::sim::{Commands, MetricsReport, NoiseModel, Plateau, Profile, Scenario, SlipEvent, Terrain};
use wheelleg::trust::TrustParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Contrast {
    /// Wheel-aware against the point-foot baseline.
    #[default]
    Mode,
    /// Trust enabled against trust disabled.
    Trust,
}

impl Contrast {
    pub fn name(self) -> &'static str {
        match self {
            Contrast::Mode => "mode",
            Contrast::Trust => "trust",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bounds {
    pub max: BTreeMap<String, f64>,
    pub min: BTreeMap<String, f64>,
}

impl Bounds {
    pub fn is_empty(&self) -> bool {
        self.max.is_empty() && self.min.is_empty()
    }

    fn keys(&self) -> impl Iterator<Item = &String> {
        self.max.keys().chain(self.min.keys())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Checks {
    pub max: BTreeMap<String, f64>,
    pub min: BTreeMap<String, f64>,
    pub primary: Bounds,
    pub reference: Bounds,
    pub ratio: Bounds,
}

impl Checks {
    pub fn run_bounds(&self) -> Bounds {
        Bounds { max: self.max.clone(), min: self.min.clone() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RobotSection {
    l1: f64,
    l2: f64,
    l3: f64,
    a_end: f64,
    b_end: f64,
    hip_x: f64,
    hip_y: f64,
    body_height: f64,
    swing_height: f64,
    initial_yaw: f64,
    knee: KneeBranch,
    singularity_ratio: f64,
}

impl Default for RobotSection {
    fn default() -> Self {
        let g = LegGeometry::default();
        let ik = IkOptions::default();
        let s = Scenario::default();
        Self {
            l1: g.l1,
            l2: g.l2,
            l3: g.l3,
            a_end: g.a_end,
            b_end: g.b_end,
            hip_x: 0.19,
            hip_y: 0.049,
            body_height: s.body_height,
            swing_height: s.swing_height,
            initial_yaw: 0.0,
            knee: ik.branch,
            singularity_ratio: ik.singularity_ratio,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaitSection {
    #[serde(default = "default_gait")]
    kind: GaitKind,
    period: Option<f64>,
    duty: Option<f64>,
    offsets: Option<[f64; 4]>,
}

fn default_gait() -> GaitKind {
    GaitKind::Stand
}

impl Default for GaitSection {
    fn default() -> Self {
        Self { kind: GaitKind::Stand, period: None, duty: None, offsets: None }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CommandsSection {
    ramp: f64,
    drive: Vec<[f64; 2]>,
    step: Vec<[f64; 3]>,
    yaw_rate: Vec<[f64; 2]>,
}

impl Default for CommandsSection {
    fn default() -> Self {
        Self { ramp: 0.5, drive: Vec::new(), step: Vec::new(), yaw_rate: Vec::new() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlateauEntry {
    x_start: f64,
    x_end: f64,
    height: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TerrainSection {
    plateau: Vec<PlateauEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SlipEntry {
    t: f64,
    duration: f64,
    leg: usize,
    velocity: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct NoiseSection {
    sigma_accel: f64,
    sigma_gyro: f64,
    sigma_joint_pos: f64,
    sigma_joint_vel: f64,
    wheel_encoder_ppr: Option<u32>,
    encoder_window: usize,
    slip: Vec<SlipEntry>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let n = NoiseModel::default();
        Self {
            sigma_accel: n.sigma_accel,
            sigma_gyro: n.sigma_gyro,
            sigma_joint_pos: n.sigma_joint_pos,
            sigma_joint_vel: n.sigma_joint_vel,
            wheel_encoder_ppr: n.wheel_encoder_ppr,
            encoder_window: n.encoder_window,
            slip: Vec::new(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrustSection {
    window: f64,
    k_plus: f64,
    k_minus: f64,
    kappa: f64,
    mode: TrustMode,
}

impl Default for TrustSection {
    fn default() -> Self {
        let p = TrustParams::default();
        Self { window: p.window, k_plus: p.k_plus, k_minus: p.k_minus, kappa: p.kappa, mode: TrustMode::Full }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FilterSection {
    model: ContactModel,
    blend_untrusted: bool,
    p0_scale: f64,
    max_dt: f64,
    noise: NoiseParams,
}

impl Default for FilterSection {
    fn default() -> Self {
        let c = EstimatorConfig::default();
        Self { model: c.model, blend_untrusted: c.blend_untrusted, p0_scale: c.p0_scale, max_dt: c.max_dt, noise: c.noise }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct MetricsSection {
    skip: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { skip: Scenario::default().metrics_skip }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CompareSection {
    contrast: Contrast,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    name: Option<String>,
    #[serde(default = "default_duration")]
    duration: f64,
    #[serde(default = "default_dt")]
    dt: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    robot: RobotSection,
    #[serde(default)]
    gait: GaitSection,
    #[serde(default)]
    commands: CommandsSection,
    #[serde(default)]
    terrain: TerrainSection,
    #[serde(default)]
    noise: NoiseSection,
    #[serde(default)]
    trust: TrustSection,
    #[serde(default)]
    filter: FilterSection,
    #[serde(default)]
    metrics: MetricsSection,
    #[serde(default)]
    check: Checks,
    #[serde(default)]
    compare: CompareSection,
}

fn default_duration() -> f64 {
    Scenario::default().duration
}

fn default_dt() -> f64 {
    Scenario::default().dt
}

/// A parsed scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSetup {
    pub scenario: Scenario,
    pub checks: Checks,
    pub contrast: Contrast,
}

/// Keys accepted in `[check]` tables.
pub fn metric_names() -> Vec<String> {
    let mut names: Vec<String> = MetricsReport::default().to_pairs().into_iter().map(|(k, _)| k).collect();
    names.extend(HEALTH_KEYS.iter().map(|k| k.to_string()));
    names
}

pub const HEALTH_KEYS: [&str; 5] =
    ["filter_steps", "psd_violations", "max_asymmetry", "min_eigenvalue", "max_gait_identity_error"];

fn invalid<E: std::fmt::Display>(e: E) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

fn profile(points: Vec<(f64, f64)>, ramp: f64) -> Result<Profile, ConfigError> {
    if points.is_empty() {
        Ok(Profile::constant(0.0))
    } else {
        Profile::new(points, ramp).map_err(invalid)
    }
}

impl ScenarioFile {
    fn into_setup(self, fallback_name: &str) -> Result<RunSetup, ConfigError> {
        let r = &self.robot;
        let base = LegGeometry::new(r.l1, r.l2, r.l3, r.a_end, r.b_end, Side::Left).map_err(invalid)?;
        if !(r.singularity_ratio > 0.0 && r.singularity_ratio <= 1.0) {
            return Err(ConfigError::Invalid(format!("robot.singularity_ratio {} outside (0, 1]", r.singularity_ratio)));
        }
        let ik = IkOptions { branch: r.knee, singularity_ratio: r.singularity_ratio };
        let robot = QuadrupedModel::symmetric(base, r.hip_x, r.hip_y, ik).map_err(invalid)?;

        let preset = GaitSchedule::preset(self.gait.kind);
        let gait = GaitSchedule {
            kind: self.gait.kind,
            period: self.gait.period.unwrap_or(preset.period),
            duty: self.gait.duty.unwrap_or(preset.duty),
            offsets: self.gait.offsets.unwrap_or(preset.offsets),
        };
        gait.validate().map_err(|e| ConfigError::Invalid(format!("gait: {e}")))?;

        let c = &self.commands;
        let commands = Commands {
            drive: profile(c.drive.iter().map(|p| (p[0], p[1])).collect(), c.ramp)?,
            step_x: profile(c.step.iter().map(|p| (p[0], p[1])).collect(), c.ramp)?,
            step_y: profile(c.step.iter().map(|p| (p[0], p[2])).collect(), c.ramp)?,
            yaw_rate: profile(c.yaw_rate.iter().map(|p| (p[0], p[1])).collect(), c.ramp)?,
        };

        let terrain = Terrain::new(
            self.terrain.plateau.iter().map(|p| Plateau { x_start: p.x_start, x_end: p.x_end, height: p.height }).collect(),
        )
        .map_err(invalid)?;

        let n = &self.noise;
        let noise = NoiseModel {
            sigma_accel: n.sigma_accel,
            sigma_gyro: n.sigma_gyro,
            sigma_joint_pos: n.sigma_joint_pos,
            sigma_joint_vel: n.sigma_joint_vel,
            wheel_encoder_ppr: n.wheel_encoder_ppr,
            encoder_window: n.encoder_window,
            slip_events: n
                .slip
                .iter()
                .map(|s| SlipEvent { t: s.t, duration: s.duration, leg: s.leg, velocity: s.velocity })
                .collect(),
        };

        let trust = TrustParams {
            window: self.trust.window,
            k_plus: self.trust.k_plus,
            k_minus: self.trust.k_minus,
            kappa: self.trust.kappa,
        };
        trust.validate().map_err(|e| ConfigError::Invalid(format!("trust: {e}")))?;
        self.filter.noise.validate().map_err(|e| ConfigError::Invalid(format!("filter.noise: {e}")))?;
        let estimator = EstimatorConfig {
            noise: self.filter.noise,
            trust,
            trust_mode: self.trust.mode,
            model: self.filter.model,
            blend_untrusted: self.filter.blend_untrusted,
            p0_scale: self.filter.p0_scale,
            max_dt: self.filter.max_dt,
        };
        if !(estimator.p0_scale > 0.0) {
            return Err(ConfigError::Invalid(format!("filter.p0_scale must be positive, got {}", estimator.p0_scale)));
        }

        let scenario = Scenario {
            name: self.name.unwrap_or_else(|| fallback_name.to_string()),
            duration: self.duration,
            dt: self.dt,
            seed: self.seed,
            robot,
            body_height: r.body_height,
            swing_height: r.swing_height,
            initial_yaw: r.initial_yaw,
            gait,
            commands,
            terrain,
            noise,
            estimator,
            metrics_skip: self.metrics.skip,
        };
        scenario.validate().map_err(invalid)?;

        let known = metric_names();
        let c = &self.check;
        let all = c.max.keys().chain(c.min.keys()).chain(c.primary.keys()).chain(c.reference.keys()).chain(c.ratio.keys());
        for key in all {
            if !known.contains(key) {
                return Err(ConfigError::Invalid(format!("unknown metric {key:?} in [check]")));
            }
        }
        Ok(RunSetup { scenario, checks: self.check, contrast: self.compare.contrast })
    }
}

pub fn parse_table(text: &str) -> Result<toml::Table, ConfigError> {
    text.parse::<toml::Table>().map_err(|e| ConfigError::Parse(e.to_string()))
}

pub fn from_table(table: toml::Table, fallback_name: &str) -> Result<RunSetup, ConfigError> {
    let file: ScenarioFile = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    file.into_setup(fallback_name)
}

pub fn parse_scenario(text: &str, fallback_name: &str) -> Result<RunSetup, ConfigError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    file.into_setup(fallback_name)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "scenario".to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn read_text(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.display().to_string(), source })
}

pub fn load_scenario(path: &Path) -> Result<RunSetup, ConfigError> {
    let text = read_text(path)?;
    parse_scenario(&text, &stem(path)).map_err(|e| match e {
        ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn load_table(path: &Path) -> Result<(toml::Table, String), ConfigError> {
    let text = read_text(path)?;
    let table = parse_table(&text).map_err(|e| match e {
        ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    Ok((table, stem(path)))
}

/// Sets a dotted key such as `trust.window`, creating missing tables.
pub fn set_dotted(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Invalid(format!("malformed parameter path {path:?}")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("{path:?}: {p:?} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parses a command-line value as a TOML literal, falling back to a string.
pub fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
