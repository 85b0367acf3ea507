//! Synthetic kinematic oracle.
//!
//! The body moves level at constant height, driven by smooth command
//! profiles. Stance wheels roll with the driving displacement; swing feet
//! follow quintic arcs between footholds. Joint streams come from inverse
//! kinematics of those foot paths, so every sensor stream is consistent with
//! the leg model by construction.

mod metrics;
mod oracle;

pub use metrics::{metrics, MetricsReport};
pub use oracle::{generate, SimOutput, TruthRecord};

use thiserror::Error;

use crate::estimator::{Estimate, Estimator, EstimatorConfig, EstimatorError, FilterHealth, InitialBody, SensorFrame};
use crate::gait::{GaitSchedule, NUM_LEGS};
use crate::kinematics::{KinematicsError, QuadrupedModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("inverse kinematics failed for leg {leg} at t={t}: {source}")]
    IkFailure { t: f64, leg: usize, source: KinematicsError },
    #[error("{truth} truth records but {estimates} estimates")]
    LengthMismatch { truth: usize, estimates: usize },
    #[error("timestamps differ at record {index}")]
    TimestampMismatch { index: usize },
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

fn smoothstep_rate(s: f64) -> f64 {
    if (0.0..=1.0).contains(&s) {
        30.0 * s * s * (1.0 - s) * (1.0 - s)
    } else {
        0.0
    }
}

/// ∫₀ˢ smoothstep.
fn smoothstep_integral(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s < 1.0 {
        s.powi(4) * (2.5 - 3.0 * s + s * s)
    } else {
        s - 0.5
    }
}

/// Scalar command held between breakpoints, blended into each new value over
/// `ramp` seconds with a quintic smoothstep.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    points: Vec<(f64, f64)>,
    ramp: f64,
}

impl Profile {
    pub fn constant(value: f64) -> Self {
        Self { points: vec![(0.0, value)], ramp: 0.0 }
    }

    /// `points` are `(t, value)` pairs with strictly increasing `t`. The first
    /// value holds for all earlier times.
    pub fn new(points: Vec<(f64, f64)>, ramp: f64) -> Result<Self, SimError> {
        if points.is_empty() {
            return Err(SimError::InvalidScenario("profile needs at least one point".into()));
        }
        if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(SimError::InvalidScenario("profile points must be finite".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(SimError::InvalidScenario("profile breakpoints must strictly increase".into()));
        }
        if points.len() > 1 && !(ramp > 0.0 && ramp.is_finite()) {
            return Err(SimError::InvalidScenario(format!("profile ramp must be positive, got {ramp}")));
        }
        Ok(Self { points, ramp })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn ramp(&self) -> f64 {
        self.ramp
    }

    fn steps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.windows(2).map(|w| (w[1].0, w[1].1 - w[0].1))
    }

    pub fn value(&self, t: f64) -> f64 {
        self.points[0].1 + self.steps().map(|(tk, d)| d * smoothstep((t - tk) / self.ramp)).sum::<f64>()
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.steps().map(|(tk, d)| d / self.ramp * smoothstep_rate((t - tk) / self.ramp)).sum()
    }

    /// ∫₀ᵗ value.
    pub fn integral(&self, t: f64) -> f64 {
        let ramped: f64 = self
            .steps()
            .map(|(tk, d)| {
                d * self.ramp * (smoothstep_integral((t - tk) / self.ramp) - smoothstep_integral(-tk / self.ramp))
            })
            .sum();
        self.points[0].1 * t + ramped
    }

    pub fn is_zero(&self) -> bool {
        self.points.iter().all(|(_, v)| *v == 0.0)
    }
}

/// Body-frame command profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct Commands {
    /// Wheel driving speed along body x.
    pub drive: Profile,
    /// Stepping velocity along body x and y.
    pub step_x: Profile,
    pub step_y: Profile,
    pub yaw_rate: Profile,
}

impl Default for Commands {
    fn default() -> Self {
        Self {
            drive: Profile::constant(0.0),
            step_x: Profile::constant(0.0),
            step_y: Profile::constant(0.0),
            yaw_rate: Profile::constant(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plateau {
    pub x_start: f64,
    pub x_end: f64,
    pub height: f64,
}

/// Flat ground at z=0 with axis-aligned plateaus along world x.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Terrain {
    steps: Vec<Plateau>,
}

impl Terrain {
    pub fn flat() -> Self {
        Self::default()
    }

    pub fn new(mut steps: Vec<Plateau>) -> Result<Self, SimError> {
        for s in &steps {
            if !(s.x_start.is_finite() && s.x_end.is_finite() && s.height.is_finite()) || s.x_start >= s.x_end {
                return Err(SimError::InvalidScenario(format!(
                    "plateau [{}, {}] height {} is malformed",
                    s.x_start, s.x_end, s.height
                )));
            }
        }
        steps.sort_by(|a, b| a.x_start.total_cmp(&b.x_start));
        if steps.windows(2).any(|w| w[1].x_start < w[0].x_end) {
            return Err(SimError::InvalidScenario("terrain plateaus overlap".into()));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[Plateau] {
        &self.steps
    }

    pub fn height(&self, x: f64) -> f64 {
        self.steps.iter().find(|s| x >= s.x_start && x < s.x_end).map_or(0.0, |s| s.height)
    }
}

/// A stance foot skidding along the body heading at `velocity` for
/// `duration` seconds from `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipEvent {
    pub t: f64,
    pub duration: f64,
    pub leg: usize,
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub sigma_accel: f64,
    pub sigma_gyro: f64,
    pub sigma_joint_pos: f64,
    pub sigma_joint_vel: f64,
    /// Wheel encoder resolution; `None` reports the exact wheel rate plus
    /// joint-velocity noise.
    pub wheel_encoder_ppr: Option<u32>,
    /// Samples spanned by the encoder's finite-difference rate estimate.
    pub encoder_window: usize,
    pub slip_events: Vec<SlipEvent>,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_accel: 0.0,
            sigma_gyro: 0.0,
            sigma_joint_pos: 0.0,
            sigma_joint_vel: 0.0,
            wheel_encoder_ppr: None,
            encoder_window: 10,
            slip_events: Vec::new(),
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let sigmas = [self.sigma_accel, self.sigma_gyro, self.sigma_joint_pos, self.sigma_joint_vel];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(SimError::InvalidScenario("noise sigmas must be finite and non-negative".into()));
        }
        if self.wheel_encoder_ppr == Some(0) {
            return Err(SimError::InvalidScenario("wheel encoder ppr must be positive".into()));
        }
        if self.encoder_window == 0 {
            return Err(SimError::InvalidScenario("encoder window must be at least one sample".into()));
        }
        for e in &self.slip_events {
            if e.leg >= NUM_LEGS || !(e.duration > 0.0) || !e.t.is_finite() || !e.velocity.is_finite() {
                return Err(SimError::InvalidScenario(format!("malformed slip event {e:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    pub robot: QuadrupedModel,
    /// Body origin height above flat ground.
    pub body_height: f64,
    pub swing_height: f64,
    pub initial_yaw: f64,
    pub gait: GaitSchedule,
    pub commands: Commands,
    pub terrain: Terrain,
    pub noise: NoiseModel,
    pub estimator: EstimatorConfig,
    /// Convergence window excluded from metrics.
    pub metrics_skip: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            duration: 10.0,
            dt: 1e-3,
            seed: 0,
            robot: QuadrupedModel::default(),
            body_height: 0.3,
            swing_height: 0.1,
            initial_yaw: 0.0,
            gait: GaitSchedule::stand(),
            commands: Commands::default(),
            terrain: Terrain::flat(),
            noise: NoiseModel::default(),
            estimator: EstimatorConfig::default(),
            metrics_skip: 0.5,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidScenario(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.duration >= self.dt && self.duration.is_finite()) {
            return Err(SimError::InvalidScenario(format!("duration {} shorter than dt", self.duration)));
        }
        if !(self.body_height > 0.0) || !(self.swing_height >= 0.0) {
            return Err(SimError::InvalidScenario("body height must be positive, swing height non-negative".into()));
        }
        if self.dt > self.estimator.max_dt {
            return Err(SimError::InvalidScenario(format!(
                "dt {} exceeds the estimator limit {}",
                self.dt, self.estimator.max_dt
            )));
        }
        if !(self.metrics_skip >= 0.0) {
            return Err(SimError::InvalidScenario("metrics skip must be non-negative".into()));
        }
        self.gait.validate().map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        for leg in &self.robot.legs {
            leg.validate().map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        }
        self.noise.validate()
    }

    /// Number of samples, t = 0 included.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt + 1e-9).floor() as usize + 1
    }
}

/// Filter output for a whole run.
#[derive(Debug, Clone)]
pub struct EstimatorRun {
    pub estimates: Vec<Estimate>,
    pub health: FilterHealth,
}

/// Runs one estimator over a sensor stream, seeded from the known initial
/// body state.
pub fn run_estimator(
    cfg: EstimatorConfig,
    robot: &QuadrupedModel,
    gait: &GaitSchedule,
    sensors: &[SensorFrame],
    initial: &InitialBody,
) -> Result<EstimatorRun, EstimatorError> {
    let mut est = Estimator::new(cfg, *robot, *gait)?;
    let Some((first, rest)) = sensors.split_first() else {
        return Ok(EstimatorRun { estimates: Vec::new(), health: FilterHealth::default() });
    };
    let mut estimates = Vec::with_capacity(sensors.len());
    estimates.push(est.initialize(first, initial)?);
    for frame in rest {
        estimates.push(est.step(frame)?);
    }
    Ok(EstimatorRun { estimates, health: *est.health() })
}
