//! Periodic phase-based contact scheduler.
//!
//! Legs are indexed FR=0, FL=1, RR=2, RL=3 everywhere in the crate. Each
//! leg's local phase is `(t / T + offset) mod 1`; the first `duty` of the
//! cycle is stance, the remainder swing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_LEGS: usize = 4;
pub const LEG_NAMES: [&str; NUM_LEGS] = ["FR", "FL", "RR", "RL"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaitKind {
    Trot,
    Walk,
    Pronk,
    Bound,
    Stand,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaitError {
    #[error("gait period must be positive, got {0}")]
    Period(f64),
    #[error("duty factor must lie in (0, 1), got {0}")]
    Duty(f64),
    #[error("phase offset {0} outside [0, 1)")]
    Offset(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitSchedule {
    pub kind: GaitKind,
    pub period: f64,
    pub duty: f64,
    pub offsets: [f64; NUM_LEGS],
}

impl GaitSchedule {
    pub fn new(kind: GaitKind, period: f64, duty: f64, offsets: [f64; NUM_LEGS]) -> Result<Self, GaitError> {
        let g = Self { kind, period, duty, offsets };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GaitError> {
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(GaitError::Period(self.period));
        }
        if !(self.duty > 0.0 && self.duty < 1.0) {
            return Err(GaitError::Duty(self.duty));
        }
        if let Some(o) = self.offsets.iter().find(|o| !(0.0..1.0).contains(*o)) {
            return Err(GaitError::Offset(*o));
        }
        Ok(())
    }

    pub fn preset(kind: GaitKind) -> Self {
        let (period, duty, offsets) = match kind {
            GaitKind::Trot => (0.4, 0.5, [0.0, 0.5, 0.5, 0.0]),
            GaitKind::Walk => (0.8, 0.75, [0.0, 0.5, 0.25, 0.75]),
            GaitKind::Pronk => (0.4, 0.4, [0.0; 4]),
            GaitKind::Bound => (0.4, 0.5, [0.0, 0.0, 0.5, 0.5]),
            GaitKind::Stand => (0.4, 0.5, [0.0; 4]),
        };
        Self { kind, period, duty, offsets }
    }

    pub fn stand() -> Self {
        Self::preset(GaitKind::Stand)
    }

    /// Scheduled stance duration.
    pub fn stance_duration(&self) -> f64 {
        self.duty * self.period
    }

    pub fn swing_duration(&self) -> f64 {
        (1.0 - self.duty) * self.period
    }

    /// Local gait phase of `leg` at time `t`, in [0, 1).
    pub fn leg_phase(&self, leg: usize, t: f64) -> f64 {
        let ph = (t / self.period + self.offsets[leg]).rem_euclid(1.0);
        if ph >= 1.0 {
            0.0
        } else {
            ph
        }
    }

    /// Timing of the cycle containing `t` for one leg.
    pub fn leg_timing(&self, leg: usize, t: f64) -> LegTiming {
        if self.kind == GaitKind::Stand {
            return LegTiming { in_stance: true, phase: 0.5, stance_start: f64::NEG_INFINITY, swing_start: f64::INFINITY };
        }
        let ph = self.leg_phase(leg, t);
        let cycle_start = t - ph * self.period;
        if ph < self.duty {
            LegTiming {
                in_stance: true,
                phase: ph / self.duty,
                stance_start: cycle_start,
                swing_start: cycle_start + self.stance_duration(),
            }
        } else {
            LegTiming {
                in_stance: false,
                phase: (ph - self.duty) / (1.0 - self.duty),
                stance_start: cycle_start + self.period,
                swing_start: cycle_start + self.stance_duration(),
            }
        }
    }
}

/// Per-leg schedule detail at one instant.
///
/// In stance, `stance_start` is the current touchdown time and `swing_start`
/// the coming lift-off; in swing, `swing_start` is the last lift-off and
/// `stance_start` the next touchdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegTiming {
    pub in_stance: bool,
    /// Contact phase in stance, swing phase otherwise; both in [0, 1).
    pub phase: f64,
    pub stance_start: f64,
    pub swing_start: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactState {
    pub s_hat: [bool; NUM_LEGS],
    /// Contact phase for stance legs, swing phase for swing legs.
    pub phi_c: [f64; NUM_LEGS],
    pub t_stance: f64,
}

pub fn contact_schedule(g: &GaitSchedule, t: f64) -> ContactState {
    let mut s_hat = [false; NUM_LEGS];
    let mut phi_c = [0.0; NUM_LEGS];
    for leg in 0..NUM_LEGS {
        let timing = g.leg_timing(leg, t);
        s_hat[leg] = timing.in_stance;
        phi_c[leg] = timing.phase;
    }
    ContactState { s_hat, phi_c, t_stance: g.stance_duration() }
}

/// Drops expected contact on legs flagged as near their kinematic limit.
pub fn apply_limit_override(cs: ContactState, near_singular: [bool; NUM_LEGS]) -> ContactState {
    let mut out = cs;
    for (s, flag) in out.s_hat.iter_mut().zip(near_singular) {
        if flag {
            *s = false;
        }
    }
    out
}
