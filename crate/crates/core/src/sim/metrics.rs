use super::{SimError, TruthRecord};
use crate::estimator::Estimate;
use crate::kinematics::Vec3;

/// Error statistics of an estimate stream against truth.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub samples: usize,
    pub skipped: usize,
    /// RMS of the error norm.
    pub position_rmse: f64,
    pub position_rmse_axis: [f64; 3],
    pub position_max_abs: [f64; 3],
    pub velocity_rmse: f64,
    pub velocity_rmse_axis: [f64; 3],
    pub velocity_max_abs: [f64; 3],
    pub height_rmse: f64,
    pub height_max_abs: f64,
    pub drive_velocity_rmse: f64,
    pub gait_velocity_rmse: f64,
}

impl MetricsReport {
    /// Flat `(key, value)` list in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("samples".to_string(), self.samples as f64),
            ("skipped".to_string(), self.skipped as f64),
            ("position_rmse".to_string(), self.position_rmse),
        ];
        let axes = ["x", "y", "z"];
        for (i, a) in axes.iter().enumerate() {
            out.push((format!("position_rmse_{a}"), self.position_rmse_axis[i]));
        }
        for (i, a) in axes.iter().enumerate() {
            out.push((format!("position_max_abs_{a}"), self.position_max_abs[i]));
        }
        out.push(("velocity_rmse".to_string(), self.velocity_rmse));
        for (i, a) in axes.iter().enumerate() {
            out.push((format!("velocity_rmse_{a}"), self.velocity_rmse_axis[i]));
        }
        for (i, a) in axes.iter().enumerate() {
            out.push((format!("velocity_max_abs_{a}"), self.velocity_max_abs[i]));
        }
        out.push(("height_rmse".to_string(), self.height_rmse));
        out.push(("height_max_abs".to_string(), self.height_max_abs));
        out.push(("drive_velocity_rmse".to_string(), self.drive_velocity_rmse));
        out.push(("gait_velocity_rmse".to_string(), self.gait_velocity_rmse));
        out
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.to_pairs().into_iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }
}

#[derive(Default)]
struct Accum {
    sum_sq: [f64; 3],
    max_abs: [f64; 3],
}

impl Accum {
    fn add(&mut self, e: &Vec3) {
        for i in 0..3 {
            self.sum_sq[i] += e[i] * e[i];
            self.max_abs[i] = self.max_abs[i].max(e[i].abs());
        }
    }

    fn rmse_axis(&self, n: usize) -> [f64; 3] {
        self.sum_sq.map(|s| if n == 0 { 0.0 } else { (s / n as f64).sqrt() })
    }

    fn rmse(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            (self.sum_sq.iter().sum::<f64>() / n as f64).sqrt()
        }
    }
}

/// Compares estimates with truth, ignoring samples with `t < skip`.
pub fn metrics(truth: &[TruthRecord], estimates: &[Estimate], skip: f64) -> Result<MetricsReport, SimError> {
    if truth.len() != estimates.len() {
        return Err(SimError::LengthMismatch { truth: truth.len(), estimates: estimates.len() });
    }
    let mut pos = Accum::default();
    let mut vel = Accum::default();
    let mut drive = Accum::default();
    let mut gait = Accum::default();
    let mut n = 0;
    let mut skipped = 0;
    for (index, (tr, est)) in truth.iter().zip(estimates).enumerate() {
        if (tr.t - est.t).abs() > 1e-9 {
            return Err(SimError::TimestampMismatch { index });
        }
        if tr.t < skip {
            skipped += 1;
            continue;
        }
        n += 1;
        pos.add(&(est.position - tr.position));
        vel.add(&(est.velocity - tr.velocity));
        drive.add(&(est.drive_velocity - tr.drive_velocity));
        let v_gait_true = tr.velocity - tr.drive_velocity;
        gait.add(&(est.gait_velocity - v_gait_true));
    }
    let position_rmse_axis = pos.rmse_axis(n);
    Ok(MetricsReport {
        samples: n,
        skipped,
        position_rmse: pos.rmse(n),
        position_rmse_axis,
        position_max_abs: pos.max_abs,
        velocity_rmse: vel.rmse(n),
        velocity_rmse_axis: vel.rmse_axis(n),
        velocity_max_abs: vel.max_abs,
        height_rmse: position_rmse_axis[2],
        height_max_abs: pos.max_abs[2],
        drive_velocity_rmse: drive.rmse(n),
        gait_velocity_rmse: gait.rmse(n),
    })
}
