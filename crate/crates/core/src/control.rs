//! Controller-side formulas that depend on the split between driving and
//! stepping: drive-discounted footstep targets, the rolling-direction
//! correction and the wheel torque / velocity conversions.

use crate::kinematics::{Mat3, Vec3};

pub const GRAVITY: f64 = 9.81;
/// Wheel torque limit of the hardware, N·m.
pub const WHEEL_TORQUE_LIMIT: f64 = 2.1;
/// Wheel speed limit (2150 rpm), rad/s.
pub const WHEEL_SPEED_LIMIT: f64 = 2150.0 * std::f64::consts::TAU / 60.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootstepCommand {
    pub p_target: Vec3,
    pub p_symmetry: Vec3,
    pub p_centrifugal: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelCommand {
    pub tau: f64,
    pub qdot: f64,
}

/// Body velocity with the driving share removed.
pub fn gait_velocity(pdot: &Vec3, pdot_drive: &Vec3) -> Vec3 {
    pdot - pdot_drive
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootstepInputs {
    pub v_gait: Vec3,
    pub v_cmd: Vec3,
    pub t_stance: f64,
    /// Velocity feedback gain.
    pub g_v: f64,
    /// Total body velocity, driving included.
    pub pdot: Vec3,
    pub omega: Vec3,
    /// Body height.
    pub height: f64,
    pub gravity: f64,
}

pub fn footstep_target(inp: &FootstepInputs) -> FootstepCommand {
    let p_symmetry = inp.v_gait * (inp.t_stance / 2.0) + (inp.v_gait - inp.v_cmd) * inp.g_v;
    let p_centrifugal = inp.pdot.cross(&inp.omega) * (inp.height / (2.0 * inp.gravity));
    FootstepCommand { p_target: p_symmetry + p_centrifugal, p_symmetry, p_centrifugal }
}

/// Corrective foot velocity; only the rolling (x) component survives.
pub fn corrective_velocity(k_p: f64, p_error_filtered: &Vec3) -> Vec3 {
    Vec3::new(k_p, 0.0, 0.0).component_mul(p_error_filtered)
}

/// Exponential moving average of the foot position error.
pub fn error_filter(prev: &Vec3, raw: &Vec3, alpha: f64) -> Vec3 {
    raw * alpha + prev * (1.0 - alpha)
}

/// Feed-forward wheel torque from a reaction force.
///
/// `world_to_body` maps world vectors into the body frame.
pub fn wheel_torque(r_eff: f64, world_to_body: &Mat3, force: &Vec3, tau_max: f64) -> f64 {
    let tau = Vec3::new(r_eff, 0.0, 0.0).dot(&(world_to_body * force));
    tau.clamp(-tau_max, tau_max)
}

/// Wheel joint velocity that rolls the foot at `v_cmd + v_corr`.
pub fn wheel_velocity(r_eff: f64, world_to_body: &Mat3, v_cmd: &Vec3, v_corr: &Vec3) -> f64 {
    Vec3::new(1.0 / r_eff, 0.0, 0.0).dot(&(world_to_body * (v_cmd + v_corr)))
}

pub fn wheel_command(
    r_eff: f64,
    world_to_body: &Mat3,
    force: &Vec3,
    v_cmd: &Vec3,
    v_corr: &Vec3,
    tau_max: f64,
    qdot_max: f64,
) -> WheelCommand {
    WheelCommand {
        tau: wheel_torque(r_eff, world_to_body, force, tau_max),
        qdot: wheel_velocity(r_eff, world_to_body, v_cmd, v_corr).clamp(-qdot_max, qdot_max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::rotation_zyx;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gait_velocity_examples() {
        let drive = Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(gait_velocity(&drive, &drive), Vec3::zeros());
        assert_eq!(gait_velocity(&Vec3::new(1.0, 0.2, 0.0), &drive), Vec3::new(0.0, 0.2, 0.0));
        let v = Vec3::new(0.3, -0.1, 0.05);
        assert_eq!(gait_velocity(&v, &Vec3::zeros()), v);
    }

    fn inputs(v_gait: Vec3, v_cmd: Vec3, pdot: Vec3, omega: Vec3) -> FootstepInputs {
        FootstepInputs { v_gait, v_cmd, t_stance: 0.2, g_v: 0.05, pdot, omega, height: 0.3, gravity: GRAVITY }
    }

    #[test]
    fn footstep_examples() {
        let v = Vec3::new(0.5, 0.0, 0.0);
        let cmd = footstep_target(&inputs(v, v, v, Vec3::zeros()));
        assert_abs_diff_eq!(cmd.p_symmetry, Vec3::new(0.05, 0.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(cmd.p_target, v * 0.1, epsilon = 1e-12);

        let parallel = footstep_target(&inputs(v, v, Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, 0.8)));
        assert_eq!(parallel.p_centrifugal, Vec3::zeros());
        assert_eq!(parallel.p_target, parallel.p_symmetry + parallel.p_centrifugal);
    }

    #[test]
    fn centrifugal_offset_uses_total_velocity() {
        // 1 m/s forward, 1 rad/s yaw: ṗ × ω = (0, -1, 0), scaled by h / 2g.
        let cmd = footstep_target(&inputs(
            Vec3::zeros(),
            Vec3::zeros(),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ));
        assert_abs_diff_eq!(cmd.p_centrifugal, Vec3::new(0.0, -0.3 / (2.0 * GRAVITY), 0.0), epsilon = 1e-15);
    }

    #[test]
    fn corrective_velocity_examples() {
        assert_abs_diff_eq!(
            corrective_velocity(2.0, &Vec3::new(0.1, 0.5, 0.2)),
            Vec3::new(0.2, 0.0, 0.0),
            epsilon = 1e-15
        );
        assert_eq!(corrective_velocity(2.0, &Vec3::zeros()), Vec3::zeros());
        assert_eq!(corrective_velocity(0.0, &Vec3::new(0.1, 0.5, 0.2)), Vec3::zeros());
    }

    #[test]
    fn error_filter_examples() {
        let raw = Vec3::new(1.0, -2.0, 0.5);
        assert_eq!(error_filter(&Vec3::new(9.0, 9.0, 9.0), &raw, 1.0), raw);
        assert_abs_diff_eq!(error_filter(&Vec3::zeros(), &Vec3::x(), 0.1), Vec3::new(0.1, 0.0, 0.0), epsilon = 1e-15);
        let mut state = Vec3::zeros();
        let mut prev_err = f64::INFINITY;
        for _ in 0..200 {
            state = error_filter(&state, &raw, 0.1);
            let err = (state - raw).norm();
            assert!(err < prev_err);
            prev_err = err;
        }
        assert!(prev_err < 1e-8);
    }

    #[test]
    fn wheel_torque_examples() {
        let id = Mat3::identity();
        assert_abs_diff_eq!(wheel_torque(0.05, &id, &Vec3::new(10.0, 0.0, 0.0), WHEEL_TORQUE_LIMIT), 0.5, epsilon = 1e-15);
        assert_eq!(wheel_torque(0.05, &id, &Vec3::new(0.0, 30.0, -80.0), WHEEL_TORQUE_LIMIT), 0.0);
        assert_eq!(wheel_torque(0.05, &id, &Vec3::new(100.0, 0.0, 0.0), WHEEL_TORQUE_LIMIT), 2.1);
        assert_eq!(wheel_torque(0.05, &id, &Vec3::new(-100.0, 0.0, 0.0), WHEEL_TORQUE_LIMIT), -2.1);
    }

    #[test]
    fn wheel_velocity_examples() {
        let id = Mat3::identity();
        assert_abs_diff_eq!(wheel_velocity(0.05, &id, &Vec3::new(0.5, 0.0, 0.0), &Vec3::zeros()), 10.0, epsilon = 1e-12);
        let v = Vec3::new(0.4, 0.1, 0.0);
        assert_eq!(wheel_velocity(0.05, &id, &v, &-v), 0.0);
    }

    #[test]
    fn wheel_velocity_round_trip_in_rotated_frame() {
        let body_to_world = rotation_zyx(0.8, 0.0, 0.0);
        let world_to_body = body_to_world.transpose();
        let v_world = body_to_world * Vec3::new(0.73, 0.0, 0.0);
        let qdot = wheel_velocity(0.043, &world_to_body, &v_world, &Vec3::zeros());
        assert_abs_diff_eq!(qdot * 0.043, 0.73, epsilon = 1e-12);
    }

    #[test]
    fn speed_ceiling() {
        let v = WHEEL_SPEED_LIMIT * 0.05;
        assert_abs_diff_eq!(WHEEL_SPEED_LIMIT, 225.15, epsilon = 0.01);
        assert_abs_diff_eq!(v * 3.6, 40.5, epsilon = 0.1);
    }
}
