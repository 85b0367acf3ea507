use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Scenario, SimError};
use crate::control::GRAVITY;
use crate::estimator::{InitialBody, SensorFrame};
use crate::gait::{GaitKind, NUM_LEGS};
use crate::kinematics::{
    effective_radius, leg_ik, leg_joint_rates, rotation_zyx, KinematicsError, LegJointState, Mat3, Vec3,
};

/// Ground truth at one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRecord {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub yaw: f64,
    pub yaw_rate: f64,
    pub rotation: Mat3,
    pub drive_position: Vec3,
    pub drive_velocity: Vec3,
    /// World contact point of each wheel.
    pub contacts: [Vec3; NUM_LEGS],
    pub contact_velocities: [Vec3; NUM_LEGS],
    pub in_contact: [bool; NUM_LEGS],
    pub joints: [LegJointState; NUM_LEGS],
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub truth: Vec<TruthRecord>,
    pub sensors: Vec<SensorFrame>,
    pub initial: InitialBody,
}

fn rot_z(psi: f64) -> Mat3 {
    rotation_zyx(psi, 0.0, 0.0)
}

/// Body trajectory split into a stepping part `g` (with height) and a
/// driving part `d`, tabulated on the sample grid.
struct BodyPath<'a> {
    s: &'a Scenario,
    g_grid: Vec<Vec3>,
    d_grid: Vec<Vec3>,
}

impl<'a> BodyPath<'a> {
    fn new(s: &'a Scenario, samples: usize) -> Self {
        let mut path = Self { s, g_grid: Vec::with_capacity(samples), d_grid: Vec::with_capacity(samples) };
        let mut g = Vec3::new(0.0, 0.0, s.body_height);
        let mut d = Vec3::zeros();
        path.g_grid.push(g);
        path.d_grid.push(d);
        for k in 1..samples {
            let (a, b) = ((k - 1) as f64 * s.dt, k as f64 * s.dt);
            let (dg, dd) = path.simpson(a, b);
            g += dg;
            d += dd;
            path.g_grid.push(g);
            path.d_grid.push(d);
        }
        path
    }

    fn yaw(&self, t: f64) -> f64 {
        self.s.initial_yaw + self.s.commands.yaw_rate.integral(t)
    }

    fn yaw_rate(&self, t: f64) -> f64 {
        self.s.commands.yaw_rate.value(t)
    }

    fn body_velocity(&self, t: f64) -> (Vec3, Vec3) {
        let c = &self.s.commands;
        (Vec3::new(c.step_x.value(t), c.step_y.value(t), 0.0), Vec3::new(c.drive.value(t), 0.0, 0.0))
    }

    fn body_rate(&self, t: f64) -> (Vec3, Vec3) {
        let c = &self.s.commands;
        (Vec3::new(c.step_x.rate(t), c.step_y.rate(t), 0.0), Vec3::new(c.drive.rate(t), 0.0, 0.0))
    }

    /// World velocities (stepping, driving).
    fn velocities(&self, t: f64) -> (Vec3, Vec3) {
        let r = rot_z(self.yaw(t));
        let (vg, vd) = self.body_velocity(t);
        (r * vg, r * vd)
    }

    /// World accelerations (stepping, driving).
    fn accelerations(&self, t: f64) -> (Vec3, Vec3) {
        let r = rot_z(self.yaw(t));
        let w = Vec3::new(0.0, 0.0, self.yaw_rate(t));
        let (vg, vd) = self.body_velocity(t);
        let (ag, ad) = self.body_rate(t);
        (r * (ag + w.cross(&vg)), r * (ad + w.cross(&vd)))
    }

    fn simpson(&self, a: f64, b: f64) -> (Vec3, Vec3) {
        let (ga, da) = self.velocities(a);
        let (gm, dm) = self.velocities(0.5 * (a + b));
        let (gb, db) = self.velocities(b);
        let h = (b - a) / 6.0;
        ((ga + gm * 4.0 + gb) * h, (da + dm * 4.0 + db) * h)
    }

    /// Stepping and driving displacement at an arbitrary time.
    fn positions(&self, t: f64) -> (Vec3, Vec3) {
        let dt = self.s.dt;
        if t < 0.0 {
            let panels = (-t / dt).ceil().max(1.0) as usize;
            let mut g = self.g_grid[0];
            let mut d = self.d_grid[0];
            let h = t / panels as f64;
            for k in 0..panels {
                let (dg, dd) = self.simpson(k as f64 * h, (k + 1) as f64 * h);
                g += dg;
                d += dd;
            }
            return (g, d);
        }
        let k = ((t / dt).floor() as usize).min(self.g_grid.len() - 1);
        let tk = k as f64 * dt;
        if t == tk {
            return (self.g_grid[k], self.d_grid[k]);
        }
        let (dg, dd) = self.simpson(tk, t);
        (self.g_grid[k] + dg, self.d_grid[k] + dd)
    }
}

struct FootState {
    position: Vec3,
    velocity: Vec3,
    in_contact: bool,
}

struct FootPlanner<'a> {
    path: &'a BodyPath<'a>,
    nominal: [Vec3; NUM_LEGS],
}

fn swing_bump(sigma: f64) -> (f64, f64) {
    let u = 1.0 - sigma;
    (64.0 * sigma.powi(3) * u.powi(3), 64.0 * 3.0 * sigma * sigma * u * u * (u - sigma))
}

fn quintic(sigma: f64) -> (f64, f64) {
    let s = sigma.clamp(0.0, 1.0);
    (s * s * s * (10.0 - 15.0 * s + 6.0 * s * s), 30.0 * s * s * (1.0 - s) * (1.0 - s))
}

impl<'a> FootPlanner<'a> {
    fn new(path: &'a BodyPath<'a>) -> Self {
        let s = path.s;
        let nominal = std::array::from_fn(|leg| {
            let geom = &s.robot.legs[leg];
            geom.hip_offset + Vec3::new(0.0, geom.side.sign() * geom.l1, -s.body_height)
        });
        Self { path, nominal }
    }

    /// Drive-discounted foothold of the stance that touches down at
    /// `touchdown`, centred under the hip at `centre`.
    fn anchor(&self, leg: usize, centre: f64, touchdown: f64) -> Vec3 {
        let (g, _) = self.path.positions(centre);
        let mut a = g + rot_z(self.path.yaw(centre)) * self.nominal[leg];
        let (_, d) = self.path.positions(touchdown);
        a.z = self.path.s.terrain.height(a.x + d.x);
        a
    }

    /// Accumulated skid of one stance interval at time `t`.
    fn slip(&self, leg: usize, t: f64, stance_start: f64, stance_end: f64) -> (Vec3, Vec3) {
        let mut offset = Vec3::zeros();
        let mut rate = Vec3::zeros();
        for e in self.path.s.noise.slip_events.iter().filter(|e| e.leg == leg) {
            if e.t < stance_start || e.t >= stance_end {
                continue;
            }
            let dir = rot_z(self.path.yaw(e.t)) * Vec3::x();
            let elapsed = (t.min(stance_end) - e.t).clamp(0.0, e.duration);
            offset += dir * (e.velocity * elapsed);
            if t >= e.t && t < e.t + e.duration && t < stance_end {
                rate += dir * e.velocity;
            }
        }
        (offset, rate)
    }

    fn foot(&self, leg: usize, t: f64) -> FootState {
        let s = self.path.s;
        let (_, d) = self.path.positions(t);
        let (_, d_rate) = self.path.velocities(t);
        if s.gait.kind == GaitKind::Stand {
            let a = self.anchor(leg, 0.0, 0.0);
            let (off, rate) = self.slip(leg, t, f64::NEG_INFINITY, f64::INFINITY);
            return FootState { position: a + d + off, velocity: d_rate + rate, in_contact: true };
        }
        let timing = s.gait.leg_timing(leg, t);
        let half_stance = 0.5 * s.gait.stance_duration();
        if timing.in_stance {
            let a = self.anchor(leg, timing.stance_start + half_stance, timing.stance_start);
            let (off, rate) = self.slip(leg, t, timing.stance_start, timing.swing_start);
            return FootState { position: a + d + off, velocity: d_rate + rate, in_contact: true };
        }
        let lift_off = timing.swing_start;
        let touchdown = timing.stance_start;
        let prev_start = touchdown - s.gait.period;
        let (prev_slip, _) = self.slip(leg, lift_off, prev_start, lift_off);
        let a0 = self.anchor(leg, prev_start + half_stance, prev_start) + prev_slip;
        let a1 = self.anchor(leg, touchdown + half_stance, touchdown);
        let t_sw = s.gait.swing_duration();
        let sigma = ((t - lift_off) / t_sw).clamp(0.0, 1.0);
        let (blend, blend_rate) = quintic(sigma);
        let (bump, bump_rate) = swing_bump(sigma);
        let lift = Vec3::new(0.0, 0.0, s.swing_height);
        FootState {
            position: d + a0 + (a1 - a0) * blend + lift * bump,
            velocity: d_rate + ((a1 - a0) * blend_rate + lift * bump_rate) / t_sw,
            in_contact: false,
        }
    }
}

struct WheelEncoder {
    step: f64,
    window: usize,
    counts: Vec<i64>,
}

impl WheelEncoder {
    fn new(ppr: u32, window: usize) -> Self {
        Self { step: std::f64::consts::TAU / ppr as f64, window, counts: Vec::new() }
    }

    /// Quantised angle and its finite-difference rate.
    fn sample(&mut self, angle: f64, true_rate: f64, dt: f64) -> (f64, f64) {
        let count = (angle / self.step).floor() as i64;
        self.counts.push(count);
        let n = self.counts.len() - 1;
        let span = n.min(self.window);
        let rate = if span == 0 {
            true_rate
        } else {
            (count - self.counts[n - span]) as f64 * self.step / (span as f64 * dt)
        };
        (count as f64 * self.step, rate)
    }
}

fn ik_error(t: f64, leg: usize, source: KinematicsError) -> SimError {
    SimError::IkFailure { t, leg, source }
}

/// Generates truth and sensor streams for a scenario.
pub fn generate(s: &Scenario) -> Result<SimOutput, SimError> {
    s.validate()?;
    let samples = s.steps();
    let lookahead = (s.gait.period / s.dt).ceil() as usize + 2;
    let path = BodyPath::new(s, samples + lookahead);
    let planner = FootPlanner::new(&path);

    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut gauss = |sigma: f64| -> f64 {
        let n: f64 = rng.sample(StandardNormal);
        sigma * n
    };
    let mut encoders: Vec<WheelEncoder> = match s.noise.wheel_encoder_ppr {
        Some(ppr) => (0..NUM_LEGS).map(|_| WheelEncoder::new(ppr, s.noise.encoder_window)).collect(),
        None => Vec::new(),
    };

    let mut truth = Vec::with_capacity(samples);
    let mut sensors = Vec::with_capacity(samples);
    let mut wheel_angle = [0.0; NUM_LEGS];
    let mut prev_wheel_rate: Option<[f64; NUM_LEGS]> = None;

    for k in 0..samples {
        let t = k as f64 * s.dt;
        let (g, d) = (path.g_grid[k], path.d_grid[k]);
        let position = g + d;
        let (vg, vd) = path.velocities(t);
        let velocity = vg + vd;
        let (ag, ad) = path.accelerations(t);
        let acceleration = ag + ad;
        let yaw = path.yaw(t);
        let yaw_rate = path.yaw_rate(t);
        let rotation = rot_z(yaw);
        let omega = Vec3::new(0.0, 0.0, yaw_rate);
        let drive_speed = s.commands.drive.value(t);

        let mut contacts = [Vec3::zeros(); NUM_LEGS];
        let mut contact_velocities = [Vec3::zeros(); NUM_LEGS];
        let mut in_contact = [false; NUM_LEGS];
        let mut joints = [LegJointState::default(); NUM_LEGS];
        let mut wheel_rate = [0.0; NUM_LEGS];
        for leg in 0..NUM_LEGS {
            let geom = &s.robot.legs[leg];
            let foot = planner.foot(leg, t);
            let p_body = rotation.transpose() * (foot.position - position);
            let target = p_body - geom.hip_offset;
            let mut q = leg_ik(geom, &target, &s.robot.ik).map_err(|e| ik_error(t, leg, e))?;
            let v_leg = rotation.transpose() * (foot.velocity - velocity) - omega.cross(&p_body);
            let rates = leg_joint_rates(geom, &q, &v_leg).ok_or_else(|| {
                ik_error(
                    t,
                    leg,
                    KinematicsError::NearSingular { target: [target.x, target.y, target.z], extension: geom.extension(&q) },
                )
            })?;
            let r_eff = effective_radius(geom, q.q[0], 0.0);
            wheel_rate[leg] = drive_speed / r_eff - rates.y - rates.z;
            q.qdot = [rates.x, rates.y, rates.z, wheel_rate[leg]];
            contacts[leg] = foot.position;
            contact_velocities[leg] = foot.velocity;
            in_contact[leg] = foot.in_contact;
            joints[leg] = q;
        }
        if let Some(prev) = prev_wheel_rate {
            for leg in 0..NUM_LEGS {
                wheel_angle[leg] += 0.5 * (prev[leg] + wheel_rate[leg]) * s.dt;
            }
        }
        prev_wheel_rate = Some(wheel_rate);
        for leg in 0..NUM_LEGS {
            joints[leg].q[3] = wheel_angle[leg];
        }

        let n = &s.noise;
        let accel = rotation.transpose() * (acceleration + Vec3::new(0.0, 0.0, GRAVITY))
            + Vec3::new(gauss(n.sigma_accel), gauss(n.sigma_accel), gauss(n.sigma_accel));
        let gyro = omega + Vec3::new(gauss(n.sigma_gyro), gauss(n.sigma_gyro), gauss(n.sigma_gyro));
        let mut measured = joints;
        for leg in 0..NUM_LEGS {
            let m = &mut measured[leg];
            for j in 0..3 {
                m.q[j] += gauss(n.sigma_joint_pos);
            }
            for j in 0..4 {
                m.qdot[j] += gauss(n.sigma_joint_vel);
            }
            if let Some(enc) = encoders.get_mut(leg) {
                let (angle, rate) = enc.sample(joints[leg].q[3], joints[leg].qdot[3], s.dt);
                m.q[3] = angle;
                m.qdot[3] = rate;
            }
        }

        truth.push(TruthRecord {
            t,
            position,
            velocity,
            acceleration,
            yaw,
            yaw_rate,
            rotation,
            drive_position: d,
            drive_velocity: vd,
            contacts,
            contact_velocities,
            in_contact,
            joints,
        });
        sensors.push(SensorFrame { t, accel, gyro, rotation, joints: measured, expected_contact: in_contact });
    }
    let first = &truth[0];
    let initial = InitialBody { position: first.position, velocity: first.velocity, drive_velocity: first.drive_velocity };
    Ok(SimOutput { truth, sensors, initial })
}
