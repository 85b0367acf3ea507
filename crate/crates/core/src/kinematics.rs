//! Leg kinematics for a 4-DoF leg (ab/ad, hip, knee, wheel) ending in a
//! torus-shaped wheel.
//!
//! Conventions:
//! - The leg frame is body-attached, centred on the ab/ad joint, with x
//!   forward, y left and z up.
//! - `contact_position` returns the lowest point of the wheel in the leg
//!   frame. [`LegGeometry::hip_offset`] locates the leg frame in the body.
//! - Right-side legs carry [`Side::Right`], which flips the sign of the
//!   ab/ad link offset. Everything else in the chain is shared.
//! - Attitude uses Z-Y-X (yaw, pitch, roll) Euler angles.

use nalgebra::{Matrix3, SMatrix, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
/// Leg Jacobian, columns ordered (ab/ad, hip, knee, wheel).
pub type LegJacobian = SMatrix<f64, 3, 4>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("invalid leg geometry: {0}")]
    InvalidGeometry(String),
    #[error("target {target:?} is outside the leg workspace")]
    Unreachable { target: [f64; 3] },
    #[error("target {target:?} is within the singularity margin (extension {extension:.4} m)")]
    NearSingular { target: [f64; 3], extension: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    pub fn mirrored(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// Knee-bend branch selected by the inverse kinematics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KneeBranch {
    /// Knee sits behind the hip-wheel line (positive knee angle).
    Backward,
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegGeometry {
    /// Ab/ad offset link.
    pub l1: f64,
    /// Thigh.
    pub l2: f64,
    /// Shank.
    pub l3: f64,
    /// Wheel outer radius.
    pub a_end: f64,
    /// Wheel half-width (tube) radius.
    pub b_end: f64,
    pub side: Side,
    /// Position of the ab/ad joint in the body frame.
    pub hip_offset: Vec3,
}

impl Default for LegGeometry {
    fn default() -> Self {
        Self {
            l1: 0.062,
            l2: 0.209,
            l3: 0.19,
            a_end: 0.05,
            b_end: 0.02,
            side: Side::Left,
            hip_offset: Vec3::zeros(),
        }
    }
}

impl LegGeometry {
    pub fn new(l1: f64, l2: f64, l3: f64, a_end: f64, b_end: f64, side: Side) -> Result<Self, KinematicsError> {
        let g = Self { l1, l2, l3, a_end, b_end, side, hip_offset: Vec3::zeros() };
        g.validate()?;
        Ok(g)
    }

    pub fn with_hip_offset(mut self, hip_offset: Vec3) -> Self {
        self.hip_offset = hip_offset;
        self
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        let finite = [self.l1, self.l2, self.l3, self.a_end, self.b_end]
            .iter()
            .chain(self.hip_offset.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(KinematicsError::InvalidGeometry("non-finite parameter".into()));
        }
        if self.l1 <= 0.0 || self.l2 <= 0.0 || self.l3 <= 0.0 || self.a_end <= 0.0 {
            return Err(KinematicsError::InvalidGeometry(
                "link lengths and wheel radius must be positive".into(),
            ));
        }
        if self.b_end < 0.0 || self.b_end > self.a_end {
            return Err(KinematicsError::InvalidGeometry(format!(
                "wheel half-width {} must lie in [0, a_end={}]",
                self.b_end, self.a_end
            )));
        }
        Ok(())
    }

    /// Distance from the wheel centre to the tube-centre circle.
    pub fn r(&self) -> f64 {
        self.a_end - self.b_end
    }

    /// Same chain on the opposite side of the body.
    pub fn mirrored(&self) -> Self {
        let mut g = *self;
        g.side = self.side.mirrored();
        g.hip_offset.y = -g.hip_offset.y;
        g
    }

    /// Hip-to-wheel-centre distance in the sagittal plane of the leg.
    pub fn extension(&self, q: &LegJointState) -> f64 {
        let (l2, l3) = (self.l2, self.l3);
        (l2 * l2 + l3 * l3 + 2.0 * l2 * l3 * q.q[2].cos()).max(0.0).sqrt()
    }

    pub fn max_extension(&self) -> f64 {
        self.l2 + self.l3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LegJointState {
    /// (ab/ad, hip, knee, wheel) angles.
    pub q: [f64; 4],
    pub qdot: [f64; 4],
}

impl LegJointState {
    pub fn new(q: [f64; 4], qdot: [f64; 4]) -> Self {
        Self { q, qdot }
    }

    pub fn at_rest(q: [f64; 4]) -> Self {
        Self { q, qdot: [0.0; 4] }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite())
    }
}

/// Base orientation and rates, as consumed by the leg models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseAttitude {
    /// Body-to-world rotation.
    pub rotation: Mat3,
    pub roll: f64,
    pub pitch: f64,
    /// Body angular velocity expressed in the body frame.
    pub omega: Vec3,
    pub roll_rate: f64,
    pub pitch_rate: f64,
}

impl Default for BaseAttitude {
    fn default() -> Self {
        Self::from_rotation(Mat3::identity(), Vec3::zeros())
    }
}

impl BaseAttitude {
    /// Extracts Z-Y-X roll/pitch and their rates from a rotation and a body rate.
    pub fn from_rotation(rotation: Mat3, omega: Vec3) -> Self {
        let pitch = (-rotation[(2, 0)]).clamp(-1.0, 1.0).asin();
        let roll = rotation[(2, 1)].atan2(rotation[(2, 2)]);
        let (sr, cr) = roll.sin_cos();
        let roll_rate = omega.x + pitch.tan() * (sr * omega.y + cr * omega.z);
        let pitch_rate = cr * omega.y - sr * omega.z;
        Self { rotation, roll, pitch, omega, roll_rate, pitch_rate }
    }

    pub fn level() -> Self {
        Self::default()
    }
}

/// Z-Y-X Euler angles to a body-to-world rotation.
pub fn rotation_zyx(yaw: f64, pitch: f64, roll: f64) -> Mat3 {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    Mat3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactKinematics {
    /// Contact position in the body frame (includes the hip offset).
    pub p_cp: Vec3,
    /// Contact velocity relative to the body origin from joint and body
    /// rotation, world frame.
    pub pdot_cp_k: Vec3,
    /// Rolling contribution of the wheel, world frame.
    pub pdot_cp_w: Vec3,
    pub pdot_cp: Vec3,
    pub r_eff: f64,
    pub jacobian: LegJacobian,
}

struct Trig {
    s1: f64,
    c1: f64,
    s2: f64,
    c2: f64,
    s23: f64,
    c23: f64,
}

impl Trig {
    fn new(q: &[f64; 4]) -> Self {
        let (s1, c1) = q[0].sin_cos();
        let (s2, c2) = q[1].sin_cos();
        let (s23, c23) = (q[1] + q[2]).sin_cos();
        Self { s1, c1, s2, c2, s23, c23 }
    }
}

/// Wheel centre (tip of the link chain) in the leg frame.
pub fn chain_tip(geom: &LegGeometry, q: &LegJointState) -> Vec3 {
    let t = Trig::new(&q.q);
    let m = geom.side.sign();
    let sagittal = geom.l2 * t.c2 + geom.l3 * t.c23;
    Vec3::new(
        geom.l3 * t.s23 + geom.l2 * t.s2,
        m * geom.l1 * t.c1 + t.s1 * sagittal,
        m * geom.l1 * t.s1 - t.c1 * sagittal,
    )
}

/// Lowest point of the wheel in the leg frame, for an upright wheel
/// (`|q1| < π/2`).
pub fn contact_position(geom: &LegGeometry, q: &LegJointState) -> Vec3 {
    let (s1, c1) = q.q[0].sin_cos();
    let r = geom.r();
    chain_tip(geom, q) - Vec3::new(0.0, -r * s1, r * c1 + geom.b_end)
}

fn chain_jacobian_with_tube(geom: &LegGeometry, q: &LegJointState, tube: f64) -> LegJacobian {
    let t = Trig::new(&q.q);
    let m = geom.side.sign();
    let (l1, l2, l3) = (geom.l1, geom.l2, geom.l3);
    let x = l2 * t.s2 + l3 * t.s23;
    let ell = l2 * t.c2 + l3 * t.c23 + tube;
    let mut j = LegJacobian::zeros();
    j[(0, 0)] = 0.0;
    j[(1, 0)] = -m * l1 * t.s1 + t.c1 * ell;
    j[(2, 0)] = m * l1 * t.c1 + t.s1 * ell;
    j[(0, 1)] = l2 * t.c2 + l3 * t.c23;
    j[(1, 1)] = -t.s1 * x;
    j[(2, 1)] = t.c1 * x;
    j[(0, 2)] = l3 * t.c23;
    j[(1, 2)] = -t.s1 * l3 * t.s23;
    j[(2, 2)] = t.c1 * l3 * t.s23;
    j
}

/// Jacobian of [`contact_position`]; the wheel column is zero.
pub fn leg_jacobian(geom: &LegGeometry, q: &LegJointState) -> LegJacobian {
    chain_jacobian_with_tube(geom, q, geom.r())
}

/// Jacobian of [`chain_tip`].
pub fn chain_jacobian(geom: &LegGeometry, q: &LegJointState) -> LegJacobian {
    chain_jacobian_with_tube(geom, q, 0.0)
}

/// Lever arm between the wheel axle and the contact point.
pub fn effective_radius(geom: &LegGeometry, q1: f64, roll: f64) -> f64 {
    geom.a_end - geom.b_end * (q1 + roll).sin()
}

/// Rolling contribution of the wheel to the contact velocity, in the
/// heading-aligned body frame.
pub fn wheel_contact_velocity(geom: &LegGeometry, q: &LegJointState, att: &BaseAttitude) -> Vec3 {
    let r_eff = effective_radius(geom, q.q[0], att.roll);
    let spin = att.pitch_rate * q.q[0].cos() + q.qdot[1] + q.qdot[2] + q.qdot[3];
    Vec3::new(spin * r_eff, (att.roll_rate + q.qdot[0]) * geom.b_end, 0.0)
}

fn first_three(j: &LegJacobian, qdot: &[f64; 4]) -> Vec3 {
    j * nalgebra::Vector4::from_column_slice(qdot)
}

/// Full contact kinematics of one leg.
///
/// `pdot_cp_k` is the world-frame velocity of the body-attached contact
/// point relative to the body origin: `R (J q̇ + ω × p)`.
pub fn contact_velocity(geom: &LegGeometry, q: &LegJointState, att: &BaseAttitude) -> ContactKinematics {
    let jacobian = leg_jacobian(geom, q);
    let p_cp = geom.hip_offset + contact_position(geom, q);
    let rel_body = first_three(&jacobian, &q.qdot) + att.omega.cross(&p_cp);
    let pdot_cp_k = att.rotation * rel_body;
    let pdot_cp_w = att.rotation * wheel_contact_velocity(geom, q, att);
    ContactKinematics {
        p_cp,
        pdot_cp_k,
        pdot_cp_w,
        pdot_cp: pdot_cp_k + pdot_cp_w,
        r_eff: effective_radius(geom, q.q[0], att.roll),
        jacobian,
    }
}

/// Contact kinematics of the point-foot model: the wheel centre is taken as
/// the contact and wheel rolling is ignored.
pub fn point_foot_velocity(geom: &LegGeometry, q: &LegJointState, att: &BaseAttitude) -> ContactKinematics {
    let jacobian = chain_jacobian(geom, q);
    let p_cp = geom.hip_offset + chain_tip(geom, q);
    let rel_body = first_three(&jacobian, &q.qdot) + att.omega.cross(&p_cp);
    let pdot_cp_k = att.rotation * rel_body;
    ContactKinematics {
        p_cp,
        pdot_cp_k,
        pdot_cp_w: Vec3::zeros(),
        pdot_cp: pdot_cp_k,
        r_eff: geom.a_end,
        jacobian,
    }
}

/// Settings for [`leg_ik`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkOptions {
    pub branch: KneeBranch,
    /// Fraction of `l2 + l3` beyond which the leg counts as near-singular.
    pub singularity_ratio: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self { branch: KneeBranch::Backward, singularity_ratio: 0.97 }
    }
}

/// True when the leg is stretched past the soft-stop threshold.
pub fn is_near_singular(geom: &LegGeometry, q: &LegJointState, singularity_ratio: f64) -> bool {
    geom.extension(q) >= singularity_ratio * geom.max_extension()
}

/// Joint angles placing the contact point at `target` (leg frame).
///
/// Solves on the branch with the wheel centre below the ab/ad axis
/// (`l2 cos q2 + l3 cos(q2 + q3) + r > 0`); folded poses with the foot
/// above the hip are not returned. Joint velocities and the wheel angle are
/// zero.
pub fn leg_ik(geom: &LegGeometry, target: &Vec3, opts: &IkOptions) -> Result<LegJointState, KinematicsError> {
    let unreachable = || KinematicsError::Unreachable { target: [target.x, target.y, target.z] };
    let m = geom.side.sign();
    let y = target.y;
    let zt = target.z + geom.b_end;
    let lat_sq = y * y + zt * zt - geom.l1 * geom.l1;
    if !(lat_sq > 0.0) {
        return Err(unreachable());
    }
    // (y, zt) is (m l1, -ell) rotated by q1.
    let ell = lat_sq.sqrt();
    let q1 = wrap_angle(zt.atan2(y) - (-ell).atan2(m * geom.l1));

    let x = target.x;
    let planar = ell - geom.r();
    let d_sq = x * x + planar * planar;
    let (l2, l3) = (geom.l2, geom.l3);
    let c3 = (d_sq - l2 * l2 - l3 * l3) / (2.0 * l2 * l3);
    if !(-1.0..=1.0).contains(&c3) {
        return Err(unreachable());
    }
    let extension = d_sq.sqrt();
    if extension >= opts.singularity_ratio * geom.max_extension() {
        return Err(KinematicsError::NearSingular { target: [target.x, target.y, target.z], extension });
    }
    let q3 = match opts.branch {
        KneeBranch::Backward => c3.acos(),
        KneeBranch::Forward => -c3.acos(),
    };
    let q2 = x.atan2(planar) - (l3 * q3.sin()).atan2(l2 + l3 * q3.cos());
    Ok(LegJointState::at_rest([q1, wrap_angle(q2), q3, 0.0]))
}

/// Joint rates of the first three joints producing the leg-frame contact
/// velocity `v` at configuration `q`.
pub fn leg_joint_rates(geom: &LegGeometry, q: &LegJointState, v: &Vec3) -> Option<Vec3> {
    let j = leg_jacobian(geom, q);
    let j3: Mat3 = j.fixed_view::<3, 3>(0, 0).into_owned();
    j3.lu().solve(v)
}

/// Four legs in FR, FL, RR, RL order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrupedModel {
    pub legs: [LegGeometry; 4],
    pub ik: IkOptions,
}

impl Default for QuadrupedModel {
    fn default() -> Self {
        Self::symmetric(LegGeometry::default(), 0.19, 0.049, IkOptions::default())
            .expect("default geometry is valid")
    }
}

impl QuadrupedModel {
    /// Mirrors one leg design onto the four corners of a body with hips at
    /// (±hip_x, ±hip_y, 0).
    pub fn symmetric(base: LegGeometry, hip_x: f64, hip_y: f64, ik: IkOptions) -> Result<Self, KinematicsError> {
        base.validate()?;
        let corner = |x: f64, side: Side| LegGeometry { side, hip_offset: Vec3::new(x, side.sign() * hip_y, 0.0), ..base };
        Ok(Self {
            legs: [
                corner(hip_x, Side::Right),
                corner(hip_x, Side::Left),
                corner(-hip_x, Side::Right),
                corner(-hip_x, Side::Left),
            ],
            ik,
        })
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if w <= -std::f64::consts::PI {
        w += two_pi;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_pose_contact() {
        let g = LegGeometry::default();
        let p = contact_position(&g, &LegJointState::default());
        assert_abs_diff_eq!(p, Vec3::new(0.0, 0.062, -0.449), epsilon = 1e-15);
    }

    #[test]
    fn cylinder_edge_drops_by_b_end() {
        let mut g = LegGeometry::default();
        g.b_end = g.a_end;
        let q = LegJointState::at_rest([0.0, 0.3, 0.6, 0.0]);
        let d = chain_tip(&g, &q) - contact_position(&g, &q);
        assert_abs_diff_eq!(d, Vec3::new(0.0, 0.0, g.b_end), epsilon = 1e-15);
    }

    #[test]
    fn ball_foot_sits_a_end_below_tip() {
        let g = LegGeometry { a_end: 0.025, b_end: 0.0, ..LegGeometry::default() };
        let q = LegJointState::at_rest([0.0, -0.4, 1.1, 0.0]);
        let d = chain_tip(&g, &q) - contact_position(&g, &q);
        assert_abs_diff_eq!(d, Vec3::new(0.0, 0.0, 0.025), epsilon = 1e-15);
    }

    #[test]
    fn wheel_column_is_zero_and_jw_matches() {
        let g = LegGeometry::default();
        let q = LegJointState::at_rest([0.0, 0.2, 0.9, 1.3]);
        let j = leg_jacobian(&g, &q);
        assert_eq!(j.column(3).norm(), 0.0);
        let jw = j - chain_jacobian(&g, &q);
        let r = g.r();
        let expected = SMatrix::<f64, 3, 4>::new(0.0, 0.0, 0.0, 0.0, r, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_abs_diff_eq!(jw, expected, epsilon = 1e-15);
    }

    #[test]
    fn effective_radius_examples() {
        let g = LegGeometry::default();
        assert_abs_diff_eq!(effective_radius(&g, 0.0, 0.0), 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(effective_radius(&g, 0.3, FRAC_PI_2 - 0.3), 0.03, epsilon = 1e-15);
    }

    #[test]
    fn wheel_velocity_examples() {
        let g = LegGeometry::default();
        let att = BaseAttitude::level();
        let still = LegJointState::at_rest([0.0; 4]);
        assert_eq!(wheel_contact_velocity(&g, &still, &att), Vec3::zeros());

        let spin = LegJointState::new([0.0; 4], [0.0, 0.0, 0.0, 10.0]);
        assert_abs_diff_eq!(wheel_contact_velocity(&g, &spin, &att), Vec3::new(0.5, 0.0, 0.0), epsilon = 1e-15);

        let mut rolling = BaseAttitude::level();
        rolling.roll_rate = 1.0;
        let counter = LegJointState::new([0.0; 4], [-1.0, 0.0, 0.0, 0.0]);
        assert_eq!(wheel_contact_velocity(&g, &counter, &rolling).y, 0.0);
    }

    #[test]
    fn contact_velocity_decomposition() {
        let g = LegGeometry::default().with_hip_offset(Vec3::new(0.19, 0.049, 0.0));
        let still = contact_velocity(&g, &LegJointState::at_rest([0.1, -0.5, 1.2, 0.0]), &BaseAttitude::level());
        assert_eq!(still.pdot_cp, Vec3::zeros());

        let spin = LegJointState::new([0.0, -0.5, 1.2, 0.0], [0.0, 0.0, 0.0, 7.0]);
        let ck = contact_velocity(&g, &spin, &BaseAttitude::level());
        assert_eq!(ck.pdot_cp_k, Vec3::zeros());
        assert_eq!(ck.pdot_cp, ck.pdot_cp_w);
    }

    #[test]
    fn ik_inverts_zero_pose() {
        let g = LegGeometry::default();
        let q = leg_ik(
            &g,
            &Vec3::new(0.0, 0.062, -0.449),
            &IkOptions { singularity_ratio: 1.01, ..IkOptions::default() },
        )
        .unwrap();
        for v in &q.q {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn ik_rejects_overstretch() {
        let g = LegGeometry::default();
        let reach = g.l2 + g.l3 + g.a_end;
        let target = Vec3::new(0.0, 0.062, -(reach + 0.001));
        let opts = IkOptions { singularity_ratio: 1.0 + 1e-9, ..IkOptions::default() };
        assert!(matches!(leg_ik(&g, &target, &opts), Err(KinematicsError::Unreachable { .. })));
    }

    #[test]
    fn ik_flags_soft_stop() {
        let g = LegGeometry::default();
        let target = Vec3::new(0.0, 0.062, -(0.985 * (g.l2 + g.l3) + g.a_end));
        assert!(matches!(
            leg_ik(&g, &target, &IkOptions::default()),
            Err(KinematicsError::NearSingular { .. })
        ));
    }

    #[test]
    fn geometry_validation() {
        assert!(LegGeometry::new(0.062, 0.209, 0.19, 0.05, 0.06, Side::Left).is_err());
        assert!(LegGeometry::new(0.0, 0.209, 0.19, 0.05, 0.02, Side::Left).is_err());
        assert!(LegGeometry::new(0.062, 0.209, 0.19, 0.05, 0.02, Side::Right).is_ok());
    }

    #[test]
    fn euler_extraction_round_trips() {
        let r = rotation_zyx(0.7, -0.2, 0.35);
        let att = BaseAttitude::from_rotation(r, Vec3::zeros());
        assert_abs_diff_eq!(att.pitch, -0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(att.roll, 0.35, epsilon = 1e-12);
        assert_abs_diff_eq!((r.transpose() * r), Mat3::identity(), epsilon = 1e-12);
    }
}
