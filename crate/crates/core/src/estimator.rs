//! Linear Kalman filter over body position/velocity, the driving share of
//! both, and four contact positions.
//!
//! State layout (all world frame):
//! ```text
//!  [0..3)   p        body position
//!  [3..6)   ṗ        body velocity
//!  [6..9)   p_drive  position gained by wheel driving
//!  [9..12)  ṗ_drive  velocity from wheel driving
//!  [12..24) contact positions of FR, FL, RR, RL
//! ```
//! A contact state holds the world contact position minus `p_drive`, so a
//! rolling stance wheel keeps a constant state. Measurements are stacked
//! as 12 position rows (contact → body vector), 12 kinematic velocity rows
//! and 12 driving velocity rows.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{gait_velocity, GRAVITY};
use crate::gait::{apply_limit_override, contact_schedule, ContactState, GaitSchedule, NUM_LEGS};
use crate::kinematics::{
    contact_velocity, is_near_singular, point_foot_velocity, BaseAttitude, ContactKinematics, LegJointState, Mat3,
    QuadrupedModel, Vec3,
};
use crate::trust::{covariance_gain, height_trust, phase_trust, trust_matrix, CovGain, TrustError, TrustParams};

pub const STATE_DIM: usize = 24;
pub const MEAS_DIM: usize = 36;

pub const POS: usize = 0;
pub const VEL: usize = 3;
pub const DRIVE_POS: usize = 6;
pub const DRIVE_VEL: usize = 9;
pub const CONTACT: usize = 12;

pub const MEAS_POS: usize = 0;
pub const MEAS_KIN: usize = 12;
pub const MEAS_WHEEL: usize = 24;

pub type StateVec = SVector<f64, STATE_DIM>;
pub type StateCov = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type MeasVec = SVector<f64, MEAS_DIM>;
pub type ObsMatrix = SMatrix<f64, MEAS_DIM, STATE_DIM>;
pub type MeasCov = SMatrix<f64, MEAS_DIM, MEAS_DIM>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("invalid estimator configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Trust(#[from] TrustError),
    #[error("initial covariance scale must be positive, got {0}")]
    CovarianceScale(f64),
    #[error("estimator used before initialisation")]
    NotInitialized,
    #[error("timestep {dt} at t={t} outside (0, {max}]")]
    Timestep { t: f64, dt: f64, max: f64 },
    #[error("non-finite value after {stage} at t={t}")]
    NonFinite { t: f64, stage: &'static str },
    #[error("innovation covariance not invertible at t={t}")]
    SingularInnovation { t: f64 },
}

/// Process noise densities (scaled by dt) and measurement variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    pub q_p: f64,
    pub q_pdot: f64,
    pub q_dp: f64,
    pub q_dpdot: f64,
    pub q_pcp: f64,
    pub r_pcp: f64,
    pub r_pdotk: f64,
    pub r_pdotw: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            q_p: 1e-4,
            q_pdot: 1e-3,
            q_dp: 1e-4,
            q_dpdot: 1e-3,
            // Loose enough that swing contacts track their measurements;
            // tighter values let lagging footholds drag the body position.
            q_pcp: 1e-1,
            r_pcp: 1e-4,
            r_pdotk: 1e-3,
            r_pdotw: 1e-3,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let all = [self.q_p, self.q_pdot, self.q_dp, self.q_dpdot, self.q_pcp, self.r_pcp, self.r_pdotk, self.r_pdotw];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(EstimatorError::Config("noise parameters must be positive and finite".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x: StateVec,
    pub cov: StateCov,
}

impl FilterState {
    pub fn new(x0: StateVec, p0_scale: f64) -> Result<Self, EstimatorError> {
        if !(p0_scale > 0.0 && p0_scale.is_finite()) {
            return Err(EstimatorError::CovarianceScale(p0_scale));
        }
        Ok(Self { x: x0, cov: StateCov::identity() * p0_scale })
    }

    fn block(&self, at: usize) -> Vec3 {
        self.x.fixed_rows::<3>(at).into_owned()
    }

    pub fn position(&self) -> Vec3 {
        self.block(POS)
    }
    pub fn velocity(&self) -> Vec3 {
        self.block(VEL)
    }
    pub fn drive_position(&self) -> Vec3 {
        self.block(DRIVE_POS)
    }
    pub fn drive_velocity(&self) -> Vec3 {
        self.block(DRIVE_VEL)
    }
    pub fn contact(&self, leg: usize) -> Vec3 {
        self.block(CONTACT + 3 * leg)
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite()) && self.cov.iter().all(|v| v.is_finite())
    }
}

/// Net world-frame acceleration from a specific-force sample.
pub fn gravity_compensate(a_imu: &Vec3, rotation: &Mat3) -> Vec3 {
    rotation * a_imu - Vec3::new(0.0, 0.0, GRAVITY)
}

pub fn transition_matrix(dt: f64) -> StateCov {
    let mut f = StateCov::identity();
    for i in 0..3 {
        f[(POS + i, VEL + i)] = dt;
        f[(DRIVE_POS + i, DRIVE_VEL + i)] = dt;
    }
    f
}

pub fn input_matrix(dt: f64) -> SMatrix<f64, STATE_DIM, 3> {
    let mut b = SMatrix::<f64, STATE_DIM, 3>::zeros();
    for i in 0..3 {
        b[(VEL + i, i)] = dt;
    }
    b
}

pub fn observation_matrix() -> ObsMatrix {
    let mut h = ObsMatrix::zeros();
    for leg in 0..NUM_LEGS {
        for i in 0..3 {
            let row = 3 * leg + i;
            h[(MEAS_POS + row, POS + i)] = 1.0;
            h[(MEAS_POS + row, DRIVE_POS + i)] = -1.0;
            h[(MEAS_POS + row, CONTACT + row)] = -1.0;
            h[(MEAS_KIN + row, VEL + i)] = 1.0;
            h[(MEAS_KIN + row, DRIVE_VEL + i)] = -1.0;
            h[(MEAS_WHEEL + row, DRIVE_VEL + i)] = 1.0;
        }
    }
    h
}

fn xi_diagonal(xi: &CovGain) -> [f64; 12] {
    std::array::from_fn(|i| xi[(i, i)])
}

pub fn process_noise(np: &NoiseParams, xi: &CovGain, dt: f64) -> StateCov {
    let mut q = StateCov::zeros();
    let xi = xi_diagonal(xi);
    for i in 0..3 {
        q[(POS + i, POS + i)] = np.q_p * dt;
        q[(VEL + i, VEL + i)] = np.q_pdot * dt;
        q[(DRIVE_POS + i, DRIVE_POS + i)] = np.q_dp * dt;
        q[(DRIVE_VEL + i, DRIVE_VEL + i)] = np.q_dpdot * dt;
    }
    for (j, g) in xi.iter().enumerate() {
        q[(CONTACT + j, CONTACT + j)] = np.q_pcp * dt * g;
    }
    q
}

pub fn measurement_noise(np: &NoiseParams, xi: &CovGain) -> MeasCov {
    let mut r = MeasCov::zeros();
    for (j, g) in xi_diagonal(xi).iter().enumerate() {
        r[(MEAS_POS + j, MEAS_POS + j)] = np.r_pcp * g;
        r[(MEAS_KIN + j, MEAS_KIN + j)] = np.r_pdotk * g;
        r[(MEAS_WHEEL + j, MEAS_WHEEL + j)] = np.r_pdotw * g;
    }
    r
}

fn symmetrize(cov: &mut StateCov) {
    let t = cov.transpose();
    *cov = (*cov + t) * 0.5;
}

pub fn predict(s: &FilterState, u: &Vec3, dt: f64, np: &NoiseParams, xi: &CovGain) -> Result<FilterState, EstimatorError> {
    let f = transition_matrix(dt);
    let x = f * s.x + input_matrix(dt) * u;
    let mut cov = f * s.cov * f.transpose() + process_noise(np, xi, dt);
    symmetrize(&mut cov);
    let out = FilterState { x, cov };
    if out.is_finite() {
        Ok(out)
    } else {
        Err(EstimatorError::NonFinite { t: f64::NAN, stage: "predict" })
    }
}

pub fn correct(s: &FilterState, z: &MeasVec, np: &NoiseParams, xi: &CovGain) -> Result<FilterState, EstimatorError> {
    let h = observation_matrix();
    let innovation = z - h * s.x;
    let hp = h * s.cov;
    let mut innov_cov = hp * h.transpose() + measurement_noise(np, xi);
    // Relative per-row jitter, so an inflated leg does not perturb the rest.
    for i in 0..MEAS_DIM {
        innov_cov[(i, i)] *= 1.0 + 1e-12;
    }
    let chol = innov_cov
        .cholesky()
        .ok_or(EstimatorError::SingularInnovation { t: f64::NAN })?;
    // Kᵀ = S⁻¹ H P, using the symmetry of S and P.
    let gain_t = chol.solve(&hp);
    let x = s.x + gain_t.transpose() * innovation;
    let mut cov = s.cov - hp.transpose() * gain_t;
    symmetrize(&mut cov);
    let out = FilterState { x, cov };
    if out.is_finite() {
        Ok(out)
    } else {
        Err(EstimatorError::NonFinite { t: f64::NAN, stage: "correct" })
    }
}

/// Which contact model feeds the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContactModel {
    /// Torus wheel contact point plus wheel rolling velocity.
    WheelAware,
    /// Wheel centre as a point foot, no wheel terms.
    Baseline,
}

impl ContactModel {
    pub fn name(self) -> &'static str {
        match self {
            ContactModel::WheelAware => "wheel-aware",
            ContactModel::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrustMode {
    /// Phase and height trust.
    Full,
    /// Phase trust only; height trust pinned to 1.
    PhaseOnly,
    /// Every leg fully trusted: ξ = I.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub noise: NoiseParams,
    pub trust: TrustParams,
    pub trust_mode: TrustMode,
    pub model: ContactModel,
    /// Replace untrusted velocity measurements by the prediction in
    /// proportion to distrust.
    pub blend_untrusted: bool,
    pub p0_scale: f64,
    pub max_dt: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            noise: NoiseParams::default(),
            trust: TrustParams::default(),
            trust_mode: TrustMode::Full,
            model: ContactModel::WheelAware,
            blend_untrusted: true,
            p0_scale: 1e-6,
            max_dt: 0.1,
        }
    }
}

/// One timestep of sensor data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorFrame {
    pub t: f64,
    /// Specific force in the body frame.
    pub accel: Vec3,
    /// Body angular velocity in the body frame.
    pub gyro: Vec3,
    /// Body-to-world orientation reported by the IMU.
    pub rotation: Mat3,
    pub joints: [LegJointState; NUM_LEGS],
    /// Expected contacts from the gait planner when the frame was recorded.
    pub expected_contact: [bool; NUM_LEGS],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub drive_position: Vec3,
    pub drive_velocity: Vec3,
    pub gait_velocity: Vec3,
    pub contacts: [Vec3; NUM_LEGS],
    /// Combined vertical trust C_φ·C_z per leg.
    pub trust: [f64; NUM_LEGS],
    pub s_hat: [bool; NUM_LEGS],
    pub phi_c: [f64; NUM_LEGS],
    pub rotation: Mat3,
}

/// Known initial body state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InitialBody {
    pub position: Vec3,
    pub velocity: Vec3,
    pub drive_velocity: Vec3,
}

/// Running covariance health figures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterHealth {
    pub steps: u64,
    /// Largest ‖P − Pᵀ‖∞ seen.
    pub max_asymmetry: f64,
    /// Steps where P + 1e-9·I failed a Cholesky factorisation.
    pub psd_violations: u64,
    /// Smallest eigenvalue over the sampled steps.
    pub min_eigenvalue: f64,
    /// Largest |v_gait − (ṗ − ṗ_drive)| component seen.
    pub max_gait_identity_error: f64,
}

impl Default for FilterHealth {
    fn default() -> Self {
        Self {
            steps: 0,
            max_asymmetry: 0.0,
            psd_violations: 0,
            min_eigenvalue: f64::INFINITY,
            max_gait_identity_error: 0.0,
        }
    }
}

const PSD_TOLERANCE: f64 = 1e-9;
const EIGEN_SAMPLE_EVERY: u64 = 250;

impl FilterHealth {
    fn observe(&mut self, cov: &StateCov) {
        self.steps += 1;
        let asym = (cov - cov.transpose()).abs().max();
        self.max_asymmetry = self.max_asymmetry.max(asym);
        let shifted = cov + StateCov::identity() * PSD_TOLERANCE;
        let chol_ok = shifted.cholesky().is_some();
        if !chol_ok {
            self.psd_violations += 1;
        }
        if !chol_ok || self.steps % EIGEN_SAMPLE_EVERY == 1 {
            let sym = (cov + cov.transpose()) * 0.5;
            let min = sym.symmetric_eigenvalues().min();
            self.min_eigenvalue = self.min_eigenvalue.min(min);
        }
    }

    pub fn merge(&mut self, other: &FilterHealth) {
        self.steps += other.steps;
        self.max_asymmetry = self.max_asymmetry.max(other.max_asymmetry);
        self.psd_violations += other.psd_violations;
        self.min_eigenvalue = self.min_eigenvalue.min(other.min_eigenvalue);
        self.max_gait_identity_error = self.max_gait_identity_error.max(other.max_gait_identity_error);
    }

    pub fn is_healthy(&self) -> bool {
        self.psd_violations == 0
            && self.max_asymmetry < PSD_TOLERANCE
            && self.min_eigenvalue >= -PSD_TOLERANCE
            && self.max_gait_identity_error == 0.0
    }
}

/// Measurement vector plus the per-leg kinematics it came from.
#[derive(Debug, Clone, Copy)]
pub struct Measurements {
    pub z: MeasVec,
    pub legs: [ContactKinematics; NUM_LEGS],
    pub near_singular: [bool; NUM_LEGS],
}

/// Builds the measurement vector from one sensor frame.
pub fn measure(robot: &QuadrupedModel, model: ContactModel, frame: &SensorFrame) -> Measurements {
    let att = BaseAttitude::from_rotation(frame.rotation, frame.gyro);
    let legs: [ContactKinematics; NUM_LEGS] = std::array::from_fn(|leg| {
        let geom = &robot.legs[leg];
        let q = &frame.joints[leg];
        match model {
            ContactModel::WheelAware => contact_velocity(geom, q, &att),
            ContactModel::Baseline => point_foot_velocity(geom, q, &att),
        }
    });
    let mut z = MeasVec::zeros();
    for (leg, ck) in legs.iter().enumerate() {
        let pos = -(frame.rotation * ck.p_cp);
        let kin = -ck.pdot_cp_k;
        z.fixed_rows_mut::<3>(MEAS_POS + 3 * leg).copy_from(&pos);
        z.fixed_rows_mut::<3>(MEAS_KIN + 3 * leg).copy_from(&kin);
        z.fixed_rows_mut::<3>(MEAS_WHEEL + 3 * leg).copy_from(&ck.pdot_cp_w);
    }
    let near_singular =
        std::array::from_fn(|leg| is_near_singular(&robot.legs[leg], &frame.joints[leg], robot.ik.singularity_ratio));
    Measurements { z, legs, near_singular }
}

/// Per-leg trust for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustSnapshot {
    pub contact: ContactState,
    pub phase: [f64; NUM_LEGS],
    pub height: [f64; NUM_LEGS],
    pub matrices: [Mat3; NUM_LEGS],
    pub ground_reference: f64,
}

/// Wires kinematics, gait, trust and the filter into one estimation loop.
#[derive(Debug, Clone)]
pub struct Estimator {
    cfg: EstimatorConfig,
    robot: QuadrupedModel,
    gait: GaitSchedule,
    state: Option<FilterState>,
    last_t: f64,
    ground_reference: f64,
    height_prev: [f64; NUM_LEGS],
    health: FilterHealth,
}

impl Estimator {
    pub fn new(cfg: EstimatorConfig, robot: QuadrupedModel, gait: GaitSchedule) -> Result<Self, EstimatorError> {
        cfg.noise.validate()?;
        cfg.trust.validate()?;
        if !(cfg.p0_scale > 0.0 && cfg.p0_scale.is_finite()) {
            return Err(EstimatorError::CovarianceScale(cfg.p0_scale));
        }
        if !(cfg.max_dt > 0.0) {
            return Err(EstimatorError::Config("max_dt must be positive".into()));
        }
        gait.validate().map_err(|e| EstimatorError::Config(e.to_string()))?;
        Ok(Self {
            cfg,
            robot,
            gait,
            state: None,
            last_t: f64::NAN,
            ground_reference: 0.0,
            height_prev: [1.0; NUM_LEGS],
            health: FilterHealth::default(),
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    pub fn state(&self) -> Option<&FilterState> {
        self.state.as_ref()
    }

    pub fn health(&self) -> &FilterHealth {
        &self.health
    }

    /// Seeds the filter from a known body state and the first frame's leg
    /// kinematics, so the first innovation is zero on consistent data.
    pub fn initialize(&mut self, frame: &SensorFrame, body: &InitialBody) -> Result<Estimate, EstimatorError> {
        let meas = measure(&self.robot, self.cfg.model, frame);
        let mut x = StateVec::zeros();
        x.fixed_rows_mut::<3>(POS).copy_from(&body.position);
        x.fixed_rows_mut::<3>(VEL).copy_from(&body.velocity);
        x.fixed_rows_mut::<3>(DRIVE_VEL).copy_from(&body.drive_velocity);
        for leg in 0..NUM_LEGS {
            let rel = meas.z.fixed_rows::<3>(MEAS_POS + 3 * leg).into_owned();
            x.fixed_rows_mut::<3>(CONTACT + 3 * leg).copy_from(&(body.position - rel));
        }
        let state = FilterState::new(x, self.cfg.p0_scale)?;

        let cs = apply_limit_override(contact_schedule(&self.gait, frame.t), meas.near_singular);
        let mut num = 0.0;
        let mut den = 0.0;
        for leg in 0..NUM_LEGS {
            let w = phase_trust(cs.phi_c[leg], cs.s_hat[leg], self.cfg.trust.window);
            num += w * state.contact(leg).z;
            den += w;
        }
        self.ground_reference = if den > 1e-9 {
            num / den
        } else {
            (0..NUM_LEGS).map(|l| state.contact(l).z).sum::<f64>() / NUM_LEGS as f64
        };
        self.height_prev = [1.0; NUM_LEGS];
        self.last_t = frame.t;
        self.state = Some(state);
        let trust = self.trust(&cs);
        Ok(self.estimate(frame, &trust))
    }

    /// Trust for the current step; also advances the ground reference.
    fn trust(&mut self, cs: &ContactState) -> TrustSnapshot {
        let state = self.state.as_ref().expect("initialised");
        let params = &self.cfg.trust;
        let phase: [f64; NUM_LEGS] = std::array::from_fn(|l| phase_trust(cs.phi_c[l], cs.s_hat[l], params.window));

        let mut num = 0.0;
        let mut den = 0.0;
        for leg in 0..NUM_LEGS {
            let w = phase[leg] * self.height_prev[leg];
            num += w * state.contact(leg).z;
            den += w;
        }
        if den > 1e-9 {
            self.ground_reference = num / den;
        }
        let height: [f64; NUM_LEGS] = match self.cfg.trust_mode {
            TrustMode::Full => {
                std::array::from_fn(|l| height_trust(state.contact(l).z - self.ground_reference, params))
            }
            TrustMode::PhaseOnly | TrustMode::Off => [1.0; NUM_LEGS],
        };
        self.height_prev = height;
        let matrices = match self.cfg.trust_mode {
            TrustMode::Off => [Mat3::identity(); NUM_LEGS],
            _ => std::array::from_fn(|l| trust_matrix(phase[l], height[l])),
        };
        TrustSnapshot { contact: *cs, phase, height, matrices, ground_reference: self.ground_reference }
    }

    pub fn step(&mut self, frame: &SensorFrame) -> Result<Estimate, EstimatorError> {
        let state = self.state.clone().ok_or(EstimatorError::NotInitialized)?;
        let t = frame.t;
        let dt = t - self.last_t;
        if !(dt > 0.0 && dt <= self.cfg.max_dt) {
            return Err(EstimatorError::Timestep { t, dt, max: self.cfg.max_dt });
        }
        let meas = measure(&self.robot, self.cfg.model, frame);
        if !meas.z.iter().all(|v| v.is_finite()) {
            return Err(EstimatorError::NonFinite { t, stage: "measurement" });
        }
        let cs = apply_limit_override(contact_schedule(&self.gait, t), meas.near_singular);
        let trust = self.trust(&cs);
        let xi = covariance_gain(&trust.matrices, self.cfg.trust.kappa);

        let u = gravity_compensate(&frame.accel, &frame.rotation);
        let with_time = |e: EstimatorError| match e {
            EstimatorError::NonFinite { stage, .. } => EstimatorError::NonFinite { t, stage },
            EstimatorError::SingularInnovation { .. } => EstimatorError::SingularInnovation { t },
            other => other,
        };
        let predicted = predict(&state, &u, dt, &self.cfg.noise, &xi).map_err(with_time)?;

        let mut z = meas.z;
        if self.cfg.blend_untrusted && self.cfg.trust_mode != TrustMode::Off {
            let expected = observation_matrix() * predicted.x;
            for leg in 0..NUM_LEGS {
                for axis in 0..3 {
                    let c = trust.matrices[leg][(axis, axis)];
                    for block in [MEAS_KIN, MEAS_WHEEL] {
                        let i = block + 3 * leg + axis;
                        z[i] = c * z[i] + (1.0 - c) * expected[i];
                    }
                }
            }
        }
        let corrected = correct(&predicted, &z, &self.cfg.noise, &xi).map_err(with_time)?;
        self.health.observe(&corrected.cov);
        self.state = Some(corrected);
        self.last_t = t;
        let est = self.estimate(frame, &trust);
        let identity_err = (gait_velocity(&est.velocity, &est.drive_velocity) - est.gait_velocity).abs().max();
        self.health.max_gait_identity_error = self.health.max_gait_identity_error.max(identity_err);
        Ok(est)
    }

    fn estimate(&self, frame: &SensorFrame, trust: &TrustSnapshot) -> Estimate {
        let s = self.state.as_ref().expect("initialised");
        let velocity = s.velocity();
        let drive_velocity = s.drive_velocity();
        Estimate {
            t: frame.t,
            position: s.position(),
            velocity,
            drive_position: s.drive_position(),
            drive_velocity,
            gait_velocity: gait_velocity(&velocity, &drive_velocity),
            contacts: std::array::from_fn(|l| s.contact(l)),
            trust: std::array::from_fn(|l| trust.matrices[l][(2, 2)]),
            s_hat: trust.contact.s_hat,
            phi_c: trust.contact.phi_c,
            rotation: frame.rotation,
        }
    }
}
