//! Contact trust: gait-phase trust, contact-height trust, the per-leg trust
//! matrix and the 12×12 noise covariance gain built from them.

use nalgebra::{SMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gait::NUM_LEGS;
use crate::kinematics::Mat3;

pub type CovGain = SMatrix<f64, 12, 12>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrustError {
    #[error("mistrust window must lie in (0, 1], got {0}")]
    Window(f64),
    #[error("distrust gains must satisfy k_plus > k_minus >= 0 (got k_plus={k_plus}, k_minus={k_minus})")]
    Gains { k_plus: f64, k_minus: f64 },
    #[error("suspect inflation kappa must be positive and finite, got {0}")]
    Kappa(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustParams {
    /// Mistrust window at both ends of the contact phase.
    pub window: f64,
    /// Distrust gain for contacts above the ground reference, 1/m².
    pub k_plus: f64,
    /// Distrust gain for contacts below the ground reference, 1/m².
    pub k_minus: f64,
    /// Noise inflation for fully untrusted legs.
    pub kappa: f64,
}

impl Default for TrustParams {
    fn default() -> Self {
        Self { window: 0.2, k_plus: 400.0, k_minus: 100.0, kappa: 100.0 }
    }
}

impl TrustParams {
    pub fn validate(&self) -> Result<(), TrustError> {
        if !(self.window > 0.0 && self.window <= 1.0) {
            return Err(TrustError::Window(self.window));
        }
        if !(self.k_plus > self.k_minus && self.k_minus >= 0.0 && self.k_plus.is_finite()) {
            return Err(TrustError::Gains { k_plus: self.k_plus, k_minus: self.k_minus });
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(TrustError::Kappa(self.kappa));
        }
        Ok(())
    }
}

/// Gait-phase trust. Zero for legs not expected in contact, near one in
/// mid-stance, rolling off inside the mistrust window at both ends.
pub fn phase_trust(phi_c: f64, s_hat: bool, window: f64) -> f64 {
    if !s_hat {
        return 0.0;
    }
    let rise = libm::erf(4.0 * phi_c / window - 2.0);
    let fall = libm::erf(4.0 * (1.0 - phi_c) / window - 2.0);
    (0.5 * (rise + fall)).clamp(0.0, 1.0)
}

/// Height trust of a contact `z_cp` metres above the ground reference.
pub fn height_trust(z_cp: f64, p: &TrustParams) -> f64 {
    let k = if z_cp >= 0.0 { p.k_plus } else { p.k_minus };
    (-k * z_cp * z_cp).exp()
}

pub fn trust_matrix(c_phi: f64, c_z: f64) -> Mat3 {
    Mat3::from_diagonal(&Vector3::new(c_phi, c_phi, c_phi * c_z))
}

/// `I + kappa (I - blockdiag(C¹..C⁴))`.
pub fn covariance_gain(trust: &[Mat3; NUM_LEGS], kappa: f64) -> CovGain {
    let mut xi = CovGain::identity();
    for (leg, c) in trust.iter().enumerate() {
        let block = Mat3::identity() * (1.0 + kappa) - c * kappa;
        xi.fixed_view_mut::<3, 3>(3 * leg, 3 * leg).copy_from(&block);
    }
    xi
}

/// Diagonal of [`covariance_gain`] for diagonal trust matrices.
pub fn covariance_gain_diagonal(trust: &[Mat3; NUM_LEGS], kappa: f64) -> [f64; 12] {
    let mut d = [1.0; 12];
    for (leg, c) in trust.iter().enumerate() {
        for axis in 0..3 {
            d[3 * leg + axis] = 1.0 + kappa * (1.0 - c[(axis, axis)]);
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn phase_trust_examples() {
        assert_eq!(phase_trust(0.37, false, 0.2), 0.0);
        assert_abs_diff_eq!(phase_trust(0.5, true, 0.2), 1.0, epsilon = 1e-12);
        // 0.5 * (erf(-2) + erf(18)) = 0.5 * (1 - erf(2))
        assert_abs_diff_eq!(phase_trust(0.0, true, 0.2), 0.002_338_867_490_523_6, epsilon = 1e-12);
    }

    #[test]
    fn height_trust_examples() {
        let p = TrustParams::default();
        assert_eq!(height_trust(0.0, &p), 1.0);
        assert_abs_diff_eq!(height_trust(0.08, &p), (-2.56f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(height_trust(0.08, &p), 0.0773, epsilon = 5e-5);
        assert_abs_diff_eq!(height_trust(-0.08, &p), 0.527, epsilon = 5e-4);
        assert!(height_trust(-0.08, &p) > height_trust(0.08, &p));
    }

    #[test]
    fn trust_matrix_examples() {
        assert_eq!(trust_matrix(1.0, 1.0), Mat3::identity());
        assert_eq!(trust_matrix(0.0, 0.7), Mat3::zeros());
        assert_abs_diff_eq!(
            trust_matrix(0.5, 0.2),
            Mat3::from_diagonal(&Vector3::new(0.5, 0.5, 0.1)),
            epsilon = 1e-15
        );
    }

    #[test]
    fn covariance_gain_examples() {
        let trusted = [Mat3::identity(); 4];
        assert_eq!(covariance_gain(&trusted, 100.0), CovGain::identity());

        let swing = [Mat3::zeros(); 4];
        assert_eq!(covariance_gain(&swing, 100.0), CovGain::identity() * 101.0);

        let mixed = [Mat3::identity(), Mat3::zeros(), Mat3::zeros(), Mat3::zeros()];
        let xi = covariance_gain(&mixed, 100.0);
        let expected: Vec<f64> = [1.0; 3].into_iter().chain([101.0; 9]).collect();
        assert_eq!(xi.diagonal().as_slice(), expected.as_slice());
        assert_eq!(covariance_gain_diagonal(&mixed, 100.0).as_slice(), expected.as_slice());
        assert_eq!(xi - CovGain::from_diagonal(&xi.diagonal()), CovGain::zeros());
    }

    #[test]
    fn params_validation() {
        assert!(TrustParams::default().validate().is_ok());
        assert!(TrustParams { k_minus: 500.0, ..Default::default() }.validate().is_err());
        assert!(TrustParams { window: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrustParams { kappa: f64::NAN, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn mid_stance_trust_non_increasing_in_window() {
        let mut prev = f64::INFINITY;
        for k in 1..=1000 {
            let w = k as f64 / 1000.0;
            let c = phase_trust(0.5, true, w);
            assert!(c <= prev + 1e-15, "W={w}: {c} > {prev}");
            prev = c;
        }
    }

    proptest! {
        #[test]
        fn phase_trust_bounded_and_symmetric(phi in 0.0f64..1.0, w in 0.01f64..=1.0) {
            let a = phase_trust(phi, true, w);
            let b = phase_trust(1.0 - phi, true, w);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn xi_diagonal_bounded(c in prop::array::uniform4((0.0f64..=1.0, 0.0f64..=1.0)), kappa in 1.0f64..1e4) {
            let mats = c.map(|(phi, z)| trust_matrix(phi, z));
            let xi = covariance_gain(&mats, kappa);
            for d in xi.diagonal().iter() {
                prop_assert!(*d >= 1.0 - 1e-12 && *d <= 1.0 + kappa + 1e-9);
            }
        }
    }
}
