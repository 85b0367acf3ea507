//! State estimation for a wheeled-legged quadruped: wheel-aware leg
//! kinematics, contact trust, a linear Kalman filter that separates driving
//! from stepping, and a kinematic oracle that produces consistent test data.

pub mod control;
pub mod estimator;
pub mod gait;
pub mod kinematics;
pub mod sim;
pub mod trust;
