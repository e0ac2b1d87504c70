//! Relative localization of two mobile robots from UWB ranging and
//! phase-difference-of-arrival angles.
//!
//! The crate simulates both robots' kinematics, synthesizes noisy UWB
//! telemetry, and runs three estimators over it: the reference angle-fusion
//! baseline and two extended Kalman filter variants. A batch harness and
//! statistics module compare the estimators over a catalog of scenarios.

pub mod baseline;
pub mod config;
pub mod ekf;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod kinematics;
pub mod report;
pub mod scenario;
pub mod stats;
pub mod uwb;

pub use error::{Error, Result};
