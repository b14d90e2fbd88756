//! Stability analysis for droop-controlled, inverter-based power networks.
//!
//! The crate covers the full chain: bus admittance matrix, steady-state
//! operating point, linearized state-space model and its spectrum, a
//! nonlinear phasor-domain simulator used as an independent check on the
//! linearization, and an enhanced phase-locked loop estimator.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the aliases at
//! the bottom of this file fix the common `f64` instantiations.

pub mod dynsim;
pub mod eigen;
pub mod epll;
pub mod equilibrium;
pub mod error;
pub mod network;
pub mod scalar;
pub mod smallsignal;
pub mod system;

pub use error::{Error, Result};
pub use scalar::Real;

pub use nalgebra::Complex;

pub type NetworkModel64 = network::NetworkModel<f64>;
pub type BusAdmittanceMatrix64 = network::BusAdmittanceMatrix<f64>;
pub type InverterParams64 = equilibrium::InverterParams<f64>;
pub type OperatingPoint64 = equilibrium::OperatingPoint<f64>;
pub type DroopSystem64 = system::DroopSystem<f64>;
pub type SmallSignalModel64 = smallsignal::SmallSignalModel<f64>;
pub type EigenReport64 = smallsignal::EigenReport<f64>;
pub type Scenario64 = dynsim::Scenario<f64>;
pub type SimTrace64 = dynsim::SimTrace<f64>;
pub type EpllParams64 = epll::EpllParams<f64>;
pub type EpllState64 = epll::EpllState<f64>;

pub type NetworkModel32 = network::NetworkModel<f32>;

pub type EpllParams32 = epll::EpllParams<f32>;
