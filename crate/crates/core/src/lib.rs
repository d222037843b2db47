//! Simulation and monotonicity analysis of transient voltage dynamics in power
//! systems with synchronous generators and grid-forming converters.
//!
//! The core is generic over the scalar type through [`scalar::Real`]; the
//! aliases below fix it to `f64`, which every command-line path uses.

// `!(a < b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod case_io;
pub mod cli;
pub mod devices;
pub mod jacobian;
pub mod monotone;
pub mod netmodel;
pub mod results;
pub mod scalar;
pub mod simulator;
pub mod system;

pub use scalar::Real;

pub type Complex64 = num_complex::Complex<f64>;
pub type NetworkModel = netmodel::NetworkModel<f64>;
pub type Branch = netmodel::Branch<f64>;
pub type Device = devices::Device<f64>;
pub type PqLoad = devices::PqLoad<f64>;
pub type PowerSystem = system::PowerSystem<f64>;
pub type Equilibrium = system::Equilibrium<f64>;
pub type Scenario = simulator::Scenario<f64>;
pub type TimeSeries = simulator::TimeSeries<f64>;
pub type JacobianReport = jacobian::JacobianReport<f64>;
