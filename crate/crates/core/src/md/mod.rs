//! Molecular dynamics: velocity Verlet, thermostats, force projection.

pub mod projection;
pub mod provider;
pub mod run;
pub mod thermostat;
pub mod units;

pub use projection::{net_force_and_torque, project_forces};
pub use provider::{
    ConstantProvider, Evaluation, FnProvider, ForceProvider, LinearProvider, ModelProvider,
};
pub use run::{maxwell_boltzmann, run_md, Abort, Frame, MdConfig, MdEngine, Trajectory};
pub use thermostat::{degrees_of_freedom, kinetic_energy, temperature, Thermostat, ThermostatKind};
