//! Physics audits: equivariance error, rotation grids, Jacobian asymmetry,
//! energy drift, vibrational spectra and distance distributions.

pub mod cell600;
pub mod dynamics;
pub mod equivariance;
pub mod jacobian;
pub mod report;

pub use cell600::sample_rotations_600cell;
pub use dynamics::{
    energy_drift, h_r_histogram, h_r_score, trajectory_drift, trajectory_spectrum, vacf_spectrum,
    DistanceHistogram, Drift, Spectrum, Window,
};
pub use equivariance::{
    equivariance_error, kernel_density, reference_grid, rotation_grid_forces, Density,
    EquivarianceOptions, Estimate, GridRecord,
};
pub use jacobian::{antisymmetric_ratio, position_jacobian, JacobianMode};
pub use report::{Record, Report};
