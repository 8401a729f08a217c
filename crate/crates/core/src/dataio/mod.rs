//! Datasets, extended-XYZ persistence and analytic reference potentials.

pub mod dataset;
pub mod elements;
pub mod potentials;
pub mod xyz;

pub use dataset::{generate_synthetic, split, Dataset, SyntheticSpec};
pub use potentials::SyntheticPotential;
pub use xyz::{parse_extended_xyz, parse_frames, write_extended_xyz, XyzFrame};
