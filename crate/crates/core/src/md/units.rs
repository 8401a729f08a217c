//! Internal units: Å, fs, eV, amu, K.

/// Kinetic energy of 1 amu·Å²/fs², in eV.
pub const MVV2E: f64 = 103.642_696_5;

/// Boltzmann constant, eV/K.
pub const KB: f64 = 8.617_333_262e-5;

/// Speed of light, cm/fs.
pub const C_CM_PER_FS: f64 = 2.997_924_58e-5;

/// Frequency in 1/fs to wavenumber in 1/cm.
pub fn per_fs_to_wavenumber(nu: f64) -> f64 {
    nu / C_CM_PER_FS
}

pub fn wavenumber_to_per_fs(k: f64) -> f64 {
    k * C_CM_PER_FS
}
