//! Element symbols and standard atomic weights (amu), H through Kr.

const TABLE: [(&str, f64); 36] = [
    ("H", 1.008),
    ("He", 4.0026),
    ("Li", 6.94),
    ("Be", 9.0122),
    ("B", 10.81),
    ("C", 12.011),
    ("N", 14.007),
    ("O", 15.999),
    ("F", 18.998),
    ("Ne", 20.180),
    ("Na", 22.990),
    ("Mg", 24.305),
    ("Al", 26.982),
    ("Si", 28.085),
    ("P", 30.974),
    ("S", 32.06),
    ("Cl", 35.45),
    ("Ar", 39.948),
    ("K", 39.098),
    ("Ca", 40.078),
    ("Sc", 44.956),
    ("Ti", 47.867),
    ("V", 50.942),
    ("Cr", 51.996),
    ("Mn", 54.938),
    ("Fe", 55.845),
    ("Co", 58.933),
    ("Ni", 58.693),
    ("Cu", 63.546),
    ("Zn", 65.38),
    ("Ga", 69.723),
    ("Ge", 72.630),
    ("As", 74.922),
    ("Se", 78.971),
    ("Br", 79.904),
    ("Kr", 83.798),
];

pub const MAX_Z: u32 = TABLE.len() as u32;

pub fn symbol(z: u32) -> Option<&'static str> {
    TABLE.get((z as usize).checked_sub(1)?).map(|e| e.0)
}

pub fn mass(z: u32) -> Option<f64> {
    TABLE.get((z as usize).checked_sub(1)?).map(|e| e.1)
}

/// Case-sensitive symbol lookup.
pub fn atomic_number(sym: &str) -> Option<u32> {
    TABLE.iter().position(|e| e.0 == sym).map(|i| i as u32 + 1)
}
