//! Removal of net force and centre-of-mass torque.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::geometry::cross;

/// Subtract the mean force, then the rigid-rotation component
/// `m_i α × r_i` with `α = I⁺ τ` about the centre of mass. The pseudo-inverse
/// drops inertia axes below `1e-12` of the largest, so collinear and
/// single-atom systems take the reduced solve.
pub fn project_forces(
    forces: &[[f64; 3]],
    positions: &[[f64; 3]],
    masses: &[f64],
) -> Vec<[f64; 3]> {
    let n = forces.len();
    if n == 0 {
        return Vec::new();
    }
    let total: f64 = masses.iter().sum();
    let mut com = [0.0; 3];
    for (p, &m) in positions.iter().zip(masses) {
        for c in 0..3 {
            com[c] += m * p[c] / total;
        }
    }
    let rel: Vec<[f64; 3]> = positions
        .iter()
        .map(|p| [p[0] - com[0], p[1] - com[1], p[2] - com[2]])
        .collect();
    let mut inertia = Matrix3::zeros();
    for (r, &m) in rel.iter().zip(masses) {
        let rv = Vector3::from(*r);
        inertia += m * (Matrix3::identity() * rv.norm_squared() - rv * rv.transpose());
    }
    let eig = SymmetricEigen::new(inertia);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);

    let mut out = forces.to_vec();
    // the second pass removes what rounding left behind; on badly conditioned
    // inertia a single pass is only idempotent to ~1e-11
    for _ in 0..2 {
        remove_net(&mut out);
        if lmax > 0.0 {
            remove_torque(&mut out, &rel, masses, &eig, lmax);
        }
    }
    out
}

fn remove_net(forces: &mut [[f64; 3]]) {
    let n = forces.len() as f64;
    let mut mean = [0.0; 3];
    for f in forces.iter() {
        for c in 0..3 {
            mean[c] += f[c] / n;
        }
    }
    for f in forces.iter_mut() {
        for c in 0..3 {
            f[c] -= mean[c];
        }
    }
}

fn remove_torque(
    forces: &mut [[f64; 3]],
    rel: &[[f64; 3]],
    masses: &[f64],
    eig: &SymmetricEigen<f64, nalgebra::U3>,
    lmax: f64,
) {
    let mut tau = Vector3::zeros();
    for (r, f) in rel.iter().zip(forces.iter()) {
        tau += Vector3::from(cross(*r, *f));
    }
    let mut alpha = Vector3::zeros();
    for k in 0..3 {
        let l = eig.eigenvalues[k];
        if l > 1e-12 * lmax {
            let v = eig.eigenvectors.column(k);
            alpha += v * (v.dot(&tau) / l);
        }
    }
    let a = [alpha[0], alpha[1], alpha[2]];
    for ((f, r), &m) in forces.iter_mut().zip(rel).zip(masses) {
        let w = cross(a, *r);
        for c in 0..3 {
            f[c] -= m * w[c];
        }
    }
}

/// `(‖Σf‖, ‖Σ (r_i − r_com) × f_i‖)`.
pub fn net_force_and_torque(
    forces: &[[f64; 3]],
    positions: &[[f64; 3]],
    masses: &[f64],
) -> (f64, f64) {
    let total: f64 = masses.iter().sum();
    let mut com = [0.0; 3];
    for (p, &m) in positions.iter().zip(masses) {
        for c in 0..3 {
            com[c] += m * p[c] / total;
        }
    }
    let mut net = [0.0; 3];
    let mut tau = [0.0; 3];
    for (f, p) in forces.iter().zip(positions) {
        let r = [p[0] - com[0], p[1] - com[1], p[2] - com[2]];
        let t = cross(r, *f);
        for c in 0..3 {
            net[c] += f[c];
            tau[c] += t[c];
        }
    }
    (crate::geometry::norm(net), crate::geometry::norm(tau))
}
