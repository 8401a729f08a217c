//! Rotations as unit quaternions `(w, x, y, z)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    q: [f64; 4],
    m: Mat3,
}

impl Rotation {
    pub fn identity() -> Self {
        Self::from_quaternion([1.0, 0.0, 0.0, 0.0])
    }

    /// Normalises `q`; `q` and `-q` give the same matrix.
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let [w, x, y, z] = q.map(|v| v / n);
        let m = [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ];
        Self { q: [w, x, y, z], m }
    }

    /// Rotation by `angle` radians about `axis`.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = norm(axis);
        let s = (angle / 2.0).sin() / n;
        Self::from_quaternion([(angle / 2.0).cos(), axis[0] * s, axis[1] * s, axis[2] * s])
    }

    /// Haar-uniform draw (Shoemake's subgroup algorithm).
    pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let u3: f64 = rng.random();
        let tau = 2.0 * std::f64::consts::PI;
        let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
        Self::from_quaternion([
            b * (tau * u3).cos(),
            a * (tau * u2).sin(),
            a * (tau * u2).cos(),
            b * (tau * u3).sin(),
        ])
    }

    pub fn quaternion(&self) -> [f64; 4] {
        self.q
    }

    pub fn matrix(&self) -> Mat3 {
        self.m
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        mat_vec(&self.m, v)
    }

    /// `Rᵀ v`.
    pub fn apply_inverse(&self, v: Vec3) -> Vec3 {
        let m = &self.m;
        [
            m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
            m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
            m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn inverse(&self) -> Self {
        let [w, x, y, z] = self.q;
        Self::from_quaternion([w, -x, -y, -z])
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Self) -> Self {
        Self::from_quaternion(quat_mul(self.q, other.q))
    }

    /// Angle of the relative rotation, in `[0, π]`.
    pub fn geodesic(&self, other: &Self) -> f64 {
        let d: f64 = self.q.iter().zip(&other.q).map(|(a, b)| a * b).sum();
        2.0 * d.abs().min(1.0).acos()
    }

    pub fn apply_all(&self, pts: &[Vec3]) -> Vec<Vec3> {
        pts.iter().map(|&p| self.apply(p)).collect()
    }

    pub fn apply_inverse_all(&self, pts: &[Vec3]) -> Vec<Vec3> {
        pts.iter().map(|&p| self.apply_inverse(p)).collect()
    }
}

/// Element of O(3): a rotation optionally composed with inversion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Orthogonal {
    pub rotation: Rotation,
    pub reflect: bool,
}

impl Orthogonal {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation::identity(),
            reflect: false,
        }
    }

    /// Uniform rotation, then a determinant flip with probability 1/2.
    pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let rotation = Rotation::uniform(rng);
        Self {
            rotation,
            reflect: rng.random_bool(0.5),
        }
    }

    pub fn det(&self) -> f64 {
        if self.reflect {
            -1.0
        } else {
            1.0
        }
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let r = self.rotation.apply(v);
        if self.reflect {
            [-r[0], -r[1], -r[2]]
        } else {
            r
        }
    }

    pub fn matrix(&self) -> Mat3 {
        let s = self.det();
        self.rotation.matrix().map(|row| row.map(|v| s * v))
    }
}

pub fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// `max |RᵀR − I|`.
pub fn orthonormality_error(m: &Mat3) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}
