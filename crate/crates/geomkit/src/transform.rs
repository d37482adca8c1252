//! 3x3 transforms and the random samplers used by the property harness.

use diffcore::DetRng;

use crate::vec3::{norm, scale, Vec3};

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[j][i];
        }
    }
    out
}

pub fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Uniform rotation from a normalized random quaternion.
pub fn random_rotation(rng: &mut DetRng) -> Mat3 {
    let q: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
    let n = (q.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
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
    ]
}

/// Random improper orthogonal matrix: a rotation conjugate of
/// `diag(-1, 1, 1)`, so the determinant is exactly -1 up to rounding.
pub fn random_reflection(rng: &mut DetRng) -> Mat3 {
    let q = random_rotation(rng);
    let mirror = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&mat_mul(&q, &mirror), &transpose(&q))
}

/// Random translation with norm uniform in [0, scale].
pub fn random_translation(rng: &mut DetRng, scale_bound: f64) -> Vec3 {
    let v = [rng.normal(), rng.normal(), rng.normal()];
    let n = norm(v);
    if n < 1e-12 {
        return [scale_bound, 0.0, 0.0];
    }
    scale(v, rng.range(0.0, scale_bound) / n)
}
