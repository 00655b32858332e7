//! Real spherical harmonics up to degree 3 in the 3DGS basis ordering.
//!
//! Colors are evaluated as `max(0, sum_k c_k Y_k(dir) + 0.5)` per channel.

use nalgebra::Vector3;

pub const C0: f64 = 0.282_094_791_773_878_14;
pub const C1: f64 = 0.488_602_511_902_919_9;
pub const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of basis functions for a degree.
pub const fn basis_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values and their Jacobian with respect to the (unit) direction.
pub fn basis_with_jacobian(degree: usize, dir: &Vector3<f64>) -> (Vec<f64>, Vec<Vector3<f64>>) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = Vec::with_capacity(basis_count(degree));
    let mut j = Vec::with_capacity(basis_count(degree));
    b.push(C0);
    j.push(Vector3::zeros());
    if degree >= 1 {
        b.push(-C1 * y);
        j.push(Vector3::new(0.0, -C1, 0.0));
        b.push(C1 * z);
        j.push(Vector3::new(0.0, 0.0, C1));
        b.push(-C1 * x);
        j.push(Vector3::new(-C1, 0.0, 0.0));
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b.push(C2[0] * x * y);
        j.push(Vector3::new(C2[0] * y, C2[0] * x, 0.0));
        b.push(C2[1] * y * z);
        j.push(Vector3::new(0.0, C2[1] * z, C2[1] * y));
        b.push(C2[2] * (2.0 * zz - xx - yy));
        j.push(Vector3::new(-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z));
        b.push(C2[3] * x * z);
        j.push(Vector3::new(C2[3] * z, 0.0, C2[3] * x));
        b.push(C2[4] * (xx - yy));
        j.push(Vector3::new(2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0));
        if degree >= 3 {
            b.push(C3[0] * y * (3.0 * xx - yy));
            j.push(Vector3::new(C3[0] * 6.0 * x * y, C3[0] * (3.0 * xx - 3.0 * yy), 0.0));
            b.push(C3[1] * x * y * z);
            j.push(Vector3::new(C3[1] * y * z, C3[1] * x * z, C3[1] * x * y));
            b.push(C3[2] * y * (4.0 * zz - xx - yy));
            j.push(Vector3::new(
                C3[2] * (-2.0 * x * y),
                C3[2] * (4.0 * zz - xx - 3.0 * yy),
                C3[2] * 8.0 * y * z,
            ));
            b.push(C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy));
            j.push(Vector3::new(
                C3[3] * (-6.0 * x * z),
                C3[3] * (-6.0 * y * z),
                C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
            ));
            b.push(C3[4] * x * (4.0 * zz - xx - yy));
            j.push(Vector3::new(
                C3[4] * (4.0 * zz - 3.0 * xx - yy),
                C3[4] * (-2.0 * x * y),
                C3[4] * 8.0 * x * z,
            ));
            b.push(C3[5] * z * (xx - yy));
            j.push(Vector3::new(C3[5] * 2.0 * x * z, C3[5] * -2.0 * y * z, C3[5] * (xx - yy)));
            b.push(C3[6] * x * (xx - 3.0 * yy));
            j.push(Vector3::new(C3[6] * (3.0 * xx - 3.0 * yy), C3[6] * -6.0 * x * y, 0.0));
        }
    }
    (b, j)
}

/// Evaluates the color for coefficients laid out as `[basis][rgb]`.
/// Returns the clamped color and a per-channel flag telling whether the
/// clamp was inactive (gradient passes through).
pub fn eval_color(degree: usize, coeffs: &[f64], dir: &Vector3<f64>) -> (Vector3<f64>, [bool; 3]) {
    let (basis, _) = basis_with_jacobian(degree, dir);
    let mut raw = Vector3::new(0.5, 0.5, 0.5);
    for (k, bk) in basis.iter().enumerate() {
        for c in 0..3 {
            raw[c] += bk * coeffs[k * 3 + c];
        }
    }
    let live = [raw.x > 0.0, raw.y > 0.0, raw.z > 0.0];
    (raw.map(|v| v.max(0.0)), live)
}

/// Adjoint of [`eval_color`]. Accumulates into `d_coeffs` and returns the
/// gradient with respect to the unit direction.
pub fn eval_color_backward(
    degree: usize,
    coeffs: &[f64],
    dir: &Vector3<f64>,
    live: [bool; 3],
    d_color: &Vector3<f64>,
    d_coeffs: &mut [f64],
) -> Vector3<f64> {
    let (basis, jac) = basis_with_jacobian(degree, dir);
    let g = Vector3::new(
        if live[0] { d_color.x } else { 0.0 },
        if live[1] { d_color.y } else { 0.0 },
        if live[2] { d_color.z } else { 0.0 },
    );
    let mut d_dir = Vector3::zeros();
    for (k, (bk, jk)) in basis.iter().zip(&jac).enumerate() {
        let mut s = 0.0;
        for c in 0..3 {
            d_coeffs[k * 3 + c] += bk * g[c];
            s += coeffs[k * 3 + c] * g[c];
        }
        d_dir += jk * s;
    }
    d_dir
}

/// DC coefficient reproducing `color` when higher orders are zero.
#[inline]
pub fn rgb_to_dc(color: f64) -> f64 {
    (color - 0.5) / C0
}
