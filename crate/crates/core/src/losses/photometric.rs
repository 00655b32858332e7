//! Image-space photometric terms: the RGB loss and patch NCC.

use super::ssim::ssim_with_grad;
use super::{sign, LossError};
use crate::image::Image;

pub const NCC_EPS: f64 = 1e-8;

/// Normalized cross-correlation of two equally sized patches.
pub fn ncc(a: &[f64], b: &[f64]) -> f64 {
    ncc_parts(a, b).0
}

/// Returns `(ncc, centered a, centered b, cov, var_a, var_b)`.
fn ncc_parts(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>, f64, f64, f64) {
    assert_eq!(a.len(), b.len(), "ncc: patch size mismatch");
    assert!(a.len() >= 4, "ncc needs at least 4 samples");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let ca: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let cb: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let cov: f64 = ca.iter().zip(&cb).map(|(x, y)| x * y).sum();
    let va: f64 = ca.iter().map(|x| x * x).sum();
    let vb: f64 = cb.iter().map(|x| x * x).sum();
    let value = cov / (va * vb + NCC_EPS).sqrt();
    (value, ca, cb, cov, va, vb)
}

/// NCC and its gradients with respect to both patches.
pub fn ncc_with_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (value, ca, cb, cov, va, vb) = ncc_parts(a, b);
    let s = (va * vb + NCC_EPS).sqrt();
    let s3 = s * s * s;
    // centering drops out because the centered vectors sum to zero
    let da = ca.iter().zip(&cb).map(|(x, y)| y / s - cov * vb * x / s3).collect();
    let db = ca.iter().zip(&cb).map(|(x, y)| x / s - cov * va * y / s3).collect();
    (value, da, db)
}

/// `(1 - m) L1 + m (1 - SSIM) / 2` and its gradient with respect to the
/// rendered image.
pub fn rgb_loss(rendered: &Image, observed: &Image, mix: f64) -> Result<(f64, Vec<f64>), LossError> {
    if !rendered.same_shape(observed) {
        return Err(LossError::DimensionMismatch {
            expected: (observed.width, observed.height, observed.channels),
            actual: (rendered.width, rendered.height, rendered.channels),
        });
    }
    let n = rendered.data.len() as f64;
    let mut l1 = 0.0;
    let mut grad: Vec<f64> = rendered
        .data
        .iter()
        .zip(&observed.data)
        .map(|(r, o)| {
            let diff = r - o;
            l1 += diff.abs();
            (1.0 - mix) * sign(diff) / n
        })
        .collect();
    l1 /= n;
    let mut loss = (1.0 - mix) * l1;
    if mix > 0.0 {
        let (s, g) = ssim_with_grad(rendered, observed, true);
        loss += mix * (1.0 - s) / 2.0;
        for (d, gs) in grad.iter_mut().zip(g.unwrap()) {
            *d -= mix * gs / 2.0;
        }
    }
    Ok((loss, grad))
}
