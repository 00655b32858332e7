//! Per-Gaussian regularizers: minimum-scale flattening and opacity
//! bimodality.

use crate::gaussians::{min_scale_axis, sigmoid, GaussianGrads, GaussianSet, MAX_OPACITY_LOGIT};

/// Opacity clamp keeping the log barrier finite.
pub const OPACITY_CLAMP: f64 = 1e-4;

/// Mean of each Gaussian's smallest scale; the gradient reaches only the
/// arg-min log-scale.
pub fn scale_loss(set: &GaussianSet) -> (f64, GaussianGrads) {
    let mut grads = GaussianGrads::zeros_like(set);
    if set.is_empty() {
        return (0.0, grads);
    }
    let n = set.len() as f64;
    let mut total = 0.0;
    for i in 0..set.len() {
        let s = set.scales(i);
        let k = min_scale_axis(&s);
        total += s[k];
        grads.log_scales[3 * i + k] = s[k] / n;
    }
    (total / n, grads)
}

/// `mean(log a + log(1 - a))` over clamped opacities.
pub fn opacity_loss(set: &GaussianSet) -> (f64, GaussianGrads) {
    let mut grads = GaussianGrads::zeros_like(set);
    if set.is_empty() {
        return (0.0, grads);
    }
    let n = set.len() as f64;
    let mut total = 0.0;
    for i in 0..set.len() {
        let logit = set.opacity_logits[i];
        let a = sigmoid(logit);
        let clamped = a.clamp(OPACITY_CLAMP, 1.0 - OPACITY_CLAMP);
        total += clamped.ln() + (1.0 - clamped).ln();
        if clamped == a && logit.abs() < MAX_OPACITY_LOGIT {
            // (1/a - 1/(1-a)) * a (1-a)
            grads.opacity_logits[i] = (1.0 - 2.0 * a) / n;
        }
    }
    (total / n, grads)
}
