//! Training objectives: photometric, flattening, normal consistency,
//! multi-view photometric consistency and opacity bimodality.

mod multiview;
mod normal;
mod photometric;
mod regularizers;
mod selection;
pub mod ssim;


use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use multiview::{
    gaussian_multiview_loss, multiview_photometric_loss, multiview_photometric_loss_with_weights, GaussianMultiViewLoss,
    MultiViewLoss, PatchConfig, ViewPair,
};
pub use normal::{gaussian_normal_loss, normal_consistency_loss, NormalLoss};
pub use photometric::{ncc, ncc_with_grad, rgb_loss, NCC_EPS};
pub use regularizers::{opacity_loss, scale_loss, OPACITY_CLAMP};
pub use selection::{front_test, select_front_gaussians, FrontGaussian, FrontGaussianSelection};
pub use ssim::{ssim, ssim_with_grad};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("image dimensions {actual:?} do not match {expected:?}")]
    DimensionMismatch { expected: (usize, usize, usize), actual: (usize, usize, usize) },
}

#[inline]
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub normal: f64,
    pub normal_g: f64,
    pub opacity: f64,
    pub mv: f64,
    pub mv_g: f64,
    pub scale: f64,
    pub rgb_dssim_mix: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { normal: 0.015, normal_g: 0.0075, opacity: 0.0001, mv: 0.15, mv_g: 0.15, scale: 100.0, rgb_dssim_mix: 0.2 }
    }
}

impl LossWeights {
    pub fn all_nonnegative(&self) -> bool {
        [self.normal, self.normal_g, self.opacity, self.mv, self.mv_g, self.scale, self.rgb_dssim_mix]
            .iter()
            .all(|&v| v >= 0.0)
    }

    /// Weights with every regularizer switched off.
    pub fn rgb_only(&self) -> Self {
        Self { normal: 0.0, normal_g: 0.0, opacity: 0.0, mv: 0.0, mv_g: 0.0, scale: 0.0, ..*self }
    }
}

/// Unweighted values of the individual terms for one iteration. Disabled
/// terms stay `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub rgb: f64,
    pub normal: Option<f64>,
    pub normal_g: Option<f64>,
    pub opacity: Option<f64>,
    pub mv: Option<f64>,
    pub mv_g: Option<f64>,
    pub scale: Option<f64>,
}

impl LossComponents {
    pub fn total(&self, w: &LossWeights) -> f64 {
        let term = |v: Option<f64>, lambda: f64| v.map_or(0.0, |v| lambda * v);
        self.rgb
            + term(self.normal, w.normal)
            + term(self.normal_g, w.normal_g)
            + term(self.opacity, w.opacity)
            + term(self.mv, w.mv)
            + term(self.mv_g, w.mv_g)
            + term(self.scale, w.scale)
    }
}

/// Weighted sum of the enabled terms.
pub fn total_loss(components: &LossComponents, weights: &LossWeights) -> f64 {
    components.total(weights)
}
