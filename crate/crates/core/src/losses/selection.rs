//! Depth-filtered selection of Gaussians lying on or in front of the
//! rendered surface.

use nalgebra::{Vector2, Vector3};

use crate::rasterizer::{Projected, RenderOutputs};

/// One Gaussian that passed the front test in a view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontGaussian {
    pub index: usize,
    /// Nearest pixel to the projected center.
    pub pixel: (usize, usize),
    pub mean2d: Vector2<f64>,
    /// Camera-frame center depth.
    pub depth: f64,
    /// Camera-frame unit normal (camera facing).
    pub normal: Vector3<f64>,
    /// Tangent-plane offset `t . n` (negative).
    pub distance: f64,
    pub opacity: f64,
    /// Projected footprint radius in pixels.
    pub radius: f64,
    /// `opacity * radius`
    pub psi: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrontGaussianSelection {
    pub entries: Vec<FrontGaussian>,
}

impl FrontGaussianSelection {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Membership mask over `n` Gaussians.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for e in &self.entries {
            m[e.index] = true;
        }
        m
    }
}

/// Tests one projected Gaussian against the rendered depth.
pub fn front_test(p: &Projected, outputs: &RenderOutputs, tolerance: f64) -> Option<(usize, usize)> {
    if !p.visible {
        return None;
    }
    let (x, y) = (p.mean2d.x.round(), p.mean2d.y.round());
    if !(x >= 0.0 && y >= 0.0 && x < outputs.width as f64 && y < outputs.height as f64) {
        return None;
    }
    let (x, y) = (x as usize, y as usize);
    let pix = y * outputs.width + x;
    if !outputs.is_covered(pix) {
        return None;
    }
    (p.depth() < outputs.depth[pix] + tolerance).then_some((x, y))
}

/// Gaussians whose center projects onto a covered pixel and lies no deeper
/// than the rendered depth there plus `tolerance`.
pub fn select_front_gaussians(outputs: &RenderOutputs, tolerance: f64) -> FrontGaussianSelection {
    let entries = outputs
        .projected
        .iter()
        .enumerate()
        .filter_map(|(index, p)| {
            front_test(p, outputs, tolerance).map(|pixel| FrontGaussian {
                index,
                pixel,
                mean2d: p.mean2d,
                depth: p.depth(),
                normal: p.normal,
                distance: p.distance,
                opacity: p.opacity,
                radius: p.radius,
                psi: p.opacity * p.radius,
            })
        })
        .collect();
    FrontGaussianSelection { entries }
}
