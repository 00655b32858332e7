//! Normal consistency between depth-derived and rendered normals, per pixel
//! and per Gaussian.

use nalgebra::Vector3;

use super::selection::FrontGaussianSelection;
use super::sign;
use crate::geometry::CameraIntrinsics;
use crate::rasterizer::{depth_to_normal, depth_to_normal_backward, NormalMap, ProjectedAdjoint, RenderAdjoints, RenderOutputs};

#[derive(Debug, Clone)]
pub struct NormalLoss {
    pub loss: f64,
    /// Adjoints on the unit-normal and depth channels.
    pub adjoints: RenderAdjoints,
    pub valid_pixels: usize,
    /// The depth-derived normals the loss compared against.
    pub depth_normals: NormalMap,
}

#[inline]
fn l1_grad(target: &Vector3<f64>, value: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let d = target - value;
    (d.abs().sum(), Vector3::new(-sign(d.x), -sign(d.y), -sign(d.z)))
}

/// Mean L1 distance between depth-gradient normals and renormalized
/// rendered normals over covered pixels with a valid depth normal.
/// Gradients reach both the rendered normals and, through the depth-derived
/// normals, the depth map.
pub fn normal_consistency_loss(outputs: &RenderOutputs, intr: &CameraIntrinsics) -> NormalLoss {
    let map = depth_to_normal(&outputs.depth, intr);
    let mut adjoints = RenderAdjoints::zeros(outputs.width, outputs.height);
    let pixels: Vec<usize> = (0..outputs.pixel_count())
        .filter(|&p| map.valid[p] && outputs.is_covered(p) && outputs.unit_normal_at(p).is_some())
        .collect();
    if pixels.is_empty() {
        return NormalLoss { loss: 0.0, adjoints, valid_pixels: 0, depth_normals: map };
    }
    let inv = 1.0 / pixels.len() as f64;
    let mut total = 0.0;
    let mut grad_depth_normals = vec![0.0; 3 * outputs.pixel_count()];
    for &p in &pixels {
        let rendered = outputs.unit_normal_at(p).unwrap();
        let (l, g) = l1_grad(&map.at(p), &rendered);
        total += l;
        for k in 0..3 {
            adjoints.unit_normal[3 * p + k] += g[k] * inv;
            grad_depth_normals[3 * p + k] -= g[k] * inv;
        }
    }
    depth_to_normal_backward(&outputs.depth, intr, &map, &grad_depth_normals, &mut adjoints.depth);
    NormalLoss { loss: total * inv, adjoints, valid_pixels: pixels.len(), depth_normals: map }
}

/// Opacity- and size-weighted L1 distance between each selected Gaussian's
/// normal and the depth-derived normal at its center pixel. The depth
/// normals and the weights are constants, so only orientation (rotation and
/// the flattened axis) receives gradient. Returns the loss and per-Gaussian
/// adjoints.
pub fn gaussian_normal_loss(
    sel: &FrontGaussianSelection,
    depth_normals: &NormalMap,
    gaussian_count: usize,
) -> (f64, Vec<ProjectedAdjoint>) {
    let mut adj = vec![ProjectedAdjoint::default(); gaussian_count];
    if sel.is_empty() {
        return (0.0, adj);
    }
    let inv = 1.0 / sel.len() as f64;
    let mut total = 0.0;
    for e in &sel.entries {
        let p = e.pixel.1 * depth_normals.width + e.pixel.0;
        if !depth_normals.valid[p] {
            continue;
        }
        let (l, g) = l1_grad(&depth_normals.at(p), &e.normal);
        total += e.psi * l;
        let a = &mut adj[e.index];
        a.normal += g * (e.psi * inv);
    }
    (total * inv, adj)
}
