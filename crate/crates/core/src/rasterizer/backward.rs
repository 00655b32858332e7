//! Reverse-mode pass through the compositor and the projection.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use super::depth::{depth_backward, unit_normal_backward};
use super::project::{project_backward, ProjectedAdjoint};
use super::{RenderConfig, RenderError, RenderOutputs};
use crate::gaussians::{GaussianGrads, GaussianSet};
use crate::geometry::Camera;

/// Per-pixel adjoints of a render.
///
/// `color`, `normal`, `distance` and `alpha` address the raw blended
/// channels. `depth` and `unit_normal` address the derived ray-plane depth
/// and renormalized normal; they are folded into the raw channels before
/// the compositor is replayed.
#[derive(Debug, Clone)]
pub struct RenderAdjoints {
    pub width: usize,
    pub height: usize,
    pub color: Vec<f64>,
    pub normal: Vec<f64>,
    pub distance: Vec<f64>,
    pub alpha: Vec<f64>,
    pub depth: Vec<f64>,
    pub unit_normal: Vec<f64>,
}

impl RenderAdjoints {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            color: vec![0.0; 3 * n],
            normal: vec![0.0; 3 * n],
            distance: vec![0.0; n],
            alpha: vec![0.0; n],
            depth: vec![0.0; n],
            unit_normal: vec![0.0; 3 * n],
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &RenderAdjoints, scale: f64) {
        let pairs = [
            (&mut self.color, &other.color),
            (&mut self.normal, &other.normal),
            (&mut self.distance, &other.distance),
            (&mut self.alpha, &other.alpha),
            (&mut self.depth, &other.depth),
            (&mut self.unit_normal, &other.unit_normal),
        ];
        for (dst, src) in pairs {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        [&self.color, &self.normal, &self.distance, &self.alpha, &self.depth, &self.unit_normal]
            .iter()
            .all(|v| v.iter().all(|&x| x == 0.0))
    }

    /// Moves depth and unit-normal adjoints onto the raw channels.
    pub fn fold_derived(&mut self, outputs: &RenderOutputs, camera: &Camera) {
        let intr = &camera.intrinsics;
        let w = outputs.width;
        for p in 0..outputs.pixel_count() {
            let n = outputs.normal_at(p);
            let gd = self.depth[p];
            if gd != 0.0 && outputs.depth[p] > 0.0 {
                let ray = intr.pixel_ray((p % w) as f64, (p / w) as f64);
                let (dn, dd) = depth_backward(&n, outputs.distance[p], &ray, gd);
                for k in 0..3 {
                    self.normal[3 * p + k] += dn[k];
                }
                self.distance[p] += dd;
            }
            let gu = Vector3::new(self.unit_normal[3 * p], self.unit_normal[3 * p + 1], self.unit_normal[3 * p + 2]);
            if gu != Vector3::zeros() {
                let dn = unit_normal_backward(&n, &gu);
                for k in 0..3 {
                    self.normal[3 * p + k] += dn[k];
                }
            }
            self.depth[p] = 0.0;
            self.unit_normal[3 * p..3 * p + 3].iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Parameter gradients plus the screen-space positional gradient used by
/// densification.
#[derive(Debug, Clone)]
pub struct BackwardResult {
    pub grads: GaussianGrads,
    /// `dL/d(mean2d)` per Gaussian, in pixels.
    pub mean2d_grads: Vec<Vector2<f64>>,
    /// Raw screen-space adjoints per Gaussian.
    pub projected_adjoints: Vec<ProjectedAdjoint>,
}

/// Exact adjoint of [`super::render`] for the given per-pixel adjoints.
pub fn render_backward(
    set: &GaussianSet,
    camera: &Camera,
    cfg: &RenderConfig,
    outputs: &RenderOutputs,
    adjoints: &RenderAdjoints,
) -> Result<BackwardResult, RenderError> {
    render_backward_with(set, camera, cfg, outputs, adjoints, None)
}

/// Like [`render_backward`], with additional per-Gaussian screen-space
/// adjoints (from losses defined on individual Gaussians) merged before the
/// projection adjoint runs.
pub fn render_backward_with(
    set: &GaussianSet,
    camera: &Camera,
    cfg: &RenderConfig,
    outputs: &RenderOutputs,
    adjoints: &RenderAdjoints,
    extra: Option<&[ProjectedAdjoint]>,
) -> Result<BackwardResult, RenderError> {
    let contributors = outputs.contributors.as_ref().ok_or(RenderError::MissingContributorLists)?;
    if adjoints.width != outputs.width || adjoints.height != outputs.height {
        return Err(RenderError::AdjointShape { width: outputs.width, height: outputs.height });
    }
    let mut adj = adjoints.clone();
    adj.fold_derived(outputs, camera);
    let (width, height) = (outputs.width, outputs.height);
    let projected = &outputs.projected;
    let tiles = &outputs.tiles;

    let tile_adjoints: Vec<Vec<ProjectedAdjoint>> = (0..tiles.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &tiles.lists[tile];
            let mut acc = vec![ProjectedAdjoint::default(); list.len()];
            let records = &contributors[tile];
            let (x0, y0, x1, y1) = tiles.tile_bounds(tile, width, height);
            let mut local = 0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = y * width + x;
                    let (start, len) = records.ranges[local];
                    local += 1;
                    if len == 0 {
                        continue;
                    }
                    let g = [
                        adj.color[3 * p],
                        adj.color[3 * p + 1],
                        adj.color[3 * p + 2],
                        adj.normal[3 * p],
                        adj.normal[3 * p + 1],
                        adj.normal[3 * p + 2],
                        adj.distance[p],
                    ];
                    let g_alpha = adj.alpha[p];
                    if g.iter().all(|&v| v == 0.0) && g_alpha == 0.0 {
                        continue;
                    }
                    let t_final = outputs.final_t[p];
                    let px = Vector2::new(x as f64, y as f64);
                    // sum over splats behind the current one of T_j a_j f_j
                    let mut behind = [0.0f64; 7];
                    for rec in records.records[start as usize..(start + len) as usize].iter().rev() {
                        let pg = &projected[rec.id as usize];
                        let f = pg.features();
                        let raw_a = pg.opacity * rec.g;
                        let a = raw_a.min(cfg.max_alpha);
                        let one_minus = 1.0 - a;
                        let mut g_dot_f = 0.0;
                        let mut g_dot_behind = 0.0;
                        for k in 0..7 {
                            g_dot_f += g[k] * f[k];
                            g_dot_behind += g[k] * behind[k];
                        }
                        let d_a = rec.t * g_dot_f - g_dot_behind / one_minus + g_alpha * t_final / one_minus;
                        let w = rec.t * a;
                        let slot = &mut acc[rec.slot as usize];
                        slot.color += Vector3::new(w * g[0], w * g[1], w * g[2]);
                        slot.normal += Vector3::new(w * g[3], w * g[4], w * g[5]);
                        slot.distance += w * g[6];
                        for k in 0..7 {
                            behind[k] += w * f[k];
                        }
                        if raw_a < cfg.max_alpha {
                            slot.opacity += d_a * rec.g;
                            let d_g = d_a * pg.opacity;
                            let d_power = -0.5 * rec.g * d_g;
                            let d = px - pg.mean2d;
                            let cd = pg.conic * d;
                            slot.mean2d += -2.0 * cd * d_power;
                            slot.conic[0] += d_power * d.x * d.x;
                            slot.conic[1] += d_power * 2.0 * d.x * d.y;
                            slot.conic[2] += d_power * d.y * d.y;
                        }
                    }
                }
            }
            acc
        })
        .collect();

    // fixed-order reduction over tiles
    let mut per_gaussian = vec![ProjectedAdjoint::default(); set.len()];
    for (tile, acc) in tile_adjoints.iter().enumerate() {
        for (slot, a) in acc.iter().enumerate() {
            per_gaussian[tiles.lists[tile][slot] as usize].add(a);
        }
    }

    if let Some(extra) = extra {
        assert_eq!(extra.len(), set.len());
        for (a, e) in per_gaussian.iter_mut().zip(extra) {
            a.add(e);
        }
    }
    let mut grads = GaussianGrads::zeros_like(set);
    project_backward(set, camera, projected, &per_gaussian, &mut grads);
    let mean2d_grads = per_gaussian.iter().map(|a| a.mean2d).collect();
    Ok(BackwardResult { grads, mean2d_grads, projected_adjoints: per_gaussian })
}
