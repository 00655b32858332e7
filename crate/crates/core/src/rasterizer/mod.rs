//! Tile-based CPU rasterizer for Gaussian splats.
//!
//! The forward pass composites depth-sorted splats front to back and blends
//! color, camera-frame normal and tangent-plane offset with the same
//! weights. Per-pixel depth is recovered by intersecting the pixel ray with
//! the blended plane. Contributor lists are kept per tile so the backward
//! pass can replay the compositing in reverse without re-sorting.

mod backward;
mod depth;
mod project;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussians::GaussianSet;
use crate::geometry::Camera;

pub use backward::{render_backward, render_backward_with, BackwardResult, RenderAdjoints};
pub use depth::{
    bilateral_filter, depth_backward, depth_from_plane, depth_to_normal, depth_to_normal_backward,
    unit_normal_backward, NormalMap,
};
pub use project::{project_all, project_backward, project_gaussian, GaussianRow, Projected, ProjectedAdjoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("render outputs carry no contributor lists; render with contributors retained")]
    MissingContributorLists,
    #[error("adjoint buffers do not match the {width}x{height} render")]
    AdjointShape { width: usize, height: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub tile_size: usize,
    /// Splats with per-pixel alpha below this are skipped.
    pub alpha_cutoff: f64,
    /// Compositing stops once transmittance falls below this.
    pub transmittance_floor: f64,
    /// Footprint cut-off in standard deviations.
    pub gaussian_extent_sigmas: f64,
    /// Pixels with accumulated alpha below this get the depth sentinel 0.
    pub alpha_floor: f64,
    /// Gaussians at or closer than this camera-frame depth are culled.
    pub near_plane: f64,
    /// Per-splat alpha clamp.
    pub max_alpha: f64,
    /// Screen-space dilation added to the covariance diagonal (pixels^2).
    pub dilation: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            alpha_cutoff: 1.0 / 255.0,
            transmittance_floor: 1e-4,
            gaussian_extent_sigmas: 3.0,
            alpha_floor: 1e-2,
            near_plane: 0.01,
            max_alpha: 0.99,
            dilation: 0.3,
        }
    }
}

/// One splat's contribution at a pixel, in compositing order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contributor {
    /// Gaussian index.
    pub id: u32,
    /// Position of the Gaussian in its tile list.
    pub slot: u32,
    /// 2D Gaussian value at the pixel.
    pub g: f64,
    /// Transmittance before this splat.
    pub t: f64,
}

#[derive(Debug, Clone)]
pub struct TileContributors {
    pub records: Vec<Contributor>,
    /// Per pixel of the tile (row-major within the tile): `(start, len)`.
    pub ranges: Vec<(u32, u32)>,
}

#[derive(Debug, Clone)]
pub struct TileGrid {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Gaussian ids per tile, front to back.
    pub lists: Vec<Vec<u32>>,
}

impl TileGrid {
    pub fn tile_bounds(&self, tile: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (x0, y0, (x0 + self.tile_size).min(width), (y0 + self.tile_size).min(height))
    }
}

/// Everything produced by one forward render.
#[derive(Debug, Clone)]
pub struct RenderOutputs {
    pub width: usize,
    pub height: usize,
    /// `H x W x 3`
    pub color: Vec<f64>,
    /// Alpha-blended camera-frame normals (not renormalized), `H x W x 3`.
    pub normal: Vec<f64>,
    /// Alpha-blended plane offsets, `H x W`.
    pub distance: Vec<f64>,
    /// Ray-plane depth, `0` where invalid, `H x W`.
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Transmittance left after the last contributor.
    pub final_t: Vec<f64>,
    pub projected: Vec<Projected>,
    pub tiles: TileGrid,
    pub contributors: Option<Vec<TileContributors>>,
}

impl RenderOutputs {
    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn color_at(&self, p: usize) -> Vector3<f64> {
        Vector3::new(self.color[3 * p], self.color[3 * p + 1], self.color[3 * p + 2])
    }

    #[inline]
    pub fn normal_at(&self, p: usize) -> Vector3<f64> {
        Vector3::new(self.normal[3 * p], self.normal[3 * p + 1], self.normal[3 * p + 2])
    }

    /// Renormalized blended normal, `None` where the blend vanishes.
    #[inline]
    pub fn unit_normal_at(&self, p: usize) -> Option<Vector3<f64>> {
        let n = self.normal_at(p);
        let len = n.norm();
        (len > 1e-12).then(|| n / len)
    }

    /// Pixels used by geometric losses: well covered and with a valid depth.
    #[inline]
    pub fn is_covered(&self, p: usize) -> bool {
        self.alpha[p] > COVERAGE_THRESHOLD && self.depth[p] > 0.0
    }

    pub fn color_image(&self) -> crate::image::Image {
        crate::image::Image::from_data(self.width, self.height, 3, self.color.clone())
    }

    pub fn depth_image(&self) -> crate::image::Image {
        crate::image::Image::from_data(self.width, self.height, 1, self.depth.clone())
    }
}

/// Accumulated alpha above which a pixel counts as covered by the surface.
pub const COVERAGE_THRESHOLD: f64 = 0.5;

/// Builds the per-tile, front-to-back ordered Gaussian lists.
pub fn bin_tiles(projected: &[Projected], width: usize, height: usize, tile_size: usize) -> TileGrid {
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let mut order: Vec<u32> = (0..projected.len() as u32).filter(|&i| projected[i as usize].visible).collect();
    // depth first, index breaks ties
    order.sort_by(|&a, &b| {
        projected[a as usize]
            .depth()
            .total_cmp(&projected[b as usize].depth())
            .then(a.cmp(&b))
    });
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    let ts = tile_size as f64;
    for &i in &order {
        let p = &projected[i as usize];
        let (mx, my, r) = (p.mean2d.x, p.mean2d.y, p.radius);
        if mx + r < -0.5 || my + r < -0.5 || mx - r > width as f64 - 0.5 || my - r > height as f64 - 0.5 {
            continue;
        }
        let x0 = (((mx - r).max(0.0)) / ts).floor() as usize;
        let y0 = (((my - r).max(0.0)) / ts).floor() as usize;
        let x1 = ((((mx + r).min(width as f64 - 1.0)) / ts).floor() as usize).min(tiles_x - 1);
        let y1 = ((((my + r).min(height as f64 - 1.0)) / ts).floor() as usize).min(tiles_y - 1);
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                lists[ty * tiles_x + tx].push(i);
            }
        }
    }
    TileGrid { tile_size, tiles_x, tiles_y, lists }
}

/// Forward render with contributor lists retained.
pub fn render(set: &GaussianSet, camera: &Camera, cfg: &RenderConfig) -> RenderOutputs {
    render_with(set, camera, cfg, None, true)
}

/// Forward render, optionally restricted to a subset of Gaussians.
pub fn render_with(
    set: &GaussianSet,
    camera: &Camera,
    cfg: &RenderConfig,
    subset: Option<&[bool]>,
    keep_contributors: bool,
) -> RenderOutputs {
    let mut projected = project_all(set, camera, cfg);
    if let Some(mask) = subset {
        assert_eq!(mask.len(), set.len());
        for (p, &keep) in projected.iter_mut().zip(mask) {
            if !keep {
                p.visible = false;
            }
        }
    }
    render_projected(projected, camera, cfg, keep_contributors)
}

struct TileResult {
    color: Vec<f64>,
    normal: Vec<f64>,
    distance: Vec<f64>,
    final_t: Vec<f64>,
    contributors: Option<TileContributors>,
}

pub fn render_projected(
    projected: Vec<Projected>,
    camera: &Camera,
    cfg: &RenderConfig,
    keep_contributors: bool,
) -> RenderOutputs {
    let intr = &camera.intrinsics;
    let (width, height) = (intr.width, intr.height);
    let tiles = bin_tiles(&projected, width, height, cfg.tile_size);
    let extent2 = cfg.gaussian_extent_sigmas * cfg.gaussian_extent_sigmas;

    let results: Vec<TileResult> = (0..tiles.lists.len())
        .into_par_iter()
        .map(|tile| {
            let (x0, y0, x1, y1) = tiles.tile_bounds(tile, width, height);
            let n = (x1 - x0) * (y1 - y0);
            let list = &tiles.lists[tile];
            let mut out = TileResult {
                color: vec![0.0; 3 * n],
                normal: vec![0.0; 3 * n],
                distance: vec![0.0; n],
                final_t: vec![1.0; n],
                contributors: keep_contributors
                    .then(|| TileContributors { records: Vec::new(), ranges: Vec::with_capacity(n) }),
            };
            let mut local = 0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let px = Vector2::new(x as f64, y as f64);
                    let mut t = 1.0;
                    let mut feat = [0.0f64; 7];
                    let start = out.contributors.as_ref().map_or(0, |c| c.records.len());
                    for (slot, &id) in list.iter().enumerate() {
                        let p = &projected[id as usize];
                        let d = px - p.mean2d;
                        let power = p.conic[(0, 0)] * d.x * d.x
                            + 2.0 * p.conic[(0, 1)] * d.x * d.y
                            + p.conic[(1, 1)] * d.y * d.y;
                        if power > extent2 {
                            continue;
                        }
                        let g = (-0.5 * power).exp();
                        let a = (p.opacity * g).min(cfg.max_alpha);
                        if a < cfg.alpha_cutoff {
                            continue;
                        }
                        if let Some(c) = out.contributors.as_mut() {
                            c.records.push(Contributor { id, slot: slot as u32, g, t });
                        }
                        let w = t * a;
                        let f = p.features();
                        for k in 0..7 {
                            feat[k] += w * f[k];
                        }
                        t *= 1.0 - a;
                        if t < cfg.transmittance_floor {
                            break;
                        }
                    }
                    if let Some(c) = out.contributors.as_mut() {
                        let len = c.records.len() - start;
                        c.ranges.push((start as u32, len as u32));
                    }
                    out.color[3 * local..3 * local + 3].copy_from_slice(&feat[0..3]);
                    out.normal[3 * local..3 * local + 3].copy_from_slice(&feat[3..6]);
                    out.distance[local] = feat[6];
                    out.final_t[local] = t;
                    local += 1;
                }
            }
            out
        })
        .collect();

    let npx = width * height;
    let mut color = vec![0.0; 3 * npx];
    let mut normal = vec![0.0; 3 * npx];
    let mut distance = vec![0.0; npx];
    let mut final_t = vec![1.0; npx];
    let mut contributors = keep_contributors.then(|| Vec::with_capacity(results.len()));
    for (tile, res) in results.into_iter().enumerate() {
        let (x0, y0, x1, y1) = tiles.tile_bounds(tile, width, height);
        let mut local = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = y * width + x;
                color[3 * p..3 * p + 3].copy_from_slice(&res.color[3 * local..3 * local + 3]);
                normal[3 * p..3 * p + 3].copy_from_slice(&res.normal[3 * local..3 * local + 3]);
                distance[p] = res.distance[local];
                final_t[p] = res.final_t[local];
                local += 1;
            }
        }
        if let (Some(all), Some(c)) = (contributors.as_mut(), res.contributors) {
            all.push(c);
        }
    }
    let alpha: Vec<f64> = final_t.iter().map(|t| 1.0 - t).collect();
    let depth = (0..npx)
        .map(|p| {
            let n = Vector3::new(normal[3 * p], normal[3 * p + 1], normal[3 * p + 2]);
            let ray = intr.pixel_ray((p % width) as f64, (p / width) as f64);
            depth_from_plane(&n, distance[p], alpha[p], &ray, cfg.alpha_floor)
        })
        .collect();

    RenderOutputs { width, height, color, normal, distance, depth, alpha, final_t, projected, tiles, contributors }
}

#[cfg(test)]
mod tests;
