//! Plane-induced patch warping and the NCC-based multi-view photometric
//! losses, per pixel and per Gaussian.

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::photometric::ncc_with_grad;
use super::selection::FrontGaussianSelection;
use crate::geometry::{confidence_weight, plane_homography, relative_pose, Camera, MIN_PLANE_DISTANCE};
use crate::image::Image;
use crate::rasterizer::{unit_normal_backward, ProjectedAdjoint, RenderAdjoints, RenderOutputs};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    /// Odd patch side length.
    pub patch_size: usize,
    /// Reference-pixel sampling stride for the per-pixel loss.
    pub stride: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self { patch_size: 7, stride: 2 }
    }
}

/// Observed grayscale images and renders of a reference/neighbor pair.
#[derive(Clone, Copy)]
pub struct ViewPair<'a> {
    pub ref_camera: &'a Camera,
    pub ref_gray: &'a Image,
    pub ref_outputs: &'a RenderOutputs,
    pub nbr_camera: &'a Camera,
    pub nbr_gray: &'a Image,
    /// Needed only by the per-pixel loss (backward transfer check).
    pub nbr_outputs: Option<&'a RenderOutputs>,
}

/// `p -> K_n (R - T n^T / delta) K_r^-1 p` for the plane `n . X = -delta`
/// in reference camera coordinates, differentiable in `n` and `delta`.
struct PlaneWarp {
    /// `K_n R`
    base: Matrix3<f64>,
    k_t: Vector3<f64>,
    k_ref_inv: Matrix3<f64>,
    normal: Vector3<f64>,
    delta: f64,
}

struct Warped {
    q: Vector2<f64>,
    h: Vector3<f64>,
    ray: Vector3<f64>,
}

impl PlaneWarp {
    fn new(reference: &Camera, neighbor: &Camera, normal: Vector3<f64>, delta: f64) -> Self {
        let rel = relative_pose(&reference.pose, &neighbor.pose);
        let k_ref_inv = reference.intrinsics.inverse_matrix();
        let k_n = neighbor.intrinsics.matrix();
        Self { base: k_n * rel.rotation, k_t: k_n * rel.translation, k_ref_inv, normal, delta }
    }

    #[inline]
    fn apply(&self, p: &Vector2<f64>) -> Option<Warped> {
        let ray = self.k_ref_inv * Vector3::new(p.x, p.y, 1.0);
        let h = self.base * ray - self.k_t * (self.normal.dot(&ray) / self.delta);
        (h.z > 1e-9).then(|| Warped { q: Vector2::new(h.x / h.z, h.y / h.z), h, ray })
    }

    /// Pulls a gradient on the warped point back to `(normal, delta)`.
    #[inline]
    fn backward(&self, w: &Warped, g_q: &Vector2<f64>) -> (Vector3<f64>, f64) {
        let hz = w.h.z;
        let g_h = Vector3::new(g_q.x / hz, g_q.y / hz, -(g_q.x * w.h.x + g_q.y * w.h.y) / (hz * hz));
        let kg = self.k_t.dot(&g_h);
        let s = self.normal.dot(&w.ray);
        (w.ray * (-kg / self.delta), kg * s / (self.delta * self.delta))
    }
}

/// Rendered tangent plane at a pixel as `(unit normal, delta)` with
/// `n . X = -delta`, matching the ray-plane depth.
fn rendered_plane(out: &RenderOutputs, p: usize) -> Option<(Vector3<f64>, f64)> {
    if !out.is_covered(p) {
        return None;
    }
    let n = out.unit_normal_at(p)?;
    let delta = -out.distance[p] / out.normal_at(p).norm();
    (delta > MIN_PLANE_DISTANCE).then_some((n, delta))
}

fn reference_patch(gray: &Image, x: usize, y: usize, half: usize) -> Option<Vec<f64>> {
    if x < half || y < half || x + half >= gray.width || y + half >= gray.height {
        return None;
    }
    let mut v = Vec::with_capacity((2 * half + 1).pow(2));
    for yy in y - half..=y + half {
        for xx in x - half..=x + half {
            v.push(gray.get(xx, yy, 0));
        }
    }
    Some(v)
}

/// Warped neighbor patch: values plus, per sample, the warp record and the
/// image gradient at the sample.
fn warped_patch(
    gray: &Image,
    warp: &PlaneWarp,
    x: usize,
    y: usize,
    half: usize,
) -> Option<(Vec<f64>, Vec<(Warped, Vector2<f64>)>)> {
    let h = half as isize;
    let mut values = Vec::with_capacity((2 * half + 1).pow(2));
    let mut records = Vec::with_capacity(values.capacity());
    for dy in -h..=h {
        for dx in -h..=h {
            let p = Vector2::new(x as f64 + dx as f64, y as f64 + dy as f64);
            let w = warp.apply(&p)?;
            let (v, gx, gy) = gray.sample_bilinear(w.q.x, w.q.y)?;
            values.push(v);
            records.push((w, Vector2::new(gx, gy)));
        }
    }
    Some((values, records))
}

/// Value, `d/dn` and `d/d delta` of `1 - NCC` for one reference location.
fn patch_term(
    ref_patch: &[f64],
    gray: &Image,
    warp: &PlaneWarp,
    x: usize,
    y: usize,
    half: usize,
) -> Option<(f64, Vector3<f64>, f64)> {
    let (values, records) = warped_patch(gray, warp, x, y, half)?;
    let (score, _, d_nbr) = ncc_with_grad(ref_patch, &values);
    let mut dn = Vector3::zeros();
    let mut dd = 0.0;
    for ((w, grad), g) in records.iter().zip(&d_nbr) {
        // d(1 - ncc)/d sample = -g
        let (a, b) = warp.backward(w, &(grad * -g));
        dn += a;
        dd += b;
    }
    Some((1.0 - score, dn, dd))
}

#[derive(Debug, Clone)]
pub struct MultiViewLoss {
    pub loss: f64,
    /// Adjoints on the reference render's normal, distance and alpha.
    pub adjoints: RenderAdjoints,
    /// Sampled covered reference pixels (the normalizer).
    pub sampled: usize,
    /// Sampled pixels with a nonzero weight.
    pub weighted: usize,
    /// Per sampled pixel: flat index and the forward-backward weight.
    pub weights: Vec<(usize, f64)>,
}

/// Per-pixel weighted `1 - NCC` between reference patches and neighbor
/// patches warped by the rendered plane. The forward-backward weight is
/// treated as a constant.
pub fn multiview_photometric_loss(pair: &ViewPair<'_>, cfg: &PatchConfig) -> MultiViewLoss {
    multiview_loss_impl(pair, cfg, None)
}

/// The same loss with the forward-backward weights fixed to `weights` (as
/// returned in [`MultiViewLoss::weights`]), so the value is a smooth
/// function of the reference render.
pub fn multiview_photometric_loss_with_weights(
    pair: &ViewPair<'_>,
    cfg: &PatchConfig,
    weights: &[(usize, f64)],
) -> MultiViewLoss {
    multiview_loss_impl(pair, cfg, Some(weights))
}

pub(crate) fn multiview_loss_impl(
    pair: &ViewPair<'_>,
    cfg: &PatchConfig,
    frozen_weights: Option<&[(usize, f64)]>,
) -> MultiViewLoss {
    let out = pair.ref_outputs;
    let (w, h) = (out.width, out.height);
    let half = cfg.patch_size / 2;
    let stride = cfg.stride.max(1);
    let nbr_out = pair.nbr_outputs.expect("per-pixel multi-view loss needs the neighbor render");
    let samples: Vec<usize> = (0..h)
        .step_by(stride)
        .flat_map(|y| (0..w).step_by(stride).map(move |x| y * w + x))
        .filter(|&p| rendered_plane(out, p).is_some())
        .collect();
    let mut adjoints = RenderAdjoints::zeros(w, h);
    if samples.is_empty() {
        return MultiViewLoss { loss: 0.0, adjoints, sampled: 0, weighted: 0, weights: Vec::new() };
    }
    let k_ref = &pair.ref_camera.intrinsics;
    let k_nbr = &pair.nbr_camera.intrinsics;
    let rel_nr = relative_pose(&pair.nbr_camera.pose, &pair.ref_camera.pose);

    let per_pixel: Vec<(usize, f64, f64, Vector3<f64>, f64)> = samples
        .par_iter()
        .enumerate()
        .map(|(k, &p)| {
            let (x, y) = (p % w, p / w);
            let (n, delta) = rendered_plane(out, p).unwrap();
            let warp = PlaneWarp::new(pair.ref_camera, pair.nbr_camera, n, delta);
            let weight = match frozen_weights {
                Some(fw) => fw[k].1,
                None => transfer_weight(&warp, x, y, nbr_out, k_nbr, k_ref, &rel_nr),
            };
            if weight == 0.0 {
                return (p, 0.0, 0.0, Vector3::zeros(), 0.0);
            }
            let Some(ref_patch) = reference_patch(pair.ref_gray, x, y, half) else {
                return (p, 0.0, 0.0, Vector3::zeros(), 0.0);
            };
            match patch_term(&ref_patch, pair.nbr_gray, &warp, x, y, half) {
                Some((term, dn, dd)) => (p, weight, term, dn, dd),
                None => (p, 0.0, 0.0, Vector3::zeros(), 0.0),
            }
        })
        .collect();

    let inv = 1.0 / samples.len() as f64;
    let mut total = 0.0;
    let mut weighted = 0;
    let mut weights = Vec::with_capacity(samples.len());
    for &(p, weight, term, dn, dd) in &per_pixel {
        weights.push((p, weight));
        if weight == 0.0 {
            continue;
        }
        weighted += 1;
        total += weight * term;
        let scale = weight * inv;
        let raw = out.normal_at(p);
        let len = raw.norm();
        // delta = -d / |N|
        let d = out.distance[p];
        let g_raw = unit_normal_backward(&raw, &(dn * scale)) + raw * (dd * scale * d / (len * len * len));
        for c in 0..3 {
            adjoints.normal[3 * p + c] += g_raw[c];
        }
        adjoints.distance[p] += -dd * scale / len;
    }
    MultiViewLoss { loss: total * inv, adjoints, sampled: samples.len(), weighted, weights }
}

/// Forward-backward transfer weight of one reference pixel: map with the
/// reference plane, map back with the neighbor's rendered plane at the
/// landing pixel.
fn transfer_weight(
    warp: &PlaneWarp,
    x: usize,
    y: usize,
    nbr_out: &RenderOutputs,
    k_nbr: &crate::geometry::CameraIntrinsics,
    k_ref: &crate::geometry::CameraIntrinsics,
    rel_nr: &crate::geometry::RelativePose,
) -> f64 {
    let p = Vector2::new(x as f64, y as f64);
    let Some(fwd) = warp.apply(&p) else { return 0.0 };
    let (qx, qy) = (fwd.q.x.round(), fwd.q.y.round());
    if !(qx >= 0.0 && qy >= 0.0 && qx < nbr_out.width as f64 && qy < nbr_out.height as f64) {
        return 0.0;
    }
    let pn = qy as usize * nbr_out.width + qx as usize;
    let Some((n_n, delta_n)) = rendered_plane(nbr_out, pn) else { return 0.0 };
    let Ok(h_nr) = plane_homography(k_nbr, k_ref, rel_nr, &n_n, delta_n) else { return 0.0 };
    match h_nr.apply(&fwd.q) {
        Ok(back) => confidence_weight((p - back).norm()),
        Err(_) => 0.0,
    }
}

#[derive(Debug, Clone)]
pub struct GaussianMultiViewLoss {
    pub loss: f64,
    pub adjoints: Vec<ProjectedAdjoint>,
    /// Selected Gaussians whose patches landed inside both images.
    pub contributing: usize,
}

/// Per-Gaussian `psi * (1 - NCC)` with patches warped by each Gaussian's
/// own tangent plane, averaged over the selection.
pub fn gaussian_multiview_loss(
    pair: &ViewPair<'_>,
    sel: &FrontGaussianSelection,
    cfg: &PatchConfig,
    gaussian_count: usize,
) -> GaussianMultiViewLoss {
    let mut adjoints = vec![ProjectedAdjoint::default(); gaussian_count];
    if sel.is_empty() {
        return GaussianMultiViewLoss { loss: 0.0, adjoints, contributing: 0 };
    }
    let half = cfg.patch_size / 2;
    let terms: Vec<Option<(f64, Vector3<f64>, f64)>> = sel
        .entries
        .par_iter()
        .map(|e| {
            let delta = -e.distance;
            if delta <= MIN_PLANE_DISTANCE {
                return None;
            }
            let (x, y) = e.pixel;
            let ref_patch = reference_patch(pair.ref_gray, x, y, half)?;
            let warp = PlaneWarp::new(pair.ref_camera, pair.nbr_camera, e.normal, delta);
            patch_term(&ref_patch, pair.nbr_gray, &warp, x, y, half)
        })
        .collect();
    let inv = 1.0 / sel.len() as f64;
    let mut total = 0.0;
    let mut contributing = 0;
    for (e, t) in sel.entries.iter().zip(&terms) {
        let Some((term, dn, dd)) = t else { continue };
        contributing += 1;
        total += e.psi * term;
        let a = &mut adjoints[e.index];
        a.normal += dn * (e.psi * inv);
        // delta = -distance
        a.distance -= dd * e.psi * inv;
        a.opacity += e.radius * term * inv;
    }
    GaussianMultiViewLoss { loss: total * inv, adjoints, contributing }
}
