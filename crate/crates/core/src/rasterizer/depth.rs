//! Ray-plane depth, depth-gradient normals and cross-bilateral filtering.

use nalgebra::Vector3;

use super::RenderOutputs;
use crate::geometry::CameraIntrinsics;
use crate::image::Image;

/// Denominators `N . ray` above this (normal facing away or grazing) yield
/// the depth sentinel.
const MIN_FACING: f64 = -1e-4;

/// Depth where the pixel ray meets the blended tangent plane.
///
/// The plane is `N . X = d` with the raw blended normal and offset, so its
/// overall scale (partial coverage, normals that do not agree) cancels.
/// Returns the sentinel `0` when coverage is below `alpha_floor` or the
/// plane does not face the camera.
#[inline]
pub fn depth_from_plane(
    normal: &Vector3<f64>,
    distance: f64,
    alpha: f64,
    ray: &Vector3<f64>,
    alpha_floor: f64,
) -> f64 {
    if !(alpha >= alpha_floor) || alpha <= 0.0 {
        return 0.0;
    }
    let len = normal.norm();
    if len < 1e-12 {
        return 0.0;
    }
    let den = normal.dot(ray);
    if den / len >= MIN_FACING {
        return 0.0;
    }
    let d = distance / den;
    if d > 0.0 && d.is_finite() {
        d
    } else {
        0.0
    }
}

/// Adjoint of the unit-normal map: `dL/dN` from `dL/dN_hat`.
#[inline]
pub fn unit_normal_backward(raw: &Vector3<f64>, g_unit: &Vector3<f64>) -> Vector3<f64> {
    let len = raw.norm();
    if len < 1e-12 {
        return Vector3::zeros();
    }
    let n = raw / len;
    (g_unit - n * n.dot(g_unit)) / len
}

/// Adjoint of [`depth_from_plane`] at one pixel. Returns gradients with
/// respect to the raw blended normal and offset.
#[inline]
pub fn depth_backward(
    normal: &Vector3<f64>,
    distance: f64,
    ray: &Vector3<f64>,
    grad_depth: f64,
) -> (Vector3<f64>, f64) {
    let den = normal.dot(ray);
    let d_distance = grad_depth / den;
    let d_normal = ray * (-grad_depth * distance / (den * den));
    (d_normal, d_distance)
}

/// Camera-frame normals estimated from a depth map, with validity flags.
#[derive(Debug, Clone)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    /// `H x W x 3`
    pub normals: Vec<f64>,
    pub valid: Vec<bool>,
}

impl NormalMap {
    #[inline]
    pub fn at(&self, p: usize) -> Vector3<f64> {
        Vector3::new(self.normals[3 * p], self.normals[3 * p + 1], self.normals[3 * p + 2])
    }
}

#[inline]
fn lift(depth: &[f64], intr: &CameraIntrinsics, x: usize, y: usize) -> Vector3<f64> {
    intr.pixel_ray(x as f64, y as f64) * depth[y * intr.width + x]
}

/// Central-difference normals from the backprojected 4-neighborhood,
/// flipped toward the camera. Border pixels and pixels touching a
/// zero-depth sentinel are invalid.
pub fn depth_to_normal(depth: &[f64], intr: &CameraIntrinsics) -> NormalMap {
    let (w, h) = (intr.width, intr.height);
    assert_eq!(depth.len(), w * h);
    let mut normals = vec![0.0; 3 * w * h];
    let mut valid = vec![false; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let p = y * w + x;
            if depth[p] <= 0.0
                || depth[p - 1] <= 0.0
                || depth[p + 1] <= 0.0
                || depth[p - w] <= 0.0
                || depth[p + w] <= 0.0
            {
                continue;
            }
            let a = lift(depth, intr, x + 1, y) - lift(depth, intr, x - 1, y);
            let b = lift(depth, intr, x, y + 1) - lift(depth, intr, x, y - 1);
            let c = a.cross(&b);
            let len = c.norm();
            if len < 1e-18 {
                continue;
            }
            let mut n = c / len;
            if n.dot(&lift(depth, intr, x, y)) > 0.0 {
                n = -n;
            }
            normals[3 * p..3 * p + 3].copy_from_slice(n.as_slice());
            valid[p] = true;
        }
    }
    NormalMap { width: w, height: h, normals, valid }
}

/// Adjoint of [`depth_to_normal`]: accumulates `dL/dD` given `dL/dn` at
/// valid pixels.
pub fn depth_to_normal_backward(
    depth: &[f64],
    intr: &CameraIntrinsics,
    map: &NormalMap,
    grad_normals: &[f64],
    grad_depth: &mut [f64],
) {
    let w = intr.width;
    for p in 0..depth.len() {
        if !map.valid[p] {
            continue;
        }
        let g = Vector3::new(grad_normals[3 * p], grad_normals[3 * p + 1], grad_normals[3 * p + 2]);
        if g == Vector3::zeros() {
            continue;
        }
        let (x, y) = (p % w, p / w);
        let a = lift(depth, intr, x + 1, y) - lift(depth, intr, x - 1, y);
        let b = lift(depth, intr, x, y + 1) - lift(depth, intr, x, y - 1);
        let c = a.cross(&b);
        let len = c.norm();
        let c_hat = c / len;
        let sign = if c_hat.dot(&lift(depth, intr, x, y)) > 0.0 { -1.0 } else { 1.0 };
        let dc = (g - c_hat * c_hat.dot(&g)) * (sign / len);
        let da = b.cross(&dc);
        let db = dc.cross(&a);
        grad_depth[p + 1] += intr.pixel_ray((x + 1) as f64, y as f64).dot(&da);
        grad_depth[p - 1] -= intr.pixel_ray((x - 1) as f64, y as f64).dot(&da);
        grad_depth[p + w] += intr.pixel_ray(x as f64, (y + 1) as f64).dot(&db);
        grad_depth[p - w] -= intr.pixel_ray(x as f64, (y - 1) as f64).dot(&db);
    }
}

/// Cross-bilateral filter guided by a depth map. Pixels whose guide depth
/// is the `0` sentinel neither contribute nor get filtered. The window is
/// clipped symmetrically near the image border. With
/// `renormalize`, 3-channel outputs are rescaled to unit length.
pub fn bilateral_filter(
    map: &Image,
    guide_depth: &Image,
    spatial_sigma: f64,
    range_sigma: f64,
    renormalize: bool,
) -> Image {
    assert!(spatial_sigma > 0.0 && range_sigma > 0.0, "sigmas must be positive");
    assert_eq!((map.width, map.height), (guide_depth.width, guide_depth.height));
    let (w, h, ch) = (map.width, map.height, map.channels);
    let radius = (2.0 * spatial_sigma).ceil() as isize;
    let inv_s = 1.0 / (2.0 * spatial_sigma * spatial_sigma);
    let inv_r = 1.0 / (2.0 * range_sigma * range_sigma);
    let mut out = map.clone();
    let mut acc = vec![0.0; ch];
    for y in 0..h {
        for x in 0..w {
            let gc = guide_depth.get(x, y, 0);
            if gc <= 0.0 {
                continue;
            }
            acc.iter_mut().for_each(|v| *v = 0.0);
            let mut wsum = 0.0;
            // symmetric window so affine maps pass through unchanged at borders
            let radius = radius
                .min(x as isize)
                .min(y as isize)
                .min((w - 1 - x) as isize)
                .min((h - 1 - y) as isize);
            for dy in -radius..=radius {
                let yy = y as isize + dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for dx in -radius..=radius {
                    let xx = x as isize + dx;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let (xx, yy) = (xx as usize, yy as usize);
                    let gq = guide_depth.get(xx, yy, 0);
                    if gq <= 0.0 {
                        continue;
                    }
                    let dr = gq - gc;
                    let wgt = (-((dx * dx + dy * dy) as f64) * inv_s - dr * dr * inv_r).exp();
                    wsum += wgt;
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += wgt * map.get(xx, yy, c);
                    }
                }
            }
            let base = out.index(x, y);
            for c in 0..ch {
                out.data[base + c] = acc[c] / wsum;
            }
            if renormalize && ch == 3 {
                let v = Vector3::new(out.data[base], out.data[base + 1], out.data[base + 2]);
                let len = v.norm();
                if len > 1e-12 {
                    for c in 0..3 {
                        out.data[base + c] /= len;
                    }
                }
            }
        }
    }
    out
}

impl RenderOutputs {
    /// Renormalized blended normals as an image (zeros where undefined).
    pub fn unit_normal_image(&self) -> Image {
        let mut img = Image::new(self.width, self.height, 3);
        for p in 0..self.pixel_count() {
            if let Some(n) = self.unit_normal_at(p) {
                img.data[3 * p..3 * p + 3].copy_from_slice(n.as_slice());
            }
        }
        img
    }
}
