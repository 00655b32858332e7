//! Starting Gaussians when no seed cloud is given.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::eval::KdTree;
use crate::gaussians::{inverse_sigmoid, GaussianParams, GaussianSet};
use crate::geometry::Camera;
use crate::sh;

use super::config::InitConfig;

/// Axis-aligned box `(lo, hi)`.
pub type Bounds = (Vector3<f64>, Vector3<f64>);

fn sees(camera: &Camera, p: &Vector3<f64>) -> bool {
    camera.project(p).is_ok_and(|(px, depth)| depth > 0.0 && camera.intrinsics.contains(&px))
}

fn bounds_of<'a>(points: impl Iterator<Item = &'a Vector3<f64>>) -> Bounds {
    points.fold((Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)), |(lo, hi), p| (lo.inf(p), hi.sup(p)))
}

fn uniform_in(rng: &mut ChaCha8Rng, (lo, hi): &Bounds) -> Vector3<f64> {
    Vector3::from_fn(|k, _| lo[k] + (hi[k] - lo[k]) * rng.random::<f64>())
}

/// Bounding box of the region every camera sees, estimated from uniform
/// candidates in the camera-center box grown by `scene_extent`. Falls back
/// to the region seen by any camera when the intersection is (nearly) empty.
pub fn frustum_intersection_bounds(cameras: &[Camera], scene_extent: f64, samples: usize, rng: &mut ChaCha8Rng) -> Bounds {
    let (lo, hi) = bounds_of(cameras.iter().map(|c| &c.pose.center));
    let outer = (lo.add_scalar(-scene_extent), hi.add_scalar(scene_extent));
    let candidates: Vec<Vector3<f64>> = (0..samples).map(|_| uniform_in(rng, &outer)).collect();
    let all: Vec<&Vector3<f64>> = candidates.iter().filter(|p| cameras.iter().all(|c| sees(c, p))).collect();
    if all.len() >= 16 {
        return bounds_of(all.into_iter());
    }
    let any: Vec<&Vector3<f64>> = candidates.iter().filter(|p| cameras.iter().any(|c| sees(c, p))).collect();
    if any.is_empty() {
        outer
    } else {
        bounds_of(any.into_iter())
    }
}

/// Mean distance from each point to its `k` nearest other points.
pub fn mean_neighbor_distances(points: &[Vector3<f64>], k: usize) -> Vec<f64> {
    let tree = KdTree::new(points);
    points
        .iter()
        .map(|p| {
            let near = tree.k_nearest(p, k + 1);
            // the query point itself comes first
            let others: Vec<f64> = near.iter().skip(1).map(|e| e.0).collect();
            if others.is_empty() {
                0.0
            } else {
                others.iter().sum::<f64>() / others.len() as f64
            }
        })
        .collect()
}

/// Uniform points in the frustum-intersection box, isotropic with scale
/// equal to the mean neighbor distance, mid-gray, and with the configured
/// opacity.
pub fn initialize_gaussians(
    cameras: &[Camera],
    scene_extent: f64,
    cfg: &InitConfig,
    sh_degree: usize,
    rng: &mut ChaCha8Rng,
) -> GaussianSet {
    let bounds = frustum_intersection_bounds(cameras, scene_extent, cfg.bound_samples, rng);
    let points: Vec<Vector3<f64>> = (0..cfg.points).map(|_| uniform_in(rng, &bounds)).collect();
    from_points(&points, cfg, sh_degree)
}

/// Isotropic Gaussians at `points`.
pub fn from_points(points: &[Vector3<f64>], cfg: &InitConfig, sh_degree: usize) -> GaussianSet {
    let dists = mean_neighbor_distances(points, cfg.scale_neighbors);
    let mut set = GaussianSet::new(sh_degree);
    let logit = inverse_sigmoid(cfg.opacity);
    let mut coeffs = vec![0.0; sh::basis_count(sh_degree) * 3];
    for c in coeffs.iter_mut().take(3) {
        *c = sh::rgb_to_dc(0.5);
    }
    for (p, d) in points.iter().zip(dists) {
        let s = d.max(1e-7).ln();
        set.push(&GaussianParams {
            center: *p,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scales: Vector3::repeat(s),
            opacity_logit: logit,
            sh: coeffs.clone(),
        });
    }
    set
}
