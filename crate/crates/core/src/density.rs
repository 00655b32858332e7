//! Population control: gradient-driven clone/split/prune and opacity-guided
//! resampling of surface-aligned Gaussians from rendered depth and normals.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussians::{create_flattened, GaussianParams, GaussianSet, DEFAULT_FLATTEN_RATIO};
use crate::geometry::Camera;
use crate::image::Image;
use crate::losses::select_front_gaussians;
use crate::rasterizer::{bilateral_filter, render_with, RenderConfig, RenderOutputs};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("every resampling weight is zero")]
    EmptyWeightMap,
    #[error("map has {actual} entries, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Thresholds for clone/split/prune.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensifyConfig {
    /// Mean NDC-space positional gradient norm above which a Gaussian is
    /// densified.
    pub grad_threshold: f64,
    pub prune_opacity: f64,
    /// Clone instead of split when the largest scale is below this fraction
    /// of the scene extent.
    pub clone_scale_fraction: f64,
    /// Prune when the largest scale exceeds this fraction of the extent.
    pub prune_scale_fraction: f64,
    pub split_scale_divisor: f64,
    /// Prune Gaussians whose projected radius ever exceeded this many
    /// pixels since the last reset. `None` disables the test.
    pub max_screen_size: Option<f64>,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            grad_threshold: 2e-4,
            prune_opacity: 0.005,
            clone_scale_fraction: 0.01,
            prune_scale_fraction: 0.1,
            split_scale_divisor: 1.6,
            max_screen_size: None,
        }
    }
}

/// Where each Gaussian of a rebuilt set came from: `Some(old index)` for
/// kept or copied rows, `None` for rows with fresh state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Remap {
    pub old_len: usize,
    pub sources: Vec<Option<usize>>,
}

impl Remap {
    pub fn identity(n: usize) -> Self {
        Self { old_len: n, sources: (0..n).map(Some).collect() }
    }

    /// Keeps all old rows and appends `added` fresh ones.
    pub fn append(n: usize, added: usize) -> Self {
        let mut r = Self::identity(n);
        r.sources.extend(std::iter::repeat_n(None, added));
        r
    }

    pub fn new_len(&self) -> usize {
        self.sources.len()
    }

    /// Rebuilds a row-major per-Gaussian array; fresh rows are zero.
    pub fn apply(&self, data: &[f64], stride: usize) -> Vec<f64> {
        assert_eq!(data.len(), self.old_len * stride, "array length does not match the remap");
        let mut out = Vec::with_capacity(self.sources.len() * stride);
        for s in &self.sources {
            match s {
                Some(i) => out.extend_from_slice(&data[i * stride..(i + 1) * stride]),
                None => out.extend(std::iter::repeat_n(0.0, stride)),
            }
        }
        out
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Remap) -> Remap {
        assert_eq!(next.old_len, self.new_len());
        Remap { old_len: self.old_len, sources: next.sources.iter().map(|s| s.and_then(|i| self.sources[i])).collect() }
    }
}

/// Per-Gaussian densification statistics accumulated between events.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DensifyState {
    pub grad_accum: Vec<f64>,
    pub counts: Vec<u32>,
    pub max_radii: Vec<f64>,
}

impl DensifyState {
    pub fn new(n: usize) -> Self {
        Self { grad_accum: vec![0.0; n], counts: vec![0; n], max_radii: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Adds one view's screen-space gradients. Pixel-space gradients are
    /// converted to NDC scale so the threshold is resolution independent.
    pub fn accumulate(&mut self, outputs: &RenderOutputs, mean2d_grads: &[Vector2<f64>]) {
        assert_eq!(mean2d_grads.len(), self.len());
        assert_eq!(outputs.projected.len(), self.len());
        let (hw, hh) = (0.5 * outputs.width as f64, 0.5 * outputs.height as f64);
        for (i, (p, g)) in outputs.projected.iter().zip(mean2d_grads).enumerate() {
            if !p.visible {
                continue;
            }
            self.grad_accum[i] += Vector2::new(g.x * hw, g.y * hh).norm();
            self.counts[i] += 1;
            self.max_radii[i] = self.max_radii[i].max(p.radius);
        }
    }

    pub fn mean_grad(&self, i: usize) -> f64 {
        if self.counts[i] == 0 {
            0.0
        } else {
            self.grad_accum[i] / self.counts[i] as f64
        }
    }

    /// Carries statistics through a remap; fresh rows start at zero.
    pub fn apply_remap(&mut self, remap: &Remap) {
        let pick = |v: &[f64]| remap.apply(v, 1);
        self.grad_accum = pick(&self.grad_accum);
        self.max_radii = pick(&self.max_radii);
        let counts: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        self.counts = pick(&counts).into_iter().map(|c| c as u32).collect();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

fn sample_in_footprint(set: &GaussianSet, i: usize, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
    set.rotation(i) * set.scales(i).component_mul(&z)
}

/// Clones or splits high-gradient Gaussians, then prunes transparent and
/// oversized ones. The set is rebuilt in place and `state` is reset to the
/// new length. The returned remap carries other per-Gaussian state across.
pub fn densify_and_prune(
    set: &mut GaussianSet,
    state: &mut DensifyState,
    cfg: &DensifyConfig,
    scene_extent: f64,
    rng: &mut ChaCha8Rng,
) -> (Remap, DensifyReport) {
    assert_eq!(state.len(), set.len(), "densify state out of sync with the set");
    let n = set.len();
    let mut report = DensifyReport::default();
    let mut out = GaussianSet::new(set.sh_degree);
    let mut sources = Vec::with_capacity(n);
    let mut children = Vec::new();

    for i in 0..n {
        let p = set.params(i);
        if state.mean_grad(i) <= cfg.grad_threshold {
            out.push(&p);
            sources.push(Some(i));
            continue;
        }
        let max_scale = set.scales(i).max();
        let offset = sample_in_footprint(set, i, rng);
        if max_scale <= cfg.clone_scale_fraction * scene_extent {
            report.cloned += 1;
            for sgn in [1.0, -1.0] {
                children.push((i, GaussianParams { center: p.center + offset * sgn, ..p.clone() }));
            }
        } else {
            report.split += 1;
            let shrink = cfg.split_scale_divisor.ln();
            let second = sample_in_footprint(set, i, rng);
            for off in [offset, second] {
                children.push((
                    i,
                    GaussianParams {
                        center: p.center + off,
                        log_scales: p.log_scales.add_scalar(-shrink),
                        ..p.clone()
                    },
                ));
            }
        }
    }
    for (parent, child) in &children {
        out.push(child);
        sources.push(Some(*parent));
    }

    let limit = cfg.prune_scale_fraction * scene_extent;
    let keep: Vec<bool> = (0..out.len())
        .map(|j| {
            let parent = sources[j].unwrap();
            let too_wide = cfg.max_screen_size.is_some_and(|m| state.max_radii[parent] > m);
            out.opacity(j) >= cfg.prune_opacity && out.scales(j).max() <= limit && !too_wide
        })
        .collect();
    report.pruned = keep.iter().filter(|k| !**k).count();
    out.retain_mask(&keep);
    let sources: Vec<Option<usize>> = sources.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(s, _)| s).collect();

    *set = out;
    *state = DensifyState::new(set.len());
    (Remap { old_len: n, sources }, report)
}

/// Accumulated alpha of the Gaussians lying on or in front of the rendered
/// surface (within `tolerance` of the rendered depth).
pub fn front_opacity_map(
    set: &GaussianSet,
    camera: &Camera,
    cfg: &RenderConfig,
    outputs: &RenderOutputs,
    tolerance: f64,
) -> Vec<f64> {
    let mask = select_front_gaussians(outputs, tolerance).mask(set.len());
    render_with(set, camera, cfg, Some(&mask), false).alpha
}

/// `round(n_per_view * mean(weights))`, rounding halves up.
pub fn reinit_sample_count(weights: &[f64], n_per_view: usize) -> usize {
    if weights.is_empty() {
        return 0;
    }
    let mean = weights.iter().map(|w| w.clamp(0.0, 1.0)).sum::<f64>() / weights.len() as f64;
    (n_per_view as f64 * mean + 0.5).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleConfig {
    pub n_per_view: usize,
    /// Footprint radius of a new Gaussian, in pixels at its depth.
    pub radius_px: f64,
    pub flatten_ratio: f64,
    pub filter_spatial_sigma: f64,
    /// Range sigma of the inverse-depth guided filter, relative to the
    /// median inverse depth.
    pub filter_range_sigma: f64,
    /// Front-test tolerance relative to the scene extent.
    pub front_tolerance: f64,
    /// Spread draws of the same pixel over its footprint on the local plane.
    pub jitter: bool,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self {
            n_per_view: 10_000,
            radius_px: 2.0,
            flatten_ratio: DEFAULT_FLATTEN_RATIO,
            filter_spatial_sigma: 1.5,
            filter_range_sigma: 0.02,
            front_tolerance: 0.01,
            jitter: true,
        }
    }
}

/// Per-pixel sampling weights `1 - alpha_front` with unusable pixels
/// (uncovered or sentinel depth) set to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampleBudget {
    pub n_per_view: usize,
    pub weights: Vec<f64>,
}

impl ResampleBudget {
    pub fn new(outputs: &RenderOutputs, front_alpha: &[f64], n_per_view: usize) -> Result<Self, DensityError> {
        if front_alpha.len() != outputs.pixel_count() {
            return Err(DensityError::DimensionMismatch { expected: outputs.pixel_count(), actual: front_alpha.len() });
        }
        let weights = front_alpha
            .iter()
            .enumerate()
            .map(|(p, a)| if outputs.is_covered(p) { (1.0 - a).clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        Ok(Self { n_per_view, weights })
    }

    pub fn count(&self) -> usize {
        reinit_sample_count(&self.weights, self.n_per_view)
    }
}

/// `n` pixel indices drawn with replacement, proportional to `weights`.
pub fn draw_pixels(weights: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, DensityError> {
    let dist = WeightedIndex::new(weights).map_err(|_| DensityError::EmptyWeightMap)?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResampleOutcome {
    pub added: usize,
    pub pixels: Vec<usize>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 1.0;
    }
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Draws `budget.count()` pixels and appends one flattened Gaussian per draw,
/// placed on the filtered depth and oriented by the filtered normal.
pub fn resample_view(
    set: &mut GaussianSet,
    camera: &Camera,
    observed: &Image,
    outputs: &RenderOutputs,
    budget: &ResampleBudget,
    cfg: &ResampleConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ResampleOutcome, DensityError> {
    let (w, h) = (outputs.width, outputs.height);
    if budget.weights.len() != w * h {
        return Err(DensityError::DimensionMismatch { expected: w * h, actual: budget.weights.len() });
    }
    if observed.width != w || observed.height != h || observed.channels != 3 {
        return Err(DensityError::DimensionMismatch { expected: 3 * w * h, actual: observed.data.len() });
    }
    // inverse depth is affine over a plane, so symmetric averaging keeps
    // planes flat
    let depth_img = outputs.depth_image();
    let inv_img = Image::from_data(w, h, 1, depth_img.data.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 }).collect());
    let scale = median(inv_img.data.iter().copied().filter(|d| *d > 0.0).collect());
    let sigma_r = cfg.filter_range_sigma * scale;
    let mut depth = bilateral_filter(&inv_img, &inv_img, cfg.filter_spatial_sigma, sigma_r, false);
    depth.data.iter_mut().for_each(|v| *v = if *v > 0.0 { 1.0 / *v } else { 0.0 });
    let normals = bilateral_filter(&outputs.unit_normal_image(), &inv_img, cfg.filter_spatial_sigma, sigma_r, true);

    let weights: Vec<f64> = (0..w * h)
        .map(|p| {
            let n = Vector3::new(normals.data[3 * p], normals.data[3 * p + 1], normals.data[3 * p + 2]);
            if depth.data[p] > 0.0 && n.norm() > 0.5 {
                budget.weights[p]
            } else {
                0.0
            }
        })
        .collect();
    let count = budget.count();
    let pixels = draw_pixels(&weights, count, rng)?;

    let intr = &camera.intrinsics;
    let r_wc = camera.pose.rotation.transpose();
    let footprint = 2.0 / (intr.fx + intr.fy) * cfg.radius_px;
    for &p in &pixels {
        let (x, y) = ((p % w) as f64, (p / w) as f64);
        let d = depth.data[p];
        let n_cam = Vector3::new(normals.data[3 * p], normals.data[3 * p + 1], normals.data[3 * p + 2]);
        let anchor = intr.pixel_ray(x, y) * d;
        let mut point = anchor;
        if cfg.jitter {
            let (jx, jy): (f64, f64) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let ray = intr.pixel_ray(x + jx, y + jy);
            let den = n_cam.dot(&ray);
            if den.abs() > 1e-3 {
                let t = n_cam.dot(&anchor) / den;
                if t > 0.0 && (t - d).abs() < 0.1 * d {
                    point = ray * t;
                }
            }
        }
        let world = camera.pose.camera_to_world(&point);
        let color = Vector3::from_fn(|c, _| observed.get(p % w, p / w, c).clamp(0.0, 1.0));
        let radius = d * footprint;
        set.push(&create_flattened(&world, &(r_wc * n_cam), radius, &color, cfg.flatten_ratio, set.sh_degree));
    }
    Ok(ResampleOutcome { added: pixels.len(), pixels })
}

#[cfg(test)]
mod tests;
