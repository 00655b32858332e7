//! Point-set and image metrics: centroid accuracy and completeness, F-score
//! at a distance threshold, PSNR and SSIM, and error-colored point clouds.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussians::GaussianSet;
use crate::image::Image;
use crate::losses::ssim as ssim_impl;
use crate::ply::PointCloud;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("reference point set is empty")]
    EmptyReference,
    #[error("point set is empty")]
    EmptyInput,
    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("image dimensions {actual:?} do not match {expected:?}")]
    DimensionMismatch { expected: (usize, usize, usize), actual: (usize, usize, usize) },
}

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static 3D kd-tree over a point set.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    /// Original index of each reordered point.
    index: Vec<usize>,
    nodes: Vec<Node>,
}

#[inline]
fn dist2(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a - b).norm_squared()
}

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut tree = KdTree { points: points.to_vec(), index: (0..points.len()).collect(), nodes: Vec::new() };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
        for p in &self.points[start..end] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let axis = (hi - lo).imax();
        let mid = (start + end) / 2;
        let mut order: Vec<usize> = (start..end).collect();
        order.select_nth_unstable_by(mid - start, |&a, &b| self.points[a][axis].total_cmp(&self.points[b][axis]));
        let pts: Vec<Vector3<f64>> = order.iter().map(|&i| self.points[i]).collect();
        let idx: Vec<usize> = order.iter().map(|&i| self.index[i]).collect();
        self.points[start..end].copy_from_slice(&pts);
        self.index[start..end].copy_from_slice(&idx);
        let value = self.points[mid][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Nearest point: `(distance, original index)`.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(f64, usize)> {
        if self.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(0, q, &mut best);
        Some((best.0.sqrt(), self.index[best.1]))
    }

    fn search(&self, node: usize, q: &Vector3<f64>, best: &mut (f64, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start..end {
                    let d = dist2(q, &self.points[i]);
                    if d < best.0 {
                        *best = (d, i);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.0 {
                    self.search(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points in increasing distance: `(distance, index)`.
    pub fn k_nearest(&self, q: &Vector3<f64>, k: usize) -> Vec<(f64, usize)> {
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 && !self.is_empty() {
            self.search_k(0, q, k, &mut heap);
        }
        heap.into_iter().map(|(d, i)| (d.sqrt(), self.index[i])).collect()
    }

    fn search_k(&self, node: usize, q: &Vector3<f64>, k: usize, best: &mut Vec<(f64, usize)>) {
        let worst = |b: &Vec<(f64, usize)>| if b.len() < k { f64::INFINITY } else { b[b.len() - 1].0 };
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start..end {
                    let d = dist2(q, &self.points[i]);
                    if d < worst(best) {
                        let pos = best.partition_point(|e| e.0 <= d);
                        best.insert(pos, (d, i));
                        best.truncate(k);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search_k(near, q, k, best);
                if diff * diff <= worst(best) {
                    self.search_k(far, q, k, best);
                }
            }
        }
    }
}

/// Distance from every point of `a` to its nearest neighbor in `b`.
pub fn nearest_distances(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<Vec<f64>, EvalError> {
    if b.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let tree = KdTree::new(b);
    Ok(a.par_iter().map(|p| tree.nearest(p).unwrap().0).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub accuracy: f64,
    pub completeness: f64,
    pub chamfer: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tau: f64,
    pub points: usize,
    pub gt_points: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn geometry_report(centers: &[Vector3<f64>], gt: &[Vector3<f64>], tau: f64) -> Result<GeometryReport, EvalError> {
    if centers.is_empty() || gt.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if !(tau > 0.0) {
        return Err(EvalError::InvalidThreshold(tau));
    }
    let to_gt = nearest_distances(centers, gt)?;
    let to_pred = nearest_distances(gt, centers)?;
    let within = |d: &[f64]| d.iter().filter(|&&x| x <= tau).count() as f64 / d.len() as f64;
    let (accuracy, completeness) = (mean(&to_gt), mean(&to_pred));
    let (precision, recall) = (within(&to_gt), within(&to_pred));
    Ok(GeometryReport {
        accuracy,
        completeness,
        chamfer: accuracy + completeness,
        precision,
        recall,
        f1: f1_score(precision, recall),
        tau,
        points: centers.len(),
        gt_points: gt.len(),
    })
}

/// Half a percent of the bounding-box diagonal.
pub fn default_tau(gt: &[Vector3<f64>]) -> f64 {
    let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
    for p in gt {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    0.005 * (hi - lo).norm()
}

/// Gaussian centers, optionally only those with opacity at least
/// `min_opacity`.
pub fn gaussian_centers(set: &GaussianSet, min_opacity: Option<f64>) -> Vec<Vector3<f64>> {
    (0..set.len()).filter(|&i| min_opacity.is_none_or(|m| set.opacity(i) >= m)).map(|i| set.center(i)).collect()
}

pub const PSNR_CAP: f64 = 100.0;

fn check_shape(a: &Image, b: &Image) -> Result<(), EvalError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(EvalError::DimensionMismatch {
            expected: (a.width, a.height, a.channels),
            actual: (b.width, b.height, b.channels),
        })
    }
}

/// `-10 log10(MSE)` for images in [0, 1], capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64, EvalError> {
    check_shape(a, b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64, EvalError> {
    check_shape(a, b)?;
    Ok(ssim_impl(a, b))
}

/// Blue at zero error to red at `tau_max` and beyond:
/// `rgb = round(255 (t, 0, 1 - t))` with `t = min(d / tau_max, 1)`.
pub fn error_color(d: f64, tau_max: f64) -> [u8; 3] {
    let t = (d / tau_max).clamp(0.0, 1.0);
    [(255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8]
}

pub fn error_colored_cloud(centers: &[Vector3<f64>], gt: &[Vector3<f64>], tau_max: f64) -> Result<PointCloud, EvalError> {
    if centers.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if !(tau_max > 0.0) {
        return Err(EvalError::InvalidThreshold(tau_max));
    }
    let d = nearest_distances(centers, gt)?;
    Ok(PointCloud { points: centers.to_vec(), normals: None, colors: Some(d.iter().map(|&x| error_color(x, tau_max)).collect()) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub geometry: GeometryReport,
    pub images: Vec<ImageReport>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub gaussians: usize,
    pub min_opacity: Option<f64>,
}
