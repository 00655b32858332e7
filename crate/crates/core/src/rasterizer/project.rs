//! Per-view EWA projection of Gaussians and its adjoint.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::RenderConfig;
use crate::gaussians::{min_scale_axis, sigmoid, GaussianGrads, GaussianSet, MAX_OPACITY_LOGIT};
use crate::geometry::{quaternion_to_rotation, quaternion_to_rotation_backward, Camera};
use crate::sh;

/// Screen-space footprint and per-view attributes of one Gaussian.
#[derive(Debug, Clone, Copy)]
pub struct Projected {
    /// False when the Gaussian is behind the near plane or degenerate.
    pub visible: bool,
    pub mean2d: Vector2<f64>,
    /// Screen covariance including the anti-aliasing dilation.
    pub cov2d: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    /// Footprint radius in pixels.
    pub radius: f64,
    /// Camera-frame center.
    pub cam_point: Vector3<f64>,
    /// Camera-frame unit normal facing the camera.
    pub normal: Vector3<f64>,
    /// Signed tangent-plane offset `cam_point . normal` (negative for
    /// camera-facing normals).
    pub distance: f64,
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub color_live: [bool; 3],
    /// World-space unit direction from the camera center to the Gaussian.
    pub view_dir: Vector3<f64>,
    pub normal_sign: f64,
    pub min_axis: usize,
}

impl Projected {
    fn culled() -> Self {
        Self {
            visible: false,
            mean2d: Vector2::zeros(),
            cov2d: Matrix2::zeros(),
            conic: Matrix2::zeros(),
            radius: 0.0,
            cam_point: Vector3::zeros(),
            normal: Vector3::zeros(),
            distance: 0.0,
            opacity: 0.0,
            color: Vector3::zeros(),
            color_live: [false; 3],
            view_dir: Vector3::zeros(),
            normal_sign: 1.0,
            min_axis: 0,
        }
    }

    /// Camera-frame depth of the center.
    #[inline]
    pub fn depth(&self) -> f64 {
        self.cam_point.z
    }

    /// Blended feature vector: color, normal, plane offset.
    #[inline]
    pub fn features(&self) -> [f64; 7] {
        [
            self.color.x,
            self.color.y,
            self.color.z,
            self.normal.x,
            self.normal.y,
            self.normal.z,
            self.distance,
        ]
    }
}

/// Adjoints of a single Gaussian's screen-space attributes.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProjectedAdjoint {
    pub mean2d: Vector2<f64>,
    /// Gradient with respect to the conic entries `(a, b, c)` of
    /// `a dx^2 + 2 b dx dy + c dy^2`.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub distance: f64,
}

impl ProjectedAdjoint {
    pub fn add(&mut self, o: &ProjectedAdjoint) {
        self.mean2d += o.mean2d;
        for k in 0..3 {
            self.conic[k] += o.conic[k];
        }
        self.opacity += o.opacity;
        self.color += o.color;
        self.normal += o.normal;
        self.distance += o.distance;
    }
}

#[inline]
fn projection_jacobian(camera: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let k = &camera.intrinsics;
    let (x, y, z) = (t.x, t.y, t.z);
    Matrix2x3::new(k.fx / z, 0.0, -k.fx * x / (z * z), 0.0, k.fy / z, -k.fy * y / (z * z))
}

/// Projects one Gaussian into a view.
pub fn project_gaussian(set: &GaussianSet, i: usize, camera: &Camera, cfg: &RenderConfig) -> Projected {
    let pose = &camera.pose;
    let intr = &camera.intrinsics;
    let mu = set.center(i);
    let t = pose.world_to_camera(&mu);
    if t.z <= cfg.near_plane {
        return Projected::culled();
    }
    let q = set.quaternion(i);
    let r = quaternion_to_rotation(&q);
    let s = set.scales(i);
    let rs = r * Matrix3::from_diagonal(&s);
    let sigma3 = rs * rs.transpose();
    let w = &pose.rotation;
    let m = w * sigma3 * w.transpose();
    let j = projection_jacobian(camera, &t);
    let mut cov2d = j * m * j.transpose();
    cov2d[(0, 0)] += cfg.dilation;
    cov2d[(1, 1)] += cfg.dilation;
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
    if !(det > 0.0) || !det.is_finite() {
        return Projected::culled();
    }
    let conic = Matrix2::new(cov2d[(1, 1)] / det, -cov2d[(0, 1)] / det, -cov2d[(1, 0)] / det, cov2d[(0, 0)] / det);
    let mid = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = cfg.gaussian_extent_sigmas * lambda_max.sqrt();
    let mean2d = Vector2::new(intr.fx * t.x / t.z + intr.cx, intr.fy * t.y / t.z + intr.cy);

    let offset = mu - pose.center;
    let view_dir = offset / offset.norm();
    let min_axis = min_scale_axis(&s);
    let axis = r.column(min_axis).into_owned();
    let normal_sign = if axis.dot(&view_dir) > 0.0 { -1.0 } else { 1.0 };
    let normal = w * axis * normal_sign;
    let distance = t.dot(&normal);
    let (color, color_live) = sh::eval_color(set.sh_degree, set.sh_coeffs(i), &view_dir);

    Projected {
        visible: true,
        mean2d,
        cov2d,
        conic,
        radius,
        cam_point: t,
        normal,
        distance,
        opacity: set.opacity(i),
        color,
        color_live,
        view_dir,
        normal_sign,
        min_axis,
    }
}

pub fn project_all(set: &GaussianSet, camera: &Camera, cfg: &RenderConfig) -> Vec<Projected> {
    (0..set.len())
        .into_par_iter()
        .map(|i| project_gaussian(set, i, camera, cfg))
        .collect()
}

/// Adjoint of [`project_gaussian`]; accumulates parameter gradients for
/// Gaussian `i` into `grads`.
pub fn project_backward_one(
    set: &GaussianSet,
    i: usize,
    camera: &Camera,
    p: &Projected,
    adj: &ProjectedAdjoint,
    grads: &mut GaussianRow<'_>,
) {
    if !p.visible {
        return;
    }
    let pose = &camera.pose;
    let intr = &camera.intrinsics;
    let w = &pose.rotation;
    let t = p.cam_point;
    let (x, y, z) = (t.x, t.y, t.z);

    // opacity
    let logit = set.opacity_logits[i];
    if logit.abs() < MAX_OPACITY_LOGIT {
        let a = sigmoid(logit);
        grads.opacity[0] += adj.opacity * a * (1.0 - a);
    }

    let mut d_t = Vector3::zeros();
    let mut d_mu = Vector3::zeros();

    // color through SH and the viewing direction
    if adj.color != Vector3::zeros() {
        let d_dir = sh::eval_color_backward(
            set.sh_degree,
            set.sh_coeffs(i),
            &p.view_dir,
            p.color_live,
            &adj.color,
            grads.sh,
        );
        let dist = (set.center(i) - pose.center).norm();
        d_mu += (d_dir - p.view_dir * p.view_dir.dot(&d_dir)) / dist;
    }

    // plane offset d = t . n and the camera-frame normal n = W (sign * R e_k)
    let d_normal = adj.normal + t * adj.distance;
    d_t += p.normal * adj.distance;
    let mut d_rot = Matrix3::zeros();
    if d_normal != Vector3::zeros() {
        let d_axis = w.transpose() * d_normal * p.normal_sign;
        d_rot.set_column(p.min_axis, &d_axis);
    }

    // mean2d
    d_t.x += adj.mean2d.x * intr.fx / z;
    d_t.y += adj.mean2d.y * intr.fy / z;
    d_t.z -= adj.mean2d.x * intr.fx * x / (z * z) + adj.mean2d.y * intr.fy * y / (z * z);

    // conic -> 2D covariance -> 3D covariance
    let [da, db, dc] = adj.conic;
    if da != 0.0 || db != 0.0 || dc != 0.0 {
        let g_conic = Matrix2::new(da, 0.5 * db, 0.5 * db, dc);
        let g_cov2d = -p.conic * g_conic * p.conic;
        let q = set.quaternion(i);
        let r = quaternion_to_rotation(&q);
        let s = set.scales(i);
        let rs = r * Matrix3::from_diagonal(&s);
        let sigma3 = rs * rs.transpose();
        let m = w * sigma3 * w.transpose();
        let j = projection_jacobian(camera, &t);
        let g_m = j.transpose() * g_cov2d * j;
        let g_j = 2.0 * g_cov2d * j * m;
        d_t.x += g_j[(0, 2)] * (-intr.fx / (z * z));
        d_t.y += g_j[(1, 2)] * (-intr.fy / (z * z));
        d_t.z += g_j[(0, 0)] * (-intr.fx / (z * z))
            + g_j[(0, 2)] * (2.0 * intr.fx * x / (z * z * z))
            + g_j[(1, 1)] * (-intr.fy / (z * z))
            + g_j[(1, 2)] * (2.0 * intr.fy * y / (z * z * z));
        let g_sigma3 = w.transpose() * g_m * w;
        let s2 = Matrix3::from_diagonal(&s.component_mul(&s));
        d_rot += 2.0 * g_sigma3 * r * s2;
        let inner = r.transpose() * g_sigma3 * r;
        for k in 0..3 {
            // d/dlog s = s * d/ds = 2 s^2 (R^T G R)_kk
            grads.log_scales[k] += 2.0 * s[k] * s[k] * inner[(k, k)];
        }
    }

    if d_rot != Matrix3::zeros() {
        let dq = quaternion_to_rotation_backward(&set.quaternion(i), &d_rot);
        for k in 0..4 {
            grads.rotations[k] += dq[k];
        }
    }

    d_mu += w.transpose() * d_t;
    for k in 0..3 {
        grads.centers[k] += d_mu[k];
    }
}

/// Mutable view of one Gaussian's rows in a gradient buffer.
pub struct GaussianRow<'a> {
    pub centers: &'a mut [f64],
    pub rotations: &'a mut [f64],
    pub log_scales: &'a mut [f64],
    pub opacity: &'a mut [f64],
    pub sh: &'a mut [f64],
}

/// Runs [`project_backward_one`] for every Gaussian with a nonzero adjoint,
/// in parallel over disjoint gradient rows.
pub fn project_backward(
    set: &GaussianSet,
    camera: &Camera,
    projected: &[Projected],
    adjoints: &[ProjectedAdjoint],
    grads: &mut GaussianGrads,
) {
    assert_eq!(projected.len(), set.len());
    assert_eq!(adjoints.len(), set.len());
    let sh_stride = set.sh_stride();
    let GaussianGrads { centers, rotations, log_scales, opacity_logits, sh, .. } = grads;
    centers
        .par_chunks_mut(3)
        .zip(rotations.par_chunks_mut(4))
        .zip(log_scales.par_chunks_mut(3))
        .zip(opacity_logits.par_chunks_mut(1))
        .zip(sh.par_chunks_mut(sh_stride))
        .enumerate()
        .for_each(|(i, ((((c, r), l), o), s))| {
            let mut row = GaussianRow { centers: c, rotations: r, log_scales: l, opacity: o, sh: s };
            project_backward_one(set, i, camera, &projected[i], &adjoints[i], &mut row);
        });
}
