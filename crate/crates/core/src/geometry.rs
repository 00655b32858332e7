//! Pinhole cameras, rigid transforms and plane-induced homographies.
//!
//! Pixel centers sit at integer coordinates and homogeneous pixels are
//! `(u, v, 1)`. Poses store the world-to-camera rotation together with the
//! camera center, so a world point `X` maps to `R (X - c)` in camera space.

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

/// Camera-frame depths at or below this value are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;
/// Smallest admissible plane distance for a homography.
pub const MIN_PLANE_DISTANCE: f64 = 1e-9;
/// Homogeneous coordinates with `w` at or below this are at infinity.
pub const MIN_HOMOGENEOUS_W: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (camera-frame depth {0})")]
    BehindCamera(f64),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("degenerate plane: distance {0} too small")]
    DegeneratePlane(f64),
    #[error("homogeneous coordinate {0} maps to infinity")]
    ProjectionAtInfinity(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal with determinant +1")]
    InvalidRotation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let intr = Self { fx, fy, cx, cy, width, height };
        intr.validate()?;
        Ok(intr)
    }

    /// Intrinsics with the principal point at the image center and a
    /// horizontal field of view in radians.
    pub fn from_fov(fov_x: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self::new(
            f,
            f,
            0.5 * (width as f64 - 1.0),
            0.5 * (height as f64 - 1.0),
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive ({}, {})",
                self.fx, self.fy
            )));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        if !(self.cx > 0.0 && self.cx < w && self.cy > 0.0 && self.cy < h) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// `K^-1 (u, v, 1)`: the camera-frame ray through a pixel, with unit z.
    #[inline]
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= -0.5
            && p.y >= -0.5
            && p.x < self.width as f64 - 0.5
            && p.y < self.height as f64 - 0.5
    }
}

/// World-to-camera rotation plus camera center in world units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub center: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, center: Vector3<f64>) -> Result<Self, GeometryError> {
        let pose = Self { rotation, center };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), center: Vector3::zeros() }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let r = &self.rotation;
        let orth = (r * r.transpose() - Matrix3::identity()).abs().max();
        if orth > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(())
    }

    /// Camera looking from `eye` toward `target`. Camera axes follow the
    /// x-right, y-down, z-forward convention; `up` is a world direction
    /// that should appear upward in the image.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            // up parallel to the view direction
            let alt = if forward.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            right = forward.cross(&alt);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self { rotation, center: eye }
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (p - self.center)
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * p + self.center
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }
}

/// Intrinsics and pose of one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, pose: CameraPose) -> Self {
        Self { intrinsics, pose }
    }

    pub fn project(&self, point: &Vector3<f64>) -> Result<(Vector2<f64>, f64), GeometryError> {
        project(point, &self.intrinsics, &self.pose)
    }

    pub fn backproject(&self, pixel: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>, GeometryError> {
        backproject(pixel, depth, &self.intrinsics, &self.pose)
    }
}

/// Maps reference-camera coordinates to neighbor-camera coordinates:
/// `X_n = rotation * X_r + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RelativePose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &RelativePose) -> RelativePose {
        RelativePose {
            rotation: next.rotation * self.rotation,
            translation: next.rotation * self.translation + next.translation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(pub Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn inverse(&self) -> Option<Homography> {
        self.0.try_inverse().map(Homography)
    }

    /// Maps a pixel and dehomogenizes.
    #[inline]
    pub fn apply(&self, p: &Vector2<f64>) -> Result<Vector2<f64>, GeometryError> {
        let q = self.0 * Vector3::new(p.x, p.y, 1.0);
        dehomogenize(&q)
    }
}

#[inline]
pub fn dehomogenize(q: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
    if q.z <= MIN_HOMOGENEOUS_W {
        return Err(GeometryError::ProjectionAtInfinity(q.z));
    }
    Ok(Vector2::new(q.x / q.z, q.y / q.z))
}

/// Projects a world point; returns the pixel and the camera-frame depth.
pub fn project(
    point: &Vector3<f64>,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<(Vector2<f64>, f64), GeometryError> {
    let p = pose.world_to_camera(point);
    if p.z <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera(p.z));
    }
    let pixel = Vector2::new(intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy);
    Ok((pixel, p.z))
}

/// Lifts a pixel at camera-frame depth `depth` back to world space.
pub fn backproject(
    pixel: &Vector2<f64>,
    depth: f64,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<Vector3<f64>, GeometryError> {
    if !(depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    let cam = intr.pixel_ray(pixel.x, pixel.y) * depth;
    Ok(pose.camera_to_world(&cam))
}

pub fn relative_pose(reference: &CameraPose, neighbor: &CameraPose) -> RelativePose {
    // X_r = R_r (X - c_r)  =>  X = R_r^T X_r + c_r
    // X_n = R_n (X - c_n) = R_n R_r^T X_r + R_n (c_r - c_n)
    let rotation = neighbor.rotation * reference.rotation.transpose();
    let translation = neighbor.rotation * (reference.center - neighbor.center);
    RelativePose { rotation, translation }
}

/// Homography induced by the plane `{X : n.X + d = 0}` expressed in the
/// reference camera frame, with `d > 0` the distance from the reference
/// center to the plane.
pub fn plane_homography(
    k_ref: &CameraIntrinsics,
    k_nbr: &CameraIntrinsics,
    rel: &RelativePose,
    normal: &Vector3<f64>,
    distance: f64,
) -> Result<Homography, GeometryError> {
    if !(distance > MIN_PLANE_DISTANCE) {
        return Err(GeometryError::DegeneratePlane(distance));
    }
    let inner = rel.rotation - rel.translation * normal.transpose() / distance;
    Ok(Homography(k_nbr.matrix() * inner * k_ref.inverse_matrix()))
}

/// Forward-backward transfer error and the associated confidence weight.
///
/// Returns `(phi, w)` with `w = exp(-phi)` when `phi < 1` and `0` otherwise.
pub fn reprojection_weight(
    p_ref: &Vector2<f64>,
    h_rn: &Homography,
    h_nr: &Homography,
) -> Result<(f64, f64), GeometryError> {
    let forward = h_rn.apply(p_ref)?;
    let back = h_nr.apply(&forward)?;
    let phi = (p_ref - back).norm();
    Ok((phi, confidence_weight(phi)))
}

#[inline]
pub fn confidence_weight(phi: f64) -> f64 {
    if phi < 1.0 {
        (-phi).exp()
    } else {
        0.0
    }
}

/// Rotation matrix from a (w, x, y, z) quaternion, normalizing first.
pub fn quaternion_to_rotation(q: &[f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    unit_quaternion_to_rotation(w, x, y, z)
}

#[inline]
pub(crate) fn unit_quaternion_to_rotation(w: f64, x: f64, y: f64, z: f64) -> Matrix3<f64> {
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Adjoint of [`quaternion_to_rotation`]: maps `dL/dR` to `dL/dq` for the
/// raw (unnormalized) quaternion.
pub fn quaternion_to_rotation_backward(q: &[f64; 4], d_rot: &Matrix3<f64>) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let g = d_rot;
    // derivatives with respect to the unit quaternion
    let dw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    // through the normalization u = q / |q|
    let du = [dw, dx, dy, dz];
    let u = [w, x, y, z];
    let dot: f64 = du.iter().zip(&u).map(|(a, b)| a * b).sum();
    [
        (du[0] - dot * u[0]) / n,
        (du[1] - dot * u[1]) / n,
        (du[2] - dot * u[2]) / n,
        (du[3] - dot * u[3]) / n,
    ]
}

/// Unit quaternion (w, x, y, z) for a rotation matrix.
pub fn rotation_to_quaternion(r: &Matrix3<f64>) -> [f64; 4] {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
    [q.w, q.i, q.j, q.k]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 110.0, 50.0, 40.0, 100, 80).unwrap()
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let q = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        quaternion_to_rotation(&q)
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> CameraPose {
        let c = Vector3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        );
        CameraPose::new(random_rotation(rng), c).unwrap()
    }

    #[test]
    fn project_on_axis_hits_principal_point() {
        let k = intr();
        let (p, z) = project(&Vector3::new(0.0, 0.0, 2.0), &k, &CameraPose::identity()).unwrap();
        assert_eq!(p, Vector2::new(k.cx, k.cy));
        assert_eq!(z, 2.0);
    }

    #[test]
    fn project_direct_substitution() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
        let (p, z) = project(&Vector3::new(1.0, 0.0, 1.0), &k, &CameraPose::identity()).unwrap();
        assert_eq!(p, Vector2::new(150.0, 50.0));
        assert_eq!(z, 1.0);
    }

    #[test]
    fn project_behind_camera_fails() {
        let err = project(&Vector3::new(0.0, 0.0, -1.0), &intr(), &CameraPose::identity());
        assert!(matches!(err, Err(GeometryError::BehindCamera(_))));
    }

    #[test]
    fn backproject_principal_point() {
        let k = intr();
        let p = backproject(&Vector2::new(k.cx, k.cy), 3.0, &k, &CameraPose::identity()).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 3.0));
        assert!(matches!(
            backproject(&Vector2::new(1.0, 1.0), 0.0, &k, &CameraPose::identity()),
            Err(GeometryError::NonPositiveDepth(_))
        ));
    }

    #[test]
    fn project_backproject_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = intr();
        for _ in 0..1000 {
            let pose = random_pose(&mut rng);
            let u = Vector2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..80.0));
            let d = rng.random_range(0.1..20.0);
            let x = backproject(&u, d, &k, &pose).unwrap();
            let (u2, d2) = project(&x, &k, &pose).unwrap();
            assert!((u - u2).norm() < 1e-9);
            assert!((d - d2).abs() < 1e-9);
            let (u3, d3) = project(&x, &k, &pose).unwrap();
            let x2 = backproject(&u3, d3, &k, &pose).unwrap();
            assert!((x - x2).norm() < 1e-9);
        }
    }

    #[test]
    fn relative_pose_identity_and_sign() {
        let a = CameraPose::identity();
        let rel = relative_pose(&a, &a);
        assert_eq!(rel.rotation, Matrix3::identity());
        assert_eq!(rel.translation, Vector3::zeros());

        let b = CameraPose::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let rel = relative_pose(&a, &b);
        assert_eq!(rel.translation, Vector3::new(-1.0, 0.0, 0.0));
    }

    #[test]
    fn relative_pose_transfers_points_and_composes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
            let x = Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            let rel = relative_pose(&a, &b);
            let direct = b.world_to_camera(&x);
            let via = rel.transform(&a.world_to_camera(&x));
            assert!((direct - via).norm() < 1e-9);

            let ac = relative_pose(&a, &c);
            let abc = rel.then(&relative_pose(&b, &c));
            assert!((ac.rotation - abc.rotation).abs().max() < 1e-9);
            assert!((ac.translation - abc.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn homography_identity_and_pure_rotation() {
        let k = intr();
        let h = plane_homography(&k, &k, &RelativePose::identity(), &Vector3::z(), 2.0).unwrap();
        assert!((h.0 - Matrix3::identity()).abs().max() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rot = random_rotation(&mut rng);
        let rel = RelativePose { rotation: rot, translation: Vector3::zeros() };
        let k2 = CameraIntrinsics::new(90.0, 95.0, 45.0, 35.0, 90, 70).unwrap();
        let expected = k2.matrix() * rot * k.inverse_matrix();
        for n in [Vector3::z(), Vector3::new(0.6, 0.0, -0.8)] {
            let h = plane_homography(&k, &k2, &rel, &n, 3.0).unwrap();
            assert!((h.0 - expected).abs().max() < 1e-12);
        }
        assert!(matches!(
            plane_homography(&k, &k, &rel, &Vector3::z(), 0.0),
            Err(GeometryError::DegeneratePlane(_))
        ));
    }

    #[test]
    fn homography_matches_ray_plane_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k_ref = intr();
        let k_nbr = CameraIntrinsics::new(120.0, 118.0, 60.0, 45.0, 120, 90).unwrap();
        let mut checked = 0;
        while checked < 500 {
            let ref_pose = random_pose(&mut rng);
            let nbr_pose = random_pose(&mut rng);
            let rel = relative_pose(&ref_pose, &nbr_pose);
            let n = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..-0.2),
            )
            .normalize();
            let d = rng.random_range(0.5..5.0);
            let h = plane_homography(&k_ref, &k_nbr, &rel, &n, d).unwrap();
            let u = Vector2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..80.0));
            // oracle: intersect the pixel ray with n.X + d = 0, then reproject
            let ray = k_ref.pixel_ray(u.x, u.y);
            let denom = n.dot(&ray);
            if denom.abs() < 0.1 {
                continue;
            }
            let t = -d / denom;
            if t <= 0.0 {
                continue;
            }
            let x_ref = ray * t;
            let x_nbr = rel.transform(&x_ref);
            if x_nbr.z < 0.1 {
                continue;
            }
            let expected =
                Vector2::new(k_nbr.fx * x_nbr.x / x_nbr.z + k_nbr.cx, k_nbr.fy * x_nbr.y / x_nbr.z + k_nbr.cy);
            let got = h.apply(&u).unwrap();
            assert!((got - expected).norm() < 1e-6, "{got} vs {expected}");
            checked += 1;
        }
    }

    #[test]
    fn reprojection_weight_cases() {
        let p = Vector2::new(10.0, 20.0);
        let id = Homography::identity();
        assert_eq!(reprojection_weight(&p, &id, &id).unwrap(), (0.0, 1.0));

        let shift = Homography(Matrix3::new(1.0, 0.0, 1.5, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0));
        let (phi, w) = reprojection_weight(&p, &shift, &id).unwrap();
        assert!((phi - 1.5).abs() < 1e-12);
        assert_eq!(w, 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = intr();
        let rel = relative_pose(&CameraPose::identity(), &random_pose(&mut rng));
        let h = plane_homography(&k, &k, &rel, &Vector3::new(0.0, 0.0, -1.0), 4.0).unwrap();
        let hinv = h.inverse().unwrap();
        for _ in 0..200 {
            let u = Vector2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..80.0));
            if let Ok((phi, w)) = reprojection_weight(&u, &h, &hinv) {
                assert!(phi < 1e-9);
                assert!((w - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn confidence_weight_is_decreasing_with_cutoff() {
        let mut prev = confidence_weight(0.0);
        for i in 1..100 {
            let w = confidence_weight(i as f64 / 100.0);
            assert!(w < prev);
            prev = w;
        }
        assert_eq!(confidence_weight(1.0), 0.0);
        assert_eq!(confidence_weight(7.0), 0.0);
    }

    #[test]
    fn rotation_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let q = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let g = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let analytic = quaternion_to_rotation_backward(&q, &g);
            for k in 0..4 {
                let h = 1e-6;
                let mut qp = q;
                let mut qm = q;
                qp[k] += h;
                qm[k] -= h;
                let fp = quaternion_to_rotation(&qp).component_mul(&g).sum();
                let fm = quaternion_to_rotation(&qm).component_mul(&g).sum();
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - analytic[k]).abs() < 1e-6, "{fd} vs {}", analytic[k]);
            }
        }
    }

    #[test]
    fn look_at_points_forward() {
        let pose = CameraPose::look_at(
            Vector3::new(0.0, -5.0, 0.0),
            Vector3::zeros(),
            Vector3::z(),
        );
        pose.validate().unwrap();
        let p = pose.world_to_camera(&Vector3::zeros());
        assert!((p - Vector3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
        // world up appears toward negative image y
        let up = pose.world_to_camera(&Vector3::new(0.0, 0.0, 1.0));
        assert!(up.y < 0.0);
    }
}
