//! Ray-traced synthetic scenes with exact depth, normals and surface
//! samples, plus their on-disk dataset format.
//!
//! The world is z-up. Cameras sit on a horizontal circle around a target
//! point and look at it. Shading is two-sided Lambertian with a fixed
//! directional light, so appearance is view independent.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Camera, CameraIntrinsics, CameraPose, GeometryError};
use crate::image::{quantize_u8, Image, ImageError};
use crate::kv::{self, join_floats, KvError, Section};
use crate::ply::{PlyError, PointCloud};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error("scene file: {0}")]
    SceneFile(#[from] KvError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("scene json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Solid { color: [f64; 3] },
    /// 3D checkerboard over world coordinates.
    Checker { cell: f64, a: [f64; 3], b: [f64; 3] },
    /// Smooth lattice value noise blending between two colors.
    Noise { frequency: f64, octaves: u32, seed: u64, a: [f64; 3], b: [f64; 3] },
}

fn hash3(x: i64, y: i64, z: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [x, y, z] {
        h ^= v as u64;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(p: &Vector3<f64>, seed: u64) -> f64 {
    let base = p.map(f64::floor);
    let f = p - base;
    let s = f.map(|t| t * t * (3.0 - 2.0 * t));
    let (ix, iy, iz) = (base.x as i64, base.y as i64, base.z as i64);
    let mut acc = 0.0;
    for corner in 0..8 {
        let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
        let w = (if dx == 1 { s.x } else { 1.0 - s.x })
            * (if dy == 1 { s.y } else { 1.0 - s.y })
            * (if dz == 1 { s.z } else { 1.0 - s.z });
        acc += w * hash3(ix + dx, iy + dy, iz + dz, seed);
    }
    acc
}

impl Texture {
    pub fn albedo(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let mix = |a: &[f64; 3], b: &[f64; 3], t: f64| Vector3::from_fn(|i, _| a[i] + (b[i] - a[i]) * t);
        match self {
            Texture::Solid { color } => Vector3::from(*color),
            Texture::Checker { cell, a, b } => {
                let k = (p / *cell).map(f64::floor);
                let parity = (k.x + k.y + k.z).rem_euclid(2.0);
                mix(a, b, parity)
            }
            Texture::Noise { frequency, octaves, seed, a, b } => {
                let (mut sum, mut norm, mut amp, mut freq) = (0.0, 0.0, 1.0, *frequency);
                for o in 0..(*octaves).max(1) {
                    sum += amp * value_noise(&(p * freq), seed.wrapping_add(o as u64));
                    norm += amp;
                    amp *= 0.5;
                    freq *= 2.0;
                }
                mix(a, b, sum / norm)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Rectangle `center + a u + b v` for `a, b in [-1, 1]`; `u` and `v` are
    /// orthogonal half-edge vectors.
    Rect { center: [f64; 3], u: [f64; 3], v: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
    /// Axis-aligned box surface, visible from inside and outside.
    Box { center: [f64; 3], half: [f64; 3] },
}

const HIT_EPS: f64 = 1e-9;

impl Shape {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidScene(m.to_string()));
        match *self {
            Shape::Rect { u, v, .. } => {
                let (u, v) = (Vector3::from(u), Vector3::from(v));
                if u.norm() <= 0.0 || v.norm() <= 0.0 {
                    return bad("rectangle with a zero edge");
                }
                if u.dot(&v).abs() > 1e-9 * u.norm() * v.norm() {
                    return bad("rectangle edges are not orthogonal");
                }
            }
            Shape::Sphere { radius, .. } if radius <= 0.0 => return bad("sphere radius must be positive"),
            Shape::Box { half, .. } if half.iter().any(|&h| h <= 0.0) => return bad("box half extents must be positive"),
            _ => {}
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        match *self {
            Shape::Rect { u, v, .. } => 4.0 * Vector3::from(u).norm() * Vector3::from(v).norm(),
            Shape::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
            Shape::Box { half, .. } => 8.0 * (half[0] * half[1] + half[1] * half[2] + half[0] * half[2]),
        }
    }

    /// Nearest hit with `t > HIT_EPS` along `o + t d`; returns `t` and the
    /// unoriented unit normal.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match *self {
            Shape::Rect { center, u, v } => {
                let (c, u, v) = (Vector3::from(center), Vector3::from(u), Vector3::from(v));
                let n = u.cross(&v).normalize();
                let den = n.dot(d);
                if den.abs() < 1e-15 {
                    return None;
                }
                let t = n.dot(&(c - o)) / den;
                if t <= HIT_EPS {
                    return None;
                }
                let rel = o + d * t - c;
                let inside = rel.dot(&u).abs() <= u.norm_squared() && rel.dot(&v).abs() <= v.norm_squared();
                inside.then_some((t, n))
            }
            Shape::Sphere { center, radius } => {
                let oc = o - Vector3::from(center);
                let a = d.norm_squared();
                let b = oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                // cancellation-free roots
                let q = -(b + disc.sqrt().copysign(b));
                let (r1, r2) = (q / a, if q != 0.0 { c / q } else { q / a });
                let (lo, hi) = (r1.min(r2), r1.max(r2));
                let t = if lo > HIT_EPS { lo } else if hi > HIT_EPS { hi } else { return None };
                Some((t, (oc + d * t) / radius))
            }
            Shape::Box { center, half } => {
                let (c, h) = (Vector3::from(center), Vector3::from(half));
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    if d[k].abs() < 1e-300 {
                        if (o[k] - c[k]).abs() > h[k] {
                            return None;
                        }
                        continue;
                    }
                    let ta = (c[k] - h[k] - o[k]) / d[k];
                    let tb = (c[k] + h[k] - o[k]) / d[k];
                    t0 = t0.max(ta.min(tb));
                    t1 = t1.min(ta.max(tb));
                }
                if t0 > t1 {
                    return None;
                }
                let t = if t0 > HIT_EPS { t0 } else if t1 > HIT_EPS { t1 } else { return None };
                let rel = o + d * t - c;
                let k = (0..3).max_by(|&a, &b| (rel[a].abs() / h[a]).total_cmp(&(rel[b].abs() / h[b]))).unwrap();
                let mut n = Vector3::zeros();
                n[k] = rel[k].signum();
                Some((t, n))
            }
        }
    }

    /// Uniform point on the surface with its outward normal.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> (Vector3<f64>, Vector3<f64>) {
        match *self {
            Shape::Rect { center, u, v } => {
                let (c, u, v) = (Vector3::from(center), Vector3::from(u), Vector3::from(v));
                let (a, b): (f64, f64) = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
                (c + u * a + v * b, u.cross(&v).normalize())
            }
            Shape::Sphere { center, radius } => {
                let n = loop {
                    let z = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
                    let len: f64 = z.norm();
                    if len > 1e-12 {
                        break z / len;
                    }
                };
                (Vector3::from(center) + n * radius, n)
            }
            Shape::Box { center, half } => {
                let h = Vector3::from(half);
                let face_areas = [h.y * h.z, h.y * h.z, h.x * h.z, h.x * h.z, h.x * h.y, h.x * h.y];
                let face = WeightedIndex::new(face_areas).unwrap().sample(rng);
                let axis = face / 2;
                let sign = if face % 2 == 0 { -1.0 } else { 1.0 };
                let mut rel = Vector3::from_fn(|i, _| rng.random_range(-1.0..=1.0) * h[i]);
                rel[axis] = sign * h[axis];
                let mut n = Vector3::zeros();
                n[axis] = sign;
                (Vector3::from(center) + rel, n)
            }
        }
    }

    /// Signed residual of the implicit surface equation (zero on the
    /// surface).
    pub fn implicit(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Shape::Rect { center, u, v } => {
                let n = Vector3::from(u).cross(&Vector3::from(v)).normalize();
                n.dot(&(p - Vector3::from(center)))
            }
            Shape::Sphere { center, radius } => (p - Vector3::from(center)).norm() - radius,
            Shape::Box { center, half } => {
                let rel = p - Vector3::from(center);
                (0..3).map(|k| rel[k].abs() / half[k]).fold(0.0, f64::max) - 1.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub texture: Texture,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Light {
    pub ambient: f64,
    pub diffuse: f64,
    pub direction: [f64; 3],
}

impl Default for Light {
    fn default() -> Self {
        Self { ambient: 0.4, diffuse: 0.6, direction: [0.4, 0.3, 1.0] }
    }
}

/// Cameras on a horizontal circle of `radius` around `target`, raised by
/// `elevation`, all looking at the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitRig {
    pub count: usize,
    /// Extra evaluation views placed half-way between training views.
    pub holdout: usize,
    pub radius: f64,
    pub elevation: f64,
    pub target: [f64; 3],
    pub fov_x_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl OrbitRig {
    fn camera_at(&self, azimuth: f64) -> Result<Camera, SynthError> {
        let t = Vector3::from(self.target);
        let eye = t + Vector3::new(self.radius * azimuth.cos(), self.radius * azimuth.sin(), self.elevation);
        let intr = CameraIntrinsics::from_fov(self.fov_x_deg.to_radians(), self.width, self.height)?;
        Ok(Camera::new(intr, CameraPose::look_at(eye, t, Vector3::z())))
    }

    pub fn train_cameras(&self) -> Result<Vec<Camera>, SynthError> {
        let step = std::f64::consts::TAU / self.count as f64;
        (0..self.count).map(|i| self.camera_at(step * i as f64)).collect()
    }

    pub fn holdout_cameras(&self) -> Result<Vec<Camera>, SynthError> {
        let step = std::f64::consts::TAU / self.count as f64;
        (0..self.holdout).map(|j| self.camera_at(step * ((j * self.count / self.holdout) as f64 + 0.5))).collect()
    }

    pub fn centers(&self) -> Result<Vec<Vector3<f64>>, SynthError> {
        Ok(self.train_cameras()?.iter().map(|c| c.pose.center).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthScene {
    pub name: String,
    pub primitives: Vec<Primitive>,
    pub rig: OrbitRig,
    pub light: Light,
    pub background: [f64; 3],
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_sigma: f64,
    pub seed: u64,
    pub gt_samples: usize,
}

pub const PRESETS: [&str; 3] = ["two-planes", "sphere-on-plane", "box-room"];

fn noise_texture(seed: u64, a: [f64; 3], b: [f64; 3]) -> Texture {
    Texture::Noise { frequency: 4.0, octaves: 2, seed, a, b }
}

impl GroundTruthScene {
    fn with(name: &str, primitives: Vec<Primitive>, rig: OrbitRig) -> Self {
        Self {
            name: name.to_string(),
            primitives,
            rig,
            light: Light::default(),
            background: [0.0; 3],
            noise_sigma: 0.0,
            seed: 0,
            gt_samples: 100_000,
        }
    }

    /// One of the built-in benchmark scenes.
    pub fn preset(name: &str) -> Option<Self> {
        let rig = |radius, elevation, target, fov| OrbitRig {
            count: 16,
            holdout: 4,
            radius,
            elevation,
            target,
            fov_x_deg: fov,
            width: 128,
            height: 128,
        };
        let floor = |half: f64, seed| Primitive {
            shape: Shape::Rect { center: [0.0; 3], u: [half, 0.0, 0.0], v: [0.0, half, 0.0] },
            texture: noise_texture(seed, [0.80, 0.62, 0.40], [0.22, 0.30, 0.50]),
        };
        Some(match name {
            // floor z = 0 and wall y = 1 meeting in an L
            "two-planes" => Self::with(
                name,
                vec![
                    floor(1.0, 11),
                    Primitive {
                        shape: Shape::Rect { center: [0.0, 1.0, 1.0], u: [1.0, 0.0, 0.0], v: [0.0, 0.0, 1.0] },
                        texture: noise_texture(23, [0.35, 0.70, 0.45], [0.70, 0.25, 0.30]),
                    },
                ],
                rig(3.0, 2.0, [0.0, 0.3, 0.5], 50.0),
            ),
            "sphere-on-plane" => Self::with(
                name,
                vec![
                    floor(1.5, 11),
                    Primitive {
                        shape: Shape::Sphere { center: [0.0, 0.0, 0.5], radius: 0.5 },
                        texture: noise_texture(37, [0.85, 0.45, 0.30], [0.30, 0.45, 0.75]),
                    },
                ],
                rig(3.5, 2.0, [0.0, 0.0, 0.3], 50.0),
            ),
            "box-room" => Self::with(
                name,
                vec![Primitive {
                    shape: Shape::Box { center: [0.0, 0.0, 1.25], half: [2.0, 2.0, 1.25] },
                    texture: noise_texture(5, [0.75, 0.70, 0.55], [0.25, 0.35, 0.45]),
                }],
                rig(1.0, 0.0, [0.0, 0.0, 1.2], 70.0),
            ),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.primitives.is_empty() {
            return Err(SynthError::InvalidScene("empty primitive list".into()));
        }
        for p in &self.primitives {
            p.shape.validate()?;
        }
        let r = &self.rig;
        if r.count == 0 || r.width == 0 || r.height == 0 || r.radius <= 0.0 {
            return Err(SynthError::InvalidScene("rig needs cameras, a positive radius and a nonempty image".into()));
        }
        if r.holdout > r.count {
            return Err(SynthError::InvalidScene("more holdout views than training views".into()));
        }
        if !(self.noise_sigma >= 0.0) || self.gt_samples == 0 {
            return Err(SynthError::InvalidScene("noise must be nonnegative and gt_samples positive".into()));
        }
        Ok(())
    }

    /// Nearest primitive hit: `(t, primitive index, normal facing the ray)`.
    pub fn trace(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, usize, Vector3<f64>)> {
        let mut best: Option<(f64, usize, Vector3<f64>)> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some((t, n)) = p.shape.intersect(o, d) {
                if best.is_none_or(|b| t < b.0) {
                    best = Some((t, i, n));
                }
            }
        }
        best.map(|(t, i, n)| (t, i, if n.dot(d) > 0.0 { -n } else { n }))
    }

    fn shade(&self, prim: usize, p: &Vector3<f64>, n: &Vector3<f64>) -> Vector3<f64> {
        let l = Vector3::from(self.light.direction).normalize();
        let k = self.light.ambient + self.light.diffuse * n.dot(&l).abs();
        (self.primitives[prim].texture.albedo(p) * k).map(|c| c.clamp(0.0, 1.0))
    }
}

/// One rendered view with its exact geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    pub camera: Camera,
    pub image: Image,
    /// Camera-frame z depth; `0` where no surface is hit.
    pub depth: Image,
    /// Camera-frame unit normals facing the camera; zero where no hit.
    pub normals: Image,
}

/// Ray-traces one view, one primary ray per pixel center.
pub fn render_reference(scene: &GroundTruthScene, camera: &Camera) -> ViewRecord {
    let intr = &camera.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let r_wc = camera.pose.rotation.transpose();
    let o = camera.pose.center;
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut rgb = vec![0.0; 3 * w];
            let mut depth = vec![0.0; w];
            let mut nrm = vec![0.0; 3 * w];
            for x in 0..w {
                // unit z in the camera frame, so t is the z depth
                let d = r_wc * intr.pixel_ray(x as f64, y as f64);
                match scene.trace(&o, &d) {
                    Some((t, prim, n)) => {
                        let c = scene.shade(prim, &(o + d * t), &n);
                        rgb[3 * x..3 * x + 3].copy_from_slice(c.as_slice());
                        depth[x] = t;
                        nrm[3 * x..3 * x + 3].copy_from_slice((camera.pose.rotation * n).as_slice());
                    }
                    None => rgb[3 * x..3 * x + 3].copy_from_slice(&scene.background),
                }
            }
            (rgb, depth, nrm)
        })
        .collect();
    let mut image = Image::new(w, h, 3);
    let mut depth = Image::new(w, h, 1);
    let mut normals = Image::new(w, h, 3);
    for (y, (rgb, d, n)) in rows.into_iter().enumerate() {
        image.data[3 * y * w..3 * (y + 1) * w].copy_from_slice(&rgb);
        depth.data[y * w..(y + 1) * w].copy_from_slice(&d);
        normals.data[3 * y * w..3 * (y + 1) * w].copy_from_slice(&n);
    }
    ViewRecord { camera: *camera, image, depth, normals }
}

/// Area-weighted uniform surface samples with outward normals.
pub fn sample_gt_points(scene: &GroundTruthScene, n: usize, seed: u64) -> Result<PointCloud, SynthError> {
    if scene.primitives.is_empty() {
        return Err(SynthError::InvalidScene("empty primitive list".into()));
    }
    let areas: Vec<f64> = scene.primitives.iter().map(|p| p.shape.area()).collect();
    let pick = WeightedIndex::new(&areas).map_err(|e| SynthError::InvalidScene(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let (p, nn) = scene.primitives[pick.sample(&mut rng)].shape.sample(&mut rng);
        points.push(p);
        normals.push(nn);
    }
    Ok(PointCloud { points, normals: Some(normals), colors: None })
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub train: Vec<ViewRecord>,
    pub test: Vec<ViewRecord>,
    pub gt: PointCloud,
    pub scene_extent: f64,
}

/// 1.1 times the radius of the sphere around the camera centers' mean that
/// contains them all.
pub fn scene_extent(centers: &[Vector3<f64>]) -> f64 {
    if centers.is_empty() {
        return 1.0;
    }
    let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    1.1 * r.max(1e-6)
}

fn add_noise(img: &mut Image, sigma: f64, seed: u64) {
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in img.data.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * z;
        }
    }
    // stored images are 8-bit; keep the in-memory copy identical
    img.data.iter_mut().for_each(|v| *v = quantize_u8(*v) as f64 / 255.0);
}

/// Renders every view and draws the surface samples in memory.
pub fn build_dataset(scene: &GroundTruthScene) -> Result<Dataset, SynthError> {
    scene.validate()?;
    let train_cams = scene.rig.train_cameras()?;
    let test_cams = scene.rig.holdout_cameras()?;
    let render = |cams: &[Camera], salt: u64| -> Vec<ViewRecord> {
        cams.iter()
            .enumerate()
            .map(|(i, c)| {
                let mut v = render_reference(scene, c);
                add_noise(&mut v.image, scene.noise_sigma, scene.seed ^ (salt << 32) ^ i as u64);
                v
            })
            .collect()
    };
    let train = render(&train_cams, 1);
    let test = render(&test_cams, 2);
    let gt = sample_gt_points(scene, scene.gt_samples, scene.seed)?;
    let extent = scene_extent(&train_cams.iter().map(|c| c.pose.center).collect::<Vec<_>>());
    Ok(Dataset { name: scene.name.clone(), train, test, gt, scene_extent: extent })
}

/// Builds the dataset and writes it under `out_dir`.
pub fn generate_dataset(scene: &GroundTruthScene, out_dir: &Path) -> Result<Dataset, SynthError> {
    let ds = build_dataset(scene)?;
    ds.save(out_dir)?;
    fs::write(out_dir.join("scene.json"), serde_json::to_string_pretty(scene)?)?;
    Ok(ds)
}

pub const SCENE_FILE: &str = "scene.txt";

fn camera_section(split: &str, index: usize, v: &ViewRecord) -> Section {
    let stem = format!("{split}_{index:03}");
    let k = &v.camera.intrinsics;
    let r = &v.camera.pose.rotation;
    let mut s = Section::new(format!("view {split} {index}"));
    s.push("split", split);
    s.push("image", format!("images/{stem}.png"));
    s.push("depth", format!("depth/{stem}.bin"));
    s.push("normal", format!("normal/{stem}.bin"));
    s.push("fx", format!("{:?}", k.fx));
    s.push("fy", format!("{:?}", k.fy));
    s.push("cx", format!("{:?}", k.cx));
    s.push("cy", format!("{:?}", k.cy));
    s.push("width", k.width);
    s.push("height", k.height);
    s.push("rotation", join_floats(&(0..9).map(|i| r[(i / 3, i % 3)]).collect::<Vec<_>>()));
    s.push("center", join_floats(v.camera.pose.center.as_slice()));
    s
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<(), SynthError> {
        for sub in ["images", "depth", "normal"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        let mut root = Section::default();
        root.push("name", &self.name);
        root.push("scene_extent", format!("{:?}", self.scene_extent));
        root.push("train_views", self.train.len());
        root.push("test_views", self.test.len());
        root.push("gt_points", "gt_points.ply");
        let mut sections = vec![root];
        for (split, views) in [("train", &self.train), ("test", &self.test)] {
            for (i, v) in views.iter().enumerate() {
                let s = camera_section(split, i, v);
                v.image.write_png(&dir.join(s.require("image")?))?;
                v.depth.write_raw(&dir.join(s.require("depth")?))?;
                v.normals.write_raw(&dir.join(s.require("normal")?))?;
                sections.push(s);
            }
        }
        self.gt.write(&dir.join("gt_points.ply"))?;
        fs::write(dir.join(SCENE_FILE), kv::render(&sections))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset, SynthError> {
        let text = fs::read_to_string(dir.join(SCENE_FILE))?;
        let sections = kv::parse(&text)?;
        let root = &sections[0];
        let mut train = Vec::new();
        let mut test = Vec::new();
        for s in &sections[1..] {
            let intr = CameraIntrinsics::new(
                s.parse("fx")?,
                s.parse("fy")?,
                s.parse("cx")?,
                s.parse("cy")?,
                s.parse("width")?,
                s.parse("height")?,
            )?;
            let r = s.floats("rotation", 9)?;
            let c = s.floats("center", 3)?;
            let pose = CameraPose::new(Matrix3::from_row_slice(&r), Vector3::new(c[0], c[1], c[2]))?;
            let path = |key: &str| -> Result<PathBuf, KvError> { Ok(dir.join(s.require(key)?)) };
            let view = ViewRecord {
                camera: Camera::new(intr, pose),
                image: Image::read_png(&path("image")?)?,
                depth: Image::read_raw(&path("depth")?)?,
                normals: Image::read_raw(&path("normal")?)?,
            };
            match s.require("split")? {
                "train" => train.push(view),
                "test" => test.push(view),
                other => return Err(SynthError::InvalidScene(format!("unknown split {other:?}"))),
            }
        }
        if train.is_empty() {
            return Err(SynthError::InvalidScene("dataset has no training views".into()));
        }
        Ok(Dataset {
            name: root.require("name")?.to_string(),
            train,
            test,
            gt: PointCloud::read(&dir.join(root.require("gt_points")?))?,
            scene_extent: root.parse("scene_extent")?,
        })
    }

}
