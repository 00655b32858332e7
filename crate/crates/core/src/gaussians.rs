//! The optimizable Gaussian scene and its binary PLY persistence.
//!
//! Parameters are stored activation-free: log-scales, opacity logits and
//! raw quaternions. Each parameter group is a flat `Vec<f64>` with a fixed
//! per-Gaussian stride so optimizer and density code can treat groups
//! uniformly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use nalgebra::{Matrix3, Vector3};

use crate::geometry::{quaternion_to_rotation, rotation_to_quaternion};
pub use crate::ply::PlyError;
use crate::ply::{malformed, read_header, skip_element};
use crate::sh;

/// Default ratio between the minimum and the other two scales of a freshly
/// created flattened Gaussian.
pub const DEFAULT_FLATTEN_RATIO: f64 = 0.1;

/// Logits are clamped to this magnitude before activation so the opacity
/// stays strictly inside (0, 1) in double precision.
pub const MAX_OPACITY_LOGIT: f64 = 30.0;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-MAX_OPACITY_LOGIT, MAX_OPACITY_LOGIT);
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn inverse_sigmoid(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Parameter groups, each optimized with its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Centers,
    Rotations,
    LogScales,
    Opacity,
    Sh,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Centers,
        ParamGroup::Rotations,
        ParamGroup::LogScales,
        ParamGroup::Opacity,
        ParamGroup::Sh,
    ];

    pub fn stride(self, sh_degree: usize) -> usize {
        match self {
            ParamGroup::Centers | ParamGroup::LogScales => 3,
            ParamGroup::Rotations => 4,
            ParamGroup::Opacity => 1,
            ParamGroup::Sh => sh::basis_count(sh_degree) * 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Centers => "centers",
            ParamGroup::Rotations => "rotations",
            ParamGroup::LogScales => "log_scales",
            ParamGroup::Opacity => "opacity",
            ParamGroup::Sh => "sh",
        }
    }
}

/// One Gaussian's parameters, used when adding Gaussians to a set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub center: Vector3<f64>,
    pub rotation: [f64; 4],
    pub log_scales: Vector3<f64>,
    pub opacity_logit: f64,
    /// `[basis][rgb]`
    pub sh: Vec<f64>,
}

/// Flat per-group storage shared by the parameter set and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    pub sh_degree: usize,
    pub centers: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type GaussianGrads = GaussianSet;

impl GaussianSet {
    pub fn new(sh_degree: usize) -> Self {
        assert!(sh_degree <= 3, "SH degree above 3 is unsupported");
        Self {
            sh_degree,
            centers: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            sh: Vec::new(),
        }
    }

    /// All-zero buffer with the same shape as `other`.
    pub fn zeros_like(other: &GaussianSet) -> Self {
        Self {
            sh_degree: other.sh_degree,
            centers: vec![0.0; other.centers.len()],
            rotations: vec![0.0; other.rotations.len()],
            log_scales: vec![0.0; other.log_scales.len()],
            opacity_logits: vec![0.0; other.opacity_logits.len()],
            sh: vec![0.0; other.sh.len()],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn sh_stride(&self) -> usize {
        ParamGroup::Sh.stride(self.sh_degree)
    }

    pub fn group(&self, g: ParamGroup) -> &[f64] {
        match g {
            ParamGroup::Centers => &self.centers,
            ParamGroup::Rotations => &self.rotations,
            ParamGroup::LogScales => &self.log_scales,
            ParamGroup::Opacity => &self.opacity_logits,
            ParamGroup::Sh => &self.sh,
        }
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut Vec<f64> {
        match g {
            ParamGroup::Centers => &mut self.centers,
            ParamGroup::Rotations => &mut self.rotations,
            ParamGroup::LogScales => &mut self.log_scales,
            ParamGroup::Opacity => &mut self.opacity_logits,
            ParamGroup::Sh => &mut self.sh,
        }
    }

    #[inline]
    pub fn center(&self, i: usize) -> Vector3<f64> {
        Vector3::new(self.centers[3 * i], self.centers[3 * i + 1], self.centers[3 * i + 2])
    }

    #[inline]
    pub fn quaternion(&self, i: usize) -> [f64; 4] {
        let q = &self.rotations[4 * i..4 * i + 4];
        [q[0], q[1], q[2], q[3]]
    }

    #[inline]
    pub fn rotation(&self, i: usize) -> Matrix3<f64> {
        quaternion_to_rotation(&self.quaternion(i))
    }

    #[inline]
    pub fn log_scale(&self, i: usize) -> Vector3<f64> {
        Vector3::new(self.log_scales[3 * i], self.log_scales[3 * i + 1], self.log_scales[3 * i + 2])
    }

    #[inline]
    pub fn scales(&self, i: usize) -> Vector3<f64> {
        self.log_scale(i).map(f64::exp)
    }

    #[inline]
    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    #[inline]
    pub fn sh_coeffs(&self, i: usize) -> &[f64] {
        let s = self.sh_stride();
        &self.sh[i * s..(i + 1) * s]
    }

    pub fn params(&self, i: usize) -> GaussianParams {
        GaussianParams {
            center: self.center(i),
            rotation: self.quaternion(i),
            log_scales: self.log_scale(i),
            opacity_logit: self.opacity_logits[i],
            sh: self.sh_coeffs(i).to_vec(),
        }
    }

    pub fn push(&mut self, p: &GaussianParams) {
        assert_eq!(p.sh.len(), self.sh_stride(), "SH coefficient count mismatch");
        self.centers.extend_from_slice(p.center.as_slice());
        self.rotations.extend_from_slice(&p.rotation);
        self.log_scales.extend_from_slice(p.log_scales.as_slice());
        self.opacity_logits.push(p.opacity_logit);
        self.sh.extend_from_slice(&p.sh);
    }

    /// Appends per-Gaussian rows from `other` (same SH degree).
    pub fn extend_from(&mut self, other: &GaussianSet) {
        assert_eq!(self.sh_degree, other.sh_degree);
        for g in ParamGroup::ALL {
            let src = other.group(g).to_vec();
            self.group_mut(g).extend_from_slice(&src);
        }
    }

    /// Keeps Gaussians whose mask entry is true, preserving order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        let degree = self.sh_degree;
        for g in ParamGroup::ALL {
            retain_rows(self.group_mut(g), g.stride(degree), keep);
        }
    }

    /// Renormalizes every quaternion to unit length.
    pub fn normalize_rotations(&mut self) {
        for q in self.rotations.chunks_exact_mut(4) {
            let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if n > 0.0 {
                q.iter_mut().for_each(|v| *v /= n);
            } else {
                q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        ParamGroup::ALL.iter().all(|&g| self.group(g).iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &GaussianSet, scale: f64) {
        for g in ParamGroup::ALL {
            let src = other.group(g);
            let dst = self.group_mut(g);
            assert_eq!(src.len(), dst.len());
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn covariance(&self, i: usize) -> Matrix3<f64> {
        covariance_from(&self.quaternion(i), &self.scales(i))
    }

    /// Gaussian normal facing against `view_dir`.
    pub fn normal(&self, i: usize, view_dir: &Vector3<f64>) -> Vector3<f64> {
        gaussian_normal(&self.quaternion(i), &self.scales(i), view_dir)
    }

    /// Writes the set as a binary little-endian PLY using the usual 3DGS
    /// property names. Normals are exported as the minimum-scale axis.
    pub fn write_ply(&self, path: &Path) -> Result<(), PlyError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_ply_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_ply_to<W: Write>(&self, w: &mut W) -> Result<(), PlyError> {
        if self.is_empty() {
            return Err(PlyError::Empty);
        }
        let rest = sh::basis_count(self.sh_degree) - 1;
        let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
        header.push_str(&format!("comment sh_degree {}\n", self.sh_degree));
        header.push_str(&format!("element vertex {}\n", self.len()));
        for name in ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"] {
            header.push_str(&format!("property float {name}\n"));
        }
        for k in 0..3 * rest {
            header.push_str(&format!("property float f_rest_{k}\n"));
        }
        header.push_str("property float opacity\n");
        for k in 0..3 {
            header.push_str(&format!("property float scale_{k}\n"));
        }
        for k in 0..4 {
            header.push_str(&format!("property float rot_{k}\n"));
        }
        header.push_str("end_header\n");
        w.write_all(header.as_bytes())?;

        for i in 0..self.len() {
            let c = self.center(i);
            let n = min_axis(&self.rotation(i), &self.scales(i));
            let coeffs = self.sh_coeffs(i);
            let mut row: Vec<f64> = Vec::with_capacity(17 + 3 * rest);
            row.extend_from_slice(c.as_slice());
            row.extend_from_slice(n.as_slice());
            row.extend_from_slice(&coeffs[0..3]);
            // f_rest is channel-major
            for ch in 0..3 {
                for k in 1..=rest {
                    row.push(coeffs[k * 3 + ch]);
                }
            }
            row.push(self.opacity_logits[i]);
            row.extend_from_slice(&self.log_scales[3 * i..3 * i + 3]);
            row.extend_from_slice(&self.rotations[4 * i..4 * i + 4]);
            for v in row {
                w.write_f32::<LittleEndian>(v as f32)?;
            }
        }
        Ok(())
    }

    pub fn read_ply(path: &Path) -> Result<GaussianSet, PlyError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_ply_from(&mut r)
    }

    /// Reads a binary little-endian PLY. Unknown vertex properties and
    /// elements after the vertex block are skipped.
    pub fn read_ply_from<R: BufRead>(r: &mut R) -> Result<GaussianSet, PlyError> {
        let header = read_header(r)?;
        let vertex = header
            .elements
            .iter()
            .position(|e| e.name == "vertex")
            .ok_or_else(|| malformed("header", "no vertex element"))?;
        // elements before the vertex block have to be skipped first
        for e in &header.elements[..vertex] {
            skip_element(r, e)?;
        }
        let el = &header.elements[vertex];
        let find = |name: &str| el.properties.iter().position(|p| p.name == name);
        let required = |name: &str| {
            find(name).ok_or_else(|| malformed("element vertex", format!("missing property {name}")))
        };
        let pos = [required("x")?, required("y")?, required("z")?];
        let dc = [required("f_dc_0")?, required("f_dc_1")?, required("f_dc_2")?];
        let opacity = required("opacity")?;
        let scale = [required("scale_0")?, required("scale_1")?, required("scale_2")?];
        let rot = [required("rot_0")?, required("rot_1")?, required("rot_2")?, required("rot_3")?];
        let mut rest_idx = Vec::new();
        while let Some(p) = find(&format!("f_rest_{}", rest_idx.len())) {
            rest_idx.push(p);
        }
        if rest_idx.len() % 3 != 0 {
            return Err(malformed("element vertex", format!("{} f_rest properties", rest_idx.len())));
        }
        let rest = rest_idx.len() / 3;
        let degree = match rest + 1 {
            1 => 0,
            4 => 1,
            9 => 2,
            16 => 3,
            b => return Err(malformed("element vertex", format!("{b} SH basis functions"))),
        };

        let mut set = GaussianSet::new(degree);
        let mut row = vec![0.0f64; el.properties.len()];
        for v in 0..el.count {
            for (k, prop) in el.properties.iter().enumerate() {
                row[k] = prop
                    .kind
                    .read(r)
                    .map_err(|e| malformed(format!("vertex {v}, property {}", prop.name), e.to_string()))?;
            }
            let mut coeffs = vec![0.0; (rest + 1) * 3];
            for ch in 0..3 {
                coeffs[ch] = row[dc[ch]];
                for k in 1..=rest {
                    coeffs[k * 3 + ch] = row[rest_idx[ch * rest + k - 1]];
                }
            }
            set.push(&GaussianParams {
                center: Vector3::new(row[pos[0]], row[pos[1]], row[pos[2]]),
                rotation: [row[rot[0]], row[rot[1]], row[rot[2]], row[rot[3]]],
                log_scales: Vector3::new(row[scale[0]], row[scale[1]], row[scale[2]]),
                opacity_logit: row[opacity],
                sh: coeffs,
            });
        }
        Ok(set)
    }
}

fn retain_rows(data: &mut Vec<f64>, stride: usize, keep: &[bool]) {
    let mut w = 0;
    for (i, &k) in keep.iter().enumerate() {
        if k {
            if w != i {
                data.copy_within(i * stride..(i + 1) * stride, w * stride);
            }
            w += 1;
        }
    }
    data.truncate(w * stride);
}

/// `R diag(s^2) R^T` for a (normalized) quaternion and positive scales.
pub fn covariance_from(q: &[f64; 4], s: &Vector3<f64>) -> Matrix3<f64> {
    let r = quaternion_to_rotation(q);
    let m = r * Matrix3::from_diagonal(s);
    m * m.transpose()
}

/// Index of the smallest scale; ties resolve to the lowest axis.
#[inline]
pub fn min_scale_axis(s: &Vector3<f64>) -> usize {
    let mut k = 0;
    for a in 1..3 {
        if s[a] < s[k] {
            k = a;
        }
    }
    k
}

#[inline]
fn min_axis(r: &Matrix3<f64>, s: &Vector3<f64>) -> Vector3<f64> {
    r.column(min_scale_axis(s)).into_owned()
}

/// Minimum-scale axis of the Gaussian, flipped so that it does not point
/// along `view_dir` (the direction from the camera toward the Gaussian).
pub fn gaussian_normal(q: &[f64; 4], s: &Vector3<f64>, view_dir: &Vector3<f64>) -> Vector3<f64> {
    let n = min_axis(&quaternion_to_rotation(q), s);
    if n.dot(view_dir) > 0.0 {
        -n
    } else {
        n
    }
}

/// A disk-like Gaussian centered at `position` whose smallest axis is
/// aligned with `normal`.
pub fn create_flattened(
    position: &Vector3<f64>,
    normal: &Vector3<f64>,
    radius: f64,
    color: &Vector3<f64>,
    flatten_ratio: f64,
    sh_degree: usize,
) -> GaussianParams {
    assert!(radius > 0.0, "radius must be positive");
    let n = normal.normalize();
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t1 = helper.cross(&n).normalize();
    let t2 = n.cross(&t1);
    let r = Matrix3::from_columns(&[t1, t2, n]);
    let mut coeffs = vec![0.0; sh::basis_count(sh_degree) * 3];
    for c in 0..3 {
        coeffs[c] = sh::rgb_to_dc(color[c]);
    }
    GaussianParams {
        center: *position,
        rotation: rotation_to_quaternion(&r),
        log_scales: Vector3::new(radius.ln(), radius.ln(), (radius * flatten_ratio).ln()),
        opacity_logit: inverse_sigmoid(0.5),
        sh: coeffs,
    }
}
