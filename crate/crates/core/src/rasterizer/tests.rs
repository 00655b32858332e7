use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gaussians::{create_flattened, inverse_sigmoid, GaussianParams, GaussianSet, ParamGroup};
use crate::geometry::{CameraIntrinsics, CameraPose};
use crate::image::Image;
use crate::sh;

fn camera(width: usize, height: usize, fov_deg: f64) -> Camera {
    let intr = CameraIntrinsics::from_fov(fov_deg.to_radians(), width, height).unwrap();
    Camera::new(intr, CameraPose::identity())
}

fn isotropic(center: Vector3<f64>, sigma: f64, opacity: f64, color: Vector3<f64>) -> GaussianParams {
    let mut sh = vec![0.0; 3];
    for c in 0..3 {
        sh[c] = sh::rgb_to_dc(color[c]);
    }
    GaussianParams {
        center,
        rotation: [1.0, 0.0, 0.0, 0.0],
        log_scales: Vector3::repeat(sigma.ln()),
        opacity_logit: inverse_sigmoid(opacity),
        sh,
    }
}

/// Config without hard cut-offs in the region the tests probe.
fn smooth_config() -> RenderConfig {
    RenderConfig {
        alpha_cutoff: 1e-12,
        transmittance_floor: 1e-12,
        gaussian_extent_sigmas: 12.0,
        alpha_floor: 1e-6,
        ..RenderConfig::default()
    }
}

fn random_set(rng: &mut ChaCha8Rng, n: usize, sh_degree: usize) -> GaussianSet {
    let mut set = GaussianSet::new(sh_degree);
    let stride = 3 * sh::basis_count(sh_degree);
    for k in 0..n {
        // well separated depths keep the sort order fixed under perturbation
        let z = 3.0 + 0.25 * k as f64;
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let mut coeffs = vec![0.0; stride];
        for (j, c) in coeffs.iter_mut().enumerate() {
            *c = if j < 3 { rng.random_range(0.3..1.2) } else { rng.random_range(-0.1..0.1) };
        }
        // distinct scales keep the normal axis fixed; tilt keeps it camera-facing
        let s = [rng.random_range(0.25..0.35), rng.random_range(0.15..0.2), rng.random_range(0.04..0.08)];
        set.push(&GaussianParams {
            center: Vector3::new(rng.random_range(-0.5..0.5) * z / 3.0, rng.random_range(-0.5..0.5) * z / 3.0, z),
            rotation: [1.0 + q[0].abs() * 0.2, q[1] * 0.3, q[2] * 0.3, q[3]],
            log_scales: Vector3::new(s[0], s[1], s[2]).map(f64::ln),
            opacity_logit: rng.random_range(-1.0..0.8),
            sh: coeffs,
        });
    }
    set
}

/// Fixed random linear functional over every render output.
struct Probe {
    adj: RenderAdjoints,
}

impl Probe {
    fn new(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Self {
        let mut adj = RenderAdjoints::zeros(w, h);
        for v in adj
            .color
            .iter_mut()
            .chain(adj.normal.iter_mut())
            .chain(adj.distance.iter_mut())
            .chain(adj.alpha.iter_mut())
            .chain(adj.depth.iter_mut())
            .chain(adj.unit_normal.iter_mut())
        {
            *v = rng.random_range(-1.0..1.0);
        }
        Self { adj }
    }

    fn eval(&self, out: &RenderOutputs) -> f64 {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let unit = out.unit_normal_image();
        dot(&self.adj.color, &out.color)
            + dot(&self.adj.normal, &out.normal)
            + dot(&self.adj.distance, &out.distance)
            + dot(&self.adj.alpha, &out.alpha)
            + dot(&self.adj.depth, &out.depth)
            + dot(&self.adj.unit_normal, &unit.data)
    }
}

fn check_close(analytic: f64, numeric: f64, what: &str) {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-8 {
        assert!((analytic - numeric).abs() < 1e-8, "{what}: {analytic} vs {numeric}");
    } else {
        let rel = (analytic - numeric).abs() / scale;
        assert!(rel < 1e-3, "{what}: analytic {analytic} numeric {numeric} rel {rel}");
    }
}

fn finite_difference_check(set: &GaussianSet, cam: &Camera, cfg: &RenderConfig, probe: &Probe, h: f64) {
    let out = render(set, cam, cfg);
    // depth and unit normals are only consumed on covered pixels; in thin
    // tails both are too curved for a difference quotient
    let mut probe_adj = probe.adj.clone();
    for p in 0..out.pixel_count() {
        if !out.is_covered(p) {
            probe_adj.depth[p] = 0.0;
            probe_adj.unit_normal[3 * p..3 * p + 3].fill(0.0);
        }
    }
    let probe = &Probe { adj: probe_adj };
    let grads = render_backward(set, cam, cfg, &out, &probe.adj).unwrap().grads;
    for group in ParamGroup::ALL {
        for j in 0..set.group(group).len() {
            let f = |delta: f64| {
                let mut s = set.clone();
                s.group_mut(group)[j] += delta;
                probe.eval(&render(&s, cam, cfg))
            };
            // fourth-order central stencil; low-alpha tails are strongly curved
            let numeric = (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h);
            check_close(grads.group(group)[j], numeric, &format!("{}[{j}]", group.name()));
        }
    }
}

#[test]
fn isotropic_projection_matches_axis_aligned_perspective() {
    let cam = camera(64, 48, 60.0);
    let mut set = GaussianSet::new(0);
    let (sigma, z) = (0.2, 4.0);
    set.push(&isotropic(Vector3::new(0.0, 0.0, z), sigma, 0.5, Vector3::repeat(0.5)));
    let cfg = RenderConfig::default();
    let p = project_gaussian(&set, 0, &cam, &cfg);
    let k = &cam.intrinsics;
    assert!(p.visible);
    assert!((p.cov2d[(0, 0)] - ((k.fx * sigma / z).powi(2) + cfg.dilation)).abs() < 1e-9);
    assert!((p.cov2d[(1, 1)] - ((k.fy * sigma / z).powi(2) + cfg.dilation)).abs() < 1e-9);
    assert!(p.cov2d[(0, 1)].abs() < 1e-12);
    assert!((p.mean2d.x - k.cx).abs() < 1e-12 && (p.mean2d.y - k.cy).abs() < 1e-12);
    let expected_radius = 3.0 * ((k.fx * sigma / z).powi(2) + cfg.dilation).sqrt();
    assert!((p.radius - expected_radius).abs() < 1e-9);
}

#[test]
fn camera_facing_plane_gaussian_has_offset_equal_to_depth() {
    let cam = camera(32, 32, 60.0);
    let mut set = GaussianSet::new(0);
    set.push(&create_flattened(
        &Vector3::new(0.0, 0.0, 5.0),
        &Vector3::new(0.0, 0.0, -1.0),
        0.3,
        &Vector3::repeat(0.5),
        0.1,
        0,
    ));
    let p = project_gaussian(&set, 0, &cam, &RenderConfig::default());
    assert!((p.distance.abs() - 5.0).abs() < 1e-12);
    assert!((p.normal - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
}

#[test]
fn plane_offset_matches_point_to_plane_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let eye = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-6.0..-2.0));
        let pose = CameraPose::look_at(eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0));
        let cam = Camera::new(CameraIntrinsics::from_fov(1.0, 32, 32).unwrap(), pose);
        let mu = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if n.norm() < 0.1 {
            continue;
        }
        let mut set = GaussianSet::new(0);
        set.push(&create_flattened(&mu, &n, 0.2, &Vector3::repeat(0.5), 0.1, 0));
        let p = project_gaussian(&set, 0, &cam, &RenderConfig::default());
        // world-frame plane through mu with normal n; distance of the camera center
        let n_hat = n.normalize();
        let oracle = (eye - mu).dot(&n_hat).abs();
        assert!((p.distance.abs() - oracle).abs() < 1e-9, "{} vs {}", p.distance, oracle);
        // the rendered normal faces the camera
        assert!(p.distance <= 0.0);
    }
}

#[test]
fn single_opaque_gaussian_reproduces_its_color() {
    let cam = camera(15, 15, 60.0);
    let mut set = GaussianSet::new(0);
    let color = Vector3::new(0.8, 0.3, 0.1);
    let mut g = isotropic(Vector3::new(0.0, 0.0, 3.0), 1.0, 0.5, color);
    g.opacity_logit = 25.0;
    set.push(&g);
    let cfg = RenderConfig { max_alpha: 1.0 - 1e-9, ..RenderConfig::default() };
    let out = render(&set, &cam, &cfg);
    let p = 7 * 15 + 7;
    assert!((out.color_at(p) - color).norm() < 1e-4);
    assert!((out.alpha[p] - 1.0).abs() < 1e-4);
    assert!(out.final_t[p] < 1e-4);
}

#[test]
fn second_splat_sees_half_transmittance() {
    let cam = camera(15, 15, 60.0);
    let mut set = GaussianSet::new(0);
    set.push(&isotropic(Vector3::new(0.0, 0.0, 3.0), 0.5, 0.5, Vector3::new(1.0, 0.0, 0.0)));
    set.push(&isotropic(Vector3::new(0.0, 0.0, 4.0), 0.5, 0.5, Vector3::new(0.0, 1.0, 0.0)));
    let out = render(&set, &cam, &RenderConfig::default());
    let center = 7 * 15 + 7;
    let tile = &out.contributors.as_ref().unwrap()[0];
    let (start, len) = tile.ranges[center];
    assert_eq!(len, 2);
    let recs = &tile.records[start as usize..(start + len) as usize];
    assert_eq!(recs[0].id, 0);
    assert!((recs[0].g - 1.0).abs() < 1e-12);
    assert!((recs[1].t - 0.5).abs() < 1e-12);
    assert!((out.color_at(center) - Vector3::new(0.5, 0.25, 0.0)).norm() < 1e-12);
}

#[test]
fn energy_is_conserved_and_transmittance_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cam = camera(40, 40, 60.0);
    let set = random_set(&mut rng, 30, 1);
    let out = render(&set, &cam, &RenderConfig::default());
    let contribs = out.contributors.as_ref().unwrap();
    for (tile, tc) in contribs.iter().enumerate() {
        let (x0, y0, x1, y1) = out.tiles.tile_bounds(tile, 40, 40);
        let mut local = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = y * 40 + x;
                let (s, l) = tc.ranges[local];
                local += 1;
                let recs = &tc.records[s as usize..(s + l) as usize];
                let mut sum = 0.0;
                for (k, r) in recs.iter().enumerate() {
                    let a = (out.projected[r.id as usize].opacity * r.g).min(0.99);
                    sum += r.t * a;
                    if k > 0 {
                        assert!(r.t < recs[k - 1].t);
                    }
                }
                assert!((out.alpha[p] - (1.0 - out.final_t[p])).abs() < 1e-12);
                assert!((sum - out.alpha[p]).abs() < 1e-6);
                assert!((0.0..=1.0).contains(&out.alpha[p]));
            }
        }
    }
}

#[test]
fn storage_order_does_not_change_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cam = camera(48, 40, 60.0);
    let set = random_set(&mut rng, 25, 2);
    let mut perm: Vec<usize> = (0..set.len()).collect();
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let mut shuffled = GaussianSet::new(set.sh_degree);
    for &i in &perm {
        shuffled.push(&set.params(i));
    }
    let cfg = RenderConfig::default();
    let a = render(&set, &cam, &cfg);
    let b = render(&shuffled, &cam, &cfg);
    assert_eq!(a.color, b.color);
    assert_eq!(a.normal, b.normal);
    assert_eq!(a.distance, b.distance);
    assert_eq!(a.depth, b.depth);
    assert_eq!(a.alpha, b.alpha);
}

/// Dense grid of flattened Gaussians on the plane `n . X = offset` covering
/// the whole frustum between the given bounds.
fn plane_cover(normal: Vector3<f64>, point: Vector3<f64>, half: f64, spacing: f64) -> GaussianSet {
    let n = normal.normalize();
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t1 = helper.cross(&n).normalize();
    let t2 = n.cross(&t1);
    let mut set = GaussianSet::new(0);
    let steps = (half / spacing).ceil() as i64;
    for i in -steps..=steps {
        for j in -steps..=steps {
            let x = point + t1 * (i as f64 * spacing) + t2 * (j as f64 * spacing);
            let mut g = create_flattened(&x, &n, spacing, &Vector3::repeat(0.5), 0.1, 0);
            g.opacity_logit = inverse_sigmoid(0.95);
            set.push(&g);
        }
    }
    set
}

#[test]
fn fronto_parallel_plane_depth_is_unbiased() {
    let cam = camera(64, 64, 60.0);
    let set = plane_cover(Vector3::new(0.0, 0.0, -1.0), Vector3::new(0.0, 0.0, 5.0), 4.0, 0.12);
    let out = render(&set, &cam, &RenderConfig::default());
    let mut worst: f64 = 0.0;
    for p in 0..out.pixel_count() {
        assert!(out.is_covered(p), "pixel {p} uncovered");
        worst = worst.max((out.depth[p] - 5.0).abs());
    }
    assert!(worst < 1e-3, "max depth error {worst}");
}

#[test]
fn slanted_plane_depth_is_unbiased() {
    let cam = camera(64, 64, 60.0);
    // z = 5 + 0.3 x
    let normal = Vector3::new(0.3, 0.0, -1.0);
    let set = plane_cover(normal, Vector3::new(0.0, 0.0, 5.0), 5.0, 0.12);
    let out = render(&set, &cam, &RenderConfig::default());
    let k = &cam.intrinsics;
    let mut worst: f64 = 0.0;
    for p in 0..out.pixel_count() {
        let u = ((p % 64) as f64 - k.cx) / k.fx;
        let analytic = 5.0 / (1.0 - 0.3 * u);
        assert!(out.is_covered(p));
        worst = worst.max((out.depth[p] - analytic).abs());
    }
    assert!(worst < 5e-2, "max depth error {worst}");
}

#[test]
fn zero_adjoints_give_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cam = camera(32, 32, 60.0);
    let set = random_set(&mut rng, 10, 1);
    let cfg = RenderConfig::default();
    let out = render(&set, &cam, &cfg);
    let res = render_backward(&set, &cam, &cfg, &out, &RenderAdjoints::zeros(32, 32)).unwrap();
    assert_eq!(res.grads, GaussianSet::zeros_like(&set));
}

#[test]
fn backward_requires_contributor_lists() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cam = camera(16, 16, 60.0);
    let set = random_set(&mut rng, 3, 0);
    let cfg = RenderConfig::default();
    let out = render_with(&set, &cam, &cfg, None, false);
    let err = render_backward(&set, &cam, &cfg, &out, &RenderAdjoints::zeros(16, 16)).unwrap_err();
    assert_eq!(err, RenderError::MissingContributorLists);
    let out = render(&set, &cam, &cfg);
    let err = render_backward(&set, &cam, &cfg, &out, &RenderAdjoints::zeros(8, 16)).unwrap_err();
    assert!(matches!(err, RenderError::AdjointShape { .. }));
}

#[test]
fn single_gaussian_center_gradient_of_color_sum() {
    let cam = camera(32, 32, 60.0);
    let mut set = GaussianSet::new(0);
    let mut g = isotropic(Vector3::new(0.2, -0.1, 4.0), 0.3, 0.6, Vector3::new(0.7, 0.4, 0.2));
    g.log_scales = Vector3::new(0.3f64.ln(), 0.2f64.ln(), 0.05f64.ln());
    g.rotation = [0.9, 0.1, 0.2, 0.3];
    set.push(&g);
    let cfg = smooth_config();
    let mut adj = RenderAdjoints::zeros(32, 32);
    adj.color.iter_mut().for_each(|v| *v = 1.0);
    let probe = Probe { adj };
    let out = render(&set, &cam, &cfg);
    let grads = render_backward(&set, &cam, &cfg, &out, &probe.adj).unwrap().grads;
    let h = 1e-4 * 4.0;
    for k in 0..3 {
        let mut plus = set.clone();
        plus.centers[k] += h;
        let mut minus = set.clone();
        minus.centers[k] -= h;
        let numeric = (probe.eval(&render(&plus, &cam, &cfg)) - probe.eval(&render(&minus, &cam, &cfg))) / (2.0 * h);
        check_close(grads.centers[k], numeric, &format!("center[{k}]"));
    }
}

#[test]
fn all_parameter_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let cam = camera(32, 32, 60.0);
    let set = random_set(&mut rng, 10, 2);
    let probe = Probe::new(&mut rng, 32, 32);
    finite_difference_check(&set, &cam, &smooth_config(), &probe, 1e-4);
}

#[test]
fn gradients_match_under_a_rotated_camera() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let set = random_set(&mut rng, 6, 1);
    let pose = CameraPose::look_at(
        Vector3::new(0.8, -0.5, -0.5),
        Vector3::new(0.0, 0.0, 4.0),
        Vector3::new(0.0, -1.0, 0.0),
    );
    let cam = Camera::new(CameraIntrinsics::new(30.0, 28.0, 11.5, 12.0, 24, 24).unwrap(), pose);
    let probe = Probe::new(&mut rng, 24, 24);
    finite_difference_check(&set, &cam, &smooth_config(), &probe, 1e-4);
}

#[test]
fn gradients_match_with_default_config_away_from_cutoffs() {
    // default cut-offs only change the support, not the smooth part
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cam = camera(24, 24, 60.0);
    let set = random_set(&mut rng, 4, 0);
    let mut probe = Probe::new(&mut rng, 24, 24);
    probe.adj.depth.iter_mut().for_each(|v| *v = 0.0);
    let cfg = RenderConfig { gaussian_extent_sigmas: 20.0, alpha_cutoff: 1e-300, ..RenderConfig::default() };
    finite_difference_check(&set, &cam, &cfg, &probe, 1e-4);
}

fn plane_depth(intr: &CameraIntrinsics, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut d = vec![0.0; intr.width * intr.height];
    for y in 0..intr.height {
        for x in 0..intr.width {
            let r = intr.pixel_ray(x as f64, y as f64);
            d[y * intr.width + x] = f(r.x, r.y);
        }
    }
    d
}

#[test]
fn constant_depth_gives_camera_facing_normals() {
    let intr = CameraIntrinsics::from_fov(1.0, 20, 16).unwrap();
    let depth = vec![5.0; 20 * 16];
    let map = depth_to_normal(&depth, &intr);
    let mut count = 0;
    for p in 0..depth.len() {
        if map.valid[p] {
            count += 1;
            assert!((map.at(p) - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        }
    }
    assert_eq!(count, 18 * 14);
}

#[test]
fn slanted_depth_gives_analytic_normal() {
    let intr = CameraIntrinsics::from_fov(1.0, 24, 24).unwrap();
    // z = 5 + 0.1 x with x = u z  =>  z = 5 / (1 - 0.1 u)
    let depth = plane_depth(&intr, |u, _| 5.0 / (1.0 - 0.1 * u));
    let analytic = Vector3::new(0.1, 0.0, -1.0).normalize();
    let map = depth_to_normal(&depth, &intr);
    for p in 0..depth.len() {
        if map.valid[p] {
            assert!((map.at(p) - analytic).norm() < 1e-3);
        }
    }
}

#[test]
fn sentinel_neighbors_invalidate_normals() {
    let intr = CameraIntrinsics::from_fov(1.0, 10, 10).unwrap();
    let mut depth = vec![3.0; 100];
    depth[5 * 10 + 5] = 0.0;
    let map = depth_to_normal(&depth, &intr);
    for p in [55, 54, 56, 45, 65] {
        assert!(!map.valid[p]);
    }
    assert!(map.valid[44]);
}

#[test]
fn depth_to_normal_backward_matches_finite_differences() {
    let intr = CameraIntrinsics::from_fov(1.0, 8, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let depth: Vec<f64> = plane_depth(&intr, |u, v| 4.0 / (1.0 - 0.2 * u + 0.1 * v))
        .into_iter()
        .map(|d| d + rng.random_range(-0.05..0.05))
        .collect();
    let g: Vec<f64> = (0..3 * depth.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let map = depth_to_normal(&depth, &intr);
    let f = |d: &[f64]| {
        let m = depth_to_normal(d, &intr);
        (0..d.len())
            .filter(|&p| map.valid[p])
            .map(|p| m.at(p).dot(&Vector3::new(g[3 * p], g[3 * p + 1], g[3 * p + 2])))
            .sum::<f64>()
    };
    let mut grad = vec![0.0; depth.len()];
    depth_to_normal_backward(&depth, &intr, &map, &g, &mut grad);
    let h = 1e-6;
    for p in 0..depth.len() {
        let mut a = depth.clone();
        a[p] += h;
        let mut b = depth.clone();
        b[p] -= h;
        check_close(grad[p], (f(&a) - f(&b)) / (2.0 * h), &format!("depth[{p}]"));
    }
}

#[test]
fn bilateral_keeps_constant_maps() {
    let map = Image::filled(12, 9, 3, 0.25);
    let guide = Image::filled(12, 9, 1, 2.0);
    let out = bilateral_filter(&map, &guide, 1.5, 0.1, false);
    for v in &out.data {
        assert!((v - 0.25).abs() < 1e-12);
    }
}

#[test]
fn bilateral_does_not_bleed_across_depth_steps() {
    let (w, h) = (16, 8);
    let mut guide = Image::new(w, h, 1);
    let mut map = Image::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let near = x < w / 2;
            guide.set(x, y, 0, if near { 2.0 } else { 6.0 });
            map.set(x, y, 0, if near { 2.0 } else { 6.0 });
        }
    }
    let range_sigma = 0.2;
    let out = bilateral_filter(&map, &guide, 2.0, range_sigma, false);
    for y in 0..h {
        for x in 0..w {
            assert!((out.get(x, y, 0) - map.get(x, y, 0)).abs() < range_sigma);
        }
    }
}

#[test]
fn bilateral_excludes_sentinels_and_renormalizes() {
    let mut guide = Image::filled(5, 5, 1, 3.0);
    guide.set(2, 2, 0, 0.0);
    let mut map = Image::filled(5, 5, 3, 0.0);
    for p in 0..25 {
        map.data[3 * p + 2] = -1.0;
    }
    map.data[3 * 12..3 * 12 + 3].copy_from_slice(&[9.0, 9.0, 9.0]);
    map.data[3 * 13..3 * 13 + 3].copy_from_slice(&[0.3, 0.0, -1.0]);
    let out = bilateral_filter(&map, &guide, 1.0, 1.0, true);
    // the sentinel pixel is untouched and does not leak
    assert_eq!(out.pixel(2, 2), &[9.0, 9.0, 9.0]);
    for p in (0..25).filter(|&p| p != 12) {
        let n = Vector3::new(out.data[3 * p], out.data[3 * p + 1], out.data[3 * p + 2]);
        assert!((n.norm() - 1.0).abs() < 1e-12);
        assert!(n.x >= 0.0 && n.x < 0.3);
    }
}

#[test]
fn bilateral_reduces_noise_and_keeps_mean() {
    let (w, h) = (32, 32);
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = rand_distr::Normal::new(0.0, 0.01).unwrap();
        let mut noisy = Image::new(w, h, 1);
        for v in noisy.data.iter_mut() {
            *v = 5.0 + rng.sample(normal);
        }
        let out = bilateral_filter(&noisy, &noisy, 1.5, 0.05, false);
        let stats = |d: &[f64]| {
            let m = d.iter().sum::<f64>() / d.len() as f64;
            (m, d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / d.len() as f64)
        };
        let (m_in, v_in) = stats(&noisy.data);
        let (m_out, v_out) = stats(&out.data);
        assert!(v_out < v_in);
        assert!((m_out - m_in).abs() < 1e-3);
        assert!((m_out - 5.0).abs() < 1e-3);
    }
}

#[test]
fn unit_normal_and_depth_adjoints_fold_consistently() {
    // depth_backward is the exact derivative of depth_from_plane
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let n = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-1.0..-0.5));
        let ray = Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), 1.0);
        let (d, a) = (rng.random_range(-5.0..-2.0), rng.random_range(0.3..1.0));
        let (dn, dd) = depth_backward(&n, d, &ray, 1.0);
        let h = 1e-6;
        let f = |n: Vector3<f64>, d: f64, a: f64| depth_from_plane(&n, d, a, &ray, 1e-3);
        check_close(dd, (f(n, d + h, a) - f(n, d - h, a)) / (2.0 * h), "distance");
        assert_eq!(f(n, d, a), f(n, d, 0.9 * a + 0.05));
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = h;
            check_close(dn[k], (f(n + e, d, a) - f(n - e, d, a)) / (2.0 * h), "normal");
        }
    }
}



#[test]
fn disagreeing_normals_through_a_point_keep_its_depth() {
    let ray = Vector3::new(0.1, -0.2, 1.0);
    let x = ray * 5.0;
    let a = Vector3::new(0.6, 0.0, -0.8);
    let b = Vector3::new(-0.6, 0.1, -0.79).normalize();
    // two blended tangent planes through x, half weight each
    let (wa, wb) = (0.45, 0.45);
    let n = a * wa + b * wb;
    let d = wa * a.dot(&x) + wb * b.dot(&x);
    assert!(n.norm() < 0.9 * (wa + wb));
    let depth = depth_from_plane(&n, d, wa + wb, &ray, 1e-3);
    assert!((depth - 5.0).abs() < 1e-12, "{depth}");
}
