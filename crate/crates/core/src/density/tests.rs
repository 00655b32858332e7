use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::*;
use crate::gaussians::inverse_sigmoid;
use crate::geometry::{CameraIntrinsics, CameraPose};
use crate::rasterizer::{project_all, render};

fn camera(size: usize) -> Camera {
    let intr = CameraIntrinsics::from_fov(60f64.to_radians(), size, size).unwrap();
    Camera::new(intr, CameraPose::identity())
}

fn plane_cover(normal: Vector3<f64>, point: Vector3<f64>, half: f64, spacing: f64, opacity: f64) -> GaussianSet {
    let n = normal.normalize();
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t1 = helper.cross(&n).normalize();
    let t2 = n.cross(&t1);
    let mut set = GaussianSet::new(0);
    let steps = (half / spacing).round() as i64;
    for i in -steps..=steps {
        for j in -steps..=steps {
            let x = point + t1 * (i as f64 * spacing) + t2 * (j as f64 * spacing);
            let mut g = create_flattened(&x, &n, spacing, &Vector3::new(0.3, 0.5, 0.7), 0.1, 0);
            g.opacity_logit = inverse_sigmoid(opacity);
            set.push(&g);
        }
    }
    set
}

fn single(center: Vector3<f64>, log_scale: f64, opacity: f64) -> GaussianParams {
    GaussianParams {
        center,
        rotation: [1.0, 0.0, 0.0, 0.0],
        log_scales: Vector3::repeat(log_scale),
        opacity_logit: inverse_sigmoid(opacity),
        sh: vec![0.1, 0.2, 0.3],
    }
}

#[test]
fn remap_rebuilds_rows_and_composes() {
    let r = Remap { old_len: 3, sources: vec![Some(2), None, Some(0), Some(0)] };
    assert_eq!(r.apply(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2), vec![5.0, 6.0, 0.0, 0.0, 1.0, 2.0, 1.0, 2.0]);
    let next = Remap { old_len: 4, sources: vec![Some(3), Some(1)] };
    assert_eq!(r.then(&next).sources, vec![Some(0), None]);
    assert_eq!(Remap::append(2, 1).sources, vec![Some(0), Some(1), None]);
}

#[test]
fn low_gradients_only_prune() {
    let mut set = GaussianSet::new(0);
    set.push(&single(Vector3::new(0.0, 0.0, 5.0), -3.0, 0.8));
    set.push(&single(Vector3::new(0.1, 0.0, 5.0), -3.0, 0.001));
    set.push(&single(Vector3::new(0.2, 0.0, 5.0), -3.0, 0.5));
    let before = set.clone();
    let mut state = DensifyState::new(3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (remap, report) = densify_and_prune(&mut set, &mut state, &DensifyConfig::default(), 4.0, &mut rng);
    assert_eq!(report, DensifyReport { cloned: 0, split: 0, pruned: 1 });
    assert_eq!(remap.sources, vec![Some(0), Some(2)]);
    assert_eq!(set.params(0), before.params(0));
    assert_eq!(set.params(1), before.params(2));
    assert_eq!(state.len(), 2);
}

#[test]
fn small_high_gradient_gaussian_is_cloned_symmetrically() {
    let mut set = GaussianSet::new(0);
    let parent = single(Vector3::new(0.0, 0.0, 5.0), (0.02f64).ln(), 0.7);
    set.push(&parent);
    let mut state = DensifyState::new(1);
    state.grad_accum[0] = 1.0;
    state.counts[0] = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (remap, report) = densify_and_prune(&mut set, &mut state, &DensifyConfig::default(), 4.0, &mut rng);
    assert_eq!(report.cloned, 1);
    assert_eq!(set.len(), 2);
    assert_eq!(remap.sources, vec![Some(0), Some(0)]);
    let (a, b) = (set.center(0), set.center(1));
    assert!((a + b - parent.center * 2.0).norm() < 1e-12);
    let off = (a - parent.center) / 0.02;
    assert!(off.norm() > 0.0 && off.norm() < 6.0, "offset {off:?} outside the footprint");
    assert_eq!(set.log_scale(0), parent.log_scales);
    assert!(state.counts.iter().all(|&c| c == 0));
}

#[test]
fn large_high_gradient_gaussian_is_split() {
    let mut set = GaussianSet::new(0);
    let parent = single(Vector3::new(0.0, 0.0, 5.0), (0.2f64).ln(), 0.7);
    set.push(&parent);
    set.push(&single(Vector3::new(1.0, 0.0, 5.0), -4.0, 0.7));
    let mut state = DensifyState::new(2);
    state.grad_accum[0] = 1.0;
    state.counts[0] = 1;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (remap, report) = densify_and_prune(&mut set, &mut state, &DensifyConfig::default(), 4.0, &mut rng);
    assert_eq!(report.split, 1);
    assert_eq!(remap.sources, vec![Some(1), Some(0), Some(0)]);
    for j in 1..3 {
        let s = set.scales(j);
        assert!((s - Vector3::repeat(0.2 / 1.6)).norm() < 1e-12);
    }
}

#[test]
fn oversized_gaussians_are_pruned() {
    let mut set = GaussianSet::new(0);
    set.push(&single(Vector3::zeros(), (0.5f64).ln(), 0.9));
    set.push(&single(Vector3::zeros(), (0.3f64).ln(), 0.9));
    let mut state = DensifyState::new(2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (remap, _) = densify_and_prune(&mut set, &mut state, &DensifyConfig::default(), 4.0, &mut rng);
    assert_eq!(remap.sources, vec![Some(1)]);
}

#[test]
fn accumulation_counts_visible_gaussians_only() {
    let cam = camera(32);
    let mut set = GaussianSet::new(0);
    set.push(&single(Vector3::new(0.0, 0.0, 5.0), -2.0, 0.5));
    set.push(&single(Vector3::new(0.0, 0.0, -5.0), -2.0, 0.5));
    let out = render(&set, &cam, &RenderConfig::default());
    let mut state = DensifyState::new(2);
    state.accumulate(&out, &[Vector2::new(0.01, 0.0), Vector2::new(1.0, 1.0)]);
    assert_eq!(state.counts, vec![1, 0]);
    assert!((state.mean_grad(0) - 0.01 * 16.0).abs() < 1e-15);
    assert_eq!(state.mean_grad(1), 0.0);
}

#[test]
fn front_map_is_zero_when_everything_is_behind() {
    let cam = camera(32);
    let cfg = RenderConfig::default();
    let front = plane_cover(-Vector3::z(), Vector3::new(0.0, 0.0, 5.0), 4.0, 0.2, 0.95);
    let back = plane_cover(-Vector3::z(), Vector3::new(0.0, 0.0, 8.0), 4.0, 0.2, 0.95);
    let mut out = render(&front, &cam, &cfg);
    out.projected = project_all(&back, &cam, &cfg);
    let map = front_opacity_map(&back, &cam, &cfg, &out, 0.05);
    assert!(map.iter().all(|&a| a == 0.0));
}

#[test]
fn opaque_front_coverage_is_near_one() {
    let cam = camera(32);
    let cfg = RenderConfig::default();
    let set = plane_cover(-Vector3::z(), Vector3::new(0.0, 0.0, 5.0), 4.0, 0.2, 0.99);
    let out = render(&set, &cam, &cfg);
    let map = front_opacity_map(&set, &cam, &cfg, &out, 0.05);
    let covered: Vec<f64> = (0..out.pixel_count()).filter(|&p| out.is_covered(p)).map(|p| map[p]).collect();
    assert!(covered.len() > 900);
    assert!(covered.iter().all(|&a| a > 0.95), "min {}", covered.iter().cloned().fold(1.0, f64::min));
}

#[test]
fn front_map_equals_full_alpha_when_everything_passes() {
    let cam = camera(32);
    let cfg = RenderConfig::default();
    let set = plane_cover(Vector3::new(0.2, -0.1, -1.0), Vector3::new(0.0, 0.0, 5.0), 1.5, 0.25, 0.6);
    let out = render(&set, &cam, &cfg);
    let sel = select_front_gaussians(&out, 1e9);
    assert_eq!(sel.len(), set.len(), "every center must land on a covered pixel");
    assert_eq!(front_opacity_map(&set, &cam, &cfg, &out, 1e9), out.alpha);
}

#[test]
fn sample_count_examples() {
    let n = 128 * 128;
    assert_eq!(reinit_sample_count(&vec![1.0; n], 10_000), 10_000);
    assert_eq!(reinit_sample_count(&vec![0.0; n], 10_000), 0);
    assert_eq!(reinit_sample_count(&vec![1.0 - 0.25; n], 10_000), 7500);
    // 0.5 rounds up
    assert_eq!(reinit_sample_count(&[0.25, 0.0], 5), 1);
    assert_eq!(reinit_sample_count(&[0.5, 0.0], 6), 2);
}

proptest! {
    #[test]
    fn sample_count_is_monotone_in_alpha(alphas in prop::collection::vec(0.0f64..=1.0, 1..64), k in 0usize..64, bump in 0.0f64..1.0, n in 1usize..20_000) {
        let k = k % alphas.len();
        let weights: Vec<f64> = alphas.iter().map(|a| 1.0 - a).collect();
        let mut raised = alphas.clone();
        raised[k] = (raised[k] + bump).min(1.0);
        let raised_w: Vec<f64> = raised.iter().map(|a| 1.0 - a).collect();
        prop_assert!(reinit_sample_count(&raised_w, n) <= reinit_sample_count(&weights, n));
    }
}

#[test]
fn uniform_weights_draw_uniformly() {
    let bins = 64;
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pixels = draw_pixels(&vec![0.3; bins], draws, &mut rng).unwrap();
    let mut counts = vec![0usize; bins];
    pixels.iter().for_each(|&p| counts[p] += 1);
    let expected = draws as f64 / bins as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.01, "chi-square p = {p}");
}

#[test]
fn weighted_draws_follow_weights_and_skip_zeros() {
    let weights = [0.0, 1.0, 0.0, 3.0, 0.5, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let draws = 100_000;
    let pixels = draw_pixels(&weights, draws, &mut rng).unwrap();
    let mut counts = [0usize; 6];
    pixels.iter().for_each(|&p| counts[p] += 1);
    assert_eq!(counts[0] + counts[2] + counts[5], 0);
    let total: f64 = weights.iter().sum();
    let stat: f64 = [1usize, 3, 4]
        .iter()
        .map(|&i| {
            let e = draws as f64 * weights[i] / total;
            (counts[i] as f64 - e).powi(2) / e
        })
        .sum();
    let p = 1.0 - ChiSquared::new(2.0).unwrap().cdf(stat);
    assert!(p > 0.01, "chi-square p = {p}");

    let mut one = vec![0.0; 50];
    one[17] = 0.2;
    assert!(draw_pixels(&one, 500, &mut rng).unwrap().iter().all(|&p| p == 17));
    assert_eq!(draw_pixels(&[0.0; 4], 3, &mut rng), Err(DensityError::EmptyWeightMap));
}

fn observed(size: usize) -> Image {
    Image::filled(size, size, 3, 0.4)
}

fn resample_plane_distance(noise_sigma: f64) -> (f64, f64) {
    let cam = camera(48);
    let n = Vector3::new(0.3, 0.0, -1.0).normalize();
    let anchor = Vector3::new(0.0, 0.0, 5.0);
    let set = plane_cover(n, anchor, 5.0, 0.12, 0.95);
    let mut out = render(&set, &cam, &RenderConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for d in out.depth.iter_mut().filter(|d| **d > 0.0) {
        let z: f64 = StandardNormal.sample(&mut rng);
        *d *= 1.0 + noise_sigma * z;
    }
    let dist = |x: &Vector3<f64>| n.dot(&(x - anchor)).abs();
    let intr = &cam.intrinsics;
    let covered: Vec<usize> = (0..out.pixel_count()).filter(|&p| out.is_covered(p)).collect();
    let floor = covered
        .iter()
        .map(|&p| dist(&(intr.pixel_ray((p % 48) as f64, (p / 48) as f64) * out.depth[p])))
        .sum::<f64>()
        / covered.len() as f64;

    let budget = ResampleBudget::new(&out, &vec![0.0; out.pixel_count()], 2000).unwrap();
    let mut grown = set.clone();
    let outcome = resample_view(&mut grown, &cam, &observed(48), &out, &budget, &ResampleConfig::default(), &mut rng).unwrap();
    assert!(outcome.added > 1900);
    assert_eq!(grown.len(), set.len() + outcome.added);
    for i in set.len()..grown.len() {
        let gn = grown.normal(i, &grown.center(i));
        assert!(gn.dot(&n) > 0.999, "normal {gn:?}");
        assert!((grown.opacity(i) - 0.5).abs() < 1e-12);
    }
    let mean = (set.len()..grown.len()).map(|i| dist(&grown.center(i))).sum::<f64>() / outcome.added as f64;
    (mean, floor)
}

#[test]
fn resampled_gaussians_lie_on_the_plane() {
    let (exact, _) = resample_plane_distance(0.0);
    assert!(exact < 1e-9, "mean distance {exact} on a noise-free depth map");
    let (mean, floor) = resample_plane_distance(0.01);
    assert!(mean < 2.0 * floor, "resampled mean distance {mean} vs noise floor {floor}");
}

#[test]
fn resampling_is_reproducible_and_respects_weights() {
    let cam = camera(32);
    let cfg = RenderConfig::default();
    let set = plane_cover(-Vector3::z(), Vector3::new(0.0, 0.0, 5.0), 1.0, 0.1, 0.95);
    let out = render(&set, &cam, &cfg);
    let mut front = vec![1.0; out.pixel_count()];
    front[16 * 32 + 16] = 0.2;
    let budget = ResampleBudget { n_per_view: 30_000, weights: ResampleBudget::new(&out, &front, 30_000).unwrap().weights };
    let run = |seed| {
        let mut s = set.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = resample_view(&mut s, &cam, &observed(32), &out, &budget, &ResampleConfig::default(), &mut rng).unwrap();
        (s, o)
    };
    let (a, oa) = run(9);
    let (b, _) = run(9);
    assert_eq!(a, b);
    assert!(oa.pixels.iter().all(|&p| p == 16 * 32 + 16));
    assert_eq!(oa.added, budget.count());

    let none = ResampleBudget { n_per_view: 100, weights: vec![0.0; out.pixel_count()] };
    let mut s = set.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let err = resample_view(&mut s, &cam, &observed(32), &out, &none, &ResampleConfig::default(), &mut rng);
    assert_eq!(err, Err(DensityError::EmptyWeightMap));
    assert_eq!(s.len(), set.len());
}

#[test]
fn uncovered_pixels_get_no_weight() {
    let cam = camera(32);
    let set = plane_cover(-Vector3::z(), Vector3::new(0.0, 0.0, 5.0), 0.5, 0.1, 0.95);
    let out = render(&set, &cam, &RenderConfig::default());
    let budget = ResampleBudget::new(&out, &vec![0.0; out.pixel_count()], 10).unwrap();
    for p in 0..out.pixel_count() {
        assert_eq!(budget.weights[p] > 0.0, out.is_covered(p));
    }
}
