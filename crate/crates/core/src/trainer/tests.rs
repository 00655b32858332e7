use super::*;
use crate::synthdata::{build_dataset, GroundTruthScene};

fn small_views(size: usize, count: usize) -> (Vec<TrainView>, f64) {
    let mut scene = GroundTruthScene::preset("two-planes").unwrap();
    scene.rig.width = size;
    scene.rig.height = size;
    scene.rig.count = count;
    scene.rig.holdout = 0;
    scene.gt_samples = 100;
    let ds = build_dataset(&scene).unwrap();
    let views = ds.train.into_iter().map(|r| TrainView::new(r.camera, r.image)).collect();
    (views, ds.scene_extent)
}

fn short_config(total: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default().with_iterations(total);
    cfg.init.points = 600;
    cfg.init.bound_samples = 4000;
    cfg.schedule.densify_interval = 10;
    cfg.resample.n_per_view = 40;
    cfg.checkpoint_every = 0;
    cfg
}

#[test]
fn zero_iterations_return_the_initialization() {
    let (views, extent) = small_views(24, 4);
    let cfg = short_config(0);
    let init = initial_gaussians(&views, extent, &cfg);
    let (out, log) = train(views, extent, cfg, None, None).unwrap();
    assert_eq!(out, init);
    assert!(log.is_empty());
}

#[test]
fn rejects_single_view_and_bad_config() {
    let (mut views, extent) = small_views(16, 2);
    let mut bad = short_config(10);
    bad.lr.opacity = 0.0;
    assert!(matches!(Trainer::new(views.clone(), extent, bad, None), Err(TrainError::Config(_))));
    views.truncate(1);
    assert!(matches!(Trainer::new(views, extent, short_config(10), None), Err(TrainError::TooFewViews(1))));
}

#[test]
fn epoch_order_is_a_permutation() {
    let (views, extent) = small_views(16, 5);
    let mut t = Trainer::new(views, extent, short_config(10), None).unwrap();
    for epoch in 0..3 {
        let mut seen: Vec<usize> = (1..=5).map(|k| t.view_for(epoch * 5 + k)).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    }
}

#[test]
fn neighbors_respect_the_angle_window() {
    let (views, extent) = small_views(16, 8);
    let t = Trainer::new(views, extent, short_config(10), None).unwrap();
    for (i, list) in t.neighbors().iter().enumerate() {
        assert!(!list.is_empty() && list.len() <= 4);
        for &j in list {
            let a = t.views[i].camera.pose.forward().angle(&t.views[j].camera.pose.forward()).to_degrees();
            assert!((5.0..=60.0).contains(&a), "{i}->{j}: {a}");
        }
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let (views, extent) = small_views(24, 8);
    let cfg = short_config(80);
    let run = || {
        let mut t = Trainer::new(views.clone(), extent, cfg.clone(), None).unwrap();
        t.run().unwrap();
        let mut ply = Vec::new();
        t.gaussians.write_ply_to(&mut ply).unwrap();
        let csv = t.log_csv();
        (t.gaussians, csv, ply)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    let log = parse_log(&a.1).unwrap();
    assert_eq!(log.len(), 80);
    assert!(log.windows(2).all(|w| w[1].iteration == w[0].iteration + 1));
    // every stage ran at least once
    assert!(log.iter().any(|r| r.resampled > 0));
    assert!(log.iter().any(|r| r.cloned + r.split + r.pruned > 0));
    assert!(log.iter().any(|r| r.losses.mv_g.is_some() && r.losses.normal_g.is_some()));
    let mut other = cfg.clone();
    other.seed = 1;
    let mut t = Trainer::new(views.clone(), extent, other, None).unwrap();
    t.run().unwrap();
    assert_ne!(t.gaussians, a.0);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (views, extent) = small_views(24, 8);
    let mut cfg = short_config(60);
    cfg.checkpoint_every = 25;
    let dir = tempfile::tempdir().unwrap();

    let mut full = Trainer::new(views.clone(), extent, cfg.clone(), None).unwrap().with_output_dir(dir.path());
    full.run().unwrap();

    let ck = Checkpoint::read(&dir.path().join("checkpoint_000025.bin")).unwrap();
    assert_eq!(ck.iteration, 25);
    assert!(dir.path().join("checkpoint_000050.ply").exists());
    let mut resumed = Trainer::resume(views.clone(), extent, cfg.clone(), ck.clone()).unwrap();
    resumed.run().unwrap();
    assert_eq!(resumed.gaussians, full.gaussians);
    assert_eq!(resumed.optimizer, full.optimizer);
    assert_eq!(resumed.log_csv(), full.log_csv());

    let mut changed = cfg;
    changed.seed = 9;
    assert!(matches!(Trainer::resume(views, extent, changed, ck), Err(TrainError::ConfigMismatch { .. })));
}

#[test]
fn training_lowers_the_photometric_loss() {
    let (views, extent) = small_views(32, 8);
    let mut cfg = short_config(600);
    cfg.schedule.densify_interval = 50;
    cfg.resample.n_per_view = 100;
    let (_, log) = train(views, extent, cfg, None, None).unwrap();
    let mean = |r: std::ops::Range<usize>| log[r.clone()].iter().map(|l| l.losses.rgb).sum::<f64>() / r.len() as f64;
    let (early, late) = (mean(90..110), mean(580..600));
    assert!(late < 0.7 * early, "early {early} late {late}");
}

#[test]
fn non_finite_state_aborts_with_a_dump() {
    let (views, extent) = small_views(16, 3);
    let cfg = short_config(5);
    let mut init = initial_gaussians(&views, extent, &cfg);
    for v in init.sh.iter_mut() {
        *v = f64::NAN;
    }
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(views, extent, cfg, Some(init)).unwrap().with_output_dir(dir.path());
    match t.step() {
        Err(TrainError::NonFinite { iteration: 1, dump: Some(path), .. }) => {
            let text = std::fs::read_to_string(path).unwrap();
            assert!(text.contains("\"iteration\": 1"));
        }
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn log_rows_round_trip() {
    let row = LogRow {
        iteration: 7,
        view: 2,
        losses: LossComponents { rgb: 0.1, normal: Some(1.0 / 3.0), scale: Some(2e-9), ..Default::default() },
        total: 0.5,
        gaussians: 10,
        cloned: 1,
        split: 2,
        pruned: 3,
        resampled: 4,
    };
    assert_eq!(parse_log(&log_to_csv(std::slice::from_ref(&row))).unwrap(), vec![row]);
}
