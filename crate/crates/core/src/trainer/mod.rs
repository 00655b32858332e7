//! The optimization loop: view scheduling, loss assembly, Adam updates,
//! density control, logging and checkpoints.
//!
//! All randomness is drawn from ChaCha streams keyed by the seed, the
//! iteration and a purpose tag, so a run resumed from a checkpoint replays
//! the uninterrupted run exactly.

pub mod checkpoint;
pub mod config;
pub mod init;
pub mod optimizer;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{densify_and_prune, front_opacity_map, resample_view, DensityError, DensifyState, Remap, ResampleBudget};
use crate::gaussians::{GaussianSet, ParamGroup, PlyError};
use crate::geometry::Camera;
use crate::image::Image;
use crate::losses::{
    gaussian_multiview_loss, gaussian_normal_loss, multiview_photometric_loss, normal_consistency_loss, opacity_loss,
    rgb_loss, scale_loss, select_front_gaussians, LossComponents, LossError, ViewPair,
};
use crate::rasterizer::{render, render_backward_with, render_with, ProjectedAdjoint, RenderAdjoints, RenderError};

pub use checkpoint::Checkpoint;
pub use config::{ConfigError, TrainConfig};
pub use init::initialize_gaussians;
pub use optimizer::{Adam, GroupRates, OptimizerError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training needs at least 2 views, got {0}")]
    TooFewViews(usize),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error("non-finite {what} at iteration {iteration}{}", dump.as_ref().map(|p| format!(" (diagnostic: {})", p.display())).unwrap_or_default())]
    NonFinite { iteration: usize, what: String, dump: Option<PathBuf> },
    #[error("checkpoint was written with config {found}, current config is {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("view {view}: image is {actual:?}, camera expects {expected:?}")]
    ViewShape { view: usize, expected: (usize, usize), actual: (usize, usize, usize) },
}

/// A training view: camera, observed RGB image and its luminance.
#[derive(Debug, Clone)]
pub struct TrainView {
    pub camera: Camera,
    pub image: Image,
    pub gray: Image,
}

impl TrainView {
    pub fn new(camera: Camera, image: Image) -> Self {
        let gray = image.luminance();
        Self { camera, image, gray }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub view: usize,
    pub losses: LossComponents,
    pub total: f64,
    pub gaussians: usize,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub resampled: usize,
}

pub const LOG_HEADER: &str = "iteration,view,rgb,normal,normal_g,opacity,mv,mv_g,scale,total,gaussians,cloned,split,pruned,resampled";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{:?},{},{},{},{},{},{},{:?},{},{},{},{},{}",
            self.iteration,
            self.view,
            l.rgb,
            opt(l.normal),
            opt(l.normal_g),
            opt(l.opacity),
            opt(l.mv),
            opt(l.mv_g),
            opt(l.scale),
            self.total,
            self.gaussians,
            self.cloned,
            self.split,
            self.pruned,
            self.resampled
        )
    }
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.to_csv());
    }
    out
}

fn parse_log(text: &str) -> Result<Vec<LogRow>, TrainError> {
    let bad = |line: &str| TrainError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad log row {line:?}")));
    let mut rows = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 15 {
            return Err(bad(line));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(line));
        let o = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        rows.push(LogRow {
            iteration: int(f[0])?,
            view: int(f[1])?,
            losses: LossComponents {
                rgb: num(f[2])?,
                normal: o(f[3])?,
                normal_g: o(f[4])?,
                opacity: o(f[5])?,
                mv: o(f[6])?,
                mv_g: o(f[7])?,
                scale: o(f[8])?,
            },
            total: num(f[9])?,
            gaussians: int(f[10])?,
            cloned: int(f[11])?,
            split: int(f[12])?,
            pruned: int(f[13])?,
            resampled: int(f[14])?,
        });
    }
    Ok(rows)
}

const TAG_EPOCH: u64 = 1;
const TAG_NEIGHBOR: u64 = 2;
const TAG_DENSIFY: u64 = 3;
const TAG_INIT: u64 = 4;
const TAG_RESAMPLE: u64 = 1 << 8;

/// Independent stream for `(seed, index, tag)`.
pub fn rng_stream(seed: u64, index: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((index << 24) | tag);
    rng
}

/// Initial Gaussians for a run, drawn from the run's seed.
pub fn initial_gaussians(views: &[TrainView], scene_extent: f64, cfg: &TrainConfig) -> GaussianSet {
    let cameras: Vec<Camera> = views.iter().map(|v| v.camera).collect();
    let mut rng = rng_stream(cfg.seed, 0, TAG_INIT);
    initialize_gaussians(&cameras, scene_extent, &cfg.init, cfg.sh_degree, &mut rng)
}

/// Views whose viewing direction differs from view `i` by an angle within
/// the configured range, closest centers first.
pub fn neighbor_lists(cameras: &[Camera], cfg: &config::NeighborConfig) -> Vec<Vec<usize>> {
    let (lo, hi) = (cfg.min_angle_deg.to_radians(), cfg.max_angle_deg.to_radians());
    cameras
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut cand: Vec<(f64, usize)> = cameras
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .filter_map(|(j, b)| {
                    let angle = a.pose.forward().dot(&b.pose.forward()).clamp(-1.0, 1.0).acos();
                    (lo <= angle && angle <= hi).then(|| ((a.pose.center - b.pose.center).norm(), j))
                })
                .collect();
            cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            cand.into_iter().take(cfg.candidates).map(|(_, j)| j).collect()
        })
        .collect()
}

fn add_extra(dst: &mut [ProjectedAdjoint], src: &[ProjectedAdjoint], w: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        d.mean2d += s.mean2d * w;
        for k in 0..3 {
            d.conic[k] += s.conic[k] * w;
        }
        d.opacity += s.opacity * w;
        d.color += s.color * w;
        d.normal += s.normal * w;
        d.distance += s.distance * w;
    }
}

fn non_finite_groups(s: &GaussianSet) -> Vec<&'static str> {
    ParamGroup::ALL.iter().filter(|&&g| !s.group(g).iter().all(|v| v.is_finite())).map(|g| g.name()).collect()
}

pub struct Trainer {
    pub config: TrainConfig,
    pub views: Vec<TrainView>,
    pub scene_extent: f64,
    pub gaussians: GaussianSet,
    pub optimizer: Adam,
    pub densify: DensifyState,
    /// Completed iterations.
    pub iteration: usize,
    pub log: Vec<LogRow>,
    /// Checkpoints and diagnostics go here when set.
    pub output_dir: Option<PathBuf>,
    neighbors: Vec<Vec<usize>>,
    epoch_order: Option<(usize, Vec<usize>)>,
    config_hash: String,
}

impl Trainer {
    /// Starts a run from `init`, or from random points when `None`.
    pub fn new(
        views: Vec<TrainView>,
        scene_extent: f64,
        config: TrainConfig,
        init: Option<GaussianSet>,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if views.len() < 2 {
            return Err(TrainError::TooFewViews(views.len()));
        }
        for (i, v) in views.iter().enumerate() {
            let intr = &v.camera.intrinsics;
            if v.image.width != intr.width || v.image.height != intr.height || v.image.channels != 3 {
                return Err(TrainError::ViewShape {
                    view: i,
                    expected: (intr.width, intr.height),
                    actual: (v.image.width, v.image.height, v.image.channels),
                });
            }
        }
        let gaussians = match init {
            Some(g) => g,
            None => initial_gaussians(&views, scene_extent, &config),
        };
        let cameras: Vec<Camera> = views.iter().map(|v| v.camera).collect();
        let neighbors = neighbor_lists(&cameras, &config.neighbors);
        Ok(Self {
            optimizer: Adam::new(&gaussians),
            densify: DensifyState::new(gaussians.len()),
            config_hash: config.hash(),
            config,
            views,
            scene_extent,
            gaussians,
            iteration: 0,
            log: Vec::new(),
            output_dir: None,
            neighbors,
            epoch_order: None,
        })
    }

    /// Restores the state saved in `checkpoint`. The config must be the one
    /// the checkpoint was written with.
    pub fn resume(
        views: Vec<TrainView>,
        scene_extent: f64,
        config: TrainConfig,
        checkpoint: Checkpoint,
    ) -> Result<Self, TrainError> {
        if checkpoint.config_hash != config.hash() {
            return Err(TrainError::ConfigMismatch { expected: config.hash(), found: checkpoint.config_hash });
        }
        let mut t = Self::new(views, scene_extent, config, Some(checkpoint.gaussians))?;
        t.optimizer = checkpoint.optimizer;
        t.densify = checkpoint.densify;
        t.iteration = checkpoint.iteration;
        t.log = parse_log(&checkpoint.log_csv)?;
        Ok(t)
    }

    pub fn with_output_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.output_dir = Some(dir.into());
        self
    }

    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    /// View used at 1-based iteration `it`: a fresh permutation per epoch.
    pub fn view_for(&mut self, it: usize) -> usize {
        let n = self.views.len();
        let epoch = (it - 1) / n;
        if self.epoch_order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng_stream(self.config.seed, epoch as u64, TAG_EPOCH));
            self.epoch_order = Some((epoch, order));
        }
        self.epoch_order.as_ref().unwrap().1[(it - 1) % n]
    }

    pub fn rates(&self, it: usize) -> GroupRates {
        self.config.lr.at(it, self.config.total_iterations, self.scene_extent)
    }

    fn fail(&self, iteration: usize, view: usize, what: String, losses: &LossComponents) -> TrainError {
        let dump = self.output_dir.as_ref().and_then(|dir| {
            let path = dir.join(format!("nan_iteration_{iteration:06}.json"));
            let report = serde_json::json!({
                "iteration": iteration,
                "view": view,
                "what": what,
                "losses": losses,
                "gaussians": self.gaussians.len(),
                "non_finite_groups": non_finite_groups(&self.gaussians),
                "learning_rates": self.rates(iteration),
                "config_hash": self.config_hash,
            });
            let written = fs::create_dir_all(dir)
                .and_then(|_| fs::write(&path, serde_json::to_string_pretty(&report).unwrap_or_default()));
            match written {
                Ok(()) => Some(path),
                Err(e) => {
                    warn!("could not write diagnostic dump: {e}");
                    None
                }
            }
        });
        TrainError::NonFinite { iteration, what, dump }
    }

    /// Runs one iteration.
    pub fn step(&mut self) -> Result<&LogRow, TrainError> {
        let it = self.iteration + 1;
        let v = self.view_for(it);
        let cfg = &self.config;
        let sched = &cfg.schedule;
        let w = cfg.weights;
        let view = &self.views[v];
        let n = self.gaussians.len();

        let outputs = render(&self.gaussians, &view.camera, &cfg.render);
        let (rgb, rgb_grad) = rgb_loss(&outputs.color_image(), &view.image, w.rgb_dssim_mix)?;
        let mut losses = LossComponents { rgb, ..Default::default() };
        let mut adj = RenderAdjoints::zeros(outputs.width, outputs.height);
        adj.color = rgb_grad;
        let mut extra = vec![ProjectedAdjoint::default(); n];
        let mut has_extra = false;

        let normal_on = it >= sched.normal_from && w.normal > 0.0;
        let instance = it >= sched.instance_from;
        let sel = (instance && (w.normal_g > 0.0 || w.mv_g > 0.0))
            .then(|| select_front_gaussians(&outputs, cfg.front_tolerance * self.scene_extent));
        if normal_on || (sel.is_some() && w.normal_g > 0.0) {
            let nl = normal_consistency_loss(&outputs, &view.camera.intrinsics);
            if normal_on {
                losses.normal = Some(nl.loss);
                adj.add_scaled(&nl.adjoints, w.normal);
            }
            if let Some(sel) = sel.as_ref().filter(|_| w.normal_g > 0.0) {
                let (l, a) = gaussian_normal_loss(sel, &nl.depth_normals, n);
                losses.normal_g = Some(l);
                add_extra(&mut extra, &a, w.normal_g);
                has_extra = true;
            }
        }

        let mv_on = it >= sched.mv_from && w.mv > 0.0;
        let mv_g_on = sel.is_some() && w.mv_g > 0.0;
        if mv_on || mv_g_on {
            let cands = &self.neighbors[v];
            if !cands.is_empty() {
                let j = cands[rng_stream(cfg.seed, it as u64, TAG_NEIGHBOR).random_range(0..cands.len())];
                let nbr = &self.views[j];
                let nbr_out = mv_on.then(|| render_with(&self.gaussians, &nbr.camera, &cfg.render, None, false));
                let pair = ViewPair {
                    ref_camera: &view.camera,
                    ref_gray: &view.gray,
                    ref_outputs: &outputs,
                    nbr_camera: &nbr.camera,
                    nbr_gray: &nbr.gray,
                    nbr_outputs: nbr_out.as_ref(),
                };
                if mv_on {
                    let m = multiview_photometric_loss(&pair, &cfg.patch);
                    losses.mv = Some(m.loss);
                    adj.add_scaled(&m.adjoints, w.mv);
                }
                if let Some(sel) = sel.as_ref().filter(|_| mv_g_on) {
                    let g = gaussian_multiview_loss(&pair, sel, &cfg.patch, n);
                    losses.mv_g = Some(g.loss);
                    add_extra(&mut extra, &g.adjoints, w.mv_g);
                    has_extra = true;
                }
            }
        }

        let back = render_backward_with(
            &self.gaussians,
            &view.camera,
            &cfg.render,
            &outputs,
            &adj,
            has_extra.then_some(extra.as_slice()),
        )?;
        let mut grads = back.grads;
        if w.scale > 0.0 {
            let (l, g) = scale_loss(&self.gaussians);
            losses.scale = Some(l);
            grads.add_scaled(&g, w.scale);
        }
        if it >= sched.opacity_from && w.opacity > 0.0 {
            let (l, g) = opacity_loss(&self.gaussians);
            losses.opacity = Some(l);
            grads.add_scaled(&g, w.opacity);
        }
        let total = losses.total(&w);
        if !total.is_finite() {
            return Err(self.fail(it, v, "loss".into(), &losses));
        }
        if !grads.all_finite() {
            return Err(self.fail(it, v, format!("gradient in {:?}", non_finite_groups(&grads)), &losses));
        }

        let densify_window = it <= sched.densify_until;
        if densify_window {
            self.densify.accumulate(&outputs, &back.mean2d_grads);
        }
        drop(outputs);
        let rates = self.rates(it);
        self.optimizer.step(&mut self.gaussians, &grads, &rates)?;
        if !self.gaussians.all_finite() {
            return Err(self.fail(it, v, "parameters after the update".into(), &losses));
        }

        let mut row =
            LogRow { iteration: it, view: v, losses, total, gaussians: 0, cloned: 0, split: 0, pruned: 0, resampled: 0 };
        let sched = self.config.schedule.clone();
        if densify_window && it >= sched.densify_from && it % sched.densify_interval == 0 {
            let mut rng = rng_stream(self.config.seed, it as u64, TAG_DENSIFY);
            let (remap, report) =
                densify_and_prune(&mut self.gaussians, &mut self.densify, &self.config.densify, self.scene_extent, &mut rng);
            self.optimizer.apply_remap(&remap);
            (row.cloned, row.split, row.pruned) = (report.cloned, report.split, report.pruned);
            debug!("iteration {it}: densify {report:?}, {} Gaussians", self.gaussians.len());
        }
        if sched.resample && sched.reinit_at.contains(&it) {
            row.resampled = self.resample_all(it)?;
            info!("iteration {it}: resampled {} Gaussians, {} total", row.resampled, self.gaussians.len());
        }
        row.gaussians = self.gaussians.len();
        self.iteration = it;
        self.log.push(row);

        let every = self.config.checkpoint_every;
        if every > 0 && it % every == 0 {
            if let Some(dir) = self.output_dir.clone() {
                self.write_checkpoint(&dir)?;
            }
        }
        Ok(self.log.last().unwrap())
    }

    /// Adds Gaussians behind transparent regions of every training view in
    /// turn. Returns the number added.
    pub fn resample_all(&mut self, it: usize) -> Result<usize, TrainError> {
        let cfg = &self.config;
        let tolerance = cfg.resample.front_tolerance * self.scene_extent;
        let mut added = 0;
        for (vi, view) in self.views.iter().enumerate() {
            let outputs = render(&self.gaussians, &view.camera, &cfg.render);
            let front = front_opacity_map(&self.gaussians, &view.camera, &cfg.render, &outputs, tolerance);
            let budget = ResampleBudget::new(&outputs, &front, cfg.resample.n_per_view)?;
            if budget.count() == 0 {
                continue;
            }
            let mut rng = rng_stream(cfg.seed, it as u64, TAG_RESAMPLE + vi as u64);
            let before = self.gaussians.len();
            match resample_view(&mut self.gaussians, &view.camera, &view.image, &outputs, &budget, &cfg.resample, &mut rng) {
                Ok(out) => added += out.added,
                Err(DensityError::EmptyWeightMap) => continue,
                Err(e) => return Err(e.into()),
            }
            let remap = Remap::append(before, self.gaussians.len() - before);
            self.optimizer.apply_remap(&remap);
            self.densify.apply_remap(&remap);
        }
        Ok(added)
    }

    /// Runs until `total_iterations` have completed.
    pub fn run(&mut self) -> Result<(), TrainError> {
        self.run_until(self.config.total_iterations)
    }

    pub fn run_until(&mut self, iteration: usize) -> Result<(), TrainError> {
        let stop = iteration.min(self.config.total_iterations);
        while self.iteration < stop {
            let row = self.step()?;
            if row.iteration % 500 == 0 {
                info!("iteration {}: loss {:.5}, {} Gaussians", row.iteration, row.total, row.gaussians);
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: self.config_hash.clone(),
            iteration: self.iteration,
            gaussians: self.gaussians.clone(),
            optimizer: self.optimizer.clone(),
            densify: self.densify.clone(),
            log_csv: log_to_csv(&self.log),
        }
    }

    /// Writes `checkpoint_NNNNNN.{bin,ply,json}` into `dir`.
    pub fn write_checkpoint(&self, dir: &Path) -> Result<PathBuf, TrainError> {
        fs::create_dir_all(dir)?;
        let stem = dir.join(format!("checkpoint_{:06}", self.iteration));
        let bin = stem.with_extension("bin");
        self.checkpoint().write(&bin)?;
        self.gaussians.write_ply(&stem.with_extension("ply"))?;
        let meta = serde_json::json!({
            "iteration": self.iteration,
            "config_hash": self.config_hash,
            "gaussians": self.gaussians.len(),
        });
        fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&meta).unwrap_or_default())?;
        debug!("checkpoint written to {}", bin.display());
        Ok(bin)
    }

    pub fn log_csv(&self) -> String {
        log_to_csv(&self.log)
    }
}

/// Trains from scratch and returns the final Gaussians and the log.
pub fn train(
    views: Vec<TrainView>,
    scene_extent: f64,
    config: TrainConfig,
    init: Option<GaussianSet>,
    output_dir: Option<&Path>,
) -> Result<(GaussianSet, Vec<LogRow>), TrainError> {
    let mut t = Trainer::new(views, scene_extent, config, init)?;
    t.output_dir = output_dir.map(Path::to_path_buf);
    t.run()?;
    Ok((t.gaussians, t.log))
}

#[cfg(test)]
mod tests;
