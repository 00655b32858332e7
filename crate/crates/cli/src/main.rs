//! `gssr`: generate synthetic scenes, train, render, evaluate and export.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gssr_core::eval::{
    default_tau, error_colored_cloud, gaussian_centers, geometry_report, psnr, ssim, EvalReport, ImageReport,
};
use gssr_core::gaussians::GaussianSet;
use gssr_core::image::Image;
use gssr_core::kv;
use gssr_core::ply::PointCloud;
use gssr_core::rasterizer::{render_with, RenderConfig};
use gssr_core::synthdata::{generate_dataset, Dataset, GroundTruthScene, ViewRecord, PRESETS};
use gssr_core::trainer::config::set_json_path;
use gssr_core::trainer::{Checkpoint, TrainConfig, TrainView, Trainer};
use log::info;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "gssr", version, about = "Gaussian splatting surface reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Key-value config file (`key = value`, `#` comments, `[section]` prefixes).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (or file, for `export`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for all randomness of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for render, loss and eval passes (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Training iterations; schedule iterations are rescaled to match.
    #[arg(long, global = true)]
    iters: Option<usize>,
    /// Override one config field by dotted key, e.g. `--set lr.opacity=0.02`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ray-trace a synthetic scene into a dataset directory.
    Generate(GenerateArgs),
    /// Optimize Gaussians on a dataset.
    Train(TrainArgs),
    /// Render a trained model into the dataset's views.
    Render(RenderArgs),
    /// Geometric and photometric metrics of a trained model.
    Eval(EvalArgs),
    /// Write Gaussian centers as a point cloud.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Preset name or a scene JSON file.
    #[arg(long, default_value = "two-planes")]
    scene: String,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Continue from a `checkpoint_*.bin` written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Start from a Gaussian PLY instead of random points.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Split {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// F-score threshold (default: 0.5% of the GT bounding-box diagonal).
    #[arg(long)]
    tau: Option<f64>,
    /// Distance mapped to pure red in the error cloud (default: 4 tau).
    #[arg(long)]
    tau_max: Option<f64>,
    /// Ignore Gaussians below this opacity.
    #[arg(long)]
    min_opacity: Option<f64>,
    /// Views used for PSNR/SSIM.
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    min_opacity: Option<f64>,
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().context("--out is required")?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn split_overrides(cli: &Cli) -> Result<Vec<(String, String)>> {
    cli.overrides
        .iter()
        .map(|s| kv::split_assignment(s).with_context(|| format!("--set expects KEY=VALUE, got {s:?}")))
        .collect()
}

fn write_manifest(dir: &Path, cli: &Cli, command: &str, seed: u64, config: Value) -> Result<()> {
    let manifest = json!({
        "command": command,
        "args": std::env::args().collect::<Vec<_>>(),
        "seed": seed,
        "config": config,
        "workers": rayon::current_num_threads(),
        "version": env!("CARGO_PKG_VERSION"),
        "git_describe": env!("GSSR_GIT_DESCRIBE"),
        "overrides": cli.overrides,
    });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn train_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            TrainConfig::from_text(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(n) = cli.iters {
        cfg = cfg.with_iterations(n);
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let overrides = split_overrides(cli)?;
    cfg = cfg.with_overrides(overrides.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn generate(cli: &Cli, args: &GenerateArgs) -> Result<()> {
    let dir = out_dir(cli)?;
    let mut scene = if PRESETS.contains(&args.scene.as_str()) {
        GroundTruthScene::preset(&args.scene).context("unknown preset")?
    } else {
        let text = fs::read_to_string(&args.scene)
            .with_context(|| format!("'{}' is neither a preset ({}) nor a readable file", args.scene, PRESETS.join(", ")))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.scene))?
    };
    if let Some(seed) = cli.seed {
        scene.seed = seed;
    }
    let overrides = split_overrides(cli)?;
    if !overrides.is_empty() {
        let mut root = serde_json::to_value(&scene)?;
        for (k, v) in &overrides {
            set_json_path(&mut root, k, v)?;
        }
        scene = serde_json::from_value(root).context("applying --set to the scene")?;
    }
    let ds = generate_dataset(&scene, &dir)?;
    info!("{}: {} train and {} test views, extent {:.3}", ds.name, ds.train.len(), ds.test.len(), ds.scene_extent);
    write_manifest(&dir, cli, "generate", scene.seed, serde_json::to_value(&scene)?)
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::load(dir).with_context(|| format!("loading dataset from {}", dir.display()))
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let dir = out_dir(cli)?;
    let cfg = train_config(cli)?;
    let ds = load_dataset(&args.data)?;
    let views: Vec<TrainView> = ds.train.iter().map(|r| TrainView::new(r.camera, r.image.clone())).collect();
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    write_manifest(&dir, cli, "train", cfg.seed, serde_json::to_value(&cfg)?)?;
    let ckpt_dir = dir.join("checkpoints");
    let mut trainer = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::read(path).with_context(|| format!("reading {}", path.display()))?;
            info!("resuming at iteration {}", ck.iteration);
            Trainer::resume(views, ds.scene_extent, cfg, ck)?
        }
        None => {
            let init = match &args.init {
                Some(p) => Some(GaussianSet::read_ply(p).with_context(|| format!("reading {}", p.display()))?),
                None => None,
            };
            Trainer::new(views, ds.scene_extent, cfg, init)?
        }
    }
    .with_output_dir(&ckpt_dir);
    let result = trainer.run();
    fs::write(dir.join("train_log.csv"), trainer.log_csv())?;
    result?;
    trainer.gaussians.write_ply(&dir.join("point_cloud.ply"))?;
    info!("trained {} iterations, {} Gaussians", trainer.iteration, trainer.gaussians.len());
    Ok(())
}

fn views_of(ds: &Dataset, split: Split) -> Vec<(&'static str, usize, &ViewRecord)> {
    let mut out = Vec::new();
    if split != Split::Test {
        out.extend(ds.train.iter().enumerate().map(|(i, v)| ("train", i, v)));
    }
    if split != Split::Train {
        out.extend(ds.test.iter().enumerate().map(|(i, v)| ("test", i, v)));
    }
    out
}

fn render_config(cli: &Cli) -> Result<RenderConfig> {
    Ok(train_config(cli)?.render)
}

fn render(cli: &Cli, args: &RenderArgs) -> Result<()> {
    let dir = out_dir(cli)?;
    let cfg = render_config(cli)?;
    let model = GaussianSet::read_ply(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let ds = load_dataset(&args.data)?;
    for (split, i, view) in views_of(&ds, args.split) {
        let out = render_with(&model, &view.camera, &cfg, None, false);
        let stem = dir.join(format!("{split}_{i:03}"));
        let path = |suffix: &str| PathBuf::from(format!("{}_{suffix}", stem.display()));
        let color = out.color_image();
        let depth = out.depth_image();
        let normal = out.unit_normal_image();
        let encoded = Image::from_data(normal.width, normal.height, 3, normal.data.iter().map(|n| 0.5 * (n + 1.0)).collect());
        let max_depth = depth.data.iter().copied().fold(0.0, f64::max);
        color.write_png(&path("color.png"))?;
        depth.write_png16(&path("depth.png"), 0.0, max_depth)?;
        encoded.write_png(&path("normal.png"))?;
        color.write_raw(&path("color.f32"))?;
        depth.write_raw(&path("depth.f32"))?;
        normal.write_raw(&path("normal.f32"))?;
        Image::from_data(out.width, out.height, 1, out.alpha.clone()).write_raw(&path("alpha.f32"))?;
    }
    write_manifest(&dir, cli, "render", 0, serde_json::to_value(&cfg)?)
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let dir = out_dir(cli)?;
    let cfg = render_config(cli)?;
    let model = GaussianSet::read_ply(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let ds = load_dataset(&args.data)?;
    let centers = gaussian_centers(&model, args.min_opacity);
    if centers.is_empty() {
        bail!("no Gaussians left to evaluate");
    }
    let gt = &ds.gt.points;
    let tau = args.tau.unwrap_or_else(|| default_tau(gt));
    let geometry = geometry_report(&centers, gt, tau)?;
    let mut images = Vec::new();
    for (_, i, view) in views_of(&ds, args.split) {
        let out = render_with(&model, &view.camera, &cfg, None, false).color_image();
        images.push(ImageReport { view: i, psnr: psnr(&out, &view.image)?, ssim: ssim(&out, &view.image)? });
    }
    let mean = |f: fn(&ImageReport) -> f64| (!images.is_empty()).then(|| images.iter().map(f).sum::<f64>() / images.len() as f64);
    let report = EvalReport {
        geometry,
        mean_psnr: mean(|r| r.psnr),
        mean_ssim: mean(|r| r.ssim),
        images,
        gaussians: model.len(),
        min_opacity: args.min_opacity,
    };
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    error_colored_cloud(&centers, gt, args.tau_max.unwrap_or(4.0 * tau))?.write(&dir.join("error_cloud.ply"))?;
    info!(
        "accuracy {:.5}, completeness {:.5}, f1 {:.3}, psnr {:?}",
        report.geometry.accuracy, report.geometry.completeness, report.geometry.f1, report.mean_psnr
    );
    write_manifest(&dir, cli, "eval", 0, json!({ "tau": tau, "render": cfg }))
}

fn export(cli: &Cli, args: &ExportArgs) -> Result<()> {
    let out = cli.out.clone().context("--out is required")?;
    let model = GaussianSet::read_ply(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let keep: Vec<usize> = (0..model.len()).filter(|&i| args.min_opacity.is_none_or(|m| model.opacity(i) >= m)).collect();
    let points = keep.iter().map(|&i| model.center(i)).collect();
    // the normal of a flat Gaussian is its shortest axis
    let normals = keep
        .iter()
        .map(|&i| {
            let s = model.scales(i);
            model.rotation(i).column(gssr_core::gaussians::min_scale_axis(&s)).into_owned()
        })
        .collect();
    let colors = keep
        .iter()
        .map(|&i| {
            let dc = &model.sh_coeffs(i)[..3];
            std::array::from_fn(|c| gssr_core::image::quantize_u8(dc[c] * gssr_core::sh::C0 + 0.5))
        })
        .collect();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    PointCloud { points, normals: Some(normals), colors: Some(colors) }.write(&out)?;
    info!("exported {} of {} Gaussians to {}", keep.len(), model.len(), out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    match &cli.command {
        Command::Generate(a) => generate(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Render(a) => render(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Export(a) => export(cli, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("GSSR_LOG", "info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
