//! `msgs`: reconstruct, match, stylize and render Gaussian scenes.
//!
//! Exit codes: 0 success, 1 failed gradient check, 2 input error,
//! 3 numerical abort.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use msgs_core::dataset::{load_style_set, load_trajectory, trajectory_to_text, Manifest, ManifestEntry};
use msgs_core::gradcheck::{check_gradients, LOSS_IDS};
use msgs_core::raster::Image;
use msgs_core::render::{render, render_label_map, Channels, RenderConfig};
use msgs_core::scene::{load_scene, save_scene, Camera, Scene};
use msgs_core::semantic::{save_label_map, LabelMap};
use msgs_core::style::{hungarian_assign, AssignmentMap, StyleEngine, ToyExtractor};
use msgs_core::synthetic;
use msgs_core::train::{reconstruct, stylize, TrainConfig};

#[derive(Parser)]
#[command(name = "msgs", version, about = "Multi-style Gaussian splatting stylization")]
struct Cli {
    /// Training config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CameraSource {
    /// Dataset manifest whose cameras to use.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Trajectory file, one camera per line.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct appearance, semantics and masks from a dataset manifest.
    Recon {
        #[arg(long)]
        manifest: PathBuf,
        /// Overrides the number of reconstruction iterations.
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Assign a style to every scene class.
    Match {
        #[arg(long)]
        scene: PathBuf,
        /// Style manifest; defaults to the dataset manifest's `styles` entry.
        #[arg(long)]
        styles: Option<PathBuf>,
        #[command(flatten)]
        cameras: CameraSource,
        /// Manual designation such as "0:1,1:0", replacing the optimal matching.
        #[arg(long)]
        manual: Option<String>,
    },
    /// Stylize a reconstructed scene under an assignment.
    Stylize {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Style manifest; defaults to the dataset manifest's `styles` entry.
        #[arg(long)]
        styles: Option<PathBuf>,
        /// Overrides the number of stylization iterations.
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Render a scene from a trajectory or a manifest's cameras.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[command(flatten)]
        cameras: CameraSource,
        /// Also write class label maps, colorized.
        #[arg(long)]
        labels: bool,
    },
    /// Compare analytic gradients with central finite differences.
    CheckGrad {
        /// Loss id, or "all".
        #[arg(long, default_value = "all")]
        loss: String,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Write a synthetic three-blob dataset with styles.
    Synth {
        #[arg(long, default_value_t = 500)]
        gaussians: usize,
        #[arg(long, default_value_t = 8)]
        views: usize,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
    },
}

/// An error that maps to exit code 2.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input<T>(r: msgs_core::Result<T>, what: impl Fn() -> String) -> Result<T> {
    r.map_err(|e| match e {
        msgs_core::Error::NonFinite { .. } => anyhow::Error::new(e),
        other => anyhow::Error::new(InputError(format!("{}: {other}", what()))),
    })
}

fn load_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(p) => input(TrainConfig::load(p), || format!("config {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    input(Manifest::load(path), || format!("manifest {}", path.display()))
}

fn load_scene_input(path: &Path) -> Result<Scene> {
    input(load_scene(path), || format!("scene {}", path.display()))
}

fn style_path(explicit: Option<&Path>, manifest: Option<&Manifest>) -> Result<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| manifest.and_then(|m| m.styles.clone()))
        .ok_or_else(|| InputError("no style manifest given (use --styles or a `styles` manifest entry)".into()).into())
}

fn cameras(src: &CameraSource) -> Result<(Vec<Camera>, Option<Manifest>)> {
    match (&src.manifest, &src.trajectory) {
        (Some(m), None) => {
            let m = load_manifest(m)?;
            Ok((m.cameras(), Some(m)))
        }
        (None, Some(t)) => Ok((input(load_trajectory(t), || format!("trajectory {}", t.display()))?, None)),
        _ => Err(InputError("give exactly one of --manifest or --trajectory".into()).into()),
    }
}

fn frame_name(prefix: &str, index: usize, count: usize) -> String {
    let width = count.saturating_sub(1).to_string().len().max(3);
    format!("{prefix}_{index:0width$}.png")
}

fn write_previews(scene: &Scene, cams: &[Camera], out: &Path, prefix: &str) -> Result<()> {
    let cfg = RenderConfig::default();
    for (i, cam) in cams.iter().enumerate() {
        let img = render(scene, cam, Channels::Color, &cfg);
        img.color_image().save_png(&out.join(frame_name(prefix, i, cams.len())))?;
    }
    Ok(())
}

const PALETTE: [[f64; 3]; 8] = [
    [0.90, 0.30, 0.25],
    [0.30, 0.70, 0.35],
    [0.25, 0.40, 0.90],
    [0.95, 0.80, 0.20],
    [0.70, 0.35, 0.80],
    [0.25, 0.80, 0.85],
    [0.95, 0.55, 0.15],
    [0.60, 0.60, 0.60],
];

fn colorize(labels: &LabelMap) -> Image {
    let mut img = Image::new(labels.width, labels.height, 3);
    for y in 0..labels.height {
        for x in 0..labels.width {
            if let Some(c) = labels.get(x, y) {
                img.pixel_mut(x, y).copy_from_slice(&PALETTE[c % PALETTE.len()]);
            }
        }
    }
    img
}

fn cmd_recon(cli: &Cli, manifest: &Path, iters: Option<usize>) -> Result<()> {
    let mut cfg = load_config(cli)?;
    if let Some(n) = iters {
        cfg.recon_iters = n;
    }
    let m = load_manifest(manifest)?;
    let init_path = m.init.clone().ok_or_else(|| InputError("manifest has no `init` scene entry".into()))?;
    let init = load_scene_input(&init_path)?;
    let views = input(m.load_views(), || format!("views of {}", manifest.display()))?;
    fs::create_dir_all(&cli.out)?;
    cfg.snapshot_path.get_or_insert_with(|| cli.out.join("snapshot.msgs"));
    let r = input(reconstruct(&views, init, &cfg), || "reconstruction".into())?;
    save_scene(&r.scene, &cli.out.join("scene.msgs"))?;
    r.report.save_csv(&cli.out.join("recon_report.csv"))?;
    write_previews(&r.scene, &m.cameras(), &cli.out, "preview")?;
    println!("reconstructed {} Gaussians, mean PSNR {:.2} dB", r.scene.len(), r.final_psnr);
    Ok(())
}

fn cmd_match(cli: &Cli, scene: &Path, styles: Option<&Path>, src: &CameraSource, manual: Option<&str>) -> Result<()> {
    let scene = load_scene_input(scene)?;
    let (cams, manifest) = cameras(src)?;
    let style_file = style_path(styles, manifest.as_ref())?;
    let engine = StyleEngine::default();
    let styles = input(load_style_set(&style_file, &engine.extractor), || format!("styles {}", style_file.display()))?;
    let q = input(engine.cost_matrix(&scene, &cams, &styles), || "cost matrix".into())?;
    let assignment = match manual {
        Some(spec) => input(AssignmentMap::parse_manual(spec, scene.num_classes(), styles.len()), || {
            format!("manual assignment {spec:?}")
        })?,
        None => hungarian_assign(&q),
    };
    fs::create_dir_all(&cli.out)?;
    fs::write(cli.out.join("assignment.txt"), assignment.to_text())?;
    fs::write(cli.out.join("cost.csv"), q.to_csv())?;
    print!("{}", assignment.to_text());
    Ok(())
}

fn cmd_stylize(
    cli: &Cli,
    scene: &Path,
    assignment: &Path,
    manifest: &Path,
    styles: Option<&Path>,
    iters: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(cli)?;
    if let Some(n) = iters {
        cfg.stylize_iters = n;
    }
    let scene = load_scene_input(scene)?;
    let m = load_manifest(manifest)?;
    let style_file = style_path(styles, Some(&m))?;
    let styles = input(load_style_set(&style_file, &ToyExtractor::default()), || format!("styles {}", style_file.display()))?;
    let text = fs::read_to_string(assignment).with_context(|| format!("reading {}", assignment.display()))
        .map_err(|e| InputError(format!("{e:#}")))?;
    let assignment = input(AssignmentMap::from_text(&text, scene.num_classes(), styles.len()), || {
        format!("assignment {}", assignment.display())
    })?;
    let views = input(m.load_views(), || format!("views of {}", manifest.display()))?;
    fs::create_dir_all(&cli.out)?;
    cfg.snapshot_path.get_or_insert_with(|| cli.out.join("snapshot.msgs"));
    let cams = m.cameras();
    write_previews(&scene, &cams, &cli.out, "before")?;
    let (styled, report) = input(stylize(&views, scene, &styles, &assignment, &cfg), || "stylization".into())?;
    save_scene(&styled, &cli.out.join("stylized.msgs"))?;
    report.save_csv(&cli.out.join("stylize_report.csv"))?;
    write_previews(&styled, &cams, &cli.out, "after")?;
    if let (Some(a), Some(b)) = (report.rows.first(), report.rows.last()) {
        println!("multi-style loss {:.5} -> {:.5}", a.style, b.style);
    }
    Ok(())
}

fn cmd_render(cli: &Cli, scene: &Path, src: &CameraSource, labels: bool) -> Result<()> {
    let scene = load_scene_input(scene)?;
    let (cams, _) = cameras(src)?;
    fs::create_dir_all(&cli.out)?;
    let cfg = RenderConfig::default();
    write_previews(&scene, &cams, &cli.out, "view")?;
    if labels {
        for (i, cam) in cams.iter().enumerate() {
            colorize(&render_label_map(&scene, cam, &cfg)).save_png(&cli.out.join(frame_name("label", i, cams.len())))?;
        }
    }
    println!("rendered {} views", cams.len());
    Ok(())
}

fn cmd_check_grad(loss: &str, seeds: u64) -> Result<bool> {
    let ids: Vec<&str> = if loss == "all" { LOSS_IDS.to_vec() } else { vec![loss] };
    let mut ok = true;
    for id in ids {
        let mut worst = 0.0f64;
        let mut params = 0;
        for seed in 0..seeds {
            let r = input(check_gradients(id, seed), || format!("loss {id}"))?;
            worst = worst.max(r.max_rel_error);
            params = params.max(r.num_params);
        }
        let pass = worst < 1e-4;
        ok &= pass;
        println!("{id}: max relative error {worst:.3e} over {seeds} seeds (up to {params} parameters) {}", if pass { "ok" } else { "FAILED" });
    }
    Ok(ok)
}

fn cmd_synth(cli: &Cli, gaussians: usize, views: usize, resolution: usize) -> Result<()> {
    if gaussians < 3 || views == 0 || resolution == 0 {
        bail!(InputError("need at least 3 Gaussians, 1 view and a positive resolution".into()));
    }
    let seed = cli.seed.unwrap_or(0);
    let ds = synthetic::desk_dataset(seed, gaussians, views, resolution, 16);
    let out = &cli.out;
    fs::create_dir_all(out)?;
    let mut manifest = Manifest { init: Some("init.msgs".into()), styles: Some("styles.txt".into()), entries: Vec::new() };
    for (i, v) in ds.views.iter().enumerate() {
        let image = frame_name("image", i, views);
        let labels = format!("labels_{i:03}.lmap");
        v.image.save_png(&out.join(&image))?;
        save_label_map(v.labels.as_ref().expect("synthetic views carry labels"), &out.join(&labels))?;
        manifest.entries.push(ManifestEntry { image: image.into(), camera: v.camera.clone(), labels: Some(labels.into()) });
    }
    fs::write(out.join("manifest.txt"), manifest.to_text())?;
    fs::write(out.join("trajectory.txt"), trajectory_to_text(&manifest.cameras()))?;
    save_scene(&ds.init, &out.join("init.msgs"))?;
    save_scene(&ds.truth.scene, &out.join("truth.msgs"))?;
    synthetic::stripe_style(resolution, resolution).save_png(&out.join("style_stripes.png"))?;
    synthetic::checker_style(resolution, resolution).save_png(&out.join("style_checker.png"))?;
    fs::write(out.join("styles.txt"), "stripes\tstyle_stripes.png\t-\t-\nchecker\tstyle_checker.png\t-\t-\n")?;
    println!("wrote synthetic dataset to {}", out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Recon { manifest, iters } => cmd_recon(cli, manifest, *iters)?,
        Command::Match { scene, styles, cameras, manual } => {
            cmd_match(cli, scene, styles.as_deref(), cameras, manual.as_deref())?
        }
        Command::Stylize { scene, assignment, manifest, styles, iters } => {
            cmd_stylize(cli, scene, assignment, manifest, styles.as_deref(), *iters)?
        }
        Command::Render { scene, cameras, labels } => cmd_render(cli, scene, cameras, *labels)?,
        Command::CheckGrad { loss, seeds } => return cmd_check_grad(loss, *seeds),
        Command::Synth { gaussians, views, resolution } => cmd_synth(cli, *gaussians, *views, *resolution)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let numeric = e.chain().any(|c| matches!(c.downcast_ref(), Some(msgs_core::Error::NonFinite { .. })));
            ExitCode::from(if numeric { 3 } else { 2 })
        }
    }
}
