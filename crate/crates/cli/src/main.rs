//! `idc` — the end-to-end pipeline driver.
//!
//! Subcommands mirror the pipeline stages: `render` produces synthetic
//! RGB-D ground truth, `curate` filters clips by trajectory span, `train`
//! runs the two training stages, `generate` samples camera-conditioned
//! RGB-D sequences from a checkpoint, `evaluate` scores them, `fuse` lifts
//! them to a point cloud, and `reproject-check` measures cross-frame depth
//! consistency.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{CheckpointExtra, RunConfig};
use idc_core::curation::{curate, ClipRecord, CurationConfig, SpanMode};
use idc_core::diffusion::make_schedule;
use idc_core::eval::{depth_consistency, pose_error, psnr, ssim};
use idc_core::geometry::{DepthMap, RgbImage, Trajectory};
use idc_core::io::{read_sequence, read_tensor, write_sequence};
use idc_core::model::{load_checkpoint, save_checkpoint};
use idc_core::pipeline::generate_sequence;
use idc_core::pointcloud::{export_ply, fuse};
use idc_core::scenes::{make_trajectory, render_sequence, RgbdFrame, SceneSpec, TrajectoryKind};
use idc_core::training::{train_stage1, train_stage2, Dataset, TrainResult};
use idc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "idc", about = "Camera-conditioned joint RGB-D video diffusion pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic RGB-D sequence along a canonical trajectory.
    Render(RenderArgs),
    /// Filter a directory of trajectory JSON clips by length and span.
    Curate(CurateArgs),
    /// Train stage 1 (RGB-D generation) or stage 2 (camera conditioning).
    Train(TrainArgs),
    /// Generate an RGB-D sequence from a checkpoint, a first frame, and a
    /// target trajectory.
    Generate(GenerateArgs),
    /// Score a generated sequence against ground truth.
    Evaluate(EvaluateArgs),
    /// Fuse an RGB-D sequence into a point cloud PLY.
    Fuse(FuseArgs),
    /// Cross-frame depth-consistency report for a sequence.
    ReprojectCheck(ReprojectArgs),
}

#[derive(Args)]
struct RenderArgs {
    /// Scene spec JSON.
    #[arg(long)]
    scene: PathBuf,
    /// Trajectory as kind,frames,step — e.g. forward,13,0.15.
    #[arg(long)]
    traj: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 48)]
    width: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 40.0)]
    focal: f64,
}

#[derive(Args)]
struct CurateArgs {
    /// Directory of per-clip trajectory JSON files.
    #[arg(long)]
    clips: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long)]
    span_threshold: f64,
    /// above | below
    #[arg(long, default_value = "above")]
    span_mode: String,
    #[arg(long, default_value_t = 49)]
    min_frames: usize,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    stage: u8,
    /// Run config JSON (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Stage-1 checkpoint to extend (stage 2 only).
    #[arg(long)]
    stage1_ckpt: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// First-frame RGB tensor (h×w×3).
    #[arg(long)]
    image: PathBuf,
    /// First-frame depth tensor (h×w).
    #[arg(long)]
    depth: PathBuf,
    /// Target trajectory JSON.
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// DDIM sampling steps.
    #[arg(long, default_value_t = 50)]
    steps: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    seq: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Trajectory override (defaults to the sequence's own).
    #[arg(long)]
    traj: Option<PathBuf>,
    #[arg(long)]
    max_depth: Option<f64>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 1)]
    pixel_stride: usize,
}

#[derive(Args)]
struct ReprojectArgs {
    #[arg(long)]
    seq: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("IDC_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    let result = match cli.command {
        Command::Render(args) => cmd_render(args),
        Command::Curate(args) => cmd_curate(args),
        Command::Train(args) => cmd_train(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Fuse(args) => cmd_fuse(args),
        Command::ReprojectCheck(args) => cmd_reproject_check(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("idc: {e}");
            ExitCode::FAILURE
        }
    }
}

fn parse_traj_triple(s: &str) -> Result<(TrajectoryKind, usize, f64)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidConfig(format!(
            "trajectory `{s}` must be kind,frames,step"
        )));
    }
    let kind: TrajectoryKind = parts[0].parse()?;
    let frames = parts[1]
        .parse::<usize>()
        .map_err(|e| Error::InvalidConfig(format!("frames: {e}")))?;
    let step = parts[2]
        .parse::<f64>()
        .map_err(|e| Error::InvalidConfig(format!("step: {e}")))?;
    Ok((kind, frames, step))
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let scene: SceneSpec = serde_json::from_str(&std::fs::read_to_string(&args.scene)?)?;
    scene.validate()?;
    let (kind, frames, step) = parse_traj_triple(&args.traj)?;
    let intr = idc_core::geometry::Intrinsics::new(
        args.focal,
        args.focal,
        (args.width as f64 - 1.0) / 2.0,
        (args.height as f64 - 1.0) / 2.0,
        args.width,
        args.height,
    )?;
    let traj = make_trajectory(kind, frames, step, &intr)?;
    let seq = render_sequence(&scene, &traj)?;
    write_sequence(&args.out, &seq)?;
    println!(
        "rendered {} frames at {}x{} to {}",
        seq.len(),
        args.width,
        args.height,
        args.out.display()
    );
    Ok(())
}

fn cmd_curate(args: CurateArgs) -> Result<()> {
    let span_mode = match args.span_mode.as_str() {
        "above" => SpanMode::KeepAbove,
        "below" => SpanMode::KeepBelow,
        other => {
            return Err(Error::InvalidConfig(format!(
                "span-mode must be above|below, got {other}"
            )))
        }
    };
    let cfg = CurationConfig {
        min_frames_a: args.min_frames,
        min_frames_b: args.min_frames,
        gamma: args.gamma,
        span_threshold: args.span_threshold,
        span_mode,
    };
    let mut clips = Vec::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&args.clips)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let traj = Trajectory::load(&path)?;
        clips.push(ClipRecord::new(id, traj));
    }
    let report = curate(&clips, &cfg, None)?;
    std::fs::write(&args.report, serde_json::to_string_pretty(&report)?)?;
    println!(
        "curated {} clips: kept {}, dropped {}",
        clips.len(),
        report.kept.len(),
        report.dropped.len()
    );
    Ok(())
}

fn write_loss_csv(path: &PathBuf, result: &TrainResult) -> Result<()> {
    let mut csv = String::from("step,loss\n");
    for (step, loss) in result.loss_trace.iter().enumerate() {
        csv.push_str(&format!("{step},{loss}\n"));
    }
    std::fs::write(path, csv)?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    let setup = cfg.train_setup()?;
    let dataset = Dataset::render(&cfg.dataset)?;
    let mut train_cfg = cfg.training.clone();
    if train_cfg.log_every == 0 {
        train_cfg.log_every = 100;
    }
    let result = match args.stage {
        1 => train_stage1(&setup, &train_cfg, &dataset)?,
        2 => {
            let stage1_path = args.stage1_ckpt.as_ref().ok_or_else(|| {
                Error::InvalidConfig("stage 2 needs --stage1-ckpt".into())
            })?;
            let (params, _) = load_checkpoint(stage1_path)?;
            train_stage2(&setup, &train_cfg, &dataset, params)?
        }
        other => {
            return Err(Error::InvalidConfig(format!("stage must be 1 or 2, got {other}")))
        }
    };
    let extra = CheckpointExtra {
        codec: cfg.codec,
        schedule: cfg.schedule,
        depth_divisor: dataset.depth_divisor,
        stage: args.stage,
        x_token_dropout: cfg.training.x_token_dropout,
    };
    save_checkpoint(&result.params, serde_json::to_value(&extra)?, &args.out)?;
    let csv_path = args.out.with_extension("loss.csv");
    write_loss_csv(&csv_path, &result)?;
    println!(
        "stage {} done: {} steps, final loss {:.6}, checkpoint {}",
        args.stage,
        result.loss_trace.len(),
        result.loss_trace.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let (params, extra_value) = load_checkpoint(&args.ckpt)?;
    let extra: CheckpointExtra = serde_json::from_value(extra_value)?;
    let sched = make_schedule(
        extra.schedule.steps,
        extra.schedule.beta_start,
        extra.schedule.beta_end,
    )?;

    let rgb_t = read_tensor(&args.image)?;
    let dims = rgb_t.dims().to_vec();
    if dims.len() != 3 || dims[2] != 3 {
        return Err(Error::shape(format!("--image must be h x w x 3, got {dims:?}")));
    }
    let (h, w) = (dims[0], dims[1]);
    let depth_t = read_tensor(&args.depth)?;
    if depth_t.dims() != [h, w] {
        return Err(Error::shape(format!(
            "--depth dims {:?} do not match image {h}x{w}",
            depth_t.dims()
        )));
    }
    let first = RgbdFrame {
        rgb: RgbImage::new(rgb_t.into_data(), h, w)?,
        depth: DepthMap::new(depth_t.into_data(), h, w)?,
    };
    let traj = Trajectory::load(&args.traj)?;

    let seq = generate_sequence(
        &params,
        &sched,
        &extra.codec,
        &first,
        &traj,
        extra.depth_divisor,
        args.seed,
        args.steps,
        extra.x_token_dropout > 0.0,
    )?;
    write_sequence(&args.out, &seq)?;
    match fuse(&seq, 1, 2, extra.depth_divisor) {
        Ok(cloud) => {
            export_ply(&cloud, &args.out.join("preview.ply"))?;
            println!(
                "generated {} frames to {} ({} preview points)",
                seq.len(),
                args.out.display(),
                cloud.len()
            );
        }
        Err(Error::EmptyPointCloud) => {
            eprintln!("idc: no preview points (generated depth all out of range)");
            println!("generated {} frames to {}", seq.len(), args.out.display());
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct EvalReport {
    psnr: Option<f64>,
    ssim: f64,
    r_err: f64,
    t_err: f64,
    depth_consistency: DepthReport,
}

#[derive(serde::Serialize)]
struct DepthReport {
    mean_residual: f64,
    inlier_frac: f64,
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let pred = read_sequence(&args.pred)?;
    let gt = read_sequence(&args.gt)?;
    if pred.len() != gt.len() {
        return Err(Error::TrajectoryLengthMismatch { a: pred.len(), b: gt.len() });
    }
    let mut pred_rgb = Vec::new();
    let mut gt_rgb = Vec::new();
    for (p, g) in pred.frames.iter().zip(&gt.frames) {
        pred_rgb.extend_from_slice(p.rgb.data());
        gt_rgb.extend_from_slice(g.rgb.data());
    }
    let psnr_db = psnr(&pred_rgb, &gt_rgb)?;
    let mut ssim_acc = 0.0;
    for (p, g) in pred.frames.iter().zip(&gt.frames) {
        ssim_acc += ssim(
            p.rgb.data(),
            g.rgb.data(),
            p.rgb.height(),
            p.rgb.width(),
            3,
        )?;
    }
    let ssim_mean = ssim_acc / pred.len() as f64;
    let pose = pose_error(&pred.trajectory, &gt.trajectory)?;
    let depth = depth_consistency(&pred)?;
    let report = EvalReport {
        psnr: psnr_db.is_finite().then_some(psnr_db),
        ssim: ssim_mean,
        r_err: pose.r_err,
        t_err: pose.t_err,
        depth_consistency: DepthReport {
            mean_residual: depth.mean_residual,
            inlier_frac: depth.inlier_frac,
        },
    };
    std::fs::write(&args.report, serde_json::to_string_pretty(&report)?)?;
    println!(
        "psnr {} ssim {:.4} r_err {:.5} t_err {:.5} depth inliers {:.1}%",
        report
            .psnr
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "inf".into()),
        report.ssim,
        report.r_err,
        report.t_err,
        100.0 * report.depth_consistency.inlier_frac
    );
    Ok(())
}

fn cmd_fuse(args: FuseArgs) -> Result<()> {
    let mut seq = read_sequence(&args.seq)?;
    if let Some(traj_path) = &args.traj {
        let traj = Trajectory::load(traj_path)?;
        if traj.len() != seq.len() {
            return Err(Error::TrajectoryLengthMismatch { a: traj.len(), b: seq.len() });
        }
        seq.trajectory = traj;
    }
    let max_depth = args.max_depth.unwrap_or(seq.depth_divisor);
    let cloud = fuse(&seq, args.stride, args.pixel_stride, max_depth)?;
    export_ply(&cloud, &args.out)?;
    println!("fused {} points to {}", cloud.len(), args.out.display());
    Ok(())
}

fn cmd_reproject_check(args: ReprojectArgs) -> Result<()> {
    let seq = read_sequence(&args.seq)?;
    let report = depth_consistency(&seq)?;
    for pair in &report.pairs {
        println!(
            "frames {}->{}: mean residual {:.6}, inliers {:.1}% over {} px",
            pair.src_frame,
            pair.dst_frame,
            pair.mean_abs_residual,
            100.0 * pair.inlier_frac,
            pair.compared_pixels
        );
    }
    println!(
        "overall: mean residual {:.6}, inliers {:.1}%",
        report.mean_residual,
        100.0 * report.inlier_frac
    );
    if let Some(path) = &args.report {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}
