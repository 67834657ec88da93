//! Command-line surface for the oriented-box toolkit.
//!
//! Boxes are given as `x,y,w,h,theta_deg`; angles are degrees at this
//! boundary and radians inside the library. Exit codes: 0 success,
//! 2 validation error, 1 runtime error.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use obbkit::dotaio::{
    class_map, load_ground_truth_dir, merge_patch_detections, parse_detection_lines,
    parse_detections, tile_windows, format_detection_lines, TileWindow,
};
use obbkit::evalkit::{evaluate, rotated_nms, Detection};
use obbkit::fitkit::{boundary_sweep, fit, sweep_csv, trace_csv, FitConfig, LossKind};
use obbkit::geom::{acm_points, Obb, Point};
use obbkit::piou::{piou, PiouConfig};
use obbkit::polyclip::iou_exact;

#[derive(Parser)]
#[command(name = "obbkit", about = "Oriented bounding box toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct PiouArgs {
    /// Kernel steepness.
    #[arg(long, default_value_t = 10.0)]
    k: f64,
    /// Subpixel samples per pixel per axis.
    #[arg(long, default_value_t = 2)]
    resolution: u32,
    /// Lattice margin in pixels.
    #[arg(long, default_value_t = 2.0)]
    margin: f64,
    /// Lower IoU clamp for the log loss.
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
}

impl PiouArgs {
    fn to_config(self) -> PiouConfig {
        PiouConfig {
            k: self.k,
            resolution: self.resolution,
            margin: self.margin,
            eps: self.eps,
            ..PiouConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Exact and pixel-approximate IoU of two boxes.
    Iou {
        /// Box as x,y,w,h,theta_deg; give exactly twice.
        #[arg(long = "box", num_args = 1, required = true)]
        boxes: Vec<String>,
        #[command(flatten)]
        piou: PiouArgs,
    },
    /// VOC2007 per-class AP and mAP over DOTA-format directories.
    Eval {
        /// Directory of per-image ground-truth files.
        #[arg(long)]
        gt: PathBuf,
        /// Directory of per-class Task1_{class}.txt detection files.
        #[arg(long)]
        det: PathBuf,
        #[arg(long = "iou-thr", default_value_t = 0.5)]
        iou_thr: f64,
    },
    /// Greedy rotated NMS over one Task1-format detection file.
    Nms {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        tau: f64,
    },
    /// Gradient-descent fit of an initial box to a target box.
    Fit {
        #[arg(long, value_parser = parse_loss)]
        loss: LossKind,
        #[arg(long, value_parser = parse_box)]
        gt: Obb,
        #[arg(long, value_parser = parse_box)]
        init: Obb,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        /// Recorded in the trace config; the descent itself is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Alternate the smooth-L1 target between its two equivalent
        /// encodings per step.
        #[arg(long, default_value_t = false)]
        ambiguous_target: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        piou: PiouArgs,
    },
    /// Both losses over a 1-degree angle sweep around a target box.
    Sweep {
        #[arg(long, value_parser = parse_box)]
        gt: Obb,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        piou: PiouArgs,
    },
    /// Tiling windows for an image size.
    Tile {
        #[arg(long)]
        width: u32,
        #[arg(long)]
        height: u32,
        #[arg(long, default_value_t = 1024)]
        patch: u32,
        #[arg(long, default_value_t = 824)]
        stride: u32,
    },
    /// Merge per-window detections into source-image coordinates.
    Merge {
        /// Text file with one window per line: x0 y0 width height.
        #[arg(long)]
        windows: PathBuf,
        /// Directory holding win{i}/Task1_{class}.txt per window.
        #[arg(long)]
        dets: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        tau: f64,
    },
    /// Nine sampling points and kernel offsets for a box.
    Acm {
        #[arg(long = "box", value_parser = parse_box)]
        obb: Obb,
        /// Sampling location as x,y.
        #[arg(long, value_parser = parse_point)]
        loc: Point,
        #[arg(long, default_value_t = 1.0)]
        stride: f64,
    },
}

#[derive(Debug)]
enum CliError {
    /// Bad input; exit code 2.
    Usage(String),
    /// Failure while running; exit code 1.
    Runtime(String),
}

fn usage<E: std::fmt::Display>(flag: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Usage(format!("--{flag}: {e}"))
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn parse_box(s: &str) -> Result<Obb, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 5 {
        return Err(format!("expected x,y,w,h,theta_deg, got {s:?}"));
    }
    let mut v = [0.0f64; 5];
    for (i, p) in parts.iter().enumerate() {
        v[i] = p
            .trim()
            .parse()
            .map_err(|_| format!("bad number {p:?} in box {s:?}"))?;
    }
    Obb::new(v[0], v[1], v[2], v[3], v[4].to_radians()).map_err(|e| e.to_string())
}

fn parse_point(s: &str) -> Result<Point, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected x,y, got {s:?}"));
    }
    let x = parts[0].trim().parse().map_err(|_| format!("bad number {:?}", parts[0]))?;
    let y = parts[1].trim().parse().map_err(|_| format!("bad number {:?}", parts[1]))?;
    Ok(Point::new(x, y))
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    match s {
        "piou" => Ok(LossKind::Piou),
        "smoothl1" | "smooth_l1" => Ok(LossKind::SmoothL1),
        other => Err(format!("expected piou or smoothl1, got {other:?}")),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Iou { boxes, piou: piou_args } => {
            if boxes.len() != 2 {
                return Err(CliError::Usage(format!(
                    "--box: expected exactly 2 boxes, got {}",
                    boxes.len()
                )));
            }
            let a = parse_box(&boxes[0]).map_err(usage("box"))?;
            let b = parse_box(&boxes[1]).map_err(usage("box"))?;
            let cfg = piou_args.to_config();
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let approx = piou(&a, &b, &cfg).map_err(runtime)?;
            println!("exact: {:.4}", iou_exact(&a, &b));
            println!("piou: {approx:.4}");
        }
        Command::Eval { gt, det, iou_thr } => {
            if !(iou_thr > 0.0 && iou_thr < 1.0) {
                return Err(CliError::Usage(format!(
                    "--iou-thr: must lie in (0, 1), got {iou_thr}"
                )));
            }
            // Class universe: detection file names plus annotation class
            // names, sorted for a deterministic id assignment.
            let mut names: Vec<String> = Vec::new();
            for entry in fs::read_dir(&det).map_err(runtime)? {
                let name = entry.map_err(runtime)?.file_name();
                let name = name.to_string_lossy();
                if let Some(class) = name
                    .strip_prefix("Task1_")
                    .and_then(|s| s.strip_suffix(".txt"))
                {
                    names.push(class.to_string());
                }
            }
            for entry in fs::read_dir(&gt).map_err(runtime)? {
                let path = entry.map_err(runtime)?.path();
                if path.extension().map_or(false, |e| e == "txt") {
                    let text = fs::read_to_string(&path).map_err(runtime)?;
                    let ann = obbkit::dotaio::parse_annotations("", &text).map_err(runtime)?;
                    names.extend(ann.objects.into_iter().map(|o| o.class_name));
                }
            }
            let (class_names, ids) = class_map(names);
            let gts = load_ground_truth_dir(&gt, &ids).map_err(runtime)?;
            let dets = parse_detections(&det, &class_names).map_err(runtime)?;
            let report = evaluate(&dets, &gts, class_names.len(), iou_thr).map_err(runtime)?;
            for (name, class) in class_names.iter().zip(&report.per_class) {
                println!("{name} {:.4}", class.ap);
            }
            println!("mAP: {:.4}", report.map);
        }
        Command::Nms { input, tau } => {
            if !(0.0..=1.0).contains(&tau) {
                return Err(CliError::Usage(format!("--tau: must lie in [0, 1], got {tau}")));
            }
            let text = fs::read_to_string(&input).map_err(runtime)?;
            let dets = parse_detection_lines(&text, 0).map_err(runtime)?;
            // Task1 files mix images; suppress per image.
            let mut by_image: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
            for d in dets {
                by_image.entry(d.image_id.clone()).or_default().push(d);
            }
            for (_, group) in by_image {
                print!("{}", format_detection_lines(&rotated_nms(&group, tau)));
            }
        }
        Command::Fit { loss, gt, init, steps, seed, ambiguous_target, out, piou: piou_args } => {
            if steps == 0 {
                return Err(CliError::Usage("--steps: must be at least 1".into()));
            }
            let cfg = FitConfig {
                loss,
                max_steps: steps,
                seed,
                ambiguous_target,
                piou: piou_args.to_config(),
                ..FitConfig::default()
            };
            let trace = fit(&gt, &init, &cfg).map_err(runtime)?;
            fs::write(&out, trace_csv(&trace)).map_err(runtime)?;
            println!(
                "converged: {} steps: {} final_iou: {:.4} angle_error_deg: {:.4}",
                trace.converged,
                trace.steps.len() - 1,
                trace.final_iou,
                trace.angle_error.to_degrees()
            );
        }
        Command::Sweep { gt, out, piou: piou_args } => {
            let angles: Vec<f64> = (0..360).map(|d| (d as f64).to_radians()).collect();
            let rows =
                boundary_sweep(&gt, &angles, &piou_args.to_config(), 1.0).map_err(runtime)?;
            fs::write(&out, sweep_csv(&rows)).map_err(runtime)?;
            println!("wrote {} rows", rows.len());
        }
        Command::Tile { width, height, patch, stride } => {
            let windows = tile_windows(width, height, patch, stride)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            for w in &windows {
                println!("{} {} {} {}", w.x0, w.y0, w.width, w.height);
            }
            println!("windows: {}", windows.len());
        }
        Command::Merge { windows, dets, tau } => {
            if !(0.0..=1.0).contains(&tau) {
                return Err(CliError::Usage(format!("--tau: must lie in [0, 1], got {tau}")));
            }
            let text = fs::read_to_string(&windows).map_err(runtime)?;
            let mut wins: Vec<TileWindow> = Vec::new();
            for (idx, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() {
                    continue;
                }
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() != 4 {
                    return Err(CliError::Usage(format!(
                        "--windows: line {} must hold x0 y0 width height",
                        idx + 1
                    )));
                }
                let mut v = [0u32; 4];
                for (i, t) in toks.iter().enumerate() {
                    v[i] = t.parse().map_err(|_| {
                        CliError::Usage(format!("--windows: bad number {t:?} on line {}", idx + 1))
                    })?;
                }
                wins.push(TileWindow { x0: v[0], y0: v[1], width: v[2], height: v[3] });
            }
            // Discover class names across all window subdirectories.
            let mut names: Vec<String> = Vec::new();
            for i in 0..wins.len() {
                let dir = dets.join(format!("win{i}"));
                if !dir.is_dir() {
                    continue;
                }
                for entry in fs::read_dir(&dir).map_err(runtime)? {
                    let name = entry.map_err(runtime)?.file_name();
                    if let Some(class) = name
                        .to_string_lossy()
                        .strip_prefix("Task1_")
                        .and_then(|s| s.strip_suffix(".txt"))
                    {
                        names.push(class.to_string());
                    }
                }
            }
            let (class_names, _) = class_map(names);
            let mut per_window: Vec<Vec<Detection>> = Vec::with_capacity(wins.len());
            for i in 0..wins.len() {
                let dir = dets.join(format!("win{i}"));
                if dir.is_dir() {
                    per_window.push(parse_detections(&dir, &class_names).map_err(runtime)?);
                } else {
                    per_window.push(Vec::new());
                }
            }
            let merged = merge_patch_detections(&per_window, &wins, tau).map_err(runtime)?;
            for (class_id, name) in class_names.iter().enumerate() {
                let class_dets: Vec<Detection> = merged
                    .iter()
                    .filter(|d| d.class_id == class_id)
                    .cloned()
                    .collect();
                for line in format_detection_lines(&class_dets).lines() {
                    println!("{name} {line}");
                }
            }
        }
        Command::Acm { obb, loc, stride } => {
            if !(stride > 0.0) {
                return Err(CliError::Usage(format!("--stride: must be positive, got {stride}")));
            }
            let set = acm_points(&obb, loc, stride);
            for (p, o) in set.points.iter().zip(&set.offsets) {
                println!("point {:.4} {:.4} offset {:.4} {:.4}", p.x, p.y, o.x, o.y);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
