//! The `mono3d` command line.
//!
//! Frames are paired across directories by file stem (`000123.txt`). Output
//! order is sorted by frame id, and every CSV starts with a header row.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::eval::{
    classify_difficulty, depth_error_report, evaluate_ap, Difficulty, EvalConfig, Interpolation, IouMode,
    DEFAULT_DEPTH_MATCH_IOU,
};
use crate::geometry::BevPolygon;
use crate::kitti_io::{
    parse_calib_file, parse_detection_file, parse_label_file, write_detection_file, CameraCalib, Detection,
    GroundTruthObject,
};
use crate::losses::{angle_loss_mds, angle_loss_naive, angle_loss_second};
use crate::nms::{pipeline, NmsParams};
use crate::stratify::{default_config, fit_curve_points};

#[derive(Debug, Parser)]
#[command(name = "mono3d", version, about = "Monocular 3D detection toolkit for KITTI-format data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Average precision per difficulty tier.
    ///
    /// CSV columns: class,difficulty,mode,iou_threshold,interpolation,ap,num_gt,num_tp,num_fp
    /// (ap is NA when no ground truth counts for the tier).
    Eval(EvalArgs),
    /// Soft-NMS with density activation on KITTI result files.
    Nms(NmsArgs),
    /// Depth-level histogram and depth/2D-height statistics.
    ///
    /// CSV columns: kind,h_2d,z where kind is "scatter" or "curve".
    Stratify(StratifyArgs),
    /// Mean absolute depth error in 10 m bins.
    ///
    /// CSV columns: bin_lo,bin_hi,count,mean_abs_error (empty when count is 0).
    DepthError(DepthErrorArgs),
    /// Angle losses and BEV IoU under a flipped heading, per angle offset.
    ///
    /// CSV columns: theta_deg,theta_rad,iou_heading_flip,loss_naive,loss_second,loss_mds.
    /// Each row compares a ground-truth offset theta with a prediction of the
    /// same offset but opposite heading.
    LossLandscape(LossLandscapeArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt_dir: PathBuf,
    #[arg(long)]
    pub det_dir: PathBuf,
    /// Class to evaluate; repeat for several classes.
    #[arg(long = "class", default_value = "Car")]
    pub classes: Vec<String>,
    #[arg(long, default_value_t = 0.7)]
    pub iou: f64,
    /// bev or 3d
    #[arg(long, default_value = "bev")]
    pub mode: IouMode,
    /// 40 or 11 recall positions
    #[arg(long, default_value = "40")]
    pub interp: Interpolation,
    /// Machine-readable results.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NmsArgs {
    /// Detection file or directory of detection files.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file, or directory when the input is a directory.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub sigma: f64,
    #[arg(long, default_value_t = 20.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.01)]
    pub score_floor: f64,
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StratifyArgs {
    #[arg(long)]
    pub label_dir: PathBuf,
    #[arg(long)]
    pub calib_dir: PathBuf,
    #[arg(long = "class", default_value = "Car")]
    pub class_name: String,
    /// Keep objects up to this tier (easy, moderate, hard); all if omitted.
    #[arg(long)]
    pub difficulty: Option<String>,
    /// Scatter/curve CSV; printed to stdout after the histogram if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DepthErrorArgs {
    #[arg(long)]
    pub gt_dir: PathBuf,
    #[arg(long)]
    pub det_dir: PathBuf,
    #[arg(long = "class", default_value = "Car")]
    pub class_name: String,
    /// Minimum BEV IoU for a detection to count as the best prediction.
    #[arg(long, default_value_t = DEFAULT_DEPTH_MATCH_IOU)]
    pub iou: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossLandscapeArgs {
    /// Number of offsets sampled uniformly over [0, 90] degrees.
    #[arg(long, default_value_t = 91)]
    pub steps: usize,
    #[arg(long, default_value_t = 1.6)]
    pub width: f64,
    #[arg(long, default_value_t = 3.9)]
    pub length: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(&cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

pub fn execute(command: &Command, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    match command {
        Command::Eval(a) => run_eval(a, out, err),
        Command::Nms(a) => run_nms(a, out, err),
        Command::Stratify(a) => run_stratify(a, out, err),
        Command::DepthError(a) => run_depth_error(a, out, err),
        Command::LossLandscape(a) => run_loss_landscape(a, out),
    }
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// `.txt` files of a directory keyed by stem.
fn list_frames(dir: &Path) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).with_context(|| format!("cannot read directory {}", dir.display()))?;
    let mut frames = BTreeMap::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                frames.insert(stem.to_string(), path);
            }
        }
    }
    Ok(frames)
}

fn load<T>(path: &Path, parse: fn(&str) -> crate::Result<T>) -> anyhow::Result<T> {
    parse(&read_text(path)?).map_err(|e| anyhow!("{}: {e}", path.display()))
}

type PairedFrames = (Vec<String>, Vec<Vec<GroundTruthObject>>, Vec<Vec<Detection>>);

/// Loads every ground-truth frame and its detections. Missing detection files
/// count as empty; detection files without ground truth are skipped.
fn load_pairs(gt_dir: &Path, det_dir: &Path, err: &mut dyn Write) -> anyhow::Result<PairedFrames> {
    let gt_frames = list_frames(gt_dir)?;
    let det_frames = list_frames(det_dir)?;
    for stem in det_frames.keys().filter(|s| !gt_frames.contains_key(*s)) {
        writeln!(err, "warning: detections for frame {stem} have no ground truth; skipped")?;
    }
    let (mut ids, mut gts, mut dets) = (Vec::new(), Vec::new(), Vec::new());
    for (stem, gt_path) in &gt_frames {
        gts.push(load(gt_path, parse_label_file)?);
        dets.push(match det_frames.get(stem) {
            Some(p) => load(p, parse_detection_file)?,
            None => {
                writeln!(err, "warning: no detection file for frame {stem}; treated as empty")?;
                Vec::new()
            }
        });
        ids.push(stem.clone());
    }
    Ok((ids, gts, dets))
}

fn run_eval(a: &EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    if !(a.iou > 0.0 && a.iou < 1.0) {
        bail!("--iou must lie in (0, 1), got {}", a.iou);
    }
    let (_, gts, dets) = load_pairs(&a.gt_dir, &a.det_dir, err)?;
    let mode = match a.mode {
        IouMode::Bev => "bev",
        IouMode::ThreeD => "3d",
    };
    let interp = match a.interp {
        Interpolation::Forty => 40,
        Interpolation::Eleven => 11,
    };
    let mut csv = String::from("class,difficulty,mode,iou_threshold,interpolation,ap,num_gt,num_tp,num_fp\n");
    writeln!(out, "{:<12} {:<10} AP_{mode}@{:.2} R{interp}", "class", "difficulty", a.iou)?;
    for class in &a.classes {
        for difficulty in Difficulty::EVALUATED {
            let cfg = EvalConfig {
                class_name: class.clone(),
                difficulty,
                iou_threshold: a.iou,
                mode: a.mode,
                interpolation: a.interp,
            };
            let r = evaluate_ap(&gts, &dets, &cfg)?;
            let shown = r.ap.map_or("n/a".to_string(), |ap| format!("{:.2}", 100.0 * ap));
            writeln!(out, "{class:<12} {:<10} {shown}", difficulty.name())?;
            let ap = r.ap.map_or("NA".to_string(), |ap| format!("{ap:.6}"));
            csv.push_str(&format!(
                "{class},{},{mode},{:.6},{interp},{ap},{},{},{}\n",
                difficulty.name(),
                a.iou,
                r.num_gt,
                r.num_tp,
                r.num_fp
            ));
        }
    }
    if let Some(path) = &a.csv {
        fs::write(path, csv).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn run_nms(a: &NmsArgs, out: &mut dyn Write, _err: &mut dyn Write) -> anyhow::Result<()> {
    if !(a.sigma > 0.0 && a.gamma > 0.0) {
        bail!("--sigma and --gamma must be positive");
    }
    let params = NmsParams { sigma: a.sigma, gamma: a.gamma, score_floor: a.score_floor, top_k: a.top_k };
    let filter = |input: &Path, output: &Path| -> anyhow::Result<(usize, usize)> {
        let dets = load(input, parse_detection_file)?;
        let kept = pipeline(&dets, &params);
        fs::write(output, write_detection_file(&kept)).with_context(|| format!("cannot write {}", output.display()))?;
        Ok((dets.len(), kept.len()))
    };
    let (mut before, mut after, mut files) = (0, 0, 0);
    if a.input.is_dir() {
        fs::create_dir_all(&a.output).with_context(|| format!("cannot create {}", a.output.display()))?;
        for (_, path) in list_frames(&a.input)? {
            let (b, k) = filter(&path, &a.output.join(path.file_name().expect("listed file")))?;
            before += b;
            after += k;
            files += 1;
        }
    } else {
        let (b, k) = filter(&a.input, &a.output)?;
        (before, after, files) = (b, k, 1);
    }
    writeln!(out, "frames {files}, detections in {before}, out {after}")?;
    Ok(())
}

fn parse_difficulty(s: &str) -> anyhow::Result<Difficulty> {
    match s.to_ascii_lowercase().as_str() {
        "easy" => Ok(Difficulty::Easy),
        "moderate" => Ok(Difficulty::Moderate),
        "hard" => Ok(Difficulty::Hard),
        other => bail!("unknown difficulty {other:?}"),
    }
}

fn run_stratify(a: &StratifyArgs, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    let max_difficulty = a.difficulty.as_deref().map(parse_difficulty).transpose()?;
    let labels = list_frames(&a.label_dir)?;
    let calibs = list_frames(&a.calib_dir)?;
    let config = default_config();
    let mut samples: Vec<(GroundTruthObject, CameraCalib)> = Vec::new();
    for (stem, path) in &labels {
        let Some(calib_path) = calibs.get(stem) else {
            writeln!(err, "warning: no calibration for frame {stem}; skipped")?;
            continue;
        };
        let calib = load(calib_path, parse_calib_file)?;
        for o in load(path, parse_label_file)? {
            if o.class_name != a.class_name {
                continue;
            }
            if max_difficulty.is_some_and(|d| classify_difficulty(&o) > d) {
                continue;
            }
            samples.push((o, calib));
        }
    }
    let mut per_level = vec![0usize; config.levels().len()];
    let mut outside = 0usize;
    for (o, _) in &samples {
        let levels = config.levels_for_depth(o.location.z);
        if levels.is_empty() {
            outside += 1;
        }
        for l in levels {
            per_level[l] += 1;
        }
    }
    writeln!(out, "level,stride,z_min,z_max,objects")?;
    for (l, n) in config.levels().iter().zip(&per_level) {
        writeln!(out, "{},{},{:.6},{:.6},{n}", l.index, l.stride, l.z_min, l.z_max)?;
    }
    writeln!(out, "outside_range,,,,{outside}")?;

    let fit = fit_curve_points(&samples).map_err(|e| anyhow!("{}: {e}", a.class_name))?;
    writeln!(
        out,
        "fit: objects {}, mean_height {:.6}, mean_length {:.6}, median_relative_residual {:.6}",
        fit.scatter.len(),
        fit.mean_height,
        fit.mean_length,
        fit.median_relative_residual()
    )?;
    let mut csv = String::from("kind,h_2d,z\n");
    for (h, z) in &fit.scatter {
        csv.push_str(&format!("scatter,{h:.6},{z:.6}\n"));
    }
    for (h, z) in &fit.curve {
        csv.push_str(&format!("curve,{h:.6},{z:.6}\n"));
    }
    emit(&a.out, &csv, out)
}

fn emit(path: &Option<PathBuf>, csv: &str, out: &mut dyn Write) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, csv).with_context(|| format!("cannot write {}", p.display())),
        None => Ok(out.write_all(csv.as_bytes())?),
    }
}

fn run_depth_error(a: &DepthErrorArgs, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    let (_, gts, dets) = load_pairs(&a.gt_dir, &a.det_dir, err)?;
    let report = depth_error_report(&gts, &dets, Some(&a.class_name), a.iou)?;
    let mut csv = String::from("bin_lo,bin_hi,count,mean_abs_error\n");
    for b in &report.bins {
        let mean = b.mean_abs_error().map_or(String::new(), |m| format!("{m:.6}"));
        csv.push_str(&format!("{:.6},{:.6},{},{mean}\n", b.lo, b.hi, b.count));
    }
    emit(&a.out, &csv, out)?;
    writeln!(
        err,
        "matched {}, unmatched {}, out of range {}",
        report.matched(),
        report.unmatched,
        report.out_of_range
    )?;
    Ok(())
}

fn run_loss_landscape(a: &LossLandscapeArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    if a.steps < 2 {
        bail!("--steps must be at least 2");
    }
    let mut csv = String::from("theta_deg,theta_rad,iou_heading_flip,loss_naive,loss_second,loss_mds\n");
    for i in 0..a.steps {
        let deg = 90.0 * i as f64 / (a.steps - 1) as f64;
        let theta = deg.to_radians();
        // Ground truth beta = theta; the prediction keeps theta but flips the
        // heading bit, i.e. beta_hat = -theta.
        let gt = BevPolygon::rectangle(0.0, 0.0, a.width, a.length, theta)?;
        let pred = BevPolygon::rectangle(0.0, 0.0, a.width, a.length, -theta)?;
        let iou = crate::geometry::bev_iou(&gt, &pred);
        let naive = angle_loss_naive(theta, -theta).value;
        let second = angle_loss_second(theta, -theta).value;
        let mds = angle_loss_mds(theta, theta, 1.0, 0.0).value;
        csv.push_str(&format!("{deg:.6},{theta:.6},{iou:.6},{naive:.6},{second:.6},{mds:.6}\n"));
    }
    emit(&a.out, &csv, out)
}
