use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const CALIB: &str = "P0: 721.5377 0 609.5593 0 0 721.5377 172.854 0 0 0 1 0
P1: 721.5377 0 609.5593 -387.5744 0 721.5377 172.854 0 0 0 1 0
P2: 721.5377 0 609.5593 44.85728 0 721.5377 172.854 0.2163791 0 0 1 0.002745884
P3: 721.5377 0 609.5593 -339.5242 0 721.5377 172.854 2.199936 0 0 1 0.002729905
R0_rect: 0.9999239 0.00983776 -0.007445048 -0.009869795 0.9999421 -0.004278459 0.007402527 0.004351614 0.9999631
Tr_velo_to_cam: 0.007533745 -0.9999714 -0.000616602 -0.004069766 0.01480249 0.9998902 -0.9998621 0.007523790 0.01480755 -0.2717806
Tr_imu_to_velo: 0.9999976 0.0007553071 -0.002035826 -0.8086759 -0.0007854027 0.9998898 -0.01482298 0.3195559 0.002024406 0.01482454 0.9998881 -0.7997231
";

// One object per difficulty tier, one too small for any tier, and a DontCare
// region.
const LABELS: &str = "Car 0.00 0 -1.58 587.01 173.33 614.12 215.00 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59
Car 0.00 0 1.85 387.63 181.54 423.81 203.12 1.67 1.87 3.69 -16.53 2.39 58.49 1.57
Car 0.10 1 -1.95 100.00 150.00 180.00 178.00 1.50 1.60 3.90 -20.00 1.65 30.00 -2.50
Car 0.40 2 1.20 700.00 160.00 760.00 190.00 1.50 1.60 3.90 5.00 1.65 25.00 1.40
DontCare -1 -1 -10 800.00 160.00 850.00 190.00 -1 -1 -1 -1000 -1000 -1000 -10
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mono3d")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn as_detections(labels: &str) -> String {
    labels.lines().filter(|l| !l.starts_with("DontCare")).map(|l| format!("{l} 0.95\n")).collect()
}

fn dataset() -> TempDir {
    let dir = TempDir::new().unwrap();
    for sub in ["label", "det", "calib"] {
        fs::create_dir(dir.path().join(sub)).unwrap();
    }
    for frame in ["000000", "000001"] {
        fs::write(dir.path().join("label").join(format!("{frame}.txt")), LABELS).unwrap();
        fs::write(dir.path().join("det").join(format!("{frame}.txt")), as_detections(LABELS)).unwrap();
        fs::write(dir.path().join("calib").join(format!("{frame}.txt")), CALIB).unwrap();
    }
    dir
}

fn p(dir: &Path, sub: &str) -> String {
    dir.join(sub).to_string_lossy().into_owned()
}

#[test]
fn eval_ground_truth_as_detections_is_perfect() {
    let d = dataset();
    let csv = p(d.path(), "ap.csv");
    for mode in ["bev", "3d"] {
        let o = run(&[
            "eval",
            "--gt-dir",
            &p(d.path(), "label"),
            "--det-dir",
            &p(d.path(), "det"),
            "--mode",
            mode,
            "--csv",
            &csv,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let out = stdout(&o);
        for tier in ["easy", "moderate", "hard"] {
            let line = out.lines().find(|l| l.split_whitespace().nth(1) == Some(tier)).expect(tier);
            assert!(line.ends_with("100.00"), "{line}");
        }
        let table = fs::read_to_string(&csv).unwrap();
        let mut rows = table.lines();
        assert_eq!(rows.next(), Some("class,difficulty,mode,iou_threshold,interpolation,ap,num_gt,num_tp,num_fp"));
        let easy: Vec<&str> = rows.next().unwrap().split(',').collect();
        assert_eq!(easy[..6], ["Car", "easy", mode, "0.700000", "40", "1.000000"]);
        assert_eq!(easy[6..], ["2", "2", "0"]);
    }
}

#[test]
fn eval_reports_na_for_absent_class() {
    let d = dataset();
    let o = run(&["eval", "--gt-dir", &p(d.path(), "label"), "--det-dir", &p(d.path(), "det"), "--class", "Cyclist"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().skip(1).all(|l| l.ends_with("n/a")), "{}", stdout(&o));
}

#[test]
fn eval_warns_on_unpaired_frames() {
    let d = dataset();
    fs::remove_file(d.path().join("det").join("000001.txt")).unwrap();
    fs::write(d.path().join("det").join("000009.txt"), "").unwrap();
    let o = run(&["eval", "--gt-dir", &p(d.path(), "label"), "--det-dir", &p(d.path(), "det")]);
    assert!(o.status.success());
    let err = stderr(&o);
    assert!(err.contains("000001") && err.contains("000009"), "{err}");
}

#[test]
fn nms_on_empty_file_writes_empty_file() {
    let d = TempDir::new().unwrap();
    let (input, output) = (p(d.path(), "in.txt"), p(d.path(), "out.txt"));
    fs::write(&input, "").unwrap();
    let o = run(&["nms", "--input", &input, "--output", &output]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&output).unwrap(), "");
}

#[test]
fn nms_is_deterministic_over_directories() {
    let d = dataset();
    let mut dets = as_detections(LABELS);
    // Near-duplicates of the first box with lower scores.
    dets.push_str("Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.55 1.71 46.90 -1.59 0.80\n");
    dets.push_str("Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.75 1.71 46.50 -1.55 0.70\n");
    fs::write(d.path().join("det").join("000000.txt"), &dets).unwrap();
    let mut outputs = Vec::new();
    for run_id in ["a", "b"] {
        let out = p(d.path(), run_id);
        let o = run(&["nms", "--input", &p(d.path(), "det"), "--output", &out]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(fs::read(d.path().join(run_id).join("000000.txt")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    assert_eq!(text.lines().count(), 6);
    let scores: Vec<f64> = text.lines().map(|l| l.split_whitespace().last().unwrap().parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{scores:?}");
}

#[test]
fn loss_landscape_columns() {
    let o = run(&["loss-landscape"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let rows: Vec<Vec<&str>> = out.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["theta_deg", "theta_rad", "iou_heading_flip", "loss_naive", "loss_second", "loss_mds"]);
    assert_eq!(rows.len(), 92);
    assert_eq!(rows[1][5], "0.000000");
    assert_eq!(rows[1][2], "1.000000");
    assert_eq!(rows[46][0], "45.000000");
    assert_eq!(rows[46][5], "1.000000");
    assert_eq!(rows[91][5], "0.000000");
    assert_eq!(out, stdout(&run(&["loss-landscape"])));
}

#[test]
fn stratify_and_depth_error_emit_csv() {
    let d = dataset();
    let o = run(&["stratify", "--label-dir", &p(d.path(), "label"), "--calib-dir", &p(d.path(), "calib")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("level,stride,z_min,z_max,objects\n0,8,5.000000,20.000000,0\n"), "{out}");
    assert!(out.contains("kind,h_2d,z\nscatter,"));

    let csv = p(d.path(), "depth.csv");
    let o = run(&["depth-error", "--gt-dir", &p(d.path(), "label"), "--det-dir", &p(d.path(), "det"), "--out", &csv]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "bin_lo,bin_hi,count,mean_abs_error");
    assert_eq!(lines.len(), 9);
    assert_eq!(lines[3], "20.000000,30.000000,2,0.000000");
    assert!(stderr(&o).contains("matched 8, unmatched 0"));
}

#[test]
fn missing_directory_fails() {
    let o = run(&["eval", "--gt-dir", "/nonexistent/labels", "--det-dir", "/nonexistent/dets"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/labels"));
}

#[test]
fn malformed_file_names_file_and_line() {
    let d = dataset();
    let bad = d.path().join("label").join("000001.txt");
    fs::write(&bad, format!("{}Car 0.0 0 oops\n", LABELS.lines().next().unwrap().to_owned() + "\n")).unwrap();
    let o = run(&["eval", "--gt-dir", &p(d.path(), "label"), "--det-dir", &p(d.path(), "det")]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("000001.txt") && err.contains("line 2"), "{err}");
}

#[test]
fn bad_flags_exit_with_usage_error() {
    assert_eq!(run(&["eval", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["loss-landscape", "--steps", "1"]).status.code(), Some(1));
}
