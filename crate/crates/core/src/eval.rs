//! KITTI-protocol evaluation: difficulty tiers, greedy matching, AP with
//! 40- or 11-point interpolation, and depth-binned error statistics.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{iou_3d, iou_bev, Box3d};
use crate::kitti_io::{Detection, GroundTruthObject};

/// KITTI difficulty tier. Ordered from easiest to hardest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    Unknown,
}

const MIN_HEIGHT: [f64; 3] = [40.0, 25.0, 25.0];
const MAX_OCCLUSION: [i32; 3] = [0, 1, 2];
const MAX_TRUNCATION: [f64; 3] = [0.15, 0.30, 0.50];

impl Difficulty {
    pub const EVALUATED: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    fn tier(self) -> Option<usize> {
        match self {
            Difficulty::Easy => Some(0),
            Difficulty::Moderate => Some(1),
            Difficulty::Hard => Some(2),
            Difficulty::Unknown => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
            Difficulty::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn meets_tier(gt: &GroundTruthObject, tier: usize) -> bool {
    gt.bbox.height() >= MIN_HEIGHT[tier] && gt.occlusion <= MAX_OCCLUSION[tier] && gt.truncation <= MAX_TRUNCATION[tier]
}

/// Easiest tier whose height, occlusion and truncation limits the object
/// meets; `Unknown` if it meets none.
pub fn classify_difficulty(gt: &GroundTruthObject) -> Difficulty {
    Difficulty::EVALUATED
        .into_iter()
        .find(|d| meets_tier(gt, d.tier().expect("evaluated tier")))
        .unwrap_or(Difficulty::Unknown)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IouMode {
    Bev,
    ThreeD,
}

impl FromStr for IouMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "bev" => Ok(IouMode::Bev),
            "3d" => Ok(IouMode::ThreeD),
            other => Err(format!("unknown IoU mode {other:?} (expected bev or 3d)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    /// Recall positions 1/40, 2/40, ..., 1.
    Forty,
    /// Recall positions 0, 0.1, ..., 1.
    Eleven,
}

impl Interpolation {
    pub fn recall_positions(self) -> Vec<f64> {
        match self {
            Interpolation::Forty => (1..=40).map(|k| k as f64 / 40.0).collect(),
            Interpolation::Eleven => (0..=10).map(|k| k as f64 / 10.0).collect(),
        }
    }
}

impl FromStr for Interpolation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "40" => Ok(Interpolation::Forty),
            "11" => Ok(Interpolation::Eleven),
            other => Err(format!("unknown interpolation {other:?} (expected 40 or 11)")),
        }
    }
}

/// Precision/recall samples, one per distinct score threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<(f64, f64)>,
    pub interpolation: Interpolation,
}

impl PrCurve {
    /// Mean over the recall positions of the best precision reached at or
    /// beyond each position (0 where that recall is never reached).
    pub fn average_precision(&self) -> f64 {
        let positions = self.interpolation.recall_positions();
        let n = positions.len() as f64;
        positions
            .into_iter()
            .map(|r| self.points.iter().filter(|(recall, _)| *recall >= r).map(|(_, p)| *p).fold(0.0, f64::max))
            .sum::<f64>()
            / n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub class_name: String,
    pub difficulty: Difficulty,
    pub iou_threshold: f64,
    pub mode: IouMode,
    pub interpolation: Interpolation,
}

impl EvalConfig {
    pub fn new(class_name: &str, difficulty: Difficulty, iou_threshold: f64, mode: IouMode) -> Self {
        Self {
            class_name: class_name.to_string(),
            difficulty,
            iou_threshold,
            mode,
            interpolation: Interpolation::Forty,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApResult {
    /// `None` when no ground truth counts for the requested class/tier.
    pub ap: Option<f64>,
    pub curve: PrCurve,
    pub num_gt: usize,
    pub num_tp: usize,
    pub num_fp: usize,
}

/// Class whose detections are neither rewarded nor penalized when they hit
/// objects of the evaluated class's neighbor (e.g. a Car detection on a Van).
pub fn neighbor_class(class_name: &str) -> Option<&'static str> {
    match class_name {
        "Car" => Some("Van"),
        "Pedestrian" => Some("Person_sitting"),
        _ => None,
    }
}

fn to_box(o: &GroundTruthObject) -> Box3d {
    Box3d::new(o.location, o.size, o.rotation_y)
}

pub fn box_iou(a: &GroundTruthObject, b: &GroundTruthObject, mode: IouMode) -> f64 {
    match mode {
        IouMode::Bev => iou_bev(&to_box(a), &to_box(b)),
        IouMode::ThreeD => iou_3d(&to_box(a), &to_box(b)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GtRole {
    Valid,
    Ignored,
}

/// Outcome of greedy matching in one frame: `(score, true_positive)` for
/// each counted detection, plus the number of valid ground truths.
pub fn match_frame(gts: &[GroundTruthObject], dets: &[Detection], cfg: &EvalConfig) -> (Vec<(f64, bool)>, usize) {
    let tier = cfg.difficulty.tier();
    let neighbor = neighbor_class(&cfg.class_name);
    let roles: Vec<Option<GtRole>> = gts
        .iter()
        .map(|g| {
            if g.class_name == cfg.class_name {
                let counted = tier.is_some_and(|t| meets_tier(g, t));
                Some(if counted { GtRole::Valid } else { GtRole::Ignored })
            } else if Some(g.class_name.as_str()) == neighbor {
                Some(GtRole::Ignored)
            } else {
                None
            }
        })
        .collect();
    let num_valid = roles.iter().filter(|r| **r == Some(GtRole::Valid)).count();
    let dont_care: Vec<_> = gts.iter().filter(|g| g.is_dont_care()).collect();

    let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].object.class_name == cfg.class_name).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));

    let mut matched = vec![false; gts.len()];
    let mut out = Vec::with_capacity(order.len());
    for i in order {
        let det = &dets[i].object;
        let best_of = |role: GtRole| {
            (0..gts.len())
                .filter(|&g| roles[g] == Some(role) && !matched[g])
                .map(|g| (g, box_iou(det, &gts[g], cfg.mode)))
                .filter(|&(_, iou)| iou >= cfg.iou_threshold)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        };
        if let Some((g, _)) = best_of(GtRole::Valid) {
            matched[g] = true;
            out.push((dets[i].score, true));
        } else if let Some((g, _)) = best_of(GtRole::Ignored) {
            matched[g] = true;
        } else if dont_care.iter().any(|dc| det.bbox.iou(&dc.bbox) > 0.5) {
            // inside an unlabelled region
        } else {
            out.push((dets[i].score, false));
        }
    }
    (out, num_valid)
}

/// Precision/recall curve over ranked `(score, true_positive)` pairs. Equal
/// scores form one threshold, so the curve does not depend on tie order.
pub fn pr_curve(mut scored: Vec<(f64, bool)>, num_gt: usize, interpolation: Interpolation) -> PrCurve {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, &(score, is_tp)) in scored.iter().enumerate() {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let group_end = scored.get(i + 1).is_none_or(|next| next.0 != score);
        if group_end && num_gt > 0 {
            points.push((tp as f64 / num_gt as f64, tp as f64 / (tp + fp) as f64));
        }
    }
    PrCurve { points, interpolation }
}

/// Average precision over a set of frames; `gts[i]` pairs with `dets[i]`.
pub fn evaluate_ap(gts: &[Vec<GroundTruthObject>], dets: &[Vec<Detection>], cfg: &EvalConfig) -> Result<ApResult> {
    if gts.len() != dets.len() {
        return Err(Error::ShapeMismatch { expected: gts.len(), actual: dets.len() });
    }
    let mut scored = Vec::new();
    let mut num_gt = 0;
    for (g, d) in gts.iter().zip(dets) {
        let (s, n) = match_frame(g, d, cfg);
        scored.extend(s);
        num_gt += n;
    }
    let num_tp = scored.iter().filter(|s| s.1).count();
    let num_fp = scored.len() - num_tp;
    let curve = pr_curve(scored, num_gt, cfg.interpolation);
    let ap = (num_gt > 0).then(|| curve.average_precision());
    Ok(ApResult { ap, curve, num_gt, num_tp, num_fp })
}

pub const DEPTH_BIN_WIDTH: f64 = 10.0;
pub const DEPTH_MAX: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthBin {
    pub lo: f64,
    pub hi: f64,
    pub abs_error_sum: f64,
    pub count: usize,
}

impl DepthBin {
    pub fn mean_abs_error(&self) -> Option<f64> {
        (self.count > 0).then(|| self.abs_error_sum / self.count as f64)
    }
}

/// Mean absolute depth error per 10 m ground-truth depth bin over [0, 80].
#[derive(Debug, Clone, PartialEq)]
pub struct DepthErrorReport {
    pub bins: Vec<DepthBin>,
    /// In-range ground truths without a detection above the IoU floor.
    pub unmatched: usize,
    /// Ground truths outside [0, 80] m.
    pub out_of_range: usize,
}

impl DepthErrorReport {
    fn empty() -> Self {
        let n = (DEPTH_MAX / DEPTH_BIN_WIDTH) as usize;
        let bins = (0..n)
            .map(|i| DepthBin {
                lo: i as f64 * DEPTH_BIN_WIDTH,
                hi: (i + 1) as f64 * DEPTH_BIN_WIDTH,
                abs_error_sum: 0.0,
                count: 0,
            })
            .collect();
        Self { bins, unmatched: 0, out_of_range: 0 }
    }

    pub fn matched(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

pub const DEFAULT_DEPTH_MATCH_IOU: f64 = 0.1;

/// For every ground truth, takes the same-class detection with the highest
/// BEV IoU (at least `iou_threshold`) and bins `|Z_det - Z_gt|` by GT depth.
/// DontCare rows are skipped; `class_name` restricts the ground truths.
pub fn depth_error_report(
    gts: &[Vec<GroundTruthObject>],
    dets: &[Vec<Detection>],
    class_name: Option<&str>,
    iou_threshold: f64,
) -> Result<DepthErrorReport> {
    if gts.len() != dets.len() {
        return Err(Error::ShapeMismatch { expected: gts.len(), actual: dets.len() });
    }
    let mut report = DepthErrorReport::empty();
    for (frame_gts, frame_dets) in gts.iter().zip(dets) {
        for g in frame_gts.iter().filter(|g| !g.is_dont_care()) {
            if class_name.is_some_and(|c| c != g.class_name) {
                continue;
            }
            let z = g.location.z;
            if !(0.0..=DEPTH_MAX).contains(&z) {
                report.out_of_range += 1;
                continue;
            }
            let best = frame_dets
                .iter()
                .filter(|d| d.object.class_name == g.class_name)
                .map(|d| (d, box_iou(&d.object, g, IouMode::Bev)))
                .filter(|&(_, iou)| iou > 0.0 && iou >= iou_threshold)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match best {
                Some((d, _)) => {
                    let idx = ((z / DEPTH_BIN_WIDTH) as usize).min(report.bins.len() - 1);
                    report.bins[idx].abs_error_sum += (d.object.location.z - z).abs();
                    report.bins[idx].count += 1;
                }
                None => report.unmatched += 1,
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point3, Size3d};
    use crate::kitti_io::Bbox2d;

    fn gt(height: f64, occlusion: i32, truncation: f64) -> GroundTruthObject {
        GroundTruthObject {
            class_name: "Car".into(),
            truncation,
            occlusion,
            alpha: 0.0,
            bbox: Bbox2d::new(100.0, 100.0, 150.0, 100.0 + height),
            size: Size3d::new(1.5, 1.6, 3.9),
            location: Point3::new(0.0, 1.6, 20.0),
            rotation_y: 0.0,
        }
    }

    fn at(x: f64, z: f64) -> GroundTruthObject {
        let mut g = gt(50.0, 0, 0.0);
        g.location = Point3::new(x, 1.6, z);
        g
    }

    #[test]
    fn difficulty_tiers() {
        assert_eq!(classify_difficulty(&gt(50.0, 0, 0.10)), Difficulty::Easy);
        assert_eq!(classify_difficulty(&gt(30.0, 1, 0.2)), Difficulty::Moderate);
        assert_eq!(classify_difficulty(&gt(30.0, 2, 0.45)), Difficulty::Hard);
        assert_eq!(classify_difficulty(&gt(20.0, 0, 0.0)), Difficulty::Unknown);
        assert_eq!(classify_difficulty(&gt(50.0, 3, 0.0)), Difficulty::Unknown);
        assert_eq!(classify_difficulty(&gt(50.0, 0, 0.6)), Difficulty::Unknown);
    }

    #[test]
    fn perfect_and_empty_detections() {
        let gts = vec![vec![at(0.0, 20.0), at(5.0, 30.0)]];
        let perfect = vec![gts[0].iter().map(|g| Detection::new(g.clone(), 0.9)).collect()];
        let cfg = EvalConfig::new("Car", Difficulty::Moderate, 0.7, IouMode::Bev);
        assert_eq!(evaluate_ap(&gts, &perfect, &cfg).unwrap().ap, Some(1.0));
        let none = evaluate_ap(&gts, &[vec![]], &cfg).unwrap();
        assert_eq!(none.ap, Some(0.0));
        assert_eq!(none.curve.points, vec![]);
    }

    #[test]
    fn no_ground_truth_is_no_data() {
        let cfg = EvalConfig::new("Car", Difficulty::Easy, 0.7, IouMode::Bev);
        let r = evaluate_ap(&[vec![]], &[vec![Detection::new(at(0.0, 10.0), 0.5)]], &cfg).unwrap();
        assert_eq!(r.ap, None);
        assert_eq!(r.num_fp, 1);
    }

    #[test]
    fn one_hit_one_false_positive() {
        // 2 GTs; top detection hits one, the next is a false positive.
        // PR points: (0.5, 1.0), (0.5, 0.5). AP40: 20 positions at recall <= 0.5
        // reach precision 1, the rest 0.
        let gts = vec![vec![at(0.0, 20.0), at(10.0, 40.0)]];
        let dets = vec![vec![Detection::new(at(0.0, 20.0), 0.9), Detection::new(at(-15.0, 60.0), 0.4)]];
        let cfg = EvalConfig::new("Car", Difficulty::Moderate, 0.7, IouMode::Bev);
        let r = evaluate_ap(&gts, &dets, &cfg).unwrap();
        assert_eq!(r.curve.points, vec![(0.5, 1.0), (0.5, 0.5)]);
        assert_eq!(r.ap, Some(0.5));
        let cfg11 = EvalConfig { interpolation: Interpolation::Eleven, ..cfg };
        assert!((evaluate_ap(&gts, &dets, &cfg11).unwrap().ap.unwrap() - 6.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn duplicates_are_false_positives() {
        let gts = vec![vec![at(0.0, 20.0)]];
        let dets = vec![vec![Detection::new(at(0.0, 20.0), 0.9), Detection::new(at(0.0, 20.0), 0.8)]];
        let cfg = EvalConfig::new("Car", Difficulty::Easy, 0.7, IouMode::ThreeD);
        let r = evaluate_ap(&gts, &dets, &cfg).unwrap();
        assert_eq!((r.num_tp, r.num_fp), (1, 1));
    }

    #[test]
    fn harder_objects_and_neighbors_are_ignored() {
        let hard = gt(30.0, 2, 0.4);
        let mut van = at(10.0, 30.0);
        van.class_name = "Van".into();
        let gts = vec![vec![hard.clone(), van.clone()]];
        let dets = vec![vec![Detection::new(hard, 0.9), Detection::new(at(10.0, 30.0), 0.8)]];
        let cfg = EvalConfig::new("Car", Difficulty::Easy, 0.7, IouMode::Bev);
        let r = evaluate_ap(&gts, &dets, &cfg).unwrap();
        assert_eq!((r.num_gt, r.num_tp, r.num_fp), (0, 0, 0));
        let cfg_hard = EvalConfig::new("Car", Difficulty::Hard, 0.7, IouMode::Bev);
        let r = evaluate_ap(&gts, &dets, &cfg_hard).unwrap();
        assert_eq!((r.num_gt, r.num_tp, r.num_fp), (1, 1, 0));
    }

    #[test]
    fn dont_care_suppresses_false_positives() {
        let mut dc = gt(40.0, -1, -1.0);
        dc.class_name = "DontCare".into();
        let mut fp = at(-10.0, 50.0);
        fp.bbox = dc.bbox;
        let cfg = EvalConfig::new("Car", Difficulty::Hard, 0.7, IouMode::Bev);
        let r = evaluate_ap(&[vec![at(0.0, 20.0), dc]], &[vec![Detection::new(fp, 0.9)]], &cfg).unwrap();
        assert_eq!(r.num_fp, 0);
    }

    #[test]
    fn tied_scores_form_one_threshold() {
        let c = pr_curve(vec![(0.5, false), (0.5, true)], 1, Interpolation::Forty);
        assert_eq!(c.points, vec![(1.0, 0.5)]);
    }

    #[test]
    fn depth_bins() {
        let mut g = at(-0.65, 46.7);
        g.rotation_y = -1.59;
        let mut d = Detection::new(g.clone(), 0.9);
        d.object.location.z = 48.7;
        let r = depth_error_report(&[vec![g.clone()]], &[vec![d]], Some("Car"), 0.1).unwrap();
        assert_eq!(r.bins.len(), 8);
        assert!((r.bins[4].mean_abs_error().unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(r.matched(), 1);
        let none = depth_error_report(&[vec![g.clone(), at(0.0, 5.0)]], &[vec![]], None, 0.1).unwrap();
        assert_eq!(none.unmatched, 2);
        assert_eq!(none.matched(), 0);
        let far = depth_error_report(&[vec![at(0.0, 85.0)]], &[vec![]], None, 0.1).unwrap();
        assert_eq!(far.out_of_range, 1);
        let exact =
            depth_error_report(&[vec![at(0.0, 80.0)]], &[vec![Detection::new(at(0.0, 80.0), 1.0)]], None, 0.1).unwrap();
        assert_eq!(exact.bins[7].mean_abs_error(), Some(0.0));
    }
}
