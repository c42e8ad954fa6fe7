//! Training losses with analytic gradients.
//!
//! Every loss returns a [`LossValue`] holding the scalar value and the
//! partial derivatives with respect to each *predicted* input, in argument
//! order. Targets are treated as constants.

use crate::codec::RawPrediction;
use crate::error::{Error, Result};
use crate::eval::Difficulty;
use crate::kitti_io::Bbox2d;
use crate::stratify::{LabelGrid, PixelLabel};

pub const DEFAULT_QFL_EXPONENT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Vec<f64>,
}

impl LossValue {
    fn new(value: f64, gradient: Vec<f64>) -> Self {
        Self { value, gradient }
    }
}

/// Heading-aware angle loss
/// `(theta - theta_hat)^2 + (alpha - alpha_hat)^2 * sin(2 theta)`.
///
/// The heading term vanishes where a flipped heading barely moves the box
/// footprint (offsets near 0 or 90 degrees) and peaks at 45 degrees.
/// Gradient order: `[d/d theta_hat, d/d alpha_hat]`.
pub fn angle_loss_mds(theta: f64, theta_hat: f64, alpha: f64, alpha_hat: f64) -> LossValue {
    let dt = theta - theta_hat;
    let da = alpha - alpha_hat;
    let weight = (2.0 * theta).sin();
    LossValue::new(dt * dt + da * da * weight, vec![-2.0 * dt, -2.0 * da * weight])
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// `SmoothL1(sin(beta - beta_hat))`. Gradient: `[d/d beta_hat]`.
pub fn angle_loss_second(beta: f64, beta_hat: f64) -> LossValue {
    let d = beta - beta_hat;
    let s = d.sin();
    LossValue::new(smooth_l1(s), vec![-smooth_l1_grad(s) * d.cos()])
}

/// Squared radian offset. Gradient: `[d/d beta_hat]`.
pub fn angle_loss_naive(beta: f64, beta_hat: f64) -> LossValue {
    let d = beta - beta_hat;
    LossValue::new(d * d, vec![-2.0 * d])
}

/// Quality focal loss on a probability `p` against a soft target:
/// `-|t - p|^e * [(1 - t) ln(1 - p) + t ln p]`. Gradient: `[d/dp]`.
pub fn qfl(p: f64, target: f64, exponent: f64) -> Result<LossValue> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("prediction must lie in (0, 1), got {p}")));
    }
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::domain(format!("target must lie in [0, 1], got {target}")));
    }
    let diff = p - target;
    let modulator = diff.abs().powf(exponent);
    let ce = -((1.0 - target) * (1.0 - p).ln() + target * p.ln());
    let d_ce = (1.0 - target) / (1.0 - p) - target / p;
    let d_mod = if diff == 0.0 { 0.0 } else { exponent * diff.abs().powf(exponent - 1.0) * diff.signum() };
    Ok(LossValue::new(modulator * ce, vec![d_mod * ce + modulator * d_ce]))
}

/// Sum of squared differences. Gradient: `2 (p - t)` per element.
pub fn l2_loss(predicted: &[f64], target: &[f64]) -> Result<LossValue> {
    if predicted.len() != target.len() {
        return Err(Error::ShapeMismatch { expected: target.len(), actual: predicted.len() });
    }
    let value = predicted.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    let gradient = predicted.iter().zip(target).map(|(p, t)| 2.0 * (p - t)).collect();
    Ok(LossValue::new(value, gradient))
}

/// Soft targets of the three score channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreTargets {
    pub confidence: f64,
    pub centerness: f64,
    pub iou: f64,
}

/// Piecewise confidence target by difficulty tier.
pub fn confidence_target(difficulty: Difficulty) -> f64 {
    match difficulty {
        Difficulty::Easy => 1.0,
        Difficulty::Moderate => 0.8,
        Difficulty::Hard => 0.6,
        Difficulty::Unknown => 0.4,
    }
}

/// `1 - d / d_max`, where `d` is the distance from the cell center to the 2D
/// box center and `d_max` the box half-diagonal, clamped to `[0, 1]`.
pub fn centerness_target(cell_center: (f64, f64), bbox: &Bbox2d) -> f64 {
    let (cx, cy) = bbox.center();
    let d = (cell_center.0 - cx).hypot(cell_center.1 - cy);
    let d_max = 0.5 * bbox.width().hypot(bbox.height());
    if d_max <= 0.0 {
        return 0.0;
    }
    (1.0 - d / d_max).clamp(0.0, 1.0)
}

impl ScoreTargets {
    pub fn new(difficulty: Difficulty, cell_center: (f64, f64), bbox: &Bbox2d, bev_iou: f64) -> Self {
        Self {
            confidence: confidence_target(difficulty),
            centerness: centerness_target(cell_center, bbox),
            iou: bev_iou.clamp(0.0, 1.0),
        }
    }

    pub const NEGATIVE: ScoreTargets = ScoreTargets { confidence: 0.0, centerness: 0.0, iou: 0.0 };
}

/// Network outputs of one cell; score channels are probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellPrediction {
    pub confidence: f64,
    pub centerness: f64,
    pub iou: f64,
    pub raw: RawPrediction,
}

/// Regression and score targets of a positive cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellTarget {
    pub scores: ScoreTargets,
    pub raw: RawPrediction,
}

/// Gradient entries per cell, in this order:
/// confidence, center-ness, IoU, u, v, depth, width, length, height,
/// heading, theta.
pub const CELL_CHANNELS: usize = 11;

/// Components of the combined loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub classification: f64,
    pub box3d: f64,
    /// Value `classification + box3d`; gradient of length
    /// `CELL_CHANNELS * cells`.
    pub total: LossValue,
}

/// Classification plus 3D box loss over one label grid, unit weights.
///
/// Score channels use quality focal loss on positive and negative cells
/// (negatives regress all three scores to 0). Location and size use L2 and
/// the angle uses [`angle_loss_mds`], on positive cells only. Ignored cells
/// contribute nothing and receive zero gradient.
pub fn total_loss(
    predictions: &[CellPrediction],
    targets: &[Option<CellTarget>],
    labels: &LabelGrid,
    qfl_exponent: f64,
) -> Result<TotalLoss> {
    let n = labels.labels.len();
    for len in [predictions.len(), targets.len()] {
        if len != n {
            return Err(Error::ShapeMismatch { expected: n, actual: len });
        }
    }
    let mut classification = 0.0;
    let mut box3d = 0.0;
    let mut gradient = vec![0.0; CELL_CHANNELS * n];
    for (i, label) in labels.labels.iter().enumerate() {
        let scores = match label {
            PixelLabel::Ignore => continue,
            PixelLabel::Negative => ScoreTargets::NEGATIVE,
            PixelLabel::Positive(_) => {
                targets[i].ok_or_else(|| Error::domain(format!("positive cell {i} has no target")))?.scores
            }
        };
        let p = &predictions[i];
        let g = &mut gradient[i * CELL_CHANNELS..(i + 1) * CELL_CHANNELS];
        for (k, (pred, target)) in
            [(p.confidence, scores.confidence), (p.centerness, scores.centerness), (p.iou, scores.iou)]
                .into_iter()
                .enumerate()
        {
            let l = qfl(pred, target, qfl_exponent)?;
            classification += l.value;
            g[k] = l.gradient[0];
        }
        if !matches!(label, PixelLabel::Positive(_)) {
            continue;
        }
        let t = targets[i].expect("checked above").raw;
        let r = &p.raw;
        let loc = l2_loss(&[r.u_offset, r.v_offset, r.log2_depth], &[t.u_offset, t.v_offset, t.log2_depth])?;
        let size = l2_loss(&[r.log_width, r.log_length, r.log_height], &[t.log_width, t.log_length, t.log_height])?;
        let angle = angle_loss_mds(t.theta, r.theta, t.heading, r.heading);
        box3d += loc.value + size.value + angle.value;
        g[3..6].copy_from_slice(&loc.gradient);
        g[6..9].copy_from_slice(&size.gradient);
        g[9] = angle.gradient[1];
        g[10] = angle.gradient[0];
    }
    Ok(TotalLoss { classification, box3d, total: LossValue::new(classification + box3d, gradient) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_6, PI};

    fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn mds_reference_values() {
        assert_eq!(angle_loss_mds(0.7, 0.7, 1.0, 1.0).value, 0.0);
        let l = angle_loss_mds(FRAC_PI_4, FRAC_PI_4, 1.0, 0.0);
        assert!((l.value - 1.0).abs() < 1e-15);
        assert!(angle_loss_mds(1e-6, 1e-6, 1.0, 0.0).value < 1e-5);
        assert!(angle_loss_mds(FRAC_PI_2 - 1e-6, FRAC_PI_2 - 1e-6, 1.0, 0.0).value < 1e-5);
    }

    #[test]
    fn second_reference_values() {
        assert_eq!(angle_loss_second(0.3, 0.3).value, 0.0);
        let flat = angle_loss_second(FRAC_PI_4, -FRAC_PI_4);
        assert!((flat.value - 0.5).abs() < 1e-15);
        assert!(flat.gradient[0].abs() <= 1e-9);
        let l = angle_loss_second(FRAC_PI_6, 0.0);
        assert!((l.value - 0.125).abs() < 1e-15);
    }

    #[test]
    fn naive_reference_values() {
        assert_eq!(angle_loss_naive(0.2, 0.2).value, 0.0);
        assert!((angle_loss_naive(PI, 0.0).value - 9.869604401089358).abs() < 1e-12);
        assert!((angle_loss_naive(0.1, 0.0).value - 0.01).abs() < 1e-15);
    }

    #[test]
    fn qfl_reference_values() {
        assert_eq!(qfl(0.3, 0.3, 2.0).unwrap().value, 0.0);
        let l = qfl(0.5, 1.0, 2.0).unwrap();
        assert!((l.value - 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!((l.value - 0.17329).abs() < 1e-5);
        assert!(qfl(0.0, 0.5, 2.0).is_err());
        assert!(qfl(1.0, 0.5, 2.0).is_err());
        assert!(qfl(0.5, 1.5, 2.0).is_err());
    }

    #[test]
    fn qfl_minimized_at_target() {
        for target in [0.0, 0.2, 0.55, 0.9, 1.0] {
            let (best_p, _) = (1..1000)
                .map(|i| i as f64 / 1000.0)
                .map(|p| (p, qfl(p, target, 2.0).unwrap().value))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            let expect = target.clamp(0.001, 0.999);
            assert!((best_p - expect).abs() <= 1e-3, "target {target}: argmin {best_p}");
        }
    }

    #[test]
    fn l2_values_and_errors() {
        assert_eq!(l2_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap().value, 0.0);
        let l = l2_loss(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert_eq!(l.value, 25.0);
        assert_eq!(l.gradient, vec![-6.0, -8.0]);
        assert!(matches!(l2_loss(&[0.0], &[0.0, 1.0]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn gradients_spot_check() {
        let (t, th, a, ah) = (0.6, 0.4, 1.0, 0.3);
        let g = angle_loss_mds(t, th, a, ah).gradient;
        assert!((g[0] - central_diff(|x| angle_loss_mds(t, x, a, ah).value, th)).abs() < 1e-8);
        assert!((g[1] - central_diff(|x| angle_loss_mds(t, th, a, x).value, ah)).abs() < 1e-8);
        let g = angle_loss_second(0.9, -0.2).gradient[0];
        assert!((g - central_diff(|x| angle_loss_second(0.9, x).value, -0.2)).abs() < 1e-8);
        let g = qfl(0.3, 0.8, 2.0).unwrap().gradient[0];
        assert!((g - central_diff(|x| qfl(x, 0.8, 2.0).unwrap().value, 0.3)).abs() < 1e-7);
    }

    #[test]
    fn centerness_and_confidence_targets() {
        let b = Bbox2d::new(0.0, 0.0, 60.0, 80.0);
        assert_eq!(centerness_target((30.0, 40.0), &b), 1.0);
        assert_eq!(centerness_target((0.0, 0.0), &b), 0.0);
        assert!((centerness_target((30.0 + 15.0, 40.0 + 20.0), &b) - 0.5).abs() < 1e-12);
        assert_eq!(centerness_target((500.0, 500.0), &b), 0.0);
        assert_eq!(confidence_target(Difficulty::Easy), 1.0);
        assert_eq!(confidence_target(Difficulty::Unknown), 0.4);
    }
}
