//! Soft-NMS on bird's-eye-view IoU followed by density-based score
//! activation.
//!
//! Soft-NMS decays each remaining box by `exp(-iou(M, b)^2 / sigma)` after
//! selecting the current best box `M`. The activation step then boosts every
//! survivor by `2 - exp(-density / gamma)`, where the density is the sum of
//! squared IoUs with all other pre-NMS boxes. A pyramid that predicts one
//! object from several levels produces dense clusters, so boxes in dense
//! regions are more likely to be real.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::geometry::{bev_iou, box_corners_bev_yaw, BevPolygon};
use crate::kitti_io::Detection;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsParams {
    /// Soft-NMS decay.
    pub sigma: f64,
    /// Density activation decay.
    pub gamma: f64,
    /// Boxes whose score falls below this are dropped.
    pub score_floor: f64,
    pub top_k: Option<usize>,
}

impl Default for NmsParams {
    fn default() -> Self {
        Self { sigma: 0.9, gamma: 20.0, score_floor: 0.01, top_k: None }
    }
}

/// A detection with its live score and its position in the input list.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBox {
    pub detection: Detection,
    pub score: f64,
    pub id: usize,
}

impl ScoredBox {
    pub fn new(detection: Detection, id: usize) -> Self {
        let score = detection.score;
        Self { detection, score, id }
    }

    fn footprint(&self) -> Option<BevPolygon> {
        let o = &self.detection.object;
        box_corners_bev_yaw(&o.location, &o.size, o.rotation_y).ok()
    }
}

/// Soft-NMS decay factor for one overlap.
pub fn decay_factor(iou: f64, sigma: f64) -> f64 {
    (-(iou * iou) / sigma).exp()
}

/// Density activation factor, in `[1, 2)`.
pub fn activation_factor(density: f64, gamma: f64) -> f64 {
    2.0 - (-density / gamma).exp()
}

fn pair_iou(a: &Option<BevPolygon>, b: &Option<BevPolygon>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => bev_iou(a, b),
        _ => 0.0,
    }
}

/// Sum of squared IoUs between `target` and every box of `context` with a
/// different id.
fn density_against(target: &ScoredBox, fp: &Option<BevPolygon>, context: &[(usize, Option<BevPolygon>)]) -> f64 {
    context.iter().filter(|(id, _)| *id != target.id).map(|(_, p)| pair_iou(fp, p).powi(2)).sum()
}

fn footprints(boxes: &[ScoredBox]) -> Vec<(usize, Option<BevPolygon>)> {
    boxes.iter().map(|b| (b.id, b.footprint())).collect()
}

// Higher score first, then higher density, then lower id.
fn rank(a: (f64, f64, usize), b: (f64, f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2))
}

/// Gaussian soft-NMS. Output is sorted by final score, descending.
pub fn soft_nms(boxes: &[ScoredBox], params: &NmsParams) -> Vec<ScoredBox> {
    let context = footprints(boxes);
    let mut remaining: Vec<(ScoredBox, Option<BevPolygon>, f64)> = boxes
        .iter()
        .zip(&context)
        .filter(|(b, _)| b.score >= params.score_floor)
        .map(|(b, (_, fp))| {
            let density = density_against(b, fp, &context);
            (b.clone(), *fp, density)
        })
        .collect();
    let mut kept = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let best = (0..remaining.len())
            .min_by(|&i, &j| {
                let (a, b) = (&remaining[i], &remaining[j]);
                rank((a.0.score, a.2, a.0.id), (b.0.score, b.2, b.0.id))
            })
            .expect("non-empty");
        let (m, m_fp, m_density) = remaining.swap_remove(best);
        for (b, fp, _) in remaining.iter_mut() {
            b.score *= decay_factor(pair_iou(&m_fp, fp), params.sigma);
        }
        remaining.retain(|(b, _, _)| b.score >= params.score_floor);
        kept.push((m, m_density));
    }
    kept.sort_by(|a, b| rank((a.0.score, a.1, a.0.id), (b.0.score, b.1, b.0.id)));
    kept.into_iter().map(|(b, _)| b).collect()
}

/// Boosts each box of `boxes` by the density of `all_boxes` around it. The
/// box itself (matched by id) is excluded from its own density.
pub fn density_activate(boxes: &[ScoredBox], all_boxes: &[ScoredBox], params: &NmsParams) -> Vec<ScoredBox> {
    let context = footprints(all_boxes);
    boxes
        .iter()
        .map(|b| {
            let density = density_against(b, &b.footprint(), &context);
            ScoredBox { score: b.score * activation_factor(density, params.gamma), ..b.clone() }
        })
        .collect()
}

/// Soft-NMS then density activation, run independently per class. The
/// returned detections carry their final scores, sorted descending, with
/// ties broken by density and then input position.
pub fn pipeline(detections: &[Detection], params: &NmsParams) -> Vec<Detection> {
    let mut by_class: BTreeMap<&str, Vec<ScoredBox>> = BTreeMap::new();
    for (id, d) in detections.iter().enumerate() {
        by_class.entry(d.object.class_name.as_str()).or_default().push(ScoredBox::new(d.clone(), id));
    }
    let mut out: Vec<(ScoredBox, f64)> = Vec::new();
    for boxes in by_class.values() {
        let kept = soft_nms(boxes, params);
        let activated = density_activate(&kept, boxes, params);
        let context = footprints(boxes);
        out.extend(activated.into_iter().map(|b| {
            let density = density_against(&b, &b.footprint(), &context);
            (b, density)
        }));
    }
    out.sort_by(|a, b| rank((a.0.score, a.1, a.0.id), (b.0.score, b.1, b.0.id)));
    if let Some(k) = params.top_k {
        out.truncate(k);
    }
    out.into_iter().map(|(b, _)| Detection { score: b.score, ..b.detection }).collect()
}
