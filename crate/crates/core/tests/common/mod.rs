//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use mono3d::geometry::{Point3, Size3d};
use mono3d::kitti_io::{Bbox2d, CameraCalib, Detection, GroundTruthObject};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn kitti_calib() -> CameraCalib {
    CameraCalib::from_intrinsics(721.5377, 721.5377, 609.5593, 172.854).unwrap()
}

pub fn car(x: f64, z: f64, rotation_y: f64) -> GroundTruthObject {
    GroundTruthObject {
        class_name: "Car".into(),
        truncation: 0.0,
        occlusion: 0,
        alpha: 0.0,
        bbox: Bbox2d::new(100.0, 100.0, 160.0, 150.0),
        size: Size3d::new(1.5, 1.6, 3.9),
        location: Point3::new(x, 1.65, z),
        rotation_y,
    }
}

pub fn det(object: GroundTruthObject, score: f64) -> Detection {
    Detection::new(object, score)
}

/// Central difference of `f` at `x` with step `h`.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|, 1)`: relative for large gradients, absolute
/// below unit magnitude where relative error is dominated by round-off.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// A rotated rectangle in the ground plane, described independently of the
/// library's polygon type.
#[derive(Debug, Clone, Copy)]
pub struct Rect {
    pub cx: f64,
    pub cz: f64,
    /// Extent along the local x axis.
    pub ex: f64,
    /// Extent along the local z axis.
    pub ez: f64,
    /// Counter-clockwise angle of the local x axis in the (x, z) plane.
    pub angle: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        self.ex * self.ez
    }

    fn world_point(&self, lx: f64, lz: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        (self.cx + c * lx - s * lz, self.cz + s * lx + c * lz)
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dz) = (x - self.cx, z - self.cz);
        let lx = c * dx + s * dz;
        let lz = -s * dx + c * dz;
        lx.abs() <= 0.5 * self.ex && lz.abs() <= 0.5 * self.ez
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let (hx, hz) = (0.5 * self.ex, 0.5 * self.ez);
        [self.world_point(-hx, -hz), self.world_point(hx, -hz), self.world_point(hx, hz), self.world_point(-hx, hz)]
    }
}

/// IoU estimate from `samples` uniform points drawn inside `a`.
pub fn monte_carlo_iou(a: &Rect, b: &Rect, samples: usize, rng: &mut StdRng) -> f64 {
    let mut hits = 0usize;
    for _ in 0..samples {
        let lx = (rng.random::<f64>() - 0.5) * a.ex;
        let lz = (rng.random::<f64>() - 0.5) * a.ez;
        let (x, z) = a.world_point(lx, lz);
        if b.contains(x, z) {
            hits += 1;
        }
    }
    let inter = a.area() * hits as f64 / samples as f64;
    inter / (a.area() + b.area() - inter)
}

/// Brute-force AP by enumerating score thresholds. Each detection carries
/// the ground truth it overlaps above the IoU threshold, if any; at a given
/// threshold the true positives are the distinct ground truths hit.
pub fn brute_force_ap(dets: &[(f64, Option<usize>)], num_gt: usize, positions: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = dets.iter().map(|d| d.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut pr = Vec::new();
    for t in thresholds {
        let kept: Vec<_> = dets.iter().filter(|d| d.0 >= t).collect();
        let mut hit: Vec<usize> = kept.iter().filter_map(|d| d.1).collect();
        hit.sort_unstable();
        hit.dedup();
        let tp = hit.len() as f64;
        pr.push((tp / num_gt as f64, tp / kept.len() as f64));
    }
    let total: f64 = positions.iter().map(|&r| pr.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max)).sum();
    total / positions.len() as f64
}

/// Uniform sample from `[lo, hi)`.
pub fn uniform(rng: &mut StdRng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}
