//! Mapping between the per-cell network outputs and 3D box parameters.
//!
//! Depth is regressed as a base-2 log ratio to the level's minimum depth,
//! sizes as natural-log ratios to a per-class preset, and the projected
//! center as a pixel offset from the cell center. The observation angle is
//! split into a heading bit and an offset in `[0, pi/2]`.

use crate::error::{Error, Result};
use crate::geometry::{back_project, beta_from_rotation_y, project, PixelPoint, Point3, Size3d};
use crate::kitti_io::{CameraCalib, GroundTruthObject};
use crate::stratify::{cell_center, StratLevel};

/// Raw regression outputs of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RawPrediction {
    pub u_offset: f64,
    pub v_offset: f64,
    pub log2_depth: f64,
    pub log_width: f64,
    pub log_length: f64,
    pub log_height: f64,
    /// Heading in `[0, 1]`; thresholded at 0.5 when decoding.
    pub heading: f64,
    pub theta: f64,
}

/// A grid cell and the pyramid level it belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub x: f64,
    pub y: f64,
    pub level: StratLevel,
}

impl GridCell {
    pub fn new(x: f64, y: f64, level: StratLevel) -> Self {
        Self { x, y, level }
    }

    pub fn at(col: usize, row: usize, level: StratLevel) -> Self {
        let (x, y) = cell_center(level.stride, col, row);
        Self { x, y, level }
    }
}

/// Mean 3D size of a class, the reference for size regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetSize {
    pub w0: f64,
    pub l0: f64,
    pub h0: f64,
}

impl PresetSize {
    pub fn new(w0: f64, l0: f64, h0: f64) -> Result<Self> {
        if !(w0 > 0.0 && l0 > 0.0 && h0 > 0.0) {
            return Err(Error::domain(format!("preset sizes must be positive ({w0}, {l0}, {h0})")));
        }
        Ok(Self { w0, l0, h0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedBox {
    pub center: Point3,
    pub size: Size3d,
    pub beta: f64,
}

impl DecodedBox {
    pub fn rotation_y(&self) -> f64 {
        crate::geometry::rotation_y_from_beta(self.beta, &self.center)
    }
}

pub fn decode(raw: &RawPrediction, cell: &GridCell, preset: &PresetSize, calib: &CameraCalib) -> Result<DecodedBox> {
    let z = cell.level.z_min * raw.log2_depth.exp2();
    let pixel = PixelPoint::new(cell.x + raw.u_offset, cell.y + raw.v_offset);
    let center = back_project(pixel, z, calib)?;
    let size = Size3d::new(
        raw.log_height.exp() * preset.h0,
        raw.log_width.exp() * preset.w0,
        raw.log_length.exp() * preset.l0,
    );
    let beta = if raw.heading >= 0.5 { raw.theta } else { -raw.theta };
    Ok(DecodedBox { center, size, beta })
}

/// Exact inverse of [`decode`] for a labelled object.
pub fn encode(
    gt: &GroundTruthObject,
    cell: &GridCell,
    preset: &PresetSize,
    calib: &CameraCalib,
) -> Result<RawPrediction> {
    let z = gt.location.z;
    if !(z > 0.0) {
        return Err(Error::domain(format!("object depth must be positive, got {z}")));
    }
    if !(cell.level.z_min > 0.0) {
        return Err(Error::domain("level minimum depth must be positive"));
    }
    let px = project(&gt.location, calib)?;
    let angle = beta_from_rotation_y(gt.rotation_y, &gt.location);
    Ok(RawPrediction {
        u_offset: px.u - cell.x,
        v_offset: px.v - cell.y,
        log2_depth: (z / cell.level.z_min).log2(),
        log_width: (gt.size.width / preset.w0).ln(),
        log_length: (gt.size.length / preset.l0).ln(),
        log_height: (gt.size.height / preset.h0).ln(),
        heading: f64::from(angle.alpha_bit),
        theta: angle.theta,
    })
}

/// Per-dimension mean size over all objects of `class_name`.
pub fn preset_from_dataset(objects: &[GroundTruthObject], class_name: &str) -> Result<PresetSize> {
    let (mut n, mut w, mut l, mut h) = (0usize, 0.0, 0.0, 0.0);
    for o in objects.iter().filter(|o| o.class_name == class_name) {
        n += 1;
        w += o.size.width;
        l += o.size.length;
        h += o.size.height;
    }
    if n == 0 {
        return Err(Error::EmptyInput(format!("no objects of class {class_name}")));
    }
    let n = n as f64;
    PresetSize::new(w / n, l / n, h / n)
}
