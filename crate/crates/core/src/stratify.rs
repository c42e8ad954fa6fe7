//! Depth stratification of the feature pyramid.
//!
//! Each pyramid level regresses objects inside its own depth range. The
//! ranges grow geometrically with stride and overlap, so mid-range objects
//! are predicted by two levels. An object's 2D size on the image relates to
//! its depth through the camera-facing approximation
//! `(Z - L/2) / f = W / w_2d` (and likewise for height).

use crate::error::{Error, Result};
use crate::geometry::Size3d;
use crate::kitti_io::{CameraCalib, GroundTruthObject};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratLevel {
    pub index: usize,
    /// Downsampling stride in pixels per grid cell.
    pub stride: u32,
    /// Minimum regressable depth; also the depth base of the codec.
    pub z_min: f64,
    pub z_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratConfig {
    levels: Vec<StratLevel>,
    pub z_lo: f64,
    pub z_hi: f64,
}

impl StratConfig {
    /// Validates the ordering, coverage and overlap of a level list.
    pub fn new(levels: Vec<StratLevel>, z_lo: f64, z_hi: f64) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if levels.is_empty() {
            return bad("no levels".into());
        }
        if !(z_lo < z_hi) {
            return bad(format!("empty global range [{z_lo}, {z_hi}]"));
        }
        for (i, l) in levels.iter().enumerate() {
            if l.index != i {
                return bad(format!("level {i} carries index {}", l.index));
            }
            if !(l.z_min > 0.0 && l.z_min < l.z_max) {
                return bad(format!("level {i} has range [{}, {})", l.z_min, l.z_max));
            }
            if !l.stride.is_power_of_two() {
                return bad(format!("level {i} stride {} is not a power of two", l.stride));
            }
        }
        for w in levels.windows(2) {
            if w[1].z_min < w[0].z_min {
                return bad("levels not ordered by minimum depth".into());
            }
            if w[1].z_min >= w[0].z_max {
                return bad(format!("levels {} and {} do not overlap", w[0].index, w[1].index));
            }
        }
        if levels[0].z_min > z_lo || levels.iter().map(|l| l.z_max).fold(f64::MIN, f64::max) < z_hi {
            return bad("levels do not cover the global range".into());
        }
        Ok(Self { levels, z_lo, z_hi })
    }

    pub fn levels(&self) -> &[StratLevel] {
        &self.levels
    }

    pub fn level(&self, index: usize) -> Option<&StratLevel> {
        self.levels.get(index)
    }

    /// Whether `z` falls inside the level's range. Ranges are half-open
    /// except where a level ends at the global maximum, which is included.
    pub fn level_contains(&self, level: &StratLevel, z: f64) -> bool {
        if !self.in_global_range(z) {
            return false;
        }
        z >= level.z_min && (z < level.z_max || (z == level.z_max && z == self.z_hi))
    }

    pub fn in_global_range(&self, z: f64) -> bool {
        z >= self.z_lo && z <= self.z_hi
    }

    /// Indices of all levels responsible for depth `z`.
    pub fn levels_for_depth(&self, z: f64) -> Vec<usize> {
        self.levels.iter().filter(|l| self.level_contains(l, z)).map(|l| l.index).collect()
    }
}

impl Default for StratConfig {
    /// Strides 8/16/32 covering 5-20 m, 10-40 m and 20-80 m.
    fn default() -> Self {
        let levels = [(8, 5.0, 20.0), (16, 10.0, 40.0), (32, 20.0, 80.0)]
            .into_iter()
            .enumerate()
            .map(|(index, (stride, z_min, z_max))| StratLevel { index, stride, z_min, z_max })
            .collect();
        Self::new(levels, 5.0, 80.0).expect("default config is valid")
    }
}

pub fn default_config() -> StratConfig {
    StratConfig::default()
}

pub fn levels_for_depth(z: f64, config: &StratConfig) -> Vec<usize> {
    config.levels_for_depth(z)
}

/// Which image extent is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeAxis {
    Width,
    Height,
}

/// Depth of a camera-facing object from its 2D extent along `axis`.
pub fn depth_from_2d_size(extent_2d: f64, axis: SizeAxis, size: &Size3d, calib: &CameraCalib) -> Result<f64> {
    if !(extent_2d > 0.0) {
        return Err(Error::domain(format!("2D extent must be positive, got {extent_2d}")));
    }
    let (focal, extent_3d) = match axis {
        SizeAxis::Width => (calib.fu, size.width),
        SizeAxis::Height => (calib.fv, size.height),
    };
    Ok(focal * extent_3d / extent_2d + 0.5 * size.length)
}

/// Scatter of (2D height, depth) pairs with the height-form depth curve
/// fitted through the mean 3D size.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSizeFit {
    pub scatter: Vec<(f64, f64)>,
    pub mean_height: f64,
    pub mean_length: f64,
    pub mean_fv: f64,
    /// `(h_2d, Z)` samples of the fitted curve spanning the scatter.
    pub curve: Vec<(f64, f64)>,
}

impl DepthSizeFit {
    pub fn curve_depth(&self, h_2d: f64) -> f64 {
        self.mean_fv * self.mean_height / h_2d + 0.5 * self.mean_length
    }

    /// Median of `|Z - curve(h)| / Z` over the scatter.
    pub fn median_relative_residual(&self) -> f64 {
        let mut r: Vec<f64> = self.scatter.iter().map(|&(h, z)| (z - self.curve_depth(h)).abs() / z).collect();
        r.sort_by(f64::total_cmp);
        let n = r.len();
        if n == 0 {
            return 0.0;
        }
        if n % 2 == 1 {
            r[n / 2]
        } else {
            0.5 * (r[n / 2 - 1] + r[n / 2])
        }
    }
}

pub const CURVE_SAMPLES: usize = 64;

/// Builds the depth/2D-height statistics over `(object, frame calibration)`
/// pairs. Objects with a non-positive box height or depth are skipped.
pub fn fit_curve_points(samples: &[(GroundTruthObject, CameraCalib)]) -> Result<DepthSizeFit> {
    let usable: Vec<_> =
        samples.iter().filter(|(o, _)| o.bbox.height() > 0.0 && o.location.z > 0.0 && !o.is_dont_care()).collect();
    if usable.is_empty() {
        return Err(Error::EmptyInput("no objects to fit".into()));
    }
    let n = usable.len() as f64;
    let mean_height = usable.iter().map(|(o, _)| o.size.height).sum::<f64>() / n;
    let mean_length = usable.iter().map(|(o, _)| o.size.length).sum::<f64>() / n;
    let mean_fv = usable.iter().map(|(_, c)| c.fv).sum::<f64>() / n;
    let scatter: Vec<_> = usable.iter().map(|(o, _)| (o.bbox.height(), o.location.z)).collect();

    let mut fit = DepthSizeFit { scatter, mean_height, mean_length, mean_fv, curve: Vec::new() };
    let h_min = fit.scatter.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let h_max = fit.scatter.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    fit.curve = if h_max > h_min {
        (0..CURVE_SAMPLES)
            .map(|i| {
                let h = h_min + (h_max - h_min) * i as f64 / (CURVE_SAMPLES - 1) as f64;
                (h, fit.curve_depth(h))
            })
            .collect()
    } else {
        vec![(h_min, fit.curve_depth(h_min))]
    };
    Ok(fit)
}

/// Training label of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelLabel {
    /// Index of the responsible object in the input list.
    Positive(usize),
    Negative,
    Ignore,
}

/// Row-major label grid of one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    pub cols: usize,
    pub rows: usize,
    pub stride: u32,
    pub labels: Vec<PixelLabel>,
}

impl LabelGrid {
    pub fn get(&self, col: usize, row: usize) -> PixelLabel {
        self.labels[row * self.cols + col]
    }

    /// Pixel coordinates of the center of cell `(col, row)`.
    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        cell_center(self.stride, col, row)
    }

    pub fn count(&self, pred: impl Fn(&PixelLabel) -> bool) -> usize {
        self.labels.iter().filter(|l| pred(l)).count()
    }
}

pub fn cell_center(stride: u32, col: usize, row: usize) -> (f64, f64) {
    let s = stride as f64;
    ((col as f64 + 0.5) * s, (row as f64 + 0.5) * s)
}

/// Assigns Positive/Negative/Ignore labels to every cell of `level`.
///
/// A cell is Positive when its center lies inside the 2D box of at least one
/// object whose depth the level can regress, and then belongs to the nearest
/// such object. Cells covered only by objects the level cannot regress
/// (including DontCare regions) are ignored; everything else is Negative.
pub fn assign_targets(
    objects: &[GroundTruthObject],
    level: &StratLevel,
    config: &StratConfig,
    image_size: (u32, u32),
) -> LabelGrid {
    let stride = level.stride as usize;
    let cols = (image_size.0 as usize).div_ceil(stride);
    let rows = (image_size.1 as usize).div_ceil(stride);
    let mut labels = Vec::with_capacity(cols * rows);
    for row in 0..rows {
        for col in 0..cols {
            let (u, v) = cell_center(level.stride, col, row);
            let mut best: Option<(usize, f64)> = None;
            let mut covered = false;
            for (i, o) in objects.iter().enumerate() {
                if !o.bbox.contains(u, v) {
                    continue;
                }
                covered = true;
                let z = o.location.z;
                if o.is_dont_care() || !config.level_contains(level, z) {
                    continue;
                }
                if best.is_none_or(|(_, bz)| z < bz) {
                    best = Some((i, z));
                }
            }
            labels.push(match (best, covered) {
                (Some((i, _)), _) => PixelLabel::Positive(i),
                (None, true) => PixelLabel::Ignore,
                (None, false) => PixelLabel::Negative,
            });
        }
    }
    LabelGrid { cols, rows, stride: level.stride, labels }
}
