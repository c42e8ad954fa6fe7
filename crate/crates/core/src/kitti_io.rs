//! KITTI object label, detection-result and calibration files.
//!
//! Label rows carry 15 whitespace-separated columns:
//!
//! ```text
//! type truncated occluded alpha left top right bottom height width length x y z rotation_y
//! ```
//!
//! Detection rows append a 16th `score` column. Calibration files are
//! `KEY: v0 ... vN` rows; only the left color camera projection `P2` is used.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{Point3, Size3d};

pub const DONT_CARE: &str = "DontCare";

const LABEL_COLUMNS: usize = 15;
const DETECTION_COLUMNS: usize = 16;

/// Axis-aligned image rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bbox2d {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl Bbox2d {
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Self { left, top, right, bottom }
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.left + self.right), 0.5 * (self.top + self.bottom))
    }

    /// Closed containment test.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.left && u <= self.right && v >= self.top && v <= self.bottom
    }

    pub fn iou(&self, other: &Bbox2d) -> f64 {
        let iw = (self.right.min(other.right) - self.left.max(other.left)).max(0.0);
        let ih = (self.bottom.min(other.bottom) - self.top.max(other.top)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// One annotated object of a KITTI label file.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub class_name: String,
    /// Fraction of the object leaving the image, `-1` for detections.
    pub truncation: f64,
    /// 0 visible, 1 partly occluded, 2 largely occluded, 3 unknown.
    pub occlusion: i32,
    /// Observation angle in radians.
    pub alpha: f64,
    pub bbox: Bbox2d,
    pub size: Size3d,
    /// Bottom-center of the box in camera coordinates (Y points down).
    pub location: Point3,
    pub rotation_y: f64,
}

impl GroundTruthObject {
    pub fn is_dont_care(&self) -> bool {
        self.class_name == DONT_CARE
    }

    /// Checks the geometric invariants of a labelled object. DontCare rows
    /// carry placeholder 3D values and only need a valid 2D box.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::domain(format!("{}: {m}", self.class_name)));
        if !(self.bbox.right > self.bbox.left && self.bbox.bottom > self.bbox.top) {
            return fail("degenerate 2D box");
        }
        if self.is_dont_care() {
            return Ok(());
        }
        if !(self.size.height > 0.0 && self.size.width > 0.0 && self.size.length > 0.0) {
            return fail("non-positive 3D size");
        }
        let pi = std::f64::consts::PI + 1e-6;
        if self.alpha.abs() > pi || self.rotation_y.abs() > pi {
            return fail("angle outside [-pi, pi]");
        }
        Ok(())
    }
}

/// A scored object as written to a KITTI result file.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub object: GroundTruthObject,
    pub score: f64,
}

impl Detection {
    pub fn new(object: GroundTruthObject, score: f64) -> Self {
        Self { object, score }
    }
}

/// Pinhole intrinsics of the left color camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraCalib {
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
    /// Full `P2` matrix, row-major.
    pub projection: [[f64; 4]; 3],
}

impl CameraCalib {
    pub fn from_projection(projection: [[f64; 4]; 3]) -> Result<Self> {
        let (fu, fv) = (projection[0][0], projection[1][1]);
        if !(fu > 0.0 && fv > 0.0) {
            return Err(Error::domain(format!("focal lengths must be positive, got ({fu}, {fv})")));
        }
        Ok(Self { fu, fv, cu: projection[0][2], cv: projection[1][2], projection })
    }

    /// Builds a calibration without translation terms.
    pub fn from_intrinsics(fu: f64, fv: f64, cu: f64, cv: f64) -> Result<Self> {
        Self::from_projection([[fu, 0.0, cu, 0.0], [0.0, fv, cv, 0.0], [0.0, 0.0, 1.0, 0.0]])
    }

    /// Serializes the calibration as a single `P2:` row.
    pub fn to_calib_string(&self) -> String {
        let values: Vec<String> = self.projection.iter().flatten().map(|v| format!("{v:.12e}")).collect();
        format!("P2: {}\n", values.join(" "))
    }
}

fn parse_f64(token: &str, line: usize, column: &str) -> Result<f64> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse { line, message: format!("invalid {column} value {token:?}") }),
    }
}

fn parse_object(fields: &[&str], line: usize) -> Result<GroundTruthObject> {
    let num = |i: usize, name: &str| parse_f64(fields[i], line, name);
    let occlusion = fields[2]
        .parse::<i32>()
        .ok()
        .filter(|o| (-1..=3).contains(o))
        .ok_or_else(|| Error::Parse { line, message: format!("invalid occlusion value {:?}", fields[2]) })?;
    Ok(GroundTruthObject {
        class_name: fields[0].to_string(),
        truncation: num(1, "truncation")?,
        occlusion,
        alpha: num(3, "alpha")?,
        bbox: Bbox2d::new(num(4, "left")?, num(5, "top")?, num(6, "right")?, num(7, "bottom")?),
        size: Size3d::new(num(8, "height")?, num(9, "width")?, num(10, "length")?),
        location: Point3::new(num(11, "x")?, num(12, "y")?, num(13, "z")?),
        rotation_y: num(14, "rotation_y")?,
    })
}

fn rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, f)| !f.is_empty())
}

/// Parses a KITTI label file. Blank lines are skipped; every other line
/// yields an object or an error naming its 1-based line number.
pub fn parse_label_file(text: &str) -> Result<Vec<GroundTruthObject>> {
    rows(text)
        .map(|(line, fields)| {
            if fields.len() != LABEL_COLUMNS {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {LABEL_COLUMNS} columns, found {}", fields.len()),
                });
            }
            parse_object(&fields, line)
        })
        .collect()
}

/// Parses a KITTI result file (label columns plus a trailing score).
pub fn parse_detection_file(text: &str) -> Result<Vec<Detection>> {
    rows(text)
        .map(|(line, fields)| {
            if fields.len() != DETECTION_COLUMNS {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {DETECTION_COLUMNS} columns, found {}", fields.len()),
                });
            }
            let object = parse_object(&fields, line)?;
            let score = parse_f64(fields[15], line, "score")?;
            if score < 0.0 {
                return Err(Error::Parse { line, message: format!("negative score {score}") });
            }
            Ok(Detection { object, score })
        })
        .collect()
}

/// Extracts the `P2` projection row of a KITTI calibration file.
pub fn parse_calib_file(text: &str) -> Result<CameraCalib> {
    for (line, raw) in text.lines().enumerate() {
        let Some(rest) = raw.trim_start().strip_prefix("P2:") else { continue };
        let values = rest.split_whitespace().map(|t| parse_f64(t, line + 1, "P2")).collect::<Result<Vec<_>>>()?;
        if values.len() != 12 {
            return Err(Error::Parse {
                line: line + 1,
                message: format!("P2 needs 12 values, found {}", values.len()),
            });
        }
        let mut p = [[0.0; 4]; 3];
        for (i, v) in values.into_iter().enumerate() {
            p[i / 4][i % 4] = v;
        }
        return CameraCalib::from_projection(p);
    }
    Err(Error::MissingProjection)
}

fn write_object(out: &mut String, o: &GroundTruthObject) {
    let b = &o.bbox;
    let _ = write!(
        out,
        "{} {:.6} {} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
        o.class_name,
        o.truncation,
        o.occlusion,
        o.alpha,
        b.left,
        b.top,
        b.right,
        b.bottom,
        o.size.height,
        o.size.width,
        o.size.length,
        o.location.x,
        o.location.y,
        o.location.z,
        o.rotation_y,
    );
}

/// Writes a label file with every real number at 6 decimal places.
pub fn write_label_file(objects: &[GroundTruthObject]) -> String {
    let mut out = String::new();
    for o in objects {
        write_object(&mut out, o);
        out.push('\n');
    }
    out
}

/// Writes a KITTI result file: one 16-column line per detection.
pub fn write_detection_file(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        write_object(&mut out, &d.object);
        let _ = writeln!(out, " {:.6}", d.score);
    }
    out
}

/// File name of a frame: zero-padded 6-digit id plus `.txt`.
pub fn frame_file_name(frame_id: u32) -> String {
    format!("{frame_id:06}.txt")
}
