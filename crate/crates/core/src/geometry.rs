//! Pinhole projection, observation-angle folding and rotated bird's-eye-view
//! boxes.
//!
//! Boxes follow the KITTI camera frame: X right, Y down, Z forward. The
//! ground plane is (X, Z). At `rotation_y = 0` a box's length runs along X
//! and its width along Z.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};
use crate::kitti_io::CameraCalib;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Azimuth of the viewing ray through this point, `atan2(X, Z)`.
    pub fn ray_angle(&self) -> f64 {
        self.x.atan2(self.z)
    }
}

/// 3D box extents in meters, in KITTI column order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Size3d {
    pub height: f64,
    pub width: f64,
    pub length: f64,
}

impl Size3d {
    pub fn new(height: f64, width: f64, length: f64) -> Self {
        Self { height, width, length }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

pub fn project(p: &Point3, calib: &CameraCalib) -> Result<PixelPoint> {
    if !(p.z > 0.0) {
        return Err(Error::domain(format!("point behind camera (Z = {})", p.z)));
    }
    Ok(PixelPoint { u: calib.fu * p.x / p.z + calib.cu, v: calib.fv * p.y / p.z + calib.cv })
}

pub fn back_project(pixel: PixelPoint, depth: f64, calib: &CameraCalib) -> Result<Point3> {
    if !(depth > 0.0) {
        return Err(Error::domain(format!("non-positive depth {depth}")));
    }
    Ok(Point3 { x: (pixel.u - calib.cu) * depth / calib.fu, y: (pixel.v - calib.cv) * depth / calib.fv, z: depth })
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Observation angle folded into `(-pi/2, pi/2]`, split into a sign bit and
/// a magnitude.
///
/// A box and its 180-degree rotation share one footprint, so the fold loses
/// nothing geometrically; `folded` records whether the front/back direction
/// was flipped to get there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationAngle {
    pub beta: f64,
    /// 1 when `beta >= 0`, else 0. `beta = theta` if set, `-theta` otherwise.
    pub alpha_bit: u8,
    pub theta: f64,
    pub folded: bool,
}

impl ObservationAngle {
    /// Folds a raw observation angle by +-pi into `(-pi/2, pi/2]`.
    pub fn from_raw(raw: f64) -> Self {
        let mut beta = wrap_angle(raw);
        let mut folded = false;
        if beta > FRAC_PI_2 {
            beta -= PI;
            folded = true;
        } else if beta <= -FRAC_PI_2 {
            beta += PI;
            folded = true;
        }
        Self::from_beta_folded(beta, folded)
    }

    fn from_beta_folded(beta: f64, folded: bool) -> Self {
        Self { beta, alpha_bit: u8::from(beta >= 0.0), theta: beta.abs(), folded }
    }

    /// Rebuilds the angle from a heading bit and an offset.
    pub fn from_parts(alpha_bit: u8, theta: f64) -> Self {
        let beta = if alpha_bit == 1 { theta } else { -theta };
        Self { beta, alpha_bit, theta, folded: false }
    }
}

/// Observation angle of a box with global yaw `rotation_y` centered at `center`.
pub fn beta_from_rotation_y(rotation_y: f64, center: &Point3) -> ObservationAngle {
    ObservationAngle::from_raw(rotation_y - center.ray_angle())
}

/// Global yaw recovered from an observation angle and the viewing ray.
pub fn rotation_y_from_beta(beta: f64, center: &Point3) -> f64 {
    wrap_angle(beta + center.ray_angle())
}

/// Ground-plane point `(x, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevPoint {
    pub x: f64,
    pub z: f64,
}

impl BevPoint {
    pub fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }
}

fn cross(o: BevPoint, a: BevPoint, b: BevPoint) -> f64 {
    (a.x - o.x) * (b.z - o.z) - (a.z - o.z) * (b.x - o.x)
}

/// Signed shoelace area; positive for counter-clockwise order in (x, z).
pub fn signed_area(points: &[BevPoint]) -> f64 {
    let n = points.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n)
        .map(|i| {
            let (p, q) = (points[i], points[(i + 1) % n]);
            p.x * q.z - q.x * p.z
        })
        .sum::<f64>()
}

/// Rotated rectangle on the ground plane, vertices counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevPolygon {
    pub vertices: [BevPoint; 4],
}

impl BevPolygon {
    /// Rectangle of the given extents centered at `(x, z)`. `length` runs
    /// along the yaw direction, i.e. along +X when `yaw = 0`.
    pub fn rectangle(x: f64, z: f64, width: f64, length: f64, yaw: f64) -> Result<Self> {
        if !(width > 0.0 && length > 0.0) {
            return Err(Error::domain(format!("box extents must be positive ({width} x {length})")));
        }
        let (s, c) = yaw.sin_cos();
        let (hl, hw) = (0.5 * length, 0.5 * width);
        let mut vertices = [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)]
            .map(|(dx, dz)| BevPoint { x: x + c * dx + s * dz, z: z - s * dx + c * dz });
        if signed_area(&vertices) < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }

    pub fn translated(&self, dx: f64, dz: f64) -> Self {
        Self { vertices: self.vertices.map(|p| BevPoint::new(p.x + dx, p.z + dz)) }
    }

    /// Rotates about the origin by `angle` (counter-clockwise in (x, z)).
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { vertices: self.vertices.map(|p| BevPoint::new(c * p.x - s * p.z, s * p.x + c * p.z)) }
    }

    /// Point-in-convex-polygon test, boundary inclusive.
    pub fn contains(&self, p: BevPoint) -> bool {
        (0..4).all(|i| cross(self.vertices[i], self.vertices[(i + 1) % 4], p) >= 0.0)
    }
}

/// Footprint of a box given its global yaw.
pub fn box_corners_bev_yaw(center: &Point3, size: &Size3d, rotation_y: f64) -> Result<BevPolygon> {
    BevPolygon::rectangle(center.x, center.z, size.width, size.length, rotation_y)
}

/// Footprint of a box given its observation angle; the global yaw is
/// recovered from `beta` and the viewing ray through `center`.
pub fn box_corners_bev(center: &Point3, size: &Size3d, beta: f64) -> Result<BevPolygon> {
    if !(center.z > 0.0) {
        return Err(Error::domain(format!("box behind camera (Z = {})", center.z)));
    }
    box_corners_bev_yaw(center, size, rotation_y_from_beta(beta, center))
}

/// Sutherland-Hodgman clip of a convex subject polygon against a convex,
/// counter-clockwise clip polygon.
pub fn clip_convex(subject: &[BevPoint], clip: &[BevPoint]) -> Vec<BevPoint> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (dc, dp) = (cross(a, b, cur), cross(a, b, prev));
            if dc >= 0.0 {
                if dp < 0.0 {
                    output.push(intersect(prev, cur, dp, dc));
                }
                output.push(cur);
            } else if dp >= 0.0 {
                output.push(intersect(prev, cur, dp, dc));
            }
        }
    }
    output
}

// Point where segment p->q crosses the clip line, given signed distances.
fn intersect(p: BevPoint, q: BevPoint, dp: f64, dq: f64) -> BevPoint {
    let t = dp / (dp - dq);
    BevPoint::new(p.x + t * (q.x - p.x), p.z + t * (q.z - p.z))
}

pub fn intersection_area(a: &BevPolygon, b: &BevPolygon) -> f64 {
    signed_area(&clip_convex(&a.vertices, &b.vertices)).abs()
}

/// Intersection over union of two ground-plane footprints.
pub fn bev_iou(a: &BevPolygon, b: &BevPolygon) -> f64 {
    let (area_a, area_b) = (a.area(), b.area());
    if area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    let inter = intersection_area(a, b);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// A 3D box in the camera frame: KITTI bottom-center location, size and yaw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3d {
    pub location: Point3,
    pub size: Size3d,
    pub rotation_y: f64,
}

impl Box3d {
    pub fn new(location: Point3, size: Size3d, rotation_y: f64) -> Self {
        Self { location, size, rotation_y }
    }

    pub fn bev(&self) -> Result<BevPolygon> {
        box_corners_bev_yaw(&self.location, &self.size, self.rotation_y)
    }

    pub fn volume(&self) -> f64 {
        self.size.height * self.size.width * self.size.length
    }

    /// Vertical extent `[top, bottom]`; Y points down and `location` is the
    /// bottom face center.
    pub fn vertical_span(&self) -> (f64, f64) {
        (self.location.y - self.size.height, self.location.y)
    }
}

/// Bird's-eye-view IoU of two boxes; invalid footprints give 0.
pub fn iou_bev(a: &Box3d, b: &Box3d) -> f64 {
    match (a.bev(), b.bev()) {
        (Ok(pa), Ok(pb)) => bev_iou(&pa, &pb),
        _ => 0.0,
    }
}

/// Volumetric IoU: footprint intersection times vertical overlap, over the
/// union volume.
pub fn iou_3d(a: &Box3d, b: &Box3d) -> f64 {
    let (Ok(pa), Ok(pb)) = (a.bev(), b.bev()) else { return 0.0 };
    let (a_top, a_bottom) = a.vertical_span();
    let (b_top, b_bottom) = b.vertical_span();
    let overlap_h = (a_bottom.min(b_bottom) - a_top.max(b_top)).max(0.0);
    let inter = intersection_area(&pa, &pb) * overlap_h;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 || a.size.height <= 0.0 || b.size.height <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}
