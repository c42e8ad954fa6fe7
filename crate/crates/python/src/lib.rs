//! Python bindings for the mono3d toolkit.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mono3d::codec::{self, GridCell, PresetSize, RawPrediction};
use mono3d::eval::{self, Difficulty, EvalConfig, Interpolation, IouMode};
use mono3d::geometry::{self, BevPolygon, PixelPoint, Point3, Size3d};
use mono3d::kitti_io::{self, GroundTruthObject};
use mono3d::losses::{self, LossValue};
use mono3d::nms::{self, NmsParams};
use mono3d::stratify::{self, SizeAxis};

fn py_err(e: mono3d::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Pinhole intrinsics of the left color camera.
#[pyclass(name = "CameraCalib", frozen, from_py_object)]
#[derive(Clone)]
struct PyCameraCalib {
    inner: kitti_io::CameraCalib,
}

#[pymethods]
impl PyCameraCalib {
    #[new]
    fn new(fu: f64, fv: f64, cu: f64, cv: f64) -> PyResult<Self> {
        kitti_io::CameraCalib::from_intrinsics(fu, fv, cu, cv).map(|inner| Self { inner }).map_err(py_err)
    }

    /// Parses the `P2` row of a KITTI calibration file.
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        kitti_io::parse_calib_file(text).map(|inner| Self { inner }).map_err(py_err)
    }

    #[getter]
    fn fu(&self) -> f64 {
        self.inner.fu
    }

    #[getter]
    fn fv(&self) -> f64 {
        self.inner.fv
    }

    #[getter]
    fn cu(&self) -> f64 {
        self.inner.cu
    }

    #[getter]
    fn cv(&self) -> f64 {
        self.inner.cv
    }

    fn project(&self, x: f64, y: f64, z: f64) -> PyResult<(f64, f64)> {
        let p = geometry::project(&Point3::new(x, y, z), &self.inner).map_err(py_err)?;
        Ok((p.u, p.v))
    }

    fn back_project(&self, u: f64, v: f64, z: f64) -> PyResult<(f64, f64, f64)> {
        let p = geometry::back_project(PixelPoint::new(u, v), z, &self.inner).map_err(py_err)?;
        Ok((p.x, p.y, p.z))
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!("CameraCalib(fu={}, fv={}, cu={}, cv={})", c.fu, c.fv, c.cu, c.cv)
    }
}

fn object_dict<'py>(py: Python<'py>, o: &GroundTruthObject) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("class_name", &o.class_name)?;
    d.set_item("truncation", o.truncation)?;
    d.set_item("occlusion", o.occlusion)?;
    d.set_item("alpha", o.alpha)?;
    d.set_item("bbox", (o.bbox.left, o.bbox.top, o.bbox.right, o.bbox.bottom))?;
    d.set_item("size", (o.size.height, o.size.width, o.size.length))?;
    d.set_item("location", (o.location.x, o.location.y, o.location.z))?;
    d.set_item("rotation_y", o.rotation_y)?;
    d.set_item("difficulty", eval::classify_difficulty(o).name())?;
    Ok(d)
}

/// Parses a KITTI label file into a list of dicts.
#[pyfunction]
fn parse_label_file<'py>(py: Python<'py>, text: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let objects = kitti_io::parse_label_file(text).map_err(py_err)?;
    objects.iter().map(|o| object_dict(py, o)).collect()
}

/// Parses a KITTI detection file into a list of dicts with a `score` key.
#[pyfunction]
fn parse_detection_file<'py>(py: Python<'py>, text: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let dets = kitti_io::parse_detection_file(text).map_err(py_err)?;
    dets.iter()
        .map(|d| {
            let dict = object_dict(py, &d.object)?;
            dict.set_item("score", d.score)?;
            Ok(dict)
        })
        .collect()
}

/// Folds `rotation_y - atan2(x, z)`; returns `(beta, alpha_bit, theta, folded)`.
#[pyfunction]
fn beta_from_rotation_y(rotation_y: f64, x: f64, z: f64) -> (f64, u8, f64, bool) {
    let a = geometry::beta_from_rotation_y(rotation_y, &Point3::new(x, 0.0, z));
    (a.beta, a.alpha_bit, a.theta, a.folded)
}

type BevBox = (f64, f64, f64, f64, f64);

fn rectangle(b: BevBox) -> PyResult<BevPolygon> {
    BevPolygon::rectangle(b.0, b.1, b.2, b.3, b.4).map_err(py_err)
}

/// BEV IoU of two boxes given as `(x, z, width, length, rotation_y)`.
#[pyfunction]
fn bev_iou(a: BevBox, b: BevBox) -> PyResult<f64> {
    Ok(geometry::bev_iou(&rectangle(a)?, &rectangle(b)?))
}

/// Footprint corners of a box `(x, z, width, length, rotation_y)`, counter-clockwise.
#[pyfunction]
fn bev_corners(b: BevBox) -> PyResult<Vec<(f64, f64)>> {
    Ok(rectangle(b)?.vertices.iter().map(|p| (p.x, p.z)).collect())
}

/// Pyramid levels of the default configuration responsible for depth `z`.
#[pyfunction]
fn levels_for_depth(z: f64) -> Vec<usize> {
    stratify::default_config().levels_for_depth(z)
}

/// `(index, stride, z_min, z_max)` of every default level.
#[pyfunction]
fn default_levels() -> Vec<(usize, u32, f64, f64)> {
    stratify::default_config().levels().iter().map(|l| (l.index, l.stride, l.z_min, l.z_max)).collect()
}

/// Depth of a camera-facing object from its 2D width (or height).
#[pyfunction]
#[pyo3(signature = (extent_2d, size, calib, axis = "width"))]
fn depth_from_2d_size(extent_2d: f64, size: (f64, f64, f64), calib: &PyCameraCalib, axis: &str) -> PyResult<f64> {
    let axis = match axis {
        "width" => SizeAxis::Width,
        "height" => SizeAxis::Height,
        other => return Err(PyValueError::new_err(format!("unknown axis {other:?}"))),
    };
    stratify::depth_from_2d_size(extent_2d, axis, &Size3d::new(size.0, size.1, size.2), &calib.inner).map_err(py_err)
}

fn cell(x: f64, y: f64, level: usize) -> PyResult<GridCell> {
    let cfg = stratify::default_config();
    let l = cfg.level(level).ok_or_else(|| PyValueError::new_err(format!("no level {level}")))?;
    Ok(GridCell::new(x, y, *l))
}

type Raw = (f64, f64, f64, f64, f64, f64, f64, f64);
type Triple = (f64, f64, f64);

/// Decodes `(u, v, log2_depth, log_w, log_l, log_h, heading, theta)` at a
/// cell of a default level. Returns `((x, y, z), (h, w, l), beta)`.
#[pyfunction]
fn decode(
    raw: Raw,
    cell_x: f64,
    cell_y: f64,
    level: usize,
    preset: (f64, f64, f64),
    calib: &PyCameraCalib,
) -> PyResult<(Triple, Triple, f64)> {
    let raw = RawPrediction {
        u_offset: raw.0,
        v_offset: raw.1,
        log2_depth: raw.2,
        log_width: raw.3,
        log_length: raw.4,
        log_height: raw.5,
        heading: raw.6,
        theta: raw.7,
    };
    let preset = PresetSize::new(preset.0, preset.1, preset.2).map_err(py_err)?;
    let d = codec::decode(&raw, &cell(cell_x, cell_y, level)?, &preset, &calib.inner).map_err(py_err)?;
    Ok(((d.center.x, d.center.y, d.center.z), (d.size.height, d.size.width, d.size.length), d.beta))
}

/// Encodes a box `(location, size (h, w, l), rotation_y)` at a cell.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn encode(
    location: (f64, f64, f64),
    size: (f64, f64, f64),
    rotation_y: f64,
    cell_x: f64,
    cell_y: f64,
    level: usize,
    preset: (f64, f64, f64),
    calib: &PyCameraCalib,
) -> PyResult<Raw> {
    let gt = GroundTruthObject {
        class_name: String::new(),
        truncation: 0.0,
        occlusion: 0,
        alpha: 0.0,
        bbox: kitti_io::Bbox2d::new(0.0, 0.0, 1.0, 1.0),
        size: Size3d::new(size.0, size.1, size.2),
        location: Point3::new(location.0, location.1, location.2),
        rotation_y,
    };
    let preset = PresetSize::new(preset.0, preset.1, preset.2).map_err(py_err)?;
    let r = codec::encode(&gt, &cell(cell_x, cell_y, level)?, &preset, &calib.inner).map_err(py_err)?;
    Ok((r.u_offset, r.v_offset, r.log2_depth, r.log_width, r.log_length, r.log_height, r.heading, r.theta))
}

fn loss(l: LossValue) -> (f64, Vec<f64>) {
    (l.value, l.gradient)
}

/// Returns `(value, [d/d theta_hat, d/d alpha_hat])`.
#[pyfunction]
fn angle_loss_mds(theta: f64, theta_hat: f64, alpha: f64, alpha_hat: f64) -> (f64, Vec<f64>) {
    loss(losses::angle_loss_mds(theta, theta_hat, alpha, alpha_hat))
}

#[pyfunction]
fn angle_loss_second(beta: f64, beta_hat: f64) -> (f64, Vec<f64>) {
    loss(losses::angle_loss_second(beta, beta_hat))
}

#[pyfunction]
fn angle_loss_naive(beta: f64, beta_hat: f64) -> (f64, Vec<f64>) {
    loss(losses::angle_loss_naive(beta, beta_hat))
}

#[pyfunction]
#[pyo3(signature = (p, target, exponent = losses::DEFAULT_QFL_EXPONENT))]
fn qfl(p: f64, target: f64, exponent: f64) -> PyResult<(f64, Vec<f64>)> {
    losses::qfl(p, target, exponent).map(loss).map_err(py_err)
}

/// Runs soft-NMS plus density activation on the text of a detection file
/// and returns the filtered file text.
#[pyfunction]
#[pyo3(signature = (text, sigma = 0.9, gamma = 20.0, score_floor = 0.01, top_k = None))]
fn nms_filter(text: &str, sigma: f64, gamma: f64, score_floor: f64, top_k: Option<usize>) -> PyResult<String> {
    let dets = kitti_io::parse_detection_file(text).map_err(py_err)?;
    let kept = nms::pipeline(&dets, &NmsParams { sigma, gamma, score_floor, top_k });
    Ok(kitti_io::write_detection_file(&kept))
}

/// AP over frames given as label/detection file texts. Returns `None` when
/// no ground truth counts.
#[pyfunction]
#[pyo3(signature = (gt_texts, det_texts, class_name = "Car", difficulty = "moderate", iou = 0.7, mode = "bev", interp = 40))]
fn evaluate_ap(
    gt_texts: Vec<String>,
    det_texts: Vec<String>,
    class_name: &str,
    difficulty: &str,
    iou: f64,
    mode: &str,
    interp: u32,
) -> PyResult<Option<f64>> {
    let gts = gt_texts.iter().map(|t| kitti_io::parse_label_file(t)).collect::<Result<Vec<_>, _>>().map_err(py_err)?;
    let dets =
        det_texts.iter().map(|t| kitti_io::parse_detection_file(t)).collect::<Result<Vec<_>, _>>().map_err(py_err)?;
    let difficulty = match difficulty {
        "easy" => Difficulty::Easy,
        "moderate" => Difficulty::Moderate,
        "hard" => Difficulty::Hard,
        other => return Err(PyValueError::new_err(format!("unknown difficulty {other:?}"))),
    };
    let mode: IouMode = mode.parse().map_err(PyValueError::new_err)?;
    let interpolation: Interpolation = interp.to_string().parse().map_err(PyValueError::new_err)?;
    let cfg = EvalConfig { class_name: class_name.to_string(), difficulty, iou_threshold: iou, mode, interpolation };
    Ok(eval::evaluate_ap(&gts, &dets, &cfg).map_err(py_err)?.ap)
}

#[pymodule]
fn mono3d_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCameraCalib>()?;
    m.add_function(wrap_pyfunction!(parse_label_file, m)?)?;
    m.add_function(wrap_pyfunction!(parse_detection_file, m)?)?;
    m.add_function(wrap_pyfunction!(beta_from_rotation_y, m)?)?;
    m.add_function(wrap_pyfunction!(bev_iou, m)?)?;
    m.add_function(wrap_pyfunction!(bev_corners, m)?)?;
    m.add_function(wrap_pyfunction!(levels_for_depth, m)?)?;
    m.add_function(wrap_pyfunction!(default_levels, m)?)?;
    m.add_function(wrap_pyfunction!(depth_from_2d_size, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(angle_loss_mds, m)?)?;
    m.add_function(wrap_pyfunction!(angle_loss_second, m)?)?;
    m.add_function(wrap_pyfunction!(angle_loss_naive, m)?)?;
    m.add_function(wrap_pyfunction!(qfl, m)?)?;
    m.add_function(wrap_pyfunction!(nms_filter, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_ap, m)?)?;
    Ok(())
}
