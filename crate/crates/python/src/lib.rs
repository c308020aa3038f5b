//! Python bindings for the `msreg` registration library.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use msreg::error::Error;
use msreg::harris::DetectorConfig;
use msreg::pipeline::{ModelChoice, PipelineConfig, RegistrationResult};
use msreg::scale_space::PyramidConfig;
use msreg::synthetic::IntensityMode;
use msreg::transform::ModelKind;

create_exception!(msreg_py, RegistrationError, PyException, "A registration stage failed.");

fn to_py(err: Error) -> PyErr {
    match err {
        Error::IoFailure { .. } | Error::UnsupportedFormat(_) => PyIOError::new_err(err.to_string()),
        Error::TooFewKeypoints { .. }
        | Error::InsufficientMatches(_)
        | Error::InsufficientPoints { .. }
        | Error::DegenerateConfiguration(_)
        | Error::SingularTransform
        | Error::PointAtInfinity => {
            let code = err.exit_code();
            let e = RegistrationError::new_err(err.to_string());
            Python::attach(|py| {
                let _ = e.value(py).setattr("exit_code", code);
            });
            e
        }
        _ => PyValueError::new_err(err.to_string()),
    }
}

/// Grayscale image with `float` pixels, row-major.
#[pyclass(name = "GrayImage", module = "msreg_py")]
struct PyGrayImage {
    inner: msreg::image::GrayImage,
}

#[pymethods]
impl PyGrayImage {
    #[new]
    fn new(width: usize, height: usize, data: Vec<f64>) -> PyResult<Self> {
        msreg::image::GrayImage::new(width, height, data).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn filled(width: usize, height: usize, value: f64) -> Self {
        Self { inner: msreg::image::GrayImage::filled(width, height, value) }
    }

    /// Synthetic dead-leaves texture.
    #[staticmethod]
    #[pyo3(signature = (width, height, seed = 0))]
    fn textured(width: usize, height: usize, seed: u64) -> Self {
        Self { inner: msreg::synthetic::textured_image(width, height, seed) }
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn get(&self, x: usize, y: usize) -> PyResult<f64> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err(format!("pixel ({x}, {y}) outside {:?}", self.inner.dims())));
        }
        Ok(self.inner.get(x, y))
    }

    fn to_list(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn min_max(&self) -> (f64, f64) {
        self.inner.min_max()
    }

    fn __repr__(&self) -> String {
        format!("GrayImage({}x{})", self.inner.width(), self.inner.height())
    }
}

/// 3x3 homogeneous transform mapping moving to fixed coordinates.
#[pyclass(name = "Transform", module = "msreg_py")]
struct PyTransform {
    inner: msreg::transform::TransformModel,
}

#[pymethods]
impl PyTransform {
    #[new]
    #[pyo3(signature = (matrix, kind = "projective"))]
    fn new(matrix: [[f64; 3]; 3], kind: &str) -> PyResult<Self> {
        let kind: ModelKind = kind.parse().map_err(PyValueError::new_err)?;
        Ok(Self { inner: msreg::transform::TransformModel::from_matrix(kind, matrix) })
    }

    #[staticmethod]
    fn identity() -> Self {
        Self { inner: msreg::transform::TransformModel::identity() }
    }

    /// Rotation by `angle` radians and isotropic `scale` about `center`, then translation.
    #[staticmethod]
    #[pyo3(signature = (angle, scale, center = (0.0, 0.0), translation = (0.0, 0.0)))]
    fn similarity(angle: f64, scale: f64, center: (f64, f64), translation: (f64, f64)) -> Self {
        Self { inner: msreg::transform::TransformModel::similarity(angle, scale, center, translation) }
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        let f = std::fs::File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        msreg::transform::TransformModel::read_from(std::io::BufReader::new(f))
            .map(|inner| Self { inner })
            .map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
    }

    fn write(&self, path: &str) -> PyResult<()> {
        let f = std::fs::File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        self.inner.write_to(f).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    #[getter]
    fn matrix(&self) -> [[f64; 3]; 3] {
        self.inner.matrix
    }

    #[getter]
    fn rmse(&self) -> f64 {
        self.inner.rmse
    }

    #[getter]
    fn n_points(&self) -> usize {
        self.inner.n_points
    }

    fn apply(&self, x: f64, y: f64) -> PyResult<(f64, f64)> {
        self.inner.apply((x, y)).map_err(to_py)
    }

    fn inverse(&self) -> PyResult<Self> {
        self.inner.inverse().map(|inner| Self { inner }).map_err(to_py)
    }

    /// `self ∘ first`: apply `first`, then `self`.
    fn compose(&self, first: PyRef<'_, PyTransform>) -> PyResult<Self> {
        self.inner.compose(&first.inner).map(|inner| Self { inner }).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Transform(kind={}, matrix={:?}, rmse={})", self.inner.kind, self.inner.matrix, self.inner.rmse)
    }
}

#[pyclass(name = "Registration", module = "msreg_py")]
struct PyRegistration {
    inner: RegistrationResult,
}

#[pymethods]
impl PyRegistration {
    #[getter]
    fn transform(&self) -> PyTransform {
        PyTransform { inner: self.inner.transform.clone() }
    }

    #[getter]
    fn n_initial(&self) -> usize {
        self.inner.initial_matches.len()
    }

    #[getter]
    fn n_filtered(&self) -> usize {
        self.inner.filtered_matches.len()
    }

    #[getter]
    fn n_fixed_keypoints(&self) -> usize {
        self.inner.fixed_keypoints.len()
    }

    #[getter]
    fn n_moving_keypoints(&self) -> usize {
        self.inner.moving_keypoints.len()
    }

    /// `[((fixed_x, fixed_y), (moving_x, moving_y)), ...]` for the filtered matches.
    fn filtered_pairs(&self) -> Vec<((f64, f64), (f64, f64))> {
        self.inner.filtered_pairs()
    }

    fn timings<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let t = &self.inner.timings;
        let d = PyDict::new(py);
        d.set_item("features_ms", t.features_ms)?;
        d.set_item("matching_ms", t.matching_ms)?;
        d.set_item("filtering_ms", t.filtering_ms)?;
        d.set_item("estimation_ms", t.estimation_ms)?;
        Ok(d)
    }

    /// Scores the result against a known moving-to-fixed transform.
    #[pyo3(signature = (gt, width, height, eps = 2.0))]
    fn evaluate<'py>(&self, py: Python<'py>, gt: PyRef<'_, PyTransform>, width: usize, height: usize, eps: f64) -> PyResult<Bound<'py, PyDict>> {
        let r = msreg::synthetic::evaluate(&self.inner, &gt.inner, (width, height), eps);
        let d = PyDict::new(py);
        d.set_item("n_filtered", r.n_filtered)?;
        d.set_item("n_correct", r.n_correct)?;
        d.set_item("corner_rmse", r.corner_rmse)?;
        d.set_item("success", r.success)?;
        Ok(d)
    }
}

#[pyfunction]
#[pyo3(signature = (path, band = 0))]
fn load_image(path: &str, band: usize) -> PyResult<PyGrayImage> {
    msreg::io::load_image(path, band).map(|inner| PyGrayImage { inner }).map_err(to_py)
}

/// Writes an 8-bit PNG or PGM, chosen by extension.
#[pyfunction]
fn save_image(img: PyRef<'_, PyGrayImage>, path: &str) -> PyResult<()> {
    msreg::io::save_image(&img.inner, path).map_err(to_py)
}

/// Min-max stretch to `[0, 1]`.
#[pyfunction]
fn normalize(img: PyRef<'_, PyGrayImage>) -> PyGrayImage {
    PyGrayImage { inner: msreg::image::normalize(&img.inner) }
}

#[pyfunction]
fn gaussian_blur(img: PyRef<'_, PyGrayImage>, sigma: f64) -> PyResult<PyGrayImage> {
    msreg::image::gaussian_blur(&img.inner, sigma).map(|inner| PyGrayImage { inner }).map_err(to_py)
}

/// Harris keypoints as `(x, y, response)`, strongest first.
#[pyfunction]
#[pyo3(signature = (img, lnms_radius = 5, max_points = 1000, min_points = 500, tensor_sigma = 1.5))]
fn detect(img: PyRef<'_, PyGrayImage>, lnms_radius: usize, max_points: usize, min_points: usize, tensor_sigma: f64) -> PyResult<Vec<(f64, f64, f64)>> {
    let cfg = DetectorConfig { tensor_sigma, lnms_radius, max_points, min_points };
    let kps = msreg::harris::detect(&img.inner, &cfg).map_err(to_py)?;
    Ok(kps.into_iter().map(|k| (k.x, k.y, k.response)).collect())
}

/// Least-squares fit to `[((fixed_x, fixed_y), (moving_x, moving_y)), ...]`.
#[pyfunction]
#[pyo3(signature = (pairs, kind = "affine"))]
fn estimate(pairs: Vec<((f64, f64), (f64, f64))>, kind: &str) -> PyResult<PyTransform> {
    let kind: ModelKind = kind.parse().map_err(PyValueError::new_err)?;
    msreg::transform::estimate(&pairs, kind).map(|inner| PyTransform { inner }).map_err(to_py)
}

/// Resamples `moving` onto a `width x height` fixed-image grid.
#[pyfunction]
fn warp(moving: PyRef<'_, PyGrayImage>, transform: PyRef<'_, PyTransform>, width: usize, height: usize) -> PyResult<PyGrayImage> {
    msreg::transform::warp(&moving.inner, &transform.inner, (width, height)).map(|inner| PyGrayImage { inner }).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (
    fixed, moving, model = "affine", octaves = 3, layers = 4, max_points = 1000, min_points = 500,
    lnms_radius = 5, window = 40, match_threshold = 0.85, max_checks = 200
))]
#[allow(clippy::too_many_arguments)]
fn register(
    py: Python<'_>,
    fixed: PyRef<'_, PyGrayImage>,
    moving: PyRef<'_, PyGrayImage>,
    model: &str,
    octaves: usize,
    layers: usize,
    max_points: usize,
    min_points: usize,
    lnms_radius: usize,
    window: usize,
    match_threshold: f64,
    max_checks: usize,
) -> PyResult<PyRegistration> {
    let mut cfg = PipelineConfig::default();
    cfg.model = model.parse::<ModelChoice>().map_err(PyValueError::new_err)?;
    cfg.pyramid = PyramidConfig::new(octaves, layers);
    cfg.detector = DetectorConfig { lnms_radius, max_points, min_points, ..cfg.detector };
    cfg.window = window;
    cfg.matching.threshold = match_threshold;
    cfg.matching.max_checks = max_checks;
    let (f, m) = (fixed.inner.clone(), moving.inner.clone());
    let res = py.detach(move || msreg::pipeline::register(&f, &m, &cfg));
    res.map(|inner| PyRegistration { inner }).map_err(to_py)
}

/// Builds `(fixed, moving)` from `source` and a moving-to-fixed ground truth.
/// `intensity` is `identity`, `invert`, `gamma[:G]` or `affine[:A,B]`.
#[pyfunction]
#[pyo3(signature = (source, gt, intensity = "identity", noise = 0.0, seed = 0, width = None, height = None))]
#[allow(clippy::too_many_arguments)]
fn synthetic_pair(
    source: PyRef<'_, PyGrayImage>,
    gt: PyRef<'_, PyTransform>,
    intensity: &str,
    noise: f64,
    seed: u64,
    width: Option<usize>,
    height: Option<usize>,
) -> PyResult<(PyGrayImage, PyGrayImage)> {
    let mode: IntensityMode = intensity.parse().map_err(PyValueError::new_err)?;
    let dims = (width.unwrap_or(source.inner.width()), height.unwrap_or(source.inner.height()));
    let p = msreg::synthetic::synthetic_pair(&source.inner, &gt.inner, mode, noise, dims, seed).map_err(to_py)?;
    Ok((PyGrayImage { inner: p.fixed }, PyGrayImage { inner: p.moving }))
}

#[pymodule]
fn msreg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrayImage>()?;
    m.add_class::<PyTransform>()?;
    m.add_class::<PyRegistration>()?;
    m.add("RegistrationError", m.py().get_type::<RegistrationError>())?;
    m.add_function(wrap_pyfunction!(load_image, m)?)?;
    m.add_function(wrap_pyfunction!(save_image, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_blur, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(warp, m)?)?;
    m.add_function(wrap_pyfunction!(register, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_pair, m)?)?;
    Ok(())
}
