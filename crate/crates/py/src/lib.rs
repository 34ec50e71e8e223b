//! Python bindings: images, masks, the preprocessing pipeline, prediction
//! metrics and the histogram probe.

use std::path::PathBuf;

use pyo3::exceptions::{PyFileExistsError, PyFileNotFoundError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cxrprep_core::clahe::{self, ClaheParams};
use cxrprep_core::config::PipelineConfig;
use cxrprep_core::image::{self, BitDepth};
use cxrprep_core::manifest::RaceGroup;
use cxrprep_core::metrics::{self, DisparityMode, RunMetrics};
use cxrprep_core::{mask, pipeline, probe, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::FileNotFound(_) => PyFileNotFoundError::new_err(e.to_string()),
        Error::OutputExists(_) => PyFileExistsError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Grayscale image with 8- or 16-bit samples in row-major order.
#[pyclass(name = "GrayImage", module = "cxrprep", from_py_object)]
#[derive(Clone)]
pub struct PyGrayImage {
    inner: image::GrayImage,
}

#[pymethods]
impl PyGrayImage {
    #[new]
    #[pyo3(signature = (width, height, pixels, bit_depth = 8))]
    fn new(width: usize, height: usize, pixels: Vec<u16>, bit_depth: u32) -> PyResult<Self> {
        let depth = BitDepth::from_bits(bit_depth).map_err(to_py)?;
        let inner = image::GrayImage::from_pixels(width, height, depth, pixels).map_err(to_py)?;
        Ok(PyGrayImage { inner })
    }

    /// Read a PNG or PGM file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = image::load_image(&path).map_err(to_py)?;
        Ok(PyGrayImage { inner })
    }

    /// Write to `path`; the extension picks PNG or PGM.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        let format = image::ImageFormat::from_path(&path)
            .ok_or_else(|| PyValueError::new_err(format!("unknown image extension: {}", path.display())))?;
        image::save_image(&self.inner, &path, format).map_err(to_py)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn bit_depth(&self) -> u32 {
        self.inner.bit_depth().bits()
    }

    fn pixels(&self) -> Vec<u16> {
        self.inner.pixels().to_vec()
    }

    fn get(&self, row: usize, col: usize) -> PyResult<u16> {
        if row >= self.inner.height() || col >= self.inner.width() {
            return Err(PyValueError::new_err(format!("pixel ({row}, {col}) out of range")));
        }
        Ok(self.inner.get(row, col))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "GrayImage({}x{}, {}-bit)",
            self.inner.width(),
            self.inner.height(),
            self.inner.bit_depth().bits()
        )
    }
}

/// Binary lung mask; any non-zero pixel of the source image is foreground.
#[pyclass(name = "BinaryMask", module = "cxrprep", from_py_object)]
#[derive(Clone)]
pub struct PyBinaryMask {
    inner: mask::BinaryMask,
}

#[pymethods]
impl PyBinaryMask {
    #[new]
    fn new(width: usize, height: usize, bits: Vec<bool>) -> PyResult<Self> {
        let inner = mask::BinaryMask::from_bits(width, height, bits).map_err(to_py)?;
        Ok(PyBinaryMask { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = mask::BinaryMask::load(&path).map_err(to_py)?;
        Ok(PyBinaryMask { inner })
    }

    #[staticmethod]
    fn from_image(img: &PyGrayImage) -> Self {
        PyBinaryMask {
            inner: mask::BinaryMask::from_image(&img.inner),
        }
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn count(&self) -> usize {
        self.inner.count()
    }

    fn bits(&self) -> Vec<bool> {
        self.inner.bits().to_vec()
    }

    fn dilate(&self, radius: usize) -> Self {
        PyBinaryMask {
            inner: mask::dilate(&self.inner, radius),
        }
    }

    /// `(row_min, row_max, col_min, col_max)`, inclusive.
    fn bounding_box(&self) -> PyResult<(usize, usize, usize, usize)> {
        let b = mask::bounding_box(&self.inner).map_err(to_py)?;
        Ok((b.row_min, b.row_max, b.col_min, b.col_max))
    }

    fn __repr__(&self) -> String {
        format!(
            "BinaryMask({}x{}, {} set)",
            self.inner.width(),
            self.inner.height(),
            self.inner.count()
        )
    }
}

/// Pipeline settings. Keys and value syntax match the TOML file and the
/// `CXRPREP_<KEY>` environment variables.
#[pyclass(name = "Config", module = "cxrprep", from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**settings))]
    fn new(settings: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = PipelineConfig::default();
        if let Some(settings) = settings {
            for (k, v) in settings.iter() {
                let key: String = k.extract()?;
                let value = v.str()?.to_string();
                let value = match value.as_str() {
                    "True" => "true".to_string(),
                    "False" => "false".to_string(),
                    _ => value,
                };
                inner.set(&key, &value).map_err(to_py)?;
            }
        }
        inner.validate().map_err(to_py)?;
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        let mut inner = PipelineConfig::default();
        inner.apply_file(&path).map_err(to_py)?;
        inner.validate().map_err(to_py)?;
        Ok(PyConfig { inner })
    }

    fn get(&self, key: &str) -> Option<String> {
        self.inner.get(key)
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(to_py)?;
        self.inner.validate().map_err(to_py)
    }

    /// Hash of the settings that affect preprocessed pixels.
    fn prep_hash(&self) -> String {
        self.inner.prep_hash()
    }

    fn canonical(&self) -> String {
        self.inner.canonical()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(method={}, prep_hash={})",
            self.inner.method,
            self.inner.prep_hash()
        )
    }
}

#[pyfunction]
fn downscale(img: &PyGrayImage, width: usize, height: usize) -> PyResult<PyGrayImage> {
    let inner = image::downscale(&img.inner, width, height).map_err(to_py)?;
    Ok(PyGrayImage { inner })
}

#[pyfunction]
fn histogram(img: &PyGrayImage, bins: usize) -> PyResult<Vec<u64>> {
    Ok(image::histogram(&img.inner, bins).map_err(to_py)?.bins().to_vec())
}

#[pyfunction]
#[pyo3(signature = (img, grid_rows = 8, grid_cols = 8, clip_limit = 2.0, bins = 256))]
fn apply_clahe(
    py: Python<'_>,
    img: &PyGrayImage,
    grid_rows: usize,
    grid_cols: usize,
    clip_limit: f64,
    bins: usize,
) -> PyResult<PyGrayImage> {
    let p = ClaheParams {
        grid_cols,
        grid_rows,
        clip_limit,
        bins,
    };
    let inner = py.detach(|| clahe::apply_clahe(&img.inner, &p)).map_err(to_py)?;
    Ok(PyGrayImage { inner })
}

#[pyfunction]
#[pyo3(signature = (img, mask, background = 0))]
fn apply_mask(img: &PyGrayImage, mask: &PyBinaryMask, background: u16) -> PyResult<PyGrayImage> {
    let inner = mask::apply_mask(&img.inner, &mask.inner, background).map_err(to_py)?;
    Ok(PyGrayImage { inner })
}

/// Run one image through the configured method.
#[pyfunction]
#[pyo3(signature = (img, config, mask = None))]
fn process_image(
    py: Python<'_>,
    img: &PyGrayImage,
    config: &PyConfig,
    mask: Option<&PyBinaryMask>,
) -> PyResult<PyGrayImage> {
    let inner = py
        .detach(|| pipeline::process_image(&img.inner, mask.map(|m| &m.inner), &config.inner))
        .map_err(to_py)?;
    Ok(PyGrayImage { inner })
}

/// Tie-aware AUROC (ties count one half).
#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::auroc(&scores, &labels).map_err(to_py)
}

/// Parse and validate a prediction CSV; returns its metadata.
#[pyfunction]
fn read_predictions<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let p = metrics::read_predictions(&path).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("method", p.method.as_str())?;
    d.set_item("seed", p.seed)?;
    d.set_item("dataset", p.dataset.as_str())?;
    d.set_item("labels", p.labels.clone())?;
    let groups: Vec<&str> = p.race_score_groups.iter().map(|g| g.as_str()).collect();
    d.set_item("race_score_groups", groups)?;
    d.set_item("rows", p.rows.len())?;
    Ok(d)
}

/// Race AUROC, macro diagnostic AUROC and group disparity of one run.
#[pyfunction]
#[pyo3(signature = (path, disparity = "pairwise-mean"))]
fn run_metrics<'py>(py: Python<'py>, path: PathBuf, disparity: &str) -> PyResult<Bound<'py, PyDict>> {
    let mode: DisparityMode = disparity.parse().map_err(to_py)?;
    let p = metrics::read_predictions(&path).map_err(to_py)?;
    let m = RunMetrics::compute(&p, mode).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("race_auroc", m.race)?;
    d.set_item("diagnostic_auroc", m.diagnostic)?;
    d.set_item("disparity", m.disparity.map(|x| x.value))?;
    d.set_item("disparity_cells_used", m.disparity.map_or(0, |x| x.cells_used))?;
    d.set_item("disparity_cells_skipped", m.disparity_cells_skipped)?;
    Ok(d)
}

/// 256-bin normalised intensity histogram used by the probe.
#[pyfunction]
#[pyo3(signature = (img, exclude_zero = false))]
fn featurize(img: &PyGrayImage, exclude_zero: bool) -> Vec<f64> {
    probe::featurize(&img.inner, exclude_zero)
}

/// Fit the multinomial logistic probe and return its JSON serialisation.
#[pyfunction]
#[pyo3(signature = (features, groups, learning_rate = 0.1, steps = 2000, l2 = 1e-3))]
fn train_probe(
    py: Python<'_>,
    features: Vec<Vec<f64>>,
    groups: Vec<String>,
    learning_rate: f64,
    steps: usize,
    l2: f64,
) -> PyResult<String> {
    let groups: Vec<RaceGroup> = groups
        .iter()
        .map(|g| g.parse())
        .collect::<Result<_, Error>>()
        .map_err(to_py)?;
    let hyper = probe::ProbeHyper {
        learning_rate,
        steps,
        l2,
        seed: 0,
    };
    let model = py
        .detach(|| probe::train_probe(&features, &groups, &hyper))
        .map_err(to_py)?;
    model.to_json().map_err(to_py)
}

/// Macro one-vs-rest AUROC of a probe (JSON from `train_probe`).
#[pyfunction]
fn probe_auroc(model_json: &str, features: Vec<Vec<f64>>, groups: Vec<String>) -> PyResult<f64> {
    let model = probe::ProbeModel::from_json(model_json).map_err(to_py)?;
    let groups: Vec<RaceGroup> = groups
        .iter()
        .map(|g| g.parse())
        .collect::<Result<_, Error>>()
        .map_err(to_py)?;
    probe::probe_auroc(&model, &features, &groups).map_err(to_py)
}

#[pymodule]
fn cxrprep(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", cxrprep_core::TOOL_VERSION)?;
    m.add_class::<PyGrayImage>()?;
    m.add_class::<PyBinaryMask>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(downscale, m)?)?;
    m.add_function(wrap_pyfunction!(histogram, m)?)?;
    m.add_function(wrap_pyfunction!(apply_clahe, m)?)?;
    m.add_function(wrap_pyfunction!(apply_mask, m)?)?;
    m.add_function(wrap_pyfunction!(process_image, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(read_predictions, m)?)?;
    m.add_function(wrap_pyfunction!(run_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(featurize, m)?)?;
    m.add_function(wrap_pyfunction!(train_probe, m)?)?;
    m.add_function(wrap_pyfunction!(probe_auroc, m)?)?;
    Ok(())
}
