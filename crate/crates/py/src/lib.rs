//! Python bindings: metrics, prompt sampling, boundary distances and
//! checkpoint inference.

use std::path::PathBuf;

use ndarray::{Array2, Array3};
use numpy::{PyArray1, PyArray2, PyArrayMethods, PyReadonlyArray2, PyReadonlyArrayDyn};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use scribcod::fadenet::{Checkpoint, DType, FadeNet};
use scribcod::metrics::{relative_boundary_distances, EvalPair, MetricScores};
use scribcod::pipeline::{PipelineConfig, Predictor};
use scribcod::prompting::{sample_prompts as sample_point_prompts, Polarity, SamplingParams};
use scribcod::raster::{ColorImage, GrayImage, Mask, ScribbleAnnotation};
use scribcod::Error;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        Error::Dimension { .. }
        | Error::EmptyAnnotation(_)
        | Error::InvalidParameter(_)
        | Error::Config(_)
        | Error::Data(_)
        | Error::NoCandidates => PyValueError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

fn array2<T: Copy + numpy::Element>(a: &PyReadonlyArray2<'_, T>) -> Array2<T> {
    let view = a.as_array();
    let (h, w) = view.dim();
    Array2::from_shape_vec((h, w), view.iter().copied().collect()).expect("shape matches element count")
}

fn mask_of(a: &PyReadonlyArray2<'_, bool>) -> Mask {
    array2(a)
}

fn color_image(a: &PyReadonlyArrayDyn<'_, u8>) -> PyResult<ColorImage> {
    let view = a.as_array();
    let shape = view.shape().to_vec();
    let data: Vec<u8> = view.iter().copied().collect();
    match shape.as_slice() {
        [h, w] => {
            let gray = GrayImage::new(Array2::from_shape_vec((*h, *w), data).expect("shape matches")).map_err(to_py)?;
            Ok(ColorImage::from_gray(&gray))
        }
        [h, w, 3] => ColorImage::new(Array3::from_shape_vec((*h, *w, 3), data).expect("shape matches")).map_err(to_py),
        _ => Err(PyValueError::new_err(format!("expected an HxW or HxWx3 uint8 image, got shape {shape:?}"))),
    }
}

/// MAE, S-measure, E-measure and weighted F of a prediction in [0, 1].
#[pyfunction]
fn evaluate_map<'py>(
    py: Python<'py>,
    prediction: PyReadonlyArray2<'py, f64>,
    ground_truth: PyReadonlyArray2<'py, bool>,
) -> PyResult<Bound<'py, PyDict>> {
    let pair = EvalPair::new(array2(&prediction).view(), &mask_of(&ground_truth)).map_err(to_py)?;
    let scores = MetricScores::of(&pair);
    let out = PyDict::new(py);
    out.set_item("mae", scores.mae)?;
    out.set_item("s_measure", scores.s_measure)?;
    out.set_item("e_measure", scores.e_measure)?;
    out.set_item("weighted_f", scores.weighted_f)?;
    Ok(out)
}

/// Entropy-guided point prompts from a scribble map coded 0 (none),
/// 1 (foreground) and 2 (background). Returns `(row, col, positive, entropy)`.
#[pyfunction]
#[pyo3(signature = (image, scribbles, tau=0.5, d_min=10.0, n_fg=5, n_bg=5, window_radius=5))]
#[allow(clippy::too_many_arguments)]
fn sample_prompts(
    image: PyReadonlyArrayDyn<'_, u8>,
    scribbles: PyReadonlyArray2<'_, u8>,
    tau: f64,
    d_min: f64,
    n_fg: usize,
    n_bg: usize,
    window_radius: usize,
) -> PyResult<Vec<(usize, usize, bool, f64)>> {
    let gray = color_image(&image)?.to_gray();
    let annotation = ScribbleAnnotation::from_codes(array2(&scribbles).view()).map_err(to_py)?;
    let params = SamplingParams {
        tau,
        d_min,
        n_fg,
        n_bg,
        window_radius,
    };
    let set = sample_point_prompts("python", &gray, &annotation, &params).map_err(to_py)?;
    Ok(set
        .points
        .iter()
        .map(|p| (p.row, p.col, p.polarity == Polarity::Positive, p.entropy))
        .collect())
}

/// Relative boundary distances of the `pixels` inside `ground_truth`, or
/// `None` for an empty ground truth.
#[pyfunction]
fn boundary_distances<'py>(
    py: Python<'py>,
    pixels: PyReadonlyArray2<'py, bool>,
    ground_truth: PyReadonlyArray2<'py, bool>,
) -> PyResult<Option<Bound<'py, PyArray1<f64>>>> {
    let d = relative_boundary_distances(&mask_of(&pixels), &mask_of(&ground_truth)).map_err(to_py)?;
    Ok(d.map(|v| PyArray1::from_vec(py, v)))
}

/// The full-scale or toy preset as TOML.
#[pyfunction]
#[pyo3(signature = (toy=false))]
fn default_config(toy: bool) -> PyResult<String> {
    PipelineConfig::preset(toy).to_toml_string().map_err(to_py)
}

/// A trained network restored from a checkpoint.
#[pyclass(frozen)]
struct Network {
    net: FadeNet,
}

#[pymethods]
impl Network {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let net = Checkpoint::load(&path)
            .and_then(|c| c.build_network(DType::F32))
            .map_err(to_py)?;
        Ok(Self { net })
    }

    /// Foreground probability at the input resolution.
    fn predict<'py>(&self, py: Python<'py>, image: PyReadonlyArrayDyn<'py, u8>) -> PyResult<Bound<'py, PyArray2<f64>>> {
        let img = color_image(&image)?;
        let (h, w) = img.dim();
        let map = py
            .allow_threads(|| Predictor::predict(&self.net, "python", &img))
            .map_err(to_py)?;
        PyArray1::from_vec(py, map.into_iter().collect()).reshape([h, w])
    }

    #[getter]
    fn image_size(&self) -> usize {
        self.net.config().image_size
    }
}

#[pymodule]
fn scribcod_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(evaluate_map, m)?)?;
    m.add_function(wrap_pyfunction!(sample_prompts, m)?)?;
    m.add_function(wrap_pyfunction!(boundary_distances, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_class::<Network>()?;
    Ok(())
}
