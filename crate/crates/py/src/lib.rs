//! Python bindings for the refinement toolkit, exposed as the `crf_refine`
//! extension module.
//!
//! The surface mirrors the core pipeline: `refine` and `infer_q` run dense
//! CRF mean-field refinement on NumPy arrays, `dice`/`confusion`/`case_dice`
//! and `paired_t_test` score predictions, `assign_folds` builds the
//! case-level protocol, `synth_fixtures` generates the synthetic corpus,
//! `hu_window` maps raw HU slices onto the byte scale, and the `read_*` /
//! `write_*` pairs speak the on-disk formats.
//!
//! Array conventions match the core layouts exactly: images `(h, w)`
//! float32, probability maps and posteriors `(h, w, labels)` float32 with
//! labels innermost, masks `(h, w)` uint8. Inputs may carry any strides
//! (they are copied in logical order on ingest); returned arrays are
//! freshly owned and C-contiguous.

use std::path::PathBuf;

use numpy::ndarray::{Array2, Array3, ArrayD, IxDyn};
use numpy::{
    IntoPyArray, PyArray2, PyArray3, PyReadonlyArray2, PyReadonlyArray3, PyReadonlyArrayDyn,
};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use crf_refine_core::crf::unary_from_probabilities;
use crf_refine_core::{
    mean_field_infer, refine_segmentation_with, CrfParams, DenseTensor, Error, FilterMode,
    LabelMask, ProbabilityMap, RefineOptions, SliceImage, TensorData, DEFAULT_HU_CENTER,
    DEFAULT_HU_WIDTH,
};

/// IO failures become `IOError`; every other core error is a `ValueError`.
fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn image_from_py(a: &PyReadonlyArray2<'_, f32>) -> PyResult<SliceImage> {
    let v = a.as_array();
    let (h, w) = v.dim();
    SliceImage::new(h, w, v.iter().copied().collect()).map_err(to_py_err)
}

fn prob_from_py(a: &PyReadonlyArray3<'_, f32>) -> PyResult<ProbabilityMap> {
    let v = a.as_array();
    let (h, w, labels) = v.dim();
    ProbabilityMap::new(h, w, labels, v.iter().copied().collect()).map_err(to_py_err)
}

/// Masks arrive without a label count; infer one that covers every value
/// and keeps at least two classes so binary scoring always has a positive.
fn mask_from_py(a: &PyReadonlyArray2<'_, u8>) -> PyResult<LabelMask> {
    let v = a.as_array();
    let (h, w) = v.dim();
    let data: Vec<u8> = v.iter().copied().collect();
    let labels = data
        .iter()
        .copied()
        .max()
        .map_or(2, |m| (m as usize + 1).max(2));
    LabelMask::new(h, w, labels, data).map_err(to_py_err)
}

fn mask_to_py<'py>(py: Python<'py>, mask: &LabelMask) -> Bound<'py, PyArray2<u8>> {
    Array2::from_shape_vec((mask.height(), mask.width()), mask.label().to_vec())
        .expect("mask buffer length matches its dimensions")
        .into_pyarray(py)
}

fn prob_to_py<'py>(py: Python<'py>, prob: &ProbabilityMap) -> Bound<'py, PyArray3<f32>> {
    Array3::from_shape_vec(
        (prob.height(), prob.width(), prob.labels()),
        prob.prob().to_vec(),
    )
    .expect("probability buffer length matches its dimensions")
    .into_pyarray(py)
}

fn image_to_py<'py>(py: Python<'py>, image: &SliceImage) -> Bound<'py, PyArray2<f32>> {
    Array2::from_shape_vec((image.height(), image.width()), image.intensity().to_vec())
        .expect("image buffer length matches its dimensions")
        .into_pyarray(py)
}

#[allow(clippy::too_many_arguments)]
fn build_params(
    w1: f32,
    w2: f32,
    sigma_alpha: f32,
    sigma_beta: f32,
    sigma_gamma: f32,
    iterations: u32,
) -> PyResult<CrfParams> {
    let params = CrfParams {
        w1,
        w2,
        sigma_alpha,
        sigma_beta,
        sigma_gamma,
        iterations,
    };
    params.validate().map_err(to_py_err)?;
    Ok(params)
}

fn parse_filter(name: &str) -> PyResult<FilterMode> {
    match name {
        "lattice" => Ok(FilterMode::Lattice),
        "brute" => Ok(FilterMode::BruteForce),
        other => Err(PyValueError::new_err(format!(
            "unknown filter '{other}', expected 'lattice' or 'brute'"
        ))),
    }
}

/// Refines a probability map into a label mask.
///
/// `image` is `(h, w)` float32 on the byte scale, `prob` is
/// `(h, w, labels)` float32. Returns the `(h, w)` uint8 refined mask.
#[pyfunction]
#[pyo3(signature = (image, prob, *, w1 = 3.0, w2 = 0.0, sigma_alpha = 5.0, sigma_beta = 26.0,
                    sigma_gamma = 3.0, iterations = 10, floor = 1e-8, filter = "lattice"))]
#[allow(clippy::too_many_arguments)]
fn refine<'py>(
    py: Python<'py>,
    image: PyReadonlyArray2<'py, f32>,
    prob: PyReadonlyArray3<'py, f32>,
    w1: f32,
    w2: f32,
    sigma_alpha: f32,
    sigma_beta: f32,
    sigma_gamma: f32,
    iterations: u32,
    floor: f32,
    filter: &str,
) -> PyResult<Bound<'py, PyArray2<u8>>> {
    let img = image_from_py(&image)?;
    let pm = prob_from_py(&prob)?;
    let params = build_params(w1, w2, sigma_alpha, sigma_beta, sigma_gamma, iterations)?;
    let opts = RefineOptions {
        floor,
        mode: parse_filter(filter)?,
    };
    let mask = py
        .detach(|| refine_segmentation_with(&pm, &img, &params, &opts))
        .map_err(to_py_err)?;
    Ok(mask_to_py(py, &mask))
}

/// Runs mean-field inference and returns the full posterior instead of its
/// argmax: `(h, w, labels)` float32, each pixel a distribution.
#[pyfunction]
#[pyo3(signature = (image, prob, *, w1 = 3.0, w2 = 0.0, sigma_alpha = 5.0, sigma_beta = 26.0,
                    sigma_gamma = 3.0, iterations = 10, floor = 1e-8, filter = "lattice"))]
#[allow(clippy::too_many_arguments)]
fn infer_q<'py>(
    py: Python<'py>,
    image: PyReadonlyArray2<'py, f32>,
    prob: PyReadonlyArray3<'py, f32>,
    w1: f32,
    w2: f32,
    sigma_alpha: f32,
    sigma_beta: f32,
    sigma_gamma: f32,
    iterations: u32,
    floor: f32,
    filter: &str,
) -> PyResult<Bound<'py, PyArray3<f32>>> {
    let img = image_from_py(&image)?;
    let pm = prob_from_py(&prob)?;
    let params = build_params(w1, w2, sigma_alpha, sigma_beta, sigma_gamma, iterations)?;
    let mode = parse_filter(filter)?;
    let q = py
        .detach(|| {
            let unary = unary_from_probabilities(&pm, floor)?;
            mean_field_infer(&unary, &img, &params, mode)
        })
        .map_err(to_py_err)?;
    Ok(prob_to_py(py, &q))
}

/// Per-pixel argmax of a `(h, w, labels)` posterior, ties to the lowest
/// label index (the same rule the refinement pipeline uses).
#[pyfunction]
fn argmax_labels<'py>(
    py: Python<'py>,
    q: PyReadonlyArray3<'py, f32>,
) -> PyResult<Bound<'py, PyArray2<u8>>> {
    let pm = prob_from_py(&q)?;
    Ok(mask_to_py(py, &crf_refine_core::argmax_labels(&pm)))
}

/// Dice similarity of two `(h, w)` uint8 masks against a positive label.
#[pyfunction]
#[pyo3(signature = (pred, truth, positive_label = 1))]
fn dice(
    pred: PyReadonlyArray2<'_, u8>,
    truth: PyReadonlyArray2<'_, u8>,
    positive_label: u8,
) -> PyResult<f64> {
    let counts = crf_refine_core::confusion(
        &mask_from_py(&pred)?,
        &mask_from_py(&truth)?,
        positive_label,
    )
    .map_err(to_py_err)?;
    Ok(crf_refine_core::dice(&counts))
}

/// Confusion counts of a prediction against a truth mask, as a dict with
/// keys `tp`, `tn`, `fp`, `fn`.
#[pyfunction]
#[pyo3(signature = (pred, truth, positive_label = 1))]
fn confusion<'py>(
    py: Python<'py>,
    pred: PyReadonlyArray2<'py, u8>,
    truth: PyReadonlyArray2<'py, u8>,
    positive_label: u8,
) -> PyResult<Bound<'py, PyDict>> {
    let counts = crf_refine_core::confusion(
        &mask_from_py(&pred)?,
        &mask_from_py(&truth)?,
        positive_label,
    )
    .map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("tp", counts.true_positives)?;
    d.set_item("tn", counts.true_negatives)?;
    d.set_item("fp", counts.false_positives)?;
    d.set_item("fn", counts.false_negatives)?;
    Ok(d)
}

/// Volumetric Dice for one case: confusion counts are pooled across all
/// `(pred, truth)` slice pairs before Dice is applied once, which is not
/// the mean of the per-slice scores.
#[pyfunction]
#[pyo3(signature = (preds, truths, positive_label = 1))]
fn case_dice(
    preds: Vec<PyReadonlyArray2<'_, u8>>,
    truths: Vec<PyReadonlyArray2<'_, u8>>,
    positive_label: u8,
) -> PyResult<f64> {
    if preds.len() != truths.len() {
        return Err(PyValueError::new_err(format!(
            "{} predictions vs {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let preds: Vec<LabelMask> = preds.iter().map(mask_from_py).collect::<PyResult<_>>()?;
    let truths: Vec<LabelMask> = truths.iter().map(mask_from_py).collect::<PyResult<_>>()?;
    let pairs: Vec<(&LabelMask, &LabelMask)> = preds.iter().zip(&truths).collect();
    let score = crf_refine_core::case_dice("case", &pairs, positive_label).map_err(to_py_err)?;
    Ok(score.dsc)
}

/// Two-tailed paired t-test over per-case score pairs; returns `(t, p, n)`.
#[pyfunction]
fn paired_t_test(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, usize)> {
    let r = crf_refine_core::paired_t_test(&a, &b).map_err(to_py_err)?;
    Ok((r.t, r.p, r.n))
}

/// Deterministic balanced k-fold split of case ids; returns
/// `{case_id: fold}`. Depends only on the id set, `k`, and `seed`.
#[pyfunction]
#[pyo3(signature = (case_ids, k = 5, seed = 0))]
fn assign_folds(
    case_ids: Vec<String>,
    k: usize,
    seed: u64,
) -> PyResult<std::collections::BTreeMap<String, usize>> {
    let assignment = crf_refine_core::assign_folds(&case_ids, k, seed).map_err(to_py_err)?;
    Ok(assignment.mapping().clone())
}

/// One synthetic slice: windowed image, classifier-like probability map,
/// and ground truth, plus its corpus identity.
#[pyclass(frozen)]
struct Fixture {
    inner: crf_refine_core::Fixture,
}

#[pymethods]
impl Fixture {
    /// `(h, w)` float32 intensity image on the byte scale.
    #[getter]
    fn image<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<f32>> {
        image_to_py(py, &self.inner.image)
    }

    /// `(h, w, labels)` float32 probability map.
    #[getter]
    fn prob<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray3<f32>> {
        prob_to_py(py, &self.inner.prob)
    }

    /// `(h, w)` uint8 ground-truth mask.
    #[getter]
    fn truth<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<u8>> {
        mask_to_py(py, &self.inner.truth)
    }

    #[getter]
    fn case_id(&self) -> &str {
        &self.inner.case_id
    }

    #[getter]
    fn slice_index(&self) -> usize {
        self.inner.slice_index
    }

    fn __repr__(&self) -> String {
        format!(
            "Fixture(case_id='{}', slice_index={}, {}x{}, {} labels)",
            self.inner.case_id,
            self.inner.slice_index,
            self.inner.image.height(),
            self.inner.image.width(),
            self.inner.prob.labels()
        )
    }
}

/// Generates a seeded corpus of synthetic fixtures, one case per fixture.
/// `noise_level` is the fraction of probability-map pixels whose evidence
/// is corrupted.
#[pyfunction]
#[pyo3(signature = (seed, count, height, width, noise_level = 0.05))]
fn synth_fixtures(
    seed: u64,
    count: usize,
    height: usize,
    width: usize,
    noise_level: f64,
) -> PyResult<Vec<Fixture>> {
    let fixtures = crf_refine_core::synth_fixtures(seed, count, height, width, noise_level)
        .map_err(to_py_err)?;
    Ok(fixtures
        .into_iter()
        .map(|inner| Fixture { inner })
        .collect())
}

/// Windows a raw `(h, w)` float32 HU slice onto the byte scale with the
/// given center/width; defaults are the lung window.
#[pyfunction]
#[pyo3(signature = (raw, *, center = DEFAULT_HU_CENTER, width = DEFAULT_HU_WIDTH))]
fn hu_window<'py>(
    py: Python<'py>,
    raw: PyReadonlyArray2<'py, f32>,
    center: f32,
    width: f32,
) -> PyResult<Bound<'py, PyArray2<f32>>> {
    let v = raw.as_array();
    let (h, w) = v.dim();
    let data: Vec<f32> = v.iter().copied().collect();
    let image = crf_refine_core::hu_window(h, w, &data, center, width).map_err(to_py_err)?;
    Ok(image_to_py(py, &image))
}

/// Reads a DTEN tensor file into a NumPy array of its native dtype
/// (float32, uint8, or uint16).
#[pyfunction]
fn read_tensor<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let t = crf_refine_core::read_tensor(&path).map_err(to_py_err)?;
    let dims = IxDyn(t.dims());
    let arr = match t.data() {
        TensorData::F32(v) => ArrayD::from_shape_vec(dims, v.clone())
            .expect("tensor buffer length matches its dimensions")
            .into_pyarray(py)
            .into_any(),
        TensorData::U8(v) => ArrayD::from_shape_vec(dims, v.clone())
            .expect("tensor buffer length matches its dimensions")
            .into_pyarray(py)
            .into_any(),
        TensorData::U16(v) => ArrayD::from_shape_vec(dims, v.clone())
            .expect("tensor buffer length matches its dimensions")
            .into_pyarray(py)
            .into_any(),
    };
    Ok(arr)
}

/// Writes a float32, uint8, or uint16 NumPy array as a DTEN tensor file.
#[pyfunction]
fn write_tensor(path: PathBuf, array: &Bound<'_, PyAny>) -> PyResult<()> {
    let tensor = if let Ok(a) = array.extract::<PyReadonlyArrayDyn<'_, f32>>() {
        let v = a.as_array();
        DenseTensor::from_f32(v.shape().to_vec(), v.iter().copied().collect())
    } else if let Ok(a) = array.extract::<PyReadonlyArrayDyn<'_, u8>>() {
        let v = a.as_array();
        DenseTensor::from_u8(v.shape().to_vec(), v.iter().copied().collect())
    } else if let Ok(a) = array.extract::<PyReadonlyArrayDyn<'_, u16>>() {
        let v = a.as_array();
        DenseTensor::from_u16(v.shape().to_vec(), v.iter().copied().collect())
    } else {
        return Err(PyValueError::new_err(
            "expected a float32, uint8, or uint16 array",
        ));
    }
    .map_err(to_py_err)?;
    crf_refine_core::write_tensor(&tensor, &path).map_err(to_py_err)
}

/// Reads a PGM mask file into a `(h, w)` uint8 array.
#[pyfunction]
fn read_mask<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyArray2<u8>>> {
    let mask = crf_refine_core::read_pgm_mask(&path).map_err(to_py_err)?;
    Ok(mask_to_py(py, &mask))
}

/// Writes a `(h, w)` uint8 mask as a PGM file.
#[pyfunction]
fn write_mask(path: PathBuf, mask: PyReadonlyArray2<'_, u8>) -> PyResult<()> {
    crf_refine_core::write_pgm_mask(&mask_from_py(&mask)?, &path).map_err(to_py_err)
}


#[pymodule]
fn crf_refine(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Fixture>()?;
    m.add_function(wrap_pyfunction!(refine, m)?)?;
    m.add_function(wrap_pyfunction!(infer_q, m)?)?;
    m.add_function(wrap_pyfunction!(argmax_labels, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(confusion, m)?)?;
    m.add_function(wrap_pyfunction!(case_dice, m)?)?;
    m.add_function(wrap_pyfunction!(paired_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(assign_folds, m)?)?;
    m.add_function(wrap_pyfunction!(synth_fixtures, m)?)?;
    m.add_function(wrap_pyfunction!(hu_window, m)?)?;
    m.add_function(wrap_pyfunction!(read_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(write_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(read_mask, m)?)?;
    m.add_function(wrap_pyfunction!(write_mask, m)?)?;
    Ok(())
}
