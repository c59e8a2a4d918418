//! Python bindings over the core pipeline: maps, the classifier, and the
//! measures that sit between them.

use cellomaps_core::eval::SplitMode;
use cellomaps_core::ingest::{parse_nuclei_json, scale_coordinates};
use cellomaps_core::map::{build_cellomap, CellOMap, ChannelSpec};
use cellomaps_core::nn::focal::{focal_loss as core_focal_loss, FocalLossParams};
use cellomaps_core::nn::model::{load_checkpoint, save_checkpoint, ClassifierModel};
use cellomaps_core::synth::{generate_corpus, SynthConfig};
use cellomaps_core::types::{CellClass, PatternClass, PATTERN_COUNT};
use cellomaps_core::{codec, entropy, eval, pipeline, render};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use std::path::Path;
use std::str::FromStr;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_channels(names: Option<Vec<String>>) -> PyResult<ChannelSpec> {
    let Some(names) = names else {
        return Ok(ChannelSpec::default());
    };
    let mut classes = Vec::with_capacity(names.len());
    for name in &names {
        classes.push(
            CellClass::from_str(name)
                .map_err(|()| value_err(format!("unknown cell class {name:?}")))?,
        );
    }
    ChannelSpec::new(classes).map_err(value_err)
}

/// Bit-packed multi-channel centroid map of one slide or tile.
#[pyclass(name = "CellOMap", frozen)]
struct PyCellOMap {
    inner: CellOMap,
}

#[pymethods]
impl PyCellOMap {
    /// Decodes a CLOM container. The container carries no identity, so
    /// `slide_id` and `patient_id` come back empty.
    #[staticmethod]
    fn from_clom(bytes: &[u8]) -> PyResult<PyCellOMap> {
        codec::decode(bytes)
            .map(|inner| PyCellOMap { inner })
            .map_err(value_err)
    }

    /// Parses nuclei-detection JSON, rescales it to `target_mpp`, and
    /// rasterizes the requested channels (default Neo/NonNeo/Connective).
    #[staticmethod]
    #[pyo3(signature = (text, target_mpp=2.0, channels=None))]
    fn from_nuclei_json(
        text: &str,
        target_mpp: f64,
        channels: Option<Vec<String>>,
    ) -> PyResult<PyCellOMap> {
        let spec = parse_channels(channels)?;
        let set = parse_nuclei_json(text).map_err(value_err)?;
        let set = scale_coordinates(&set, target_mpp).map_err(value_err)?;
        Ok(PyCellOMap {
            inner: build_cellomap(&set, &spec),
        })
    }

    fn to_clom<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &codec::encode(&self.inner))
    }

    #[getter]
    fn width(&self) -> u32 {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.height
    }

    #[getter]
    fn mpp(&self) -> f64 {
        self.inner.mpp
    }

    #[getter]
    fn slide_id(&self) -> String {
        self.inner.slide_id.clone()
    }

    #[getter]
    fn channels(&self) -> Vec<String> {
        self.inner
            .channels
            .classes()
            .iter()
            .map(|c| c.name().to_string())
            .collect()
    }

    fn count_ones(&self) -> u64 {
        self.inner.count_ones()
    }

    fn crop(&self, x: u32, y: u32, size: u32) -> PyResult<PyCellOMap> {
        if x + size > self.inner.width || y + size > self.inner.height {
            return Err(value_err(format!(
                "crop ({x}, {y}, {size}) exceeds the {}x{} map",
                self.inner.width, self.inner.height
            )));
        }
        Ok(PyCellOMap {
            inner: self.inner.crop(x, y, size),
        })
    }

    /// First-order Shannon entropy of the composite channel raster.
    fn entropy_bits_per_pixel(&self) -> PyResult<f64> {
        entropy::map_entropy(&self.inner)
            .map(|r| r.bits_per_pixel)
            .map_err(value_err)
    }

    fn render_png<'py>(&self, py: Python<'py>, dot_radius: u32) -> PyResult<Bound<'py, PyBytes>> {
        let png = render::render_png(&self.inner, dot_radius).map_err(value_err)?;
        Ok(PyBytes::new(py, &png))
    }

    fn __repr__(&self) -> String {
        format!(
            "CellOMap({}x{}, {} channels, {} nuclei)",
            self.inner.width,
            self.inner.height,
            self.inner.planes.len(),
            self.inner.count_ones()
        )
    }
}

/// Growth-pattern classifier over map tiles.
#[pyclass(name = "Classifier", frozen)]
struct PyClassifier {
    inner: ClassifierModel,
}

#[pymethods]
impl PyClassifier {
    /// Fresh conv stack with a zero head; emits uniform probabilities.
    #[staticmethod]
    fn new_seeded(input_side: u32, in_channels: usize, seed: u64) -> PyResult<PyClassifier> {
        ClassifierModel::new_seeded(input_side, in_channels, seed)
            .map(|inner| PyClassifier { inner })
            .map_err(value_err)
    }

    #[staticmethod]
    fn from_checkpoint(text: &str) -> PyResult<PyClassifier> {
        load_checkpoint(text)
            .map(|inner| PyClassifier { inner })
            .map_err(value_err)
    }

    fn to_checkpoint(&self) -> String {
        save_checkpoint(&self.inner)
    }

    #[getter]
    fn input_side(&self) -> u32 {
        self.inner.input_side
    }

    #[getter]
    fn in_channels(&self) -> usize {
        self.inner.in_channels
    }

    /// Returns `(probabilities, predicted_name)` for one tile-sized map.
    fn predict(&self, map: &PyCellOMap, x: u32, y: u32) -> PyResult<(Vec<f64>, String)> {
        let record = self.inner.forward(&map.inner, x, y).map_err(value_err)?;
        Ok((record.probabilities, record.predicted.name().to_string()))
    }
}

/// Focal loss of one probability vector; `gamma=0` is cross-entropy.
#[pyfunction]
#[pyo3(signature = (probabilities, true_class, gamma=0.7))]
fn focal_loss(probabilities: Vec<f64>, true_class: usize, gamma: f64) -> PyResult<f64> {
    if true_class >= probabilities.len() {
        return Err(value_err(format!(
            "true_class {true_class} out of range for {} probabilities",
            probabilities.len()
        )));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(value_err("gamma must be finite and non-negative"));
    }
    let params = FocalLossParams {
        gamma,
        alpha: vec![1.0; probabilities.len()],
    };
    Ok(core_focal_loss(&probabilities, true_class, &params).value)
}

/// Probability a random positive outranks a random negative (AUC-ROC);
/// `None` when either side is empty.
#[pyfunction]
fn rank_auc(scores: Vec<f64>, positives: Vec<bool>) -> PyResult<Option<f64>> {
    if scores.len() != positives.len() {
        return Err(value_err("scores and positives must have equal length"));
    }
    Ok(eval::rank_auc(&scores, &positives))
}

/// The six growth-pattern names in canonical index order.
#[pyfunction]
fn pattern_names() -> [String; PATTERN_COUNT] {
    PatternClass::ALL.map(|c| c.name().to_string())
}

/// The five nucleus class names in code order.
#[pyfunction]
fn cell_class_names() -> [String; 5] {
    CellClass::ALL.map(|c| c.name().to_string())
}

/// Generates a seeded synthetic corpus under `dir`; returns the number of
/// ground-truth tiles written.
#[pyfunction]
#[pyo3(signature = (dir, seed=0, tiles_per_class=60, patients=12, tile_size=224))]
fn synth_corpus(
    dir: &str,
    seed: u64,
    tiles_per_class: usize,
    patients: usize,
    tile_size: u32,
) -> PyResult<usize> {
    if tiles_per_class < 10 || patients < 6 {
        return Err(value_err(
            "need tiles_per_class >= 10 and patients >= 6",
        ));
    }
    if !cellomaps_core::tiler::ALLOWED_TILE_SIZES.contains(&tile_size) {
        return Err(value_err(format!(
            "tile_size must be one of {:?}",
            cellomaps_core::tiler::ALLOWED_TILE_SIZES
        )));
    }
    let config = SynthConfig {
        seed,
        tiles_per_class,
        patients,
        tile_size,
        ..SynthConfig::default()
    };
    let corpus = generate_corpus(&config);
    pipeline::write_corpus(Path::new(dir), &corpus).map_err(value_err)?;
    Ok(corpus.truth.len())
}

/// Patient-level split of a tile manifest CSV; returns the plan as JSON.
#[pyfunction]
#[pyo3(signature = (manifest_csv, test_patients=2, val_fraction=0.15, seed=0))]
fn split_manifest(
    manifest_csv: &str,
    test_patients: usize,
    val_fraction: f64,
    seed: u64,
) -> PyResult<String> {
    let records = pipeline::manifest_from_csv(manifest_csv, Path::new("<memory>"))
        .map_err(value_err)?;
    let plan = eval::make_split(
        &records,
        SplitMode::PatientLevel,
        test_patients,
        val_fraction,
        seed,
    )
    .map_err(value_err)?;
    serde_json_string(&plan)
}

fn serde_json_string<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string_pretty(value).map_err(value_err)
}

#[pymodule]
fn cellomaps_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCellOMap>()?;
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(focal_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rank_auc, m)?)?;
    m.add_function(wrap_pyfunction!(pattern_names, m)?)?;
    m.add_function(wrap_pyfunction!(cell_class_names, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(split_manifest, m)?)?;
    Ok(())
}
