//! Python module `uvforge`: latents, directions, the toy generator, QA,
//! metrics, rendering, detection evaluation and the full pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use ::uvforge as core;
use core::detection::{self as det, Class, DatasetManifest, MixSpec, Source};
use core::direction::{LabeledLatentSet, SvmConfig};
use core::generator::{Generator as CoreGenerator, GeneratorConfig};
use core::latent::{self, Space, StepPolicy, TruncationConfig};
use core::metrics::{self, FeatureVector};
use core::pipeline::{config_fingerprint, run_pipeline as core_run_pipeline, PipelineConfig};
use core::qa::{self, QaConfig};
use core::render::{self, ViewSpec};
use core::texture::Texture as CoreTexture;
use core::Error;

pyo3::create_exception!(uvforge, CapacityError, pyo3::exceptions::PyException);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Capacity { .. } | Error::Infeasible { .. } => CapacityError::new_err(e.to_string()),
        Error::State(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn parse_space(space: &str) -> PyResult<Space> {
    match space {
        "z" | "Z" => Ok(Space::Z),
        "w" | "W" => Ok(Space::W),
        other => Err(PyValueError::new_err(format!("space must be 'z' or 'w', got {other}"))),
    }
}

/// Latent vector tagged with its space ('z' or 'w').
#[pyclass(name = "LatentVec", module = "uvforge", from_py_object)]
#[derive(Clone)]
struct PyLatentVec {
    inner: latent::LatentVec,
}

#[pymethods]
impl PyLatentVec {
    #[new]
    #[pyo3(signature = (values, space = "w"))]
    fn new(values: Vec<f64>, space: &str) -> PyResult<Self> {
        Ok(Self {
            inner: latent::LatentVec::new(values, parse_space(space)?).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: latent::LatentVec::load(&path).py()?,
        })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: latent::LatentVec::read_lvec(data).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_lvec_bytes())
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    #[getter]
    fn space(&self) -> &'static str {
        match self.inner.space() {
            Space::Z => "z",
            Space::W => "w",
        }
    }

    fn __len__(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        format!("LatentVec(dim={}, space='{}')", self.inner.dim(), self.space())
    }
}

/// Unit hyperplane normal and offset for one attribute.
#[pyclass(name = "AttributeDirection", module = "uvforge", from_py_object)]
#[derive(Clone)]
struct PyDirection {
    inner: latent::AttributeDirection,
}

#[pymethods]
impl PyDirection {
    #[new]
    #[pyo3(signature = (weights, bias, attribute_name, accuracy = 1.0))]
    fn new(weights: Vec<f64>, bias: f64, attribute_name: String, accuracy: f64) -> PyResult<Self> {
        let meta = latent::TrainMeta {
            n_samples: 0,
            accuracy,
            weight_norm: None,
        };
        Ok(Self {
            inner: latent::AttributeDirection::from_weights(&weights, bias, attribute_name, meta).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: latent::AttributeDirection::load(&path).py()?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: latent::AttributeDirection::from_json(text).py()?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    #[getter]
    fn normal(&self) -> Vec<f64> {
        self.inner.normal().to_vec()
    }

    #[getter]
    fn bias(&self) -> f64 {
        self.inner.bias()
    }

    #[getter]
    fn attribute_name(&self) -> String {
        self.inner.attribute_name.clone()
    }

    #[getter]
    fn accuracy(&self) -> f64 {
        self.inner.train_meta.accuracy
    }

    fn signed_distance(&self, w: &PyLatentVec) -> PyResult<f64> {
        latent::signed_distance(&w.inner, &self.inner).py()
    }
}

/// RGB8 image in row-major order.
#[pyclass(name = "Texture", module = "uvforge", from_py_object)]
#[derive(Clone)]
struct PyTexture {
    inner: CoreTexture,
}

#[pymethods]
impl PyTexture {
    #[new]
    fn new(width: usize, height: usize, pixels: Vec<u8>) -> PyResult<Self> {
        Ok(Self {
            inner: CoreTexture::new(width, height, pixels).py()?,
        })
    }

    #[staticmethod]
    fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            inner: CoreTexture::filled(width, height, rgb),
        }
    }

    #[staticmethod]
    fn load_png(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreTexture::load_png(&path).py()?,
        })
    }

    fn save_png(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_png(&path).py()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn pixels<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.pixels())
    }

    fn get(&self, x: usize, y: usize) -> PyResult<(u8, u8, u8)> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err("pixel outside the texture"));
        }
        let [r, g, b] = self.inner.get(x, y);
        Ok((r, g, b))
    }

    fn __repr__(&self) -> String {
        format!("Texture({}x{})", self.inner.width(), self.inner.height())
    }
}

/// Latent-to-texture generator; `Generator.toy(...)` builds the built-in one.
#[pyclass(name = "Generator", module = "uvforge")]
struct PyGenerator {
    inner: CoreGenerator,
}

#[pymethods]
impl PyGenerator {
    #[staticmethod]
    #[pyo3(signature = (latent_dim = 512, width = 256, height = 256, seed = 0))]
    fn toy(latent_dim: usize, width: usize, height: usize, seed: u64) -> PyResult<Self> {
        let cfg = GeneratorConfig::Toy {
            latent_dim,
            texture_size: [width, height],
            seed,
        };
        Ok(Self {
            inner: CoreGenerator::from_config(&cfg).py()?,
        })
    }

    fn synthesize(&self, w: &PyLatentVec) -> PyResult<PyTexture> {
        Ok(PyTexture {
            inner: self.inner.synthesize(&w.inner).py()?,
        })
    }

    /// `n` samples as `(sample_id, z, w, texture)` tuples.
    fn sample(&self, n: usize, seed: u64) -> PyResult<Vec<(String, PyLatentVec, PyLatentVec, PyTexture)>> {
        Ok(self
            .inner
            .sample_batch(n, seed)
            .py()?
            .into_iter()
            .map(|r| {
                (
                    r.sample_id,
                    PyLatentVec { inner: r.z },
                    PyLatentVec { inner: r.w },
                    PyTexture { inner: r.texture },
                )
            })
            .collect())
    }

    fn w_mean(&self, n: usize, seed: u64) -> PyResult<PyLatentVec> {
        Ok(PyLatentVec {
            inner: latent::estimate_w_mean(&self.inner, n, seed).py()?,
        })
    }

    /// Unit synthesis axis of a toy attribute such as "tan".
    fn attribute_axis(&self, name: &str) -> PyResult<Vec<f64>> {
        let CoreGenerator::Toy(toy) = &self.inner else {
            return Err(PyValueError::new_err("attribute axes exist only on the toy generator"));
        };
        toy.attribute_axis(name)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| PyValueError::new_err(format!("unknown toy axis {name}")))
    }
}

#[pyfunction]
fn manipulate(w: &PyLatentVec, direction: &PyDirection, alpha: f64) -> PyResult<PyLatentVec> {
    Ok(PyLatentVec {
        inner: latent::manipulate(&w.inner, &direction.inner, alpha).py()?,
    })
}

#[pyfunction]
fn truncate(w: &PyLatentVec, w_mean: &PyLatentVec, psi: f64) -> PyResult<PyLatentVec> {
    let cfg = TruncationConfig::new(psi, w_mean.inner.clone()).py()?;
    Ok(PyLatentVec {
        inner: latent::truncate(&w.inner, &cfg).py()?,
    })
}

#[pyfunction]
#[pyo3(signature = (s, alpha_max = 3.0, s_floor = -3.0, s_cap = 1.0))]
fn adaptive_step(s: f64, alpha_max: f64, s_floor: f64, s_cap: f64) -> PyResult<f64> {
    Ok(latent::adaptive_step(s, &StepPolicy::new(alpha_max, s_floor, s_cap).py()?))
}

#[pyfunction]
#[pyo3(signature = (vectors, labels, attribute, c = 1e-5, epochs = 50, learning_rate = 0.1, seed = 0))]
fn train_linear_svm(
    vectors: Vec<Vec<f64>>,
    labels: Vec<bool>,
    attribute: &str,
    c: f64,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> PyResult<PyDirection> {
    let vectors = vectors
        .into_iter()
        .map(|v| latent::LatentVec::new(v, Space::W))
        .collect::<core::Result<Vec<_>>>()
        .py()?;
    let set = LabeledLatentSet::new(vectors, labels, attribute).py()?;
    let cfg = SvmConfig {
        regularization_c: c,
        epochs,
        learning_rate,
        seed,
    };
    Ok(PyDirection {
        inner: core::direction::train_linear_svm(&set, &cfg).py()?,
    })
}

/// Runs the QA gate with default regions and thresholds; the anomaly scorer is
/// fitted on `reference`. Returns the report as a JSON string.
#[pyfunction]
#[pyo3(signature = (texture, sample_id, reference, short_circuit = true))]
fn validate_texture(texture: &PyTexture, sample_id: &str, reference: Vec<PyTexture>, short_circuit: bool) -> PyResult<String> {
    let refs: Vec<CoreTexture> = reference.into_iter().map(|t| t.inner).collect();
    let cfg = QaConfig {
        short_circuit,
        ..QaConfig::default()
    };
    let pipeline = cfg.build(Path::new("."), &refs).py()?;
    let report = qa::validate_texture(&texture.inner, sample_id, &pipeline);
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn brightness_symmetry_error(texture: &PyTexture) -> PyResult<f64> {
    qa::brightness_symmetry_error(&texture.inner, &qa::default_face_bounds()).py()
}

fn features(rows: Vec<Vec<f64>>) -> PyResult<Vec<FeatureVector>> {
    rows.into_iter()
        .map(|r| FeatureVector::new(r, "python"))
        .collect::<core::Result<Vec<_>>>()
        .py()
}

#[pyfunction]
fn fid(real: Vec<Vec<f64>>, fake: Vec<Vec<f64>>) -> PyResult<f64> {
    let a = metrics::corpus_stats(&features(real)?).py()?;
    let b = metrics::corpus_stats(&features(fake)?).py()?;
    Ok(metrics::fid(&a, &b).py()?.value)
}

/// `(mean, std)` of the unbiased MMD^2 over `blocks` disjoint blocks.
#[pyfunction]
#[pyo3(signature = (real, fake, blocks = 10, seed = 0))]
fn kid(real: Vec<Vec<f64>>, fake: Vec<Vec<f64>>, blocks: usize, seed: u64) -> PyResult<(f64, Option<f64>)> {
    let r = metrics::kid(&features(real)?, &features(fake)?, blocks, seed).py()?;
    Ok((r.value, r.dispersion))
}

#[pyfunction]
#[pyo3(signature = (real, fake, k = 3))]
fn precision_recall(real: Vec<Vec<f64>>, fake: Vec<Vec<f64>>, k: usize) -> PyResult<(f64, f64)> {
    let r = metrics::precision_recall(&features(real)?, &features(fake)?, k).py()?;
    Ok((r.precision, r.recall))
}

#[pyfunction]
fn pixelstat(texture: &PyTexture) -> PyResult<Vec<f64>> {
    Ok(metrics::pixelstat(&texture.inner).py()?.values)
}

/// Renders on the built-in head mesh, or on the OBJ at `mesh_path`.
#[pyfunction]
#[pyo3(signature = (texture, seed, size = 256, mesh_path = None))]
fn render_texture(texture: &PyTexture, seed: u64, size: usize, mesh_path: Option<PathBuf>) -> PyResult<PyTexture> {
    let mesh = match mesh_path {
        Some(p) => render::load_mesh(&p).py()?,
        None => render::head_mesh(),
    };
    let view = ViewSpec {
        image_size: [size, size],
        ..ViewSpec::default()
    };
    Ok(PyTexture {
        inner: render::render(&mesh, &texture.inner, &view, seed).py()?.image,
    })
}

#[pyfunction]
fn iou(a: [f64; 4], b: [f64; 4]) -> PyResult<f64> {
    let bx = |r: [f64; 4]| det::BoundingBox::new(r[0], r[1], r[2], r[3], Class::Pedestrian, None);
    Ok(det::iou(&bx(a).py()?, &bx(b).py()?))
}

/// mAP between detection and ground-truth JSONL files (or KITTI label directories).
#[pyfunction]
#[pyo3(signature = (detections, ground_truth, iou_threshold = 0.5))]
fn evaluate_map(detections: PathBuf, ground_truth: PathBuf, iou_threshold: f64) -> PyResult<f64> {
    let load = |p: &Path| {
        if p.is_dir() {
            det::load_kitti_dir(p)
        } else {
            det::read_boxes(p)
        }
    };
    let d = load(&detections).py()?;
    let g = load(&ground_truth).py()?;
    Ok(det::map_at(&d, &g, &Class::ALL, iou_threshold).py()?.value)
}

/// Builds a mix from a named preset and `{source_name: manifest_path}`; writes it to `out`
/// and returns the per-source counts.
#[pyfunction]
fn build_mix(preset: &str, sources: BTreeMap<String, PathBuf>, seed: u64, out: PathBuf) -> PyResult<BTreeMap<String, usize>> {
    let spec = MixSpec::preset_2d(preset, seed).py()?;
    let mut manifests = BTreeMap::new();
    for (name, path) in sources {
        let source: Source = serde_json::from_value(serde_json::Value::String(name.clone()))
            .map_err(|_| PyValueError::new_err(format!("unknown source {name}")))?;
        manifests.insert(source, DatasetManifest::load(&path).py()?);
    }
    let mix = det::build_mix(&manifests, &spec).py()?;
    mix.save(&out).py()?;
    Ok(mix.composition().iter().map(|(s, c)| (s.name().to_string(), *c)).collect())
}

/// Full pipeline for `n` candidates; returns the run summary as a JSON string.
#[pyfunction]
fn run_pipeline(config: PathBuf, n: usize, out: PathBuf) -> PyResult<String> {
    let bytes = std::fs::read(&config).map_err(|e| PyIOError::new_err(format!("{}: {e}", config.display())))?;
    let (cfg, base) = PipelineConfig::load(&config).py()?;
    let outcome = core_run_pipeline(&cfg, &base, n, &out, &config_fingerprint(&bytes)).py()?;
    serde_json::to_string(&outcome.summary).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
#[pyo3(name = "uvforge")]
fn uvforge_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("CapacityError", m.py().get_type::<CapacityError>())?;
    m.add_class::<PyLatentVec>()?;
    m.add_class::<PyDirection>()?;
    m.add_class::<PyTexture>()?;
    m.add_class::<PyGenerator>()?;
    m.add_function(wrap_pyfunction!(manipulate, m)?)?;
    m.add_function(wrap_pyfunction!(truncate, m)?)?;
    m.add_function(wrap_pyfunction!(adaptive_step, m)?)?;
    m.add_function(wrap_pyfunction!(train_linear_svm, m)?)?;
    m.add_function(wrap_pyfunction!(validate_texture, m)?)?;
    m.add_function(wrap_pyfunction!(brightness_symmetry_error, m)?)?;
    m.add_function(wrap_pyfunction!(fid, m)?)?;
    m.add_function(wrap_pyfunction!(kid, m)?)?;
    m.add_function(wrap_pyfunction!(precision_recall, m)?)?;
    m.add_function(wrap_pyfunction!(pixelstat, m)?)?;
    m.add_function(wrap_pyfunction!(render_texture, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_map, m)?)?;
    m.add_function(wrap_pyfunction!(build_mix, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
