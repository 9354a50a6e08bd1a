//! Python bindings for the semtask toolkit: taxonomy queries, distance
//! matrices, testbed generation, and classifier evaluation.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyList};

use semtask::evalkit::{self, ClassifierSpec, EmbeddingStore};
use semtask::sampler::{self, InstanceCatalog, SamplerConfig};
use semtask::semantics;
use semtask::synthetic;
use semtask::taxonomy::TaxonomyGraph;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match value {
        serde_json::Value::Null => py.None().into_bound(py),
        serde_json::Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else if let Some(u) = n.as_u64() {
                u.into_pyobject(py)?.into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any()
            }
        }
        serde_json::Value::String(s) => s.into_pyobject(py)?.into_any(),
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, json_to_py(py, v)?)?;
            }
            dict.into_any()
        }
    })
}

/// A validated class taxonomy DAG.
#[pyclass(frozen, name = "Taxonomy")]
struct PyTaxonomy {
    inner: TaxonomyGraph,
}

#[pymethods]
impl PyTaxonomy {
    #[staticmethod]
    fn from_json(source: &str) -> PyResult<Self> {
        Ok(Self {
            inner: semtask::load_taxonomy(source).map_err(value_err)?,
        })
    }

    /// The deterministic 160-class fixture (root "entity").
    #[staticmethod]
    fn tiered_fixture() -> Self {
        Self {
            inner: synthetic::tiered_like_fixture(),
        }
    }

    /// The deterministic 240-class fixture (root "life").
    #[staticmethod]
    fn fungi_fixture() -> Self {
        Self {
            inner: synthetic::fungi_like_fixture(),
        }
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn content_sha256(&self) -> String {
        self.inner.content_sha256()
    }

    fn root_id(&self) -> String {
        self.inner.root_id().to_string()
    }

    fn leaf_class_ids(&self) -> Vec<String> {
        self.inner.leaf_class_ids().to_vec()
    }

    fn cumulative_count(&self, id: &str) -> PyResult<u64> {
        self.inner.cumulative_count(id).map_err(value_err)
    }

    fn lowest_superordinate(&self, c1: &str, c2: &str) -> PyResult<String> {
        self.inner
            .lowest_superordinate(c1, c2)
            .map(str::to_string)
            .map_err(value_err)
    }

    fn ancestor_set(&self, id: &str) -> PyResult<Vec<String>> {
        Ok(self
            .inner
            .ancestor_set(id)
            .map_err(value_err)?
            .into_iter()
            .collect())
    }

    fn jc_distance(&self, c1: &str, c2: &str) -> PyResult<f64> {
        semantics::jc_distance(&self.inner, c1, c2).map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Dense symmetric pseudo-distance matrix over the leaf classes.
#[pyclass(frozen, name = "DistanceMatrix")]
struct PyDistanceMatrix {
    inner: semantics::DistanceMatrix,
}

#[pymethods]
impl PyDistanceMatrix {
    #[staticmethod]
    fn from_csv(source: &str) -> PyResult<Self> {
        Ok(Self {
            inner: semantics::DistanceMatrix::from_csv(source).map_err(value_err)?,
        })
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn class_ids(&self) -> Vec<String> {
        self.inner.class_ids().to_vec()
    }

    fn get(&self, c1: &str, c2: &str) -> PyResult<f64> {
        self.inner.get_by_id(c1, c2).map_err(value_err)
    }

    /// Mean squared pairwise distance of a class set.
    fn coarsity(&self, classes: Vec<String>) -> PyResult<f64> {
        Ok(semantics::coarsity(&self.inner, &classes)
            .map_err(value_err)?
            .value())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Compute the full pairwise distance matrix of a taxonomy.
#[pyfunction]
fn distance_matrix(taxonomy: &PyTaxonomy) -> PyDistanceMatrix {
    PyDistanceMatrix {
        inner: semantics::distance_matrix(&taxonomy.inner),
    }
}

/// Instance ids per class.
#[pyclass(frozen, name = "InstanceCatalog")]
struct PyInstanceCatalog {
    inner: InstanceCatalog,
}

#[pymethods]
impl PyInstanceCatalog {
    #[staticmethod]
    fn from_csv(source: &str) -> PyResult<Self> {
        Ok(Self {
            inner: InstanceCatalog::from_csv(source).map_err(value_err)?,
        })
    }

    /// A synthetic catalog with `per_class` instances per leaf class.
    #[staticmethod]
    fn uniform(taxonomy: &PyTaxonomy, per_class: usize) -> Self {
        Self {
            inner: synthetic::uniform_catalog(&taxonomy.inner, per_class),
        }
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn classes(&self) -> Vec<String> {
        self.inner.classes().cloned().collect()
    }

    fn instances(&self, class: &str) -> PyResult<Vec<String>> {
        self.inner
            .instances(class)
            .map(<[String]>::to_vec)
            .ok_or_else(|| value_err(format!("unknown class `{class}`")))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Sampler configuration (defaults follow the reference protocol:
/// alpha 0.383, beta 100.0, 10 queries per class, 5000 tasks from 2x
/// oversampling).
#[pyclass(name = "SamplerConfig", skip_from_py_object)]
#[derive(Clone)]
struct PySamplerConfig {
    inner: SamplerConfig,
}

#[pymethods]
impl PySamplerConfig {
    #[new]
    #[pyo3(signature = (
        ways = 5,
        shots = 1,
        queries_per_class = 10,
        num_tasks = 5000,
        oversample_factor = 2,
        alpha = sampler::DEFAULT_ALPHA,
        beta = sampler::DEFAULT_BETA,
        strategy = "semantic",
        seed = 0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        ways: usize,
        shots: usize,
        queries_per_class: usize,
        num_tasks: usize,
        oversample_factor: usize,
        alpha: f64,
        beta: f64,
        strategy: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let strategy = match strategy {
            "semantic" => sampler::Strategy::Semantic,
            "uniform" => sampler::Strategy::Uniform,
            other => return Err(value_err(format!("unknown strategy `{other}`"))),
        };
        Ok(Self {
            inner: SamplerConfig {
                ways,
                shots,
                queries_per_class,
                num_tasks,
                oversample_factor,
                alpha,
                beta,
                strategy,
                seed,
            },
        })
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// A generated testbed of few-shot tasks.
#[pyclass(frozen, name = "Testbed")]
struct PyTestbed {
    inner: sampler::Testbed,
}

#[pymethods]
impl PyTestbed {
    #[staticmethod]
    fn from_jsonl(source: &str) -> PyResult<Self> {
        Ok(Self {
            inner: sampler::Testbed::from_jsonl(source).map_err(value_err)?,
        })
    }

    fn to_jsonl(&self) -> String {
        self.inner.to_jsonl()
    }

    fn coarsities(&self) -> Vec<f64> {
        self.inner.tasks.iter().map(|t| t.coarsity).collect()
    }

    fn warnings(&self) -> Vec<String> {
        self.inner.provenance.warnings.clone()
    }

    fn taxonomy_sha256(&self) -> String {
        self.inner.provenance.taxonomy_sha256.clone()
    }

    /// One task as a dict (same shape as a testbed JSONL line).
    fn task<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyAny>> {
        let task = self
            .inner
            .tasks
            .get(index)
            .ok_or_else(|| value_err(format!("task index {index} out of range")))?;
        let value = serde_json::to_value(task).map_err(value_err)?;
        json_to_py(py, &value)
    }

    fn __len__(&self) -> usize {
        self.inner.tasks.len()
    }
}

/// Generate a testbed from a taxonomy, its distance matrix, and a catalog.
#[pyfunction]
fn generate_testbed(
    taxonomy: &PyTaxonomy,
    distances: &PyDistanceMatrix,
    catalog: &PyInstanceCatalog,
    config: &PySamplerConfig,
) -> PyResult<PyTestbed> {
    sampler::generate_testbed(&taxonomy.inner, &distances.inner, &catalog.inner, &config.inner)
        .map(|inner| PyTestbed { inner })
        .map_err(value_err)
}

/// Instance embeddings keyed by instance id.
#[pyclass(frozen, name = "EmbeddingStore")]
struct PyEmbeddingStore {
    inner: EmbeddingStore,
}

#[pymethods]
impl PyEmbeddingStore {
    /// Load from raw file bytes (EMB1 binary or CSV, sniffed by magic).
    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: evalkit::load_embeddings(data).map_err(value_err)?,
        })
    }

    /// Hierarchy-correlated synthetic embeddings: class means follow a
    /// Gaussian walk down the taxonomy (step `walk_std` per depth level),
    /// instances add `noise_std` Gaussian noise.
    #[staticmethod]
    #[pyo3(signature = (taxonomy, catalog, dim = 32, walk_std = 1.0, noise_std = 1.0, seed = 7))]
    fn hierarchy(
        taxonomy: &PyTaxonomy,
        catalog: &PyInstanceCatalog,
        dim: usize,
        walk_std: f64,
        noise_std: f64,
        seed: u64,
    ) -> Self {
        let params = synthetic::EmbeddingParams {
            dim,
            walk_std,
            noise_std,
            seed,
        };
        Self {
            inner: synthetic::hierarchy_embeddings(&taxonomy.inner, &catalog.inner, &params),
        }
    }

    fn to_emb1<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_emb1())
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn class_of(&self, instance: &str) -> PyResult<String> {
        self.inner
            .vector(instance)
            .map(|(class, _)| class.to_string())
            .ok_or_else(|| value_err(format!("unknown instance `{instance}`")))
    }

    fn vector(&self, instance: &str) -> PyResult<Vec<f32>> {
        self.inner
            .vector(instance)
            .map(|(_, v)| v.to_vec())
            .ok_or_else(|| value_err(format!("unknown instance `{instance}`")))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Evaluate a classifier on a testbed; returns the aggregate report as a
/// dict (method, mean_top1, ci95_half_width, quartiles, rolling series).
#[pyfunction]
#[pyo3(signature = (
    store,
    testbed,
    method,
    steps = evalkit::FINETUNE_DEFAULT_STEPS,
    learning_rate = evalkit::FINETUNE_DEFAULT_LEARNING_RATE,
    temperature = evalkit::BDCSPN_DEFAULT_TEMPERATURE,
    shift_weight = evalkit::BDCSPN_DEFAULT_SHIFT_WEIGHT,
    window = None,
))]
#[allow(clippy::too_many_arguments)]
fn evaluate_testbed<'py>(
    py: Python<'py>,
    store: &PyEmbeddingStore,
    testbed: &PyTestbed,
    method: &str,
    steps: u32,
    learning_rate: f64,
    temperature: f64,
    shift_weight: f64,
    window: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = match method {
        "protonet" => ClassifierSpec::Protonet,
        "finetune" => ClassifierSpec::Finetune {
            steps,
            learning_rate,
        },
        "bdcspn" => ClassifierSpec::Bdcspn {
            temperature,
            shift_weight,
        },
        other => return Err(value_err(format!("unknown method `{other}`"))),
    };
    let mut report = evalkit::evaluate_testbed(&store.inner, &testbed.inner, &spec).map_err(value_err)?;
    if let Some(w) = window {
        report = report.with_rolling(w).map_err(value_err)?;
    }
    let value: serde_json::Value =
        serde_json::from_str(&report.to_json()).map_err(value_err)?;
    json_to_py(py, &value)
}

#[pymodule]
fn semtask_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTaxonomy>()?;
    m.add_class::<PyDistanceMatrix>()?;
    m.add_class::<PyInstanceCatalog>()?;
    m.add_class::<PySamplerConfig>()?;
    m.add_class::<PyTestbed>()?;
    m.add_class::<PyEmbeddingStore>()?;
    m.add_function(wrap_pyfunction!(distance_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(generate_testbed, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_testbed, m)?)?;
    m.add("DEFAULT_ALPHA", sampler::DEFAULT_ALPHA)?;
    m.add("DEFAULT_BETA", sampler::DEFAULT_BETA)?;
    Ok(())
}
