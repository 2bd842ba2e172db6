//! Python bindings. Errors surface as `ValueError`, I/O errors as `OSError`.

use std::io::BufReader;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use unifrac_core::stripes::{read_stripe_file, write_stripe_file};
use unifrac_core::{
    compute_unifrac, condense, AnyStripeSet, ComputeOptions, KernelConfig, KernelVariant, Metric,
    Precision, Real, StripeSet, TableFormat, UnifracError,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(value_err)
}

#[pyclass(name = "PhyloTree", module = "unifrac_py", frozen)]
struct PyPhyloTree {
    inner: unifrac_core::PhyloTree,
}

#[pymethods]
impl PyPhyloTree {
    #[new]
    fn new(newick: &str) -> PyResult<Self> {
        let inner = unifrac_core::parse_newick(newick).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn leaf_names(&self) -> Vec<String> {
        self.inner.leaf_names().to_vec()
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.len()
    }

    fn total_branch_length(&self) -> f64 {
        self.inner.total_branch_length()
    }

    fn shear(&self, keep: Vec<String>) -> PyResult<Self> {
        let inner = self.inner.shear(&keep).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn to_newick(&self) -> String {
        self.inner.to_newick()
    }

    fn __repr__(&self) -> String {
        format!(
            "PhyloTree(n_leaves={}, n_nodes={})",
            self.inner.leaf_names().len(),
            self.inner.len()
        )
    }
}

#[pyclass(name = "SampleTable", module = "unifrac_py", frozen)]
struct PySampleTable {
    inner: unifrac_core::SampleTable,
}

#[pymethods]
impl PySampleTable {
    /// `counts[f][s]` is the count of feature `f` in sample `s`.
    #[new]
    fn new(
        sample_ids: Vec<String>,
        feature_ids: Vec<String>,
        counts: Vec<Vec<f64>>,
    ) -> PyResult<Self> {
        let n = sample_ids.len();
        let mut rows = Vec::with_capacity(counts.len());
        for (f, row) in counts.into_iter().enumerate() {
            if row.len() != n {
                return Err(PyValueError::new_err(format!(
                    "row {f} has {} counts for {n} samples",
                    row.len()
                )));
            }
            rows.push(row.into_iter().enumerate().collect());
        }
        let inner = unifrac_core::SampleTable::from_rows(sample_ids, feature_ids, rows)
            .map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (text, format = "tsv-dense"))]
    fn from_tsv(text: &str, format: &str) -> PyResult<Self> {
        let format: TableFormat = parse(format)?;
        let inner =
            unifrac_core::load_table(BufReader::new(text.as_bytes()), format).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, format = "tsv-dense"))]
    fn load(path: &str, format: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
        Self::from_tsv(&text, format)
    }

    #[getter]
    fn sample_ids(&self) -> Vec<String> {
        self.inner.sample_ids().to_vec()
    }

    #[getter]
    fn feature_ids(&self) -> Vec<String> {
        self.inner.feature_ids().to_vec()
    }

    fn get(&self, feature: usize, sample: usize) -> PyResult<f64> {
        if feature >= self.inner.n_features() || sample >= self.inner.n_samples() {
            return Err(pyo3::exceptions::PyIndexError::new_err(
                "index out of range",
            ));
        }
        Ok(self.inner.get(feature, sample))
    }

    fn to_tsv(&self) -> String {
        self.inner.to_dense_tsv()
    }

    fn __repr__(&self) -> String {
        format!(
            "SampleTable(n_samples={}, n_features={})",
            self.inner.n_samples(),
            self.inner.n_features()
        )
    }
}

#[pyclass(name = "DistanceMatrix", module = "unifrac_py", frozen)]
struct PyDistanceMatrix {
    inner: unifrac_core::DistanceMatrix,
}

#[pymethods]
impl PyDistanceMatrix {
    #[staticmethod]
    #[pyo3(signature = (text, precision = "fp64"))]
    fn from_tsv(text: &str, precision: &str) -> PyResult<Self> {
        let precision: Precision = parse(precision)?;
        let inner =
            unifrac_core::DistanceMatrix::from_tsv(BufReader::new(text.as_bytes()), precision)
                .map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn sample_ids(&self) -> Vec<String> {
        self.inner.sample_ids().to_vec()
    }

    #[getter]
    fn precision(&self) -> &'static str {
        self.inner.precision().as_str()
    }

    fn __len__(&self) -> usize {
        self.inner.n_samples()
    }

    fn get(&self, i: usize, j: usize) -> PyResult<f64> {
        let n = self.inner.n_samples();
        if i >= n || j >= n {
            return Err(pyo3::exceptions::PyIndexError::new_err(
                "index out of range",
            ));
        }
        Ok(self.inner.get(i, j))
    }

    /// Row-major nested lists.
    fn to_list(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n_samples())
            .map(|i| self.inner.row(i).to_vec())
            .collect()
    }

    fn reordered(&self, ids: Vec<String>) -> PyResult<Self> {
        let inner = self.inner.reordered(&ids).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn to_tsv(&self) -> String {
        self.inner.to_tsv()
    }

    fn __repr__(&self) -> String {
        format!(
            "DistanceMatrix(n_samples={}, precision={})",
            self.inner.n_samples(),
            self.inner.precision()
        )
    }
}

#[pyclass(name = "MantelResult", module = "unifrac_py", frozen, get_all)]
struct PyMantelResult {
    r: f64,
    r_squared: f64,
    p_value: f64,
    permutations: usize,
    seed: u64,
}

#[pymethods]
impl PyMantelResult {
    fn __repr__(&self) -> String {
        format!(
            "MantelResult(r={}, r_squared={}, p_value={}, permutations={}, seed={})",
            self.r, self.r_squared, self.p_value, self.permutations, self.seed
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn options(
    metric: &str,
    precision: &str,
    variant: &str,
    batch_size: usize,
    step_size: Option<usize>,
    threads: usize,
    range: Option<(usize, usize)>,
) -> PyResult<ComputeOptions> {
    let mut config = KernelConfig::new(
        parse::<KernelVariant>(variant)?,
        parse::<Metric>(metric)?,
        parse(precision)?,
    )
    .with_batch_capacity(batch_size);
    if let Some(step) = step_size {
        config = config.with_step_size(step);
    }
    Ok(ComputeOptions {
        config,
        range,
        threads,
    })
}

/// Full distance matrix.
#[pyfunction]
#[pyo3(signature = (tree, table, metric, precision = "fp64", variant = "tiled", batch_size = 64, step_size = None, threads = 0))]
#[allow(clippy::too_many_arguments)]
fn unifrac(
    py: Python<'_>,
    tree: &PyPhyloTree,
    table: &PySampleTable,
    metric: &str,
    precision: &str,
    variant: &str,
    batch_size: usize,
    step_size: Option<usize>,
    threads: usize,
) -> PyResult<PyDistanceMatrix> {
    let opts = options(
        metric, precision, variant, batch_size, step_size, threads, None,
    )?;
    let inner = py
        .detach(|| {
            unifrac_core::compute_matrix(&tree.inner, &table.inner, opts.config, opts.threads)
        })
        .map_err(value_err)?;
    Ok(PyDistanceMatrix { inner })
}

/// Stripes `[start, stop)` encoded as a partial stripe file.
#[pyfunction]
#[pyo3(signature = (tree, table, metric, start, stop, precision = "fp64", variant = "tiled", batch_size = 64, step_size = None, threads = 0))]
#[allow(clippy::too_many_arguments)]
fn unifrac_stripes<'py>(
    py: Python<'py>,
    tree: &PyPhyloTree,
    table: &PySampleTable,
    metric: &str,
    start: usize,
    stop: usize,
    precision: &str,
    variant: &str,
    batch_size: usize,
    step_size: Option<usize>,
    threads: usize,
) -> PyResult<Bound<'py, PyBytes>> {
    let opts = options(
        metric,
        precision,
        variant,
        batch_size,
        step_size,
        threads,
        Some((start, stop)),
    )?;
    let bytes = py
        .detach(|| -> Result<Vec<u8>, UnifracError> {
            match opts.config.precision {
                Precision::Fp32 => {
                    encode(compute_unifrac::<f32>(&tree.inner, &table.inner, &opts)?.stripes)
                }
                Precision::Fp64 => {
                    encode(compute_unifrac::<f64>(&tree.inner, &table.inner, &opts)?.stripes)
                }
            }
        })
        .map_err(value_err)?;
    Ok(PyBytes::new(py, &bytes))
}

fn encode<T: Real>(set: StripeSet<T>) -> Result<Vec<u8>, UnifracError> {
    Ok(write_stripe_file(&set)?)
}

/// Condenses partial stripe files that exactly tile the stripe space.
#[pyfunction]
fn merge_stripes(parts: Vec<Vec<u8>>, sample_ids: Vec<String>) -> PyResult<PyDistanceMatrix> {
    let mut f32s = Vec::new();
    let mut f64s = Vec::new();
    for bytes in &parts {
        match read_stripe_file(bytes).map_err(value_err)? {
            AnyStripeSet::F32(s) => f32s.push(s),
            AnyStripeSet::F64(s) => f64s.push(s),
        }
    }
    if !f32s.is_empty() && !f64s.is_empty() {
        return Err(PyValueError::new_err("parts mix fp32 and fp64"));
    }
    let inner = if f64s.is_empty() {
        condense(&f32s.iter().collect::<Vec<_>>(), sample_ids)
    } else {
        condense(&f64s.iter().collect::<Vec<_>>(), sample_ids)
    }
    .map_err(value_err)?;
    Ok(PyDistanceMatrix { inner })
}

/// Reference distances straight from the definition; slow.
#[pyfunction]
fn brute_force_unifrac(
    tree: &PyPhyloTree,
    table: &PySampleTable,
    metric: &str,
) -> PyResult<PyDistanceMatrix> {
    let inner = unifrac_core::brute_force_unifrac(&tree.inner, &table.inner, parse(metric)?)
        .map_err(value_err)?;
    Ok(PyDistanceMatrix { inner })
}

#[pyfunction]
#[pyo3(signature = (m1, m2, permutations = 999, seed = 0))]
fn mantel(
    py: Python<'_>,
    m1: &PyDistanceMatrix,
    m2: &PyDistanceMatrix,
    permutations: usize,
    seed: u64,
) -> PyResult<PyMantelResult> {
    let aligned = m2
        .inner
        .reordered(m1.inner.sample_ids())
        .map_err(value_err)?;
    let r = py
        .detach(|| unifrac_core::mantel(&m1.inner, &aligned, permutations, seed))
        .map_err(value_err)?;
    Ok(PyMantelResult {
        r: r.r,
        r_squared: r.r_squared,
        p_value: r.p_value,
        permutations: r.permutations,
        seed: r.seed,
    })
}

/// Sample pair of entry `k` in `stripe`.
#[pyfunction]
fn stripe_pair(n_samples: usize, stripe: usize, k: usize) -> PyResult<(usize, usize)> {
    unifrac_core::stripe_pair(n_samples, stripe, k).map_err(value_err)
}

#[pyfunction]
fn total_stripes(n_samples: usize) -> PyResult<usize> {
    unifrac_core::total_stripes(n_samples).map_err(value_err)
}

#[pymodule]
fn unifrac_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPhyloTree>()?;
    m.add_class::<PySampleTable>()?;
    m.add_class::<PyDistanceMatrix>()?;
    m.add_class::<PyMantelResult>()?;
    m.add_function(wrap_pyfunction!(unifrac, m)?)?;
    m.add_function(wrap_pyfunction!(unifrac_stripes, m)?)?;
    m.add_function(wrap_pyfunction!(merge_stripes, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_unifrac, m)?)?;
    m.add_function(wrap_pyfunction!(mantel, m)?)?;
    m.add_function(wrap_pyfunction!(stripe_pair, m)?)?;
    m.add_function(wrap_pyfunction!(total_stripes, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
