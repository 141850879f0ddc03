//! Python bindings for the main tensor-train types and operations, the greedy
//! cuboid detection, and the experiment harness.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use ttiga::cuboids::MultiIndexSet;
use ttiga::experiment::{
    estimate_bytes, run_experiment, ExperimentConfig, PrecChoice, Scheme, SolutionId,
};

fn to_py_err(e: ttiga::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Tensor in TT format; dense data is little-endian flat (dimension 1 fastest).
#[pyclass(name = "TtVector", skip_from_py_object)]
#[derive(Clone)]
struct PyTtVector {
    inner: ttiga::TTVector,
}

#[pymethods]
impl PyTtVector {
    #[staticmethod]
    fn from_dense(shape: Vec<usize>, data: Vec<f64>, tol: f64) -> PyResult<Self> {
        Ok(PyTtVector { inner: ttiga::TTVector::from_dense(&shape, &data, tol).map_err(to_py_err)? })
    }

    #[staticmethod]
    fn ones(shape: Vec<usize>) -> Self {
        PyTtVector { inner: ttiga::TTVector::ones(&shape) }
    }

    fn to_dense(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.to_dense().map_err(to_py_err)?.data)
    }

    fn mode_sizes(&self) -> Vec<usize> {
        self.inner.mode_sizes()
    }

    fn ranks(&self) -> Vec<usize> {
        self.inner.ranks()
    }

    fn round(&self, tol: f64) -> Self {
        PyTtVector { inner: self.inner.round(tol) }
    }

    fn add(&self, other: &PyTtVector) -> PyResult<Self> {
        Ok(PyTtVector { inner: self.inner.add(&other.inner).map_err(to_py_err)? })
    }

    fn scaled(&self, alpha: f64) -> Self {
        PyTtVector { inner: self.inner.scaled(alpha) }
    }

    fn dot(&self, other: &PyTtVector) -> PyResult<f64> {
        self.inner.dot(&other.inner).map_err(to_py_err)
    }

    fn norm(&self) -> f64 {
        self.inner.norm()
    }

    fn estimate_bytes(&self) -> usize {
        estimate_bytes(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("TtVector(modes={:?}, ranks={:?})", self.inner.mode_sizes(), self.inner.ranks())
    }
}

/// Linear operator in TT form acting on little-endian flattened tensors.
#[pyclass(name = "TtMatrix", skip_from_py_object)]
#[derive(Clone)]
struct PyTtMatrix {
    inner: ttiga::TTMatrix,
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> PyResult<nalgebra::DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if nr == 0 || nc == 0 || rows.iter().any(|r| r.len() != nc) {
        return Err(PyValueError::new_err("factor must be a rectangular non-empty matrix"));
    }
    Ok(nalgebra::DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

#[pymethods]
impl PyTtMatrix {
    /// Rank-one Kronecker operator from per-dimension factors (row-major).
    #[staticmethod]
    fn from_kron(factors: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        let mats: Vec<nalgebra::DMatrix<f64>> =
            factors.iter().map(|f| matrix_from_rows(f)).collect::<PyResult<_>>()?;
        Ok(PyTtMatrix { inner: ttiga::TTMatrix::from_kron(&mats) })
    }

    #[staticmethod]
    fn identity(sizes: Vec<usize>) -> Self {
        PyTtMatrix { inner: ttiga::TTMatrix::identity(&sizes) }
    }

    fn row_sizes(&self) -> Vec<usize> {
        self.inner.row_sizes()
    }

    fn col_sizes(&self) -> Vec<usize> {
        self.inner.col_sizes()
    }

    fn ranks(&self) -> Vec<usize> {
        self.inner.ranks()
    }

    fn apply(&self, x: &PyTtVector) -> PyResult<PyTtVector> {
        Ok(PyTtVector { inner: self.inner.apply(&x.inner).map_err(to_py_err)? })
    }

    fn matmul(&self, other: &PyTtMatrix) -> PyResult<PyTtMatrix> {
        Ok(PyTtMatrix { inner: self.inner.matmul(&other.inner).map_err(to_py_err)? })
    }

    fn transpose(&self) -> Self {
        PyTtMatrix { inner: self.inner.transpose() }
    }

    fn diag(&self) -> PyResult<PyTtVector> {
        Ok(PyTtVector { inner: self.inner.diag().map_err(to_py_err)? })
    }

    fn add(&self, other: &PyTtMatrix) -> PyResult<Self> {
        Ok(PyTtMatrix { inner: self.inner.add(&other.inner).map_err(to_py_err)? })
    }

    fn round(&self, tol: f64) -> Self {
        PyTtMatrix { inner: self.inner.round(tol) }
    }

    /// Dense expansion as a flat row-major matrix plus its shape.
    fn to_dense(&self) -> PyResult<(usize, usize, Vec<f64>)> {
        let m = self.inner.to_dense().map_err(to_py_err)?;
        let (nr, nc) = m.shape();
        let mut data = Vec::with_capacity(nr * nc);
        for i in 0..nr {
            for j in 0..nc {
                data.push(m[(i, j)]);
            }
        }
        Ok((nr, nc, data))
    }

    fn __repr__(&self) -> String {
        format!(
            "TtMatrix(rows={:?}, cols={:?}, ranks={:?})",
            self.inner.row_sizes(),
            self.inner.col_sizes(),
            self.inner.ranks()
        )
    }
}

/// Greedy cuboid detection on a 0-based multi-index set; returns
/// `(start, extent)` pairs covering the set disjointly.
#[pyfunction]
fn greedy_partition(dims: Vec<usize>, members: Vec<Vec<usize>>) -> Vec<(Vec<usize>, Vec<usize>)> {
    let set = MultiIndexSet::from_members(&dims, members);
    ttiga::cuboids::greedy_partition(&set)
        .boxes
        .into_iter()
        .map(|b| (b.start, b.extent))
        .collect()
}

/// Slice discarding: returns the kept old indices per dimension and the
/// remapped members.
#[pyfunction]
fn discard_slices(
    dims: Vec<usize>,
    members: Vec<Vec<usize>>,
) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let set = MultiIndexSet::from_members(&dims, members);
    let (red, reduced) = ttiga::cuboids::discard_slices(&set);
    (red.keep, reduced.iter().collect())
}

#[pyfunction]
#[pyo3(signature = (solution="sol1", scheme="slab", degree=3, levels=2, k=0, eps=1e-7,
                    approach=1, prec="block", source_n=40, oracle=false))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    solution: &str,
    scheme: &str,
    degree: usize,
    levels: usize,
    k: usize,
    eps: f64,
    approach: u8,
    prec: &str,
    source_n: usize,
    oracle: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = ExperimentConfig::default();
    cfg.solution = match solution {
        "sol1" => SolutionId::Sol1,
        "sol2" => SolutionId::Sol2,
        "sol3" => SolutionId::Sol3,
        _ => return Err(PyValueError::new_err(format!("unknown solution {solution:?}"))),
    };
    cfg.scheme = match scheme {
        "slab" => Scheme::Slab,
        "nested-slab" => Scheme::NestedSlab,
        "two-corners" => Scheme::TwoCorners,
        "four-corners" => Scheme::FourCorners,
        _ => return Err(PyValueError::new_err(format!("unknown scheme {scheme:?}"))),
    };
    cfg.prec = match prec {
        "block" => PrecChoice::Block,
        "jacobi" => PrecChoice::Jacobi,
        "none" => PrecChoice::None,
        _ => return Err(PyValueError::new_err(format!("unknown preconditioner {prec:?}"))),
    };
    cfg.degree = degree;
    cfg.levels = levels;
    cfg.k = k;
    cfg.eps = eps;
    cfg.approach = approach;
    cfg.source_n = source_n;
    cfg.oracle = oracle;

    let outcome = run_experiment(&cfg).map_err(to_py_err)?;
    let row = &outcome.row;
    let dict = PyDict::new(py);
    dict.set_item("scheme", row.scheme.to_string())?;
    dict.set_item("solution", row.solution.to_string())?;
    dict.set_item("p", row.degree)?;
    dict.set_item("L", row.levels)?;
    dict.set_item("k", row.k)?;
    dict.set_item("eps", row.eps)?;
    dict.set_item("approach", row.approach)?;
    dict.set_item("prec", row.prec.to_string())?;
    dict.set_item("assembly_s", row.assembly_s)?;
    dict.set_item("solve_s", row.solve_s)?;
    dict.set_item("iters", row.iters)?;
    dict.set_item("converged", row.converged)?;
    dict.set_item("l2_error", row.l2_error)?;
    dict.set_item("bytes_K", row.bytes_k)?;
    dict.set_item("bytes_y", row.bytes_y)?;
    dict.set_item("oracle_l2", row.oracle_l2)?;
    dict.set_item("oracle_op_delta", row.oracle_op_delta)?;
    Ok(dict)
}

#[pymodule]
fn ttiga_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTtVector>()?;
    m.add_class::<PyTtMatrix>()?;
    m.add_function(wrap_pyfunction!(greedy_partition, m)?)?;
    m.add_function(wrap_pyfunction!(discard_slices, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
