//! Python bindings. Reports come back as plain dicts; signals expose their
//! values as flat lists in `(feature, theta, phi)` order.

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use sphcnn::conv::{self, FilterBank, Kernel};
use sphcnn::ingest::{self as ingest_mod, SynthKind};
use sphcnn::metrics::{self, Operator, StabilityOptions, DISTANCE_BUDGET};
use sphcnn::perturb::{self, DiffeoField};
use sphcnn::scnn::{self, NetworkSpec, RandomNetworkParams};
use sphcnn::{sphere, EquiangularGrid, So3Quadrature, SphericalSignal};

fn err(e: sphcnn::Error) -> PyErr {
    if e.is_numeric() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any().unbind(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any().unbind(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any().unbind(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any().unbind(),
        Value::Array(a) => {
            let items = a.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any().unbind()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any().unbind()
        }
    })
}

fn report<T: serde::Serialize>(py: Python<'_>, r: &T) -> PyResult<Py<PyAny>> {
    let v = serde_json::to_value(r).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &v)
}

fn kernel(name: &str) -> PyResult<Kernel> {
    name.parse().map_err(err)
}

/// A multi-feature signal on an equiangular grid.
#[pyclass(name = "Signal", module = "sphcnn", from_py_object)]
#[derive(Clone)]
pub struct PySignal {
    inner: SphericalSignal,
}

#[pymethods]
impl PySignal {
    #[new]
    fn new(n_theta: usize, n_phi: usize, n_features: usize, values: Vec<f64>) -> PyResult<Self> {
        let grid = EquiangularGrid::new(n_theta, n_phi).map_err(err)?;
        Ok(Self {
            inner: SphericalSignal::from_values(grid, n_features, values).map_err(err)?,
        })
    }

    /// `constant:c`, `zonal_gaussian:w`, `gaussian_mixture:n:seed` or
    /// `tetra_distance`.
    #[staticmethod]
    #[pyo3(signature = (spec, n_theta, n_phi=None))]
    fn synth(spec: &str, n_theta: usize, n_phi: Option<usize>) -> PyResult<Self> {
        let kind: SynthKind = spec.parse().map_err(err)?;
        let grid = EquiangularGrid::new(n_theta, n_phi.unwrap_or(n_theta)).map_err(err)?;
        Ok(Self {
            inner: ingest_mod::synth_signal(&kind, grid).map_err(err)?,
        })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: sphere::read_signal(path).map_err(err)?,
        })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        sphere::write_signal(&self.inner, path).map_err(err)
    }

    #[getter]
    fn n_theta(&self) -> usize {
        self.inner.grid().n_theta()
    }

    #[getter]
    fn n_phi(&self) -> usize {
        self.inner.grid().n_phi()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn norm(&self) -> f64 {
        self.inner.norm()
    }

    fn roll(&self, k: isize) -> Self {
        Self {
            inner: self.inner.roll_phi(k),
        }
    }

    fn rotate(&self, r: &PyRotation) -> Self {
        Self {
            inner: sphcnn::rotate_signal(&self.inner, &r.inner),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Signal({}x{}, features={})",
            self.n_theta(),
            self.n_phi(),
            self.n_features()
        )
    }
}

#[pyclass(name = "Rotation", module = "sphcnn", from_py_object)]
#[derive(Clone)]
pub struct PyRotation {
    inner: sphcnn::Rotation,
}

#[pymethods]
impl PyRotation {
    #[staticmethod]
    fn identity() -> Self {
        Self {
            inner: sphcnn::Rotation::identity(),
        }
    }

    /// ZYZ Euler angles in radians.
    #[staticmethod]
    fn from_euler(phi: f64, theta: f64, rho: f64) -> Self {
        Self {
            inner: sphcnn::Rotation::from_euler(phi, theta, rho),
        }
    }

    #[staticmethod]
    fn from_axis_angle(axis: [f64; 3], angle: f64) -> PyResult<Self> {
        Ok(Self {
            inner: sphcnn::Rotation::from_axis_angle(axis, angle).map_err(err)?,
        })
    }

    /// `self ∘ other`: `other` acts first.
    fn compose(&self, other: &PyRotation) -> Self {
        Self {
            inner: self.inner.compose(&other.inner),
        }
    }

    fn inverse(&self) -> Self {
        Self {
            inner: self.inner.inverse(),
        }
    }

    fn euler_angles(&self) -> (f64, f64, f64) {
        self.inner.euler_angles()
    }

    fn matrix(&self) -> [[f64; 3]; 3] {
        self.inner.matrix()
    }

    fn angle(&self) -> f64 {
        self.inner.angle()
    }

    fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        self.inner.rotate_vec(v)
    }

    fn distance(&self, other: &PyRotation) -> f64 {
        self.inner.distance(&other.inner)
    }

    fn __repr__(&self) -> String {
        let (p, t, r) = self.inner.euler_angles();
        format!("Rotation(euler=({p:.6}, {t:.6}, {r:.6}))")
    }
}

/// A deformation field on a grid.
#[pyclass(name = "DiffeoField", module = "sphcnn", from_py_object)]
#[derive(Clone)]
pub struct PyField {
    inner: DiffeoField,
}

#[pymethods]
impl PyField {
    #[staticmethod]
    #[pyo3(signature = (eps, seed, n_theta, n_phi=None))]
    fn smooth(eps: f64, seed: u64, n_theta: usize, n_phi: Option<usize>) -> PyResult<Self> {
        let grid = EquiangularGrid::new(n_theta, n_phi.unwrap_or(n_theta)).map_err(err)?;
        Ok(Self {
            inner: perturb::make_smooth_diffeo(grid, eps, seed).map_err(err)?,
        })
    }

    /// One of the structured types 1 to 4.
    #[staticmethod]
    #[pyo3(signature = (kind, seed, n_theta, n_phi=None))]
    fn of_type(kind: u8, seed: u64, n_theta: usize, n_phi: Option<usize>) -> PyResult<Self> {
        let grid = EquiangularGrid::new(n_theta, n_phi.unwrap_or(n_theta)).map_err(err)?;
        Ok(Self {
            inner: perturb::make_type(kind, grid, seed).map_err(err)?,
        })
    }

    /// `(tau_norm, tau_grad_norm)`.
    fn sizes(&self) -> (f64, f64) {
        perturb::tau_sizes(&self.inner)
    }

    fn apply(&self, x: &PySignal) -> PyResult<PySignal> {
        Ok(PySignal {
            inner: perturb::apply_diffeo(&x.inner, &self.inner).map_err(err)?,
        })
    }
}

#[pyclass(name = "Network", module = "sphcnn", from_py_object)]
#[derive(Clone)]
pub struct PyNetwork {
    inner: NetworkSpec,
}

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    #[pyo3(signature = (features, seed, target_c_h=1.0, activation="relu"))]
    fn random(features: Vec<usize>, seed: u64, target_c_h: f64, activation: &str) -> PyResult<Self> {
        let mut p = RandomNetworkParams::new(features, target_c_h);
        p.activation = activation.parse().map_err(err)?;
        Ok(Self {
            inner: scnn::random_network(&p, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self {
            inner: scnn::network_from_json(&v).map_err(err)?.network,
        })
    }

    fn to_json(&self) -> String {
        scnn::network_to_json(&self.inner, None).to_string()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    #[getter]
    fn features(&self) -> Vec<usize> {
        self.inner.features()
    }

    #[getter]
    fn c_h(&self) -> f64 {
        self.inner.c_h()
    }

    #[getter]
    fn c_sigma(&self) -> f64 {
        self.inner.c_sigma()
    }

    #[pyo3(signature = (x, kernel="zonal"))]
    fn forward(&self, x: &PySignal, kernel: &str) -> PyResult<PySignal> {
        let q = So3Quadrature::for_grid(&x.inner.grid()).map_err(err)?;
        Ok(PySignal {
            inner: scnn::forward(&self.inner, &x.inner, &q, self::kernel(kernel)?).map_err(err)?,
        })
    }
}

fn parse_bank(json: &str) -> PyResult<FilterBank> {
    serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Applies a filter bank given as JSON.
#[pyfunction]
#[pyo3(signature = (bank_json, x, kernel="zonal"))]
fn conv_bank(bank_json: &str, x: &PySignal, kernel: &str) -> PyResult<PySignal> {
    let bank = parse_bank(bank_json)?;
    let q = So3Quadrature::for_grid(&x.inner.grid()).map_err(err)?;
    Ok(PySignal {
        inner: conv::conv_bank(&bank, &x.inner, &q, self::kernel(kernel)?).map_err(err)?,
    })
}

/// Certified constant of a filter bank given as JSON.
#[pyfunction]
fn lipschitz_constant(bank_json: &str) -> PyResult<f64> {
    Ok(parse_bank(bank_json)?.lipschitz_constant())
}

#[pyfunction]
fn relative_rmse(a: &PySignal, b: &PySignal) -> PyResult<f64> {
    metrics::relative_rmse(&a.inner, &b.inner).map_err(err)
}

/// `(distance, best rotation)`; the distance is an upper bound.
#[pyfunction]
fn rotation_distance(x: &PySignal, y: &PySignal) -> PyResult<(f64, PyRotation)> {
    let d = metrics::rotation_distance(&x.inner, &y.inner, &DISTANCE_BUDGET).map_err(err)?;
    Ok((d.distance, PyRotation { inner: d.rotation }))
}

#[pyfunction]
#[pyo3(signature = (net, x, r, kernel="zonal", distance=false))]
fn equivariance_report(
    py: Python<'_>,
    net: &PyNetwork,
    x: &PySignal,
    r: &PyRotation,
    kernel: &str,
    distance: bool,
) -> PyResult<Py<PyAny>> {
    let q = So3Quadrature::for_grid(&x.inner.grid()).map_err(err)?;
    let op = Operator::Network {
        net: &net.inner,
        quadrature: &q,
        kernel: self::kernel(kernel)?,
    };
    let budget = distance.then_some(&DISTANCE_BUDGET);
    let rep = metrics::equivariance_report(&op, &x.inner, &r.inner, budget).map_err(err)?;
    report(py, &rep)
}

#[pyfunction]
#[pyo3(signature = (net, x, field, eps, kernel="zonal"))]
fn stability_report(
    py: Python<'_>,
    net: &PyNetwork,
    x: &PySignal,
    field: &PyField,
    eps: f64,
    kernel: &str,
) -> PyResult<Py<PyAny>> {
    let q = So3Quadrature::for_grid(&x.inner.grid()).map_err(err)?;
    let op = Operator::Network {
        net: &net.inner,
        quadrature: &q,
        kernel: self::kernel(kernel)?,
    };
    let rep = metrics::stability_report(&op, &x.inner, &field.inner, eps, &StabilityOptions::default())
        .map_err(err)?;
    report(py, &rep)
}

#[pyfunction]
fn bound_thm1(c_h: f64, eps: f64, norm_x: f64) -> PyResult<f64> {
    metrics::bound_thm1(c_h, eps, norm_x).map_err(err)
}

#[pyfunction]
fn bound_thm2(c_h: f64, c_sigma: f64, depth: usize, features: usize, eps: f64, norm_x: f64) -> PyResult<f64> {
    metrics::bound_thm2(c_h, c_sigma, depth, features, eps, norm_x).map_err(err)
}

/// Ray-casts an OFF mesh from `center`; returns the signal and cast counts.
#[pyfunction]
#[pyo3(signature = (path, n_theta, n_phi=None, center=[0.0, 0.0, 0.0]))]
fn ingest_off(
    py: Python<'_>,
    path: &str,
    n_theta: usize,
    n_phi: Option<usize>,
    center: [f64; 3],
) -> PyResult<(PySignal, Py<PyAny>)> {
    let mesh = ingest_mod::load_off(path).map_err(err)?;
    let grid = EquiangularGrid::new(n_theta, n_phi.unwrap_or(n_theta)).map_err(err)?;
    let (s, rep) = ingest_mod::ray_cast_signal(&mesh, center, grid).map_err(err)?;
    Ok((PySignal { inner: s }, report(py, &rep)?))
}

#[pymodule]
#[pyo3(name = "sphcnn")]
fn sphcnn_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySignal>()?;
    m.add_class::<PyRotation>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(conv_bank, m)?)?;
    m.add_function(wrap_pyfunction!(lipschitz_constant, m)?)?;
    m.add_function(wrap_pyfunction!(relative_rmse, m)?)?;
    m.add_function(wrap_pyfunction!(rotation_distance, m)?)?;
    m.add_function(wrap_pyfunction!(equivariance_report, m)?)?;
    m.add_function(wrap_pyfunction!(stability_report, m)?)?;
    m.add_function(wrap_pyfunction!(bound_thm1, m)?)?;
    m.add_function(wrap_pyfunction!(bound_thm2, m)?)?;
    m.add_function(wrap_pyfunction!(ingest_off, m)?)?;
    Ok(())
}
