//! Python bindings: the model, its operator families, quantum states, the
//! two evolution routes, closure verification, and maximum-entropy fits.
//!
//! ```python
//! import mjcm
//! model = mjcm.Model(e1=0.0, e2=1.0, omega=1.0, gamma=0.25, m=1, n_max=4)
//! family = model.hierarchy("set1", depth=4)
//! print(family.verify_closure()["max_residual"])
//! state = mjcm.State.basis(model, level=2, fock=0)
//! series = family.evolve_exact(state, step=0.01, t_end=25.0)
//! ```

use std::collections::BTreeMap;

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mjcm_core::algebra::{
    analytic_coefficients, boundary_closed_coefficients, conserved_functionals,
    solve_structure_constants, AlphaMode, CoefficientMatrices,
};
use mjcm_core::dynamics::{
    evolve_bloch, evolve_exact, suggested_step, ExactMethod, IntegratorConfig, TimeSeries,
};
use mjcm_core::mep::{self, FitOptions, MepState};
use mjcm_core::model::{build_hierarchy_set, DriveSpec, ModelParams, OperatorSet, SetVariant};
use mjcm_core::operator::{HilbertDims, QuantumState};
use mjcm_core::Error;

/// Map library failures onto Python exceptions: states of the computation
/// (aborts, non-convergence, backend trouble) become `RuntimeError`,
/// everything about the inputs becomes `ValueError`.
fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::IntegrationAborted { .. } | Error::FitNotConverged { .. } | Error::Linalg(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_variant(name: &str) -> PyResult<SetVariant> {
    match name {
        "fundamental" => Ok(SetVariant::Fundamental),
        "set1" => Ok(SetVariant::Set1),
        "set2" => Ok(SetVariant::Set2),
        "set3" => Ok(SetVariant::Set3),
        other => Err(PyValueError::new_err(format!(
            "unknown family variant {other:?}; use fundamental/set1/set2/set3"
        ))),
    }
}

fn parse_mode(name: &str) -> PyResult<AlphaMode> {
    match name {
        "derived" => Ok(AlphaMode::Derived),
        "printed" => Ok(AlphaMode::Printed),
        other => Err(PyValueError::new_err(format!(
            "unknown coefficient mode {other:?}; use derived/printed"
        ))),
    }
}

fn parse_method(name: &str) -> PyResult<ExactMethod> {
    match name {
        "auto" => Ok(ExactMethod::Auto),
        "spectral" => Ok(ExactMethod::Spectral),
        "rk4" => Ok(ExactMethod::Rk4),
        other => Err(PyValueError::new_err(format!(
            "unknown propagation method {other:?}; use auto/spectral/rk4"
        ))),
    }
}

/// `(i1, i2)` occupations for a `level` tag of 1 or 2.
fn level_occupations(level: u8) -> PyResult<(usize, usize)> {
    match level {
        1 => Ok((1, 0)),
        2 => Ok((0, 1)),
        other => Err(PyValueError::new_err(format!(
            "level must be 1 or 2, got {other}"
        ))),
    }
}

/// Drive envelope from a Python dict like `{"kind": "sinusoid",
/// "amplitude": 1.0, "frequency": 2.0}`; `None` means a constant unit
/// envelope.
fn drive_from_py(spec: Option<&Bound<'_, PyDict>>) -> PyResult<DriveSpec> {
    let Some(spec) = spec else {
        return Ok(DriveSpec::Constant { amplitude: 1.0 });
    };
    let kind: String = spec
        .get_item("kind")?
        .ok_or_else(|| PyValueError::new_err("drive dict needs a \"kind\" entry"))?
        .extract()?;
    let field = |key: &str| -> PyResult<f64> {
        spec.get_item(key)?
            .ok_or_else(|| PyValueError::new_err(format!("drive {kind:?} needs {key:?}")))?
            .extract()
    };
    match kind.as_str() {
        "constant" => Ok(DriveSpec::Constant {
            amplitude: field("amplitude")?,
        }),
        "sinusoid" => Ok(DriveSpec::Sinusoid {
            amplitude: field("amplitude")?,
            frequency: field("frequency")?,
        }),
        "gaussian-pulse" => Ok(DriveSpec::GaussianPulse {
            amplitude: field("amplitude")?,
            center: field("center")?,
            width: field("width")?,
        }),
        "step" => Ok(DriveSpec::Step {
            amplitude: field("amplitude")?,
            onset: field("onset")?,
        }),
        other => Err(PyValueError::new_err(format!(
            "unknown drive kind {other:?}; use constant/sinusoid/gaussian-pulse/step"
        ))),
    }
}

fn integrator(step: f64, t_end: f64, record_stride: usize) -> IntegratorConfig {
    IntegratorConfig {
        step,
        t_end,
        record_stride,
        convergence_check: false,
    }
}

/// A sampled trajectory as a dict of plain lists.
fn series_to_py<'py>(py: Python<'py>, s: &TimeSeries) -> PyResult<Bound<'py, PyDict>> {
    let meta = PyDict::new(py);
    meta.set_item("method", &s.metadata.method)?;
    meta.set_item("steps", s.metadata.steps)?;
    meta.set_item("max_norm_drift", s.metadata.max_norm_drift)?;
    meta.set_item("max_imag_residue", s.metadata.max_imag_residue)?;
    meta.set_item("convergence_gap", s.metadata.convergence_gap)?;
    let out = PyDict::new(py);
    out.set_item("times", &s.times)?;
    out.set_item("labels", &s.labels)?;
    out.set_item("columns", &s.columns)?;
    out.set_item("metadata", meta)?;
    Ok(out)
}

fn mep_state_to_py<'py>(py: Python<'py>, s: &MepState) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("labels", &s.labels)?;
    out.set_item("lambdas", &s.lambdas)?;
    out.set_item("lambda0", s.lambda0)?;
    out.set_item("means", &s.means)?;
    out.set_item("entropy", s.entropy)?;
    Ok(out)
}

/// The m-photon two-level model on a truncated field ladder.
#[pyclass(frozen, module = "mjcm")]
struct Model {
    params: ModelParams,
}

#[pymethods]
impl Model {
    /// Model(e1, e2, omega, gamma, m, n_max, drive=None,
    ///       allow_zero_coupling=False)
    ///
    /// `gamma` may be complex. `drive` is a dict with a "kind" entry
    /// (constant/sinusoid/gaussian-pulse/step) and that kind's parameters;
    /// omitted, it defaults to a constant unit envelope.
    #[new]
    #[pyo3(signature = (e1, e2, omega, gamma, m, n_max, drive=None, allow_zero_coupling=false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        e1: f64,
        e2: f64,
        omega: f64,
        gamma: Complex64,
        m: usize,
        n_max: usize,
        drive: Option<&Bound<'_, PyDict>>,
        allow_zero_coupling: bool,
    ) -> PyResult<Self> {
        let params = ModelParams {
            e1,
            e2,
            omega,
            gamma,
            m,
            drive: drive_from_py(drive)?,
            dims: HilbertDims::new(n_max),
            allow_zero_coupling,
        };
        params.validate().map_err(to_py_err)?;
        Ok(Self { params })
    }

    #[getter]
    fn m(&self) -> usize {
        self.params.m
    }

    #[getter]
    fn n_max(&self) -> usize {
        self.params.dims.n_max()
    }

    /// Dimension of the truncated product space, `4 (n_max + 1)`.
    #[getter]
    fn total_dim(&self) -> usize {
        self.params.dims.total_dim()
    }

    /// Conservative integrator step for this model's fastest frequency.
    fn suggested_step(&self) -> f64 {
        suggested_step(&self.params)
    }

    /// Build an operator family: `variant` is one of
    /// fundamental/set1/set2/set3, `depth` the deepest hierarchy level.
    #[pyo3(signature = (variant, depth))]
    fn hierarchy(&self, variant: &str, depth: usize) -> PyResult<Family> {
        let variant = parse_variant(variant)?;
        let set = build_hierarchy_set(&self.params, variant, depth).map_err(to_py_err)?;
        Ok(Family {
            params: self.params.clone(),
            set,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(e1={}, e2={}, omega={}, gamma={}, m={}, n_max={})",
            self.params.e1,
            self.params.e2,
            self.params.omega,
            self.params.gamma,
            self.params.m,
            self.params.dims.n_max()
        )
    }
}

/// An ordered family of Hermitian operators tied to one model.
#[pyclass(frozen, module = "mjcm")]
struct Family {
    params: ModelParams,
    set: OperatorSet,
}

impl Family {
    /// Mean-value coefficients under the CLI's convention: families spanning
    /// the whole ladder get the boundary-closed constants, shallower ones
    /// the closed-form ladder constants.
    fn bloch_coefficients(&self, mode: AlphaMode) -> PyResult<CoefficientMatrices> {
        if self.set.variant != SetVariant::Set1 {
            return Err(PyValueError::new_err(
                "closed-form mean-value coefficients exist for set1 only",
            ));
        }
        if self.set.depth == self.params.dims.n_max() {
            boundary_closed_coefficients(&self.params, &self.set, mode).map_err(to_py_err)
        } else {
            analytic_coefficients(&self.params, self.set.depth, mode).map_err(to_py_err)
        }
    }
}

#[pymethods]
impl Family {
    #[getter]
    fn labels(&self) -> Vec<String> {
        self.set.labels().to_vec()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.set.depth
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.set.variant.as_str()
    }

    fn __len__(&self) -> usize {
        self.set.len()
    }

    /// Solve the structure constants on the safe window (photon numbers up
    /// to `n_safe`, default the family depth) and measure closure. Returns
    /// a dict with the residuals, the solved coefficient matrices, and a
    /// `closes` verdict against `tol`.
    #[pyo3(signature = (n_safe=None, tol=1e-9))]
    fn verify_closure<'py>(
        &self,
        py: Python<'py>,
        n_safe: Option<usize>,
        tol: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let n_safe = n_safe.unwrap_or(self.set.depth);
        let report =
            solve_structure_constants(&self.params, &self.set, n_safe).map_err(to_py_err)?;
        let g_static: Vec<Vec<f64>> = report
            .coefficients
            .g_static
            .outer_iter()
            .map(|r| r.to_vec())
            .collect();
        let g_drive: Vec<Vec<f64>> = report
            .coefficients
            .g_drive
            .outer_iter()
            .map(|r| r.to_vec())
            .collect();
        let out = PyDict::new(py);
        out.set_item("labels", &report.coefficients.labels)?;
        out.set_item("n_safe", report.n_safe)?;
        out.set_item("projected_dim", report.projected_dim)?;
        out.set_item("max_residual", report.max_residual)?;
        out.set_item("closes", report.closes_within(tol))?;
        out.set_item("rank", report.rank)?;
        out.set_item("residual_static", &report.residual_static)?;
        out.set_item("residual_drive", &report.residual_drive)?;
        out.set_item("vanishing_members", &report.vanishing_members)?;
        out.set_item("singular_values", &report.singular_values)?;
        out.set_item("g_static", g_static)?;
        out.set_item("g_drive", g_drive)?;
        Ok(out)
    }

    /// Closed-form mean-value coefficients (`set1` only): a dict with
    /// `labels`, `g_static`, and `g_drive`. `mode` picks the level-splitting
    /// convention, derived or printed.
    #[pyo3(signature = (mode="derived"))]
    fn coefficients<'py>(&self, py: Python<'py>, mode: &str) -> PyResult<Bound<'py, PyDict>> {
        let g = self.bloch_coefficients(parse_mode(mode)?)?;
        let g_static: Vec<Vec<f64>> = g.g_static.outer_iter().map(|r| r.to_vec()).collect();
        let g_drive: Vec<Vec<f64>> = g.g_drive.outer_iter().map(|r| r.to_vec()).collect();
        let out = PyDict::new(py);
        out.set_item("labels", &g.labels)?;
        out.set_item("g_static", g_static)?;
        out.set_item("g_drive", g_drive)?;
        Ok(out)
    }

    /// The linear functionals of the means that the dynamics conserves
    /// exactly, as `(name, coefficient-vector)` pairs.
    fn conserved(&self) -> Vec<(String, Vec<f64>)> {
        conserved_functionals(&self.set)
            .into_iter()
            .map(|f| (f.name, f.coeffs))
            .collect()
    }

    /// Mean value of every member under `state`, as a label-keyed dict.
    fn means<'py>(&self, py: Python<'py>, state: &State) -> PyResult<Bound<'py, PyDict>> {
        let (means, _) = mep::mean_vector(&self.set, &state.inner).map_err(to_py_err)?;
        let out = PyDict::new(py);
        for (label, value) in self.set.labels().iter().zip(means) {
            out.set_item(label, value)?;
        }
        Ok(out)
    }

    /// Maximum-entropy state `exp(-Σ λ_j Ô_j)/Z` from a label-keyed
    /// multiplier dict; members not listed carry zero.
    fn mep_state(&self, lambdas: BTreeMap<String, f64>) -> PyResult<State> {
        let mut lam = vec![0.0; self.set.len()];
        for (label, value) in &lambdas {
            lam[self.set.index_of(label).map_err(to_py_err)?] = *value;
        }
        let (state, _) = mep::build_rho(&self.set, &lam).map_err(to_py_err)?;
        Ok(State { inner: state })
    }

    /// Fit multipliers so the maximum-entropy state reproduces the target
    /// means (a label-keyed dict). Empty targets give the uniform state.
    /// Returns the fitted state plus convergence diagnostics.
    #[pyo3(signature = (targets, tol=1e-10, max_iter=200))]
    fn fit_mep<'py>(
        &self,
        py: Python<'py>,
        targets: BTreeMap<String, f64>,
        tol: f64,
        max_iter: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        if targets.is_empty() {
            let state = mep::uniform_state(&self.set).map_err(to_py_err)?;
            let out = mep_state_to_py(py, &state)?;
            out.set_item("iterations", 0)?;
            out.set_item("gap", 0.0)?;
            return Ok(out);
        }
        let pairs: Vec<(String, f64)> =
            targets.iter().map(|(l, v)| (l.clone(), *v)).collect();
        let options = FitOptions {
            tol,
            max_iter,
            initial: None,
        };
        let report = mep::fit_lambdas(&self.set, &pairs, &options).map_err(to_py_err)?;
        let out = mep_state_to_py(py, &report.state)?;
        out.set_item("iterations", report.iterations)?;
        out.set_item("gap", report.gap)?;
        out.set_item("hessian_rank", report.hessian_rank)?;
        out.set_item("gauge_deficiency", report.gauge_deficiency)?;
        Ok(out)
    }

    /// Propagate the state exactly and sample every member's mean. Returns
    /// `{times, labels, columns, metadata}` with one column per member.
    #[pyo3(signature = (state, step, t_end, record_stride=1, method="auto"))]
    fn evolve_exact<'py>(
        &self,
        py: Python<'py>,
        state: &State,
        step: f64,
        t_end: f64,
        record_stride: usize,
        method: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let series = evolve_exact(
            &self.params,
            &self.set,
            &state.inner,
            &integrator(step, t_end, record_stride),
            parse_method(method)?,
        )
        .map_err(to_py_err)?;
        series_to_py(py, &series)
    }

    /// Integrate the closed mean-value equations from the state's means
    /// (`set1` only). Same return shape as `evolve_exact`.
    #[pyo3(signature = (state, step, t_end, record_stride=1, mode="derived"))]
    fn evolve_means<'py>(
        &self,
        py: Python<'py>,
        state: &State,
        step: f64,
        t_end: f64,
        record_stride: usize,
        mode: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let coefficients = self.bloch_coefficients(parse_mode(mode)?)?;
        let (y0, _) = mep::mean_vector(&self.set, &state.inner).map_err(to_py_err)?;
        let series = evolve_bloch(
            &coefficients,
            &self.params.drive,
            &y0,
            &integrator(step, t_end, record_stride),
        )
        .map_err(to_py_err)?;
        series_to_py(py, &series)
    }

    fn __repr__(&self) -> String {
        format!(
            "Family(variant={:?}, depth={}, members={})",
            self.set.variant.as_str(),
            self.set.depth,
            self.set.len()
        )
    }
}

/// A pure state or density matrix on the model's product space.
#[pyclass(frozen, module = "mjcm")]
struct State {
    inner: QuantumState,
}

#[pymethods]
impl State {
    /// Product basis state `|level⟩ ⊗ |fock⟩` (level 1 or 2).
    #[staticmethod]
    #[pyo3(signature = (model, level, fock=0))]
    fn basis(model: &Model, level: u8, fock: usize) -> PyResult<Self> {
        let (i1, i2) = level_occupations(level)?;
        Ok(Self {
            inner: QuantumState::basis_state(model.params.dims, i1, i2, fock)
                .map_err(to_py_err)?,
        })
    }

    /// Product of a level state with a coherent field state; requires
    /// `|alpha|² ≤ n_max / 4` so the photon tail fits the truncation.
    #[staticmethod]
    fn coherent(model: &Model, level: u8, alpha: Complex64) -> PyResult<Self> {
        let (i1, i2) = level_occupations(level)?;
        Ok(Self {
            inner: QuantumState::coherent(model.params.dims, i1, i2, alpha)
                .map_err(to_py_err)?,
        })
    }

    #[getter]
    fn is_pure(&self) -> bool {
        self.inner.is_pure()
    }

    /// Von Neumann entropy `-Tr ρ ln ρ`.
    fn entropy(&self) -> PyResult<f64> {
        mep::entropy(&self.inner).map_err(to_py_err)
    }
}

/// Numerical laboratory for a two-level system exchanging `m` photons with
/// a single field mode.
#[pymodule]
fn mjcm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Family>()?;
    m.add_class::<State>()?;
    Ok(())
}
