//! Time evolution along two independent routes.
//!
//! The *exact* route propagates the quantum state itself — spectrally for
//! constant envelopes, by a fixed-step fourth-order Runge–Kutta scheme
//! otherwise — and reads mean values off the state. The *mean-value* route
//! never touches the state: it integrates the closed equations
//! `ẏ = (g⁰ + T(t) g¹) y` built from the structure constants. Where the
//! operator family closes, the two must agree; comparing them is the main
//! cross-check of the whole construction.
//!
//! A third route propagates maximum-entropy multipliers by the adjoint
//! equations `λ̇ = -(g⁰ + T(t) g¹)ᵀ λ`, under which `λ·y` and the entropy
//! `λ₀ + λ·y` are exact invariants.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::algebra::CoefficientMatrices;
use crate::error::{Error, Result};
use crate::mep;
use crate::model::{
    build_hamiltonian_parts, falling_factorial, DriveSpec, ModelParams, OperatorSet,
};
use crate::operator::{eigh_hermitian, expectation, Operator, QuantumState};

/// Unitarity budget: the integration aborts when the state norm (pure) or
/// trace (density) drifts from 1 by more than this.
pub const DRIFT_LIMIT: f64 = 1e-8;

/// Fixed-step integration window. The step is adjusted to the nearest value
/// that reaches `t_end` in a whole number of steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub step: f64,
    pub t_end: f64,
    /// Record every k-th step (plus the endpoints).
    #[serde(default = "default_stride", skip_serializing_if = "is_default_stride")]
    pub record_stride: usize,
    /// Re-run at half the step and report the largest sampled deviation in
    /// the metadata (Runge–Kutta paths only).
    #[serde(default, skip_serializing_if = "is_false")]
    pub convergence_check: bool,
}

fn default_stride() -> usize {
    1
}

fn is_default_stride(stride: &usize) -> bool {
    *stride == default_stride()
}

fn is_false(flag: &bool) -> bool {
    !*flag
}

impl IntegratorConfig {
    pub fn new(step: f64, t_end: f64) -> Self {
        Self {
            step,
            t_end,
            record_stride: 1,
            convergence_check: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "integrator step must be positive, got {}",
                self.step
            )));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "integration horizon must be non-negative, got {}",
                self.t_end
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidParams(
                "record_stride must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Number of steps and the adjusted step width.
    fn grid(&self) -> (usize, f64) {
        if self.t_end == 0.0 {
            return (0, self.step);
        }
        let n = (self.t_end / self.step).round().max(1.0) as usize;
        (n, self.t_end / n as f64)
    }
}

/// Conservative step size for the model: `0.01 / Ω_max`, where `Ω_max`
/// bounds the fastest frequency in the generator — level splitting, mode
/// frequency, or the top-of-ladder coupling `|γ T| √((n_max)_m)`.
pub fn suggested_step(params: &ModelParams) -> f64 {
    let coupling = params.gamma.norm()
        * params.drive.max_abs()
        * falling_factorial(params.dims.n_max(), params.m).sqrt();
    let omega_max = (params.e2 - params.e1)
        .abs()
        .max(params.omega.abs())
        .max(coupling)
        .max(1e-12);
    0.01 / omega_max
}

/// Integration diagnostics attached to every trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct SeriesMetadata {
    /// Which route produced the data.
    pub method: String,
    /// Number of integration steps taken (0 for a purely sampled route).
    pub steps: usize,
    /// Largest deviation of the state norm or trace from 1.
    pub max_norm_drift: f64,
    /// Largest imaginary part encountered when reading Hermitian means.
    pub max_imag_residue: f64,
    /// Largest sampled deviation against a half-step re-run, when requested.
    pub convergence_gap: Option<f64>,
}

/// A sampled trajectory: one column of values per label, all aligned with
/// `times`.
#[derive(Debug, Clone)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub labels: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub metadata: SeriesMetadata,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, label: &str) -> Result<&[f64]> {
        let j = self
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
        Ok(&self.columns[j])
    }

    /// All values at sample `i`, in label order.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Largest absolute difference against another series with the same
    /// shape, compared sample by sample.
    pub fn max_deviation(&self, other: &TimeSeries) -> Result<f64> {
        if self.labels != other.labels || self.len() != other.len() {
            return Err(Error::DimensionMismatch(
                "series shapes differ; cannot compare".into(),
            ));
        }
        let mut gap = 0.0_f64;
        for (a, b) in self.columns.iter().zip(&other.columns) {
            for (x, y) in a.iter().zip(b) {
                gap = gap.max((x - y).abs());
            }
        }
        Ok(gap)
    }
}

/// How the exact route propagates the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExactMethod {
    /// Spectral for constant envelopes, Runge–Kutta otherwise.
    Auto,
    /// One diagonalization, exact phases; constant envelopes only.
    Spectral,
    /// Fixed-step fourth-order Runge–Kutta on the state.
    Rk4,
}

/// Should step `k` of `n` be recorded?
fn is_sample(k: usize, n: usize, stride: usize) -> bool {
    k % stride == 0 || k == n
}

/// Rotate an operator into the eigenbasis `V`: `V† O V`.
fn to_eigenbasis(op: &Operator, vectors: &Array2<C64>) -> Array2<C64> {
    let vm = op.matrix().dot(vectors);
    vectors.t().mapv(|z| z.conj()).dot(&vm)
}

struct RawRun {
    times: Vec<f64>,
    columns: Vec<Vec<f64>>,
    max_norm_drift: f64,
    max_imag_residue: f64,
}

/// Exact propagation for a constant envelope: one Hermitian diagonalization,
/// then closed-form phases at every sample.
fn run_spectral(
    params: &ModelParams,
    set: &OperatorSet,
    initial: &QuantumState,
    n_steps: usize,
    h: f64,
    stride: usize,
) -> Result<RawRun> {
    let parts = build_hamiltonian_parts(params)?;
    let envelope = C64::new(params.drive.value(0.0), 0.0);
    let hamiltonian = &parts.h_static + &parts.h_drive.scale(envelope);
    let (energies, vectors) = eigh_hermitian(&hamiltonian, 1e-10)?;
    let d = energies.len();

    let rotated: Vec<Array2<C64>> = set
        .members()
        .iter()
        .map(|o| to_eigenbasis(o, &vectors))
        .collect();

    // Pure states evolve as phased coefficients; density matrices reduce to
    // a phase quadratic form per member:
    //   ⟨Ô⟩(t) = Σ_pq z_p z̄_q M[p,q],  M[p,q] = ρ̃₀[p,q] Õ[q,p],
    // with z_p = exp(-i E_p t).
    enum Prepared {
        Pure(Array1<C64>),
        Density(Vec<Array2<C64>>),
    }
    let prepared = if initial.is_pure() {
        let psi = match initial {
            QuantumState::Pure { amplitudes, .. } => amplitudes.clone(),
            QuantumState::Density { .. } => unreachable!(),
        };
        Prepared::Pure(vectors.t().mapv(|z| z.conj()).dot(&psi))
    } else {
        let rho = Operator::new(params.dims, initial.density_matrix())?;
        let rho_tilde = to_eigenbasis(&rho, &vectors);
        let quadratics = rotated
            .iter()
            .map(|o| Array2::from_shape_fn((d, d), |(p, q)| rho_tilde[[p, q]] * o[[q, p]]))
            .collect();
        Prepared::Density(quadratics)
    };

    let mut times = Vec::new();
    let mut columns = vec![Vec::new(); set.len()];
    let mut max_imag = 0.0_f64;
    for k in 0..=n_steps {
        if !is_sample(k, n_steps, stride) {
            continue;
        }
        let t = k as f64 * h;
        let phases = energies.mapv(|e| C64::from_polar(1.0, -e * t));
        match &prepared {
            Prepared::Pure(psi_tilde) => {
                let phi = &phases * psi_tilde;
                let phi_conj = phi.mapv(|z| z.conj());
                for (j, o) in rotated.iter().enumerate() {
                    let v = phi_conj.dot(&o.dot(&phi));
                    max_imag = max_imag.max(v.im.abs());
                    columns[j].push(v.re);
                }
            }
            Prepared::Density(quadratics) => {
                let phases_conj = phases.mapv(|z| z.conj());
                for (j, m) in quadratics.iter().enumerate() {
                    let w = m.dot(&phases_conj);
                    let v = phases.dot(&w);
                    max_imag = max_imag.max(v.im.abs());
                    columns[j].push(v.re);
                }
            }
        }
        times.push(t);
    }

    Ok(RawRun {
        times,
        columns,
        max_norm_drift: 0.0,
        max_imag_residue: max_imag,
    })
}

/// One classical Runge–Kutta step of `ψ̇ = -i Ĥ(t) ψ`.
fn rk4_step_state(
    h_static: &Array2<C64>,
    h_drive: &Array2<C64>,
    drive: &DriveSpec,
    t: f64,
    h: f64,
    psi: &Array1<C64>,
) -> Array1<C64> {
    let apply = |tt: f64, v: &Array1<C64>| -> Array1<C64> {
        let mut hv = h_static.dot(v);
        hv = hv + &h_drive.dot(v) * C64::new(drive.value(tt), 0.0);
        hv * C64::new(0.0, -1.0)
    };
    let k1 = apply(t, psi);
    let k2 = apply(t + 0.5 * h, &(psi + &(&k1 * C64::new(0.5 * h, 0.0))));
    let k3 = apply(t + 0.5 * h, &(psi + &(&k2 * C64::new(0.5 * h, 0.0))));
    let k4 = apply(t + h, &(psi + &(&k3 * C64::new(h, 0.0))));
    psi + &((k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4)
        * C64::new(h / 6.0, 0.0))
}

/// One classical Runge–Kutta step of `ρ̇ = -i [Ĥ(t), ρ]`.
fn rk4_step_density(
    h_static: &Array2<C64>,
    h_drive: &Array2<C64>,
    drive: &DriveSpec,
    t: f64,
    h: f64,
    rho: &Array2<C64>,
) -> Array2<C64> {
    let apply = |tt: f64, r: &Array2<C64>| -> Array2<C64> {
        let ht = h_static + &(h_drive * C64::new(drive.value(tt), 0.0));
        let comm = ht.dot(r) - r.dot(&ht);
        comm * C64::new(0.0, -1.0)
    };
    let k1 = apply(t, rho);
    let k2 = apply(t + 0.5 * h, &(rho + &(&k1 * C64::new(0.5 * h, 0.0))));
    let k3 = apply(t + 0.5 * h, &(rho + &(&k2 * C64::new(0.5 * h, 0.0))));
    let k4 = apply(t + h, &(rho + &(&k3 * C64::new(h, 0.0))));
    rho + &((k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4)
        * C64::new(h / 6.0, 0.0))
}

fn run_exact_rk4(
    params: &ModelParams,
    set: &OperatorSet,
    initial: &QuantumState,
    n_steps: usize,
    h: f64,
    stride: usize,
) -> Result<RawRun> {
    let parts = build_hamiltonian_parts(params)?;
    let hs = parts.h_static.matrix();
    let hd = parts.h_drive.matrix();
    let drive = &params.drive;

    let mut times = Vec::new();
    let mut columns = vec![Vec::new(); set.len()];
    let mut max_drift = 0.0_f64;
    let mut max_imag = 0.0_f64;

    let mut record = |state: &QuantumState, t: f64, times: &mut Vec<f64>| -> Result<()> {
        for (j, member) in set.members().iter().enumerate() {
            let v = expectation(member, state)?;
            max_imag = max_imag.max(v.im.abs());
            columns[j].push(v.re);
        }
        times.push(t);
        Ok(())
    };

    match initial {
        QuantumState::Pure { amplitudes, .. } => {
            let mut psi = amplitudes.clone();
            record(
                &QuantumState::Pure {
                    dims: params.dims,
                    amplitudes: psi.clone(),
                },
                0.0,
                &mut times,
            )?;
            for k in 0..n_steps {
                let t = k as f64 * h;
                psi = rk4_step_state(hs, hd, drive, t, h, &psi);
                let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                let drift = (norm - 1.0).abs();
                max_drift = max_drift.max(drift);
                if drift > DRIFT_LIMIT {
                    return Err(Error::IntegrationAborted {
                        t: t + h,
                        what: "state norm".into(),
                        drift,
                        limit: DRIFT_LIMIT,
                    });
                }
                if is_sample(k + 1, n_steps, stride) {
                    record(
                        &QuantumState::Pure {
                            dims: params.dims,
                            amplitudes: psi.clone(),
                        },
                        (k + 1) as f64 * h,
                        &mut times,
                    )?;
                }
            }
        }
        QuantumState::Density { matrix, .. } => {
            let mut rho = matrix.clone();
            record(
                &QuantumState::Density {
                    dims: params.dims,
                    matrix: rho.clone(),
                },
                0.0,
                &mut times,
            )?;
            for k in 0..n_steps {
                let t = k as f64 * h;
                rho = rk4_step_density(hs, hd, drive, t, h, &rho);
                let trace: C64 = rho.diag().iter().sum();
                let drift = (trace.re - 1.0).abs().max(trace.im.abs());
                max_drift = max_drift.max(drift);
                if drift > DRIFT_LIMIT {
                    return Err(Error::IntegrationAborted {
                        t: t + h,
                        what: "density trace".into(),
                        drift,
                        limit: DRIFT_LIMIT,
                    });
                }
                if is_sample(k + 1, n_steps, stride) {
                    record(
                        &QuantumState::Density {
                            dims: params.dims,
                            matrix: rho.clone(),
                        },
                        (k + 1) as f64 * h,
                        &mut times,
                    )?;
                }
            }
        }
    }

    Ok(RawRun {
        times,
        columns,
        max_norm_drift: max_drift,
        max_imag_residue: max_imag,
    })
}

/// Propagate the state exactly and record the means of every family member.
/// Column labels are the member labels.
pub fn evolve_exact(
    params: &ModelParams,
    set: &OperatorSet,
    initial: &QuantumState,
    config: &IntegratorConfig,
    method: ExactMethod,
) -> Result<TimeSeries> {
    params.validate()?;
    config.validate()?;
    if set.dims() != params.dims || initial.dims() != params.dims {
        return Err(Error::DimensionMismatch(
            "parameters, family, and state must share one space".into(),
        ));
    }
    let (n_steps, h) = config.grid();
    let spectral = match method {
        ExactMethod::Auto => params.drive.is_constant(),
        ExactMethod::Spectral => {
            if !params.drive.is_constant() {
                return Err(Error::InvalidParams(
                    "spectral propagation needs a constant envelope".into(),
                ));
            }
            true
        }
        ExactMethod::Rk4 => false,
    };

    if spectral {
        let run = run_spectral(params, set, initial, n_steps, h, config.record_stride)?;
        return Ok(TimeSeries {
            times: run.times,
            labels: set.labels().to_vec(),
            columns: run.columns,
            metadata: SeriesMetadata {
                method: "exact-spectral".into(),
                steps: 0,
                max_norm_drift: run.max_norm_drift,
                max_imag_residue: run.max_imag_residue,
                convergence_gap: None,
            },
        });
    }

    let run = run_exact_rk4(params, set, initial, n_steps, h, config.record_stride)?;
    let convergence_gap = if config.convergence_check && n_steps > 0 {
        let fine = run_exact_rk4(
            params,
            set,
            initial,
            2 * n_steps,
            0.5 * h,
            2 * config.record_stride,
        )?;
        Some(max_column_gap(&run.columns, &fine.columns)?)
    } else {
        None
    };
    Ok(TimeSeries {
        times: run.times,
        labels: set.labels().to_vec(),
        columns: run.columns,
        metadata: SeriesMetadata {
            method: "exact-rk4".into(),
            steps: n_steps,
            max_norm_drift: run.max_norm_drift,
            max_imag_residue: run.max_imag_residue,
            convergence_gap,
        },
    })
}

/// Propagate the initial state to the end of the grid and return the evolved
/// state itself rather than tracked means. Useful when the caller needs the
/// state's spectrum afterwards (entropy, fidelity checks). Method selection
/// mirrors [`evolve_exact`]. The returned state is renormalized (norm or
/// trace) to absorb integrator rounding before validation; a step so coarse
/// that the state turns unphysical still fails loudly.
pub fn evolve_state(
    params: &ModelParams,
    initial: &QuantumState,
    config: &IntegratorConfig,
    method: ExactMethod,
) -> Result<QuantumState> {
    params.validate()?;
    config.validate()?;
    if initial.dims() != params.dims {
        return Err(Error::DimensionMismatch(
            "parameters and state must share one space".into(),
        ));
    }
    let (n_steps, h) = config.grid();
    let spectral = match method {
        ExactMethod::Auto => params.drive.is_constant(),
        ExactMethod::Spectral => {
            if !params.drive.is_constant() {
                return Err(Error::InvalidParams(
                    "spectral propagation needs a constant envelope".into(),
                ));
            }
            true
        }
        ExactMethod::Rk4 => false,
    };
    let parts = build_hamiltonian_parts(params)?;

    if spectral {
        let t_end = n_steps as f64 * h;
        let envelope = C64::new(params.drive.value(0.0), 0.0);
        let hamiltonian = &parts.h_static + &parts.h_drive.scale(envelope);
        let (energies, vectors) = eigh_hermitian(&hamiltonian, 1e-10)?;
        let phases = energies.mapv(|e| C64::from_polar(1.0, -e * t_end));
        let v_dag = vectors.t().mapv(|z| z.conj());
        return match initial {
            QuantumState::Pure { amplitudes, .. } => {
                let psi_tilde = v_dag.dot(amplitudes);
                let mut evolved = vectors.dot(&(&phases * &psi_tilde));
                let norm = evolved.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                evolved.mapv_inplace(|z| z / norm);
                QuantumState::pure(params.dims, evolved)
            }
            QuantumState::Density { matrix, .. } => {
                let rho_tilde = v_dag.dot(matrix).dot(&vectors);
                let d = energies.len();
                let phased = Array2::from_shape_fn((d, d), |(p, q)| {
                    phases[p] * rho_tilde[[p, q]] * phases[q].conj()
                });
                let rho_t = vectors.dot(&phased).dot(&v_dag);
                QuantumState::density(params.dims, hygienic_density(rho_t))
            }
        };
    }

    let hs = parts.h_static.matrix();
    let hd = parts.h_drive.matrix();
    let drive = &params.drive;
    match initial {
        QuantumState::Pure { amplitudes, .. } => {
            let mut psi = amplitudes.clone();
            for k in 0..n_steps {
                let t = k as f64 * h;
                psi = rk4_step_state(hs, hd, drive, t, h, &psi);
                let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                let drift = (norm - 1.0).abs();
                if drift > DRIFT_LIMIT {
                    return Err(Error::IntegrationAborted {
                        t: t + h,
                        what: "state norm".into(),
                        drift,
                        limit: DRIFT_LIMIT,
                    });
                }
            }
            let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            psi.mapv_inplace(|z| z / norm);
            QuantumState::pure(params.dims, psi)
        }
        QuantumState::Density { matrix, .. } => {
            let mut rho = matrix.clone();
            for k in 0..n_steps {
                let t = k as f64 * h;
                rho = rk4_step_density(hs, hd, drive, t, h, &rho);
                let trace: C64 = rho.diag().iter().sum();
                let drift = (trace.re - 1.0).abs().max(trace.im.abs());
                if drift > DRIFT_LIMIT {
                    return Err(Error::IntegrationAborted {
                        t: t + h,
                        what: "density trace".into(),
                        drift,
                        limit: DRIFT_LIMIT,
                    });
                }
            }
            QuantumState::density(params.dims, hygienic_density(rho))
        }
    }
}

/// Re-Hermitize and trace-normalize a density matrix to scrub integrator
/// rounding; genuine spectral damage still fails downstream validation.
fn hygienic_density(rho: Array2<C64>) -> Array2<C64> {
    let herm = (&rho + &rho.t().mapv(|z| z.conj())) * C64::new(0.5, 0.0);
    let trace: C64 = herm.diag().iter().sum();
    herm.mapv(|z| z / trace)
}

fn max_column_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::DimensionMismatch(
            "convergence re-run sampled a different grid".into(),
        ));
    }
    let mut gap = 0.0_f64;
    for (x, y) in a.iter().zip(b) {
        for (u, v) in x.iter().zip(y) {
            gap = gap.max((u - v).abs());
        }
    }
    Ok(gap)
}

/// One classical Runge–Kutta step of a real linear system `ẏ = A(t) y`.
fn rk4_step_linear(
    g_static: &Array2<f64>,
    g_drive: &Array2<f64>,
    drive: &DriveSpec,
    transpose_negate: bool,
    t: f64,
    h: f64,
    y: &Array1<f64>,
) -> Array1<f64> {
    let apply = |tt: f64, v: &Array1<f64>| -> Array1<f64> {
        let tv = drive.value(tt);
        let gv = if transpose_negate {
            -(g_static.t().dot(v) + g_drive.t().dot(v) * tv)
        } else {
            g_static.dot(v) + g_drive.dot(v) * tv
        };
        gv
    };
    let k1 = apply(t, y);
    let k2 = apply(t + 0.5 * h, &(y + &(&k1 * (0.5 * h))));
    let k3 = apply(t + 0.5 * h, &(y + &(&k2 * (0.5 * h))));
    let k4 = apply(t + h, &(y + &(&k3 * h)));
    y + &((k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

fn run_linear(
    coefficients: &CoefficientMatrices,
    drive: &DriveSpec,
    transpose_negate: bool,
    y0: &Array1<f64>,
    n_steps: usize,
    h: f64,
    stride: usize,
) -> Result<(Vec<f64>, Vec<Array1<f64>>)> {
    let mut times = Vec::new();
    let mut samples = Vec::new();
    let mut y = y0.clone();
    times.push(0.0);
    samples.push(y.clone());
    for k in 0..n_steps {
        let t = k as f64 * h;
        y = rk4_step_linear(
            &coefficients.g_static,
            &coefficients.g_drive,
            drive,
            transpose_negate,
            t,
            h,
            &y,
        );
        let magnitude = y.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if !magnitude.is_finite() {
            return Err(Error::IntegrationAborted {
                t: t + h,
                what: "mean-value vector magnitude".into(),
                drift: magnitude,
                limit: f64::INFINITY,
            });
        }
        if is_sample(k + 1, n_steps, stride) {
            times.push((k + 1) as f64 * h);
            samples.push(y.clone());
        }
    }
    Ok((times, samples))
}

/// Integrate the closed mean-value equations `ẏ = (g⁰ + T(t) g¹) y` from the
/// given initial means. Column labels are the member labels.
pub fn evolve_bloch(
    coefficients: &CoefficientMatrices,
    drive: &DriveSpec,
    initial_means: &[f64],
    config: &IntegratorConfig,
) -> Result<TimeSeries> {
    config.validate()?;
    if initial_means.len() != coefficients.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} initial means for {} members",
            initial_means.len(),
            coefficients.len()
        )));
    }
    let (n_steps, h) = config.grid();
    let y0 = Array1::from_vec(initial_means.to_vec());
    let (times, samples) = run_linear(
        coefficients,
        drive,
        false,
        &y0,
        n_steps,
        h,
        config.record_stride,
    )?;
    let convergence_gap = if config.convergence_check && n_steps > 0 {
        let (_, fine) = run_linear(
            coefficients,
            drive,
            false,
            &y0,
            2 * n_steps,
            0.5 * h,
            2 * config.record_stride,
        )?;
        Some(
            samples
                .iter()
                .zip(&fine)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                .fold(0.0_f64, f64::max),
        )
    } else {
        None
    };

    let n = coefficients.len();
    let mut columns = vec![Vec::with_capacity(times.len()); n];
    for sample in &samples {
        for (j, col) in columns.iter_mut().enumerate() {
            col.push(sample[j]);
        }
    }
    Ok(TimeSeries {
        times,
        labels: coefficients.labels.clone(),
        columns,
        metadata: SeriesMetadata {
            method: "mean-value-rk4".into(),
            steps: n_steps,
            max_norm_drift: 0.0,
            max_imag_residue: 0.0,
            convergence_gap,
        },
    })
}

/// Integrate the adjoint multiplier equations `λ̇ = -(g⁰ + T(t) g¹)ᵀ λ` and
/// reconstruct the maximum-entropy state at every sample. Columns are
/// `lambda:<label>` (the multipliers) followed by `mean:<label>` (means of
/// the reconstructed state).
pub fn evolve_lagrange(
    set: &OperatorSet,
    coefficients: &CoefficientMatrices,
    drive: &DriveSpec,
    initial_lambdas: &[f64],
    config: &IntegratorConfig,
) -> Result<TimeSeries> {
    config.validate()?;
    if set.labels() != coefficients.labels.as_slice() {
        return Err(Error::DimensionMismatch(
            "coefficient matrices index a different member family".into(),
        ));
    }
    if initial_lambdas.len() != set.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} multipliers for {} members",
            initial_lambdas.len(),
            set.len()
        )));
    }
    let (n_steps, h) = config.grid();
    let l0 = Array1::from_vec(initial_lambdas.to_vec());
    let (times, samples) = run_linear(
        coefficients,
        drive,
        true,
        &l0,
        n_steps,
        h,
        config.record_stride,
    )?;

    let n = set.len();
    let mut columns = vec![Vec::with_capacity(times.len()); 2 * n];
    let mut max_imag = 0.0_f64;
    for sample in &samples {
        let lambdas = sample.to_vec();
        let (rho, _) = mep::build_rho(set, &lambdas)?;
        let (means, imag) = mep::mean_vector(set, &rho)?;
        max_imag = max_imag.max(imag);
        for j in 0..n {
            columns[j].push(lambdas[j]);
            columns[n + j].push(means[j]);
        }
    }
    let labels = set
        .labels()
        .iter()
        .map(|l| format!("lambda:{l}"))
        .chain(set.labels().iter().map(|l| format!("mean:{l}")))
        .collect();
    Ok(TimeSeries {
        times,
        labels,
        columns,
        metadata: SeriesMetadata {
            method: "lagrange-rk4".into(),
            steps: n_steps,
            max_norm_drift: 0.0,
            max_imag_residue: max_imag,
            convergence_gap: None,
        },
    })
}

/// How well a sampled mean-value trajectory satisfies its own equations,
/// measured by central differences: the largest
/// `|ẏ_j(tᵢ) - [G(tᵢ) y(tᵢ)]_j|` over interior samples on a uniform grid.
#[derive(Debug, Clone)]
pub struct EhrenfestReport {
    pub max_residual: f64,
    /// Worst residual per label.
    pub per_label: Vec<f64>,
}

pub fn ehrenfest_residual(
    series: &TimeSeries,
    coefficients: &CoefficientMatrices,
    drive: &DriveSpec,
) -> Result<EhrenfestReport> {
    if series.labels != coefficients.labels {
        return Err(Error::DimensionMismatch(
            "series labels do not match the coefficient family".into(),
        ));
    }
    if series.len() < 3 {
        return Err(Error::InvalidParams(
            "need at least three samples for a central difference".into(),
        ));
    }
    let n = coefficients.len();
    let mut per_label = vec![0.0_f64; n];
    for i in 1..series.len() - 1 {
        let dt_left = series.times[i] - series.times[i - 1];
        let dt_right = series.times[i + 1] - series.times[i];
        // skip the possibly shorter final interval of a strided recording
        if (dt_left - dt_right).abs() > 1e-9 * dt_left.abs() {
            continue;
        }
        let y = Array1::from_vec(series.row(i));
        let rhs = coefficients.generator(drive.value(series.times[i])).dot(&y);
        for j in 0..n {
            let dy = (series.columns[j][i + 1] - series.columns[j][i - 1])
                / (dt_left + dt_right);
            per_label[j] = per_label[j].max((dy - rhs[j]).abs());
        }
    }
    let max_residual = per_label.iter().copied().fold(0.0_f64, f64::max);
    Ok(EhrenfestReport {
        max_residual,
        per_label,
    })
}
