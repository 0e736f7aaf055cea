//! Maximum-entropy density matrices over a relevant-operator family.
//!
//! Given targets `⟨Ô_j⟩ = y_j` for a subset of the family, the state of
//! maximal von Neumann entropy compatible with them is
//!
//! ```text
//! ρ(λ) = exp(-λ₀ - Σ_j λ_j Ô_j),     λ₀ = ln Tr exp(-Σ_j λ_j Ô_j)
//! ```
//!
//! with one Lagrange multiplier per constrained member. The multipliers are
//! the unique minimum of the convex dual `Φ(λ) = λ₀(λ) + λ·y`, which this
//! module finds by a damped Newton iteration with the exact
//! (Kubo–Mori) Hessian. Duality fixes the gradient: `∂λ₀/∂λ_j = -⟨Ô_j⟩`.

use ndarray::{Array1, Array2};
use ndarray_linalg::LeastSquaresSvd;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{OperatorSet, SetVariant};
use crate::operator::{eigh_hermitian, from_eigenbasis, Operator, QuantumState};

/// Largest admissible spread of the exponent's spectrum; beyond this the
/// Boltzmann weights underflow to a numerically pure state and the fit
/// geometry degenerates.
pub const EXPONENT_SPAN_LIMIT: f64 = 700.0;

/// Relative margin by which a target must sit inside the member's spectral
/// range: boundary means are reached only as `|λ| → ∞`.
const BOUNDARY_MARGIN: f64 = 1e-12;

/// Hermiticity tolerance for assembled exponents.
const HERM_TOL: f64 = 1e-9;

/// A maximum-entropy state in serializable form: the multipliers, the log
/// partition function, and the resulting means over the full family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MepState {
    pub set_variant: SetVariant,
    pub depth: usize,
    /// Member labels, aligned with `lambdas` and `means`.
    pub labels: Vec<String>,
    /// One multiplier per member; unconstrained members carry zero.
    pub lambdas: Vec<f64>,
    /// Log partition function `ln Tr exp(-Σ λ_j Ô_j)`.
    pub lambda0: f64,
    /// Means of every member under the state.
    pub means: Vec<f64>,
    /// Von Neumann entropy; equals `λ₀ + λ·means` by construction.
    pub entropy: f64,
}

/// Mean values of every member under a state, together with the largest
/// imaginary residue encountered (Hermitian members have real means up to
/// rounding).
pub fn mean_vector(set: &OperatorSet, state: &QuantumState) -> Result<(Vec<f64>, f64)> {
    let mut means = Vec::with_capacity(set.len());
    let mut max_imag = 0.0_f64;
    for member in set.members() {
        let v = crate::operator::expectation(member, state)?;
        max_imag = max_imag.max(v.im.abs());
        means.push(v.re);
    }
    Ok((means, max_imag))
}

/// Spectral data of the exponent `A = Σ λ_j Ô_j`: eigenvalues, eigenvectors,
/// log partition function, and Boltzmann weights.
struct ExponentSpectrum {
    energies: Array1<f64>,
    vectors: Array2<C64>,
    lambda0: f64,
    weights: Array1<f64>,
}

fn diagonalize_exponent(set: &OperatorSet, lambdas: &[f64]) -> Result<ExponentSpectrum> {
    if lambdas.len() != set.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} multipliers for a family of {} members",
            lambdas.len(),
            set.len()
        )));
    }
    let dims = set.dims();
    let mut a = Operator::zeros(dims);
    for (l, member) in lambdas.iter().zip(set.members()) {
        if *l != 0.0 {
            a = &a + &member.scale(C64::new(*l, 0.0));
        }
    }
    let (energies, vectors) = eigh_hermitian(&a, HERM_TOL)?;
    let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let e_max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = e_max - e_min;
    if !span.is_finite() || span > EXPONENT_SPAN_LIMIT {
        return Err(Error::ExponentOverflow {
            span,
            limit: EXPONENT_SPAN_LIMIT,
        });
    }
    // λ₀ = -e_min + ln Σ exp(-(e_k - e_min)), stable for any admissible span
    let z_shift: f64 = energies.iter().map(|e| (-(e - e_min)).exp()).sum();
    let lambda0 = -e_min + z_shift.ln();
    let weights = energies.mapv(|e| (-(e - e_min)).exp() / z_shift);
    Ok(ExponentSpectrum {
        energies,
        vectors,
        lambda0,
        weights,
    })
}

/// Normalized `ρ(λ)` and the log partition function `λ₀`.
pub fn build_rho(set: &OperatorSet, lambdas: &[f64]) -> Result<(QuantumState, f64)> {
    let spec = diagonalize_exponent(set, lambdas)?;
    let weights = spec.weights.mapv(|w| C64::new(w, 0.0));
    let rho = from_eigenbasis(set.dims(), &weights, &spec.vectors);
    Ok((
        QuantumState::density(set.dims(), rho.into_matrix())?,
        spec.lambda0,
    ))
}

/// Von Neumann entropy `-Tr ρ ln ρ`. Zero for pure states; eigenvalues below
/// `-1e-10` are rejected, small negative rounding noise is clamped.
pub fn entropy(state: &QuantumState) -> Result<f64> {
    if state.is_pure() {
        return Ok(0.0);
    }
    let dims = state.dims();
    let rho = Operator::new(dims, state.density_matrix())?;
    let (eigs, _) = eigh_hermitian(&rho, 1e-9)?;
    let mut s = 0.0;
    for &p in eigs.iter() {
        if p < -1e-10 {
            return Err(Error::InvalidState(format!(
                "density matrix has negative eigenvalue {p:.3e}"
            )));
        }
        if p > 0.0 {
            s -= p * p.ln();
        }
    }
    Ok(s)
}

/// Options for the multiplier fit.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Convergence threshold on `max_j |⟨Ô_j⟩ - y_j|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting multipliers over the full family (zeros if absent).
    pub initial: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            initial: None,
        }
    }
}

/// Outcome of a converged fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub state: MepState,
    pub iterations: usize,
    /// Final `max_j |⟨Ô_j⟩ - y_j|` over the targeted members.
    pub gap: f64,
    /// Rank of the Kubo–Mori Hessian at the solution.
    pub hessian_rank: usize,
    /// Number of flat (gauge) directions: targeted-member combinations the
    /// state cannot distinguish. Zero for independent targets.
    pub gauge_deficiency: usize,
}

/// Transform the targeted members into the exponent's eigenbasis.
fn rotate_members(
    set: &OperatorSet,
    targets: &[usize],
    vectors: &Array2<C64>,
) -> Vec<Array2<C64>> {
    targets
        .iter()
        .map(|&j| {
            let vm = set.members()[j].matrix().dot(vectors);
            vectors.t().mapv(|z| z.conj()).dot(&vm)
        })
        .collect()
}

/// Means of the targeted members from spectral data.
fn targeted_means(rotated: &[Array2<C64>], weights: &Array1<f64>) -> Vec<f64> {
    rotated
        .iter()
        .map(|a| {
            a.diag()
                .iter()
                .zip(weights)
                .map(|(d, w)| d.re * w)
                .sum::<f64>()
        })
        .collect()
}

/// Kubo–Mori susceptibility matrix `χ_ij = -∂⟨Ô_i⟩/∂λ_j` of the targeted
/// members: with `Ã` the member in the eigenbasis and `p` the weights,
///
/// ```text
/// χ_ij = Σ_{p,q} c_pq Ã_i[p,q] Ã_j[q,p] - ⟨Ô_i⟩⟨Ô_j⟩,
/// c_pq = (p_p - p_q)/(e_q - e_p)   (→ p_p in the degenerate limit)
/// ```
fn kubo_mori_hessian(
    rotated: &[Array2<C64>],
    spec: &ExponentSpectrum,
    means: &[f64],
) -> Array2<f64> {
    let k = rotated.len();
    let d = spec.energies.len();
    let mut c = Array2::<f64>::zeros((d, d));
    for p in 0..d {
        for q in 0..d {
            let de = spec.energies[q] - spec.energies[p];
            c[[p, q]] = if de.abs() < 1e-12 * (1.0 + spec.energies[p].abs()) {
                spec.weights[p]
            } else {
                (spec.weights[p] - spec.weights[q]) / de
            };
        }
    }
    let mut chi = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in i..k {
            let mut acc = 0.0;
            for p in 0..d {
                for q in 0..d {
                    acc += c[[p, q]] * (rotated[i][[p, q]] * rotated[j][[q, p]]).re;
                }
            }
            acc -= means[i] * means[j];
            chi[[i, j]] = acc;
            chi[[j, i]] = acc;
        }
    }
    chi
}

/// Fit multipliers so that the maximum-entropy state reproduces the target
/// means. `targets` pairs member labels with desired values; members not
/// listed stay unconstrained (`λ = 0`).
///
/// Targets outside the open spectral range of their member are rejected —
/// no finite multiplier reaches them. Linearly dependent targets leave flat
/// directions in the dual; the Newton step uses a pseudo-inverse and the
/// report counts the deficiency.
pub fn fit_lambdas(
    set: &OperatorSet,
    targets: &[(String, f64)],
    options: &FitOptions,
) -> Result<FitReport> {
    if targets.is_empty() {
        return Err(Error::InvalidParams("no fit targets given".into()));
    }
    let n = set.len();
    let mut target_idx = Vec::with_capacity(targets.len());
    let mut y = Vec::with_capacity(targets.len());
    for (label, value) in targets {
        let j = set.index_of(label)?;
        if target_idx.contains(&j) {
            return Err(Error::InvalidParams(format!(
                "duplicate fit target {label}"
            )));
        }
        // spectral range check
        let (eigs, _) = eigh_hermitian(&set.members()[j], HERM_TOL)?;
        let lo = eigs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let margin = BOUNDARY_MARGIN * (1.0 + (hi - lo).abs());
        if !(*value > lo + margin && *value < hi - margin) {
            return Err(Error::MeanOutOfRange {
                label: label.clone(),
                value: *value,
                min: lo,
                max: hi,
            });
        }
        target_idx.push(j);
        y.push(*value);
    }

    let mut lambdas = match &options.initial {
        Some(init) => {
            if init.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "initial multipliers have length {}, family has {}",
                    init.len(),
                    n
                )));
            }
            init.clone()
        }
        None => vec![0.0; n],
    };

    let dual = |spec: &ExponentSpectrum, lam: &[f64]| -> f64 {
        let constrained: f64 = target_idx
            .iter()
            .zip(&y)
            .map(|(&j, yj)| lam[j] * yj)
            .sum();
        spec.lambda0 + constrained
    };

    let mut spec = diagonalize_exponent(set, &lambdas)?;
    let mut rotated = rotate_members(set, &target_idx, &spec.vectors);
    let mut means = targeted_means(&rotated, &spec.weights);
    let mut phi = dual(&spec, &lambdas);
    let mut last_rank = target_idx.len();

    for iter in 0..options.max_iter {
        let gap = means
            .iter()
            .zip(&y)
            .map(|(m, t)| (m - t).abs())
            .fold(0.0_f64, f64::max);
        if gap <= options.tol {
            let (full_means, _) = {
                let (rho, _) = build_rho(set, &lambdas)?;
                mean_vector(set, &rho)?
            };
            let spec_final = diagonalize_exponent(set, &lambdas)?;
            let s: f64 = spec_final
                .weights
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum();
            return Ok(FitReport {
                state: MepState {
                    set_variant: set.variant,
                    depth: set.depth,
                    labels: set.labels().to_vec(),
                    lambdas,
                    lambda0: spec_final.lambda0,
                    means: full_means,
                    entropy: s,
                },
                iterations: iter,
                gap,
                hessian_rank: last_rank,
                gauge_deficiency: target_idx.len() - last_rank,
            });
        }

        // Newton direction: χ δ = -(y - ⟨O⟩), pseudo-inverse via SVD
        let grad = Array1::from_iter(means.iter().zip(&y).map(|(m, t)| t - m));
        let chi = kubo_mori_hessian(&rotated, &spec, &means);
        let solved = chi.least_squares(&grad.mapv(|g| -g))?;
        last_rank = solved.rank as usize;
        let delta = solved.solution;

        // Backtracking line search on the convex dual.
        let descent: f64 = grad.dot(&delta);
        let mut t_step = 1.0;
        let mut advanced = false;
        for _ in 0..60 {
            let mut trial = lambdas.clone();
            for (k, &j) in target_idx.iter().enumerate() {
                trial[j] += t_step * delta[k];
            }
            match diagonalize_exponent(set, &trial) {
                Ok(trial_spec) => {
                    let trial_phi = dual(&trial_spec, &trial);
                    if trial_phi <= phi + 1e-4 * t_step * descent || trial_phi < phi {
                        lambdas = trial;
                        spec = trial_spec;
                        rotated = rotate_members(set, &target_idx, &spec.vectors);
                        means = targeted_means(&rotated, &spec.weights);
                        phi = trial_phi;
                        advanced = true;
                        break;
                    }
                }
                Err(Error::ExponentOverflow { .. }) => {}
                Err(e) => return Err(e),
            }
            t_step *= 0.5;
        }
        if !advanced {
            let gap = means
                .iter()
                .zip(&y)
                .map(|(m, t)| (m - t).abs())
                .fold(0.0_f64, f64::max);
            return Err(Error::FitNotConverged {
                iterations: iter + 1,
                gap,
                tol: options.tol,
            });
        }
    }

    let gap = means
        .iter()
        .zip(&y)
        .map(|(m, t)| (m - t).abs())
        .fold(0.0_f64, f64::max);
    Err(Error::FitNotConverged {
        iterations: options.max_iter,
        gap,
        tol: options.tol,
    })
}

/// Multipliers of the Gibbs state `exp(-βĤ)/Z` expressed over the family:
/// `λ = β(E₁, E₂, ω, T(0))` on `N̂₁, N̂₂, Δ̂, Î` at level 0. Exact for
/// constant envelopes, where `Ĥ` is itself a member combination.
pub fn thermal_lambdas(
    params: &crate::model::ModelParams,
    set: &OperatorSet,
    beta: f64,
) -> Result<Vec<f64>> {
    let mut lambdas = vec![0.0; set.len()];
    lambdas[set.index_of("N1[0]")?] = beta * params.e1;
    lambdas[set.index_of("N2[0]")?] = beta * params.e2;
    lambdas[set.index_of("Delta[0]")?] = beta * params.omega;
    lambdas[set.index_of("I[0]")?] = beta * params.drive.value(0.0);
    Ok(lambdas)
}

/// Largest deviation of the duality identity `∂λ₀/∂λ_j = -⟨Ô_j⟩` measured
/// with central differences of width `h` at the given multipliers.
pub fn duality_gradient_check(set: &OperatorSet, lambdas: &[f64], h: f64) -> Result<f64> {
    let (rho, _) = build_rho(set, lambdas)?;
    let (means, _) = mean_vector(set, &rho)?;
    let mut worst = 0.0_f64;
    for j in 0..set.len() {
        let mut up = lambdas.to_vec();
        let mut down = lambdas.to_vec();
        up[j] += h;
        down[j] -= h;
        let s_up = diagonalize_exponent(set, &up)?.lambda0;
        let s_down = diagonalize_exponent(set, &down)?.lambda0;
        let derivative = (s_up - s_down) / (2.0 * h);
        worst = worst.max((derivative + means[j]).abs());
    }
    Ok(worst)
}

/// Convenience: a maximally mixed `MepState` over the family (`λ = 0`).
pub fn uniform_state(set: &OperatorSet) -> Result<MepState> {
    let (rho, lambda0) = build_rho(set, &vec![0.0; set.len()])?;
    let (means, _) = mean_vector(set, &rho)?;
    let d = set.dims().total_dim() as f64;
    Ok(MepState {
        set_variant: set.variant,
        depth: set.depth,
        labels: set.labels().to_vec(),
        lambdas: vec![0.0; set.len()],
        lambda0,
        means,
        entropy: d.ln(),
    })
}
