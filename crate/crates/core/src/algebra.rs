//! Commutator-algebra closure: structure constants of the relevant-operator
//! hierarchy under the model Hamiltonian.
//!
//! For a family `{Ô_j}` the Heisenberg equations `d⟨Ô_j⟩/dt = i⟨[Ĥ, Ô_j]⟩`
//! close when every commutator is a linear combination of family members:
//!
//! ```text
//! i[Ĥ(t), Ô_j] = Σ_i ( g⁰_ji + T(t) g¹_ji ) Ô_i
//! ```
//!
//! with time-independent structure constants `g⁰` (free part) and `g¹`
//! (interaction part). This module computes the constants two ways — from
//! closed-form expressions and by numerical least squares — and compares
//! them entry by entry.
//!
//! # The safe photon window
//!
//! On a space truncated at `n_max` photons the commutators acquire edge
//! artifacts: the interaction moves `m` photons, so matrix elements within
//! `m` of the cap are wrong. Both the solver and the closure claim therefore
//! live on the *safe window*, the subspace with at most `n_safe ≤ n_max - m`
//! photons, where projected commutators agree with the untruncated model.
//! Hierarchy members whose projection onto the window vanishes identically
//! (high-level members are supported on high photon numbers only) are
//! reported as such. Their projected commutators need *not* vanish, so their
//! solved rows still carry information — but any column belonging to a
//! vanishing member is unconstrained (that member contributes nothing to the
//! least-squares fit), so coefficient comparisons skip vanishing labels.
//!
//! Exact closure on the window requires the hierarchy depth to equal
//! `n_safe`: shallower sets cannot represent the upward couplings of the
//! quadrature rows, and the residuals report that honestly.
//!
//! Window closure suffices for states whose photon support stays inside the
//! window. For states that occupy the whole truncated ladder (coherent or
//! thermal fields), [`boundary_closed_coefficients`] instead closes the
//! hierarchy on the truncated space itself, absorbing the cutoff into
//! exactly-computable corrections to the quadrature rows.

use ndarray::{Array1, Array2};
use ndarray_linalg::LeastSquaresSvd;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::model::{
    binomial, build_hamiltonian_parts, falling_factorial, hierarchy_labels, ModelParams,
    OperatorSet, SetVariant,
};
use crate::operator::{commutator, Operator};

/// Threshold below which a member's projection onto the safe window counts
/// as identically zero (relative to the member's full-space norm).
const VANISHING_TOL: f64 = 1e-12;

/// Which value of the level-splitting constant `α` enters the closed-form
/// coefficients of the `Î`/`F̂` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaMode {
    /// `α = E₂ - E₁ - mω`: the m-photon detuning that the commutator
    /// `[Ĥ₀, F̂]` actually produces.
    Derived,
    /// `α = E₂ - E₁ - ω`: the single-photon form, independent of `m`.
    /// Coincides with `Derived` at `m = 1`.
    Printed,
}

/// The `α` constant for the given mode.
pub fn alpha(params: &ModelParams, mode: AlphaMode) -> f64 {
    match mode {
        AlphaMode::Derived => params.e2 - params.e1 - params.m as f64 * params.omega,
        AlphaMode::Printed => params.e2 - params.e1 - params.omega,
    }
}

/// Structure constants in equation form: row `j` holds the expansion of
/// `i[Ĥ_part, Ô_j]` over the members, so that the mean-value vector obeys
/// `ẏ = (g_static + T(t) · g_drive) y`.
#[derive(Debug, Clone)]
pub struct CoefficientMatrices {
    pub labels: Vec<String>,
    pub g_static: Array2<f64>,
    pub g_drive: Array2<f64>,
}

impl CoefficientMatrices {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Assemble `g_static + T · g_drive`.
    pub fn generator(&self, envelope: f64) -> Array2<f64> {
        &self.g_static + &(&self.g_drive * envelope)
    }
}

/// Closed-form structure constants of the sandwich hierarchy
/// (`Ôⁿ = (a†)ⁿÔ(a)ⁿ`) up to `depth`.
///
/// Couplings to members above `depth` are omitted: these are exactly the
/// terms that vanish on a safe window with `n_safe = depth`, so the returned
/// matrices describe the projected, closed equations. The rows are:
///
/// ```text
/// i[Ĥ, N̂₁ⁿ]  =  T(t) Σ_k C(n,k)(m)_k F̂ⁿ⁻ᵏ
/// i[Ĥ, N̂₂ⁿ]  = -T(t) F̂ⁿ
/// i[Ĥ, Δ̂ⁿ]   =  T(t) Σ_{k≥1} C(n+1,k)(m)_k F̂ⁿ⁺¹⁻ᵏ
/// i[Ĥ, Îⁿ]   =  α F̂ⁿ
/// i[Ĥ, F̂ⁿ]   = -α Îⁿ + 2|γ|²T(t) [ -N̂₁ⁿ⁺ᵐ + N̂₂ⁿ⁺ᵐ
///                + Σ_{k≥1} C(n+m,k)(m)_k (N̂₂ⁿ⁺ᵐ⁻ᵏ - N̂₂,₁ⁿ⁺ᵐ⁻ᵏ) ]
/// i[Ĥ, N̂₂,₁ⁿ] =  0
/// ```
///
/// with `(m)_k` the falling factorial and `C` a binomial coefficient.
pub fn analytic_coefficients(
    params: &ModelParams,
    depth: usize,
    mode: AlphaMode,
) -> Result<CoefficientMatrices> {
    params.validate()?;
    let labels = hierarchy_labels(depth);
    let n_members = labels.len();
    let m = params.m;
    let a = alpha(params, mode);
    let g2 = 2.0 * params.gamma.norm_sqr();

    // member order within a level: N1, N2, Delta, I, F, N21
    let idx = |name: usize, level: usize| 6 * level + name;
    const N1: usize = 0;
    const N2: usize = 1;
    const DELTA: usize = 2;
    const I_OP: usize = 3;
    const F_OP: usize = 4;
    const N21: usize = 5;

    let mut g_static = Array2::<f64>::zeros((n_members, n_members));
    let mut g_drive = Array2::<f64>::zeros((n_members, n_members));

    for n in 0..=depth {
        g_static[[idx(F_OP, n), idx(I_OP, n)]] = -a;
        g_static[[idx(I_OP, n), idx(F_OP, n)]] = a;

        for k in 0..=n.min(m) {
            g_drive[[idx(N1, n), idx(F_OP, n - k)]] +=
                binomial(n, k) * falling_factorial(m, k);
        }
        g_drive[[idx(N2, n), idx(F_OP, n)]] -= 1.0;
        for k in 1..=(n + 1).min(m) {
            g_drive[[idx(DELTA, n), idx(F_OP, n + 1 - k)]] +=
                binomial(n + 1, k) * falling_factorial(m, k);
        }
        if n + m <= depth {
            g_drive[[idx(F_OP, n), idx(N1, n + m)]] -= g2;
            g_drive[[idx(F_OP, n), idx(N2, n + m)]] += g2;
        }
        for k in 1..=m {
            let level = n + m - k;
            if level <= depth {
                let w = g2 * binomial(n + m, k) * falling_factorial(m, k);
                g_drive[[idx(F_OP, n), idx(N2, level)]] += w;
                g_drive[[idx(F_OP, n), idx(N21, level)]] -= w;
            }
        }
    }

    Ok(CoefficientMatrices {
        labels,
        g_static,
        g_drive,
    })
}

/// Structure constants that close the plain hierarchy on the truncated
/// ladder itself, exact for dynamics under the truncated Hamiltonian —
/// arbitrary states included, even ones with support at the photon cutoff.
///
/// The closed-form constants describe the unbounded ladder. On a ladder
/// truncated at `n_max` they still govern every occupation-type row exactly
/// (those commutators never move matrix elements across the cutoff, and
/// terms whose target member vanishes on the truncated space drop out with
/// it). The quadrature rows are different: the commutator products that
/// first *raise* the photon number past `n_max` and come back down are cut
/// by the truncation, leaving a boundary defect. Raising first is possible
/// only from the sector with level 2 occupied and level 1 empty, and the
/// cut is diagonal in the photon number and confined to the top `m` levels,
/// so the defect is exactly `(N̂₂ - N̂₂N̂₁) ⊗ φ(n̂)` with `φ` supported on
/// `n > n_max - m`. Any such `φ` is an exact combination of the falling
/// factorials that live there, i.e. of the members `N2[p] - N21[p]` for
/// `p > n_max - m`. This routine starts from the closed-form constants at
/// depth `n_max`, zeroes the rows and columns of members that vanish
/// identically on the truncated space, and adds that boundary expansion to
/// every surviving quadrature row (computed from the row's own defect, whose
/// floating-point error is relative to the top-level operator scale).
///
/// The result trades generality for exactness: it describes the truncated
/// ladder rather than the unbounded one, so use it when the state genuinely
/// fills the ladder and the cutoff is part of the model. Occupation-type
/// rows keep their closed-form values bit for bit, so the exchange and
/// double-occupation functionals annihilate these constants exactly, like
/// they do the closed-form ones.
pub fn boundary_closed_coefficients(
    params: &ModelParams,
    set: &OperatorSet,
    mode: AlphaMode,
) -> Result<CoefficientMatrices> {
    params.validate()?;
    if set.variant != SetVariant::Set1 {
        return Err(Error::InvalidSet(
            "boundary-closed constants are defined for the plain hierarchy only".into(),
        ));
    }
    if set.dims() != params.dims {
        return Err(Error::DimensionMismatch(format!(
            "operator set lives on n_max = {}, parameters say {}",
            set.dims().n_max(),
            params.dims.n_max()
        )));
    }
    let n_max = params.dims.n_max();
    if set.depth != n_max {
        return Err(Error::InvalidSet(format!(
            "boundary closure needs the full tower: set depth {} must equal n_max {}",
            set.depth, n_max
        )));
    }
    let m = params.m;

    let mut g = analytic_coefficients(params, n_max, mode)?;

    // Members that vanish identically on the truncated ladder: quadratures
    // above level n_max − m and the photon-ladder member of the top level.
    // Their rows describe the zero operator and their columns contribute
    // nothing, so both are zeroed (sandwich construction yields exact zero
    // matrices, hence the exact comparison).
    for (j, member) in set.members().iter().enumerate() {
        if member.frobenius_norm() == 0.0 {
            g.g_static.row_mut(j).fill(0.0);
            g.g_drive.row_mut(j).fill(0.0);
            g.g_static.column_mut(j).fill(0.0);
            g.g_drive.column_mut(j).fill(0.0);
        }
    }
    if m > n_max {
        return Ok(g); // no quadrature members at all, nothing to correct
    }

    let parts = build_hamiltonian_parts(params)?;
    let i_unit = C64::new(0.0, 1.0);
    let field_dim = n_max + 1;
    const N2: usize = 1;
    const I_OP: usize = 3;
    const F_OP: usize = 4;
    const N21: usize = 5;
    // Photon levels whose upward hops the truncation cuts, and the block
    // offset of the affected sector (level 1 empty, level 2 occupied).
    let top: Vec<usize> = (n_max + 1 - m..=n_max).collect();
    let sector = field_dim;

    for q in 0..=(n_max - m) {
        for name in [I_OP, F_OP] {
            let row = 6 * q + name;
            let comm = commutator(&parts.h_drive, &set.members()[row]).scale(i_unit);
            let mut defect = comm.matrix().to_owned();
            for i in 0..set.len() {
                let c = g.g_drive[[row, i]];
                if c != 0.0 {
                    defect -= &(set.members()[i].matrix() * C64::new(c, 0.0));
                }
            }
            let d: Vec<f64> = top
                .iter()
                .map(|&n| defect[[sector + n, sector + n]].re)
                .collect();
            // Expand the defect over the top falling factorials: forward
            // substitution through the triangular system V c = d with
            // V[r][k] = (top_r)_(top_k).
            let mut coeffs = vec![0.0_f64; m];
            for r in 0..m {
                let mut acc = d[r];
                for k in 0..r {
                    acc -= falling_factorial(top[r], top[k]) * coeffs[k];
                }
                coeffs[r] = acc / falling_factorial(top[r], top[r]);
            }
            for (k, &p) in top.iter().enumerate() {
                g.g_drive[[row, 6 * p + N2]] += coeffs[k];
                g.g_drive[[row, 6 * p + N21]] -= coeffs[k];
            }
        }
    }
    Ok(g)
}

/// Result of the numerical closure check on the safe window.
#[derive(Debug, Clone)]
pub struct ClosureReport {
    /// Solved structure constants. Rows of vanishing members are still
    /// meaningful on surviving columns (their projected commutators need not
    /// vanish); columns of vanishing members are unconstrained.
    pub coefficients: CoefficientMatrices,
    /// Scaled defect per member, on the window:
    /// `‖i[Ĥ₀,Ô_j] - Σ g⁰_ji Ô_i‖_F / (1 + ‖i[Ĥ₀,Ô_j]‖_F + ‖Ĥ₀‖_F ‖Ô_j‖_F)`.
    /// The operand term in the denominator keeps identically-vanishing
    /// commutators (whose floating-point evaluation leaves cancellation dust
    /// of order `ε ‖Ĥ‖ ‖Ô‖`) at machine level.
    pub residual_static: Vec<f64>,
    /// Same for the interaction part.
    pub residual_drive: Vec<f64>,
    /// Largest residual across all members and both parts.
    pub max_residual: f64,
    /// Rank of the projected member family (unit-normalized, via SVD).
    pub rank: usize,
    /// Singular values of the normalized projected family.
    pub singular_values: Vec<f64>,
    /// Members whose projection onto the window vanishes identically. The
    /// solved coefficients carry no information about these members'
    /// *columns* (they contribute nothing to the expansion), so comparisons
    /// should skip these labels.
    pub vanishing_members: Vec<String>,
    pub n_safe: usize,
    /// Dimension of the safe window subspace.
    pub projected_dim: usize,
}

impl ClosureReport {
    /// True when every member's equations close within `tol` on the window.
    pub fn closes_within(&self, tol: f64) -> bool {
        self.max_residual <= tol
    }
}

/// Restrict a full-space matrix to the rows/columns of the safe window.
fn compress(op: &Operator, keep: &[usize]) -> Array2<C64> {
    let d = keep.len();
    let mat = op.matrix();
    Array2::from_shape_fn((d, d), |(r, c)| mat[[keep[r], keep[c]]])
}

/// Flatten a complex matrix into a real vector (real parts, then imaginary).
fn realify(mat: &Array2<C64>, out: &mut ndarray::ArrayViewMut1<f64>) {
    let d2 = mat.len();
    for (k, z) in mat.iter().enumerate() {
        out[k] = z.re;
        out[d2 + k] = z.im;
    }
}

/// Solve for the structure constants of `set` on the safe window with at
/// most `n_safe` photons, and measure how well the family closes.
///
/// Every projected member is normalized to unit Frobenius norm before the
/// least-squares solve — the raw members span many orders of magnitude
/// (falling factorials of the photon number) and would otherwise swamp the
/// conditioning. One SVD factorization serves all `2 × len` right-hand
/// sides (free and interaction part of every member).
pub fn solve_structure_constants(
    params: &ModelParams,
    set: &OperatorSet,
    n_safe: usize,
) -> Result<ClosureReport> {
    params.validate()?;
    if set.dims() != params.dims {
        return Err(Error::DimensionMismatch(format!(
            "operator set lives on n_max = {}, parameters say {}",
            set.dims().n_max(),
            params.dims.n_max()
        )));
    }
    if n_safe + params.m > params.dims.n_max() {
        return Err(Error::InvalidSet(format!(
            "safe window needs n_safe + m ≤ n_max, got {} + {} > {}",
            n_safe,
            params.m,
            params.dims.n_max()
        )));
    }

    let dims = params.dims;
    let keep: Vec<usize> = (0..dims.total_dim())
        .filter(|&i| dims.photon_of(i) <= n_safe)
        .collect();
    let d = keep.len();
    let n_members = set.len();

    // Projected members, their norms, and the vanishing flags.
    let mut projected = Vec::with_capacity(n_members);
    let mut norms = vec![0.0_f64; n_members];
    let mut full_norms = vec![0.0_f64; n_members];
    let mut vanishing_members = Vec::new();
    let mut columns = Vec::new();
    for (j, member) in set.members().iter().enumerate() {
        let p = compress(member, &keep);
        let norm = p.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        norms[j] = norm;
        full_norms[j] = member.frobenius_norm();
        if norm <= VANISHING_TOL * (1.0 + full_norms[j]) {
            vanishing_members.push(set.labels()[j].clone());
        } else {
            columns.push(j);
        }
        projected.push(p);
    }
    if columns.is_empty() {
        return Err(Error::InvalidSet(
            "every member vanishes on the safe window".into(),
        ));
    }

    // Design matrix over the reals: one column per surviving member.
    let rows = 2 * d * d;
    let mut design = Array2::<f64>::zeros((rows, columns.len()));
    for (c, &j) in columns.iter().enumerate() {
        let scaled = projected[j].mapv(|z| z / norms[j]);
        realify(&scaled, &mut design.column_mut(c));
    }

    // Right-hand sides: i[Ĥ_part, Ô_j] projected, for both parts.
    let parts = build_hamiltonian_parts(params)?;
    let i_unit = C64::new(0.0, 1.0);
    let mut rhs = Array2::<f64>::zeros((rows, 2 * n_members));
    for (j, member) in set.members().iter().enumerate() {
        let c_static = commutator(&parts.h_static, member).scale(i_unit);
        let c_drive = commutator(&parts.h_drive, member).scale(i_unit);
        realify(&compress(&c_static, &keep), &mut rhs.column_mut(j));
        realify(
            &compress(&c_drive, &keep),
            &mut rhs.column_mut(n_members + j),
        );
    }

    let solved = design.least_squares(&rhs)?;
    // One pass of iterative refinement: with unit-norm columns the family can
    // still be ill-conditioned (nearly collinear high-level members), and the
    // raw SVD solution carries a forward error of order cond · ε that shows
    // up as a spurious residual. Re-solving against the first defect pulls
    // in-span targets back to machine precision.
    let first_defect = &rhs - &design.dot(&solved.solution);
    let correction = design.least_squares(&first_defect)?;
    let solution = &solved.solution + &correction.solution;
    let defect = design.dot(&solution) - &rhs;

    let mut g_static = Array2::<f64>::zeros((n_members, n_members));
    let mut g_drive = Array2::<f64>::zeros((n_members, n_members));
    for (c, &i) in columns.iter().enumerate() {
        for j in 0..n_members {
            g_static[[j, i]] = solution[[c, j]] / norms[i];
            g_drive[[j, i]] = solution[[c, n_members + j]] / norms[i];
        }
    }

    // Residual scale: a commutator is a difference of products of magnitude
    // ‖Ĥ_part‖ · ‖Ô_j‖, so even when it vanishes identically (high-level
    // phase-sum members commute with the drive exactly) its floating-point
    // evaluation leaves cancellation dust of order ε times that product.
    // Measuring the defect against the operand scale — not just the target
    // norm — keeps such rows at machine level instead of reporting the dust
    // as an out-of-span component, while a genuine missing coupling still
    // shows up at the size of its coefficient relative to ‖Ĥ‖.
    let h_norms = [
        parts.h_static.frobenius_norm(),
        parts.h_drive.frobenius_norm(),
    ];
    let column_residual = |col: usize| -> f64 {
        let r = defect.column(col).mapv(|x| x * x).sum().sqrt();
        let b = rhs.column(col).mapv(|x| x * x).sum().sqrt();
        let scale = h_norms[col / n_members] * full_norms[col % n_members];
        r / (1.0 + b + scale)
    };
    let residual_static: Vec<f64> = (0..n_members).map(column_residual).collect();
    let residual_drive: Vec<f64> = (0..n_members)
        .map(|j| column_residual(n_members + j))
        .collect();
    let max_residual = residual_static
        .iter()
        .chain(&residual_drive)
        .fold(0.0_f64, |acc, &r| acc.max(r));

    Ok(ClosureReport {
        coefficients: CoefficientMatrices {
            labels: set.labels().to_vec(),
            g_static,
            g_drive,
        },
        residual_static,
        residual_drive,
        max_residual,
        rank: solved.rank as usize,
        singular_values: solved.singular_values.to_vec(),
        vanishing_members,
        n_safe,
        projected_dim: d,
    })
}

/// Which Hamiltonian part a coefficient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefficientPart {
    Static,
    Drive,
}

/// One entry where two coefficient matrices disagree.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CoefficientDifference {
    pub part: CoefficientPart,
    /// Label of the evolving member (the equation row).
    pub row: String,
    /// Label of the member the coefficient multiplies.
    pub col: String,
    pub lhs: f64,
    pub rhs: f64,
}

/// Compare two coefficient matrices entry by entry; an entry counts as a
/// discrepancy when `|a - b| > rtol · max(1, |a|, |b|)`. Rows and columns
/// whose label appears in `skip` are ignored — pass the solver's vanishing
/// members there: their *columns* are unconstrained by the window fit, and
/// skipping the rows as well is the conservative choice.
pub fn compare_coefficient_matrices(
    lhs: &CoefficientMatrices,
    rhs: &CoefficientMatrices,
    rtol: f64,
    skip: &[String],
) -> Result<Vec<CoefficientDifference>> {
    if lhs.labels != rhs.labels {
        return Err(Error::InvalidSet(
            "coefficient matrices index different member families".into(),
        ));
    }
    let skipped = |label: &String| skip.contains(label);
    let mut diffs = Vec::new();
    for (part, a, b) in [
        (CoefficientPart::Static, &lhs.g_static, &rhs.g_static),
        (CoefficientPart::Drive, &lhs.g_drive, &rhs.g_drive),
    ] {
        for ((j, i), &x) in a.indexed_iter() {
            let y = b[[j, i]];
            if skipped(&lhs.labels[j]) || skipped(&lhs.labels[i]) {
                continue;
            }
            if (x - y).abs() > rtol * 1.0_f64.max(x.abs()).max(y.abs()) {
                diffs.push(CoefficientDifference {
                    part,
                    row: lhs.labels[j].clone(),
                    col: lhs.labels[i].clone(),
                    lhs: x,
                    rhs: y,
                });
            }
        }
    }
    Ok(diffs)
}

/// A linear functional `f · y` of the mean-value vector.
#[derive(Debug, Clone)]
pub struct LinearFunctional {
    pub name: String,
    /// Dense coefficients over the set's member order.
    pub coeffs: Vec<f64>,
}

impl LinearFunctional {
    pub fn apply(&self, means: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .zip(means)
            .map(|(c, y)| c * y)
            .sum()
    }

    /// `f · G` — identically zero iff the functional is conserved by the
    /// equations with generator `G`.
    pub fn row_sum(&self, g: &Array2<f64>) -> Array1<f64> {
        let f = Array1::from_vec(self.coeffs.clone());
        f.dot(g)
    }
}

/// The exactly conserved linear functionals of the hierarchy dynamics.
///
/// Double occupancy is frozen at every level and for every variant
/// (`docc_n{q} = ⟨N̂₂,₁^q⟩`). For the sandwich hierarchy the combinations
/// `cons_n{q} = ⟨N̂₁^q⟩ + ⟨N̂₂^q⟩ - ⟨Δ̂^{q-1}⟩`, `q ≥ 1`, are conserved as
/// well: they are left null vectors of both generator parts.
pub fn conserved_functionals(set: &OperatorSet) -> Vec<LinearFunctional> {
    let n = set.len();
    let mut out = Vec::new();
    if set.variant == SetVariant::Set1 {
        for q in 1..=set.depth {
            let mut coeffs = vec![0.0; n];
            coeffs[6 * q] = 1.0; // N1[q]
            coeffs[6 * q + 1] = 1.0; // N2[q]
            coeffs[6 * (q - 1) + 2] = -1.0; // Delta[q-1]
            out.push(LinearFunctional {
                name: format!("cons_n{q}"),
                coeffs,
            });
        }
    }
    for q in 0..=set.depth {
        let mut coeffs = vec![0.0; n];
        coeffs[6 * q + 5] = 1.0; // N21[q]
        out.push(LinearFunctional {
            name: format!("docc_n{q}"),
            coeffs,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_hierarchy_set, DriveSpec};
    use crate::operator::HilbertDims;
    use approx::assert_abs_diff_eq;

    fn params(m: usize, n_max: usize) -> ModelParams {
        ModelParams {
            e1: 0.3,
            e2: 1.9,
            omega: 1.0,
            gamma: C64::new(0.2, 0.05),
            m,
            drive: DriveSpec::Constant { amplitude: 1.0 },
            dims: HilbertDims::new(n_max),
            allow_zero_coupling: false,
        }
    }

    /// Largest comparable deviation between two coefficient matrices.
    fn max_coefficient_gap(
        a: &CoefficientMatrices,
        b: &CoefficientMatrices,
        skip: &[String],
    ) -> f64 {
        let mut gap = 0.0_f64;
        for (x, y) in [(&a.g_static, &b.g_static), (&a.g_drive, &b.g_drive)] {
            for ((j, i), &v) in x.indexed_iter() {
                if skip.contains(&a.labels[j]) || skip.contains(&a.labels[i]) {
                    continue;
                }
                gap = gap.max((v - y[[j, i]]).abs());
            }
        }
        gap
    }

    #[test]
    fn analytic_spot_values_two_photon() {
        // m = 2, depth 3: frozen closed-form entries.
        let p = params(2, 6);
        let g = analytic_coefficients(&p, 3, AlphaMode::Derived).unwrap();
        let at = |row: &str, col: &str, mat: &Array2<f64>| {
            let j = g.labels.iter().position(|l| l == row).unwrap();
            let i = g.labels.iter().position(|l| l == col).unwrap();
            mat[[j, i]]
        };
        // N1[2] row: C(2,0)(2)_0 F[2] + C(2,1)(2)_1 F[1] + C(2,2)(2)_2 F[0]
        assert_abs_diff_eq!(at("N1[2]", "F[2]", &g.g_drive), 1.0);
        assert_abs_diff_eq!(at("N1[2]", "F[1]", &g.g_drive), 4.0);
        assert_abs_diff_eq!(at("N1[2]", "F[0]", &g.g_drive), 2.0);
        // Delta[1] row: C(2,1)(2)_1 F[1] + C(2,2)(2)_2 F[0]
        assert_abs_diff_eq!(at("Delta[1]", "F[1]", &g.g_drive), 4.0);
        assert_abs_diff_eq!(at("Delta[1]", "F[0]", &g.g_drive), 2.0);
        assert_abs_diff_eq!(at("Delta[1]", "F[2]", &g.g_drive), 0.0);
        // F[0] row, 2|γ|² = 0.085: -N1[2] + N2[2] + 4(N2[1]-N21[1]) + 2(N2[0]-N21[0])
        let g2 = 2.0 * p.gamma.norm_sqr();
        assert_abs_diff_eq!(at("F[0]", "N1[2]", &g.g_drive), -g2, epsilon = 1e-15);
        assert_abs_diff_eq!(at("F[0]", "N2[2]", &g.g_drive), g2, epsilon = 1e-15);
        assert_abs_diff_eq!(at("F[0]", "N2[1]", &g.g_drive), 4.0 * g2, epsilon = 1e-15);
        assert_abs_diff_eq!(at("F[0]", "N21[1]", &g.g_drive), -4.0 * g2, epsilon = 1e-15);
        assert_abs_diff_eq!(at("F[0]", "N2[0]", &g.g_drive), 2.0 * g2, epsilon = 1e-15);
        assert_abs_diff_eq!(at("F[0]", "N21[0]", &g.g_drive), -2.0 * g2, epsilon = 1e-15);
        // static rows: ±α with α = E2 - E1 - 2ω
        let a = p.e2 - p.e1 - 2.0;
        assert_abs_diff_eq!(at("F[1]", "I[1]", &g.g_static), -a, epsilon = 1e-15);
        assert_abs_diff_eq!(at("I[1]", "F[1]", &g.g_static), a, epsilon = 1e-15);
        // N21 rows identically zero
        let j = g.labels.iter().position(|l| l == "N21[1]").unwrap();
        assert_eq!(g.g_static.row(j).iter().map(|x| x.abs()).sum::<f64>(), 0.0);
        assert_eq!(g.g_drive.row(j).iter().map(|x| x.abs()).sum::<f64>(), 0.0);
    }

    #[test]
    fn solved_constants_match_analytic_single_photon() {
        let p = params(1, 6);
        let n_safe = 5;
        let set = build_hierarchy_set(&p, SetVariant::Set1, n_safe).unwrap();
        let report = solve_structure_constants(&p, &set, n_safe).unwrap();
        assert!(
            report.closes_within(1e-10),
            "max residual {:.3e}",
            report.max_residual
        );
        let analytic = analytic_coefficients(&p, n_safe, AlphaMode::Derived).unwrap();
        let gap = max_coefficient_gap(
            &report.coefficients,
            &analytic,
            &report.vanishing_members,
        );
        assert!(gap < 1e-8, "coefficient gap {gap:.3e}");
    }

    #[test]
    fn solved_constants_match_analytic_two_photon() {
        let p = params(2, 6);
        let n_safe = 4;
        let set = build_hierarchy_set(&p, SetVariant::Set1, n_safe).unwrap();
        let report = solve_structure_constants(&p, &set, n_safe).unwrap();
        assert!(
            report.closes_within(1e-10),
            "max residual {:.3e}",
            report.max_residual
        );
        let analytic = analytic_coefficients(&p, n_safe, AlphaMode::Derived).unwrap();
        let gap = max_coefficient_gap(
            &report.coefficients,
            &analytic,
            &report.vanishing_members,
        );
        assert!(gap < 1e-8, "coefficient gap {gap:.3e}");
        // the quadrature pair at levels within m of the window edge has no
        // support there
        assert!(report.vanishing_members.contains(&"F[3]".to_string()));
        assert!(report.vanishing_members.contains(&"I[4]".to_string()));
    }

    #[test]
    fn printed_alpha_differs_exactly_on_quadrature_rows_for_m2() {
        let p = params(2, 6);
        let derived = analytic_coefficients(&p, 3, AlphaMode::Derived).unwrap();
        let printed = analytic_coefficients(&p, 3, AlphaMode::Printed).unwrap();
        let diffs = compare_coefficient_matrices(&derived, &printed, 1e-8, &[]).unwrap();
        // ± α on (F[n], I[n]) and (I[n], F[n]) for n = 0..=3, nothing else
        assert_eq!(diffs.len(), 8);
        for d in &diffs {
            assert_eq!(d.part, CoefficientPart::Static);
            let pair = (d.row.as_str(), d.col.as_str());
            let level_match = d.row.trim_start_matches(['F', 'I'])
                == d.col.trim_start_matches(['F', 'I']);
            assert!(level_match, "unexpected entry {pair:?}");
            assert_abs_diff_eq!((d.lhs - d.rhs).abs(), p.omega, epsilon = 1e-12);
        }
    }

    #[test]
    fn printed_alpha_coincides_for_single_photon() {
        let p = params(1, 5);
        let derived = analytic_coefficients(&p, 4, AlphaMode::Derived).unwrap();
        let printed = analytic_coefficients(&p, 4, AlphaMode::Printed).unwrap();
        let diffs = compare_coefficient_matrices(&derived, &printed, 1e-12, &[]).unwrap();
        assert!(diffs.is_empty());
    }

    #[test]
    fn symmetrized_variants_close_on_the_window() {
        let p = params(1, 6);
        let n_safe = 5;
        for variant in [SetVariant::Set2, SetVariant::Set3] {
            let set = build_hierarchy_set(&p, variant, n_safe).unwrap();
            let report = solve_structure_constants(&p, &set, n_safe).unwrap();
            assert!(
                report.closes_within(1e-9),
                "{variant:?}: max residual {:.3e}",
                report.max_residual
            );
        }
    }

    #[test]
    fn shallow_hierarchy_fails_to_close() {
        // depth 2 < n_safe 4: the F[2] row couples upward to level 3, which
        // the family cannot represent.
        let p = params(1, 5);
        let set = build_hierarchy_set(&p, SetVariant::Set1, 2).unwrap();
        let report = solve_structure_constants(&p, &set, 4).unwrap();
        assert!(
            report.max_residual > 1e-6,
            "shallow set should not close, residual {:.3e}",
            report.max_residual
        );
    }

    #[test]
    fn perturbed_member_breaks_closure() {
        let p = params(1, 6);
        let n_safe = 5;
        let mut set = build_hierarchy_set(&p, SetVariant::Set1, n_safe).unwrap();
        set.perturb_member("I[0]", 1e-3).unwrap();
        let report = solve_structure_constants(&p, &set, n_safe).unwrap();
        assert!(
            report.max_residual > 1e-6,
            "perturbed set should not close, residual {:.3e}",
            report.max_residual
        );
    }

    #[test]
    fn window_validation() {
        let p = params(2, 6);
        let set = build_hierarchy_set(&p, SetVariant::Set1, 3).unwrap();
        // n_safe + m > n_max
        assert!(matches!(
            solve_structure_constants(&p, &set, 5),
            Err(Error::InvalidSet(_))
        ));
    }

    #[test]
    fn vanishing_member_rows_agree_on_surviving_columns() {
        // A member that projects to zero inside the photon window still has a
        // meaningful commutator there (e.g. for m = 2, n_safe = 4 the window
        // image of i[H_drive, F[4]] retains a 2|γ|²·30·(N2[4] − N21[4]) tail),
        // so its solved row must match the analytic one on every column whose
        // member survives the projection. Columns of vanishing members are
        // unconstrained by the least-squares system and are skipped.
        let p = params(2, 6);
        let n_safe = 4;
        let set = build_hierarchy_set(&p, SetVariant::Set1, n_safe).unwrap();
        let report = solve_structure_constants(&p, &set, n_safe).unwrap();
        let analytic = analytic_coefficients(&p, n_safe, AlphaMode::Derived).unwrap();
        assert!(!report.vanishing_members.is_empty());
        for label in &report.vanishing_members {
            let j = report
                .coefficients
                .labels
                .iter()
                .position(|l| l == label)
                .unwrap();
            for (col, col_label) in report.coefficients.labels.iter().enumerate() {
                if report.vanishing_members.contains(col_label) {
                    continue;
                }
                for (solved, exact) in [
                    (&report.coefficients.g_static, &analytic.g_static),
                    (&report.coefficients.g_drive, &analytic.g_drive),
                ] {
                    let gap = (solved[[j, col]] - exact[[j, col]]).abs();
                    assert!(
                        gap < 1e-8,
                        "{label} → {col_label}: solved {:.6e} vs analytic {:.6e}",
                        solved[[j, col]],
                        exact[[j, col]],
                    );
                }
            }
        }
    }

    #[test]
    fn conserved_functionals_annihilate_the_generator() {
        for m in [1, 2] {
            let p = params(m, 6);
            let depth = 6 - m;
            let g = analytic_coefficients(&p, depth, AlphaMode::Derived).unwrap();
            let set = build_hierarchy_set(&p, SetVariant::Set1, depth).unwrap();
            let functionals = conserved_functionals(&set);
            assert_eq!(functionals.len(), depth + depth + 1);
            for f in &functionals {
                for mat in [&g.g_static, &g.g_drive] {
                    let residual = f
                        .row_sum(mat)
                        .iter()
                        .map(|x| x.abs())
                        .fold(0.0_f64, f64::max);
                    assert!(
                        residual < 1e-12,
                        "{} (m = {m}) not conserved: {residual:.3e}",
                        f.name
                    );
                }
            }
        }
    }

    #[test]
    fn generator_assembly() {
        let p = params(1, 4);
        let g = analytic_coefficients(&p, 2, AlphaMode::Derived).unwrap();
        let gen = g.generator(0.5);
        let expected = &g.g_static + &(&g.g_drive * 0.5);
        assert_eq!(gen, expected);
    }

    /// Largest operand-scaled closure residual of `g` over the FULL truncated
    /// space (no window projection): for every member with nonzero norm and
    /// both Hamiltonian parts,
    /// `‖i[Ĥ_part, Ô_j] - Σ_i g_ji Ô_i‖_F / (1 + ‖rhs‖_F + ‖Ĥ_part‖_F ‖Ô_j‖_F)`.
    fn full_space_residual(
        p: &ModelParams,
        set: &OperatorSet,
        g: &CoefficientMatrices,
    ) -> f64 {
        let parts = build_hamiltonian_parts(p).unwrap();
        let i_unit = C64::new(0.0, 1.0);
        let mut worst = 0.0_f64;
        for (part, mat) in [(&parts.h_static, &g.g_static), (&parts.h_drive, &g.g_drive)] {
            let h_norm = part.frobenius_norm();
            for (j, member) in set.members().iter().enumerate() {
                let m_norm = member.frobenius_norm();
                if m_norm == 0.0 {
                    continue;
                }
                let rhs = commutator(part, member).scale(i_unit);
                let mut defect = rhs.matrix().to_owned();
                for (i, other) in set.members().iter().enumerate() {
                    let c = mat[[j, i]];
                    if c != 0.0 {
                        defect -= &other.matrix().mapv(|x| x * c);
                    }
                }
                let d_norm = defect.mapv(|x| x.norm_sqr()).sum().sqrt();
                let b_norm = rhs.frobenius_norm();
                worst = worst.max(d_norm / (1.0 + b_norm + h_norm * m_norm));
            }
        }
        worst
    }

    #[test]
    fn boundary_closed_constants_close_on_the_truncated_space() {
        for m in [1, 2, 3] {
            let p = params(m, 6);
            let set = build_hierarchy_set(&p, SetVariant::Set1, 6).unwrap();
            let g = boundary_closed_coefficients(&p, &set, AlphaMode::Derived).unwrap();
            let worst = full_space_residual(&p, &set, &g);
            assert!(
                worst < 1e-12,
                "m = {m}: full-space residual {worst:.3e}"
            );
        }
    }

    #[test]
    fn plain_full_tower_does_not_close_on_the_truncated_space() {
        // The uncorrected closed-form constants leave O(1)-scale defects in
        // the quadrature rows near the photon cap; the boundary corrections
        // are what the previous test actually exercises.
        let p = params(2, 6);
        let set = build_hierarchy_set(&p, SetVariant::Set1, 6).unwrap();
        let g = analytic_coefficients(&p, 6, AlphaMode::Derived).unwrap();
        let worst = full_space_residual(&p, &set, &g);
        assert!(
            worst > 1e-6,
            "expected an honest cutoff defect, got {worst:.3e}"
        );
    }

    #[test]
    fn boundary_closed_constants_keep_the_conserved_functionals_bitwise() {
        for m in [1, 2, 3] {
            let p = params(m, 6);
            let set = build_hierarchy_set(&p, SetVariant::Set1, 6).unwrap();
            let g = boundary_closed_coefficients(&p, &set, AlphaMode::Derived).unwrap();
            for f in conserved_functionals(&set) {
                for mat in [&g.g_static, &g.g_drive] {
                    let row = f.row_sum(mat);
                    assert!(
                        row.iter().all(|&x| x == 0.0),
                        "{} (m = {m}) picked up boundary terms",
                        f.name
                    );
                }
            }
        }
    }

    #[test]
    fn boundary_corrections_touch_only_quadrature_drive_rows() {
        let m = 2;
        let n_max = 6;
        let p = params(m, n_max);
        let set = build_hierarchy_set(&p, SetVariant::Set1, n_max).unwrap();
        let bounded = boundary_closed_coefficients(&p, &set, AlphaMode::Derived).unwrap();
        let mut plain = analytic_coefficients(&p, n_max, AlphaMode::Derived).unwrap();
        // Apply the same vanishing-member cleanup the boundary path performs.
        for (j, member) in set.members().iter().enumerate() {
            if member.frobenius_norm() == 0.0 {
                plain.g_static.row_mut(j).fill(0.0);
                plain.g_drive.row_mut(j).fill(0.0);
                plain.g_static.column_mut(j).fill(0.0);
                plain.g_drive.column_mut(j).fill(0.0);
            }
        }
        assert_eq!(bounded.g_static, plain.g_static);
        let diff = &bounded.g_drive - &plain.g_drive;
        for ((j, i), &v) in diff.indexed_iter() {
            if v == 0.0 {
                continue;
            }
            let (row_level, row_kind) = (j / 6, j % 6);
            let (col_level, col_kind) = (i / 6, i % 6);
            assert!(
                matches!(row_kind, 3 | 4) && row_level <= n_max - m,
                "correction on non-quadrature row {}",
                bounded.labels[j]
            );
            assert!(
                matches!(col_kind, 1 | 5) && col_level > n_max - m,
                "correction lands on {} instead of a top-window occupation",
                bounded.labels[i]
            );
        }
        // Occupation/double-occupation corrections come in cancelling pairs,
        // which is how the conserved functionals stay untouched.
        for j in 0..set.len() {
            for level in (n_max - m + 1)..=n_max {
                let n2 = diff[[j, 6 * level + 1]];
                let n21 = diff[[j, 6 * level + 5]];
                assert_eq!(n2, -n21, "unpaired correction in row {}", bounded.labels[j]);
            }
        }
    }
}
