//! Dense operators and states on the truncated Hilbert space of two fermionic
//! levels coupled to a single bosonic field mode.
//!
//! The space is a tensor product `level-1 (2) ⊗ level-2 (2) ⊗ field (n_max+1)`,
//! in that order, so the total dimension is `4 * (n_max + 1)`. The full
//! four-dimensional fermion sector (empty, single, double occupation) is kept:
//! the pair correlator `b₂†b₂b₁†b₁` is only nontrivial on the doubly occupied
//! sector.

use ndarray::{Array1, Array2, ArrayView2};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance for Hermiticity checks (`~100 ε` times typical dimension).
pub const DEFAULT_HERM_TOL: f64 = 1e-10;
/// Default tolerance on pure-state norm defects.
pub const NORM_TOL: f64 = 1e-12;
/// Most negative density-matrix eigenvalue accepted as rounding noise.
pub const EIGENVALUE_FLOOR: f64 = -1e-10;

/// Shape of the truncated Hilbert space: photon sectors `0..=n_max` and the
/// fixed four-dimensional two-level fermion sector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilbertDims {
    n_max: usize,
}

impl HilbertDims {
    pub const FERMION_DIM: usize = 4;

    pub fn new(n_max: usize) -> Self {
        Self { n_max }
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Field-mode dimension `n_max + 1`.
    pub fn field_dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn total_dim(&self) -> usize {
        Self::FERMION_DIM * self.field_dim()
    }

    /// Flat index of the product-basis vector `|i₁ i₂⟩ ⊗ |n⟩`.
    pub fn basis_index(&self, i1: usize, i2: usize, n: usize) -> usize {
        debug_assert!(i1 < 2 && i2 < 2 && n <= self.n_max);
        (2 * i1 + i2) * self.field_dim() + n
    }

    /// Photon number of a flat basis index.
    pub fn photon_of(&self, index: usize) -> usize {
        index % self.field_dim()
    }
}

/// A dense complex matrix tied to a [`HilbertDims`].
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    dims: HilbertDims,
    mat: Array2<C64>,
}

impl Operator {
    pub fn new(dims: HilbertDims, mat: Array2<C64>) -> Result<Self> {
        let d = dims.total_dim();
        if mat.nrows() != d || mat.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "operator is {}x{}, space dimension is {}",
                mat.nrows(),
                mat.ncols(),
                d
            )));
        }
        Ok(Self { dims, mat })
    }

    pub fn identity(dims: HilbertDims) -> Self {
        Self {
            dims,
            mat: Array2::eye(dims.total_dim()),
        }
    }

    pub fn zeros(dims: HilbertDims) -> Self {
        Self {
            dims,
            mat: Array2::zeros((dims.total_dim(), dims.total_dim())),
        }
    }

    pub fn dims(&self) -> HilbertDims {
        self.dims
    }

    pub fn matrix_mut(&mut self) -> &mut Array2<C64> {
        &mut self.mat
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.mat
    }

    pub fn dagger(&self) -> Self {
        let mat = self.mat.t().mapv(|z| z.conj());
        Self {
            dims: self.dims,
            mat,
        }
    }

    /// Matrix product; panics on mismatched dims like `ndarray` itself.
    pub fn dot(&self, other: &Self) -> Self {
        assert_eq!(self.dims, other.dims, "operator dims mismatch in product");
        Self {
            dims: self.dims,
            mat: self.mat.dot(&other.mat),
        }
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self {
            dims: self.dims,
            mat: self.mat.mapv(|z| z * factor),
        }
    }

    /// Largest absolute entry of `A - A†`.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        let d = self.mat.nrows();
        for i in 0..d {
            for j in i..d {
                let defect = (self.mat[[i, j]] - self.mat[[j, i]].conj()).norm();
                if defect > worst {
                    worst = defect;
                }
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> C64 {
        self.mat.diag().sum()
    }
}

macro_rules! operator_binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl std::ops::$trait for &Operator {
            type Output = Operator;
            fn $method(self, rhs: &Operator) -> Operator {
                assert_eq!(self.dims, rhs.dims, "operator dims mismatch");
                Operator {
                    dims: self.dims,
                    mat: &self.mat $op &rhs.mat,
                }
            }
        }
    };
}
operator_binop!(Add, add, +);
operator_binop!(Sub, sub, -);

/// Kronecker product of a factor list, in the fixed ordering
/// `level-1 ⊗ level-2 ⊗ field`. Factors must be square and their dimensions
/// must multiply to `dims.total_dim()`.
pub fn tensor_embed(dims: HilbertDims, factors: &[ArrayView2<C64>]) -> Result<Operator> {
    let mut product = 1usize;
    for (index, f) in factors.iter().enumerate() {
        if f.nrows() != f.ncols() {
            return Err(Error::NonSquareFactor {
                index,
                rows: f.nrows(),
                cols: f.ncols(),
            });
        }
        product *= f.nrows();
    }
    if product != dims.total_dim() {
        return Err(Error::FactorProductMismatch {
            product,
            expected: dims.total_dim(),
        });
    }
    let mut mat = Array2::from_elem((1, 1), C64::new(1.0, 0.0));
    for f in factors {
        mat = ndarray::linalg::kron(&mat, f);
    }
    Operator::new(dims, mat)
}

/// `[A, B] = AB - BA`.
pub fn commutator(a: &Operator, b: &Operator) -> Operator {
    assert_eq!(a.dims(), b.dims(), "operator dims mismatch in commutator");
    let mat = a.matrix().dot(b.matrix()) - b.matrix().dot(a.matrix());
    Operator {
        dims: a.dims(),
        mat,
    }
}

/// `{A, B} = AB + BA`.
pub fn anti_commutator(a: &Operator, b: &Operator) -> Operator {
    assert_eq!(a.dims(), b.dims(), "operator dims mismatch in anticommutator");
    let mat = a.matrix().dot(b.matrix()) + b.matrix().dot(a.matrix());
    Operator {
        dims: a.dims(),
        mat,
    }
}

/// Eigendecomposition of a Hermitian operator: ascending eigenvalues and the
/// matrix whose columns are the eigenvectors. Rejects inputs whose
/// Hermiticity defect exceeds `herm_tol`.
pub fn eigh_hermitian(op: &Operator, herm_tol: f64) -> Result<(Array1<f64>, Array2<C64>)> {
    let defect = op.hermiticity_defect();
    if defect > herm_tol {
        return Err(Error::NotHermitian {
            defect,
            tol: herm_tol,
        });
    }
    let (evals, evecs) = op.matrix().eigh(UPLO::Lower)?;
    // The LAPACK bridge hands back a unitary matrix whose *conjugated* columns
    // are the eigenvectors when the input is complex (row-major storage is
    // seen transposed, i.e. conjugated, by the column-major backend).
    // Conjugate here so the advertised convention `A = V diag(e) V^H` holds;
    // `columns_of_v_diagonalize_complex_matrices` locks this in.
    let evecs = evecs.mapv(|z| z.conj());
    Ok((evals, evecs))
}

/// Reassemble `V · diag(w) · V†` from an eigenbasis.
pub fn from_eigenbasis(
    dims: HilbertDims,
    weights: &Array1<C64>,
    evecs: &Array2<C64>,
) -> Operator {
    let weighted = evecs * &weights.view().insert_axis(ndarray::Axis(0));
    let mat = weighted.dot(&evecs.t().mapv(|z| z.conj()));
    Operator { dims, mat }
}

/// `exp(O)` for Hermitian `O`, through the eigendecomposition.
pub fn hermitian_expm(op: &Operator, herm_tol: f64) -> Result<Operator> {
    let (evals, evecs) = eigh_hermitian(op, herm_tol)?;
    let weights = evals.mapv(|e| C64::new(e.exp(), 0.0));
    Ok(from_eigenbasis(op.dims(), &weights, &evecs))
}

/// Pure state or density matrix on a [`HilbertDims`] space.
#[derive(Debug, Clone)]
pub enum QuantumState {
    Pure {
        dims: HilbertDims,
        amplitudes: Array1<C64>,
    },
    Density {
        dims: HilbertDims,
        matrix: Array2<C64>,
    },
}

impl QuantumState {
    /// Validated pure state; the norm must already be 1 within [`NORM_TOL`].
    pub fn pure(dims: HilbertDims, amplitudes: Array1<C64>) -> Result<Self> {
        if amplitudes.len() != dims.total_dim() {
            return Err(Error::InvalidState(format!(
                "amplitude vector has length {}, space dimension is {}",
                amplitudes.len(),
                dims.total_dim()
            )));
        }
        let norm = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!(
                "pure state norm is {norm:.12}, expected 1 within {NORM_TOL:.1e}"
            )));
        }
        Ok(Self::Pure { dims, amplitudes })
    }

    /// Validated density matrix: Hermitian, unit trace, spectrum above
    /// [`EIGENVALUE_FLOOR`].
    pub fn density(dims: HilbertDims, matrix: Array2<C64>) -> Result<Self> {
        let rho = Operator::new(dims, matrix)?;
        let defect = rho.hermiticity_defect();
        if defect > DEFAULT_HERM_TOL {
            return Err(Error::InvalidState(format!(
                "density matrix Hermiticity defect {defect:.3e}"
            )));
        }
        let trace = rho.trace();
        if (trace.re - 1.0).abs() > DEFAULT_HERM_TOL || trace.im.abs() > DEFAULT_HERM_TOL {
            return Err(Error::InvalidState(format!(
                "density matrix trace is {trace}, expected 1"
            )));
        }
        let (evals, _) = rho.matrix().eigh(UPLO::Lower)?;
        if let Some(lowest) = evals.iter().cloned().reduce(f64::min) {
            if lowest < EIGENVALUE_FLOOR {
                return Err(Error::InvalidState(format!(
                    "density matrix has eigenvalue {lowest:.3e} below {EIGENVALUE_FLOOR:.1e}"
                )));
            }
        }
        Ok(Self::Density {
            dims,
            matrix: rho.into_matrix(),
        })
    }

    /// Product-basis vector `|i₁ i₂⟩ ⊗ |n⟩`.
    pub fn basis_state(dims: HilbertDims, i1: usize, i2: usize, n: usize) -> Result<Self> {
        if i1 > 1 || i2 > 1 || n > dims.n_max() {
            return Err(Error::InvalidState(format!(
                "basis labels ({i1}, {i2}, {n}) outside occupation {{0,1}} x photons 0..={}",
                dims.n_max()
            )));
        }
        let mut amplitudes = Array1::zeros(dims.total_dim());
        amplitudes[dims.basis_index(i1, i2, n)] = C64::new(1.0, 0.0);
        Ok(Self::Pure { dims, amplitudes })
    }

    /// Truncated coherent state `|i₁ i₂⟩ ⊗ |α⟩`, renormalized on the finite
    /// photon ladder. Rejected unless `|α|² ≤ n_max / 4`, which keeps the
    /// discarded tail weight far below working precision.
    pub fn coherent(dims: HilbertDims, i1: usize, i2: usize, alpha: C64) -> Result<Self> {
        if i1 > 1 || i2 > 1 {
            return Err(Error::InvalidState(format!(
                "occupation labels ({i1}, {i2}) outside {{0,1}}"
            )));
        }
        let mean_photons = alpha.norm_sqr();
        if mean_photons > dims.n_max() as f64 / 4.0 {
            return Err(Error::InvalidState(format!(
                "coherent amplitude |α|² = {mean_photons:.3} too large for n_max = {}; \
                 need |α|² ≤ n_max/4",
                dims.n_max()
            )));
        }
        let mut amplitudes = Array1::zeros(dims.total_dim());
        // c_n = e^{-|α|²/2} αⁿ/√(n!), built up recursively
        let mut c = C64::new((-mean_photons / 2.0).exp(), 0.0);
        amplitudes[dims.basis_index(i1, i2, 0)] = c;
        for n in 1..=dims.n_max() {
            c = c * alpha / C64::new((n as f64).sqrt(), 0.0);
            amplitudes[dims.basis_index(i1, i2, n)] = c;
        }
        let norm = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        amplitudes.mapv_inplace(|z| z / norm);
        Ok(Self::Pure { dims, amplitudes })
    }

    pub fn maximally_mixed(dims: HilbertDims) -> Self {
        let d = dims.total_dim();
        let matrix = Array2::eye(d).mapv(|z: f64| C64::new(z / d as f64, 0.0));
        Self::Density { dims, matrix }
    }

    pub fn dims(&self) -> HilbertDims {
        match self {
            Self::Pure { dims, .. } | Self::Density { dims, .. } => *dims,
        }
    }

    pub fn is_pure(&self) -> bool {
        matches!(self, Self::Pure { .. })
    }

    /// Density matrix of the state (projector for pure states).
    pub fn density_matrix(&self) -> Array2<C64> {
        match self {
            Self::Pure { amplitudes, .. } => {
                let col = amplitudes.view().insert_axis(ndarray::Axis(1));
                let row = amplitudes.mapv(|z| z.conj());
                let row = row.view().insert_axis(ndarray::Axis(0));
                col.dot(&row)
            }
            Self::Density { matrix, .. } => matrix.clone(),
        }
    }

    /// Norm (pure) or trace (density); should stay at 1 under evolution.
    pub fn weight(&self) -> f64 {
        match self {
            Self::Pure { amplitudes, .. } => {
                amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
            }
            Self::Density { matrix, .. } => matrix.diag().sum().re,
        }
    }
}

/// `⟨O⟩ = ⟨ψ|O|ψ⟩` or `Tr[ρO]`. The imaginary part is returned so callers can
/// assert it is rounding noise for Hermitian observables.
pub fn expectation(op: &Operator, state: &QuantumState) -> Result<C64> {
    if op.dims() != state.dims() {
        return Err(Error::DimensionMismatch(format!(
            "operator on {} dims, state on {} dims",
            op.dims().total_dim(),
            state.dims().total_dim()
        )));
    }
    let value = match state {
        QuantumState::Pure { amplitudes, .. } => {
            let applied = op.matrix().dot(amplitudes);
            amplitudes
                .iter()
                .zip(applied.iter())
                .map(|(a, b)| a.conj() * b)
                .sum()
        }
        QuantumState::Density { matrix, .. } => {
            // Tr[ρO] = Σ_ij ρ_ij O_ji without forming the product matrix.
            let mut acc = C64::new(0.0, 0.0);
            for (i, row) in matrix.outer_iter().enumerate() {
                for (j, r) in row.iter().enumerate() {
                    acc += r * op.matrix()[[j, i]];
                }
            }
            acc
        }
    };
    Ok(value)
}
