//! Run configuration: one JSON file describes the model, the operator
//! family, and what the invoked subcommand should do with them. Unknown
//! keys are rejected everywhere so typos surface as parse errors instead of
//! silently ignored settings.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use mjcm_core::algebra::AlphaMode;
use mjcm_core::dynamics::IntegratorConfig;
use mjcm_core::model::{DriveSpec, ModelParams, SetVariant};
use mjcm_core::operator::HilbertDims;
use mjcm_core::{Error, Result, C64};

fn is_false(b: &bool) -> bool {
    !*b
}

/// Top-level run configuration. Sections that a subcommand does not use are
/// permitted but ignored, so one file can drive several subcommands.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub drive: DriveSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<InitialState>,
    pub set: SetSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorConfig>,
    /// Which closed-form convention fills the quadrature coefficient rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficient_mode: Option<AlphaMode>,
    /// Photon cap of the verification window (`verify-closure`); defaults to
    /// the hierarchy depth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_safe: Option<usize>,
    /// Which route(s) `simulate` runs; defaults to `both`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evolution: Option<Evolution>,
    /// `verify-closure`: residual threshold (default 1e-9).
    /// `compare-coefficients`: relative tolerance per entry (default 1e-12).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Mean-value targets for `fit-mep`. Absent or empty means "no
    /// constraints": the fit degenerates to the uniform state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<Target>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSection>,
    /// Add a Hermitian defect of this size to the first family member before
    /// verification — a negative control that must make `verify-closure`
    /// fail. No other subcommand reads it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrupt_first_member: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Outputs>,
}

/// Physical parameters; `gamma` is `[re, im]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub e1: f64,
    pub e2: f64,
    pub omega: f64,
    pub gamma: [f64; 2],
    pub m: usize,
    pub n_max: usize,
    #[serde(default, skip_serializing_if = "is_false")]
    pub allow_zero_coupling: bool,
}

/// Operator family: construction variant and hierarchy depth.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSection {
    pub variant: SetVariant,
    pub depth: usize,
}

/// Initial state of a simulation. `level` is 1 or 2 (which two-level state
/// carries the excitation); `alpha` is `[re, im]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum InitialState {
    /// `|level⟩ ⊗ |fock⟩`
    Product { level: u8, fock: usize },
    /// `|level⟩ ⊗ |α⟩`, demanding `|α|² ≤ n_max / 4` so the coherent tail
    /// fits the truncated space.
    Coherent { level: u8, alpha: [f64; 2] },
    /// Maximum-entropy state `exp(-Σ λ_j Ô_j)/Z` from explicit multipliers;
    /// members not listed carry `λ = 0`.
    Mep { lambdas: BTreeMap<String, f64> },
}

/// Which route(s) `simulate` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Evolution {
    /// Full-state propagation only.
    Exact,
    /// Closed mean-value equations only.
    Bloch,
    /// Both, with the largest cross-deviation reported in the summary.
    Both,
}

/// One mean-value target for the multiplier fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub label: String,
    pub value: f64,
}

/// Optional fit controls; defaults match the library.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

/// Where results land. Paths are taken as given (relative to the working
/// directory); when `json_path` is absent the report prints to stdout
/// unless `--quiet` silences it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub json_path: Option<PathBuf>,
    /// Member labels exported as CSV columns, in this order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tracked: Vec<String>,
}

impl RunConfig {
    /// Assemble the core parameter struct (validation happens separately so
    /// the caller controls the error path).
    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            e1: self.model.e1,
            e2: self.model.e2,
            omega: self.model.omega,
            gamma: C64::new(self.model.gamma[0], self.model.gamma[1]),
            m: self.model.m,
            drive: self.drive,
            dims: HilbertDims::new(self.model.n_max),
            allow_zero_coupling: self.model.allow_zero_coupling,
        }
    }

    pub fn tracked(&self) -> &[String] {
        self.outputs.as_ref().map_or(&[], |o| &o.tracked)
    }

    pub fn csv_path(&self) -> Option<&PathBuf> {
        self.outputs.as_ref().and_then(|o| o.csv_path.as_ref())
    }

    pub fn json_path(&self) -> Option<&PathBuf> {
        self.outputs.as_ref().and_then(|o| o.json_path.as_ref())
    }
}

/// `(i1, i2)` occupations of the two-level sector for a `level` tag.
pub fn level_occupations(level: u8) -> Result<(usize, usize)> {
    match level {
        1 => Ok((1, 0)),
        2 => Ok((0, 1)),
        other => Err(Error::InvalidParams(format!(
            "initial_state level must be 1 or 2, got {other}"
        ))),
    }
}
