//! The four subcommands. Each one returns the process exit code on the
//! success path; recoverable failures bubble up as core errors and the
//! caller maps them onto the exit-code contract.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::json;

use mjcm_core::algebra::{
    analytic_coefficients, boundary_closed_coefficients, compare_coefficient_matrices,
    conserved_functionals, solve_structure_constants, AlphaMode, CoefficientMatrices,
};
use mjcm_core::dynamics::{evolve_bloch, evolve_exact, ExactMethod, TimeSeries};
use mjcm_core::mep::{self, FitOptions};
use mjcm_core::model::{build_hierarchy_set, DriveSpec, ModelParams, OperatorSet, SetVariant};
use mjcm_core::operator::QuantumState;
use mjcm_core::{Error, Result, C64};

use crate::config::{level_occupations, Evolution, InitialState, RunConfig};

/// Exit codes of the tool, beyond the generic configuration failure (1).
pub const EXIT_OK: i32 = 0;
pub const EXIT_CLOSURE_FAILED: i32 = 2;
pub const EXIT_COEFFICIENTS_DIFFER: i32 = 5;

/// Default residual threshold for `verify-closure`.
const CLOSURE_TOL: f64 = 1e-9;
/// Default per-entry relative tolerance for `compare-coefficients`.
const COMPARE_RTOL: f64 = 1e-12;
/// Functional columns are emitted up to this hierarchy level; deeper levels
/// carry falling-factorial scales that would drown the CSV in magnitudes
/// irrelevant to conservation checking.
const FUNCTIONAL_LEVEL_CAP: usize = 4;

/// Write a JSON report: to `path` when configured, otherwise to stdout
/// (suppressed by `--quiet` — the exit code still carries the verdict).
fn emit_json(
    path: Option<&Path>,
    value: &serde_json::Value,
    quiet: bool,
) -> std::result::Result<(), String> {
    let mut text = serde_json::to_string_pretty(value).expect("report serialization");
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text).map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => {
            if !quiet {
                print!("{text}");
            }
            Ok(())
        }
    }
}

fn say(quiet: bool, line: impl AsRef<str>) {
    if !quiet {
        println!("{}", line.as_ref());
    }
}

/// Build the configured operator family after validating the parameters.
fn build_set(cfg: &RunConfig) -> Result<(ModelParams, OperatorSet)> {
    let params = cfg.model_params();
    params.validate()?;
    let set = build_hierarchy_set(&params, cfg.set.variant, cfg.set.depth)?;
    Ok((params, set))
}

/// Solve the structure constants on the safe window and verdict the closure.
pub fn verify_closure(cfg: &RunConfig, quiet: bool) -> std::result::Result<i32, Error> {
    let (params, mut set) = build_set(cfg)?;
    if let Some(epsilon) = cfg.corrupt_first_member {
        let label = set.labels()[0].clone();
        set.perturb_member(&label, epsilon)?;
        say(
            quiet,
            format!("negative control: perturbed {label} by {epsilon:e}"),
        );
    }
    let n_safe = cfg.n_safe.unwrap_or(cfg.set.depth);
    let tolerance = cfg.tolerance.unwrap_or(CLOSURE_TOL);
    let report = solve_structure_constants(&params, &set, n_safe)?;
    let closes = report.closes_within(tolerance);

    let g_static_rows: Vec<Vec<f64>> = report
        .coefficients
        .g_static
        .outer_iter()
        .map(|r| r.to_vec())
        .collect();
    let g_drive_rows: Vec<Vec<f64>> = report
        .coefficients
        .g_drive
        .outer_iter()
        .map(|r| r.to_vec())
        .collect();
    let value = json!({
        "command": "verify-closure",
        "variant": cfg.set.variant,
        "depth": cfg.set.depth,
        "m": params.m,
        "n_max": params.dims.n_max(),
        "n_safe": report.n_safe,
        "projected_dim": report.projected_dim,
        "tolerance": tolerance,
        "max_residual": report.max_residual,
        "closes": closes,
        "rank": report.rank,
        "labels": report.coefficients.labels,
        "residual_static": report.residual_static,
        "residual_drive": report.residual_drive,
        "vanishing_members": report.vanishing_members,
        "singular_values": report.singular_values,
        "g_static": g_static_rows,
        "g_drive": g_drive_rows,
    });
    emit_json(cfg.json_path().map(|p| p.as_path()), &value, quiet)
        .map_err(Error::InvalidParams)?;

    say(
        quiet,
        format!(
            "closure {}: max residual {:.3e} (tolerance {:.1e}) over {} members, window dim {}, rank {}",
            if closes { "ok" } else { "FAILED" },
            report.max_residual,
            tolerance,
            set.len(),
            report.projected_dim,
            report.rank,
        ),
    );
    Ok(if closes { EXIT_OK } else { EXIT_CLOSURE_FAILED })
}

/// Construct the configured initial state on the model space.
fn initial_state(
    cfg: &RunConfig,
    params: &ModelParams,
    set: &OperatorSet,
) -> Result<QuantumState> {
    let spec = cfg.initial_state.as_ref().ok_or_else(|| {
        Error::InvalidParams("simulate needs an initial_state section".into())
    })?;
    match spec {
        InitialState::Product { level, fock } => {
            let (i1, i2) = level_occupations(*level)?;
            QuantumState::basis_state(params.dims, i1, i2, *fock)
        }
        InitialState::Coherent { level, alpha } => {
            let (i1, i2) = level_occupations(*level)?;
            QuantumState::coherent(params.dims, i1, i2, C64::new(alpha[0], alpha[1]))
        }
        InitialState::Mep { lambdas } => {
            let mut lam = vec![0.0; set.len()];
            for (label, value) in lambdas {
                lam[set.index_of(label)?] = *value;
            }
            Ok(mep::build_rho(set, &lam)?.0)
        }
    }
}

/// Coefficients for the mean-value route. A family spanning the whole ladder
/// (`depth = n_max`) gets the boundary-closed constants, which are exact for
/// the truncated model; shallower families use the closed-form ladder
/// constants, whose couplings past `depth` drop.
fn bloch_coefficients(
    cfg: &RunConfig,
    params: &ModelParams,
    set: &OperatorSet,
) -> Result<CoefficientMatrices> {
    if cfg.set.variant != SetVariant::Set1 {
        return Err(Error::InvalidSet(
            "the mean-value route has closed-form coefficients for the sandwich \
             hierarchy (set1) only; use \"evolution\": \"exact\" for other variants"
                .into(),
        ));
    }
    let mode = cfg.coefficient_mode.unwrap_or(AlphaMode::Derived);
    if cfg.set.depth == params.dims.n_max() {
        boundary_closed_coefficients(params, set, mode)
    } else {
        analytic_coefficients(params, cfg.set.depth, mode)
    }
}

/// Hierarchy level encoded in a functional name `cons_n{q}` / `docc_n{q}`.
fn functional_level(name: &str) -> usize {
    name.rsplit('n')
        .next()
        .and_then(|s| s.parse().ok())
        .unwrap_or(usize::MAX)
}

/// Render the time series as CSV: `t`, the tracked member columns in config
/// order, the conserved-combination residuals (value minus its `t = 0`
/// value), then the frozen double-occupation columns. 17 significant digits,
/// `\n` line endings, no trailing delimiter.
fn render_csv(
    series: &TimeSeries,
    tracked: &[String],
    functionals: &[(String, Vec<f64>)],
) -> Result<String> {
    let mut header: Vec<&str> = vec!["t"];
    header.extend(tracked.iter().map(|s| s.as_str()));
    header.extend(functionals.iter().map(|(n, _)| n.as_str()));

    let tracked_cols: Vec<&[f64]> = tracked
        .iter()
        .map(|label| series.column(label))
        .collect::<Result<_>>()?;

    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, t) in series.times.iter().enumerate() {
        write!(out, "{t:.16e}").expect("string write");
        for col in &tracked_cols {
            write!(out, ",{:.16e}", col[i]).expect("string write");
        }
        for (_, col) in functionals {
            write!(out, ",{:.16e}", col[i]).expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Sampled conservation diagnostics of a trajectory: `cons_n{q}` columns as
/// drift from their initial value, `docc_n{q}` columns as raw values, both
/// up to level `FUNCTIONAL_LEVEL_CAP`.
fn functional_columns(set: &OperatorSet, series: &TimeSeries) -> Vec<(String, Vec<f64>)> {
    let functionals: Vec<_> = conserved_functionals(set)
        .into_iter()
        .filter(|f| functional_level(&f.name) <= FUNCTIONAL_LEVEL_CAP)
        .collect();
    let mut columns: Vec<(String, Vec<f64>)> = functionals
        .iter()
        .map(|f| (f.name.clone(), Vec::with_capacity(series.len())))
        .collect();
    for i in 0..series.len() {
        let row = series.row(i);
        for (f, (_, col)) in functionals.iter().zip(columns.iter_mut()) {
            col.push(f.apply(&row));
        }
    }
    for (name, col) in columns.iter_mut() {
        if name.starts_with("cons_") {
            let base = col.first().copied().unwrap_or(0.0);
            for v in col.iter_mut() {
                *v -= base;
            }
        }
    }
    columns
}

/// Collapse/revival diagnostics of the population signal, reported when the
/// run is the single-photon model with a coherent field and a constant
/// envelope. The predicted revival time of that regime is
/// `2π √n̄ / (|γ| T)`; the signal swing is measured peak-to-peak over a
/// sliding window a couple of mean-field exchange periods wide.
fn revival_summary(
    cfg: &RunConfig,
    params: &ModelParams,
    series: &TimeSeries,
) -> Result<Option<serde_json::Value>> {
    let (Some(InitialState::Coherent { alpha, .. }), DriveSpec::Constant { amplitude }) =
        (&cfg.initial_state, &params.drive)
    else {
        return Ok(None);
    };
    let envelope = amplitude.abs();
    let n_bar_sqrt = (alpha[0] * alpha[0] + alpha[1] * alpha[1]).sqrt();
    let rate = params.gamma.norm() * envelope * n_bar_sqrt;
    if params.m != 1 || rate <= 0.0 {
        return Ok(None);
    }
    let predicted = 2.0 * std::f64::consts::PI * n_bar_sqrt / (params.gamma.norm() * envelope);
    let t_end = *series.times.last().unwrap_or(&0.0);
    let half_window = 2.25 / rate;
    if t_end < 0.5 * predicted + half_window {
        return Ok(None); // horizon too short to see the revival
    }

    let signal = series.column("N2[0]")?;
    let swing_at = |center: f64| -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (t, v) in series.times.iter().zip(signal) {
            if (t - center).abs() <= half_window {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        if hi >= lo {
            hi - lo
        } else {
            0.0
        }
    };

    // Collapse plateau: the quietest stretch well before the revival.
    let mut collapse_floor = f64::INFINITY;
    // Revival: the largest swing in a window around the predicted time.
    let mut peak_time = f64::NAN;
    let mut peak_swing = f64::NEG_INFINITY;
    for &t in &series.times {
        if t >= 0.15 * predicted && t <= 0.45 * predicted {
            collapse_floor = collapse_floor.min(swing_at(t));
        }
        if t >= 0.5 * predicted && t <= (1.35 * predicted).min(t_end - half_window) {
            let s = swing_at(t);
            if s > peak_swing {
                peak_swing = s;
                peak_time = t;
            }
        }
    }
    if !peak_time.is_finite() {
        return Ok(None);
    }
    Ok(Some(json!({
        "signal": "N2[0]",
        "predicted_time": predicted,
        "peak_time": peak_time,
        "peak_swing": peak_swing,
        "collapse_floor": collapse_floor,
        "within_ten_percent": (peak_time - predicted).abs() <= 0.1 * predicted,
    })))
}

/// Evolve the configured state and export the trajectory.
pub fn simulate(cfg: &RunConfig, quiet: bool) -> std::result::Result<i32, Error> {
    let (params, set) = build_set(cfg)?;
    let integrator = cfg.integrator.clone().ok_or_else(|| {
        Error::InvalidParams("simulate needs an integrator section".into())
    })?;
    integrator.validate()?;
    for label in cfg.tracked() {
        set.index_of(label)?; // fail fast on unknown tracked labels
    }
    let evolution = cfg.evolution.unwrap_or(Evolution::Both);
    let state = initial_state(cfg, &params, &set)?;

    let exact = match evolution {
        Evolution::Exact | Evolution::Both => Some(evolve_exact(
            &params,
            &set,
            &state,
            &integrator,
            ExactMethod::Auto,
        )?),
        Evolution::Bloch => None,
    };
    let bloch = match evolution {
        Evolution::Bloch | Evolution::Both => {
            let coefficients = bloch_coefficients(cfg, &params, &set)?;
            let (y0, _) = mep::mean_vector(&set, &state)?;
            Some(evolve_bloch(&coefficients, &params.drive, &y0, &integrator)?)
        }
        Evolution::Exact => None,
    };
    // The mean-value route is the primary export when it runs; the exact
    // route then serves as the cross-check.
    let primary = bloch.as_ref().or(exact.as_ref()).expect("one route ran");

    let functionals = functional_columns(&set, primary);
    let max_conservation_drift = functionals
        .iter()
        .flat_map(|(name, col)| {
            let base = if name.starts_with("docc_") {
                col.first().copied().unwrap_or(0.0)
            } else {
                0.0 // cons columns are already drifts
            };
            col.iter().map(move |v| (v - base).abs())
        })
        .fold(0.0_f64, f64::max);

    let max_oracle_deviation = match (&exact, &bloch) {
        (Some(e), Some(b)) => {
            let labels: Vec<&str> = if cfg.tracked().is_empty() {
                set.labels().iter().map(|s| s.as_str()).collect()
            } else {
                cfg.tracked().iter().map(|s| s.as_str()).collect()
            };
            let mut gap = 0.0_f64;
            for label in labels {
                for (x, y) in e.column(label)?.iter().zip(b.column(label)?) {
                    gap = gap.max((x - y).abs());
                }
            }
            Some(gap)
        }
        _ => None,
    };

    if let Some(path) = cfg.csv_path() {
        let csv = render_csv(primary, cfg.tracked(), &functionals)?;
        fs::write(path, csv).map_err(|e| {
            Error::InvalidParams(format!("cannot write {}: {e}", path.display()))
        })?;
    }

    let revival = revival_summary(cfg, &params, primary)?;
    let metadata = |s: &Option<TimeSeries>| {
        s.as_ref()
            .map(|s| serde_json::to_value(&s.metadata).expect("metadata serialization"))
            .unwrap_or(serde_json::Value::Null)
    };
    let value = json!({
        "command": "simulate",
        "evolution": match evolution {
            Evolution::Exact => "exact",
            Evolution::Bloch => "bloch",
            Evolution::Both => "both",
        },
        "samples": primary.len(),
        "t_end": integrator.t_end,
        "tracked": cfg.tracked(),
        "series": {
            "exact": metadata(&exact),
            "mean_value": metadata(&bloch),
        },
        "max_oracle_deviation": max_oracle_deviation,
        "max_conservation_drift": max_conservation_drift,
        "revival": revival,
        "csv_path": cfg.csv_path().map(|p| p.display().to_string()),
    });
    emit_json(cfg.json_path().map(|p| p.as_path()), &value, quiet)
        .map_err(Error::InvalidParams)?;

    let mut line = format!(
        "simulate ok: {} samples to t = {}",
        primary.len(),
        integrator.t_end
    );
    if let Some(gap) = max_oracle_deviation {
        write!(line, ", max route deviation {gap:.3e}").expect("string write");
    }
    write!(line, ", conservation drift {max_conservation_drift:.3e}").expect("string write");
    say(quiet, line);
    Ok(EXIT_OK)
}

/// Fit maximum-entropy multipliers to the configured mean-value targets.
pub fn fit_mep(cfg: &RunConfig, quiet: bool) -> std::result::Result<i32, Error> {
    let (_, set) = build_set(cfg)?;
    let targets: Vec<(String, f64)> = cfg
        .targets
        .iter()
        .flatten()
        .map(|t| (t.label.clone(), t.value))
        .collect();

    let (value, line) = if targets.is_empty() {
        // No constraints: entropy is maximal over the whole space, all
        // multipliers vanish, and S = ln d.
        let state = mep::uniform_state(&set)?;
        let line = format!(
            "fit ok: no targets, uniform state, entropy {:.12} (= ln {})",
            state.entropy,
            set.dims().total_dim()
        );
        (
            json!({
                "command": "fit-mep",
                "converged": true,
                "iterations": 0,
                "gap": 0.0,
                "hessian_rank": 0,
                "gauge_deficiency": 0,
                "note": "no targets; maximum-entropy state over the whole space",
                "state": state,
            }),
            line,
        )
    } else {
        let defaults = FitOptions::default();
        let options = FitOptions {
            tol: cfg.fit.as_ref().and_then(|f| f.tol).unwrap_or(defaults.tol),
            max_iter: cfg
                .fit
                .as_ref()
                .and_then(|f| f.max_iter)
                .unwrap_or(defaults.max_iter),
            initial: None,
        };
        let report = mep::fit_lambdas(&set, &targets, &options)?;
        let line = format!(
            "fit ok: {} targets in {} iterations, gap {:.3e}, entropy {:.12}",
            targets.len(),
            report.iterations,
            report.gap,
            report.state.entropy
        );
        (
            json!({
                "command": "fit-mep",
                "converged": true,
                "iterations": report.iterations,
                "gap": report.gap,
                "hessian_rank": report.hessian_rank,
                "gauge_deficiency": report.gauge_deficiency,
                "state": report.state,
            }),
            line,
        )
    };
    emit_json(cfg.json_path().map(|p| p.as_path()), &value, quiet)
        .map_err(Error::InvalidParams)?;
    say(quiet, line);
    Ok(EXIT_OK)
}

/// Compare the two closed-form coefficient conventions entry by entry.
pub fn compare_coefficients(cfg: &RunConfig, quiet: bool) -> std::result::Result<i32, Error> {
    let params = cfg.model_params();
    params.validate()?;
    if cfg.set.variant != SetVariant::Set1 {
        return Err(Error::InvalidSet(
            "closed-form coefficients exist for the sandwich hierarchy (set1) only".into(),
        ));
    }
    let derived = analytic_coefficients(&params, cfg.set.depth, AlphaMode::Derived)?;
    let printed = analytic_coefficients(&params, cfg.set.depth, AlphaMode::Printed)?;
    let rtol = cfg.tolerance.unwrap_or(COMPARE_RTOL);
    let diffs = compare_coefficient_matrices(&derived, &printed, rtol, &[])?;

    let value = json!({
        "command": "compare-coefficients",
        "m": params.m,
        "depth": cfg.set.depth,
        "rtol": rtol,
        "count": diffs.len(),
        "entries": diffs,
    });
    emit_json(cfg.json_path().map(|p| p.as_path()), &value, quiet)
        .map_err(Error::InvalidParams)?;
    say(
        quiet,
        format!(
            "coefficient conventions {}: {} differing entries at m = {}, depth {}",
            if diffs.is_empty() { "agree" } else { "DIFFER" },
            diffs.len(),
            params.m,
            cfg.set.depth
        ),
    );
    Ok(if diffs.is_empty() {
        EXIT_OK
    } else {
        EXIT_COEFFICIENTS_DIFFER
    })
}
