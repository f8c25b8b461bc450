//! The four subcommands. Each returns its summary document after writing
//! the configured outputs.

use std::cell::Cell;

use pseudocool_core::bathlib::{
    mode_spectrum, power_spectrum, s_fit, t_eff, BathFitDocument, PseudomodeParams, UnderdampedBath,
};
use pseudocool_core::continuation::{
    energy_sweep, error_vs_nm, fit_poly, system_energy, ObservationTime, RunRecipe, SizeOrderRow,
    SizeStudy, SweepPlan,
};
use pseudocool_core::dynamics::{
    bms_build, bms_evolve, evolve as run_evolution, initial_state, initial_system_state,
    uniform_grid, Probes, Trajectory,
};
use pseudocool_core::modelkit::{
    assemble, build_ising, build_q, ground_info, prepare_bath, Omega0, PreparedBath,
};
use pseudocool_core::C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BmsSpectrum, Format, RunConfig};
use crate::output::OutDir;
use crate::CliError;

/// Which dynamics `evolve` runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Resonant ancilla only.
    Single,
    /// Resonant ancilla plus the fitted ancillas at `λ̄ = i`.
    Full,
    /// Secular Bloch-Redfield master equation.
    Bms,
}

const SPECTRUM_POINTS: usize = 1001;

fn prepared(cfg: &RunConfig) -> Result<PreparedBath, CliError> {
    let spec = cfg.ising()?;
    Ok(prepare_bath(
        &spec,
        &cfg.bath_recipe(),
        cfg.modes.n_fit_terms,
        cfg.modes.fit_window,
        &cfg.modes.truncations(),
    )?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundSummary {
    pub e_ground: f64,
    pub e01: f64,
    pub degeneracy: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BathFitReport {
    pub ground: GroundSummary,
    pub fit: BathFitDocument,
    pub modes: Vec<PseudomodeParams>,
    /// `∫_{ω<0} S_fit / ∫_{ω>0} S_fit` over the emitted grid.
    pub negative_weight_ratio: f64,
}

/// Target, per-ancilla and summed spectra with `T_eff` on `[−5ω0, 5ω0]`.
pub fn spectra_table(
    bath: &UnderdampedBath,
    modes: &[PseudomodeParams],
) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut header = vec!["omega".to_string(), "S_target".to_string()];
    header.extend((1..=modes.len()).map(|k| format!("S_a{k}")));
    header.extend(["S_fit".to_string(), "T_eff".to_string()]);
    let span = 5.0 * bath.omega0;
    let mut rows = Vec::with_capacity(SPECTRUM_POINTS);
    for k in 0..SPECTRUM_POINTS {
        let w = -span + 2.0 * span * k as f64 / (SPECTRUM_POINTS - 1) as f64;
        let mut row = vec![w, power_spectrum(bath, w)?];
        row.extend(modes.iter().map(|m| mode_spectrum(m, -1.0, w)));
        row.push(s_fit(modes, -1.0, w));
        row.push(
            t_eff(|x| s_fit(modes, -1.0, x), w)
                .map(|t| t.value)
                .unwrap_or(f64::NAN),
        );
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn fit_bath(cfg: &RunConfig, out: &OutDir) -> Result<BathFitReport, CliError> {
    let prep = prepared(cfg)?;
    let (header, rows) = spectra_table(&prep.bath, &prep.modes)?;
    let fit_col = header.len() - 2;
    let (neg, pos) = rows.iter().fold((0.0, 0.0), |(n, p), r| {
        if r[0] < 0.0 {
            (n + r[fit_col].max(0.0), p)
        } else {
            (n, p + r[fit_col].max(0.0))
        }
    });
    let report = BathFitReport {
        ground: GroundSummary {
            e_ground: prep.ground.e_ground,
            e01: prep.ground.e01,
            degeneracy: prep.ground.degeneracy,
        },
        fit: BathFitDocument::new(&prep.bath, &prep.fit),
        modes: prep.modes.clone(),
        negative_weight_ratio: if pos > 0.0 { neg / pos } else { 0.0 },
    };
    if cfg.output.wants(Format::Csv) {
        out.write_table("spectra.csv", &header, &rows)?;
    }
    if cfg.output.wants(Format::Json) {
        out.write_json("bath_fit.json", &report)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvolveSummary {
    pub model: ModelKind,
    pub n_sites: usize,
    /// Internal step; absent for the master equation, which is propagated exactly.
    pub step: Option<f64>,
    pub t_final: f64,
    pub final_fidelity: f64,
    pub final_energy_error: f64,
    pub max_trace_dev: f64,
    pub max_herm_dev: f64,
    pub max_fidelity_clip: f64,
    pub clipped_rates: Option<usize>,
}

/// Run the chosen dynamics to `solver.t_max` and return the trajectory.
pub fn evolve_trajectory(
    cfg: &RunConfig,
    kind: ModelKind,
) -> Result<(Trajectory, EvolveSummary), CliError> {
    let spec = cfg.ising()?;
    let prep = prepared(cfg)?;
    let schedule = cfg.coupling_schedule()?;
    let grid = uniform_grid(cfg.solver.t_max, cfg.solver.sample_dt);
    let system = build_ising(&spec)?;
    let probes = Probes::new(&system, &prep.ground);
    let (traj, step, clipped) = match kind {
        ModelKind::Single | ModelKind::Full => {
            let modes = if kind == ModelKind::Single {
                &prep.modes[..1]
            } else {
                &prep.modes[..]
            };
            let model = assemble(&spec, modes, C64::new(0.0, 1.0), schedule)?;
            let rho0 = initial_state(&model, cfg.solver.initial_state)?;
            let opts = cfg.solver.options();
            let ev = run_evolution(&model, &rho0, &grid, &probes, &opts)?;
            (ev.trajectory, Some(opts.step_for(&model)?), None)
        }
        ModelKind::Bms => {
            if !schedule.is_constant() {
                return Err(CliError::Config(
                    "schedule.segments: the master equation needs a constant schedule".into(),
                ));
            }
            let q = build_q(&spec)?;
            let failure = Cell::new(None);
            let genr = match cfg.solver.bms_spectrum {
                BmsSpectrum::Fit => {
                    bms_build(&prep.ground.eig, &q, |w| s_fit(&prep.modes, -1.0, w))?
                }
                BmsSpectrum::Exact => bms_build(&prep.ground.eig, &q, |w| {
                    power_spectrum(&prep.bath, w).unwrap_or_else(|e| {
                        failure.set(Some(e));
                        0.0
                    })
                })?,
            };
            if let Some(e) = failure.take() {
                return Err(e.into());
            }
            let rho0 = initial_system_state(&spec.layout(), cfg.solver.initial_state);
            let ev = bms_evolve(&genr, &rho0, &grid, &probes)?;
            (ev.trajectory, None, Some(genr.n_clipped))
        }
    };
    let summary = EvolveSummary {
        model: kind,
        n_sites: spec.n_sites,
        step,
        t_final: *traj.times.last().unwrap_or(&0.0),
        final_fidelity: traj.last("fidelity").unwrap_or(f64::NAN),
        final_energy_error: traj.last("energy_error").unwrap_or(f64::NAN),
        max_trace_dev: traj.max_trace_dev(),
        max_herm_dev: traj.max_herm_dev(),
        max_fidelity_clip: traj.max_fidelity_clip,
        clipped_rates: clipped,
    };
    Ok((traj, summary))
}

pub fn evolve(cfg: &RunConfig, kind: ModelKind, out: &OutDir) -> Result<EvolveSummary, CliError> {
    let (traj, summary) = evolve_trajectory(cfg, kind)?;
    if cfg.output.wants(Format::Csv) {
        out.write_with("trajectory.csv", |w| traj.write_csv(w))?;
    }
    if cfg.output.wants(Format::Json) {
        out.write_json("summary.json", &summary)?;
    }
    Ok(summary)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanSummary {
    pub e01: f64,
    pub t_max: f64,
    pub omega0: Vec<f64>,
    pub final_fidelity: Vec<f64>,
    pub best_omega0: f64,
    pub best_fidelity: f64,
}

/// One full-model run per resonance frequency; returns `(ω0, trajectory)` pairs.
pub fn scan_trajectories(cfg: &RunConfig) -> Result<(f64, Vec<(f64, Trajectory)>), CliError> {
    let spec = cfg.ising()?;
    let e01 = ground_info(&build_ising(&spec)?)?.e01;
    let schedule = cfg.coupling_schedule()?;
    let grid = uniform_grid(cfg.scan.t_max, cfg.solver.sample_dt);
    let runs = cfg
        .scan
        .omega0_values(e01)
        .into_par_iter()
        .map(|w0| -> Result<(f64, Trajectory), CliError> {
            let mut recipe = cfg.bath_recipe();
            recipe.omega0 = Omega0::Absolute(w0);
            let prep = prepare_bath(
                &spec,
                &recipe,
                cfg.modes.n_fit_terms,
                cfg.modes.fit_window,
                &cfg.modes.truncations(),
            )?;
            let model = assemble(&spec, &prep.modes, C64::new(0.0, 1.0), schedule.clone())?;
            let rho0 = initial_state(&model, cfg.solver.initial_state)?;
            let probes = Probes::new(&model.system, &prep.ground);
            let ev = run_evolution(&model, &rho0, &grid, &probes, &cfg.solver.options())?;
            Ok((w0, ev.trajectory))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((e01, runs))
}

pub fn scan(cfg: &RunConfig, out: &OutDir) -> Result<ScanSummary, CliError> {
    let (e01, runs) = scan_trajectories(cfg)?;
    let mut grid_rows = Vec::new();
    let mut final_rows = Vec::new();
    for (w0, traj) in &runs {
        for (t, f) in traj.times.iter().zip(traj.fidelity()) {
            grid_rows.push(vec![*w0, *t, *f]);
        }
        final_rows.push(vec![*w0, traj.last("fidelity").unwrap_or(f64::NAN)]);
    }
    let best = final_rows
        .iter()
        .max_by(|a, b| a[1].total_cmp(&b[1]))
        .cloned()
        .unwrap_or(vec![f64::NAN; 2]);
    let summary = ScanSummary {
        e01,
        t_max: cfg.scan.t_max,
        omega0: final_rows.iter().map(|r| r[0]).collect(),
        final_fidelity: final_rows.iter().map(|r| r[1]).collect(),
        best_omega0: best[0],
        best_fidelity: best[1],
    };
    if cfg.output.wants(Format::Csv) {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        out.write_table(
            "scan.csv",
            &names(&["omega0", "time", "fidelity"]),
            &grid_rows,
        )?;
        out.write_table(
            "scan_final.csv",
            &names(&["omega0", "fidelity"]),
            &final_rows,
        )?;
    }
    if cfg.output.wants(Format::Json) {
        out.write_json("scan.json", &summary)?;
    }
    Ok(summary)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuationReport {
    pub poly_order: usize,
    pub coeffs: Vec<f64>,
    pub rms_residual: f64,
    pub continued_real: f64,
    pub imag_defect: f64,
    /// The fit passes through every sample; the continuation is then an
    /// interpolant and likely overfit.
    pub interpolating: bool,
    pub direct_reference: Option<f64>,
    pub deviation: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtrapolationOutcome {
    pub samples: Vec<(f64, f64)>,
    pub continuation: ContinuationReport,
    pub error_vs_nm: Option<Vec<SizeOrderRow>>,
}

fn observation(cfg: &RunConfig) -> ObservationTime {
    match cfg.sweep.t_obs {
        Some(t) => ObservationTime::Fixed(t),
        None => ObservationTime::SteadyState(cfg.solver.steady()),
    }
}

pub fn extrapolate(cfg: &RunConfig, out: &OutDir) -> Result<ExtrapolationOutcome, CliError> {
    let spec = cfg.ising()?;
    let prep = prepared(cfg)?;
    let recipe = RunRecipe {
        spec,
        modes: prep.modes.clone(),
        schedule: cfg.coupling_schedule()?,
        solver: cfg.solver.options(),
        observe: observation(cfg),
        initial: cfg.solver.initial_state,
    };
    let plan = SweepPlan::new(cfg.sweep.lambda_bar_values(), cfg.sweep.poly_order)?;
    let samples = energy_sweep(&recipe, &prep.ground, &plan)?;
    let fit = fit_poly(&samples, plan.poly_order)?;
    let direct = match cfg.sweep.direct_reference {
        true => Some(system_energy(&recipe, &prep.ground, C64::new(0.0, 1.0))?),
        false => None,
    };
    if fit.interpolating {
        eprintln!(
            "warning: order {} interpolates all {} samples; the continued value is likely overfit",
            plan.poly_order,
            samples.len()
        );
    }
    let continuation = ContinuationReport {
        poly_order: plan.poly_order,
        coeffs: fit.coeffs.clone(),
        rms_residual: fit.rms_residual,
        continued_real: fit.continued_value.re,
        imag_defect: fit.imag_defect,
        interpolating: fit.interpolating,
        direct_reference: direct,
        deviation: direct.map(|d| (fit.continued_value.re - d).abs()),
    };
    let table = match &cfg.sweep.error_vs_nm {
        Some(e) => {
            let study = SizeStudy {
                g: cfg.system.g,
                j: cfg.system.j,
                q_coeffs: cfg.system.q_coeffs,
                bath: cfg.bath_recipe(),
                n_fit_terms: cfg.modes.n_fit_terms,
                window: cfg.modes.fit_window,
                truncations: cfg.modes.truncations(),
                solver: cfg.solver.options(),
                observe: observation(cfg),
                initial: cfg.solver.initial_state,
                lambda_bar_values: cfg.sweep.lambda_bar_values(),
            };
            Some(error_vs_nm(&e.sizes, &e.orders, &study)?)
        }
        None => None,
    };
    let outcome = ExtrapolationOutcome {
        samples: samples.iter().map(|s| (s.lambda_bar, s.value)).collect(),
        continuation,
        error_vs_nm: table,
    };
    if cfg.output.wants(Format::Csv) {
        let rows: Vec<Vec<f64>> = outcome.samples.iter().map(|(x, y)| vec![*x, *y]).collect();
        out.write_table(
            "sweep.csv",
            &["lambda_bar".into(), "observable".into()],
            &rows,
        )?;
        if let Some(t) = &outcome.error_vs_nm {
            out.write_table("error_vs_nm.csv", &size_order_header(), &size_order_rows(t))?;
        }
    }
    if cfg.output.wants(Format::Json) {
        out.write_json("continuation.json", &outcome.continuation)?;
        if let Some(t) = &outcome.error_vs_nm {
            out.write_json("error_vs_nm.json", t)?;
        }
    }
    Ok(outcome)
}

pub fn size_order_header() -> Vec<String> {
    [
        "n_sites",
        "order",
        "continued",
        "direct",
        "abs_deviation",
        "rel_deviation",
        "rms_residual",
        "imag_defect",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

pub fn size_order_rows(rows: &[SizeOrderRow]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            vec![
                r.n_sites as f64,
                r.order as f64,
                r.continued,
                r.direct,
                r.abs_deviation,
                r.rel_deviation,
                r.rms_residual,
                r.imag_defect,
            ]
        })
        .collect()
}
