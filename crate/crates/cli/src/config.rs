//! JSON run configuration. Every section is optional and defaults to the
//! N = 5, J = 5g cooling setup; unknown keys are rejected.

use std::path::{Path, PathBuf};

use pseudocool_core::bathlib::{default_truncations, FitWindow};
use pseudocool_core::dynamics::{InitialState, Integrator, SolverOptions, SteadyOptions};
use pseudocool_core::modelkit::{
    BathRecipe, CouplingSchedule, IsingSpec, Omega0, Width, DEFAULT_Q_COEFFS,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub bath: BathConfig,
    pub modes: ModesConfig,
    pub solver: SolverConfig,
    pub schedule: ScheduleConfig,
    pub sweep: SweepConfig,
    pub scan: ScanConfig,
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub n: usize,
    pub g: f64,
    pub j: f64,
    /// Coefficients of `σx, σy, σz` on the last site in the coupling operator.
    pub q_coeffs: [f64; 3],
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n: 5,
            g: 1.0,
            j: 5.0,
            q_coeffs: DEFAULT_Q_COEFFS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BathConfig {
    pub omega0: Omega0,
    pub gamma: Width,
    /// `λ = lambda_prefactor·g·√Ω`.
    pub lambda_prefactor: f64,
    /// Inverse temperature; `null` is zero temperature.
    pub beta: Option<f64>,
}

impl Default for BathConfig {
    fn default() -> Self {
        Self {
            omega0: Omega0::E01Multiple(1.2),
            gamma: Width::Absolute(3.8),
            lambda_prefactor: 1.15,
            beta: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModesConfig {
    pub n_fit_terms: usize,
    /// Fock truncation per mode, resonant mode first. Defaults to 3, 2, 2, ...
    pub truncations: Option<Vec<usize>>,
    pub fit_window: FitWindow,
}

impl Default for ModesConfig {
    fn default() -> Self {
        Self {
            n_fit_terms: 2,
            truncations: None,
            fit_window: FitWindow::default(),
        }
    }
}

impl ModesConfig {
    pub fn truncations(&self) -> Vec<usize> {
        self.truncations
            .clone()
            .unwrap_or_else(|| default_truncations(self.n_fit_terms))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BmsSpectrum {
    /// Sum of the ancilla spectra at `λ̄ = i`.
    #[default]
    Fit,
    /// The zero-temperature target spectrum.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Internal step; `null` picks one from the model.
    pub h: Option<f64>,
    pub integrator: Integrator,
    pub t_max: f64,
    pub sample_dt: f64,
    pub steady_tol: f64,
    pub steady_window: f64,
    pub t_cap: f64,
    pub initial_state: InitialState,
    pub bms_spectrum: BmsSpectrum,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let steady = SteadyOptions::default();
        Self {
            h: None,
            integrator: Integrator::default(),
            t_max: 200.0,
            sample_dt: 1.0,
            steady_tol: steady.tol,
            steady_window: steady.window,
            t_cap: steady.t_cap,
            initial_state: InitialState::default(),
            bms_spectrum: BmsSpectrum::default(),
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            h: self.h,
            integrator: self.integrator,
        }
    }

    pub fn steady(&self) -> SteadyOptions {
        SteadyOptions {
            tol: self.steady_tol,
            t_cap: self.t_cap,
            sample_dt: self.sample_dt,
            window: self.steady_window,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// `(start time, coupling scale)` pairs; the first starts at 0.
    pub segments: Vec<(f64, f64)>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            segments: vec![(0.0, 1.0)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Defaults to 9 equally spaced values in `[0, 1]`.
    pub lambda_bar_values: Option<Vec<f64>>,
    pub poly_order: usize,
    /// Fixed observation time; `null` waits for the steady state.
    pub t_obs: Option<f64>,
    pub direct_reference: bool,
    pub error_vs_nm: Option<SizeOrderConfig>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambda_bar_values: None,
            poly_order: 6,
            t_obs: None,
            direct_reference: true,
            error_vs_nm: None,
        }
    }
}

impl SweepConfig {
    pub fn lambda_bar_values(&self) -> Vec<f64> {
        self.lambda_bar_values
            .clone()
            .unwrap_or_else(|| (0..9).map(|k| k as f64 / 8.0).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeOrderConfig {
    pub sizes: Vec<usize>,
    pub orders: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Omega0Grid {
    /// `points` values evenly spaced in `[start, stop]·E01`.
    E01Multiples {
        start: f64,
        stop: f64,
        points: usize,
    },
    Absolute(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub omega0_grid: Omega0Grid,
    /// Adds `ω0 = E01` to the grid when missing.
    pub include_e01: bool,
    pub t_max: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            omega0_grid: Omega0Grid::E01Multiples {
                start: 0.5,
                stop: 2.0,
                points: 21,
            },
            include_e01: false,
            t_max: 50.0,
        }
    }
}

impl ScanConfig {
    /// Absolute resonance frequencies, ascending.
    pub fn omega0_values(&self, e01: f64) -> Vec<f64> {
        let mut values = match &self.omega0_grid {
            Omega0Grid::E01Multiples {
                start,
                stop,
                points,
            } => match points {
                1 => vec![start * e01],
                _ => (0..*points)
                    .map(|k| (start + (stop - start) * k as f64 / (*points - 1) as f64) * e01)
                    .collect(),
            },
            Omega0Grid::Absolute(v) => v.clone(),
        };
        if self.include_e01 && !values.iter().any(|w| (w - e01).abs() <= 1e-12 * e01) {
            values.push(e01);
        }
        values.sort_by(f64::total_cmp);
        values
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

fn invalid(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

fn positive(path: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(
            path,
            format!("must be positive and finite, got {x}"),
        ))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let s = &self.system;
        if s.n < 2 {
            return Err(invalid(
                "system.n",
                format!("need at least 2 sites, got {}", s.n),
            ));
        }
        positive("system.g", s.g)?;
        if !s.j.is_finite() {
            return Err(invalid("system.j", "must be finite"));
        }
        if s.q_coeffs.iter().all(|c| *c == 0.0) || s.q_coeffs.iter().any(|c| !c.is_finite()) {
            return Err(invalid(
                "system.q_coeffs",
                "must be finite and not all zero",
            ));
        }

        let b = &self.bath;
        match b.omega0 {
            Omega0::Absolute(w) => positive("bath.omega0.absolute", w)?,
            Omega0::E01Multiple(k) => positive("bath.omega0.e01_multiple", k)?,
        }
        match b.gamma {
            Width::Absolute(w) => positive("bath.gamma.absolute", w)?,
            Width::Omega0Multiple(k) => positive("bath.gamma.omega0_multiple", k)?,
        }
        positive("bath.lambda_prefactor", b.lambda_prefactor)?;
        if let Some(beta) = b.beta {
            positive("bath.beta", beta)?;
        }

        let m = &self.modes;
        if m.n_fit_terms == 0 {
            return Err(invalid("modes.n_fit_terms", "must be at least 1"));
        }
        let tr = m.truncations();
        if tr.len() != m.n_fit_terms + 1 {
            return Err(invalid(
                "modes.truncations",
                format!(
                    "expected {} entries (resonant mode + fitted modes), got {}",
                    m.n_fit_terms + 1,
                    tr.len()
                ),
            ));
        }
        if tr.iter().any(|&d| d < 2) {
            return Err(invalid(
                "modes.truncations",
                "every truncation must be >= 2",
            ));
        }
        let w = &m.fit_window;
        if !(w.t_min > 0.0 && w.t_max > w.t_min && w.n_points >= 2) {
            return Err(invalid(
                "modes.fit_window",
                "need 0 < t_min < t_max and n_points >= 2",
            ));
        }

        let v = &self.solver;
        if let Some(h) = v.h {
            positive("solver.h", h)?;
        }
        positive("solver.t_max", v.t_max)?;
        positive("solver.sample_dt", v.sample_dt)?;
        positive("solver.steady_tol", v.steady_tol)?;
        positive("solver.steady_window", v.steady_window)?;
        positive("solver.t_cap", v.t_cap)?;

        self.coupling_schedule()?;

        let sw = &self.sweep;
        let lb = sw.lambda_bar_values();
        if lb.iter().any(|x| !x.is_finite()) {
            return Err(invalid("sweep.lambda_bar_values", "must be finite"));
        }
        if lb.len() < sw.poly_order + 1 {
            return Err(invalid(
                "sweep.lambda_bar_values",
                format!(
                    "order {} needs at least {} points, got {}",
                    sw.poly_order,
                    sw.poly_order + 1,
                    lb.len()
                ),
            ));
        }
        if let Some(t) = sw.t_obs {
            positive("sweep.t_obs", t)?;
        }
        if let Some(e) = &sw.error_vs_nm {
            if e.sizes.is_empty() || e.sizes.iter().any(|&n| n < 2) {
                return Err(invalid(
                    "sweep.error_vs_nm.sizes",
                    "need one or more sizes, each >= 2",
                ));
            }
            if e.orders.is_empty() || e.orders.iter().any(|&o| o + 1 > lb.len()) {
                return Err(invalid(
                    "sweep.error_vs_nm.orders",
                    "each order needs order + 1 sample points",
                ));
            }
        }

        let sc = &self.scan;
        match &sc.omega0_grid {
            Omega0Grid::E01Multiples {
                start,
                stop,
                points,
            } => {
                positive("scan.omega0_grid.e01_multiples.start", *start)?;
                positive("scan.omega0_grid.e01_multiples.stop", *stop)?;
                if *points == 0 {
                    return Err(invalid(
                        "scan.omega0_grid.e01_multiples.points",
                        "must be at least 1",
                    ));
                }
            }
            Omega0Grid::Absolute(v) => {
                if v.is_empty() {
                    return Err(invalid("scan.omega0_grid.absolute", "must not be empty"));
                }
                for (k, w) in v.iter().enumerate() {
                    positive(&format!("scan.omega0_grid.absolute[{k}]"), *w)?;
                }
            }
        }
        positive("scan.t_max", sc.t_max)?;

        if self.output.formats.is_empty() {
            return Err(invalid("output.formats", "must name at least one format"));
        }
        Ok(())
    }

    pub fn ising(&self) -> Result<IsingSpec, CliError> {
        let s = &self.system;
        IsingSpec::with_q(s.n, s.g, s.j, s.q_coeffs).map_err(|e| invalid("system", e))
    }

    pub fn bath_recipe(&self) -> BathRecipe {
        let b = &self.bath;
        BathRecipe {
            omega0: b.omega0,
            gamma: b.gamma,
            lambda_prefactor: b.lambda_prefactor,
            beta: b.beta.unwrap_or(f64::INFINITY),
        }
    }

    pub fn coupling_schedule(&self) -> Result<CouplingSchedule, CliError> {
        CouplingSchedule::new(self.schedule.segments.clone())
            .map_err(|e| invalid("schedule.segments", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default_setup() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.modes.truncations(), vec![3, 2, 2]);
        assert_eq!(cfg.sweep.lambda_bar_values().len(), 9);
    }

    #[test]
    fn default_round_trips_through_json() {
        let text = serde_json::to_string(&RunConfig::default()).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn scan_grid_spans_the_requested_multiples() {
        let scan = ScanConfig::default();
        let w = scan.omega0_values(2.0);
        assert_eq!(w.len(), 21);
        assert_eq!(w[0], 1.0);
        assert!((w[20] - 4.0).abs() < 1e-12);
        let with_e01 = ScanConfig {
            include_e01: true,
            ..scan
        };
        let w = with_e01.omega0_values(2.0);
        assert_eq!(w.len(), 22);
        assert!(w.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn grid_already_containing_e01_is_not_extended() {
        let scan = ScanConfig {
            omega0_grid: Omega0Grid::Absolute(vec![3.0, 1.0]),
            include_e01: true,
            t_max: 1.0,
        };
        assert_eq!(scan.omega0_values(1.0), vec![1.0, 3.0]);
    }

    #[test]
    fn negative_step_is_rejected() {
        let err = RunConfig::from_json(r#"{"solver": {"h": -0.1}}"#).unwrap_err();
        assert!(err.to_string().contains("solver.h"), "{err}");
    }
}
