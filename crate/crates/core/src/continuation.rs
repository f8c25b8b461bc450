//! Ensembles of physical runs at real `λ̄`, polynomial fits and their
//! continuation to `λ̄ = i`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bathlib::{FitWindow, PseudomodeParams};
use crate::dynamics::{
    initial_state, steady_state, InitialState, Probes, SolverOptions, SteadyOptions,
};
use crate::modelkit::GroundInfo;
use crate::modelkit::{assemble, prepare_bath, BathRecipe, CouplingSchedule, IsingSpec};
use crate::tensorops::{trace_of_product, C64, I};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub lambda_bar_values: Vec<f64>,
    pub poly_order: usize,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self::equally_spaced(9, 6).expect("default plan is valid")
    }
}

impl SweepPlan {
    pub fn new(lambda_bar_values: Vec<f64>, poly_order: usize) -> Result<Self> {
        if lambda_bar_values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Argument(
                "lambda_bar values must be finite reals".into(),
            ));
        }
        let distinct = distinct_count(&lambda_bar_values);
        if distinct < poly_order + 1 {
            return Err(Error::Argument(format!(
                "order {poly_order} needs at least {} distinct samples, got {distinct}",
                poly_order + 1
            )));
        }
        Ok(Self {
            lambda_bar_values,
            poly_order,
        })
    }

    /// `n` points spread evenly over `[0, 1]`.
    pub fn equally_spaced(n: usize, poly_order: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Argument("need at least two sample points".into()));
        }
        Self::new(
            (0..n).map(|k| k as f64 / (n - 1) as f64).collect(),
            poly_order,
        )
    }
}

fn distinct_count(xs: &[f64]) -> usize {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub lambda_bar: f64,
    pub value: f64,
}

/// Evaluate `observable` at every `λ̄` of the plan, in parallel; results keep
/// the plan order. The first failing point aborts the sweep.
pub fn run_sweep<F>(plan: &SweepPlan, observable: F) -> Result<Vec<Sample>>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    plan.lambda_bar_values
        .par_iter()
        .map(|&lb| match observable(lb) {
            Ok(value) => Ok(Sample {
                lambda_bar: lb,
                value,
            }),
            Err(e) => Err(Error::Sweep {
                lambda_bar: lb,
                reason: e.to_string(),
            }),
        })
        .collect()
}

/// Least-squares polynomial and its value at `λ̄ = i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyModel {
    /// `c_0 … c_M`, lowest power first.
    pub coeffs: Vec<f64>,
    pub rms_residual: f64,
    pub continued_value: C64,
    pub imag_defect: f64,
    /// The fit has as many coefficients as distinct samples.
    pub interpolating: bool,
}

pub fn eval_poly(coeffs: &[f64], z: C64) -> C64 {
    coeffs
        .iter()
        .rev()
        .fold(C64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

/// `p(i)` from the alternating sums of even and odd coefficients.
fn value_at_i(coeffs: &[f64]) -> C64 {
    let mut v = C64::new(0.0, 0.0);
    for (k, &c) in coeffs.iter().enumerate() {
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            v.re += sign * c;
        } else {
            v.im += sign * c;
        }
    }
    v
}

/// Fit `Σ c_k x^k` (`k ≤ order`) by a Gram-Schmidt QR of the Vandermonde matrix.
pub fn fit_poly(samples: &[Sample], order: usize) -> Result<PolyModel> {
    let n = samples.len();
    let cols = order + 1;
    let distinct = distinct_count(&samples.iter().map(|s| s.lambda_bar).collect::<Vec<_>>());
    if distinct < cols {
        return Err(Error::Fit(format!(
            "order {order} needs {cols} distinct abscissae, got {distinct}"
        )));
    }
    let mut q: Vec<Vec<f64>> = (0..cols)
        .map(|k| {
            samples
                .iter()
                .map(|s| s.lambda_bar.powi(k as i32))
                .collect()
        })
        .collect();
    let mut r = vec![vec![0.0; cols]; cols];
    for k in 0..cols {
        let original = norm(&q[k]);
        // Two passes of modified Gram-Schmidt keep Q orthogonal to rounding.
        for _ in 0..2 {
            for j in 0..k {
                let proj = dot(&q[j], &q[k]);
                r[j][k] += proj;
                let qj = q[j].clone();
                q[k].iter_mut().zip(&qj).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let nk = norm(&q[k]);
        if !(nk > 1e-13 * original.max(1.0)) {
            return Err(Error::Fit(format!(
                "Vandermonde matrix is rank deficient at column {k}"
            )));
        }
        r[k][k] = nk;
        q[k].iter_mut().for_each(|x| *x /= nk);
    }
    let y: Vec<f64> = samples.iter().map(|s| s.value).collect();
    let qty: Vec<f64> = q.iter().map(|col| dot(col, &y)).collect();
    let mut coeffs = vec![0.0; cols];
    for k in (0..cols).rev() {
        let s: f64 = (k + 1..cols).map(|j| r[k][j] * coeffs[j]).sum();
        coeffs[k] = (qty[k] - s) / r[k][k];
    }
    let rms_residual = (samples
        .iter()
        .map(|s| (eval_poly(&coeffs, C64::new(s.lambda_bar, 0.0)).re - s.value).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let continued_value = value_at_i(&coeffs);
    Ok(PolyModel {
        coeffs,
        rms_residual,
        continued_value,
        imag_defect: continued_value.im.abs(),
        interpolating: distinct == cols,
    })
}

/// Real part of `p(i)` and `|Im p(i)|`.
pub fn continue_to_imag(model: &PolyModel) -> (f64, f64) {
    (model.continued_value.re, model.imag_defect)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// When the observable is read off a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationTime {
    /// Steady state reached under the given drift criterion.
    SteadyState(SteadyOptions),
    /// Fixed time in units of `1/g`.
    Fixed(f64),
}

impl Default for ObservationTime {
    fn default() -> Self {
        ObservationTime::SteadyState(SteadyOptions::default())
    }
}

/// Shared inputs of the runs making up a sweep.
#[derive(Clone, Debug)]
pub struct RunRecipe {
    pub spec: IsingSpec,
    pub modes: Vec<PseudomodeParams>,
    pub schedule: CouplingSchedule,
    pub solver: SolverOptions,
    pub observe: ObservationTime,
    pub initial: InitialState,
}

/// Physical-run tolerances for sweep samples.
const PHYSICAL_HERM_TOL: f64 = 1e-8;
const TRACE_TOL: f64 = 1e-8;

/// `⟨H_s⟩` of one run at coupling `λ̄` (which may be complex for the direct
/// reference run).
pub fn system_energy(recipe: &RunRecipe, ground: &GroundInfo, lambda_bar: C64) -> Result<f64> {
    let model = assemble(
        &recipe.spec,
        &recipe.modes,
        lambda_bar,
        recipe.schedule.clone(),
    )?;
    let rho0 = initial_state(&model, recipe.initial)?;
    let probes = Probes::new(&model.system, ground);
    let (state, traj) = match recipe.observe {
        ObservationTime::SteadyState(opts) => {
            let ss = steady_state(&model, &rho0, &probes, &recipe.solver, &opts)?;
            (ss.state, ss.trajectory)
        }
        ObservationTime::Fixed(t) => {
            let ev = crate::dynamics::evolve(&model, &rho0, &[0.0, t], &probes, &recipe.solver)?;
            (ev.final_state, ev.trajectory)
        }
    };
    if traj.max_trace_dev() > TRACE_TOL {
        return Err(Error::Integration(format!(
            "trace deviation {:.3e} exceeds {TRACE_TOL:e}",
            traj.max_trace_dev()
        )));
    }
    if model.is_physical() && state.hermiticity_defect() > PHYSICAL_HERM_TOL {
        return Err(Error::Hermiticity(format!(
            "physical run state has Hermiticity defect {:.3e}",
            state.hermiticity_defect()
        )));
    }
    let rho_s = crate::tensorops::trace_out_trailing(state.data(), model.mode_dim());
    Ok(trace_of_product(model.system.data(), &rho_s).re)
}

/// Sweep over real `λ̄` of the steady (or fixed-time) system energy.
pub fn energy_sweep(
    recipe: &RunRecipe,
    ground: &GroundInfo,
    plan: &SweepPlan,
) -> Result<Vec<Sample>> {
    run_sweep(plan, |lb| system_energy(recipe, ground, C64::new(lb, 0.0)))
}

/// Sweep, polynomial fit and the direct `λ̄ = i` reference.
#[derive(Clone, Debug)]
pub struct Extrapolation {
    pub samples: Vec<Sample>,
    pub fit: PolyModel,
    pub direct: f64,
}

impl Extrapolation {
    pub fn deviation(&self) -> f64 {
        (self.fit.continued_value.re - self.direct).abs()
    }
}

pub fn extrapolate(
    recipe: &RunRecipe,
    ground: &GroundInfo,
    plan: &SweepPlan,
) -> Result<Extrapolation> {
    let samples = energy_sweep(recipe, ground, plan)?;
    let fit = fit_poly(&samples, plan.poly_order)?;
    let direct = system_energy(recipe, ground, I)?;
    Ok(Extrapolation {
        samples,
        fit,
        direct,
    })
}

/// Bath and mode recipe shared across system sizes.
#[derive(Clone, Debug)]
pub struct SizeStudy {
    pub g: f64,
    pub j: f64,
    pub q_coeffs: [f64; 3],
    pub bath: BathRecipe,
    pub n_fit_terms: usize,
    pub window: FitWindow,
    pub truncations: Vec<usize>,
    pub solver: SolverOptions,
    pub observe: ObservationTime,
    pub initial: InitialState,
    pub lambda_bar_values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SizeOrderRow {
    pub n_sites: usize,
    pub order: usize,
    pub continued: f64,
    pub direct: f64,
    pub abs_deviation: f64,
    /// Deviation relative to `|⟨H_s⟩|` of the direct run.
    pub rel_deviation: f64,
    pub rms_residual: f64,
    pub imag_defect: f64,
}

/// `|δ⟨H_s⟩|` for every combination of system size and polynomial order.
/// Each size needs one sweep and one direct run; orders reuse the samples.
pub fn error_vs_nm(
    sizes: &[usize],
    orders: &[usize],
    study: &SizeStudy,
) -> Result<Vec<SizeOrderRow>> {
    let max_order = orders.iter().copied().max().unwrap_or(0);
    let plan = SweepPlan::new(study.lambda_bar_values.clone(), max_order)?;
    let mut rows = Vec::new();
    for &n in sizes {
        let spec = IsingSpec::with_q(n, study.g, study.j, study.q_coeffs)?;
        let prepared = prepare_bath(
            &spec,
            &study.bath,
            study.n_fit_terms,
            study.window,
            &study.truncations,
        )?;
        let recipe = RunRecipe {
            spec,
            modes: prepared.modes.clone(),
            schedule: CouplingSchedule::default(),
            solver: study.solver,
            observe: study.observe,
            initial: study.initial,
        };
        let samples = energy_sweep(&recipe, &prepared.ground, &plan)?;
        let direct = system_energy(&recipe, &prepared.ground, I)?;
        for &m in orders {
            let fit = fit_poly(&samples, m)?;
            let continued = fit.continued_value.re;
            let abs_deviation = (continued - direct).abs();
            rows.push(SizeOrderRow {
                n_sites: n,
                order: m,
                continued,
                direct,
                abs_deviation,
                rel_deviation: abs_deviation / direct.abs(),
                rms_residual: fit.rms_residual,
                imag_defect: fit.imag_defect,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn samples_of(f: impl Fn(f64) -> f64, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|k| {
                let x = k as f64 / (n - 1) as f64;
                Sample {
                    lambda_bar: x,
                    value: f(x),
                }
            })
            .collect()
    }

    #[test]
    fn recovers_square() {
        let m = fit_poly(&samples_of(|x| x * x, 9), 6).unwrap();
        for (k, c) in m.coeffs.iter().enumerate() {
            assert_abs_diff_eq!(*c, if k == 2 { 1.0 } else { 0.0 }, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(m.continued_value.re, -1.0, epsilon = 1e-10);
        assert!(m.imag_defect < 1e-10);
        assert!(!m.interpolating);
    }

    #[test]
    fn quartic_continuation() {
        let m = fit_poly(&samples_of(|x| 1.0 + x.powi(4), 9), 6).unwrap();
        assert_abs_diff_eq!(continue_to_imag(&m).0, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn linear_has_unit_defect() {
        let m = fit_poly(&samples_of(|x| x, 9), 6).unwrap();
        let (re, defect) = continue_to_imag(&m);
        assert_abs_diff_eq!(re, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(defect, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn interpolation_is_flagged() {
        let m = fit_poly(&samples_of(|x| (3.0 * x).sin(), 9), 8).unwrap();
        assert!(m.interpolating);
        assert!(m.rms_residual < 1e-10);
    }

    #[test]
    fn rank_deficiency_is_an_error() {
        let s = vec![
            Sample {
                lambda_bar: 0.5,
                value: 1.0
            };
            9
        ];
        assert!(matches!(fit_poly(&s, 2), Err(Error::Fit(_))));
        assert!(SweepPlan::new(vec![0.0, 0.0, 1.0], 2).is_err());
    }

    #[test]
    fn value_at_i_matches_horner() {
        let c = [0.3, -1.2, 0.7, 2.5, -0.4, 0.9, 1.1];
        let a = value_at_i(&c);
        let b = eval_poly(&c, I);
        assert!((a - b).norm() < 1e-14);
    }

    #[test]
    fn sweep_keeps_order_and_reports_failures() {
        let plan = SweepPlan::default();
        let out = run_sweep(&plan, |x| Ok(x * 2.0)).unwrap();
        assert_eq!(out.len(), 9);
        assert!(out.iter().all(|s| s.value == 2.0 * s.lambda_bar));
        let err = run_sweep(&plan, |x| {
            if x > 0.6 {
                Err(Error::Numeric("boom".into()))
            } else {
                Ok(x)
            }
        });
        match err {
            Err(Error::Sweep { lambda_bar, .. }) => assert!(lambda_bar > 0.6),
            other => panic!("unexpected {other:?}"),
        }
    }
}
