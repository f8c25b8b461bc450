//! Time evolution of the system + ancilla model and of the secular
//! Bloch-Redfield reference, with the observables used to judge cooling.

mod bms;
mod frame;
mod generator;
mod reference;

use std::io::{self, Write};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::modelkit::{CompositeModel, GroundInfo};
use crate::tensorops::{hermiticity_defect, trace_of_product, Op, SpaceLayout, C64, ZERO};
use crate::{Error, Result};

pub use bms::{bms_build, bms_evolve, bms_stationary, BmsGenerator, Transition};
pub use frame::FramePropagator;
pub use generator::{generator_apply, liouvillian_matrix};
pub use reference::{
    gibbs_reference, gibbs_state, hybridized_reference, restricted_gibbs_state, trace_distance,
    GibbsReference,
};

/// Largest tolerated `|Tr ρ − 1|` before a run is declared unstable.
pub const TRACE_GATE: f64 = 1e-6;

/// Hermiticity defect above which a reduced state is symmetrized before
/// computing a fidelity.
pub const SYMMETRIZE_ABOVE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Exponential RK4 with the free (system + damped mode) generator
    /// treated exactly; stationary states do not depend on the step.
    #[default]
    Exponential,
    /// Classical RK4 on the literal generator.
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    /// Maximum internal step; `None` picks a default from the model.
    pub h: Option<f64>,
    pub integrator: Integrator,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            h: None,
            integrator: Integrator::Exponential,
        }
    }
}

impl SolverOptions {
    pub fn with_step(h: f64) -> Self {
        Self {
            h: Some(h),
            ..Self::default()
        }
    }

    /// Step used for `model`.
    pub fn step_for(&self, model: &CompositeModel) -> Result<f64> {
        if let Some(h) = self.h {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Argument(format!(
                    "step size must be positive, got {h}"
                )));
            }
            return Ok(h);
        }
        Ok(match self.integrator {
            Integrator::Exponential => {
                let v = row_sum_norm(model.h_int.data()) * model_max_scale(model);
                0.1f64.min(1.0 / v.max(1e-12))
            }
            Integrator::Rk4 => {
                let h = model.h_at(0.0);
                let bound = row_sum_norm(h.data())
                    + model.collapses.iter().map(|(r, _)| r).sum::<f64>()
                        * model.modes.len() as f64;
                0.05f64.min(0.2 / bound.max(1e-12))
            }
        })
    }
}

fn model_max_scale(model: &CompositeModel) -> f64 {
    model
        .schedule
        .segments()
        .iter()
        .map(|s| s.1)
        .fold(0.0, f64::max)
}

fn row_sum_norm(a: &Array2<C64>) -> f64 {
    a.rows()
        .into_iter()
        .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// `I / dim`.
    #[default]
    MaximallyMixed,
    /// Every spin in the `σ_z = +1` state.
    AllUp,
    /// Haar-random pure state from a seeded generator.
    RandomPure { seed: u64 },
}

pub fn initial_system_state(layout: &SpaceLayout, kind: InitialState) -> Op {
    let d = layout.total_dim();
    match kind {
        InitialState::MaximallyMixed => Op::identity(layout).scale(C64::new(1.0 / d as f64, 0.0)),
        InitialState::AllUp => {
            let mut psi = vec![ZERO; d];
            psi[0] = C64::new(1.0, 0.0);
            Op::projector(layout, &psi).expect("basis vector has the layout dimension")
        }
        InitialState::RandomPure { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut psi: Vec<C64> = (0..d)
                .map(|_| {
                    C64::new(
                        StandardNormal.sample(&mut rng),
                        StandardNormal.sample(&mut rng),
                    )
                })
                .collect();
            let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            psi.iter_mut().for_each(|z| *z /= norm);
            Op::projector(layout, &psi).expect("random vector has the layout dimension")
        }
    }
}

/// Ground-subspace fidelity with its clipping diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fidelity {
    pub value: f64,
    /// Distance between the raw `Re Tr(Pρ)` and the clipped value.
    pub clip: f64,
    pub symmetrized: bool,
}

pub fn fidelity_subspace(rho_s: &Op, ground: &GroundInfo) -> Result<Fidelity> {
    if rho_s.layout() != ground.projector.layout() {
        return Err(Error::Dimension(
            "state and ground projector live on different spaces".into(),
        ));
    }
    let symmetrized = rho_s.hermiticity_defect() > SYMMETRIZE_ABOVE;
    let raw = if symmetrized {
        trace_of_product(ground.projector.data(), rho_s.hermitian_part().data()).re
    } else {
        trace_of_product(ground.projector.data(), rho_s.data()).re
    };
    let value = raw.clamp(0.0, 1.0);
    Ok(Fidelity {
        value,
        clip: (raw - value).abs(),
        symmetrized,
    })
}

/// System observables recorded along a trajectory. Energy error and ground
/// fidelity are always present; extra named system operators may be added.
#[derive(Clone, Debug)]
pub struct Probes {
    pub ground: GroundInfo,
    pub system: Op,
    pub extras: Vec<(String, Op)>,
}

impl Probes {
    pub fn new(system: &Op, ground: &GroundInfo) -> Self {
        Self {
            ground: ground.clone(),
            system: system.clone(),
            extras: Vec::new(),
        }
    }

    pub fn with(mut self, name: impl Into<String>, op: Op) -> Self {
        self.extras.push((name.into(), op));
        self
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["energy_error".to_string(), "fidelity".to_string()];
        names.extend(self.extras.iter().map(|(n, _)| n.clone()));
        names
    }

    /// Observable values, the fidelity clip and the Hermiticity defect of `rho_s`.
    fn measure(&self, rho_s: &Op) -> Result<(Vec<f64>, f64, f64)> {
        let energy = trace_of_product(self.system.data(), rho_s.data()).re;
        let fid = fidelity_subspace(rho_s, &self.ground)?;
        let mut values = vec![energy - self.ground.e_ground, fid.value];
        for (_, op) in &self.extras {
            values.push(trace_of_product(op.data(), rho_s.data()).re);
        }
        Ok((values, fid.clip, hermiticity_defect(rho_s.data())))
    }
}

/// Sampled observables with per-sample diagnostics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `values[k]` holds the series named `names[k]`.
    pub values: Vec<Vec<f64>>,
    pub trace_dev: Vec<f64>,
    pub herm_dev: Vec<f64>,
    pub max_fidelity_clip: f64,
}

impl Trajectory {
    pub fn new(names: Vec<String>) -> Self {
        let values = vec![Vec::new(); names.len()];
        Self {
            names,
            values,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.values[k].as_slice())
    }

    pub fn energy_error(&self) -> &[f64] {
        self.series("energy_error")
            .expect("energy_error is always recorded")
    }

    pub fn fidelity(&self) -> &[f64] {
        self.series("fidelity")
            .expect("fidelity is always recorded")
    }

    /// Linear interpolation of a series at `t`.
    pub fn value_at(&self, name: &str, t: f64) -> Option<f64> {
        let ys = self.series(name)?;
        let ts = &self.times;
        if ts.is_empty() || t < ts[0] || t > ts[ts.len() - 1] {
            return None;
        }
        let k = ts.partition_point(|&x| x < t);
        if ts[k] == t || k == 0 {
            return Some(ys[k]);
        }
        let w = (t - ts[k - 1]) / (ts[k] - ts[k - 1]);
        Some(ys[k - 1] + w * (ys[k] - ys[k - 1]))
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.series(name).and_then(|s| s.last().copied())
    }

    pub fn max_trace_dev(&self) -> f64 {
        self.trace_dev.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_herm_dev(&self) -> f64 {
        self.herm_dev.iter().copied().fold(0.0, f64::max)
    }

    fn push(&mut self, t: f64, values: &[f64], trace_dev: f64, herm_dev: f64, clip: f64) {
        self.times.push(t);
        for (series, &v) in self.values.iter_mut().zip(values) {
            series.push(v);
        }
        self.trace_dev.push(trace_dev);
        self.herm_dev.push(herm_dev);
        self.max_fidelity_clip = self.max_fidelity_clip.max(clip);
    }

    /// Append the samples of `other` (same columns) after the last time.
    pub fn extend(&mut self, other: &Trajectory) {
        for k in 0..other.len() {
            if self.times.last().is_some_and(|&t| other.times[k] <= t) {
                continue;
            }
            let row: Vec<f64> = other.values.iter().map(|s| s[k]).collect();
            self.push(
                other.times[k],
                &row,
                other.trace_dev[k],
                other.herm_dev[k],
                other.max_fidelity_clip,
            );
        }
    }

    /// CSV with columns `time,energy_error,fidelity,trace_dev,herm_dev[,extras]`,
    /// values in shortest round-trip form.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        let extras: Vec<usize> = (0..self.names.len()).filter(|&k| k >= 2).collect();
        write!(w, "time,energy_error,fidelity,trace_dev,herm_dev")?;
        for &k in &extras {
            write!(w, ",{}", self.names[k])?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(
                w,
                "{:?},{:?},{:?},{:?},{:?}",
                self.times[i],
                self.values[0][i],
                self.values[1][i],
                self.trace_dev[i],
                self.herm_dev[i]
            )?;
            for &k in &extras {
                write!(w, ",{:?}", self.values[k][i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Outcome of a propagation: sampled trajectory and the final state.
#[derive(Clone, Debug)]
pub struct Evolution {
    pub trajectory: Trajectory,
    pub final_state: Op,
}

/// Stateful integrator over the full system + mode space.
#[allow(clippy::large_enum_variant)]
enum Engine {
    Frame(FramePropagator),
    Literal(generator::LiteralRk4),
}

impl Engine {
    fn new(model: &CompositeModel, rho0: &Op, opts: &SolverOptions) -> Result<Self> {
        if rho0.layout() != &model.layout {
            return Err(Error::Dimension(format!(
                "initial state layout {} does not match model layout {}",
                rho0.layout(),
                model.layout
            )));
        }
        let h = opts.step_for(model)?;
        Ok(match opts.integrator {
            Integrator::Exponential => Engine::Frame(FramePropagator::new(model, rho0, h)?),
            Integrator::Rk4 => Engine::Literal(generator::LiteralRk4::new(model, rho0, h)),
        })
    }

    fn time(&self) -> f64 {
        match self {
            Engine::Frame(p) => p.time(),
            Engine::Literal(p) => p.time(),
        }
    }

    fn advance(&mut self, t: f64) -> Result<()> {
        match self {
            Engine::Frame(p) => p.advance(t),
            Engine::Literal(p) => p.advance(t),
        }
    }

    fn reduced_system(&self) -> Op {
        match self {
            Engine::Frame(p) => p.reduced_system(),
            Engine::Literal(p) => p.reduced_system(),
        }
    }

    fn trace(&self) -> C64 {
        match self {
            Engine::Frame(p) => p.trace(),
            Engine::Literal(p) => p.trace(),
        }
    }

    fn state(&self) -> Op {
        match self {
            Engine::Frame(p) => p.state(),
            Engine::Literal(p) => p.state(),
        }
    }

    fn record(&self, probes: &Probes, traj: &mut Trajectory) -> Result<()> {
        let trace_dev = (self.trace() - 1.0).norm();
        if !(trace_dev <= TRACE_GATE) {
            return Err(Error::Integration(format!(
                "trace deviation {trace_dev:.3e} at t = {:.4} exceeds {TRACE_GATE:e}; reduce the step size",
                self.time()
            )));
        }
        let (values, clip, herm) = probes.measure(&self.reduced_system())?;
        traj.push(self.time(), &values, trace_dev, herm, clip);
        Ok(())
    }
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.first() != Some(&0.0) {
        return Err(Error::Argument("time grid must start at 0".into()));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Argument(
            "time grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Evenly spaced grid `0, dt, …, t_max`.
pub fn uniform_grid(t_max: f64, dt: f64) -> Vec<f64> {
    let n = (t_max / dt).round().max(1.0) as usize;
    (0..=n).map(|k| t_max * k as f64 / n as f64).collect()
}

/// Integrate the model from `ρ0` and sample the probes on `t_grid`.
pub fn evolve(
    model: &CompositeModel,
    rho0: &Op,
    t_grid: &[f64],
    probes: &Probes,
    opts: &SolverOptions,
) -> Result<Evolution> {
    check_grid(t_grid)?;
    let mut engine = Engine::new(model, rho0, opts)?;
    let mut traj = Trajectory::new(probes.names());
    engine.record(probes, &mut traj)?;
    for &t in &t_grid[1..] {
        engine.advance(t)?;
        engine.record(probes, &mut traj)?;
    }
    Ok(Evolution {
        trajectory: traj,
        final_state: engine.state(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyOptions {
    /// Largest tolerated observable drift per unit time.
    pub tol: f64,
    pub t_cap: f64,
    /// Sampling interval of the recorded trajectory.
    pub sample_dt: f64,
    /// Drift of the probes and of the state is measured over this span.
    pub window: f64,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            t_cap: 500.0,
            sample_dt: 1.0,
            window: 5.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SteadyState {
    pub state: Op,
    pub time: f64,
    pub converged: bool,
    pub trajectory: Trajectory,
}

/// Evolve until every probe drifts by less than `tol` per unit time over
/// two consecutive windows, or until `t_cap`.
pub fn steady_state(
    model: &CompositeModel,
    rho0: &Op,
    probes: &Probes,
    solver: &SolverOptions,
    steady: &SteadyOptions,
) -> Result<SteadyState> {
    if !(steady.tol > 0.0) || !(steady.sample_dt > 0.0) || !(steady.window >= steady.sample_dt) {
        return Err(Error::Argument(
            "steady-state tolerances must be positive with window >= sample_dt".into(),
        ));
    }
    let mut engine = Engine::new(model, rho0, solver)?;
    let mut traj = Trajectory::new(probes.names());
    engine.record(probes, &mut traj)?;
    let lag = ((steady.window / steady.sample_dt).round() as usize).max(1);
    let switch_end = model.schedule.switch_times().fold(0.0, f64::max);
    let mut quiet = 0;
    let mut k = 0usize;
    loop {
        k += 1;
        let t = k as f64 * steady.sample_dt;
        if t > steady.t_cap + 1e-9 * steady.t_cap {
            return Ok(SteadyState {
                state: engine.state(),
                time: engine.time(),
                converged: false,
                trajectory: traj,
            });
        }
        engine.advance(t)?;
        engine.record(probes, &mut traj)?;
        if !k.is_multiple_of(lag) {
            continue;
        }
        let n = traj.len();
        let dt = traj.times[n - 1] - traj.times[n - 1 - lag];
        let drift = traj
            .values
            .iter()
            .map(|s| (s[n - 1] - s[n - 1 - lag]).abs())
            .fold(0.0, f64::max);
        quiet = if traj.times[n - 1 - lag] >= switch_end && drift / dt < steady.tol {
            quiet + 1
        } else {
            0
        };
        if quiet >= 2 {
            return Ok(SteadyState {
                state: engine.state(),
                time: t,
                converged: true,
                trajectory: traj,
            });
        }
    }
}

/// `ρ_s ⊗ |0⟩⟨0|` for the requested initial system state.
pub fn initial_state(model: &CompositeModel, kind: InitialState) -> Result<Op> {
    model.product_with_vacuum(&initial_system_state(model.system.layout(), kind))
}

#[cfg(test)]
mod tests;
