//! Shared fixtures for the benchmarks.

use pseudocool_core::bathlib::FitWindow;
use pseudocool_core::dynamics::{initial_state, InitialState};
use pseudocool_core::modelkit::{
    assemble, prepare_bath, BathRecipe, CompositeModel, CouplingSchedule, IsingSpec, Omega0, Width,
};
use pseudocool_core::{Op, C64};

/// Chain of `n` sites with the three-ancilla bath at `λ̄ = i`, and the
/// maximally mixed initial state.
pub fn cooling_model(n: usize) -> (CompositeModel, Op) {
    let spec = IsingSpec::new(n, 1.0, 5.0).expect("valid chain");
    let recipe = BathRecipe {
        omega0: Omega0::E01Multiple(1.2),
        gamma: Width::Absolute(3.8),
        lambda_prefactor: 1.15,
        beta: f64::INFINITY,
    };
    let prep = prepare_bath(&spec, &recipe, 2, FitWindow::default(), &[3, 2, 2]).expect("bath fit");
    let model = assemble(
        &spec,
        &prep.modes,
        C64::new(0.0, 1.0),
        CouplingSchedule::default(),
    )
    .expect("model");
    let rho0 = initial_state(&model, InitialState::MaximallyMixed).expect("initial state");
    (model, rho0)
}
