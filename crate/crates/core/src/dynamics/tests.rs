use super::*;
use crate::bathlib::PseudomodeParams;
use crate::modelkit::{assemble, build_ising, build_q, ground_info, CouplingSchedule, IsingSpec};
use crate::tensorops::{annihilation, eig_hermitian, pauli, PauliAxis, I, ONE};
use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;

fn qubit_with_mode(omega: f64, lam: f64, rate: f64, n: usize, lambda_bar: C64) -> CompositeModel {
    let layout = SpaceLayout::qubits(1).unwrap();
    let system = &pauli(&layout, 0, PauliAxis::Z).unwrap() * 0.5;
    let q = pauli(&layout, 0, PauliAxis::X).unwrap();
    let mode = PseudomodeParams::new(omega, lam, rate, n, 1).unwrap();
    CompositeModel::new(
        system,
        q,
        vec![mode],
        lambda_bar,
        CouplingSchedule::default(),
    )
    .unwrap()
}

fn small_chain(lambda_bar: C64) -> (CompositeModel, GroundInfo) {
    let spec = IsingSpec::new(2, 1.0, 1.5).unwrap();
    let modes = vec![
        PseudomodeParams::new(2.4, 0.5, 1.1, 3, 0).unwrap(),
        PseudomodeParams::new(0.0, 0.3, 2.0, 2, 1).unwrap(),
        PseudomodeParams::new(0.0, 0.2, 7.0, 2, 1).unwrap(),
    ];
    let model = assemble(&spec, &modes, lambda_bar, CouplingSchedule::default()).unwrap();
    let ground = ground_info(&model.system).unwrap();
    (model, ground)
}

fn random_state(layout: &SpaceLayout, seed: u64) -> Op {
    initial_system_state(layout, InitialState::RandomPure { seed })
}

/// Dense `exp(L t) vec(ρ)` reference.
fn oracle(model: &CompositeModel, rho0: &Op, t: f64) -> Array2<C64> {
    let l = liouvillian_matrix(model, 0.0);
    let n = l.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| l[[i, j]] * t).exp();
    let d = rho0.dim();
    let v: Vec<C64> = rho0.data().iter().copied().collect();
    let out = &m * nalgebra::DVector::from_vec(v);
    Array2::from_shape_vec((d, d), out.iter().copied().collect()).unwrap()
}

#[test]
fn generator_is_commutator_without_collapses() {
    let (model, _) = small_chain(ONE);
    let psi = random_state(&model.layout, 3);
    let out = generator_apply(&model, 0.0, &psi).unwrap();
    let h = model.h_total();
    let mut expected = h.commutator(&psi).unwrap().scale(-I);
    for (rate, a) in &model.collapses {
        let ad = a.dagger();
        let jump = a.matmul(&psi).unwrap().matmul(&ad).unwrap();
        let n = ad.matmul(a).unwrap();
        let anti = &n.matmul(&psi).unwrap() + &psi.matmul(&n).unwrap();
        expected = &expected + &(&(&jump - &(&anti * 0.5)) * *rate);
    }
    assert!(out.max_diff(&expected).unwrap() < 1e-13);
}

#[test]
fn generator_is_trace_free_for_non_hermitian_h() {
    let (model, _) = small_chain(I);
    let rho = random_state(&model.layout, 11);
    let out = generator_apply(&model, 0.0, &rho).unwrap();
    assert!(out.trace().norm() < 1e-12);
    let wrong = Op::identity(&SpaceLayout::qubits(1).unwrap());
    assert!(matches!(
        generator_apply(&model, 0.0, &wrong),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn occupation_decays_at_lindblad_rate() {
    let model = qubit_with_mode(0.7, 0.0, 0.8, 3, ONE);
    let mut psi = vec![ZERO; model.layout.total_dim()];
    psi[1] = ONE; // spin up, one quantum
    let rho = Op::projector(&model.layout, &psi).unwrap();
    let a = annihilation(&model.layout, 1).unwrap();
    let n = a.dagger().matmul(&a).unwrap();
    let dn = expect(&n, &generator_apply(&model, 0.0, &rho).unwrap()).unwrap();
    assert_abs_diff_eq!(dn.re, -0.8, epsilon = 1e-14);

    let grid = uniform_grid(5.0, 0.5);
    let probes = Probes::new(&model.system, &ground_info(&model.system).unwrap());
    let ev = evolve(
        &model,
        &rho,
        &grid,
        &probes,
        &SolverOptions::with_step(0.05),
    )
    .unwrap();
    let final_n = expect(&n, &ev.final_state).unwrap().re;
    assert_abs_diff_eq!(final_n, (-0.8f64 * 5.0).exp(), epsilon = 1e-8);
}

fn expect(a: &Op, rho: &Op) -> Result<C64> {
    crate::tensorops::expect(a, rho)
}

#[test]
fn zero_coupling_conserves_energy() {
    let (mut model, ground) = small_chain(ONE);
    model = CompositeModel::new(
        model.system.clone(),
        model.q.clone(),
        model
            .modes
            .iter()
            .map(|m| PseudomodeParams { lam: 0.0, ..*m })
            .collect(),
        ONE,
        CouplingSchedule::default(),
    )
    .unwrap();
    let rho0 = model
        .product_with_vacuum(&random_state(model.system.layout(), 5))
        .unwrap();
    let probes = Probes::new(&model.system, &ground);
    let ev = evolve(
        &model,
        &rho0,
        &uniform_grid(10.0, 1.0),
        &probes,
        &SolverOptions::default(),
    )
    .unwrap();
    let e = ev.trajectory.energy_error();
    assert!(e.iter().all(|x| (x - e[0]).abs() < 1e-10));
}

#[test]
fn frame_integrator_matches_dense_exponential() {
    for lb in [ONE, I, C64::new(0.4, 0.0), C64::new(0.3, 0.5)] {
        let model = qubit_with_mode(1.3, 0.6, 0.9, 3, lb);
        assert_eq!(model.layout.total_dim(), 6);
        let rho0 = model
            .product_with_vacuum(&random_state(model.system.layout(), 7))
            .unwrap();
        let ground = ground_info(&model.system).unwrap();
        let probes = Probes::new(&model.system, &ground);
        for integrator in [Integrator::Exponential, Integrator::Rk4] {
            let opts = SolverOptions {
                h: Some(0.005),
                integrator,
            };
            let ev = evolve(&model, &rho0, &[0.0, 1.5, 3.0], &probes, &opts).unwrap();
            let exact = oracle(&model, &rho0, 3.0);
            let err = crate::tensorops::max_abs(&(ev.final_state.data() - &exact));
            assert!(err < 1e-8, "{integrator:?} at λ̄ = {lb}: {err:e}");
        }
    }
}

#[test]
fn frame_integrator_handles_three_modes() {
    let (model, ground) = small_chain(I);
    let rho0 = initial_state(&model, InitialState::MaximallyMixed).unwrap();
    let probes = Probes::new(&model.system, &ground);
    let exponential = evolve(
        &model,
        &rho0,
        &[0.0, 2.0],
        &probes,
        &SolverOptions::with_step(0.005),
    )
    .unwrap();
    let literal = evolve(
        &model,
        &rho0,
        &[0.0, 2.0],
        &probes,
        &SolverOptions {
            h: Some(0.002),
            integrator: Integrator::Rk4,
        },
    )
    .unwrap();
    let diff = exponential
        .final_state
        .max_diff(&literal.final_state)
        .unwrap();
    assert!(diff < 1e-9, "{diff:e}");
    assert!(exponential.trajectory.max_trace_dev() < 1e-12);
}

#[test]
fn rk4_order_under_step_halving() {
    let model = qubit_with_mode(1.3, 0.6, 0.9, 3, I);
    let rho0 = model
        .product_with_vacuum(&random_state(model.system.layout(), 2))
        .unwrap();
    let exact = oracle(&model, &rho0, 2.0);
    let probes = Probes::new(&model.system, &ground_info(&model.system).unwrap());
    for integrator in [Integrator::Exponential, Integrator::Rk4] {
        let err = |h: f64| {
            let ev = evolve(
                &model,
                &rho0,
                &[0.0, 2.0],
                &probes,
                &SolverOptions {
                    h: Some(h),
                    integrator,
                },
            )
            .unwrap();
            crate::tensorops::max_abs(&(ev.final_state.data() - &exact))
        };
        let ratio = err(0.1) / err(0.05);
        assert!(
            (12.0..=20.0).contains(&ratio),
            "{integrator:?}: ratio {ratio}"
        );
    }
}

#[test]
fn schedule_switch_is_respected() {
    let (model, ground) = small_chain(ONE);
    let switched = CompositeModel::new(
        model.system.clone(),
        model.q.clone(),
        model.modes.clone(),
        ONE,
        CouplingSchedule::new(vec![(0.0, 1.0), (0.75, 0.0)]).unwrap(),
    )
    .unwrap();
    let rho0 = initial_state(&model, InitialState::AllUp).unwrap();
    let probes = Probes::new(&model.system, &ground);
    let a = evolve(
        &switched,
        &rho0,
        &[0.0, 0.75],
        &probes,
        &SolverOptions::with_step(0.01),
    )
    .unwrap();
    let b = evolve(
        &model,
        &rho0,
        &[0.0, 0.75],
        &probes,
        &SolverOptions::with_step(0.01),
    )
    .unwrap();
    assert!(a.final_state.max_diff(&b.final_state).unwrap() < 1e-14);
    // Decoupled after the switch: system energy stays put.
    let c = evolve(
        &switched,
        &rho0,
        &[0.0, 0.75, 2.0],
        &probes,
        &SolverOptions::with_step(0.01),
    )
    .unwrap();
    let e = c.trajectory.energy_error();
    assert_abs_diff_eq!(e[1], e[2], epsilon = 1e-10);
}

#[test]
fn physical_runs_stay_hermitian_and_positive() {
    let (model, ground) = small_chain(C64::new(0.8, 0.0));
    let rho0 = initial_state(&model, InitialState::RandomPure { seed: 9 }).unwrap();
    let ev = evolve(
        &model,
        &rho0,
        &uniform_grid(6.0, 1.0),
        &Probes::new(&model.system, &ground),
        &SolverOptions::with_step(0.02),
    )
    .unwrap();
    assert!(ev.final_state.hermiticity_defect() < 1e-8);
    let e = eig_hermitian(&ev.final_state.hermitian_part()).unwrap();
    assert!(e.values[0] > -1e-8, "{:e}", e.values[0]);
}

#[test]
fn steady_state_of_damped_mode_is_vacuum() {
    let model = qubit_with_mode(0.0, 0.0, 2.0, 3, ONE);
    let mut psi = vec![ZERO; 6];
    psi[2] = ONE;
    let rho0 = Op::projector(&model.layout, &psi).unwrap();
    let a = annihilation(&model.layout, 1).unwrap();
    let n = a.dagger().matmul(&a).unwrap();
    let ground = ground_info(&model.system).unwrap();
    let probes = Probes::new(&model.system, &ground);
    let ss = steady_state(
        &model,
        &rho0,
        &probes,
        &SolverOptions::default(),
        &SteadyOptions {
            t_cap: 40.0,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(expect(&n, &ss.state).unwrap().norm() < 1e-8);
}

#[test]
fn steady_state_matches_generator_null_space() {
    let model = qubit_with_mode(1.0, 0.15, 0.6, 3, ONE);
    let ground = ground_info(&model.system).unwrap();
    let rho0 = initial_state(&model, InitialState::MaximallyMixed).unwrap();
    let probes = Probes::new(&model.system, &ground);
    let ss = steady_state(
        &model,
        &rho0,
        &probes,
        &SolverOptions::with_step(0.02),
        &SteadyOptions {
            tol: 1e-10,
            t_cap: 2000.0,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(ss.converged);
    let l = liouvillian_matrix(&model, 0.0);
    let n = l.nrows();
    let svd = DMatrix::from_fn(n, n, |i, j| l[[i, j]]).svd(false, true);
    let k = (0..n)
        .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
        .unwrap();
    let v: Vec<C64> = svd.v_t.unwrap().row(k).iter().map(|z| z.conj()).collect();
    let d = model.layout.total_dim();
    let mut null = Array2::from_shape_vec((d, d), v).unwrap();
    let tr = null.diag().sum();
    null.mapv_inplace(|z| z / tr);
    let diff = crate::tensorops::max_abs(&(ss.state.data() - &null));
    assert!(diff < 1e-7, "{diff:e}");
    let fid = fidelity_subspace(
        &crate::tensorops::partial_trace(&ss.state, &[0]).unwrap(),
        &ground,
    )
    .unwrap();
    assert!(fid.value > 0.9);
}

#[test]
fn fidelity_examples() {
    let spec = IsingSpec::new(5, 1.0, 5.0).unwrap();
    let ground = ground_info(&build_ising(&spec).unwrap()).unwrap();
    assert_eq!(ground.degeneracy, 2);
    let p = ground.projector.scale(C64::new(0.5, 0.0));
    assert_abs_diff_eq!(
        fidelity_subspace(&p, &ground).unwrap().value,
        1.0,
        epsilon = 1e-12
    );
    let mixed = initial_system_state(&spec.layout(), InitialState::MaximallyMixed);
    assert_abs_diff_eq!(
        fidelity_subspace(&mixed, &ground).unwrap().value,
        0.0625,
        epsilon = 1e-14
    );
    let over = p.scale(C64::new(1.1, 0.0));
    let f = fidelity_subspace(&over, &ground).unwrap();
    assert_eq!(f.value, 1.0);
    assert_abs_diff_eq!(f.clip, 0.1, epsilon = 1e-12);
}

#[test]
fn initial_states_are_normalized() {
    let l = SpaceLayout::qubits(3).unwrap();
    for kind in [
        InitialState::MaximallyMixed,
        InitialState::AllUp,
        InitialState::RandomPure { seed: 1 },
    ] {
        let rho = initial_system_state(&l, kind);
        assert_abs_diff_eq!(rho.trace().re, 1.0, epsilon = 1e-14);
        assert!(rho.hermiticity_defect() < 1e-15);
    }
    assert_eq!(
        initial_system_state(&l, InitialState::RandomPure { seed: 4 }),
        initial_system_state(&l, InitialState::RandomPure { seed: 4 })
    );
}

#[test]
fn trajectory_csv_layout() {
    let mut t = Trajectory::new(vec!["energy_error".into(), "fidelity".into(), "n1".into()]);
    t.push(0.0, &[1.5, 0.25, 0.1], 0.0, 0.0, 0.0);
    t.push(0.5, &[1.0 / 3.0, 0.5, 0.2], 1e-16, 2e-17, 0.0);
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "time,energy_error,fidelity,trace_dev,herm_dev,n1");
    assert_eq!(
        lines[2].split(',').nth(1).unwrap().parse::<f64>().unwrap(),
        1.0 / 3.0
    );
    assert_eq!(t.value_at("fidelity", 0.25), Some(0.375));
}

#[test]
fn bms_two_level_zero_temperature() {
    let layout = SpaceLayout::qubits(1).unwrap();
    let h = &pauli(&layout, 0, PauliAxis::Z).unwrap() * -0.5;
    let q = pauli(&layout, 0, PauliAxis::X).unwrap();
    let eig = eig_hermitian(&h).unwrap();
    let genr = bms_build(&eig, &q, |w| if w > 0.0 { 0.3 * w } else { 0.0 }).unwrap();
    assert_eq!(genr.transitions.len(), 1);
    let tr = genr.transitions[0];
    assert!(tr.down_rate > 0.0 && tr.up_rate == 0.0);
    assert_abs_diff_eq!(tr.weight, 1.0, epsilon = 1e-14);
    let ground = ground_info(&h).unwrap();
    let rho0 = initial_system_state(&layout, InitialState::MaximallyMixed);
    let ev = bms_evolve(
        &genr,
        &rho0,
        &uniform_grid(10.0, 1.0),
        &Probes::new(&h, &ground),
    )
    .unwrap();
    // Excited population decays at rate c·S(Δ) = 0.3.
    assert_abs_diff_eq!(
        ev.trajectory.fidelity()[10],
        1.0 - 0.5 * (-3.0f64).exp(),
        epsilon = 1e-12
    );
}

#[test]
fn bms_weights_are_symmetric_and_clipping_recorded() {
    let spec = IsingSpec::new(3, 1.0, 5.0).unwrap();
    let h = build_ising(&spec).unwrap();
    let q = build_q(&spec).unwrap();
    let eig = eig_hermitian(&h).unwrap();
    let qe = eig.to_eigenbasis(q.data());
    for i in 0..8 {
        for j in 0..8 {
            assert_abs_diff_eq!(
                qe[[i, j]].norm_sqr(),
                qe[[j, i]].norm_sqr(),
                epsilon = 1e-12
            );
        }
    }
    let genr = bms_build(&eig, &q, |w| if w > 0.0 { 1.0 } else { -1e-3 }).unwrap();
    assert!(genr.n_clipped > 0);
    assert_abs_diff_eq!(genr.max_rate_clip, 1e-3, epsilon = 1e-15);
    assert!(genr
        .transitions
        .iter()
        .all(|t| t.gap > 0.0 && t.weight >= 0.0 && t.up_rate == 0.0));
}

#[test]
fn bms_relaxes_to_gibbs_with_detailed_balance() {
    let spec = IsingSpec::new(3, 1.0, 1.4).unwrap();
    let h = build_ising(&spec).unwrap();
    let q = build_q(&spec).unwrap();
    let beta = 0.7;
    let s = |w: f64| 2.0 * w / (1.0 + w * w) / -(-beta * w).exp_m1();
    let eig = eig_hermitian(&h).unwrap();
    let genr = bms_build(&eig, &q, s).unwrap();
    let stationary = bms_stationary(&genr, h.layout()).unwrap();
    let gibbs = gibbs_state(&h, beta).unwrap();
    assert!(trace_distance(&stationary, &gibbs).unwrap() < 1e-10);
    let w = genr.rate_matrix();
    for tr in &genr.transitions {
        let p = |k: usize| (-beta * eig.values[k]).exp();
        let flux_down = p(tr.upper) * w[(tr.lower, tr.upper)];
        let flux_up = p(tr.lower) * w[(tr.upper, tr.lower)];
        assert_abs_diff_eq!(
            flux_down,
            flux_up,
            epsilon = 1e-12 * flux_down.abs().max(1.0)
        );
    }
}

#[test]
fn gibbs_limits() {
    let spec = IsingSpec::new(3, 1.0, 0.5).unwrap();
    let h = build_ising(&spec).unwrap();
    let ground = ground_info(&h).unwrap();
    let cold = gibbs_state(&h, 1e3).unwrap();
    let target = ground
        .projector
        .scale(C64::new(1.0 / ground.degeneracy as f64, 0.0));
    assert!(cold.max_diff(&target).unwrap() < 1e-12);
    let hot = gibbs_state(&h, 1e-12).unwrap();
    assert!(
        hot.max_diff(&Op::identity(h.layout()).scale(C64::new(0.125, 0.0)))
            .unwrap()
            < 1e-10
    );
    assert!(gibbs_state(&h, 0.0).is_err());
}

#[test]
fn restricted_gibbs_drops_disconnected_levels() {
    // Q = σ_x on one site of a non-interacting pair: only that spin flips.
    let spec = IsingSpec::with_q(2, 1.0, 0.0, [1.0, 0.0, 0.0]).unwrap();
    let h = build_ising(&spec).unwrap();
    let q = build_q(&spec).unwrap();
    let ground = ground_info(&h).unwrap();
    let r = gibbs_reference(&h, &q, 0.5, &ground, 1e-12).unwrap();
    assert_eq!(r.connected_levels, 2);
    assert!(r.restricted > r.unrestricted);
    assert_abs_diff_eq!(r.restricted, 1.0 / (1.0 + (-1.0f64).exp()), epsilon = 1e-12);
}

#[test]
fn hybridization_costs_fidelity() {
    let spec = IsingSpec::new(3, 1.0, 5.0).unwrap();
    let h = build_ising(&spec).unwrap();
    let q = build_q(&spec).unwrap();
    let ground = ground_info(&h).unwrap();
    let mode = |lam| PseudomodeParams::new(1.2 * ground.e01, lam, 3.8, 3, 0).unwrap();
    assert_abs_diff_eq!(
        hybridized_reference(&h, &q, &mode(0.0), &ground).unwrap(),
        1.0,
        epsilon = 1e-12
    );
    let mut prev = 1.0;
    for k in 1..=6 {
        let f = hybridized_reference(&h, &q, &mode(0.3 * k as f64), &ground).unwrap();
        assert!(f < prev, "λ = {}: {f} >= {prev}", 0.3 * k as f64);
        prev = f;
    }
}
