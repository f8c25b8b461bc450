use proptest::prelude::*;

use pseudocool_core::bathlib::{power_spectrum, PseudomodeParams, UnderdampedBath};
use pseudocool_core::continuation::{eval_poly, fit_poly, Sample};
use pseudocool_core::dynamics::{
    bms_build, bms_stationary, evolve, gibbs_state, initial_system_state, trace_distance,
    InitialState, Integrator, Probes, SolverOptions,
};
use pseudocool_core::modelkit::{build_ising, build_q, ground_info};
use pseudocool_core::tensorops::{eig_hermitian, partial_trace, pauli, PauliAxis};
use pseudocool_core::{CompositeModel, CouplingSchedule, IsingSpec, Op, SpaceLayout, C64};

fn qubit_with_mode(omega: f64, lam: f64, rate: f64, lambda_bar: C64) -> CompositeModel {
    let layout = SpaceLayout::qubits(1).unwrap();
    let system = pauli(&layout, 0, PauliAxis::Z)
        .unwrap()
        .scale(C64::new(0.5, 0.0));
    let q = pauli(&layout, 0, PauliAxis::X).unwrap();
    let mode = PseudomodeParams::new(omega, lam, rate, 3, 1).unwrap();
    CompositeModel::new(
        system,
        q,
        vec![mode],
        lambda_bar,
        CouplingSchedule::default(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn polynomial_fit_reproduces_exact_polynomials(
        coeffs in prop::collection::vec(-3.0f64..3.0, 1..=7),
    ) {
        let samples: Vec<Sample> = (0..9)
            .map(|k| {
                let x = k as f64 / 8.0;
                Sample { lambda_bar: x, value: eval_poly(&coeffs, C64::new(x, 0.0)).re }
            })
            .collect();
        let model = fit_poly(&samples, 6).unwrap();
        let expected = eval_poly(&coeffs, C64::new(0.0, 1.0));
        prop_assert!((model.continued_value - expected).norm() < 1e-8);
        prop_assert!(model.rms_residual < 1e-10);
    }

    #[test]
    fn partial_trace_of_product_recovers_factor(
        seed_a in 0u64..1000,
        seed_b in 0u64..1000,
    ) {
        let la = SpaceLayout::qubits(2).unwrap();
        let lb = SpaceLayout::new([("m", 2)]).unwrap();
        let a = initial_system_state(&la, InitialState::RandomPure { seed: seed_a });
        let b = initial_system_state(&lb, InitialState::RandomPure { seed: seed_b });
        let joint = a.kron(&b).unwrap();
        let kept = partial_trace(&joint, &[0, 1]).unwrap();
        prop_assert!(kept.max_diff(&a).unwrap() < 1e-12);
    }

    #[test]
    fn evolution_preserves_trace_and_hermiticity(
        omega in 0.0f64..3.0,
        lam in 0.05f64..1.0,
        rate in 0.2f64..5.0,
        real_coupling in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let lambda_bar = if real_coupling { C64::new(1.0, 0.0) } else { C64::new(0.0, 1.0) };
        let model = qubit_with_mode(omega, lam, rate, lambda_bar);
        let rho_s = initial_system_state(model.system.layout(), InitialState::RandomPure { seed });
        let rho0 = model.product_with_vacuum(&rho_s).unwrap();
        let probes = Probes::new(&model.system, &ground_info(&model.system).unwrap());
        for integrator in [Integrator::Exponential, Integrator::Rk4] {
            let opts = SolverOptions { h: Some(0.01), integrator };
            let ev = evolve(&model, &rho0, &[0.0, 1.0, 2.0], &probes, &opts).unwrap();
            prop_assert!(ev.trajectory.max_trace_dev() < 1e-10);
            let reduced = partial_trace(&ev.final_state, &[0]).unwrap();
            prop_assert!(reduced.hermiticity_defect() < 1e-10);
            if real_coupling {
                let eig = eig_hermitian(&reduced.hermitian_part()).unwrap();
                prop_assert!(eig.values[0] > -1e-10);
            }
        }
    }

    #[test]
    fn master_equation_thermalizes_to_gibbs(
        g in 0.5f64..1.5,
        j in 0.2f64..1.5,
        beta in 0.2f64..2.0,
    ) {
        let spec = IsingSpec::new(2, g, j).unwrap();
        let h = build_ising(&spec).unwrap();
        let q = build_q(&spec).unwrap();
        let eig = eig_hermitian(&h).unwrap();
        let bath = UnderdampedBath::new(1.0, 1.0, 2.0, beta).unwrap();
        let genr = bms_build(&eig, &q, |w| power_spectrum(&bath, w).unwrap_or(0.0)).unwrap();
        let rho: Op = bms_stationary(&genr, h.layout()).unwrap();
        let gibbs = gibbs_state(&h, beta).unwrap();
        prop_assert!(trace_distance(&rho, &gibbs).unwrap() < 1e-8);
    }
}
