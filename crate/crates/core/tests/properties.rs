use std::f64::consts::PI;

use proptest::prelude::*;

use nsgate::dynamics::{Integrator, TimeGrid};
use nsgate::gates::{two_rail_space, BeamSplitter};
use nsgate::hilbert::{
    excitation_operator, partial_trace, CMatrix, CVector, DensityMatrix, KetState, Space,
};
use nsgate::models::{
    h_2bs, h_2jc, h_2jc_interaction, h_2qrm, h_dispersive, pusc_resonance_lhs, pusc_resonance_rhs,
    solve_dispersive, solve_pusc_coupling, solve_pusc_k, DetuningSpec, SystemParams,
};
use nsgate::units::ghz;
use nsgate::waveguide::{
    propagate_catch_release, BathDiscretization, BathState, CouplerSchedule, Segment, Shape,
    Triangle, WavepacketSpec,
};
use nsgate::C64;

fn complex() -> impl Strategy<Value = C64> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(re, im)| C64::new(re, im))
}

fn unit_vector(len: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec(complex(), len).prop_filter_map("zero vector", |v| {
        let n = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        (n > 1e-3).then(|| v.into_iter().map(|a| a / n).collect())
    })
}

fn params() -> impl Strategy<Value = SystemParams> {
    (1.0f64..10.0, 0.5f64..2.5, 0.01f64..0.3)
        .prop_map(|(wr, r, g)| SystemParams::new(wr, r * wr, g * wr).unwrap())
}

fn random_density(dim: usize) -> impl Strategy<Value = CMatrix> {
    prop::collection::vec(complex(), dim * dim).prop_map(move |v| {
        let a = CMatrix::from_vec(dim, dim, v);
        let m = &a * a.adjoint();
        let tr = m.trace();
        m / tr
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn builders_are_hermitian(p in params(), t in 0.0f64..10.0) {
        let space = Space::mode_qubit(6);
        for h in [
            h_2jc(&p, &space).unwrap(),
            h_2jc_interaction(&p, &space, t).unwrap(),
            h_2qrm(&p, &space).unwrap(),
            h_2bs(&p, &space).unwrap(),
        ] {
            prop_assert!(h.hermitian_deviation() < 1e-12);
        }
    }

    #[test]
    fn jc_conserves_norm_and_excitations(p in params(), amps in unit_vector(8)) {
        // One full two-photon Rabi cycle.
        let space = Space::mode_qubit(3);
        let psi0 = KetState::new(space.clone(), CVector::from_vec(amps)).unwrap();
        let h = h_2jc(&p, &space).unwrap();
        let exc = excitation_operator(&space).unwrap();
        prop_assert!(h.commutator_norm(&exc).unwrap() < 1e-12);
        let t_end = 2.0 * PI / (2f64.sqrt() * p.g.max(0.05 * p.omega_r));
        let fine = Integrator { step_tolerance: Some(1e-11), ..Default::default() };
        let trace = fine.propagate_state(&h, &psi0, &TimeGrid::sampled(t_end, 8).unwrap()).unwrap();
        let n0 = psi0.expectation(&exc).unwrap().re;
        for s in trace.kets().unwrap() {
            prop_assert!((s.norm() - 1.0).abs() < 1e-8);
            let d = (s.expectation(&exc).unwrap().re - n0).abs();
            prop_assert!(d < 1e-8, "drift {d:e}");
        }
    }

    #[test]
    fn beam_splitter_is_unitary_involution(theta in -2.0 * PI..2.0 * PI) {
        let u = BeamSplitter::new(theta).two_mode_unitary();
        let id = CMatrix::identity(9, 9);
        prop_assert!((u.adjoint() * &u - &id).norm() < 1e-12);
        prop_assert!((&u * &u - &id).norm() < 1e-12);
    }

    #[test]
    fn beam_splitter_preserves_photon_number(theta in 0.0f64..PI, amps in unit_vector(9)) {
        let space = two_rail_space();
        let psi = KetState::new(space.clone(), CVector::from_vec(amps)).unwrap();
        let out = BeamSplitter::new(theta).apply(&psi).unwrap();
        let count = |s: &KetState| -> f64 {
            (0..space.dim()).map(|i| space.label(i).photons.iter().sum::<usize>() as f64 * s.amplitude(i).norm_sqr()).sum()
        };
        prop_assert!((out.norm() - 1.0).abs() < 1e-12);
        prop_assert!((count(&out) - count(&psi)).abs() < 1e-12);
    }

    #[test]
    fn partial_trace_of_product_recovers_factors(a in random_density(3), b in random_density(2)) {
        let space = Space::new(vec![2], 1).unwrap();
        let rho = DensityMatrix::new(space, a.kronecker(&b)).unwrap();
        let mode = partial_trace(&rho, &[0]).unwrap();
        let qubit = partial_trace(&rho, &[1]).unwrap();
        prop_assert!((mode.matrix() - &a).norm() < 1e-12);
        prop_assert!((qubit.matrix() - &b).norm() < 1e-12);
        prop_assert!((mode.trace() - C64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn pusc_solution_is_consistent(k in prop::sample::select(vec![4u32, 6, 7, 8, 9, 10, 11, 12])) {
        let bs = solve_pusc_k(k, ghz(5.0)).unwrap();
        prop_assert!((pusc_resonance_rhs(bs.r) - pusc_resonance_lhs(k)).abs() < 1e-9);
        prop_assert!(bs.resonance_residual().abs() < 1e-9 * bs.base.omega_r);
        let g = solve_pusc_coupling(bs.r).unwrap() * bs.base.omega_r;
        prop_assert!((g - bs.base.g).abs() < 1e-9 * bs.base.omega_r);
        prop_assert!((bs.gate_time - k as f64 * bs.t_osc).abs() < 1e-12 * bs.gate_time);
    }

    #[test]
    fn dispersive_solution_meets_phase_conditions(
        n in 1u32..40,
        phase in 0.1f64..(2.0 * PI - 0.1),
        ratio in 2.0f64..20.0,
    ) {
        let spec = DetuningSpec::ResonatorRatio(ratio);
        if let Ok(dp) = solve_dispersive(n, spec, phase, ghz(1.0)) {
            prop_assert!(dp.linear_phase_residual().abs() < 1e-12 * dp.gate_time.max(1.0) * dp.base.omega_r);
            let r = dp.nonlinear_phase_residual().rem_euclid(2.0 * PI);
            prop_assert!(r.min(2.0 * PI - r) < 1e-9);
            let space = Space::mode_qubit(3);
            let h = h_dispersive(&dp, &space).unwrap();
            prop_assert!(h.hermitian_deviation() < 1e-12);
        }
    }
}

// Waveguide invariants at small N so each case runs in milliseconds.

fn small_schedule(g_wr: f64, peak: Option<f64>) -> CouplerSchedule {
    let seg = vec![
        Segment::new(0.0, 2.0, Shape::Exponential { amplitude: g_wr, rate: 0.3 }),
        Segment::new(2.0, 6.0, Shape::Constant { value: 0.5 * g_wr }),
    ];
    let tri = peak.map(|p| Triangle::new(2.0, p).unwrap());
    CouplerSchedule::new(seg, tri).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn waveguide_conserves_norm_and_sectors(
        n in 3usize..9,
        g_wr in 0.01f64..0.2,
        peak in 2.0f64..6.0,
        seed in unit_vector(64),
    ) {
        let bath = BathDiscretization::new(&WavepacketSpec::wide(), n).unwrap();
        let mut amps: Vec<C64> = seed.iter().cycle().take(bath.dim()).copied().collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a /= norm);
        let state = BathState::from_amplitudes(&bath, amps).unwrap();
        let sched = small_schedule(g_wr, Some(peak));
        let trace = propagate_catch_release(&state, &sched, &TimeGrid::sampled(sched.t_end(), 6).unwrap()).unwrap();
        prop_assert!(trace.max_norm_drift < 1e-8);
        for d in trace.max_sector_drift {
            prop_assert!(d < 1e-8);
        }
    }

    #[test]
    fn no_qubit_coupling_keeps_qubit_empty(n in 3usize..9, g_wr in 0.01f64..0.2, seed in unit_vector(64)) {
        let bath = BathDiscretization::new(&WavepacketSpec::narrow(), n).unwrap();
        let mut amps: Vec<C64> = seed.iter().cycle().take(bath.dim()).copied().collect();
        amps[bath.e()] = C64::new(0.0, 0.0);
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a /= norm);
        let state = BathState::from_amplitudes(&bath, amps).unwrap();
        let sched = small_schedule(g_wr, None);
        let trace = propagate_catch_release(&state, &sched, &TimeGrid::sampled(sched.t_end(), 6).unwrap()).unwrap();
        for s in &trace.states {
            prop_assert_eq!(s.qubit_excited(), C64::new(0.0, 0.0));
        }
    }
}
