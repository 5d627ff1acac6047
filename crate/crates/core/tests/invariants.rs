use kvh_core::kvh::{apply_prequantum, evolve, hermitian_inner, kvh_energy};
use kvh_core::liouville::evolve_pushforward;
use kvh_core::madelung::{classical_density, evolve_hydro, hydro_energy, hydro_from_wavefunction};
use kvh_core::vonneumann::{evolve_kernel, kernel_from_wavefunction};
use kvh_core::{DensityField, EvolveOptions, ExitPolicy, GaussianPacket, HamiltonianSpec, PhaseGrid, WaveFunction, C64};
use proptest::prelude::*;

fn packet() -> impl Strategy<Value = GaussianPacket> {
    (-1.0f64..1.0, -1.0f64..1.0, 0.45f64..0.8, -0.5f64..0.5, -0.2f64..0.2, -0.2f64..0.2).prop_map(
        |(q, p, w, kq, aqq, app)| {
            GaussianPacket::new((q, p), w, 1.0).with_linear_phase(kq, 0.0).with_quadratic_phase(aqq, 0.0, app)
        },
    )
}

fn sample(g: &PhaseGrid, pk: &GaussianPacket) -> WaveFunction {
    pk.sample(g).unwrap().normalized().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn derivatives_are_skew_and_commute(a in packet(), b in packet()) {
        let g = PhaseGrid::periodic_square(6.0, 48).unwrap();
        let (f, h) = (sample(&g, &a), sample(&g, &b));
        let (f, h) = (f.values(), h.values());
        let area = g.cell_area();
        let dot = |x: &ndarray::Array2<C64>, y: &ndarray::Array2<C64>| x.iter().zip(y).map(|(u, v)| u * v).sum::<C64>() * area;
        // ∫ f ∂g = -∫ ∂f g on a periodic box
        prop_assert!((dot(f, &g.d_q(h)) + dot(&g.d_q(f), h)).norm() < 1e-10);
        prop_assert!((dot(f, &g.d_p(h)) + dot(&g.d_p(f), h)).norm() < 1e-10);
        let mixed = &g.d_q(&g.d_p(f)) - &g.d_p(&g.d_q(f));
        prop_assert!(mixed.iter().all(|z| z.norm() < 1e-9));
    }

    #[test]
    fn prequantum_operator_is_symmetric(a in packet(), b in packet()) {
        let g = PhaseGrid::periodic_square(7.0, 64).unwrap();
        let (f, h) = (sample(&g, &a), sample(&g, &b));
        for op in [HamiltonianSpec::harmonic(), HamiltonianSpec::free()] {
            let lf = apply_prequantum(&op, &f).value;
            let lh = apply_prequantum(&op, &h).value;
            let lhs = hermitian_inner(&lf, &h).unwrap();
            let rhs = hermitian_inner(&f, &lh).unwrap();
            prop_assert!((lhs - rhs).norm() < 1e-8, "{}: {lhs} vs {rhs}", op.name());
        }
    }

    #[test]
    fn evolution_conserves_norm_and_energy(a in packet()) {
        let g = PhaseGrid::periodic_square(7.0, 64).unwrap();
        let h = HamiltonianSpec::harmonic();
        let tr = evolve(&h, &sample(&g, &a), &EvolveOptions::new(0.5, 2e-3).stride(50)).unwrap();
        prop_assert!(tr.norm_drift() < 1e-10);
        prop_assert!(tr.energy_drift() < 1e-9);
    }

    #[test]
    fn density_is_pushed_forward(a in packet()) {
        // the momentum map intertwines KvH evolution and Liouville transport
        let g = PhaseGrid::periodic_square(7.0, 96).unwrap();
        let h = HamiltonianSpec::harmonic();
        let psi = sample(&g, &a);
        let t = 0.5;
        let evolved = evolve(&h, &psi, &EvolveOptions::new(t, 1e-3)).unwrap().last();
        let rho0 = DensityField::new(classical_density(&psi));
        let pushed = evolve_pushforward(&rho0, &h, t, 1e-3, ExitPolicy::Zero).unwrap().value;
        let err = classical_density(&evolved).sub(pushed.field()).norm_l1();
        prop_assert!(err < 1e-3, "{err}");
        prop_assert!((pushed.mass() - rho0.mass()).abs() < 1e-4);
    }

    #[test]
    fn hydro_energy_matches_kvh_and_is_conserved(a in packet()) {
        let g = PhaseGrid::periodic_square(7.0, 64).unwrap();
        let h = HamiltonianSpec::harmonic();
        let psi = sample(&g, &a);
        let st = hydro_from_wavefunction(&psi);
        let e0 = hydro_energy(&st, &h);
        prop_assert!((e0 - kvh_energy(&h, &psi)).abs() < 1e-8, "{e0}");
        let traj = evolve_hydro(&st, &h, &EvolveOptions::new(0.5, 2e-3).stride(50)).unwrap();
        for (_, s) in &traj {
            prop_assert!((hydro_energy(s, &h) - e0).abs() < 1e-7);
            prop_assert!((s.mass() - st.mass()).abs() < 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn kernel_trace_and_purity_are_conserved(a in packet()) {
        let g = PhaseGrid::periodic_square(4.0, 14).unwrap();
        let k = kernel_from_wavefunction(&a.sample(&g).unwrap().normalized().unwrap()).unwrap();
        let traj = evolve_kernel(&k, &HamiltonianSpec::harmonic(), &EvolveOptions::new(0.5, 5e-3).stride(20)).unwrap();
        prop_assert!(traj.drift(|r| r.trace) < 1e-10);
        prop_assert!(traj.drift(|r| r.casimir2) < 1e-9);
        prop_assert!(traj.log.iter().all(|r| r.herm_residual < 1e-10));
    }
}
