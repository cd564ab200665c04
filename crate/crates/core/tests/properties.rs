use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radbath::decoherence::{decoherence_factor, DiagonalInteractionSpec};
use radbath::quantum_core::{
    c, evolve, max_abs_diff, partial_trace_bath, CMatrix, DensityMatrix, PureState,
};
use radbath::random_phase::{density_of_mixture, reduce_supersystem_mixture, sample_density, Branch, PhaseMixture};
use radbath::supersystem::{
    random_hermitian, random_state, CouplingModel, SpecDocument, SupersystemPropagator, SupersystemSpec,
};
use radbath::symmetry::SymmetryMap;
use radbath::weisskopf_wigner::{
    delta_lambda_direct, wwa_matrix, DecayModelSpec, EpsilonMode, KaonToy,
};

fn random_density(rng: &mut ChaCha8Rng, dim: usize) -> DensityMatrix {
    let a = random_hermitian(rng, dim, 1.0).into_entries() + CMatrix::identity(dim, dim) * c(0.0, 0.3);
    let m = &a * a.adjoint();
    let tr = m.trace();
    DensityMatrix::new((&m + m.adjoint()) * (c(0.5, 0.0) / tr)).unwrap()
}

fn random_spec(rng: &mut ChaCha8Rng, ds: usize, db: usize) -> SupersystemSpec {
    let hs = random_hermitian(rng, ds, 1.0);
    let energies = (0..db).map(|_| rng.random::<f64>() * 2.0).collect();
    let blocks = (0..db).map(|_| random_hermitian(rng, ds, 0.5)).collect();
    SupersystemSpec::new(hs, energies, 0.3 + rng.random::<f64>(), blocks).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evolution_is_unitary_and_composes(seed in any::<u64>(), dim in 1usize..6, t1 in -20.0f64..20.0, t2 in -20.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_hermitian(&mut rng, dim, 1.0);
        let psi = random_state(&mut rng, dim);
        let a = evolve(&h, &psi, t1 + t2).unwrap();
        let b = evolve(&h, &evolve(&h, &psi, t1).unwrap(), t2).unwrap();
        prop_assert!((a.norm() - 1.0).abs() <= 1e-12);
        prop_assert!((a.amplitudes() - b.amplitudes()).camax() <= 1e-10);
    }

    #[test]
    fn partial_trace_preserves_trace_and_validity(seed in any::<u64>(), ds in 1usize..4, db in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_density(&mut rng, ds * db);
        let reduced = partial_trace_bath(&rho, ds, db).unwrap();
        prop_assert!((reduced.trace() - c(1.0, 0.0)).norm() <= 1e-12);
    }

    #[test]
    fn partial_trace_is_linear(seed in any::<u64>(), w in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_density(&mut rng, 6);
        let b = random_density(&mut rng, 6);
        let mix = DensityMatrix::new(a.entries() * c(w, 0.0) + b.entries() * c(1.0 - w, 0.0)).unwrap();
        let lhs = partial_trace_bath(&mix, 2, 3).unwrap();
        let rhs = partial_trace_bath(&a, 2, 3).unwrap().entries() * c(w, 0.0)
            + partial_trace_bath(&b, 2, 3).unwrap().entries() * c(1.0 - w, 0.0);
        prop_assert!(max_abs_diff(lhs.entries(), &rhs) <= 1e-14);
    }

    #[test]
    fn phase_offsets_do_not_change_the_density(seed in any::<u64>(), phis in prop::collection::vec(-10.0f64..10.0, 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states: Vec<PureState> = (0..3).map(|_| random_state(&mut rng, 3)).collect();
        let m = PhaseMixture::new(
            states.into_iter().zip([0.2, 0.3, 0.5]).map(|(s, w)| Branch::new(w, s)).collect(),
        ).unwrap();
        let base = density_of_mixture(&m).unwrap();
        let shifted = density_of_mixture(&m.with_shifted_phases(&phis).unwrap()).unwrap();
        prop_assert!(base.max_abs_diff(&shifted) <= 1e-14);
    }

    #[test]
    fn decoherence_factor_is_bounded_and_conjugate(seed in any::<u64>(), n_bath in 1usize..40, t in -50.0f64..50.0) {
        let spec = DiagonalInteractionSpec::from_model(
            vec![0.0, 0.4, 1.1], n_bath, &CouplingModel::DiagonalGaussian { sigma: 1.3 }, seed,
        ).unwrap();
        let a = decoherence_factor(&spec, 0, 2, t).unwrap();
        prop_assert!(a.norm() <= 1.0 + 1e-14);
        prop_assert!((a - decoherence_factor(&spec, 2, 0, t).unwrap().conj()).norm() <= 1e-15);
    }

    #[test]
    fn spec_documents_round_trip(seed in any::<u64>(), ds in 1usize..4, db in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(&mut rng, ds, db);
        let doc = SpecDocument::from_spec(&spec);
        let back = SpecDocument::from_toml(&doc.to_toml().unwrap()).unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(back.to_spec().unwrap(), spec);
    }

    #[test]
    fn cp_invariant_specs_show_no_apparent_violation(seed in any::<u64>()) {
        let (base, sym) = cp_invariant_spec(seed);
        let d = delta_lambda_direct(&base, 0, KaonToy::K, &sym).unwrap();
        let scale = wwa_matrix(&base, 0).unwrap().lambda.iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(d.value.norm() <= 1e-12 * scale);
    }
}

fn cp_invariant_spec(seed: u64) -> (DecayModelSpec, SymmetryMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let toy = KaonToy { pair_count: 9, cp_phase: 0.0, e0_offset: 0.01, ..KaonToy::default() };
    let (spec, sym) = toy.build(EpsilonMode::Finite { epsilon: None }).unwrap();
    let h1 = sym.cp_symmetrize(&random_hermitian(&mut rng, spec.dim(), 0.02)).unwrap();
    let h = sym.cp_symmetrize(&random_hermitian(&mut rng, spec.dim(), 0.01)).unwrap();
    (spec.with_h1(h1).unwrap().with_interactions(vec![h]).unwrap(), sym)
}

#[test]
fn full_trace_identity_over_many_random_densities() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let (ds, db) = (rng.random_range(1..4), rng.random_range(1..5));
        let rho = random_density(&mut rng, ds * db);
        let reduced = partial_trace_bath(&rho, ds, db).unwrap();
        assert!((reduced.trace() - rho.trace()).norm() <= 1e-12);
    }
}

#[test]
fn sampled_density_converges_to_exact_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 4000;
    for seed in 0..10 {
        let states: Vec<PureState> = (0..3).map(|_| random_state(&mut rng, 3)).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 0.1).collect();
        let total: f64 = w.iter().sum();
        let m = PhaseMixture::new(
            states.into_iter().zip(&w).map(|(s, &x)| Branch::new(x / total, s)).collect(),
        )
        .unwrap();
        let exact = density_of_mixture(&m).unwrap();
        let sampled = sample_density(&m, n, seed).unwrap();
        assert!(exact.max_abs_diff(&sampled) <= 5.0 / (n as f64).sqrt());
    }
}

#[test]
fn reduced_mixture_reproduces_observables() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let spec = random_spec(&mut rng, 2, 4);
        let prop = SupersystemPropagator::new(&spec).unwrap();
        let psi = random_state(&mut rng, 2);
        let t = rng.random::<f64>() * 10.0;
        let branches: Vec<PureState> = (0..4).map(|b| prop.branch_state(&psi, b, t).unwrap()).collect();
        let rho_s = density_of_mixture(&reduce_supersystem_mixture(&branches, prop.weights()).unwrap()).unwrap();
        let full = prop.composite_density(&psi, t).unwrap();
        assert!(rho_s.max_abs_diff(&partial_trace_bath(&full, 2, 4).unwrap()) <= 1e-12);

        let q = random_hermitian(&mut rng, 2, 1.0);
        let direct: f64 = branches
            .iter()
            .zip(prop.weights())
            .map(|(s, &p)| p * s.amplitudes().dotc(&(q.entries() * s.amplitudes())).re)
            .sum();
        assert!((rho_s.expectation(&q).unwrap().re - direct).abs() <= 1e-12);
    }
}

#[test]
fn diagonal_populations_are_constant_under_diagonal_coupling() {
    let spec = DiagonalInteractionSpec::from_model(
        vec![0.0, 0.7],
        12,
        &CouplingModel::DiagonalGaussian { sigma: 0.8 },
        3,
    )
    .unwrap();
    let prop = SupersystemPropagator::new(spec.base()).unwrap();
    let psi = PureState::from_slice(&[c(0.6, 0.0), c(0.0, 0.8)]).unwrap();
    for &t in &[0.0, 1.0, 7.5, 40.0] {
        let rho = partial_trace_bath(&prop.composite_density(&psi, t).unwrap(), 2, 12).unwrap();
        assert!((rho.get(0, 0).re - 0.36).abs() <= 1e-12);
        assert!((rho.get(1, 1).re - 0.64).abs() <= 1e-12);
    }
}

#[test]
fn commutator_with_bath_vanishes_for_bath_diagonal_specs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let spec = random_spec(&mut rng, 3, 4);
        let full = radbath::supersystem::build_full_hamiltonian(&spec).unwrap();
        let bath = radbath::supersystem::bath_operator(&spec).unwrap();
        assert!(radbath::supersystem::bath_commutator_residual(&full, &bath) <= 1e-12);
    }
}
