use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use truss_qaoa::bits::Bitstring;
use truss_qaoa::design::{run, DesignState, LoopConfig, run_iteration};
use truss_qaoa::encoding::{
    brute_force_minimum, build_qubo, decode_slack, decode_updaters, qubo_to_ising, EncodingConfig,
    QuboProblem, VariableRegistry,
};
use truss_qaoa::fem::{assemble_and_solve, assemble_global, element_stiffness, TrussModel};
use truss_qaoa::harness::fmt_num;
use truss_qaoa::qaoa::{
    apply_mixer, apply_phase_separator, cost_table, evolve, run_on_energies, sample,
    QaoaSchedule, StateVector,
};

fn qubo_strategy(max_n: usize) -> impl Strategy<Value = QuboProblem> {
    (1..=max_n).prop_flat_map(|n| {
        (
            -5.0..5.0f64,
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n * n),
        )
            .prop_map(move |(c, lin, quad)| {
                let mut q = QuboProblem::new(n);
                q.constant = c;
                for (i, v) in lin.iter().enumerate() {
                    q.add_linear(i, *v);
                }
                for i in 0..n {
                    for j in i + 1..n {
                        q.add_quadratic(i, j, quad[i * n + j]);
                    }
                }
                q
            })
    })
}

fn state_strategy(max_n: usize) -> impl Strategy<Value = StateVector> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1 << n).prop_map(|raw| {
            let amps: Vec<Complex64> = raw.iter().map(|&(r, i)| Complex64::new(r, i)).collect();
            let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt().max(1e-12);
            StateVector::from_amplitudes(amps.iter().map(|a| a / norm).collect()).unwrap()
        })
    })
}

fn case1_qubo(strain_scale: &[f64], lambda: f64) -> QuboProblem {
    let model = TrussModel::case1();
    let areas = model.uniform_areas();
    let mut fem = assemble_and_solve(&model, &areas).unwrap();
    for (w, s) in fem.rod_strain_energy.iter_mut().zip(strain_scale) {
        *w *= s;
    }
    let config = EncodingConfig::with_lambda(lambda);
    let registry = VariableRegistry::new(&[0, 1, 2, 3, 4, 5], &config);
    build_qubo(&model, &fem, &areas, &config, model.volume_budget, &registry).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ising_and_qubo_energies_agree(q in qubo_strategy(10), seed in any::<u64>()) {
        let ising = qubo_to_ising(&q);
        let n = q.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let strings: Vec<u64> = if n <= 10 && (1u64 << n) <= 1000 {
            (0..1u64 << n).collect()
        } else {
            (0..1000).map(|_| rand::Rng::gen_range(&mut rng, 0..1u64 << n)).collect()
        };
        for x in strings {
            let a = q.evaluate_index(x);
            let b = ising.energy_index(x);
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn energy_table_matches_evaluation(q in qubo_strategy(10)) {
        let table = q.energy_table().unwrap();
        for (x, e) in table.iter().enumerate() {
            prop_assert!((e - q.evaluate_index(x as u64)).abs() <= 1e-10 * (1.0 + e.abs()));
        }
        prop_assert_eq!(table[0], q.constant);
    }

    #[test]
    fn brute_force_is_a_lower_bound(q in qubo_strategy(9)) {
        let (bits, e) = brute_force_minimum(&q).unwrap();
        prop_assert_eq!(q.evaluate(&bits), e);
        for x in 0..1u64 << q.n() {
            prop_assert!(q.evaluate_index(x) >= e - 1e-9);
        }
    }

    #[test]
    fn decoded_values_stay_in_range(index in 0..1u64 << 14, seed in any::<u64>()) {
        let config = EncodingConfig::default();
        let registry = VariableRegistry::new(&[0, 1, 2, 3, 4, 5], &config);
        let bits = Bitstring::new(index, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for a in decode_updaters(&bits, &registry, &config, &mut rng) {
            prop_assert!(a > 0.0 && a <= config.theta + 1e-12);
        }
        let s = decode_slack(&bits, &registry, &config);
        prop_assert!((0.0..=1.0 + 1e-15).contains(&s));
    }

    #[test]
    fn more_strain_energy_never_raises_linear_terms(rod in 0usize..6, factor in 1.0..10.0f64) {
        let base = case1_qubo(&[1.0; 6], 0.5);
        let mut scale = [1.0; 6];
        scale[rod] = factor;
        let boosted = case1_qubo(&scale, 0.5);
        for d in 0..2 {
            let q = 2 * rod + d;
            prop_assert!(boosted.linear[q] <= base.linear[q] + 1e-15);
        }
    }

    #[test]
    fn gates_preserve_norm(
        state in state_strategy(6),
        angles in prop::collection::vec((-4.0..4.0f64, -4.0..4.0f64), 8),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table: Vec<f64> = (0..state.amplitudes().len())
            .map(|_| rand::Rng::gen_range(&mut rng, -3.0..3.0))
            .collect();
        let mut s = state.clone();
        for (g, b) in angles {
            apply_phase_separator(&mut s, &table, g).unwrap();
            apply_mixer(&mut s, b);
            prop_assert!((s.norm_sqr() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn phase_separators_compose(state in state_strategy(5), g1 in -3.0..3.0f64, g2 in -3.0..3.0f64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table: Vec<f64> = (0..state.amplitudes().len())
            .map(|_| rand::Rng::gen_range(&mut rng, -3.0..3.0))
            .collect();
        let mut a = state.clone();
        apply_phase_separator(&mut a, &table, g1).unwrap();
        apply_phase_separator(&mut a, &table, g2).unwrap();
        let mut b = state.clone();
        apply_phase_separator(&mut b, &table, g1 + g2).unwrap();
        for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
            prop_assert!((x - y).norm() <= 1e-10);
        }
    }

    #[test]
    fn expectation_shifts_with_constant(
        energies in prop::collection::vec(-5.0..5.0f64, 16),
        shift in -100.0..100.0f64,
        gammas in prop::collection::vec(0.0..2.0f64, 3),
        betas in prop::collection::vec(0.0..2.0f64, 3),
    ) {
        let schedule = QaoaSchedule::new(gammas, betas).unwrap();
        let shifted: Vec<f64> = energies.iter().map(|e| e + shift).collect();
        let a = evolve(&cost_table(&energies), &schedule).unwrap().expectation(&energies);
        let b = evolve(&cost_table(&shifted), &schedule).unwrap().expectation(&shifted);
        prop_assert!((b - (a + shift)).abs() <= 1e-9 * (1.0 + shift.abs()));
    }

    #[test]
    fn sampling_is_deterministic(state in state_strategy(6), seed in any::<u64>()) {
        let a = sample(&state, 2000, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = sample(&state, 2000, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(a.counts.values().sum::<u64>(), 2000);
        prop_assert!(a.counts.keys().all(|k| k.len() == state.n()));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn scaling_an_area_scales_its_stiffness(rod in 0usize..6, alpha in 0.01..5.0f64) {
        let model = TrussModel::case1();
        let base = element_stiffness(&model.rods[rod], model.initial_area, model.young_modulus).unwrap();
        let scaled = element_stiffness(&model.rods[rod], alpha * model.initial_area, model.young_modulus).unwrap();
        for (a, b) in base.iter().zip(scaled.iter()) {
            prop_assert!((alpha * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        let mut areas = model.uniform_areas();
        let k0 = assemble_global(&model, &areas).unwrap();
        areas[rod] *= alpha;
        let k1 = assemble_global(&model, &areas).unwrap();
        let ke = (alpha - 1.0) * base;
        let dofs = model.rods[rod].dofs();
        let mut expected = k0.clone();
        for p in 0..4 {
            for q in 0..4 {
                expected[(dofs[p], dofs[q])] += ke[(p, q)];
            }
        }
        prop_assert!((k1 - expected).abs().max() <= 1e-12 * k0.abs().max());
    }

    #[test]
    fn uniform_area_scaling_scales_compliance(factor in 0.1..10.0f64, case2 in any::<bool>()) {
        let model = if case2 { TrussModel::case2() } else { TrussModel::case1() };
        let areas = model.uniform_areas();
        let c0 = assemble_and_solve(&model, &areas).unwrap();
        let scaled: Vec<f64> = areas.iter().map(|a| a * factor).collect();
        let c1 = assemble_and_solve(&model, &scaled).unwrap();
        prop_assert!(((c1.compliance * factor - c0.compliance) / c0.compliance).abs() <= 1e-8);
        let total: f64 = c1.rod_strain_energy.iter().sum();
        prop_assert!(((total - c1.compliance) / c1.compliance).abs() <= 1e-8);
    }

    #[test]
    fn csv_numbers_round_trip(x in prop::num::f64::NORMAL) {
        let s = fmt_num(x);
        let back: f64 = s.parse().unwrap();
        prop_assert_eq!(fmt_num(back), s.clone());
        prop_assert!(((back - x) / x).abs() <= 1e-14);
    }

    #[test]
    fn sampled_mean_tracks_exact_expectation(
        energies in prop::collection::vec(-5.0..5.0f64, 32),
        seed in any::<u64>(),
    ) {
        let schedule = QaoaSchedule::new(vec![0.4, 0.9], vec![0.8, 0.3]).unwrap();
        let shots = 20_000u64;
        let r = run_on_energies(&energies, &schedule, shots, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let range = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - energies.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!((r.expectation - r.exact_expectation).abs() <= 5.0 * range / (shots as f64).sqrt());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn areas_follow_product_of_updaters(seed in 0u64..1_000_000) {
        let model = TrussModel::case1();
        let config = LoopConfig { seed, max_iterations: 12, shots: 20_000, ..LoopConfig::default() };
        let outcome = run(&model, &config).unwrap();
        let state = &outcome.state;
        for e in 0..model.rods.len() {
            let product: f64 = state.updater_history.iter().filter_map(|row| row[e]).product();
            let expected = model.initial_area * product;
            prop_assert!(((state.areas[e] - expected) / expected).abs() <= 1e-12);
            // Once frozen, a rod receives no further updates.
            if let Some(at) = state.frozen_at[e] {
                prop_assert!(state.updater_history[at + 1..].iter().all(|row| row[e].is_none()));
                prop_assert!(!state.active[e]);
            }
        }
        let used: Vec<usize> = state.records.iter().map(|r| r.qubits_used).collect();
        prop_assert!(used.windows(2).all(|w| w[1] <= w[0]));
        for r in &state.records {
            prop_assert_eq!(r.qubits_used, 2 * r.active_rods.len() + 2);
            prop_assert!(r.volume_ratio > 0.0);
        }
    }

    #[test]
    fn heavy_penalty_caps_the_volume(seed in 0u64..1_000_000) {
        let model = TrussModel::case1();
        let lambda = 0.5e3;
        let config = LoopConfig {
            seed,
            encoding: EncodingConfig::with_lambda(lambda),
            ..LoopConfig::default()
        };
        let mut state = DesignState::new(&model);
        let max_share = model.rods.iter().map(|r| r.length() * model.initial_area).fold(0.0, f64::max)
            / model.volume_budget;
        for _ in 0..4 {
            let (next, record) = run_iteration(&state, &model, &config).unwrap();
            prop_assert!(record.volume_ratio <= 1.0 + config.encoding.theta * max_share);
            state = next;
        }
    }
}

#[test]
fn unconstrained_objective_picks_largest_updaters() {
    let qubo = case1_qubo(&[1.0; 6], 0.0);
    let (bits, _) = brute_force_minimum(&qubo).unwrap();
    // The zero-load vertical is indifferent; every other rod takes both digits.
    for q in 2..12 {
        assert!(bits.bit(q), "qubit {q} in {bits}");
    }
}
