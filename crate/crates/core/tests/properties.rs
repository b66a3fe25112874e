use leadsync::lti::Polynomial;
use leadsync::network::{assemble_matrices, build_topology, validate_network, Topology, WeightPolicy};
use leadsync::sim::{ScenarioConfig, Simulation};
use leadsync::tuners::{TunerKind, TunerState};
use proptest::prelude::*;

fn poly() -> impl Strategy<Value = Polynomial> {
    prop::collection::vec(-10.0f64..10.0, 1..6).prop_map(Polynomial::new)
}

fn close(a: &Polynomial, b: &Polynomial, tol: f64) -> bool {
    (a - b).max_abs_coeff() <= tol * (1.0 + a.max_abs_coeff().max(b.max_abs_coeff()))
}

proptest! {
    #[test]
    fn product_commutes(a in poly(), b in poly()) {
        prop_assert!(close(&(&a * &b), &(&b * &a), 1e-14));
    }

    #[test]
    fn product_associates(a in poly(), b in poly(), c in poly()) {
        prop_assert!(close(&(&(&a * &b) * &c), &(&a * &(&b * &c)), 1e-12));
    }

    #[test]
    fn sum_commutes_and_distributes(a in poly(), b in poly(), c in poly()) {
        prop_assert!(close(&(&a + &b), &(&b + &a), 0.0));
        prop_assert!(close(&(&a * &(&b + &c)), &(&(&a * &b) + &(&a * &c)), 1e-12));
    }

    #[test]
    fn division_reconstructs(a in poly(), b in poly()) {
        prop_assume!(b.max_abs_coeff() > 1e-3 && b.leading().abs() > 1e-2);
        let (q, r) = a.div_rem(&b);
        prop_assert!(r.degree().unwrap_or(0) < b.degree().unwrap_or(0).max(1));
        prop_assert!(close(&(&(&q * &b) + &r), &a, 1e-8));
    }

    #[test]
    fn built_in_networks_satisfy_invariants(
        m in 1usize..=15,
        kind in prop::sample::select(Topology::BUILT_IN.to_vec()),
        seed in 0u64..1000,
    ) {
        let policy = WeightPolicy { seed, ..WeightPolicy::default() };
        let spec = build_topology(kind, m, &policy).unwrap();
        let mats = assemble_matrices(&spec).unwrap();
        let report = validate_network(&mats);
        prop_assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
        prop_assert!(report.balance_residual <= 1e-12);
        prop_assert!(report.min_laplacian_re > 0.0);
        for i in 0..m {
            let d = mats.a_ell[(i, i)];
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d > 0.0, mats.q_level[i] == 1);
        }
        prop_assert!((0..m).any(|i| mats.a_ell[(i, i)] > 0.0));
    }

    #[test]
    fn edge_list_round_trips(m in 1usize..=9, seed in 0u64..100) {
        let policy = WeightPolicy { seed, ..WeightPolicy::default() };
        let spec = build_topology(Topology::Random, m, &policy).unwrap();
        let back = leadsync::network::parse_edge_list(&spec.to_edge_list(), Some(m)).unwrap();
        prop_assert_eq!(assemble_matrices(&back).unwrap().l_m, assemble_matrices(&spec).unwrap().l_m);
    }
}

fn assert_block_diagonal(state: &TunerState) {
    let parts: Vec<_> = match state {
        TunerState::Gradient { theta } => vec![theta],
        TunerState::Ht1 { theta1, xi1 } => vec![theta1, xi1],
        TunerState::Ht2 { theta2, theta2_dot } => vec![theta2, theta2_dot],
    };
    for b in parts {
        let full = b.to_matrix();
        let p = b.p();
        for r in 0..full.nrows() {
            for c in 0..full.ncols() {
                if r / p != c {
                    assert_eq!(full[(r, c)], 0.0, "off-block entry ({r}, {c})");
                }
            }
        }
        assert!(full.iter().any(|v| *v != 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tuner_states_stay_block_diagonal(
        m in prop::sample::select(vec![1usize, 3, 5]),
        kind in prop::sample::select(TunerKind::ALL.to_vec()),
        topology in prop::sample::select(Topology::BUILT_IN.to_vec()),
    ) {
        let mut cfg = ScenarioConfig::benchmark(topology, m, kind).unwrap();
        cfg.horizon = 0.5;
        cfg.stride = 50;
        cfg.record_states = true;
        let sim = Simulation::new(&cfg).unwrap();
        let traj = sim.run().unwrap();
        let layout = sim.layout();
        for x in traj.states.as_ref().unwrap().iter().skip(1) {
            let st = TunerState::from_flat(kind, layout.p, m, &x.as_slice()[layout.tuner.clone()]).unwrap();
            assert_block_diagonal(&st);
        }
    }
}
