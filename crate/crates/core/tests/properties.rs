//! Randomized invariant checks across the public surface.

use proptest::prelude::*;

use vcspread::analysis::check_send_log;
use vcspread::engine::{run, SimConfig};
use vcspread::protocols::{pop_uniform, PhaseKind, PhasePlan, Protocol, RankDistribution};
use vcspread::rng::Stream;
use vcspread::topology::{build_gnk, diameter, vertex_connectivity};

fn protocol_strategy() -> impl Strategy<Value = Protocol> {
    prop_oneof![
        Just(Protocol::Uniform),
        Just(Protocol::Ranking),
        Just(Protocol::RankingShuffle),
    ]
}

proptest! {
    #[test]
    fn rank_weights_sum_to_one_and_decrease(b in 1usize..2000) {
        let dist = RankDistribution::from_ordered((0..b as u32).collect());
        let w = dist.weights();
        let sum: f64 = w.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(w.windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn sampling_drains_without_repeats(b in 1usize..200, seed in any::<u64>()) {
        let mut dist = RankDistribution::from_ordered((0..b as u32).collect());
        let mut rng = Stream::from_seed(seed);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..b {
            let got = dist.sample_and_nullify(&mut rng).unwrap();
            prop_assert!(seen.insert(got), "repeated {got}");
        }
        prop_assert!(dist.sample_and_nullify(&mut rng).is_none());
    }

    #[test]
    fn pop_uniform_is_a_permutation(len in 1usize..100, seed in any::<u64>()) {
        let mut buffer: Vec<u32> = (0..len as u32).collect();
        let mut rng = Stream::from_seed(seed);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..len {
            let got = pop_uniform(&mut buffer, &mut rng).unwrap();
            prop_assert!(seen.insert(got));
        }
        prop_assert!(buffer.is_empty());
    }

    #[test]
    fn clique_chain_connectivity_and_diameter(chains in 1usize..8, k in 2usize..7) {
        let n = chains * k;
        let topo = build_gnk(n, k).unwrap();
        let expected_conn = if chains == 1 { k - 1 } else { k };
        prop_assert_eq!(vertex_connectivity(&topo).unwrap(), expected_conn);
        let expected_diam = if chains == 1 { 1 } else { chains };
        prop_assert_eq!(diameter(&topo).unwrap(), expected_diam);
    }

    #[test]
    fn boundaries_mark_exactly_the_phase_changes(
        n in 2usize..300,
        alpha in 0.5f64..4.0,
        d in 0.01f64..2.0,
        with_shuffle in any::<bool>(),
    ) {
        let plan = PhasePlan::derive(n, alpha, d, with_shuffle);
        let horizon = (plan.ranking_start(4) + 2).min(20_000);
        for t in 1..horizon {
            let changed = plan.phase_at(t) != plan.phase_at(t - 1);
            match plan.boundary_at(t) {
                Some(kind) => {
                    prop_assert!(changed, "boundary at {t} without phase change");
                    prop_assert_eq!(kind, plan.phase_at(t));
                }
                None => prop_assert!(!changed, "phase change at {t} without boundary"),
            }
        }
    }

    #[test]
    fn runs_are_deterministic(
        protocol in protocol_strategy(),
        seed in any::<u64>(),
        q in prop_oneof![Just(0.0), Just(0.01)],
    ) {
        let topo = build_gnk(8, 4).unwrap();
        let mut cfg = SimConfig::new(protocol, 8, 4);
        cfg.seed = seed;
        cfg.q = q;
        cfg.horizon = Some(1_000);
        cfg.record_sends = true;
        let a = run(cfg.clone(), &topo).unwrap();
        let b = run(cfg, &topo).unwrap();
        prop_assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn replay_oracles_hold_on_random_runs(
        protocol in protocol_strategy(),
        seed in any::<u64>(),
        q in prop_oneof![Just(0.0), Just(0.005)],
    ) {
        let topo = build_gnk(12, 4).unwrap();
        let mut cfg = SimConfig::new(protocol, 12, 4);
        cfg.seed = seed;
        cfg.q = q;
        cfg.horizon = Some(2_000);
        cfg.record_sends = true;
        cfg.record_snapshots = true;
        let trace = run(cfg, &topo).unwrap();
        let report = check_send_log(&trace, &topo).unwrap();
        prop_assert!(report.clean(), "{report:?}");
    }

    #[test]
    fn edge_list_round_trips(chains in 1usize..6, k in 2usize..6) {
        let topo = build_gnk(chains * k, k).unwrap();
        let text = topo.to_edge_list();
        let back = vcspread::topology::Topology::from_edge_list(&text).unwrap();
        prop_assert_eq!(back.to_edge_list(), text);
    }

    #[test]
    fn phase_ordinals_never_decrease(t in 0u64..50_000) {
        let plan = PhasePlan::derive(64, 2.0, 1.0, true);
        let ord = |kind: PhaseKind| match kind {
            PhaseKind::Round0 => 0u64,
            PhaseKind::Random => 1,
            PhaseKind::Ranking(p) => 2 * p as u64,
            PhaseKind::Shuffle(p) => 2 * p as u64 + 1,
        };
        prop_assert!(ord(plan.phase_at(t)) <= ord(plan.phase_at(t + 1)));
    }
}
