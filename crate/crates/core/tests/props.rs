mod common;

use std::collections::BTreeMap;

use kgloop_core::attention::{normalize_transitions, transition_score};
use kgloop_core::detector::{DetectorConfig, DetectorParams, Vocab};
use kgloop_core::expand::{ReviewDecision, ReviewQueue, ReviewState};
use kgloop_core::importance::{brute_force_best_path, class_hop_from_counts, TransitionGraph};
use kgloop_core::kg::{parse_snapshot, snapshot_string, FactorClass};
use kgloop_core::refine::{matching_weight, penalty, plausibility};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matching_weights_form_a_distribution(
        scores in prop::collection::vec(-20.0f64..20.0, 1..12),
        tau in 0.05f64..50.0,
    ) {
        let w = matching_weight(&scores, tau).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn penalties_stay_in_the_unit_interval_and_order_by_plausibility(
        pos in 0u64..50, neg in 0u64..50, extra in 1u64..20, w_s in 0.001f64..1.0,
    ) {
        prop_assume!(pos + neg > 0);
        let p = plausibility(pos, neg).unwrap();
        let more = plausibility(pos, neg + extra).unwrap();
        prop_assert!((0.0..=1.0).contains(&penalty(p, w_s)));
        if pos > 0 {
            prop_assert!(penalty(more, w_s) > penalty(p, w_s));
        }
    }

    #[test]
    fn transition_scores_normalise_and_grow(
        gamma in 0.0f64..0.9, n in 1u64..30, c in 1u64..500,
        raw in prop::collection::vec(0.001f64..100.0, 1..10),
    ) {
        let base = transition_score(gamma, n, c).unwrap();
        prop_assert!(transition_score(gamma + 0.1, n, c).unwrap() > base);
        prop_assert!(transition_score(gamma, n, c + 1).unwrap() > base);
        let p = normalize_transitions(&raw).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn class_hops_sum_to_one(counts in prop::collection::vec(0u64..1000, 5)) {
        let map: BTreeMap<FactorClass, u64> = FactorClass::ALL.iter().copied().zip(counts).collect();
        let hops = class_hop_from_counts(&map, &BTreeMap::new());
        prop_assert!((hops.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn snapshots_round_trip(seed in 0u64..1000, n in 1usize..15, p in 0.0f64..0.8) {
        let kg = common::random_graph(seed, n, p);
        let text = snapshot_string(&kg);
        prop_assert_eq!(snapshot_string(&parse_snapshot("s", &text).unwrap()), text);
    }

    #[test]
    fn best_paths_are_probability_products(seed in 0u64..500, n in 3usize..9) {
        let kg = common::random_graph(seed, n, 0.4);
        let model = common::random_model(&kg, seed);
        let tg = TransitionGraph::build(&kg, &model, &BTreeMap::new()).unwrap();
        for e in kg.factor_entities() {
            let path = brute_force_best_path(&tg, &e.id, 5).unwrap();
            prop_assert!(path.r_path > 0.0 && path.r_path <= 1.0);
            let prod: f64 = path.hop_scores.iter().product();
            prop_assert!((prod - path.r_path).abs() < 1e-12);
            let shorter = brute_force_best_path(&tg, &e.id, 2).unwrap();
            prop_assert!(path.r_path >= shorter.r_path);
        }
    }

    #[test]
    fn pooling_ignores_weight_scale(seed in 0u64..500, k in 1usize..5, scale in 0.01f64..100.0) {
        use rand::Rng;
        let mut r = common::rng(seed);
        let cfg = DetectorConfig { d_tok: 4, hidden_cls: 5, ..DetectorConfig::default() };
        let p = DetectorParams::<f64>::init(Vocab::default(), 3, &cfg, &mut r).unwrap();
        let fused: Vec<Vec<f64>> = (0..k).map(|_| (0..4).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let w: Vec<f64> = (0..k).map(|_| r.gen_range(0.01..1.0)).collect();
        let scaled: Vec<f64> = w.iter().map(|x| x * scale).collect();
        let a = p.classify(&fused, &w).unwrap();
        let b = p.classify(&fused, &scaled).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn approval_needs_two_distinct_yes_verdicts(
        votes in prop::collection::vec((0usize..3, 0usize..4, any::<bool>(), any::<bool>()), 0..20),
    ) {
        let mut q = ReviewQueue::new();
        for i in 0..3 {
            q.add(candidate(i)).unwrap();
        }
        for (c, r, q1, q2) in votes {
            let _ = q.post(ReviewDecision {
                candidate_id: format!("c1-{c:03}"),
                reviewer_id: format!("r{r}"),
                q1_relevant: q1,
                q2_relation_ok: q2,
                timestamp: "2024-01-01T00:00:00Z".into(),
            });
        }
        for c in q.candidates() {
            let verdicts: Vec<_> = q.verdicts(&c.id).collect();
            prop_assert!(verdicts.len() <= 2);
            let approved = verdicts.len() == 2
                && verdicts[0].reviewer_id != verdicts[1].reviewer_id
                && verdicts.iter().all(|v| v.yes());
            prop_assert_eq!(c.review_state == ReviewState::Approved, approved);
        }
        let replayed = ReviewQueue::replay(q.candidates().cloned(), q.log()).unwrap();
        prop_assert_eq!(replayed, q);
    }
}

fn candidate(i: usize) -> kgloop_core::expand::CandidateTriplet {
    use kgloop_core::expand::{CandidateTriplet, Endpoint, Scenario};
    use kgloop_core::kg::RelationKind;
    CandidateTriplet {
        id: format!("c1-{i:03}"),
        period: 1,
        scenario: Scenario::Iii,
        surface: format!("new thing {i}"),
        class: FactorClass::PsySym,
        new_category_flag: false,
        relation: RelationKind::Subcat,
        endpoint: Endpoint::ClassNode { class: FactorClass::PsySym },
        pos_count: 3,
        neg_count: 0,
        mention_pos: 3,
        mention_neg: 0,
        provenance: Vec::new(),
        review_state: ReviewState::Pending,
    }
}
