//! Property tests over randomly generated inputs.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use riskid::fusion::{joint_risk, rank_agents};
use riskid::graphnet::{build_adjacency, gcn_forward, RelationParams};
use riskid::intervene::InterventionResult;
use riskid::metrics::{average_precision, macc, EvalRecord};
use riskid::synthgen::{generate, WorldConfig};
use riskid::types::{iou, BoundingBox, RiskSituation};

fn bbox() -> impl Strategy<Value = BoundingBox> {
    (0.0..500.0f64, 0.0..500.0f64, 1.0..200.0f64, 1.0..200.0f64)
        .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (ab, ba) = (iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn node_order_does_not_change_the_graph_feature(seed in 0u64..1000, swap in 1usize..7) {
        let world = WorldConfig { slots: 8, d: 32, n_agents_range: [2, 7], seed, ..WorldConfig::default() };
        let episode = generate(&world, 1).unwrap().remove(0);
        let params = RelationParams::init(&mut ChaCha8Rng::seed_from_u64(seed), 32, 2);
        let mut permuted = episode.clone();
        for f in &mut permuted.frames {
            f.nodes.swap(1, swap);
        }
        let (g, h) = (gcn_forward(&episode, &params).unwrap().g, gcn_forward(&permuted, &params).unwrap().g);
        for (x, y) in g.iter().zip(&h) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let a = build_adjacency(&episode.frames[0], &params).unwrap().a;
        let b = build_adjacency(&permuted.frames[0], &params).unwrap().a;
        let p = |i: usize| if i == 1 { swap } else if i == swap { 1 } else { i };
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                prop_assert!((a[[i, j]] - b[[p(i), p(j)]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn joint_risk_rises_with_roi_and_falls_with_look(roi in 0.0..=1.0f64, look in 0.0..=1.0f64, d in 0.0..=1.0f64) {
        let base = joint_risk(roi, look).unwrap();
        prop_assert!(joint_risk((roi + d).min(1.0), look).unwrap() >= base);
        prop_assert!(joint_risk(roi, (look + d).min(1.0)).unwrap() <= base);
    }

    #[test]
    fn ranking_is_sorted(scores in prop::collection::btree_map(1i64..50, 0.0..=1.0f64, 1..8), looks in prop::collection::vec(0.0..=1.0f64, 8)) {
        let chosen = *scores.keys().next().unwrap();
        let result = InterventionResult {
            episode: None,
            baseline: [0.5, 0.5],
            scores: scores.clone(),
            chosen,
            chosen_box: BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
        };
        let looks: BTreeMap<i64, f64> = scores.keys().zip(&looks).map(|(k, v)| (*k, *v)).collect();
        let ranked = rank_agents(&result, &looks, 1.0).unwrap();
        prop_assert_eq!(ranked.len(), scores.len());
        for w in ranked.windows(2) {
            prop_assert!(w[0].risk.s_risk >= w[1].risk.s_risk);
        }
    }

    #[test]
    fn macc_ignores_record_order(boxes in prop::collection::vec((bbox(), bbox()), 1..20), seed in 0u64..100) {
        let records: Vec<EvalRecord> = boxes
            .iter()
            .enumerate()
            .map(|(i, (p, t))| EvalRecord {
                episode: i,
                predicted: *p,
                truth: *t,
                situation: RiskSituation::ALL[i % RiskSituation::ALL.len()],
            })
            .collect();
        let mut shuffled = records.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let (a, b) = (macc(&records).unwrap(), macc(&shuffled).unwrap());
        prop_assert_eq!(a.per_situation, b.per_situation);
        prop_assert!((a.overall.macc - b.overall.macc).abs() < 1e-9);
        prop_assert!((0.0..=100.0).contains(&a.overall.macc));
    }

    #[test]
    fn average_precision_is_bounded_and_order_free(pairs in prop::collection::vec((0u8..6, any::<bool>()), 1..30)) {
        prop_assume!(pairs.iter().any(|p| p.1));
        let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let ap = average_precision(&scores, &labels).unwrap();
        prop_assert!(ap > 0.0 && ap <= 1.0);
        let (rs, rl): (Vec<f64>, Vec<bool>) = scores.iter().rev().zip(labels.iter().rev()).unzip();
        prop_assert!((average_precision(&rs, &rl).unwrap() - ap).abs() < 1e-12);
        // Scores that rank every positive first give a perfect result.
        let perfect: Vec<f64> = labels.iter().map(|l| if *l { 1.0 } else { 0.0 }).collect();
        prop_assert_eq!(average_precision(&perfect, &labels).unwrap(), 1.0);
    }
}
