//! Property tests for invariants that span modules.

use std::collections::BTreeMap;

use mdqs::audit::{self, OVERALL};
use mdqs::model::{DimensionId, DimensionVector, EvaluatorProfile, LoggedSample, TaskFamily, WeightConfig};
use mdqs::sim::{
    aggregate, allocate_rewards, run_config, sample_evaluators, update_trust, AttackStrategy, DefenseConfig,
    OracleSpec, QualitySignal, SimConfig, SimData, TrustParams,
};
use mdqs::stats::{pearson, spearman};
use proptest::prelude::*;

fn arb_task() -> impl Strategy<Value = TaskFamily> {
    prop_oneof![
        Just(TaskFamily::QA),
        Just(TaskFamily::Summarization),
        "[a-z]{3,8}".prop_filter("reserved", |s| s != "qa" && s != "summarization").prop_map(TaskFamily::Other),
    ]
}

fn arb_sample() -> impl Strategy<Value = LoggedSample> {
    (
        "[a-z0-9-]{1,12}",
        arb_task(),
        "[a-z0-9-]{1,8}",
        ".{0,40}",
        ".{0,80}",
        proptest::option::of(".{0,40}"),
        proptest::collection::btree_map("[a-z]{1,6}", -1e6f64..1e6, 0..4),
        proptest::option::of(-10f64..10.0),
        proptest::collection::btree_map("[a-z]{1,6}", 0f64..1.0, 0..3),
        proptest::option::of(proptest::collection::vec(0f64..=1.0, 6)),
    )
        .prop_map(|(id, task, producer, query, output, reference, evals, gt, columns, dims)| {
            let mut s = LoggedSample::new(id, task, producer, query, output);
            s.reference = reference;
            s.evaluator_scores = evals;
            s.gt = gt;
            s.columns = columns;
            s.dims = dims.map(|v| DimensionVector::from_values(DimensionId::ALL.iter().copied().zip(v)));
            s
        })
}

proptest! {
    #[test]
    fn sample_json_round_trip(s in arb_sample()) {
        let text = serde_json::to_string(&s).unwrap();
        let back: LoggedSample = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn jsonl_emit_reingest_round_trip(samples in proptest::collection::vec(arb_sample(), 0..8)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        mdqs::ingest::write_jsonl(&path, &samples).unwrap();
        let back = mdqs::ingest::read_jsonl(&path, true).unwrap();
        prop_assert_eq!(back.samples, samples);
        prop_assert!(back.rejected.is_empty());
    }

    #[test]
    fn weight_normalization_is_scale_invariant(
        w in proptest::collection::vec(0.01f64..10.0, 6),
        c in 0.001f64..1000.0,
    ) {
        let a = WeightConfig::new("w", DimensionId::ALL.iter().copied().zip(w.iter().copied())).unwrap();
        let b = WeightConfig::new("w", DimensionId::ALL.iter().copied().zip(w.iter().map(|x| x * c))).unwrap();
        prop_assert!((a.weights().values().sum::<f64>() - 1.0).abs() < 1e-12);
        for d in DimensionId::ALL {
            prop_assert!((a.get(d).unwrap() - b.get(d).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_symmetry_and_invariance(
        xy in proptest::collection::vec((-100f64..100.0, -100f64..100.0), 3..40),
        a in 0.1f64..10.0,
        b in -50f64..50.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        let p = pearson(&x, &y).unwrap();
        prop_assert_eq!(p.is_some(), pearson(&y, &x).unwrap().is_some());
        if let (Some(p), Some(q)) = (p, pearson(&y, &x).unwrap()) {
            prop_assert!((p - q).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&p));
            let affine: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let pa = pearson(&affine, &y).unwrap().unwrap();
            prop_assert!((pa - p).abs() < 1e-9);
        }
        if let Some(s) = spearman(&x, &y).unwrap() {
            let cubed: Vec<f64> = x.iter().map(|v| v * v * v + v).collect();
            let sm = spearman(&cubed, &y).unwrap().unwrap();
            prop_assert!((sm - s).abs() < 1e-12);
            prop_assert!((s - spearman(&y, &x).unwrap().unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn audit_values_bounded_and_n_partitions(
        rows in proptest::collection::vec((0f64..1.0, 0f64..1.0, 0f64..1.0, any::<bool>(), any::<bool>()), 4..40),
    ) {
        let samples: Vec<LoggedSample> = rows
            .iter()
            .enumerate()
            .map(|(i, (z, e, g, qa, has_gt))| {
                let task = if *qa { TaskFamily::QA } else { TaskFamily::Summarization };
                let mut s = LoggedSample::new(format!("s{i}"), task, "p", "q", "o")
                    .with_evaluator("e1", *e)
                    .with_evaluator("e2", 1.0 - e)
                    .with_dims(DimensionVector::from_values([(DimensionId::Semantic, *z)]));
                if *has_gt || i < 2 {
                    s.gt = Some(*g);
                }
                s
            })
            .collect();
        let report = audit::audit(&samples, &BTreeMap::new()).unwrap();
        for r in &report.rows {
            for v in [r.pearson, r.spearman].into_iter().flatten() {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
            }
        }
        let overall = report.dimension(OVERALL, DimensionId::Semantic).unwrap().n;
        let per_task: usize = report
            .blocks
            .iter()
            .filter(|b| b.as_str() != OVERALL)
            .map(|b| report.dimension(b, DimensionId::Semantic).unwrap().n)
            .sum();
        prop_assert_eq!(overall, per_task);
        prop_assert_eq!(overall, samples.iter().filter(|s| s.gt.is_some()).count());
    }
}

fn score_map(v: &[f64]) -> BTreeMap<String, f64> {
    v.iter().enumerate().map(|(i, s)| (format!("e{i:02}"), *s)).collect()
}

fn arb_defense() -> impl Strategy<Value = DefenseConfig> {
    prop_oneof![
        Just(DefenseConfig::Mean),
        Just(DefenseConfig::Median),
        (0f64..0.49).prop_map(|f| DefenseConfig::TrimmedMean { trim_fraction: f }),
        (0.1f64..3.0).prop_map(|lr| DefenseConfig::AdaptiveTrust(TrustParams { learning_rate: lr, floor: None })),
    ]
}

fn arb_attack() -> impl Strategy<Value = AttackStrategy> {
    prop_oneof![
        (0f64..1.0).prop_map(|d| AttackStrategy::Inflate { delta: d }),
        (0f64..1.0).prop_map(|d| AttackStrategy::Deflate { delta: d }),
        Just(AttackStrategy::RandomNoise),
        (0f64..1.0).prop_map(|d| AttackStrategy::Collude { target_producer: "producer_00".into(), delta: d }),
        (0usize..20, 0f64..1.0).prop_map(|(h, d)| AttackStrategy::Camouflage { honest_rounds: h, then_delta: d }),
    ]
}

fn pool(n: usize, noise: f64, costs: &[f64]) -> Vec<EvaluatorProfile> {
    (0..n)
        .map(|i| EvaluatorProfile::honest(format!("e{i:02}"), costs[i % costs.len()], noise))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregate_stays_within_score_range(
        v in proptest::collection::vec(0f64..=1.0, 1..15),
        t in proptest::collection::vec(0.001f64..1.0, 15),
        d in arb_defense(),
    ) {
        let scores = score_map(&v);
        let trust = score_map(&t[..v.len()]);
        let s = aggregate(&scores, &trust, &d).unwrap();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo - 1e-12 <= s && s <= hi + 1e-12);
    }

    #[test]
    fn median_breaks_down_only_past_half(
        n in 3usize..20,
        frac in 0f64..0.49,
        q in 0f64..=1.0,
        delta in 0.01f64..1.0,
        inflate in any::<bool>(),
    ) {
        let k = (frac * n as f64).floor() as usize;
        let shifted = if inflate { (q + delta).min(1.0) } else { (q - delta).max(0.0) };
        let v: Vec<f64> = (0..n).map(|i| if i < k { shifted } else { q }).collect();
        let scores = score_map(&v);
        let trust = score_map(&vec![1.0 / n as f64; n]);
        prop_assert_eq!(aggregate(&scores, &trust, &DefenseConfig::Median).unwrap(), q);
        // trimming exactly k per tail removes every attacker
        let f = (k as f64 + 0.5) / n as f64;
        if 2 * k < n && f < 0.5 {
            let t = aggregate(&scores, &trust, &DefenseConfig::TrimmedMean { trim_fraction: f }).unwrap();
            prop_assert_eq!(t, q);
        }
    }

    #[test]
    fn rewards_conserved_and_nonnegative(
        v in proptest::collection::vec(0f64..=1.0, 1..10),
        budget in 0f64..100.0,
    ) {
        let r = allocate_rewards(&score_map(&v), budget);
        prop_assert!((r.values().sum::<f64>() - budget).abs() <= 1e-9 * budget.max(1.0));
        prop_assert!(r.values().all(|x| *x >= 0.0));
    }

    #[test]
    fn trust_update_stays_on_simplex(
        t in proptest::collection::vec(0.01f64..1.0, 2..12),
        v in proptest::collection::vec(0f64..=1.0, 12),
        reference in 0f64..=1.0,
        lr in 0.01f64..5.0,
    ) {
        let n = t.len();
        let sum: f64 = t.iter().sum();
        let trust = score_map(&t.iter().map(|x| x / sum).collect::<Vec<_>>());
        let floor = 0.01 / n as f64;
        let next = update_trust(&trust, &score_map(&v[..n]), reference, lr, floor);
        prop_assert!((next.values().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(next.values().all(|x| *x >= 0.0));
    }

    #[test]
    fn sampling_respects_budget(
        costs in proptest::collection::vec(0f64..5.0, 1..12),
        budget in 0f64..20.0,
    ) {
        let profiles: Vec<EvaluatorProfile> = costs
            .iter()
            .enumerate()
            .map(|(i, c)| EvaluatorProfile::honest(format!("e{i:02}"), *c, 0.0))
            .collect();
        let trust = score_map(&vec![1.0 / costs.len() as f64; costs.len()]);
        let sel = sample_evaluators(&profiles, &trust, Some(budget));
        let spent: f64 = profiles.iter().filter(|p| sel.contains(&p.evaluator_id)).map(|p| p.cost).sum();
        prop_assert!(spent <= budget + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outcomes_conserve_and_are_deterministic(
        defense in arb_defense(),
        attack in arb_attack(),
        ratio in 0f64..0.6,
        noise in 0f64..0.2,
        budget in proptest::option::of(0f64..15.0),
        overlay in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let world = OracleSpec::spread(4, 6, seed ^ 1);
        let c = SimConfig {
            config_id: "p".into(),
            evaluators: pool(8, noise, &[1.0, 2.0, 3.0]),
            attack: Some(attack),
            attack_ratio: ratio,
            defense,
            trust_overlay: overlay.then(TrustParams::default),
            budget,
            rounds: 30,
            reward_budget: 2.5,
            rng_seed: seed,
            quality_signal: QualitySignal::ConsensusBaseline,
        };
        let a = run_config(&c, SimData::Oracle(&world)).unwrap();
        let b = run_config(&c, SimData::Oracle(&world)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!((a.rewards.values().sum::<f64>() - 75.0).abs() <= 1e-9);
        prop_assert_eq!(a.attackers.len(), (ratio * 8.0 + 1e-9).floor() as usize);
        for t in &a.trust_trajectory {
            prop_assert!((t.values().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(t.values().all(|x| *x >= 0.0));
        }
    }
}
