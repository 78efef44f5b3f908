use proptest::prelude::*;

use dialign::adapter::{decode_checkpoint, encode_checkpoint, LinearAdapter};
use dialign::dataset::{split_dataset, DialectId, PairSet, PromptPair, PromptStyle, SplitRatios};
use dialign::embedding_store::{decode_emb, encode_emb, read_store, write_store, EmbeddingKind, EmbeddingStore};
use dialign::evaluation::{
    dialect_drop, pair_drop, pearson_r, scale_human_scores, AggregationMode, GenerationScores, Metric, PairScores,
    Variant,
};
use dialign::losses::{kl_divergence, mean_cosine_distance, softmax};
use dialign::optim::{adamw_update, cosine_annealed_lr, AdamWParams, OptimizerState};
use dialign::synthetic::{SyntheticSpec, SyntheticTask};
use dialign::trainer::{train, TrainerConfig};

fn scores(id: &str, variant: Variant, samples: Vec<f64>) -> GenerationScores {
    GenerationScores {
        pair_id: id.to_string(),
        variant,
        metric: Metric::VqaScore,
        samples,
    }
}

fn pair_set(pairs: &[(Vec<f64>, Vec<f64>)]) -> Vec<PairScores> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, (s, d))| {
            let id = format!("p{i}");
            PairScores {
                dialect: DialectId::new("AAE"),
                sae: scores(&id, Variant::Sae, s.clone()),
                dialect_scores: scores(&id, Variant::Dialect, d.clone()),
            }
        })
        .collect()
}

fn scaled(pairs: &[PairScores], c: f64) -> Vec<PairScores> {
    pairs
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.sae.samples.iter_mut().for_each(|x| *x *= c);
            q.dialect_scores.samples.iter_mut().for_each(|x| *x *= c);
            q
        })
        .collect()
}

fn score_pairs() -> impl Strategy<Value = Vec<(Vec<f64>, Vec<f64>)>> {
    prop::collection::vec(
        (1usize..5).prop_flat_map(|n| {
            (
                prop::collection::vec(0.05f64..1.0, n),
                prop::collection::vec(0.0f64..1.0, n),
            )
        }),
        1..8,
    )
}

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
}

fn modes() -> impl Strategy<Value = AggregationMode> {
    prop_oneof![
        Just(AggregationMode::RatioOfAverages),
        Just(AggregationMode::MeanOfPairDrops)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_ignores_constant_shift(v in prop::collection::vec(-20.0f64..20.0, 1..12), c in -50.0f64..50.0) {
        let p = softmax(&v).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let q = softmax(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_self(a in prop::collection::vec(-5.0f64..5.0, 2..10), seed in any::<u64>()) {
        let p = softmax(&a).unwrap();
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x * ((seed >> (i % 60)) & 1) as f64 - 1.0).collect();
        let q = softmax(&b).unwrap();
        prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn cosine_distance_is_bounded(rows in (1usize..6, 1usize..8).prop_flat_map(|(n, d)| {
        (prop::collection::vec(vector(d), n), prop::collection::vec(vector(d), n))
    })) {
        let l = mean_cosine_distance(&rows.0, &rows.1).unwrap();
        prop_assert!((0.0..=2.0).contains(&l.value));
    }

    #[test]
    fn drop_is_scale_invariant(pairs in score_pairs(), mode in modes(), c in prop_oneof![Just(0.1), Just(3.0), Just(100.0)]) {
        let base = pair_set(&pairs);
        let a = dialect_drop(&base, mode).unwrap().percent / 100.0;
        let b = dialect_drop(&scaled(&base, c), mode).unwrap().percent / 100.0;
        prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn pair_drop_is_at_most_one(s in prop::collection::vec(0.01f64..10.0, 1..5), d in prop::collection::vec(0.0f64..10.0, 1..5)) {
        let r = pair_drop(&scores("p", Variant::Sae, s), &scores("p", Variant::Dialect, d)).unwrap();
        prop_assert!(r <= 1.0);
    }

    #[test]
    fn raising_dialect_scores_never_raises_drop(pairs in score_pairs(), mode in modes(), bump in 0.0f64..0.5, k in any::<prop::sample::Index>()) {
        let base = pair_set(&pairs);
        let mut raised = base.clone();
        let i = k.index(raised.len());
        raised[i].dialect_scores.samples.iter_mut().for_each(|x| *x += bump);
        let before = dialect_drop(&base, mode).unwrap().percent;
        let after = dialect_drop(&raised, mode).unwrap().percent;
        prop_assert!(after <= before + 1e-12);
    }

    #[test]
    fn human_scaling_leaves_drop_unchanged(pairs in prop::collection::vec((0.5f64..10.0, 0.0f64..10.0), 1..8), mode in modes()) {
        let raw: Vec<(Vec<f64>, Vec<f64>)> = pairs.iter().map(|(s, d)| (vec![*s], vec![*d])).collect();
        let base = pair_set(&raw);
        let human: Vec<PairScores> = base
            .iter()
            .map(|p| PairScores {
                dialect: p.dialect.clone(),
                sae: scale_human_scores(&p.sae).unwrap(),
                dialect_scores: scale_human_scores(&p.dialect_scores).unwrap(),
            })
            .collect();
        let a = dialect_drop(&base, mode).unwrap().percent;
        let b = dialect_drop(&human, mode).unwrap().percent;
        prop_assert!((a - b).abs() <= 1e-10);
    }

    #[test]
    fn pearson_is_affine_invariant(xy in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..20), a in 0.1f64..5.0, b in -5.0f64..5.0) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        prop_assume!(pearson_r(&x, &y).is_ok());
        let r = pearson_r(&x, &y).unwrap();
        let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let r2 = pearson_r(&x2, &y).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert!((r - r2).abs() <= 1e-9);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert!((pearson_r(&neg, &y).unwrap() + r).abs() <= 1e-9);
    }

    #[test]
    fn schedule_is_monotone_and_bounded(epochs in 2usize..100, lr0 in 1e-6f64..1.0, frac in 0.0f64..1.0) {
        let lr_min = lr0 * frac;
        let lrs: Vec<f64> = (0..epochs).map(|e| cosine_annealed_lr(e, epochs, lr0, lr_min).unwrap()).collect();
        prop_assert!((lrs[0] - lr0).abs() <= 1e-15);
        prop_assert!((lrs[epochs - 1] - lr_min).abs() <= 1e-12);
        for w in lrs.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn adam_step_bounded_by_lr_for_steady_magnitudes(
        n in 1usize..6,
        steps in 1usize..40,
        mag in 1e-3f64..10.0,
        signs in any::<u64>(),
        lr in 1e-5f64..1e-1,
    ) {
        let hp = AdamWParams::default();
        let mut params = vec![0.5; n];
        let mut state = OptimizerState::new(n);
        for t in 0..steps {
            let grads: Vec<f64> = (0..n)
                .map(|k| if (signs >> ((t * n + k) % 64)) & 1 == 1 { mag } else { -mag })
                .collect();
            let before = params.clone();
            adamw_update(&mut params, &grads, &mut state, lr, &hp, |k| format!("x{k}")).unwrap();
            for (a, b) in params.iter().zip(&before) {
                prop_assert!((a - b).abs() <= lr * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn split_is_deterministic_with_floor_sizes(n in 1usize..200, seed in any::<u64>()) {
        let pairs = PairSet::new((0..n).map(pair).collect()).unwrap();
        let a = split_dataset(&pairs, SplitRatios::DEFAULT, seed).unwrap();
        let b = split_dataset(&pairs, SplitRatios::DEFAULT, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let (tr, va, te) = a.sizes();
        prop_assert_eq!(tr + va + te, n);
        prop_assert_eq!(va, n / 10);
        prop_assert_eq!(te, n / 10);
    }

    #[test]
    fn store_round_trips_bit_exact(
        store in (1usize..10, 1usize..6).prop_flat_map(|(dim, count)| {
            prop::collection::vec(vector(dim), count).prop_map(move |rows| (dim, rows))
        }),
        image in any::<bool>(),
    ) {
        let (dim, rows) = store;
        let kind = if image { EmbeddingKind::Image } else { EmbeddingKind::Text };
        let ids = (0..rows.len()).map(|i| format!("id-{i}")).collect();
        let s = EmbeddingStore::from_rows(ids, kind, dim, &rows).unwrap();
        let bytes = encode_emb(s.matrix());
        prop_assert_eq!(&decode_emb(&bytes).unwrap(), s.matrix());
        let dir = tempfile::tempdir().unwrap();
        write_store(&s, dir.path().join("s")).unwrap();
        prop_assert_eq!(read_store(dir.path().join("s")).unwrap(), s);
    }

    #[test]
    fn adapter_round_trips_bit_exact(dim in 1usize..8, seed in any::<u64>()) {
        let vals: Vec<f64> = (0..dim * dim + dim)
            .map(|k| f64::from_bits(seed.rotate_left(k as u32) >> 12 | 0x3ff0_0000_0000_0000) - 1.5)
            .collect();
        let a = LinearAdapter::from_parts(dim, vals[..dim * dim].to_vec(), vals[dim * dim..].to_vec()).unwrap();
        let back = decode_checkpoint(&encode_checkpoint(&a), Some(dim)).unwrap();
        prop_assert_eq!(back, a);
    }
}

fn pair(i: usize) -> PromptPair {
    PromptPair {
        id: format!("q{i:03}"),
        dialect: DialectId::new("InE"),
        lexeme_sae: format!("s{i}"),
        lexeme_dialect: format!("d{i}"),
        sae_prompt: format!("a photo of a s{i}"),
        dialect_prompt: format!("a photo of a d{i}"),
        polysemy_prompt: None,
        style: PromptStyle::Concise,
    }
}

#[test]
fn best_epoch_is_earliest_minimum_of_validation_total() {
    let task = SyntheticTask::generate(&SyntheticSpec {
        dim: 8,
        pairs: 40,
        anchors: 8,
        shift: 0.3,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let data = task.training_data().unwrap();
    for (seed, lr) in [(1, 1e-2), (2, 5e-2), (3, 1e-3)] {
        let config = TrainerConfig {
            learning_rate: lr,
            epochs: 6,
            batch_size: 8,
            anchor_count: 8,
            seed,
            ..TrainerConfig::default()
        };
        let r = train(&config, &data, &task.anchors, None).unwrap();
        let totals: Vec<f64> = r.history.iter().map(|h| h.val.total).collect();
        let min = totals.iter().cloned().fold(f64::INFINITY, f64::min);
        let first = totals.iter().position(|t| *t == min).unwrap();
        assert_eq!(r.best_epoch, first);
    }
}
