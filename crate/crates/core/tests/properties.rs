use std::collections::BTreeSet;

use convo_core::gc::{clip_gc, GcConfig, MotionSeries};
use convo_core::ml::metrics::{balanced_accuracy, confusion_matrix, roc_auc};
use convo_core::session::{BinaryLabel, EventKind, RatingRecord};
use convo_core::survey::{aggregate_and_binarize, filter_reliable_raters, pearson_r};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

fn rating(rater: usize, clip: usize, fluidity: u8, reliability: bool) -> RatingRecord {
    RatingRecord {
        rater_id: format!("r{rater}"),
        clip_id: format!("c{clip}"),
        fluidity,
        enjoyment: fluidity,
        event: EventKind::None,
        is_reliability_block: reliability,
    }
}

proptest! {
    #[test]
    fn auc_ignores_monotone_transforms((scores, y) in scored()) {
        let warped: Vec<f64> = scores.iter().map(|s| (0.7 * s).exp() * 3.0 - 2.0).collect();
        match (roc_auc(&scores, &y), roc_auc(&warped, &y)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn auc_complements_under_label_flip((scores, y) in scored()) {
        let flipped: Vec<bool> = y.iter().map(|v| !v).collect();
        if let (Some(a), Some(b)) = (roc_auc(&scores, &y), roc_auc(&scores, &flipped)) {
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_predictor_balanced_accuracy(k in 2usize..5, counts in prop::collection::vec(1usize..20, 4)) {
        let y_true: Vec<usize> = (0..k).flat_map(|c| std::iter::repeat_n(c, counts[c])).collect();
        let y_pred = vec![0; y_true.len()];
        let ba = balanced_accuracy(&confusion_matrix(&y_true, &y_pred, k));
        prop_assert!((ba - 1.0 / k as f64).abs() < 1e-12);
    }

    #[test]
    fn pearson_is_symmetric_and_bounded(x in prop::collection::vec(-10.0f64..10.0, 3..20), seed in any::<u64>()) {
        let mut y = x.clone();
        y.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        if let Some(r) = pearson_r(&x, &y) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            prop_assert_eq!(Some(r), pearson_r(&y, &x));
        }
    }

    #[test]
    fn raising_a_rating_never_lowers_the_label(
        scores in prop::collection::vec(1u8..=5, 4..8),
        bump in 0usize..8,
    ) {
        let base: Vec<RatingRecord> = scores.iter().enumerate().map(|(r, &s)| rating(r, 0, s, false)).collect();
        let mut raised = base.clone();
        let i = bump % raised.len();
        raised[i].fluidity = (raised[i].fluidity + 1).min(5);
        let before = aggregate_and_binarize::<f64>(&base, 2.5, 4);
        let after = aggregate_and_binarize::<f64>(&raised, 2.5, 4);
        prop_assert!(!(before[0].fluidity_label == BinaryLabel::High && after[0].fluidity_label == BinaryLabel::Low));
        prop_assert!(after[0].mean_fluidity >= before[0].mean_fluidity);
    }

    #[test]
    fn rater_inclusion_ignores_record_order(
        grid in prop::collection::vec(prop::collection::vec(1u8..=5, 8), 5),
        seed in any::<u64>(),
    ) {
        let mut records: Vec<RatingRecord> = grid
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, &s)| rating(r, c, s, true)))
            .collect();
        let clips: BTreeSet<String> = (0..8).map(|c| format!("c{c}")).collect();
        let a = filter_reliable_raters::<f64>(&records, &clips);
        records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = filter_reliable_raters::<f64>(&records, &clips);
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.rater_id, &y.rater_id);
            prop_assert_eq!(x.included, y.included);
            match (x.r, y.r) {
                (Some(p), Some(q)) => prop_assert!((p - q).abs() < 1e-12),
                (p, q) => prop_assert_eq!(p, q),
            }
        }
    }
}

fn motion(seed: u64, scale: f64) -> Vec<MotionSeries<f64>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..3)
        .map(|p| {
            let mut level = 0.0;
            let ts: Vec<f64> = (0..420).map(|i| i as f64 / 60.0).collect();
            let samples = ts
                .iter()
                .map(|_| {
                    level += rng.random_range(-1.0..1.0);
                    scale * level
                })
                .collect();
            MotionSeries {
                clip_id: "c".into(),
                participant_id: format!("p{p}"),
                samples,
                timestamps: ts,
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gc_is_scale_invariant(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let cfg = GcConfig::default();
        let base = clip_gc(&motion(seed, 1.0), &cfg).unwrap();
        let scaled = clip_gc(&motion(seed, scale), &cfg).unwrap();
        let (a, b) = (base.mean_coupling.unwrap(), scaled.mean_coupling.unwrap());
        prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
        prop_assert!(a >= 0.0);
    }
}
