mod common;

use placerec::eval::{decide, label, pr_sweep, Label, QueryMatch, Verdict};
use placerec::io::{read_feature_file, write_feature_file};
use placerec::{
    cosine_distance, estimate_cosine, hamming, BitSignature, FeatureVector, FlatHammingIndex, GroundTruth, Hasher,
    PartitionedIndex, PlaceRecord, QueryResult,
};
use proptest::prelude::*;

fn nonzero_vec(dim: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1000f32..1000f32, dim).prop_map(|mut v| {
        if v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        v
    })
}

fn records_strategy() -> impl Strategy<Value = Vec<PlaceRecord>> {
    (1usize..12, 1usize..8, 0usize..4).prop_flat_map(|(dim, n, classes)| {
        prop::collection::vec(
            (
                prop::collection::vec(-1000f32..1000f32, dim),
                prop::collection::vec(0f32..=1f32, classes),
                any::<u64>(),
            ),
            n,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (mut v, probs, frame))| {
                    if v.iter().all(|x| *x == 0.0) {
                        v[0] = 1.0;
                    }
                    let r = PlaceRecord::with_feature(i as u64 * 3, frame, FeatureVector::new(v, "layer").unwrap());
                    if probs.is_empty() {
                        r
                    } else {
                        r.set_class_probs(probs).unwrap()
                    }
                })
                .collect()
        })
    })
}

fn words(n: usize) -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(any::<u64>(), n)
}

fn result_with(best: f64, second: f64, best_frame: u64) -> QueryResult {
    QueryResult {
        best_id: best_frame,
        best_frame,
        best_distance: best,
        second_id: u64::MAX,
        second_frame: u64::MAX,
        second_distance: second,
        candidates_scanned: 2,
        used_fallback: false,
    }
}

/// Query matches whose best frames land within or outside a tolerance of 1.
fn matches_strategy() -> impl Strategy<Value = (Vec<QueryMatch>, GroundTruth)> {
    prop::collection::vec((0f64..1.0, 0f64..1.0, 0u64..4), 1..60).prop_map(|rows| {
        let gt = GroundTruth::new((0..rows.len() as u64).map(|q| (q, q * 10)), 1).unwrap();
        let matches = rows
            .into_iter()
            .enumerate()
            .map(|(q, (a, b, offset))| {
                let (best, second) = if a <= b { (a, b) } else { (b, a) };
                QueryMatch {
                    query_frame: q as u64,
                    result: result_with(best, second, q as u64 * 10 + offset),
                }
            })
            .collect();
        (matches, gt)
    })
}

proptest! {
    #[test]
    fn feature_file_round_trips(records in records_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.phf");
        write_feature_file(&records, &path).unwrap();
        prop_assert_eq!(read_feature_file(&path).unwrap(), records);
    }

    #[test]
    fn hashing_ignores_positive_scale(v in nonzero_vec(1..64), alpha in 1e-3f32..1e3, seed in any::<u64>()) {
        let h = Hasher::new(v.len(), 128, seed).unwrap();
        let scaled: Vec<f32> = v.iter().map(|x| x * alpha).collect();
        let a = h.hash_vector(&FeatureVector::new(v.clone(), "t").unwrap()).unwrap();
        let b = h.hash_vector(&FeatureVector::new(scaled, "t").unwrap()).unwrap();
        prop_assert_eq!(&a, &b);
        let c = h.hash_vector(&FeatureVector::new(v.iter().map(|x| x * 2.5).collect(), "t").unwrap()).unwrap();
        prop_assert_eq!(&a, &c);
    }

    #[test]
    fn hamming_is_a_metric(a in words(3), b in words(3), c in words(3)) {
        let [a, b, c] = [a, b, c].map(|w| BitSignature::from_words(w, 9).unwrap());
        let d = |x: &BitSignature, y: &BitSignature| hamming(x, y).unwrap();
        prop_assert_eq!(d(&a, &a), 0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert!(d(&a, &b) as usize <= a.length_bits());
        prop_assert_eq!(d(&a, &b), common::bitwise_hamming(&a, &b));
        if d(&a, &b) == 0 {
            prop_assert_eq!(&a, &b);
        }
    }

    #[test]
    fn estimate_cosine_decreases_with_hamming(bits in (1usize..=128).prop_map(|k| k * 64), h in 0u32..8192) {
        let h = h % bits as u32;
        let e0 = estimate_cosine(h, bits).unwrap();
        let e1 = estimate_cosine(h + 1, bits).unwrap();
        prop_assert!(e1 < e0);
        prop_assert!((-1.0..=1.0).contains(&e0));
    }

    #[test]
    fn cosine_distance_is_symmetric_and_bounded(x in nonzero_vec(4..5), y in nonzero_vec(4..5)) {
        let (x, y) = (FeatureVector::new(x, "t").unwrap(), FeatureVector::new(y, "t").unwrap());
        let d = cosine_distance(&x, &y).unwrap();
        prop_assert!((0.0..=2.0).contains(&d));
        prop_assert_eq!(d, cosine_distance(&y, &x).unwrap());
        prop_assert!(cosine_distance(&x, &x).unwrap() < 1e-6);
    }

    #[test]
    fn sweep_accounts_for_every_query((matches, gt) in matches_strategy()) {
        let taus = placerec::eval::default_taus(50);
        let report = pr_sweep(&matches, &gt, &taus).unwrap();
        for w in report.curve.windows(2) {
            prop_assert!(w[1].recall >= w[0].recall);
        }
        for p in &report.curve {
            prop_assert_eq!(p.tp + p.fp + p.fn_, matches.len());
        }
        prop_assert!(report.curve.iter().all(|p| p.f1 <= report.best_f1));
    }

    #[test]
    fn labels_do_not_depend_on_tau((matches, gt) in matches_strategy()) {
        for m in &matches {
            let mut seen = None;
            for tau in placerec::eval::default_taus(20) {
                let d = decide(m, tau).unwrap();
                let l = label(&d, &gt).unwrap();
                match d.verdict {
                    Verdict::Negative => prop_assert_eq!(l, Label::FalseNegative),
                    Verdict::Positive => {
                        prop_assert_ne!(l, Label::FalseNegative);
                        prop_assert!(seen.is_none_or(|s| s == l));
                        seen = Some(l);
                    }
                }
            }
        }
    }

    #[test]
    fn candidates_shrink_as_theta_grows(
        probs in prop::collection::vec(prop::collection::vec(0f32..=1f32, 4), 2..30),
        query in prop::collection::vec(0f32..=1f32, 4),
        t1 in 0f64..=1.0,
        t2 in 0f64..=1.0,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let records: Vec<PlaceRecord> = probs
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let v = (0..8).map(|j| ((i * 8 + j) as f32 * 0.37).sin() + 0.01).collect();
                PlaceRecord::with_feature(i as u64, i as u64, FeatureVector::new(v, "t").unwrap())
                    .set_class_probs(p)
                    .unwrap()
            })
            .collect();
        let h = Hasher::new(8, 64, 1).unwrap();
        let idx = PartitionedIndex::build(&records, &h, 0.3).unwrap();
        let wide = idx.candidates(&query, lo).unwrap();
        let narrow = idx.candidates(&query, hi).unwrap();
        prop_assert!(narrow.iter().all(|p| wide.binary_search(p).is_ok()));
    }

    #[test]
    fn partitioned_result_is_top2_of_its_candidates(
        probs in prop::collection::vec(prop::collection::vec(0f32..=1f32, 3), 4..40),
        query_probs in prop::collection::vec(0f32..=1f32, 3),
        theta in 0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let records: Vec<PlaceRecord> = probs
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let v = (0..16).map(|j| ((i * 16 + j) as f32 * 0.61 + seed as f32).cos()).collect();
                PlaceRecord::with_feature(i as u64, i as u64, FeatureVector::new(v, "t").unwrap())
                    .set_class_probs(p)
                    .unwrap()
            })
            .collect();
        let h = Hasher::new(16, 64, seed).unwrap();
        let signed = common::hashed(&records, &h);
        let idx = PartitionedIndex::build(&signed, &h, theta).unwrap();
        let q = signed[0].signature.clone().unwrap();
        let got = idx.query(&q, &query_probs, theta).unwrap();
        let positions = idx.candidates(&query_probs, theta).unwrap();
        let pool: Vec<PlaceRecord> = if positions.len() < 2 {
            prop_assert!(got.used_fallback);
            signed.clone()
        } else {
            prop_assert!(!got.used_fallback);
            prop_assert_eq!(got.candidates_scanned, positions.len());
            positions.iter().map(|&p| signed[p].clone()).collect()
        };
        let want = common::hamming_oracle(&pool, &q);
        prop_assert_eq!((got.best_id, got.best_distance), (want[0].0, want[0].2));
        prop_assert_eq!((got.second_id, got.second_distance), (want[1].0, want[1].2));

        let full = FlatHammingIndex::build(&signed, &h).unwrap();
        let zero = PartitionedIndex::build(&signed, &h, 0.0).unwrap();
        prop_assert_eq!(zero.query(&q, &query_probs, 0.0).unwrap(), full.query_top2(&q).unwrap());
    }
}
