// SPDX-License-Identifier: Apache-2.0

use std::time::Instant;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shellgate_core::gate::anomaly_score;
use shellgate_core::{build_index, Coast, EmbeddingVector};

/// Exhaustive oracle: cosine of every entry in plain f64, full sort by
/// (similarity desc, id asc), keep k.
fn oracle(items: &[(String, Vec<f32>)], q: &[f32], k: usize) -> Vec<(String, f64)> {
    let qn: f64 = q.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let mut all: Vec<(String, f64)> = items
        .iter()
        .map(|(id, v)| {
            let d: f64 = v.iter().zip(q).map(|(&a, &b)| a as f64 * b as f64).sum();
            let n: f64 = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            (id.clone(), d / (n * qn))
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn random_items(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<(String, Vec<f32>)> {
    (0..n)
        .map(|i| {
            (
                format!("id{i:05}"),
                (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
            )
        })
        .collect()
}

#[test]
fn hundred_random_instances_match_exhaustive_sort() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    for _ in 0..100 {
        let items = random_items(&mut rng, 1000, 32);
        let index = build_index(
            items
                .iter()
                .map(|(id, v)| {
                    (
                        id.clone(),
                        Coast::Pacific,
                        EmbeddingVector::new(v.clone()).unwrap(),
                    )
                })
                .collect(),
        )
        .unwrap();
        let q: Vec<f32> = (0..32).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let want = oracle(&items, &q, 5);
        let query = EmbeddingVector::new(q).unwrap();
        let got = index.top_k(&query, 5).unwrap();
        assert_eq!(got.len(), 5);
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.record_id, w.0);
            assert!((g.similarity - w.1).abs() < 1e-9);
        }
        let s = anomaly_score(&index, &query, 5).unwrap();
        let mean = want.iter().map(|w| w.1).sum::<f64>() / 5.0;
        assert!((s.score - mean).abs() < 1e-9);
    }
    assert!(
        start.elapsed().as_secs_f64() < 10.0,
        "took {:?}",
        start.elapsed()
    );
}

#[test]
fn insertion_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let items = random_items(&mut rng, 200, 8);
    let build = |items: &[(String, Vec<f32>)]| {
        build_index(
            items
                .iter()
                .map(|(id, v)| {
                    (
                        id.clone(),
                        Coast::Caribbean,
                        EmbeddingVector::new(v.clone()).unwrap(),
                    )
                })
                .collect(),
        )
        .unwrap()
    };
    let mut reversed = items.clone();
    reversed.reverse();
    let (a, b) = (build(&items), build(&reversed));
    assert_eq!(a.fingerprint(), b.fingerprint());
    let q = EmbeddingVector::new(vec![0.3; 8]).unwrap();
    assert_eq!(a.top_k(&q, 7).unwrap(), b.top_k(&q, 7).unwrap());
}

fn small_vec() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-4i8..=4, 3).prop_map(|v| v.into_iter().map(f32::from).collect())
}

proptest! {
    #[test]
    fn top_k_matches_oracle_with_ties(
        vs in prop::collection::vec(small_vec(), 1..40),
        q in small_vec(),
        k in 1usize..12,
    ) {
        prop_assume!(q.iter().any(|&x| x != 0.0));
        let items: Vec<(String, Vec<f32>)> = vs
            .into_iter()
            .filter(|v| v.iter().any(|&x| x != 0.0))
            .enumerate()
            .map(|(i, v)| (format!("e{i:03}"), v))
            .collect();
        prop_assume!(!items.is_empty());
        let index = build_index(
            items.iter().map(|(id, v)| (id.clone(), Coast::Pacific, EmbeddingVector::new(v.clone()).unwrap())).collect(),
        ).unwrap();
        let query = EmbeddingVector::new(q.clone()).unwrap();
        let got = index.top_k(&query, k).unwrap();
        let want = oracle(&items, &q, k);
        prop_assert_eq!(got.len(), k.min(items.len()));
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g.similarity - w.1).abs() < 1e-9);
        }
        // Descending, ties by ascending id.
        for pair in got.windows(2) {
            prop_assert!(pair[0].similarity > pair[1].similarity
                || (pair[0].similarity == pair[1].similarity && pair[0].record_id < pair[1].record_id));
        }
        let s = anomaly_score(&index, &query, k).unwrap();
        prop_assert_eq!(s.k_clamped, k > items.len());
        prop_assert!(s.score <= 1.0 + 1e-12 && s.score >= -1.0 - 1e-12);
    }

    #[test]
    fn scaling_query_keeps_neighbors(
        vs in prop::collection::vec(small_vec(), 2..30),
        q in small_vec(),
        scale in 0.01f32..100.0,
    ) {
        prop_assume!(q.iter().any(|&x| x != 0.0));
        let items: Vec<_> = vs.into_iter().filter(|v| v.iter().any(|&x| x != 0.0)).enumerate()
            .map(|(i, v)| (format!("e{i:03}"), Coast::Caribbean, EmbeddingVector::new(v).unwrap())).collect();
        prop_assume!(!items.is_empty());
        let index = build_index(items).unwrap();
        let a = anomaly_score(&index, &EmbeddingVector::new(q.clone()).unwrap(), 3).unwrap();
        let b = anomaly_score(&index, &EmbeddingVector::new(q.iter().map(|x| x * scale).collect()).unwrap(), 3).unwrap();
        prop_assert!((a.score - b.score).abs() < 1e-6);
    }
}

#[test]
fn query_errors() {
    let index = build_index(vec![(
        "a".into(),
        Coast::Pacific,
        EmbeddingVector::new(vec![1.0, 0.0]).unwrap(),
    )])
    .unwrap();
    let zero = EmbeddingVector::new(vec![0.0, 0.0]).unwrap();
    assert!(matches!(
        index.top_k(&zero, 1),
        Err(shellgate_core::Error::ZeroVector)
    ));
    let wide = EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap();
    assert!(matches!(
        index.top_k(&wide, 1),
        Err(shellgate_core::Error::DimensionMismatch {
            expected: 2,
            actual: 3
        })
    ));
    assert!(index
        .top_k(&EmbeddingVector::new(vec![1.0, 1.0]).unwrap(), 0)
        .is_err());
}

#[test]
fn build_rejects_bad_sets() {
    use shellgate_core::Error;
    assert!(matches!(
        build_index(vec![]),
        Err(Error::Empty) | Err(Error::EmptyIndex)
    ));
    let v = |x: Vec<f32>| EmbeddingVector::new(x).unwrap();
    assert!(matches!(
        build_index(vec![
            ("a".into(), Coast::Pacific, v(vec![1.0])),
            ("a".into(), Coast::Pacific, v(vec![2.0])),
        ]),
        Err(Error::DuplicateId { .. })
    ));
    assert!(matches!(
        build_index(vec![
            ("a".into(), Coast::Pacific, v(vec![1.0])),
            ("b".into(), Coast::Pacific, v(vec![2.0, 1.0])),
        ]),
        Err(Error::DimensionMismatch { .. })
    ));
}
