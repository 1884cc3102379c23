//! Brute-force oracles and shared fixtures for the integration tests.

#![allow(dead_code)]

use placerec::{BitSignature, FeatureVector, Hasher, PlaceRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `(place_id, frame_index, distance)` of the two closest entries.
pub type Top2 = [(u64, u64, f64); 2];

fn top2_of(mut scored: Vec<(f64, u64, u64)>) -> Top2 {
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    [(scored[0].1, scored[0].2, scored[0].0), (scored[1].1, scored[1].2, scored[1].0)]
}

/// Differing bits, counted one bit at a time.
pub fn bitwise_hamming(a: &BitSignature, b: &BitSignature) -> u32 {
    (0..a.length_bits()).filter(|&i| a.bit(i) != b.bit(i)).count() as u32
}

/// Full re-scan by bit comparison and a complete sort.
pub fn hamming_oracle(records: &[PlaceRecord], query: &BitSignature) -> Top2 {
    let bits = query.length_bits() as f64;
    let scored = records
        .iter()
        .map(|r| {
            let h = bitwise_hamming(r.signature.as_ref().unwrap(), query);
            (f64::from(h) / bits, r.place_id, r.frame_index)
        })
        .collect();
    top2_of(scored)
}

/// Cosine distance in f64 from the raw values.
pub fn cosine_f64(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// Full re-scan with `distance` and a complete sort.
pub fn cosine_oracle(
    records: &[PlaceRecord],
    query: &FeatureVector,
    distance: impl Fn(&FeatureVector, &FeatureVector) -> f64,
) -> Top2 {
    let scored = records
        .iter()
        .map(|r| (distance(r.feature.as_ref().unwrap(), query), r.place_id, r.frame_index))
        .collect();
    top2_of(scored)
}

pub fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

/// Records with shuffled ids, a block of exact duplicates so that ties
/// occur, and queries drawn partly from the records themselves.
pub fn tie_heavy_dataset(seed: u64, n: usize, n_queries: usize, dim: usize) -> (Vec<PlaceRecord>, Vec<FeatureVector>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 7 + 3).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    let mut values: Vec<Vec<f32>> = (0..n).map(|_| gaussian(&mut rng, dim)).collect();
    for k in 0..n / 10 {
        let src = rng.random_range(0..n);
        let dst = (src + 1 + k) % n;
        values[dst] = values[src].clone();
    }
    let records: Vec<PlaceRecord> = ids
        .iter()
        .zip(&values)
        .enumerate()
        .map(|(frame, (&id, v))| PlaceRecord::with_feature(id, frame as u64, FeatureVector::new(v.clone(), "t").unwrap()))
        .collect();
    let queries = (0..n_queries)
        .map(|q| {
            let v = if q % 3 == 0 {
                values[rng.random_range(0..n)].clone()
            } else {
                gaussian(&mut rng, dim)
            };
            FeatureVector::new(v, "t").unwrap()
        })
        .collect();
    (records, queries)
}

pub fn hashed(records: &[PlaceRecord], hasher: &Hasher) -> Vec<PlaceRecord> {
    let mut out = records.to_vec();
    hasher.hash_records(&mut out).unwrap();
    out
}
