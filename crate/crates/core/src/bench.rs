//! Median-of-repetitions timing for queries and hashing.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Timing;
use crate::index::SearchBackend;
use crate::lsh::Hasher;
use crate::model::FeatureVector;

pub const MIN_QUERY_REPETITIONS: usize = 30;
pub const MIN_HASH_REPETITIONS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub operation: String,
    pub candidates: usize,
    pub bits_or_dim: usize,
    pub repetitions: usize,
    /// Median over every timed call, in microseconds.
    pub wall_time_per_query_us: f64,
    pub mean_time_us: f64,
    pub throughput_hz: f64,
    pub threads: usize,
    pub machine: String,
}

impl BenchReport {
    fn new(operation: &str, candidates: usize, bits_or_dim: usize, repetitions: usize, timing: Timing) -> Self {
        Self {
            operation: operation.to_string(),
            candidates,
            bits_or_dim,
            repetitions,
            wall_time_per_query_us: timing.median_us,
            mean_time_us: timing.mean_us,
            throughput_hz: 1e6 / timing.median_us,
            threads: 1,
            machine: machine_descriptor(),
        }
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Times single-threaded top-2 queries after one discarded warm-up pass.
pub fn bench_query<B: SearchBackend>(
    backend: &B,
    queries: &[B::Query],
    repetitions: usize,
    operation: &str,
    bits_or_dim: usize,
) -> Result<BenchReport> {
    if queries.is_empty() {
        return Err(Error::NoQueries);
    }
    if repetitions < MIN_QUERY_REPETITIONS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_QUERY_REPETITIONS} repetitions, got {repetitions}"
        )));
    }
    for q in queries {
        black_box(backend.search(q)?);
    }
    let mut samples = Vec::with_capacity(repetitions * queries.len());
    for _ in 0..repetitions {
        for q in queries {
            let start = Instant::now();
            black_box(backend.search(black_box(q))?);
            samples.push(start.elapsed().as_secs_f64() * 1e6);
        }
    }
    let timing = Timing::from_micros(samples).expect("at least one sample");
    Ok(BenchReport::new(operation, backend.size(), bits_or_dim, repetitions, timing))
}

/// Times hashing one vector at a time; `candidates` reports the number of
/// distinct vectors hashed.
pub fn bench_hashing(hasher: &Hasher, vectors: &[&FeatureVector], repetitions: usize) -> Result<BenchReport> {
    if vectors.is_empty() {
        return Err(Error::NoQueries);
    }
    if repetitions < MIN_HASH_REPETITIONS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_HASH_REPETITIONS} repetitions, got {repetitions}"
        )));
    }
    black_box(hasher.hash_vector(vectors[0])?);
    let mut samples = Vec::with_capacity(repetitions * vectors.len());
    for _ in 0..repetitions {
        for v in vectors {
            let start = Instant::now();
            black_box(hasher.hash_vector(black_box(v))?);
            samples.push(start.elapsed().as_secs_f64() * 1e6);
        }
    }
    let timing = Timing::from_micros(samples).expect("at least one sample");
    Ok(BenchReport::new(
        &format!("hash-{}", hasher.bits()),
        vectors.len(),
        hasher.bits(),
        repetitions,
        timing,
    ))
}

/// Architecture, OS, logical CPU count and CPU model when available.
pub fn machine_descriptor() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    format!(
        "{}-{} {} cpus, {}",
        std::env::consts::ARCH,
        std::env::consts::OS,
        cpus,
        model
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::FlatHammingIndex;
    use crate::synth::random_signatures;

    #[test]
    fn query_bench_reports_consistent_throughput() {
        let recs = random_signatures(100, 256, 1, 1).unwrap();
        let idx = FlatHammingIndex::from_signatures(&recs, 1, 256).unwrap();
        let q = vec![recs[3].signature.clone().unwrap()];
        let r = bench_query(&idx, &q, 30, "hamming-256", 256).unwrap();
        assert_eq!(r.candidates, 100);
        assert!((r.throughput_hz * r.wall_time_per_query_us - 1e6).abs() < 1e-6 * 1e6);
        assert!(!r.machine.is_empty());
        assert!(r.to_json_line().unwrap().starts_with('{'));

        assert!(matches!(bench_query(&idx, &[], 30, "x", 1), Err(Error::NoQueries)));
        assert!(bench_query(&idx, &q, 29, "x", 1).is_err());
    }

    #[test]
    fn hashing_bench_validates_input() {
        let h = Hasher::new(8, 64, 1).unwrap();
        assert!(matches!(bench_hashing(&h, &[], 10), Err(Error::NoQueries)));
        let v = FeatureVector::new(vec![1.0; 8], "t").unwrap();
        assert!(bench_hashing(&h, &[&v], 9).is_err());
        let r = bench_hashing(&h, &[&v], 10).unwrap();
        assert_eq!(r.operation, "hash-64");
    }
}
