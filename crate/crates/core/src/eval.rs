//! Ratio-test matching and precision/recall evaluation.
//!
//! A query is *positive* when `best / second <= tau`. Every query has a
//! ground-truth reference, so a negative is always a false negative and
//! `tp + fp + fn` equals the number of queries at every threshold.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::index::{QueryResult, SearchBackend};
use crate::model::GroundTruth;

/// How single F1 numbers are obtained from a curve; recorded in every report.
pub const F1_CONVENTION: &str = "best_f1 is the maximum F1 over the ratio-test threshold sweep";

/// Default number of evenly spaced thresholds in `(0, 1]`.
pub const DEFAULT_SWEEP_POINTS: usize = 200;

/// A query frame together with its search result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMatch {
    pub query_frame: u64,
    pub result: QueryResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub query_frame: u64,
    pub result: QueryResult,
    pub ratio: f64,
    pub tau: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    TruePositive,
    FalsePositive,
    FalseNegative,
}

/// Best over second-best distance; two zero distances count as fully
/// ambiguous (ratio 1).
pub fn distance_ratio(result: &QueryResult) -> f64 {
    if result.second_distance > 0.0 {
        result.best_distance / result.second_distance
    } else {
        1.0
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidThreshold(tau))
    }
}

pub fn decide(m: &QueryMatch, tau: f64) -> Result<MatchDecision> {
    check_tau(tau)?;
    let ratio = distance_ratio(&m.result);
    Ok(MatchDecision {
        query_frame: m.query_frame,
        result: m.result.clone(),
        ratio,
        tau,
        verdict: if ratio <= tau {
            Verdict::Positive
        } else {
            Verdict::Negative
        },
    })
}

pub fn label(decision: &MatchDecision, gt: &GroundTruth) -> Result<Label> {
    let correct = gt.accepts(decision.query_frame, decision.result.best_frame)?;
    Ok(match (decision.verdict, correct) {
        (Verdict::Negative, _) => Label::FalseNegative,
        (Verdict::Positive, true) => Label::TruePositive,
        (Verdict::Positive, false) => Label::FalsePositive,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl PrPoint {
    fn from_counts(tau: f64, tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        // 2PR/(P+R) written over counts; 0 when there are no true positives
        let f1 = if tp == 0 {
            0.0
        } else {
            (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
        };
        Self {
            tau,
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_us: f64,
    pub median_us: f64,
    pub samples: usize,
}

impl Timing {
    pub fn from_micros(mut samples: Vec<f64>) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        samples.sort_by(f64::total_cmp);
        let n = samples.len();
        let median = if n % 2 == 1 {
            samples[n / 2]
        } else {
            (samples[n / 2 - 1] + samples[n / 2]) / 2.0
        };
        Some(Self {
            mean_us: samples.iter().sum::<f64>() / n as f64,
            median_us: median,
            samples: n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub backend_tag: String,
    pub curve: Vec<PrPoint>,
    pub best_f1: f64,
    pub best_tau: f64,
    pub query_count: usize,
    /// Digest of the query frames and their ground truth; reports are only
    /// comparable when these agree.
    pub query_set: String,
    pub f1_convention: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hasher_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl EvalReport {
    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.backend_tag = tag.into();
        self
    }

    pub fn with_hasher(mut self, hasher_id: u64) -> Self {
        self.hasher_id = Some(hasher_id);
        self
    }

    pub fn with_timing(mut self, timing: Option<Timing>) -> Self {
        self.timing = timing;
        self
    }

    /// Writes the `recall,precision` CSV used for plotting.
    pub fn write_pr_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["recall", "precision"])?;
        for p in &self.curve {
            w.write_record([p.recall.to_string(), p.precision.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `n` evenly spaced thresholds `1/n, 2/n, ..., 1`.
pub fn default_taus(n: usize) -> Vec<f64> {
    (1..=n).map(|k| k as f64 / n as f64).collect()
}

fn query_set_digest(matches: &[QueryMatch], gt: &GroundTruth) -> Result<String> {
    let mut frames: Vec<(u64, u64)> = matches
        .iter()
        .map(|m| Ok((m.query_frame, gt.reference_for(m.query_frame)?)))
        .collect::<Result<_>>()?;
    frames.sort_unstable();
    let mut h = Sha256::new();
    h.update(u64::from(gt.tolerance_frames()).to_le_bytes());
    for (q, r) in frames {
        h.update(q.to_le_bytes());
        h.update(r.to_le_bytes());
    }
    let d = h.finalize();
    Ok(d[..8].iter().map(|b| format!("{b:02x}")).collect())
}

pub fn pr_sweep(matches: &[QueryMatch], gt: &GroundTruth, taus: &[f64]) -> Result<EvalReport> {
    if matches.is_empty() {
        return Err(Error::NoQueries);
    }
    if taus.is_empty() {
        return Err(Error::InvalidInput("empty threshold sweep".into()));
    }
    for w in taus.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidThreshold(w[1]));
        }
    }
    taus.iter().try_for_each(|&t| check_tau(t))?;

    // correctness of the best match does not depend on tau
    let scored: Vec<(f64, bool)> = matches
        .iter()
        .map(|m| Ok((distance_ratio(&m.result), gt.accepts(m.query_frame, m.result.best_frame)?)))
        .collect::<Result<_>>()?;

    let curve: Vec<PrPoint> = taus
        .iter()
        .map(|&tau| {
            let (mut tp, mut fp) = (0, 0);
            for &(ratio, correct) in &scored {
                if ratio <= tau {
                    if correct {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            PrPoint::from_counts(tau, tp, fp, scored.len() - tp - fp)
        })
        .collect();

    let mut best = &curve[0];
    for p in &curve[1..] {
        if p.f1 > best.f1 {
            best = p;
        }
    }
    Ok(EvalReport {
        backend_tag: String::new(),
        best_f1: best.f1,
        best_tau: best.tau,
        query_count: matches.len(),
        query_set: query_set_digest(matches, gt)?,
        f1_convention: F1_CONVENTION.to_string(),
        hasher_id: None,
        timing: None,
        curve,
    })
}

/// Runs every query in order, timing each search call on its own.
pub fn run_queries<B: SearchBackend>(backend: &B, queries: &[(u64, B::Query)]) -> Result<(Vec<QueryMatch>, Option<Timing>)> {
    let mut matches = Vec::with_capacity(queries.len());
    let mut micros = Vec::with_capacity(queries.len());
    for (frame, q) in queries {
        let start = Instant::now();
        let result = backend.search(q)?;
        micros.push(start.elapsed().as_secs_f64() * 1e6);
        matches.push(QueryMatch {
            query_frame: *frame,
            result,
        });
    }
    Ok((matches, Timing::from_micros(micros)))
}

/// Queries a backend and sweeps the ratio test over the results.
pub fn evaluate<B: SearchBackend>(
    backend: &B,
    queries: &[(u64, B::Query)],
    gt: &GroundTruth,
    taus: &[f64],
    tag: &str,
) -> Result<EvalReport> {
    if queries.is_empty() {
        return Err(Error::NoQueries);
    }
    let (matches, timing) = run_queries(backend, queries)?;
    Ok(pr_sweep(&matches, gt, taus)?.with_tag(tag).with_timing(timing))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub backend_tag: String,
    pub best_f1: f64,
    pub best_tau: f64,
    /// `best_f1 / reference best_f1`.
    pub retention: Option<f64>,
    pub median_us: Option<f64>,
    pub mean_us: Option<f64>,
    /// Reference median query time over this backend's median.
    pub speed_up: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub reference: String,
    pub query_count: usize,
    pub query_set: String,
    pub f1_convention: String,
    pub rows: Vec<ComparisonRow>,
}

/// Side-by-side summary against `reports[reference]`.
pub fn compare_backends(reports: &[EvalReport], reference: usize) -> Result<ComparisonTable> {
    if reports.len() < 2 {
        return Err(Error::IncomparableReports(format!(
            "need at least 2 reports, got {}",
            reports.len()
        )));
    }
    let base = reports
        .get(reference)
        .ok_or_else(|| Error::InvalidInput(format!("reference report {reference} out of range")))?;
    if let Some(r) = reports.iter().find(|r| r.query_set != base.query_set || r.query_count != base.query_count) {
        return Err(Error::IncomparableReports(format!(
            "{} covers query set {} but {} covers {}",
            r.backend_tag, r.query_set, base.backend_tag, base.query_set
        )));
    }
    let base_median = base.timing.as_ref().map(|t| t.median_us);
    let rows = reports
        .iter()
        .map(|r| {
            let median = r.timing.as_ref().map(|t| t.median_us);
            ComparisonRow {
                backend_tag: r.backend_tag.clone(),
                best_f1: r.best_f1,
                best_tau: r.best_tau,
                retention: (base.best_f1 > 0.0).then(|| r.best_f1 / base.best_f1),
                median_us: median,
                mean_us: r.timing.as_ref().map(|t| t.mean_us),
                speed_up: match (base_median, median) {
                    (Some(b), Some(m)) if m > 0.0 => Some(b / m),
                    _ => None,
                },
            }
        })
        .collect();
    Ok(ComparisonTable {
        reference: base.backend_tag.clone(),
        query_count: base.query_count,
        query_set: base.query_set.clone(),
        f1_convention: F1_CONVENTION.to_string(),
        rows,
    })
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
