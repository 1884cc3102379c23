//! Exhaustive top-2 nearest-neighbour search.
//!
//! Three backends share one result type: an exact cosine scan over raw
//! features, a Hamming scan over packed signatures and a Hamming scan
//! restricted to semantically partitioned candidate sets. Every backend
//! orders candidates by `(distance, place_id)`, so ties resolve to the
//! lower place id regardless of storage order.

mod cosine;
mod hamming;
mod partitioned;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use cosine::FlatCosineIndex;
pub use hamming::FlatHammingIndex;
pub use partitioned::{PartitionSidecar, PartitionedIndex, PartitionedQuery};

use crate::error::{Error, Result};
use crate::kernel::Top2;
use crate::model::PlaceRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub best_id: u64,
    pub best_frame: u64,
    pub best_distance: f64,
    pub second_id: u64,
    pub second_frame: u64,
    pub second_distance: f64,
    pub candidates_scanned: usize,
    /// Set when a partitioned query had fewer than two candidates and
    /// searched the full index instead.
    #[serde(default)]
    pub used_fallback: bool,
}

/// Anything that answers top-2 queries.
pub trait SearchBackend: Sync {
    type Query: Sync;

    fn search(&self, query: &Self::Query) -> Result<QueryResult>;

    /// Number of stored places.
    fn size(&self) -> usize;
}

pub(crate) fn finish<D: PartialOrd + Copy>(
    top: Top2<D>,
    frames: &[u64],
    scanned: usize,
    to_distance: impl Fn(D) -> f64,
) -> QueryResult {
    let (bd, bid, bpos) = top.best.expect("scan covered at least two entries");
    let (sd, sid, spos) = top.second.expect("scan covered at least two entries");
    QueryResult {
        best_id: bid,
        best_frame: frames[bpos],
        best_distance: to_distance(bd),
        second_id: sid,
        second_frame: frames[spos],
        second_distance: to_distance(sd),
        candidates_scanned: scanned,
        used_fallback: false,
    }
}

pub(crate) fn check_unique_ids(records: &[PlaceRecord]) -> Result<()> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.place_id) {
            return Err(Error::DuplicatePlaceId(r.place_id));
        }
    }
    Ok(())
}
