//! Holistic place recognition by nearest-neighbour search over image
//! descriptors.
//!
//! Stored places are matched against a query by exhaustive top-2 search
//! under one of three backends ([`FlatCosineIndex`], [`FlatHammingIndex`],
//! [`PartitionedIndex`]); [`eval`] turns the results into ratio-test
//! decisions and precision/recall curves.

pub mod bench;
pub mod error;
pub mod eval;
pub mod index;
pub mod io;
pub mod kernel;
pub mod lsh;
pub mod model;
pub mod seed;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use index::{FlatCosineIndex, FlatHammingIndex, PartitionedIndex, PartitionedQuery, QueryResult, SearchBackend};
pub use lsh::{cosine_distance, estimate_cosine, hamming, Hasher, PlaneStorage};
pub use model::{BitSignature, DatasetManifest, FeatureVector, GroundTruth, PlaceRecord};
