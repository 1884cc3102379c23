//! Data model shared by every backend: feature vectors, packed signatures,
//! stored places and ground truth.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Valid ground-truth tolerance band, in frames.
pub const TOLERANCE_RANGE: std::ops::RangeInclusive<u32> = 1..=5;

/// Dense holistic image descriptor.
///
/// Always non-empty, finite and not identically zero, so cosine distance
/// is defined for every stored vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f32>,
    layer_tag: String,
}

impl FeatureVector {
    pub fn new(values: Vec<f32>, layer_tag: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidFeature("empty vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidFeature(format!("non-finite value at index {i}")));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidFeature("zero vector".into()));
        }
        Ok(Self {
            values,
            layer_tag: layer_tag.into(),
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn layer_tag(&self) -> &str {
        &self.layer_tag
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Packed LSH signature. Bit `i` lives in word `i / 64` at position `i % 64`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitSignature {
    words: Vec<u64>,
    hasher_id: u64,
}

impl BitSignature {
    pub fn from_words(words: Vec<u64>, hasher_id: u64) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::InvalidBitLength(0));
        }
        Ok(Self { words, hasher_id })
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn length_bits(&self) -> usize {
        self.words.len() * 64
    }

    pub fn hasher_id(&self) -> u64 {
        self.hasher_id
    }

    pub fn bit(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    /// Bytes of packed payload, excluding ids.
    pub fn payload_bytes(&self) -> usize {
        self.words.len() * std::mem::size_of::<u64>()
    }
}

/// One stored place.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaceRecord {
    pub place_id: u64,
    pub frame_index: u64,
    pub feature: Option<FeatureVector>,
    pub signature: Option<BitSignature>,
    pub class_probs: Option<Vec<f32>>,
}

impl PlaceRecord {
    pub fn with_feature(place_id: u64, frame_index: u64, feature: FeatureVector) -> Self {
        Self {
            place_id,
            frame_index,
            feature: Some(feature),
            signature: None,
            class_probs: None,
        }
    }

    pub fn with_signature(place_id: u64, frame_index: u64, signature: BitSignature) -> Self {
        Self {
            place_id,
            frame_index,
            feature: None,
            signature: Some(signature),
            class_probs: None,
        }
    }

    pub fn set_class_probs(mut self, probs: Vec<f32>) -> Result<Self> {
        check_probs(&probs)?;
        self.class_probs = Some(probs);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature.is_none() && self.signature.is_none() {
            return Err(Error::InvalidInput(format!(
                "place {} has neither a feature nor a signature",
                self.place_id
            )));
        }
        if let Some(p) = &self.class_probs {
            check_probs(p)?;
        }
        Ok(())
    }
}

fn check_probs(probs: &[f32]) -> Result<()> {
    match probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(p) => Err(Error::InvalidInput(format!("class probability {p} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Query frame to reference frame mapping with a symmetric tolerance band.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pairs: BTreeMap<u64, u64>,
    tolerance_frames: u32,
}

impl GroundTruth {
    pub fn new(pairs: impl IntoIterator<Item = (u64, u64)>, tolerance_frames: u32) -> Result<Self> {
        if !TOLERANCE_RANGE.contains(&tolerance_frames) {
            return Err(Error::InvalidTolerance(tolerance_frames));
        }
        let mut map = BTreeMap::new();
        for (query, reference) in pairs {
            if map.insert(query, reference).is_some() {
                return Err(Error::DuplicateGroundTruth(query));
            }
        }
        Ok(Self {
            pairs: map,
            tolerance_frames,
        })
    }

    pub fn tolerance_frames(&self) -> u32 {
        self.tolerance_frames
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn reference_for(&self, query_frame: u64) -> Result<u64> {
        self.pairs
            .get(&query_frame)
            .copied()
            .ok_or(Error::MissingGroundTruth(query_frame))
    }

    /// Whether `matched_frame` lies inside the tolerance band around the
    /// true reference of `query_frame`.
    pub fn accepts(&self, query_frame: u64, matched_frame: u64) -> Result<bool> {
        let truth = self.reference_for(query_frame)?;
        Ok(truth.abs_diff(matched_frame) <= u64::from(self.tolerance_frames))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.pairs.iter().map(|(&q, &r)| (q, r))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub feature_file: PathBuf,
    pub dim: usize,
    pub layer_tag: String,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_file: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_vector_rejects_degenerate_input() {
        assert!(matches!(FeatureVector::new(vec![], "x"), Err(Error::InvalidFeature(_))));
        assert!(matches!(FeatureVector::new(vec![0.0; 8], "x"), Err(Error::InvalidFeature(_))));
        assert!(matches!(
            FeatureVector::new(vec![1.0, f32::NAN], "x"),
            Err(Error::InvalidFeature(_))
        ));
        assert!(matches!(
            FeatureVector::new(vec![f32::INFINITY], "x"),
            Err(Error::InvalidFeature(_))
        ));
        let v = FeatureVector::new(vec![0.0, -1.0, 0.5], "conv3").unwrap();
        assert_eq!(v.dim(), 3);
        assert_eq!(v.layer_tag(), "conv3");
    }

    #[test]
    fn ground_truth_tolerance_band() {
        let gt = GroundTruth::new([(0, 0), (1, 1)], 1).unwrap();
        assert_eq!(gt.len(), 2);
        assert!(GroundTruth::new([(0, 0)], 5).is_ok());
        assert!(matches!(GroundTruth::new([(0, 0)], 6), Err(Error::InvalidTolerance(6))));
        assert!(matches!(GroundTruth::new([(0, 0)], 0), Err(Error::InvalidTolerance(0))));
        assert!(matches!(
            GroundTruth::new([(0, 0), (0, 3)], 1),
            Err(Error::DuplicateGroundTruth(0))
        ));
    }

    #[test]
    fn ground_truth_accepts_within_band() {
        let gt = GroundTruth::new([(7, 101), (8, 106)], 1).unwrap();
        assert!(gt.accepts(7, 100).unwrap());
        assert!(gt.accepts(7, 102).unwrap());
        assert!(!gt.accepts(7, 103).unwrap());
        assert!(matches!(gt.accepts(9, 0), Err(Error::MissingGroundTruth(9))));
    }

    #[test]
    fn record_needs_payload_and_valid_probs() {
        let mut r = PlaceRecord::with_feature(0, 0, FeatureVector::new(vec![1.0], "x").unwrap());
        assert!(r.validate().is_ok());
        assert!(r.clone().set_class_probs(vec![0.2, 1.2]).is_err());
        r.feature = None;
        assert!(r.validate().is_err());
    }
}
