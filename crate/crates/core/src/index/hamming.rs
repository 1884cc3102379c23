use crate::error::{Error, Result};
use crate::kernel::{self, Top2};
use crate::lsh::Hasher;
use crate::model::{BitSignature, PlaceRecord};

use super::{finish, QueryResult, SearchBackend};

/// Exhaustive Hamming scan over signatures packed record-major into one
/// contiguous word buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatHammingIndex {
    words: Vec<u64>,
    n_words: usize,
    ids: Vec<u64>,
    frames: Vec<u64>,
    hasher_id: u64,
}

impl FlatHammingIndex {
    /// Builds from records carrying signatures, features or both. Features
    /// are hashed only where no signature is present; existing signatures
    /// must come from `hasher`.
    pub fn build(records: &[PlaceRecord], hasher: &Hasher) -> Result<Self> {
        if records.len() < 2 {
            return Err(Error::IndexTooSmall(records.len()));
        }
        let to_hash: Vec<_> = records
            .iter()
            .filter(|r| r.signature.is_none())
            .map(|r| {
                r.feature.as_ref().ok_or_else(|| {
                    Error::InvalidInput(format!("place {} has neither feature nor signature", r.place_id))
                })
            })
            .collect::<Result<_>>()?;
        let mut fresh = hasher.hash_batch(&to_hash)?.into_iter();
        let sigs: Vec<BitSignature> = records
            .iter()
            .map(|r| match &r.signature {
                Some(s) => s.clone(),
                None => fresh.next().expect("one signature per hashed record"),
            })
            .collect();
        Self::assemble(
            records.iter().map(|r| (r.place_id, r.frame_index)),
            sigs.iter(),
            hasher.id(),
            hasher.bits(),
        )
    }

    /// Builds from pre-hashed records, e.g. a loaded signature file.
    pub fn from_signatures(records: &[PlaceRecord], hasher_id: u64, length_bits: usize) -> Result<Self> {
        if records.len() < 2 {
            return Err(Error::IndexTooSmall(records.len()));
        }
        Self::from_signatures_unchecked(records, hasher_id, length_bits)
    }

    /// Like [`from_signatures`](Self::from_signatures) but allows fewer than
    /// two entries; used for per-class partitions.
    pub(crate) fn from_signatures_unchecked(
        records: &[PlaceRecord],
        hasher_id: u64,
        length_bits: usize,
    ) -> Result<Self> {
        let sigs = records
            .iter()
            .map(|r| {
                r.signature
                    .as_ref()
                    .ok_or_else(|| Error::InvalidInput(format!("place {} has no signature", r.place_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(
            records.iter().map(|r| (r.place_id, r.frame_index)),
            sigs.into_iter(),
            hasher_id,
            length_bits,
        )
    }

    fn assemble<'a>(
        keys: impl ExactSizeIterator<Item = (u64, u64)>,
        sigs: impl Iterator<Item = &'a BitSignature>,
        hasher_id: u64,
        length_bits: usize,
    ) -> Result<Self> {
        if length_bits == 0 || !length_bits.is_multiple_of(64) {
            return Err(Error::InvalidBitLength(length_bits));
        }
        let n_words = length_bits / 64;
        let n = keys.len();
        let mut words = Vec::with_capacity(n * n_words);
        let (mut ids, mut frames) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for ((id, frame), sig) in keys.zip(sigs) {
            if sig.hasher_id() != hasher_id {
                return Err(Error::IncomparableSignatures {
                    left: hasher_id,
                    right: sig.hasher_id(),
                });
            }
            if sig.length_bits() != length_bits {
                return Err(Error::dims(length_bits, sig.length_bits()));
            }
            words.extend_from_slice(sig.words());
            ids.push(id);
            frames.push(frame);
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::DuplicatePlaceId(*dup));
        }
        Ok(Self {
            words,
            n_words,
            ids,
            frames,
            hasher_id,
        })
    }

    pub fn hasher_id(&self) -> u64 {
        self.hasher_id
    }

    pub fn length_bits(&self) -> usize {
        self.n_words * 64
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn frames(&self) -> &[u64] {
        &self.frames
    }

    pub fn signature_words(&self, position: usize) -> &[u64] {
        &self.words[position * self.n_words..(position + 1) * self.n_words]
    }

    /// Bytes of packed signature payload.
    pub fn payload_bytes(&self) -> usize {
        self.words.len() * std::mem::size_of::<u64>()
    }

    /// Stored entries as signature-only records, in storage order.
    pub fn to_records(&self) -> Vec<PlaceRecord> {
        (0..self.len())
            .map(|i| {
                let sig = BitSignature::from_words(self.signature_words(i).to_vec(), self.hasher_id)
                    .expect("non-empty signature");
                PlaceRecord::with_signature(self.ids[i], self.frames[i], sig)
            })
            .collect()
    }

    fn check_query(&self, query: &BitSignature) -> Result<()> {
        if query.hasher_id() != self.hasher_id {
            return Err(Error::IncomparableSignatures {
                left: self.hasher_id,
                right: query.hasher_id(),
            });
        }
        if query.length_bits() != self.length_bits() {
            return Err(Error::dims(self.length_bits(), query.length_bits()));
        }
        Ok(())
    }

    pub fn query_top2(&self, query: &BitSignature) -> Result<QueryResult> {
        self.check_query(query)?;
        if self.len() < 2 {
            return Err(Error::IndexTooSmall(self.len()));
        }
        let top = kernel::hamming_scan(&self.words, self.n_words, query.words(), &self.ids, None);
        Ok(self.finish(top, self.len()))
    }

    /// Top-2 over the given positions only; `positions` must hold at least
    /// two distinct entries.
    pub(crate) fn query_positions(&self, query: &BitSignature, positions: &[usize]) -> Result<QueryResult> {
        self.check_query(query)?;
        let top = kernel::hamming_scan(&self.words, self.n_words, query.words(), &self.ids, Some(positions));
        Ok(self.finish(top, positions.len()))
    }

    fn finish(&self, top: Top2<u32>, scanned: usize) -> QueryResult {
        let bits = self.length_bits() as f64;
        finish(top, &self.frames, scanned, |h| f64::from(h) / bits)
    }
}

impl SearchBackend for FlatHammingIndex {
    type Query = BitSignature;

    fn search(&self, query: &BitSignature) -> Result<QueryResult> {
        self.query_top2(query)
    }

    fn size(&self) -> usize {
        self.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FeatureVector;

    fn sig(words: Vec<u64>, id: u64) -> BitSignature {
        BitSignature::from_words(words, id).unwrap()
    }

    #[test]
    fn scan_returns_top_two_normalized() {
        let records: Vec<_> = [0b0000u64, 0b0111, 0b0001, 0b1111]
            .iter()
            .enumerate()
            .map(|(i, &w)| PlaceRecord::with_signature(i as u64, 100 + i as u64, sig(vec![w], 5)))
            .collect();
        let idx = FlatHammingIndex::from_signatures(&records, 5, 64).unwrap();
        let r = idx.query_top2(&sig(vec![0b0011], 5)).unwrap();
        // distances: 2, 1, 1, 2 -> ids 1 and 2 tie at 1
        assert_eq!((r.best_id, r.second_id), (1, 2));
        assert_eq!(r.best_distance, 1.0 / 64.0);
        assert_eq!(r.best_frame, 101);
        assert_eq!(r.candidates_scanned, 4);
    }

    #[test]
    fn mismatched_hashers_rejected() {
        let records = vec![
            PlaceRecord::with_signature(0, 0, sig(vec![1], 5)),
            PlaceRecord::with_signature(1, 1, sig(vec![2], 6)),
        ];
        assert!(matches!(
            FlatHammingIndex::from_signatures(&records, 5, 64),
            Err(Error::IncomparableSignatures { .. })
        ));
        let ok = FlatHammingIndex::from_signatures(&records[..1], 5, 64);
        assert!(matches!(ok, Err(Error::IndexTooSmall(1))));

        let h = Hasher::new(3, 64, 1).unwrap();
        assert!(matches!(
            FlatHammingIndex::build(&records, &h),
            Err(Error::IncomparableSignatures { .. })
        ));
    }

    #[test]
    fn features_and_prehashed_signatures_give_same_index() {
        let h = Hasher::new(6, 128, 11).unwrap();
        let mut records: Vec<_> = (0..5)
            .map(|i| {
                let v = (0..6).map(|j| ((i * 6 + j) as f32 * 0.7).sin()).collect();
                PlaceRecord::with_feature(i, i, FeatureVector::new(v, "t").unwrap())
            })
            .collect();
        let from_features = FlatHammingIndex::build(&records, &h).unwrap();
        h.hash_records(&mut records).unwrap();
        let sig_only: Vec<_> = records
            .iter()
            .map(|r| PlaceRecord::with_signature(r.place_id, r.frame_index, r.signature.clone().unwrap()))
            .collect();
        let from_sigs = FlatHammingIndex::build(&sig_only, &h).unwrap();
        assert_eq!(from_features, from_sigs);
        assert_eq!(from_features.payload_bytes(), 5 * 16);
        assert_eq!(from_features.to_records(), sig_only);
    }
}
