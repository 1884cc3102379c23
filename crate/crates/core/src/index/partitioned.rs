use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_signature_file, write_signature_file};
use crate::lsh::Hasher;
use crate::model::{BitSignature, PlaceRecord};

use super::{FlatHammingIndex, QueryResult, SearchBackend};

const SIDECAR: &str = "partition.json";
const FALLBACK_FILE: &str = "all.phs";

fn class_file(class: usize) -> String {
    format!("class_{class:03}.phs")
}

fn check_theta(theta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(Error::InvalidThreshold(theta))
    }
}

/// One Hamming index per semantic class plus a full fallback index.
///
/// A place belongs to class `i` when its probability for `i` is at least
/// `theta_build`; it may belong to several classes or to none.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedIndex {
    theta_build: f64,
    per_class: Vec<FlatHammingIndex>,
    /// Ascending fallback positions of each class's members.
    members: Vec<Vec<usize>>,
    fallback: FlatHammingIndex,
    class_names: Option<Vec<String>>,
}

/// A signature plus the class probabilities of the observed place.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedQuery {
    pub signature: BitSignature,
    pub class_probs: Vec<f32>,
    pub theta: f64,
}

/// JSON metadata written next to the per-class signature files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSidecar {
    pub theta_build: f64,
    pub hasher_id: u64,
    pub length_bits: usize,
    pub class_count: usize,
    pub class_names: Option<Vec<String>>,
    pub membership_counts: Vec<usize>,
    pub total_places: usize,
}

impl PartitionedIndex {
    pub fn build(records: &[PlaceRecord], hasher: &Hasher, theta: f64) -> Result<Self> {
        check_theta(theta)?;
        let class_count = match records.first() {
            None => return Err(Error::IndexTooSmall(0)),
            Some(r) => r
                .class_probs
                .as_ref()
                .ok_or(Error::MissingClassProbabilities(r.place_id))?
                .len(),
        };
        if class_count < 2 {
            return Err(Error::InvalidInput(format!(
                "partitioning needs at least 2 classes, got {class_count}"
            )));
        }
        for r in records {
            let probs = r
                .class_probs
                .as_ref()
                .ok_or(Error::MissingClassProbabilities(r.place_id))?;
            if probs.len() != class_count {
                return Err(Error::dims(class_count, probs.len()));
            }
        }
        let fallback = FlatHammingIndex::build(records, hasher)?;
        let mut members = vec![Vec::new(); class_count];
        for (pos, r) in records.iter().enumerate() {
            let probs = r.class_probs.as_ref().expect("checked above");
            for (class, &p) in probs.iter().enumerate() {
                if f64::from(p) >= theta {
                    members[class].push(pos);
                }
            }
        }
        Self::from_members(fallback, members, theta, None)
    }

    fn from_members(
        fallback: FlatHammingIndex,
        members: Vec<Vec<usize>>,
        theta_build: f64,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let all = fallback.to_records();
        let per_class = members
            .iter()
            .map(|m| {
                let subset: Vec<_> = m.iter().map(|&pos| all[pos].clone()).collect();
                FlatHammingIndex::from_signatures_unchecked(&subset, fallback.hasher_id(), fallback.length_bits())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            theta_build,
            per_class,
            members,
            fallback,
            class_names,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.class_count() {
            return Err(Error::dims(self.class_count(), names.len()));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn class_count(&self) -> usize {
        self.per_class.len()
    }

    pub fn theta_build(&self) -> f64 {
        self.theta_build
    }

    pub fn class_index(&self, class: usize) -> &FlatHammingIndex {
        &self.per_class[class]
    }

    pub fn fallback(&self) -> &FlatHammingIndex {
        &self.fallback
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn len(&self) -> usize {
        self.fallback.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fallback.is_empty()
    }

    /// Place ids of class `class`, in storage order.
    pub fn class_members(&self, class: usize) -> &[u64] {
        self.per_class[class].ids()
    }

    fn qualifying(&self, class_probs: &[f32], theta: f64) -> Result<Vec<usize>> {
        check_theta(theta)?;
        if class_probs.len() != self.class_count() {
            return Err(Error::dims(self.class_count(), class_probs.len()));
        }
        Ok(class_probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| f64::from(p) >= theta)
            .map(|(c, _)| c)
            .collect())
    }

    /// Deduplicated fallback positions a query would scan, ascending.
    pub fn candidates(&self, class_probs: &[f32], theta: f64) -> Result<Vec<usize>> {
        let classes = self.qualifying(class_probs, theta)?;
        let mut out: Vec<usize> = classes.iter().flat_map(|&c| self.members[c].iter().copied()).collect();
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    pub fn query(&self, signature: &BitSignature, class_probs: &[f32], theta: f64) -> Result<QueryResult> {
        let classes = self.qualifying(class_probs, theta)?;
        let result = match classes.as_slice() {
            [] => None,
            [only] if self.per_class[*only].len() >= 2 => Some(self.per_class[*only].query_top2(signature)?),
            [_] => None,
            _ => {
                let positions = self.candidates(class_probs, theta)?;
                if positions.len() == self.len() {
                    Some(self.fallback.query_top2(signature)?)
                } else if positions.len() >= 2 {
                    Some(self.fallback.query_positions(signature, &positions)?)
                } else {
                    None
                }
            }
        };
        match result {
            Some(r) => Ok(r),
            None => {
                let mut r = self.fallback.query_top2(signature)?;
                r.used_fallback = true;
                Ok(r)
            }
        }
    }

    pub fn sidecar(&self) -> PartitionSidecar {
        PartitionSidecar {
            theta_build: self.theta_build,
            hasher_id: self.fallback.hasher_id(),
            length_bits: self.fallback.length_bits(),
            class_count: self.class_count(),
            class_names: self.class_names.clone(),
            membership_counts: self.per_class.iter().map(FlatHammingIndex::len).collect(),
            total_places: self.len(),
        }
    }

    /// Writes `partition.json`, `all.phs` and one `class_NNN.phs` per class.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let (id, bits) = (self.fallback.hasher_id(), self.fallback.length_bits());
        write_signature_file(dir.join(FALLBACK_FILE), id, bits, &self.fallback.to_records())?;
        for (c, idx) in self.per_class.iter().enumerate() {
            write_signature_file(dir.join(class_file(c)), id, bits, &idx.to_records())?;
        }
        let mut w = BufWriter::new(File::create(dir.join(SIDECAR))?);
        serde_json::to_writer_pretty(&mut w, &self.sidecar())?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let sidecar: PartitionSidecar = serde_json::from_reader(BufReader::new(File::open(dir.join(SIDECAR))?))?;
        let all = read_signature_file(dir.join(FALLBACK_FILE))?;
        if all.hasher_id != sidecar.hasher_id {
            return Err(Error::IncomparableSignatures {
                left: sidecar.hasher_id,
                right: all.hasher_id,
            });
        }
        let fallback = FlatHammingIndex::from_signatures(&all.records, all.hasher_id, all.length_bits)?;
        let position: HashMap<u64, usize> = fallback.ids().iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut members = Vec::with_capacity(sidecar.class_count);
        for c in 0..sidecar.class_count {
            let file = read_signature_file(dir.join(class_file(c)))?;
            if file.hasher_id != sidecar.hasher_id {
                return Err(Error::IncomparableSignatures {
                    left: sidecar.hasher_id,
                    right: file.hasher_id,
                });
            }
            let mut m = file
                .records
                .iter()
                .map(|r| {
                    position
                        .get(&r.place_id)
                        .copied()
                        .ok_or_else(|| Error::format(format!("class {c} lists unknown place {}", r.place_id)))
                })
                .collect::<Result<Vec<_>>>()?;
            m.sort_unstable();
            members.push(m);
        }
        Self::from_members(fallback, members, sidecar.theta_build, sidecar.class_names)
    }
}

impl SearchBackend for PartitionedIndex {
    type Query = PartitionedQuery;

    fn search(&self, q: &PartitionedQuery) -> Result<QueryResult> {
        self.query(&q.signature, &q.class_probs, q.theta)
    }

    fn size(&self) -> usize {
        self.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FeatureVector;

    fn records(probs: &[Vec<f32>]) -> Vec<PlaceRecord> {
        probs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let v = (0..8).map(|j| ((i * 8 + j) as f32 * 0.91).sin()).collect();
                PlaceRecord::with_feature(i as u64, i as u64, FeatureVector::new(v, "t").unwrap())
                    .set_class_probs(p.clone())
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn membership_follows_threshold_rule() {
        let h = Hasher::new(8, 64, 1).unwrap();
        let recs = records(&[vec![0.9, 0.1], vec![0.4, 0.6], vec![0.5, 0.5]]);
        let idx = PartitionedIndex::build(&recs, &h, 0.5).unwrap();
        assert_eq!(idx.class_members(0), &[0, 2]);
        assert_eq!(idx.class_members(1), &[1, 2]);

        let all = PartitionedIndex::build(&recs, &h, 0.0).unwrap();
        assert_eq!(all.class_members(0), &[0, 1, 2]);
        assert_eq!(all.class_members(1), &[0, 1, 2]);
    }

    #[test]
    fn eleven_classes_give_eleven_indices() {
        let h = Hasher::new(8, 64, 1).unwrap();
        let probs: Vec<Vec<f32>> = (0..20)
            .map(|i| (0..11).map(|c| if c == i % 11 { 0.8 } else { 0.02 }).collect())
            .collect();
        let idx = PartitionedIndex::build(&records(&probs), &h, 0.1).unwrap();
        assert_eq!(idx.class_count(), 11);
        assert!((0..11).all(|c| !idx.class_index(c).is_empty()));
    }

    #[test]
    fn build_errors() {
        let h = Hasher::new(8, 64, 1).unwrap();
        let mut recs = records(&[vec![0.9, 0.1], vec![0.4, 0.6]]);
        assert!(matches!(
            PartitionedIndex::build(&recs, &h, 1.5),
            Err(Error::InvalidThreshold(_))
        ));
        recs[1].class_probs = Some(vec![0.1, 0.2, 0.7]);
        assert!(matches!(
            PartitionedIndex::build(&recs, &h, 0.5),
            Err(Error::DimensionMismatch { .. })
        ));
        recs[1].class_probs = None;
        assert!(matches!(
            PartitionedIndex::build(&recs, &h, 0.5),
            Err(Error::MissingClassProbabilities(1))
        ));
    }

    #[test]
    fn query_below_threshold_falls_back() {
        let h = Hasher::new(8, 64, 1).unwrap();
        let recs = records(&[vec![0.9, 0.1], vec![0.4, 0.6], vec![0.5, 0.5], vec![0.8, 0.2]]);
        let idx = PartitionedIndex::build(&recs, &h, 0.5).unwrap();
        let q = h.hash_vector(recs[1].feature.as_ref().unwrap()).unwrap();

        let r = idx.query(&q, &[0.3, 0.3], 0.5).unwrap();
        assert!(r.used_fallback);
        assert_eq!(r.candidates_scanned, 4);
        assert_eq!(r.best_id, 1);

        let r = idx.query(&q, &[0.1, 0.9], 0.5).unwrap();
        assert!(!r.used_fallback);
        assert_eq!(r.candidates_scanned, 2);

        let full = idx.fallback().query_top2(&q).unwrap();
        assert_eq!(idx.query(&q, &[0.0, 0.0], 0.0).unwrap(), full);
        assert!(matches!(idx.query(&q, &[0.5], 0.5), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let h = Hasher::new(8, 128, 3).unwrap();
        let recs = records(&[vec![0.9, 0.1, 0.0], vec![0.4, 0.6, 0.2], vec![0.5, 0.5, 0.05]]);
        let idx = PartitionedIndex::build(&recs, &h, 0.3)
            .unwrap()
            .with_class_names(vec!["office".into(), "corridor".into(), "kitchen".into()])
            .unwrap();
        idx.save(dir.path()).unwrap();
        let back = PartitionedIndex::load(dir.path()).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.sidecar().membership_counts, vec![3, 2, 0]);
    }
}
