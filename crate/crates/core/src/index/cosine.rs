use crate::error::{Error, Result};
use crate::kernel::{self, Top2};
use crate::model::{FeatureVector, PlaceRecord};

use super::{check_unique_ids, finish, QueryResult, SearchBackend};

/// Exact cosine-distance scan over raw feature vectors.
#[derive(Debug, Clone)]
pub struct FlatCosineIndex {
    records: Vec<PlaceRecord>,
    frames: Vec<u64>,
    norms: Vec<f64>,
    dim: usize,
}

impl FlatCosineIndex {
    pub fn build(records: Vec<PlaceRecord>) -> Result<Self> {
        if records.len() < 2 {
            return Err(Error::IndexTooSmall(records.len()));
        }
        check_unique_ids(&records)?;
        let mut dim = None;
        let mut norms = Vec::with_capacity(records.len());
        for r in &records {
            let f = r.feature.as_ref().ok_or_else(|| {
                Error::InvalidFeature(format!("place {} has no feature vector", r.place_id))
            })?;
            match dim {
                None => dim = Some(f.dim()),
                Some(d) if d != f.dim() => return Err(Error::dims(d, f.dim())),
                Some(_) => {}
            }
            norms.push(kernel::norm(f.values()));
        }
        let frames = records.iter().map(|r| r.frame_index).collect();
        Ok(Self {
            records,
            frames,
            norms,
            dim: dim.expect("at least two records"),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PlaceRecord] {
        &self.records
    }

    pub fn query_top2(&self, query: &FeatureVector) -> Result<QueryResult> {
        if query.dim() != self.dim {
            return Err(Error::dims(self.dim, query.dim()));
        }
        let q = query.values();
        let qn = kernel::norm(q);
        let mut top = Top2::new();
        for (pos, (r, &n)) in self.records.iter().zip(&self.norms).enumerate() {
            let f = r.feature.as_ref().expect("checked at build");
            let d = kernel::cosine_from_parts(kernel::dot(q, f.values()), qn, n);
            top.offer(d, r.place_id, pos);
        }
        Ok(finish(top, &self.frames, self.len(), |d| d))
    }
}

impl SearchBackend for FlatCosineIndex {
    type Query = FeatureVector;

    fn search(&self, query: &FeatureVector) -> Result<QueryResult> {
        self.query_top2(query)
    }

    fn size(&self) -> usize {
        self.len()
    }
}
