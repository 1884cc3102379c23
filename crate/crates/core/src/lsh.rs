//! Random-hyperplane hashing that preserves cosine similarity.
//!
//! Bit `i` of a signature is the sign of the projection onto hyperplane
//! `i`, whose entries are standard normal. Each hyperplane is drawn from its
//! own ChaCha8 stream keyed by the seed, so row `i` does not depend on the
//! number of bits or on whether the matrix is materialized. The fraction of
//! differing bits between two signatures estimates `angle / pi`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel;
use crate::model::{BitSignature, FeatureVector, PlaceRecord};

/// Bumped whenever the hyperplane generator changes; part of every hasher id.
pub const GENERATOR_VERSION: u32 = 1;

/// Bit lengths swept by default, 2^8 through 2^13.
pub const DEFAULT_BIT_LENGTHS: [usize; 6] = [256, 512, 1024, 2048, 4096, 8192];

/// Largest hyperplane matrix (in f32 entries) kept in memory under
/// [`PlaneStorage::Auto`]; 512 MiB.
pub const DENSE_LIMIT: usize = 1 << 27;

/// Vectors hashed together per pass over the hyperplanes.
const BLOCK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneStorage {
    /// Dense when `bits * dim <= DENSE_LIMIT`, otherwise on demand.
    Auto,
    Dense,
    /// Regenerate each hyperplane whenever it is needed.
    OnDemand,
}

#[derive(Clone)]
enum Planes {
    Dense(Vec<f32>),
    OnDemand,
}

#[derive(Clone)]
pub struct Hasher {
    dim: usize,
    bits: usize,
    seed: u64,
    id: u64,
    key: [u8; 32],
    planes: Planes,
}

impl std::fmt::Debug for Hasher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Hasher")
            .field("dim", &self.dim)
            .field("bits", &self.bits)
            .field("seed", &self.seed)
            .field("id", &format_args!("{:#018x}", self.id))
            .field("dense", &self.is_dense())
            .finish()
    }
}

impl Hasher {
    pub fn new(dim: usize, bits: usize, seed: u64) -> Result<Self> {
        Self::with_storage(dim, bits, seed, PlaneStorage::Auto)
    }

    pub fn with_storage(dim: usize, bits: usize, seed: u64, storage: PlaneStorage) -> Result<Self> {
        if bits == 0 || !bits.is_multiple_of(64) {
            return Err(Error::InvalidBitLength(bits));
        }
        if dim == 0 {
            return Err(Error::InvalidInput("hasher dimension must be at least 1".into()));
        }
        let mut hasher = Self {
            dim,
            bits,
            seed,
            id: hasher_id(seed, dim, bits),
            key: stream_key(seed),
            planes: Planes::OnDemand,
        };
        let dense = match storage {
            PlaneStorage::Dense => true,
            PlaneStorage::OnDemand => false,
            PlaneStorage::Auto => bits.saturating_mul(dim) <= DENSE_LIMIT,
        };
        if dense {
            let mut m = vec![0f32; bits * dim];
            m.par_chunks_mut(dim)
                .enumerate()
                .for_each(|(row, out)| hasher.fill_row(row, out));
            hasher.planes = Planes::Dense(m);
        }
        Ok(hasher)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn words(&self) -> usize {
        self.bits / 64
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.planes, Planes::Dense(_))
    }

    fn fill_row(&self, row: usize, out: &mut [f32]) {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(row as u64);
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }

    /// Hyperplane `row` as a fresh vector.
    pub fn hyperplane(&self, row: usize) -> Vec<f32> {
        assert!(row < self.bits, "hyperplane {row} out of range");
        match &self.planes {
            Planes::Dense(m) => m[row * self.dim..(row + 1) * self.dim].to_vec(),
            Planes::OnDemand => {
                let mut out = vec![0f32; self.dim];
                self.fill_row(row, &mut out);
                out
            }
        }
    }

    pub fn hash_vector(&self, v: &FeatureVector) -> Result<BitSignature> {
        Ok(self.hash_batch(&[v])?.pop().expect("one signature per input"))
    }

    /// Hashes many vectors; output order matches input order.
    pub fn hash_batch(&self, vectors: &[&FeatureVector]) -> Result<Vec<BitSignature>> {
        for v in vectors {
            if v.dim() != self.dim {
                return Err(Error::dims(self.dim, v.dim()));
            }
        }
        let blocks: Vec<Vec<Vec<u64>>> = vectors
            .par_chunks(BLOCK)
            .map(|block| self.hash_block(block))
            .collect();
        blocks
            .into_iter()
            .flatten()
            .map(|words| BitSignature::from_words(words, self.id))
            .collect()
    }

    /// Fills the `signature` field of every record from its feature.
    pub fn hash_records(&self, records: &mut [PlaceRecord]) -> Result<()> {
        let features = records
            .iter()
            .map(|r| {
                r.feature
                    .as_ref()
                    .ok_or_else(|| Error::InvalidFeature(format!("place {} has no feature vector", r.place_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let sigs = self.hash_batch(&features)?;
        for (r, s) in records.iter_mut().zip(sigs) {
            r.signature = Some(s);
        }
        Ok(())
    }

    fn hash_block(&self, block: &[&FeatureVector]) -> Vec<Vec<u64>> {
        let mut out = vec![vec![0u64; self.words()]; block.len()];
        let mut scratch = match self.planes {
            Planes::Dense(_) => Vec::new(),
            Planes::OnDemand => vec![0f32; 2 * self.dim],
        };
        // bits is a multiple of 64, so rows come in pairs
        for row in (0..self.bits).step_by(2) {
            let pair: &[f32] = match &self.planes {
                Planes::Dense(m) => &m[row * self.dim..(row + 2) * self.dim],
                Planes::OnDemand => {
                    let (a, b) = scratch.split_at_mut(self.dim);
                    self.fill_row(row, a);
                    self.fill_row(row + 1, b);
                    &scratch
                }
            };
            let planes = [&pair[..self.dim], &pair[self.dim..]];
            let (word, bit) = (row / 64, row % 64);
            for (vs, sigs) in block.chunks(4).zip(out.chunks_mut(4)) {
                // pad short groups with the first vector; extra lanes are ignored
                let pick = |k: usize| vs.get(k).unwrap_or(&vs[0]).values();
                let dots = kernel::dot_tile(planes, [pick(0), pick(1), pick(2), pick(3)]);
                for (p, row_dots) in dots.iter().enumerate() {
                    for (d, sig) in row_dots.iter().zip(sigs.iter_mut()) {
                        // ties at the hyperplane count as 1
                        if *d >= 0.0 {
                            sig[word] |= 1 << (bit + p);
                        }
                    }
                }
            }
        }
        out
    }
}

fn stream_key(seed: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"placerec/hyperplanes");
    h.update(GENERATOR_VERSION.to_le_bytes());
    h.update(seed.to_le_bytes());
    h.finalize().into()
}

/// Digest of `(seed, dim, bits, generator version)`.
pub fn hasher_id(seed: u64, dim: usize, bits: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(b"placerec/hasher");
    h.update(GENERATOR_VERSION.to_le_bytes());
    h.update(seed.to_le_bytes());
    h.update((dim as u64).to_le_bytes());
    h.update((bits as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Number of differing bits between two signatures of the same hasher.
pub fn hamming(a: &BitSignature, b: &BitSignature) -> Result<u32> {
    if a.hasher_id() != b.hasher_id() {
        return Err(Error::IncomparableSignatures {
            left: a.hasher_id(),
            right: b.hasher_id(),
        });
    }
    if a.length_bits() != b.length_bits() {
        return Err(Error::dims(a.length_bits(), b.length_bits()));
    }
    Ok(kernel::hamming_words(a.words(), b.words()))
}

/// Cosine similarity implied by a Hamming count: `cos(pi * h / bits)`.
pub fn estimate_cosine(hamming_count: u32, bits: usize) -> Result<f64> {
    if bits == 0 || hamming_count as usize > bits {
        return Err(Error::InvalidInput(format!(
            "hamming count {hamming_count} outside 0..={bits}"
        )));
    }
    Ok((std::f64::consts::PI * f64::from(hamming_count) / bits as f64).cos())
}

/// `1 - cos(x, y)`, in `[0, 2]`.
pub fn cosine_distance(x: &FeatureVector, y: &FeatureVector) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::dims(x.dim(), y.dim()));
    }
    let (a, b) = (x.values(), y.values());
    let (na, nb) = (kernel::norm(a), kernel::norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidFeature("zero vector".into()));
    }
    Ok(kernel::cosine_from_parts(kernel::dot(a, b), na, nb))
}
