//! Synthetic place-recognition datasets.
//!
//! Places lie along a route: unit-norm prototypes follow a Gaussian random
//! walk, so neighbouring frames look alike the way consecutive video frames
//! do. Each place draws an exponentially distributed difficulty multiplier
//! with mean [`DIFFICULTY_MEAN`], and the reference and query traversals
//! add independent isotropic noise of standard deviation
//! `sigma * difficulty / sqrt(dim)` per dimension to the prototype. Class
//! labels come in contiguous route segments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BitSignature, FeatureVector, GroundTruth, PlaceRecord};
use crate::seed::derive_seed;

/// Correlation between consecutive route prototypes.
pub const ROUTE_CORRELATION: f64 = 0.9;

/// Mean of the per-place noise multiplier.
pub const DIFFICULTY_MEAN: f64 = 3.0;

/// Mean length, in frames, of a run of places sharing a dominant class.
pub const CLASS_SEGMENT_MEAN: f64 = 40.0;

/// Layer tag written into generated feature vectors.
pub const SYNTH_LAYER: &str = "synthetic";

const ROUTE_STREAM: &str = "synth/route";
const DIFFICULTY_STREAM: &str = "synth/difficulty";
const REFERENCE_NOISE_STREAM: &str = "synth/reference-noise";
const QUERY_NOISE_STREAM: &str = "synth/query-noise";
const SEGMENT_STREAM: &str = "synth/class-segments";
const REFERENCE_CLASS_STREAM: &str = "synth/reference-classes";
const QUERY_CLASS_STREAM: &str = "synth/query-classes";

/// Labels of the seeded streams [`generate`] draws from.
pub const GENERATE_STREAMS: [&str; 7] = [
    ROUTE_STREAM,
    DIFFICULTY_STREAM,
    REFERENCE_NOISE_STREAM,
    QUERY_NOISE_STREAM,
    SEGMENT_STREAM,
    REFERENCE_CLASS_STREAM,
    QUERY_CLASS_STREAM,
];

const MAX_CLASS_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_places: usize,
    pub dim: usize,
    pub seed: u64,
    /// Appearance-change strength: expected noise norm relative to the
    /// unit-norm prototype.
    pub perturbation_sigma: f64,
    pub n_classes: usize,
    /// Extra Dirichlet mass on a place's dominant class.
    pub class_concentration: f64,
}

impl SynthSpec {
    pub fn new(n_places: usize, dim: usize, perturbation_sigma: f64, seed: u64) -> Self {
        Self {
            n_places,
            dim,
            seed,
            perturbation_sigma,
            n_classes: 0,
            class_concentration: 20.0,
        }
    }

    pub fn with_classes(mut self, n_classes: usize, concentration: f64) -> Self {
        self.n_classes = n_classes;
        self.class_concentration = concentration;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_places < 2 {
            return Err(Error::IndexTooSmall(self.n_places));
        }
        if self.dim == 0 {
            return Err(Error::InvalidInput("dim must be at least 1".into()));
        }
        if !(self.perturbation_sigma >= 0.0 && self.perturbation_sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma {} must be finite and >= 0", self.perturbation_sigma)));
        }
        if self.n_classes > 0 && !(self.class_concentration > 0.0 && self.class_concentration.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "class concentration {} must be > 0",
                self.class_concentration
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub reference: Vec<PlaceRecord>,
    pub query: Vec<PlaceRecord>,
    pub ground_truth: GroundTruth,
}

fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label))
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let (n, dim) = (spec.n_places, spec.dim);
    let mut walk_rng = stream(spec.seed, ROUTE_STREAM);
    let mut difficulty_rng = stream(spec.seed, DIFFICULTY_STREAM);
    let mut ref_rng = stream(spec.seed, REFERENCE_NOISE_STREAM);
    let mut query_rng = stream(spec.seed, QUERY_NOISE_STREAM);

    let keep = ROUTE_CORRELATION as f32;
    let innovate = (1.0 - ROUTE_CORRELATION * ROUTE_CORRELATION).sqrt() as f32;
    let mut state: Vec<f32> = (0..dim).map(|_| walk_rng.sample(StandardNormal)).collect();

    let classes = if spec.n_classes > 0 {
        Some(ClassModel::new(spec)?)
    } else {
        None
    };

    let mut reference = Vec::with_capacity(n);
    let mut query = Vec::with_capacity(n);
    let mut prototype = vec![0f32; dim];
    for i in 0..n {
        if i > 0 {
            for s in state.iter_mut() {
                let z: f32 = walk_rng.sample(StandardNormal);
                *s = keep * *s + innovate * z;
            }
        }
        let norm = state.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt() as f32;
        for (p, s) in prototype.iter_mut().zip(&state) {
            *p = s / norm;
        }
        let difficulty: f64 = DIFFICULTY_MEAN * difficulty_rng.sample::<f64, _>(Exp1);
        let scale = (spec.perturbation_sigma * difficulty / (dim as f64).sqrt()) as f32;

        let id = i as u64;
        reference.push(PlaceRecord::with_feature(id, id, perturb(&prototype, scale, &mut ref_rng)?));
        query.push(PlaceRecord::with_feature(id, id, perturb(&prototype, scale, &mut query_rng)?));
    }

    if let Some(mut model) = classes {
        for (r, q) in reference.iter_mut().zip(query.iter_mut()) {
            let dominant = model.next_dominant();
            r.class_probs = Some(model.draw(dominant, Side::Reference)?);
            q.class_probs = Some(model.draw(dominant, Side::Query)?);
        }
    }

    let ground_truth = GroundTruth::new((0..n as u64).map(|i| (i, i)), 1)?;
    Ok(SynthDataset {
        reference,
        query,
        ground_truth,
    })
}

fn perturb(prototype: &[f32], scale: f32, rng: &mut ChaCha8Rng) -> Result<FeatureVector> {
    let values = if scale == 0.0 {
        prototype.to_vec()
    } else {
        prototype
            .iter()
            .map(|p| {
                let z: f32 = rng.sample(StandardNormal);
                p + scale * z
            })
            .collect()
    };
    FeatureVector::new(values, SYNTH_LAYER)
}

#[derive(Clone, Copy)]
enum Side {
    Reference,
    Query,
}

struct ClassModel {
    n_classes: usize,
    segment_rng: ChaCha8Rng,
    reference_rng: ChaCha8Rng,
    query_rng: ChaCha8Rng,
    segment_len: Geometric,
    dominant_gamma: Gamma<f64>,
    other_gamma: Gamma<f64>,
    current: usize,
    remaining: u64,
}

impl ClassModel {
    fn new(spec: &SynthSpec) -> Result<Self> {
        let bad = |e: rand_distr::GammaError| Error::InvalidInput(format!("class model: {e}"));
        Ok(Self {
            n_classes: spec.n_classes,
            segment_rng: stream(spec.seed, SEGMENT_STREAM),
            reference_rng: stream(spec.seed, REFERENCE_CLASS_STREAM),
            query_rng: stream(spec.seed, QUERY_CLASS_STREAM),
            segment_len: Geometric::new(1.0 / CLASS_SEGMENT_MEAN).expect("valid probability"),
            dominant_gamma: Gamma::new(1.0 + spec.class_concentration, 1.0).map_err(bad)?,
            other_gamma: Gamma::new(1.0, 1.0).map_err(bad)?,
            current: 0,
            remaining: 0,
        })
    }

    fn next_dominant(&mut self) -> usize {
        if self.remaining == 0 {
            self.current = self.segment_rng.random_range(0..self.n_classes);
            self.remaining = 1 + self.segment_len.sample(&mut self.segment_rng);
        }
        self.remaining -= 1;
        self.current
    }

    /// Dirichlet draw favouring `dominant`, redrawn until `dominant` is the
    /// arg-max with probability at least one half.
    fn draw(&mut self, dominant: usize, side: Side) -> Result<Vec<f32>> {
        let rng = match side {
            Side::Reference => &mut self.reference_rng,
            Side::Query => &mut self.query_rng,
        };
        let mut probs = vec![0f64; self.n_classes];
        for _ in 0..MAX_CLASS_DRAWS {
            for (c, p) in probs.iter_mut().enumerate() {
                *p = if c == dominant {
                    self.dominant_gamma.sample(rng)
                } else {
                    self.other_gamma.sample(rng)
                };
            }
            let total: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= total);
            let argmax = argmax(&probs);
            if argmax == dominant && probs[dominant] >= 0.5 {
                break;
            }
        }
        let argmax = argmax(&probs);
        probs.swap(argmax, dominant);
        Ok(probs.into_iter().map(|p| (p as f32).clamp(0.0, 1.0)).collect())
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Uniform `[-1, 1)` features, for timing runs where content is irrelevant.
pub fn random_features(n: usize, dim: usize, seed: u64) -> Result<Vec<PlaceRecord>> {
    let mut rng = stream(seed, "synth/random-features");
    (0..n as u64)
        .map(|i| {
            let values = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            Ok(PlaceRecord::with_feature(i, i, FeatureVector::new(values, SYNTH_LAYER)?))
        })
        .collect()
}

/// Uniformly random signatures bound to `hasher_id`. Scan cost does not
/// depend on signature content, so these stand in for hashed features in
/// timing runs.
pub fn random_signatures(n: usize, bits: usize, hasher_id: u64, seed: u64) -> Result<Vec<PlaceRecord>> {
    if bits == 0 || !bits.is_multiple_of(64) {
        return Err(Error::InvalidBitLength(bits));
    }
    let mut rng = stream(seed, "synth/random-signatures");
    (0..n as u64)
        .map(|i| {
            let words = (0..bits / 64).map(|_| rng.random()).collect();
            Ok(PlaceRecord::with_signature(i, i, BitSignature::from_words(words, hasher_id)?))
        })
        .collect()
}
