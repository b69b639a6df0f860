//! Domain types shared by every stage: feature vectors, labelled samples,
//! sample sets and query-by-gallery distance matrices.

use std::fmt;

use crate::error::{Error, Result};

/// Number of discrete illumination levels; labels live in `0..ILLUMINATION_LEVELS`.
pub const ILLUMINATION_LEVELS: u8 = 8;
/// Number of discrete z-rotation levels; labels live in `0..ZROTATION_LEVELS`.
pub const ZROTATION_LEVELS: u8 = 8;
/// Width of the embedding produced by the reference encoder head.
pub const DEFAULT_DIM: usize = 1024;

/// A real-valued embedding.
///
/// [`FeatureVector::new`] checks finiteness; the `From<Vec<f64>>` conversion
/// does not, so that [`validate_set`] has something to report on.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::arg("feature vector must have at least one entry"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("feature entry {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// One labelled observation.
///
/// For generated source-domain data the `camera` field carries the background
/// index: each rendered background acts as a distinct virtual camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub identity: u32,
    pub camera: u32,
    pub illumination: Option<u8>,
    pub zrotation: Option<u8>,
    pub features: FeatureVector,
}

impl Sample {
    pub fn new(identity: u32, camera: u32, features: FeatureVector) -> Self {
        Self {
            identity,
            camera,
            illumination: None,
            zrotation: None,
            features,
        }
    }

    pub fn with_illumination(mut self, label: u8) -> Self {
        self.illumination = Some(label);
        self
    }

    pub fn with_zrotation(mut self, label: u8) -> Self {
        self.zrotation = Some(label);
        self
    }
}

/// An ordered collection of samples sharing one feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    dimension: usize,
    samples: Vec<Sample>,
}

impl SampleSet {
    /// Builds a set without checking; run [`validate_set`] before trusting it.
    pub fn new(dimension: usize, samples: Vec<Sample>) -> Self {
        Self { dimension, samples }
    }

    pub fn empty(dimension: usize) -> Self {
        Self::new(dimension, Vec::new())
    }

    /// Builds a set and rejects it if [`validate_set`] reports anything.
    pub fn validated(dimension: usize, samples: Vec<Sample>) -> Result<Self> {
        let set = Self::new(dimension, samples);
        match validate_set(&set).first() {
            None => Ok(set),
            Some(v) => Err(Error::arg(v.to_string())),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    pub fn get(&self, index: usize) -> Option<&Sample> {
        self.samples.get(index)
    }

    pub fn push(&mut self, sample: Sample) {
        self.samples.push(sample);
    }

    /// Samples satisfying `keep`, in their original order.
    pub fn filter(&self, mut keep: impl FnMut(&Sample) -> bool) -> SampleSet {
        SampleSet::new(
            self.dimension,
            self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        )
    }

    /// Samples at `indices`, in the order given.
    pub fn select(&self, indices: &[usize]) -> Result<SampleSet> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::arg(format!("sample index {i} out of bounds")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleSet::new(self.dimension, samples))
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }
}

impl<'a> IntoIterator for &'a SampleSet {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

/// A single broken invariant found by [`validate_set`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    ZeroDimension,
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    NonFinite {
        index: usize,
        coordinate: usize,
    },
    IlluminationRange {
        index: usize,
        value: u8,
    },
    ZRotationRange {
        index: usize,
        value: u8,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroDimension => write!(f, "declared dimension is zero"),
            Violation::DimensionMismatch {
                index,
                expected,
                found,
            } => write!(f, "sample {index}: dimension {found}, expected {expected}"),
            Violation::NonFinite { index, coordinate } => {
                write!(f, "sample {index}: coordinate {coordinate} is not finite")
            }
            Violation::IlluminationRange { index, value } => {
                write!(f, "sample {index}: illumination label {value} outside 0..=7")
            }
            Violation::ZRotationRange { index, value } => {
                write!(f, "sample {index}: z-rotation label {value} outside 0..=7")
            }
        }
    }
}

/// Lists every invariant violation in `set`; an empty list means the set is valid.
pub fn validate_set(set: &SampleSet) -> Vec<Violation> {
    let mut out = Vec::new();
    if set.dimension == 0 {
        out.push(Violation::ZeroDimension);
    }
    for (index, s) in set.samples.iter().enumerate() {
        let found = s.features.dim();
        if found != set.dimension {
            out.push(Violation::DimensionMismatch {
                index,
                expected: set.dimension,
                found,
            });
        }
        if let Some(coordinate) = s.features.as_slice().iter().position(|v| !v.is_finite()) {
            out.push(Violation::NonFinite { index, coordinate });
        }
        if let Some(value) = s.illumination.filter(|&v| v >= ILLUMINATION_LEVELS) {
            out.push(Violation::IlluminationRange { index, value });
        }
        if let Some(value) = s.zrotation.filter(|&v| v >= ZROTATION_LEVELS) {
            out.push(Violation::ZRotationRange { index, value });
        }
    }
    out
}

/// Row-major `rows x cols` matrix of query-to-gallery distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::arg(format!(
                "{} entries do not fill a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("distance matrix entries must be finite"));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut entries = Vec::with_capacity(rows * cols);
        for q in 0..rows {
            for g in 0..cols {
                entries.push(f(q, g));
            }
        }
        Self::new(rows, cols, entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, q: usize) -> &[f64] {
        &self.entries[q * self.cols..(q + 1) * self.cols]
    }

    pub fn get(&self, q: usize, g: usize) -> f64 {
        self.entries[q * self.cols + g]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Applies `f` to every entry; used to check rank-invariance properties.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.rows, self.cols, self.entries.iter().map(|&v| f(v)).collect())
    }
}
