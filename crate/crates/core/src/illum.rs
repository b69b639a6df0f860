//! Illumination estimation and switching.
//!
//! The estimator assigns raw illumination labels (`0..8`) to target samples;
//! the switch assigns condition indices (`1..=N`). Both are nearest-centroid
//! classifiers behind the [`Classifier`] trait.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{FeatureVector, SampleSet};

/// Number of illumination conditions the bank is built for by default.
pub const DEFAULT_CONDITIONS: usize = 2;

pub trait Classifier: Sync {
    /// Output labels, ascending.
    fn labels(&self) -> &[u16];

    fn dimension(&self) -> usize;

    fn classify(&self, x: &[f64]) -> Result<u16>;

    /// Classifies every sample of `set`, in order.
    fn classify_set(&self, set: &SampleSet) -> Result<Vec<u16>> {
        set.samples()
            .par_iter()
            .map(|s| self.classify(s.features.as_slice()))
            .collect()
    }
}

/// Nearest-centroid classifier under Euclidean distance; ties go to the lowest label.
#[derive(Clone, Debug, PartialEq)]
pub struct CentroidClassifier {
    labels: Vec<u16>,
    centroids: Vec<FeatureVector>,
}

impl CentroidClassifier {
    /// Builds a classifier from `(label, centroid)` pairs, sorted by label.
    pub fn new(mut entries: Vec<(u16, FeatureVector)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::arg("classifier needs at least one label"));
        }
        entries.sort_by_key(|(l, _)| *l);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::arg("classifier labels must be distinct"));
        }
        let d = entries[0].1.dim();
        for (_, c) in &entries {
            Error::check_dim(d, c.dim())?;
        }
        let (labels, centroids) = entries.into_iter().unzip();
        Ok(Self { labels, centroids })
    }

    pub fn centroids(&self) -> &[FeatureVector] {
        &self.centroids
    }

    pub fn centroid(&self, label: u16) -> Option<&FeatureVector> {
        self.labels
            .iter()
            .position(|&l| l == label)
            .map(|i| &self.centroids[i])
    }
}

impl Classifier for CentroidClassifier {
    fn labels(&self) -> &[u16] {
        &self.labels
    }

    fn dimension(&self) -> usize {
        self.centroids[0].dim()
    }

    fn classify(&self, x: &[f64]) -> Result<u16> {
        Error::check_dim(self.dimension(), x.len())?;
        let mut best = (f64::INFINITY, self.labels[0]);
        for (&label, c) in self.labels.iter().zip(&self.centroids) {
            let d2: f64 = c
                .as_slice()
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 < best.0 {
                best = (d2, label);
            }
        }
        Ok(best.1)
    }
}

fn centroid_of<'a>(vectors: impl Iterator<Item = &'a FeatureVector>, dim: usize) -> FeatureVector {
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        sum.iter_mut().zip(v.as_slice()).for_each(|(s, x)| *s += x);
        n += 1;
    }
    sum.iter_mut().for_each(|s| *s /= n as f64);
    FeatureVector::from(sum)
}

/// Fits one centroid per illumination label present in `labeled`.
pub fn train_illumination_estimator(labeled: &SampleSet) -> Result<CentroidClassifier> {
    if labeled.is_empty() {
        return Err(Error::arg("cannot train an estimator on an empty set"));
    }
    let d = labeled.dimension();
    let mut groups: BTreeMap<u8, Vec<&FeatureVector>> = BTreeMap::new();
    for (i, s) in labeled.iter().enumerate() {
        let label = s
            .illumination
            .ok_or_else(|| Error::arg(format!("sample {i} has no illumination label")))?;
        Error::check_dim(d, s.features.dim())?;
        groups.entry(label).or_default().push(&s.features);
    }
    CentroidClassifier::new(
        groups
            .into_iter()
            .map(|(l, vs)| (l as u16, centroid_of(vs.into_iter(), d)))
            .collect(),
    )
}

/// Prediction counts per label, for labels predicted at least once.
pub fn prediction_counts<C: Classifier + ?Sized>(c: &C, target: &SampleSet) -> Result<BTreeMap<u16, usize>> {
    let mut counts = BTreeMap::new();
    for label in c.classify_set(target)? {
        *counts.entry(label).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Orders labels by descending count, lower label first on ties, and keeps `n`.
pub fn top_labels(counts: &BTreeMap<u16, usize>, n: usize) -> Result<Vec<u16>> {
    if n == 0 {
        return Err(Error::arg("n must be positive"));
    }
    if n > counts.len() {
        return Err(Error::arg(format!(
            "asked for {n} labels but only {} distinct labels were predicted",
            counts.len()
        )));
    }
    let mut ranked: Vec<(u16, usize)> = counts.iter().map(|(&l, &c)| (l, c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(n).map(|(l, _)| l).collect())
}

/// The `n` most frequently predicted labels over `target`.
pub fn most_common_labels<C: Classifier + ?Sized>(c: &C, target: &SampleSet, n: usize) -> Result<Vec<u16>> {
    top_labels(&prediction_counts(c, target)?, n)
}

/// Fraction of `target` whose predicted label is in `labels`.
pub fn coverage_fraction<C: Classifier + ?Sized>(c: &C, target: &SampleSet, labels: &[u16]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::arg("coverage needs at least one label"));
    }
    if target.is_empty() {
        return Ok(0.0);
    }
    let predicted = c.classify_set(target)?;
    let hit = predicted.iter().filter(|l| labels.contains(l)).count();
    Ok(hit as f64 / predicted.len() as f64)
}

/// Trains the switch: set `n` (0-based) becomes condition `n + 1`.
pub fn train_switch(synthetic_per_condition: &[SampleSet]) -> Result<CentroidClassifier> {
    if synthetic_per_condition.is_empty() {
        return Err(Error::arg("switch needs at least one condition"));
    }
    let d = synthetic_per_condition[0].dimension();
    let mut entries = Vec::with_capacity(synthetic_per_condition.len());
    for (n, set) in synthetic_per_condition.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::arg(format!("condition {} has no samples", n + 1)));
        }
        Error::check_dim(d, set.dimension())?;
        for s in set {
            Error::check_dim(d, s.features.dim())?;
        }
        entries.push(((n + 1) as u16, centroid_of(set.iter().map(|s| &s.features), d)));
    }
    CentroidClassifier::new(entries)
}

/// Splits `target` by the switch's prediction; output `i` holds condition `labels()[i]`.
pub fn partition_target<C: Classifier + ?Sized>(switch: &C, target: &SampleSet) -> Result<Vec<SampleSet>> {
    let predicted = switch.classify_set(target)?;
    let labels = switch.labels();
    let mut parts = vec![SampleSet::empty(target.dimension()); labels.len()];
    for (s, l) in target.iter().zip(predicted) {
        let slot = labels.iter().position(|&x| x == l).expect("classifier returned a foreign label");
        parts[slot].push(s.clone());
    }
    Ok(parts)
}
