//! KISSME Mahalanobis metric learning and the condition-pair metric bank.
//!
//! A matrix `M` scores a pair by `(x - y)^T M (x - y)`. KISSME estimates `M`
//! as the difference of the inverse second-moment matrices of similar-pair
//! and dissimilar-pair differences, then clips it onto the PSD cone. The bank
//! holds one matrix per unordered pair of illumination conditions.

use std::collections::{BTreeMap, HashSet};

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, SYMMETRY_TOL};
use crate::rng;
use crate::types::SampleSet;

/// Lowest eigenvalue tolerated in a stored matrix.
pub const PSD_TOL: f64 = 1e-9;

/// Unordered pair of 1-based condition indices, stored with `a <= b`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConditionPair {
    a: u16,
    b: u16,
}

impl ConditionPair {
    pub fn new(a: u16, b: u16) -> Self {
        Self {
            a: a.min(b),
            b: a.max(b),
        }
    }

    pub fn a(&self) -> u16 {
        self.a
    }

    pub fn b(&self) -> u16 {
        self.b
    }

    pub fn is_diagonal(&self) -> bool {
        self.a == self.b
    }
}

/// A symmetric positive semidefinite matrix tagged with its condition pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MahalanobisMatrix {
    pair: ConditionPair,
    entries: DMatrix<f64>,
}

impl MahalanobisMatrix {
    /// Wraps `entries` after checking symmetry and positive semidefiniteness.
    pub fn new(pair: ConditionPair, entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::arg("Mahalanobis matrix must be square and non-empty"));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("Mahalanobis matrix has non-finite entries"));
        }
        if !linalg::is_symmetric(&entries, SYMMETRY_TOL) {
            return Err(Error::arg(format!(
                "Mahalanobis matrix is not symmetric (max asymmetry {:e})",
                linalg::asymmetry(&entries)
            )));
        }
        let lo = linalg::min_eigenvalue(&entries);
        if lo < -PSD_TOL * linalg::max_abs(&entries).max(1.0) {
            return Err(Error::arg(format!(
                "Mahalanobis matrix is not PSD (smallest eigenvalue {lo:e})"
            )));
        }
        Ok(Self { pair, entries })
    }

    pub fn identity(pair: ConditionPair, dim: usize) -> Self {
        Self {
            pair,
            entries: DMatrix::identity(dim, dim),
        }
    }

    pub fn with_pair(mut self, pair: ConditionPair) -> Self {
        self.pair = pair;
        self
    }

    /// `c * M` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::arg("scale factor must be positive"));
        }
        Ok(Self {
            pair: self.pair,
            entries: &self.entries * c,
        })
    }

    pub fn pair(&self) -> ConditionPair {
        self.pair
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

/// Projects a symmetric matrix onto the PSD cone by clipping negative eigenvalues.
pub fn psd_project(sym: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sym.is_square() {
        return Err(Error::arg("PSD projection needs a square matrix"));
    }
    if !linalg::is_symmetric(sym, SYMMETRY_TOL) {
        return Err(Error::arg(format!(
            "PSD projection needs a symmetric matrix (max asymmetry {:e})",
            linalg::asymmetry(sym)
        )));
    }
    let eig = linalg::eigen(&linalg::symmetrize(sym));
    Ok(linalg::rebuild(&eig, |l| l.max(0.0)))
}

/// `(x - y)^T M (x - y)` without dimension checks; symmetric in `x` and `y` bit for bit.
pub(crate) fn quadratic_form(m: &DMatrix<f64>, x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    for i in 0..n {
        let di = x[i] - y[i];
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * (x[j] - y[j]);
        }
        total += di * row;
    }
    total.max(0.0)
}

/// Squared Mahalanobis distance under `m`.
pub fn mahalanobis_sq(m: &MahalanobisMatrix, x: &[f64], y: &[f64]) -> Result<f64> {
    Error::check_dim(m.dim(), x.len())?;
    Error::check_dim(m.dim(), y.len())?;
    Ok(quadratic_form(&m.entries, x, y))
}

/// Similar (same identity) and dissimilar (different identity) vector pairs.
#[derive(Clone, Debug, Default)]
pub struct PairSet<'a> {
    pub similar: Vec<(&'a [f64], &'a [f64])>,
    pub dissimilar: Vec<(&'a [f64], &'a [f64])>,
}

/// Ridge term added to both pair covariances before inversion.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum Regularization {
    Fixed(f64),
    /// `factor * (tr(S) + tr(D)) / (2d)` where `S`, `D` are the pair covariances.
    TraceScaled(f64),
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::TraceScaled(1e-3)
    }
}

impl Regularization {
    fn lambda(&self, similar: &DMatrix<f64>, dissimilar: &DMatrix<f64>) -> Result<f64> {
        let l = match *self {
            Regularization::Fixed(l) => l,
            Regularization::TraceScaled(f) => {
                f * (similar.trace() + dissimilar.trace()) / (2 * similar.nrows()) as f64
            }
        };
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::arg("regularization must be finite and non-negative"));
        }
        Ok(l)
    }
}

/// Learns a KISSME matrix from `pairs`.
pub fn kissme_learn(pairs: &PairSet<'_>, reg: Regularization) -> Result<MahalanobisMatrix> {
    if pairs.similar.is_empty() || pairs.dissimilar.is_empty() {
        return Err(Error::arg("KISSME needs non-empty similar and dissimilar pair lists"));
    }
    let d = pairs.similar[0].0.len();
    if d == 0 {
        return Err(Error::arg("pair vectors must be non-empty"));
    }
    for (x, y) in pairs.similar.iter().chain(&pairs.dissimilar) {
        Error::check_dim(d, x.len())?;
        Error::check_dim(d, y.len())?;
    }
    let cov_s = linalg::difference_scatter(pairs.similar.iter().copied(), d);
    let cov_d = linalg::difference_scatter(pairs.dissimilar.iter().copied(), d);
    let lambda = reg.lambda(&cov_s, &cov_d)?;
    let ridge = DMatrix::<f64>::identity(d, d) * lambda;
    let inv_s = linalg::spd_inverse(&(cov_s + &ridge), "similar-pair covariance")?;
    let inv_d = linalg::spd_inverse(&(cov_d + &ridge), "dissimilar-pair covariance")?;
    let raw = linalg::symmetrize(&(inv_s - inv_d));
    let entries = psd_project(&raw)?;
    Ok(MahalanobisMatrix {
        pair: ConditionPair::new(1, 1),
        entries,
    })
}

/// How pairs are drawn for each bank matrix.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct PairingPolicy {
    /// Cap on similar pairs; beyond it they are sampled uniformly without replacement.
    pub max_similar: usize,
    pub seed: u64,
}

impl Default for PairingPolicy {
    fn default() -> Self {
        Self {
            max_similar: 50_000,
            seed: 0,
        }
    }
}

fn identity_groups(set: &SampleSet) -> BTreeMap<u32, Vec<usize>> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, s) in set.iter().enumerate() {
        groups.entry(s.identity).or_default().push(i);
    }
    groups
}

// Chooses which of `total` enumerable pairs to keep, ascending.
fn choose(total: usize, cap: usize, rng: &mut rng::StageRng) -> Vec<usize> {
    if total <= cap {
        (0..total).collect()
    } else {
        let mut picked = index::sample(rng, total, cap).into_vec();
        picked.sort_unstable();
        picked
    }
}

// Decodes `k` into the k-th unordered pair (i, j), i < j, enumerated as
// (0,1), (0,2), (1,2), (0,3), ...
fn unordered_pair(k: usize) -> (usize, usize) {
    let mut j = ((1.0 + (1.0 + 8.0 * k as f64).sqrt()) / 2.0) as usize;
    while j * (j - 1) / 2 > k {
        j -= 1;
    }
    while (j + 1) * j / 2 <= k {
        j += 1;
    }
    (k - j * (j - 1) / 2, j)
}

/// Sampled index pairs `(i in a, j in b)`; for within-set pairs `a` and `b` are the same set.
struct IndexPairs {
    similar: Vec<(usize, usize)>,
    dissimilar: Vec<(usize, usize)>,
}

fn sample_pairs(a: &SampleSet, b: Option<&SampleSet>, policy: &PairingPolicy, rng: &mut rng::StageRng) -> Result<IndexPairs> {
    let ga = identity_groups(a);
    let mut blocks: Vec<(Vec<usize>, Option<Vec<usize>>, usize)> = Vec::new();
    match b {
        None => {
            for members in ga.values() {
                let n = members.len();
                if n >= 2 {
                    blocks.push((members.clone(), None, n * (n - 1) / 2));
                }
            }
        }
        Some(b) => {
            let gb = identity_groups(b);
            for (id, members) in &ga {
                if let Some(other) = gb.get(id) {
                    blocks.push((members.clone(), Some(other.clone()), members.len() * other.len()));
                }
            }
        }
    }
    let total: usize = blocks.iter().map(|b| b.2).sum();
    if total == 0 {
        return Err(Error::arg(match b {
            None => "no identity has two samples, so no similar pairs exist",
            Some(_) => "the two condition sets share no identity",
        }));
    }
    let mut starts = Vec::with_capacity(blocks.len());
    let mut acc = 0;
    for blk in &blocks {
        starts.push(acc);
        acc += blk.2;
    }
    let similar: Vec<(usize, usize)> = choose(total, policy.max_similar, rng)
        .into_iter()
        .map(|k| {
            let bi = starts.partition_point(|&s| s <= k) - 1;
            let (left, right, _) = &blocks[bi];
            let local = k - starts[bi];
            match right {
                None => {
                    let (i, j) = unordered_pair(local);
                    (left[i], left[j])
                }
                Some(right) => (left[local / right.len()], right[local % right.len()]),
            }
        })
        .collect();

    let other = b.unwrap_or(a);
    let ids: HashSet<u32> = a.iter().chain(other.iter()).map(|s| s.identity).collect();
    if ids.len() < 2 {
        return Err(Error::arg("dissimilar pairs need at least two identities"));
    }
    let mut dissimilar = Vec::with_capacity(similar.len());
    while dissimilar.len() < similar.len() {
        let i = rng.random_range(0..a.len());
        let j = rng.random_range(0..other.len());
        if a.samples()[i].identity != other.samples()[j].identity {
            dissimilar.push((i, j));
        }
    }
    Ok(IndexPairs { similar, dissimilar })
}

/// Pairs drawn from within one labelled set.
pub fn within_pairs<'a>(set: &'a SampleSet, policy: &PairingPolicy, stream: &str) -> Result<PairSet<'a>> {
    let mut r = rng::stream(policy.seed, stream);
    let idx = sample_pairs(set, None, policy, &mut r)?;
    let v = |i: usize| set.samples()[i].features.as_slice();
    Ok(PairSet {
        similar: idx.similar.iter().map(|&(i, j)| (v(i), v(j))).collect(),
        dissimilar: idx.dissimilar.iter().map(|&(i, j)| (v(i), v(j))).collect(),
    })
}

/// Pairs with one vector from `a` and one from `b`.
pub fn cross_pairs<'a>(a: &'a SampleSet, b: &'a SampleSet, policy: &PairingPolicy, stream: &str) -> Result<PairSet<'a>> {
    let mut r = rng::stream(policy.seed, stream);
    let idx = sample_pairs(a, Some(b), policy, &mut r)?;
    let va = |i: usize| a.samples()[i].features.as_slice();
    let vb = |i: usize| b.samples()[i].features.as_slice();
    Ok(PairSet {
        similar: idx.similar.iter().map(|&(i, j)| (va(i), vb(j))).collect(),
        dissimilar: idx.dissimilar.iter().map(|&(i, j)| (va(i), vb(j))).collect(),
    })
}

/// Number of matrices a bank over `n` conditions holds: `n(n-1)/2 + n`.
pub fn bank_size(n: usize) -> usize {
    n * (n - 1) / 2 + n
}

/// One Mahalanobis matrix per unordered condition pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricBank {
    conditions: usize,
    matrices: BTreeMap<ConditionPair, MahalanobisMatrix>,
}

impl MetricBank {
    /// Checks that every pair `1 <= a <= b <= conditions` is present exactly once.
    pub fn new(conditions: usize, matrices: Vec<MahalanobisMatrix>) -> Result<Self> {
        if conditions == 0 {
            return Err(Error::arg("a bank needs at least one condition"));
        }
        if matrices.len() != bank_size(conditions) {
            return Err(Error::arg(format!(
                "{} matrices given, a bank over {conditions} conditions needs {}",
                matrices.len(),
                bank_size(conditions)
            )));
        }
        let d = matrices[0].dim();
        let mut map = BTreeMap::new();
        for m in matrices {
            Error::check_dim(d, m.dim())?;
            let p = m.pair();
            if p.a() == 0 || p.b() as usize > conditions {
                return Err(Error::arg(format!("pair ({}, {}) outside 1..={conditions}", p.a(), p.b())));
            }
            if map.insert(p, m).is_some() {
                return Err(Error::arg(format!("pair ({}, {}) given twice", p.a(), p.b())));
            }
        }
        Ok(Self {
            conditions,
            matrices: map,
        })
    }

    pub fn conditions(&self) -> usize {
        self.conditions
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrices.values().next().map_or(0, |m| m.dim())
    }

    /// Matrix for conditions `a` and `b` in either order.
    pub fn get(&self, a: u16, b: u16) -> Option<&MahalanobisMatrix> {
        self.matrices.get(&ConditionPair::new(a, b))
    }

    pub fn matrices(&self) -> impl Iterator<Item = &MahalanobisMatrix> {
        self.matrices.values()
    }

    /// Every matrix multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Ok(Self {
            conditions: self.conditions,
            matrices: self
                .matrices
                .iter()
                .map(|(p, m)| Ok((*p, m.scaled(c)?)))
                .collect::<Result<_>>()?,
        })
    }
}

/// Learns the full bank from per-condition encoded sets (`encoded[n]` is condition `n + 1`).
pub fn build_metric_bank(encoded: &[SampleSet], policy: &PairingPolicy, reg: Regularization) -> Result<MetricBank> {
    let n = encoded.len();
    if n == 0 {
        return Err(Error::arg("a bank needs at least one condition set"));
    }
    let mut jobs = Vec::with_capacity(bank_size(n));
    for a in 1..=n {
        for b in a..=n {
            jobs.push(ConditionPair::new(a as u16, b as u16));
        }
    }
    let matrices = jobs
        .par_iter()
        .map(|&p| {
            let sa = &encoded[p.a() as usize - 1];
            let sb = &encoded[p.b() as usize - 1];
            let stream = format!("pairs/{}-{}", p.a(), p.b());
            let pairs = if p.is_diagonal() {
                within_pairs(sa, policy, &stream)
            } else {
                cross_pairs(sa, sb, policy, &stream)
            }
            .map_err(|e| Error::arg(format!("pair ({}, {}): {e}", p.a(), p.b())))?;
            Ok(kissme_learn(&pairs, reg)?.with_pair(p))
        })
        .collect::<Result<Vec<_>>>()?;
    MetricBank::new(n, matrices)
}
