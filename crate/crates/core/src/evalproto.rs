//! Benchmark query/gallery split protocols, valid-query filtering and CMC scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::Encoder;
use crate::error::{Error, Result};
use crate::metric::{self, MahalanobisMatrix};
use crate::rng;
use crate::smb::rank_row;
use crate::types::{DistanceMatrix, Sample, SampleSet};

/// Membership in a dataset's published split, for datasets that ship one.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PublishedRole {
    Train,
    Query,
    Gallery,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub identity: u32,
    pub camera: u32,
    /// Position among this identity's images from this camera.
    pub sequence: Option<u32>,
    pub role: Option<PublishedRole>,
}

impl MetaRecord {
    pub fn new(identity: u32, camera: u32) -> Self {
        Self {
            identity,
            camera,
            sequence: None,
            role: None,
        }
    }

    pub fn with_sequence(mut self, sequence: u32) -> Self {
        self.sequence = Some(sequence);
        self
    }

    pub fn with_role(mut self, role: PublishedRole) -> Self {
        self.role = Some(role);
        self
    }
}

impl From<&Sample> for MetaRecord {
    fn from(s: &Sample) -> Self {
        MetaRecord::new(s.identity, s.camera)
    }
}

/// Metadata for `set`, numbering each identity's images per camera in order of appearance.
pub fn meta_from_set(set: &SampleSet) -> Vec<MetaRecord> {
    let mut next: BTreeMap<(u32, u32), u32> = BTreeMap::new();
    set.iter()
        .map(|s| {
            let seq = next.entry((s.identity, s.camera)).or_insert(0);
            let rec = MetaRecord::from(s).with_sequence(*seq);
            *seq += 1;
            rec
        })
        .collect()
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Prid,
    Viper,
    Cuhk01,
    Ilids,
    Market,
    /// Single-shot two-camera split over a random fraction of the identities
    /// seen by both cameras: lowest-sequence image from the first camera as
    /// query, from the second camera as gallery.
    Generic { identity_fraction: f64 },
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Prid => "prid",
            Protocol::Viper => "viper",
            Protocol::Cuhk01 => "cuhk01",
            Protocol::Ilids => "ilids",
            Protocol::Market => "market",
            Protocol::Generic { .. } => "generic",
        }
    }

    fn error(&self, detail: impl Into<String>) -> Error {
        Error::Protocol {
            protocol: self.name().to_string(),
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Generic { identity_fraction } => write!(f, "generic:{identity_fraction}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    /// Accepts `prid`, `viper`, `cuhk01`, `ilids`, `market`, `generic` and `generic:<fraction>`.
    fn from_str(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let p = match head {
            "prid" => Protocol::Prid,
            "viper" => Protocol::Viper,
            "cuhk01" => Protocol::Cuhk01,
            "ilids" => Protocol::Ilids,
            "market" => Protocol::Market,
            "generic" => {
                let identity_fraction = match arg {
                    None => 1.0,
                    Some(a) => a
                        .parse::<f64>()
                        .map_err(|_| Error::arg(format!("bad generic fraction `{a}`")))?,
                };
                return Ok(Protocol::Generic { identity_fraction });
            }
            other => return Err(Error::arg(format!("unknown protocol `{other}`"))),
        };
        if arg.is_some() {
            return Err(Error::arg(format!("protocol `{head}` takes no argument")));
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub query: Vec<usize>,
    pub gallery: Vec<usize>,
    pub seed: u64,
    pub protocol: Protocol,
}

/// Images per `(identity, camera)`, ordered by sequence index then record index.
struct CameraView {
    cameras: Vec<u32>,
    images: BTreeMap<(u32, u32), Vec<usize>>,
}

impl CameraView {
    fn new(meta: &[MetaRecord]) -> Self {
        let mut images: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        let mut cameras = BTreeSet::new();
        for (i, m) in meta.iter().enumerate() {
            images.entry((m.identity, m.camera)).or_default().push(i);
            cameras.insert(m.camera);
        }
        for list in images.values_mut() {
            list.sort_by_key(|&i| (meta[i].sequence.unwrap_or(u32::MAX), i));
        }
        Self {
            cameras: cameras.into_iter().collect(),
            images,
        }
    }

    fn identities_on(&self, camera: u32) -> BTreeSet<u32> {
        self.images.keys().filter(|(_, c)| *c == camera).map(|(id, _)| *id).collect()
    }

    fn first(&self, identity: u32, camera: u32) -> usize {
        self.images[&(identity, camera)][0]
    }

    fn random(&self, identity: u32, camera: u32, rng: &mut rng::StageRng) -> usize {
        let list = &self.images[&(identity, camera)];
        list[rng.random_range(0..list.len())]
    }

    fn two_cameras(&self, p: &Protocol) -> Result<(u32, u32)> {
        match self.cameras.as_slice() {
            [a, b] => Ok((*a, *b)),
            other => Err(p.error(format!("expected exactly 2 cameras, found {}", other.len()))),
        }
    }
}

fn pick(ids: &BTreeSet<u32>, k: usize, rng: &mut rng::StageRng) -> BTreeSet<u32> {
    let pool: Vec<u32> = ids.iter().copied().collect();
    index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
}

/// Identities seen by both cameras, required to number exactly `expected`.
fn shared(view: &CameraView, p: &Protocol, a: u32, b: u32, expected: usize) -> Result<BTreeSet<u32>> {
    let both: BTreeSet<u32> = view.identities_on(a).intersection(&view.identities_on(b)).copied().collect();
    if both.len() != expected {
        return Err(p.error(format!(
            "expected {expected} identities on both cameras, found {}",
            both.len()
        )));
    }
    Ok(both)
}

/// Builds the query/gallery split for `protocol`; deterministic given `seed`.
pub fn make_split(meta: &[MetaRecord], protocol: Protocol, seed: u64) -> Result<SplitSpec> {
    let view = CameraView::new(meta);
    let mut r = rng::stream(seed, &format!("split/{}", protocol.name()));
    let (query, gallery) = match protocol {
        Protocol::Prid => {
            let (a, b) = view.two_cameras(&protocol)?;
            let both = shared(&view, &protocol, a, b, 200)?;
            let chosen = pick(&both, 100, &mut r);
            let b_only: BTreeSet<u32> = view.identities_on(b).difference(&both).copied().collect();
            let query = chosen.iter().map(|&id| view.first(id, a)).collect();
            let gallery_ids: BTreeSet<u32> = chosen.union(&b_only).copied().collect();
            let gallery = gallery_ids.iter().map(|&id| view.first(id, b)).collect();
            (query, gallery)
        }
        Protocol::Viper | Protocol::Ilids => {
            let (total, k) = if protocol == Protocol::Viper { (632, 316) } else { (300, 150) };
            let (a, b) = view.two_cameras(&protocol)?;
            let chosen = pick(&shared(&view, &protocol, a, b, total)?, k, &mut r);
            (
                chosen.iter().map(|&id| view.first(id, a)).collect(),
                chosen.iter().map(|&id| view.first(id, b)).collect(),
            )
        }
        Protocol::Cuhk01 => {
            let (a, b) = view.two_cameras(&protocol)?;
            let chosen = pick(&shared(&view, &protocol, a, b, 971)?, 486, &mut r);
            let mut query = Vec::with_capacity(chosen.len());
            let mut gallery = Vec::with_capacity(chosen.len());
            for &id in &chosen {
                query.push(view.random(id, a, &mut r));
                gallery.push(view.random(id, b, &mut r));
            }
            (query, gallery)
        }
        Protocol::Market => {
            let mut query = Vec::new();
            let mut gallery = Vec::new();
            for (i, m) in meta.iter().enumerate() {
                match m.role {
                    Some(PublishedRole::Query) => query.push(i),
                    Some(PublishedRole::Gallery) => gallery.push(i),
                    Some(PublishedRole::Train) => {}
                    None => return Err(protocol.error(format!("record {i} carries no published role"))),
                }
            }
            if query.is_empty() || gallery.is_empty() {
                return Err(protocol.error("published split has an empty query or gallery list"));
            }
            (query, gallery)
        }
        Protocol::Generic { identity_fraction } => {
            if !(identity_fraction > 0.0 && identity_fraction <= 1.0) {
                return Err(protocol.error("identity fraction must lie in (0, 1]"));
            }
            let (a, b) = match view.cameras.as_slice() {
                [a, b, ..] => (*a, *b),
                _ => return Err(protocol.error("at least two cameras are required")),
            };
            let both: BTreeSet<u32> = view.identities_on(a).intersection(&view.identities_on(b)).copied().collect();
            let k = ((both.len() as f64) * identity_fraction).round() as usize;
            if k == 0 {
                return Err(protocol.error("no identity is seen by both cameras"));
            }
            let chosen = pick(&both, k, &mut r);
            (
                chosen.iter().map(|&id| view.first(id, a)).collect(),
                chosen.iter().map(|&id| view.first(id, b)).collect(),
            )
        }
    };
    Ok(SplitSpec {
        query,
        gallery,
        seed: if protocol == Protocol::Market { 0 } else { seed },
        protocol,
    })
}

/// Drops queries whose identity never appears in the gallery.
pub fn filter_valid_queries(split: &SplitSpec, meta: &[MetaRecord]) -> SplitSpec {
    let gallery_ids: BTreeSet<u32> = split.gallery.iter().map(|&g| meta[g].identity).collect();
    SplitSpec {
        query: split
            .query
            .iter()
            .copied()
            .filter(|&q| gallery_ids.contains(&meta[q].identity))
            .collect(),
        ..split.clone()
    }
}

/// Which gallery entries a query may not be matched against.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exclusion {
    #[default]
    None,
    /// Drop gallery images with the query's identity taken by the query's camera.
    SameCameraSameIdentity,
}

impl fmt::Display for Exclusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Exclusion::None => "none",
            Exclusion::SameCameraSameIdentity => "same-camera-same-identity",
        })
    }
}

impl FromStr for Exclusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Exclusion::None),
            "same-camera-same-identity" => Ok(Exclusion::SameCameraSameIdentity),
            other => Err(Error::arg(format!("unknown exclusion policy `{other}`"))),
        }
    }
}

/// `hits` out of `total` queries.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub hits: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.hits as f64 / self.total as f64
        }
    }

    /// Percentage rounded to one decimal.
    pub fn percent(&self) -> f64 {
        (self.fraction() * 1000.0).round() / 10.0
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} ({:.1}%)", self.hits, self.total, self.percent())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    pub points: BTreeMap<usize, Accuracy>,
}

impl CmcCurve {
    pub fn at(&self, k: usize) -> Option<Accuracy> {
        self.points.get(&k).copied()
    }

    pub fn rank1(&self) -> f64 {
        self.at(1).map_or(0.0, |a| a.fraction())
    }
}

/// 1-based rank of each query's first true match after exclusion.
pub fn first_match_ranks(
    dist: &DistanceMatrix,
    query_meta: &[MetaRecord],
    gallery_meta: &[MetaRecord],
    exclusion: Exclusion,
) -> Result<Vec<usize>> {
    Error::check_dim(dist.rows(), query_meta.len())?;
    Error::check_dim(dist.cols(), gallery_meta.len())?;
    (0..dist.rows())
        .into_par_iter()
        .map(|q| {
            let qm = &query_meta[q];
            let mut rank = 0;
            for g in rank_row(dist.row(q)) {
                let gm = &gallery_meta[g];
                let same_id = gm.identity == qm.identity;
                if exclusion == Exclusion::SameCameraSameIdentity && same_id && gm.camera == qm.camera {
                    continue;
                }
                rank += 1;
                if same_id {
                    return Ok(rank);
                }
            }
            Err(Error::Evaluation { query: q })
        })
        .collect()
}

/// CMC-k for every `k` in `ks`.
pub fn cmc(
    dist: &DistanceMatrix,
    query_meta: &[MetaRecord],
    gallery_meta: &[MetaRecord],
    ks: &[usize],
    exclusion: Exclusion,
) -> Result<CmcCurve> {
    if ks.contains(&0) {
        return Err(Error::arg("CMC ranks must be positive"));
    }
    let ranks = first_match_ranks(dist, query_meta, gallery_meta, exclusion)?;
    let points = ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|&&r| r <= k).count();
            (k, Accuracy { hits, total: ranks.len() })
        })
        .collect();
    Ok(CmcCurve { points })
}

/// Distances from one encoder and one matrix applied to every sample, with no switch.
pub fn single_model_distances(
    encoder: &Encoder,
    matrix: &MahalanobisMatrix,
    queries: &SampleSet,
    gallery: &SampleSet,
) -> Result<DistanceMatrix> {
    Error::check_dim(matrix.dim(), encoder.output_dim())?;
    let eq = encoder.encode_set(queries)?;
    let eg = encoder.encode_set(gallery)?;
    let entries: Vec<f64> = eq
        .samples()
        .par_iter()
        .flat_map_iter(|q| {
            eg.iter().map(move |g| {
                metric::quadratic_form(matrix.entries(), q.features.as_slice(), g.features.as_slice())
            })
        })
        .collect();
    DistanceMatrix::new(eq.len(), eg.len(), entries)
}

/// Squared Euclidean distances on raw features.
pub fn euclidean_distances(queries: &SampleSet, gallery: &SampleSet) -> Result<DistanceMatrix> {
    Error::check_dim(queries.dimension(), gallery.dimension())?;
    let id = DMatrix::<f64>::identity(queries.dimension(), queries.dimension());
    let entries: Vec<f64> = queries
        .samples()
        .par_iter()
        .flat_map_iter(|q| {
            let id = &id;
            gallery
                .iter()
                .map(move |g| metric::quadratic_form(id, q.features.as_slice(), g.features.as_slice()))
        })
        .collect();
    DistanceMatrix::new(queries.len(), gallery.len(), entries)
}

/// CMC of a single encoder and matrix, bypassing the switch.
pub fn single_illumination_eval(
    encoder: &Encoder,
    matrix: &MahalanobisMatrix,
    queries: &SampleSet,
    gallery: &SampleSet,
    ks: &[usize],
    exclusion: Exclusion,
) -> Result<CmcCurve> {
    let dist = single_model_distances(encoder, matrix, queries, gallery)?;
    let qm: Vec<MetaRecord> = queries.iter().map(MetaRecord::from).collect();
    let gm: Vec<MetaRecord> = gallery.iter().map(MetaRecord::from).collect();
    cmc(&dist, &qm, &gm, ks, exclusion)
}
