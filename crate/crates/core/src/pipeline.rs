//! End-to-end experiments: the model-bank pipeline on a simulated target, and
//! the CycleDiffusion demo on Gaussian domains.
//!
//! Stage functions are public so the command-line tool can run them one at a
//! time. All randomness comes from the experiment seed through named streams.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cyclediff::{self, GaussianDdim, NoiseSchedule};
use crate::encoders::{self, Encoder, EncoderKind};
use crate::error::{Error, Result};
use crate::evalproto::{self, CmcCurve, Exclusion, MetaRecord, Protocol, SplitSpec};
use crate::illum::{self, CentroidClassifier, Classifier};
use crate::metric::{self, PairingPolicy, Regularization};
use crate::rng;
use crate::smb::SynthesisModelBank;
use crate::types::SampleSet;
use crate::ulisynth::{self, GeneratorConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Source generator; its own `seed` is replaced by [`Self::seed`].
    pub source: GeneratorConfig,
    /// Target generator; `illuminations` lists the labels the target is drawn from.
    pub target: GeneratorConfig,
    /// Weights aligned with `target.illuminations`.
    pub target_weights: Vec<f64>,
    pub conditions: usize,
    pub encoder: EncoderKind,
    /// Trace-scaled ridge factor for KISSME.
    pub ridge: f64,
    pub max_similar_pairs: usize,
    pub protocol: Protocol,
    pub ranks: Vec<usize>,
    pub exclusion: Exclusion,
}

impl Default for PipelineConfig {
    /// Two-condition desk-scale setup: 32-dimensional features, 100 target identities.
    fn default() -> Self {
        let base = GeneratorConfig {
            dimension: 32,
            illum_gain_dims: 8,
            nuisance_dims: 8,
            noise_scale: 2.5,
            background_scale: 8.0,
            zrotation_scale: 4.0,
            ..GeneratorConfig::default()
        };
        Self {
            seed: 0,
            source: GeneratorConfig {
                identities: 40,
                backgrounds: 8,
                zrotations: 8,
                ..base.clone()
            },
            target: GeneratorConfig {
                identities: 100,
                backgrounds: 2,
                zrotations: 2,
                illuminations: vec![2, 5],
                ..base
            },
            target_weights: vec![0.6, 0.4],
            conditions: illum::DEFAULT_CONDITIONS,
            encoder: EncoderKind::Whitening,
            ridge: 1e-3,
            max_similar_pairs: 50_000,
            protocol: Protocol::Generic { identity_fraction: 1.0 },
            ranks: vec![1, 5, 10, 20],
            exclusion: Exclusion::None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.target.validate()?;
        if self.source.dimension != self.target.dimension {
            return Err(Error::arg("source and target dimensions differ"));
        }
        if self.target_weights.len() != self.target.illuminations.len() {
            return Err(Error::arg("target weights must align with target illuminations"));
        }
        if self.conditions == 0 || self.conditions > self.source.illuminations.len() {
            return Err(Error::arg(format!(
                "condition count must be in 1..={}",
                self.source.illuminations.len()
            )));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::arg("ridge must be finite and non-negative"));
        }
        if self.max_similar_pairs == 0 {
            return Err(Error::arg("max_similar_pairs must be positive"));
        }
        if self.ranks.is_empty() || self.ranks.contains(&0) {
            return Err(Error::arg("ranks must be a non-empty list of positive integers"));
        }
        Ok(())
    }

    fn seeded_source(&self) -> GeneratorConfig {
        GeneratorConfig {
            seed: self.seed,
            ..self.source.clone()
        }
    }
}

/// Output of the label-selection stage.
#[derive(Clone, Debug)]
pub struct ConditionChoice {
    pub estimator: CentroidClassifier,
    pub counts: BTreeMap<u16, usize>,
    pub labels: Vec<u16>,
    pub coverage: f64,
}

/// Trains the estimator on `source` and picks the `n` most common target labels.
pub fn choose_conditions(source: &SampleSet, target: &SampleSet, n: usize) -> Result<ConditionChoice> {
    let estimator = illum::train_illumination_estimator(source)?;
    let counts = illum::prediction_counts(&estimator, target)?;
    let labels = illum::top_labels(&counts, n)?;
    let coverage = illum::coverage_fraction(&estimator, target, &labels)?;
    Ok(ConditionChoice {
        estimator,
        counts,
        labels,
        coverage,
    })
}

/// Source subsets for the chosen labels, condition `n + 1` at index `n`.
pub fn condition_subsets(source: &SampleSet, labels: &[u16]) -> Result<Vec<SampleSet>> {
    labels
        .iter()
        .map(|&l| {
            let label = u8::try_from(l).map_err(|_| Error::Range {
                what: "illumination label",
                value: l as i64,
            })?;
            let subset = ulisynth::select_subset_by_illumination(source, label);
            if subset.is_empty() {
                return Err(Error::arg(format!("source holds no samples with label {l}")));
            }
            Ok(subset)
        })
        .collect()
}

/// Trains switch, encoders and metric bank on the per-condition synthetic sets.
pub fn train_model_bank(
    subsets: &[SampleSet],
    kind: EncoderKind,
    policy: &PairingPolicy,
    reg: Regularization,
) -> Result<SynthesisModelBank> {
    let switch = illum::train_switch(subsets).map_err(|e| e.in_stage("switch"))?;
    let encoders: Vec<Encoder> = subsets
        .iter()
        .enumerate()
        .map(|(n, s)| encoders::train_condition_encoder(s, kind, (n + 1) as u16))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("encoders"))?;
    let encoded = subsets
        .iter()
        .zip(&encoders)
        .map(|(s, e)| e.encode_set(s))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("encoders"))?;
    let bank = metric::build_metric_bank(&encoded, policy, reg).map_err(|e| e.in_stage("metrics"))?;
    SynthesisModelBank::assemble(switch, encoders, bank).map_err(|e| e.in_stage("assembly"))
}

/// Query and gallery sets of a split, with their metadata.
pub struct SplitSets {
    pub queries: SampleSet,
    pub gallery: SampleSet,
    pub query_meta: Vec<MetaRecord>,
    pub gallery_meta: Vec<MetaRecord>,
}

pub fn split_sets(target: &SampleSet, meta: &[MetaRecord], split: &SplitSpec) -> Result<SplitSets> {
    let pick = |idx: &[usize]| -> Result<Vec<MetaRecord>> {
        idx.iter()
            .map(|&i| meta.get(i).cloned().ok_or(Error::Range { what: "split index", value: i as i64 }))
            .collect()
    };
    Ok(SplitSets {
        queries: target.select(&split.query)?,
        gallery: target.select(&split.gallery)?,
        query_meta: pick(&split.query)?,
        gallery_meta: pick(&split.gallery)?,
    })
}

/// CMC of the full bank on a split.
pub fn evaluate_bank(smb: &SynthesisModelBank, sets: &SplitSets, ranks: &[usize], exclusion: Exclusion) -> Result<CmcCurve> {
    let dist = smb.distance_matrix(&sets.queries, &sets.gallery)?;
    evalproto::cmc(&dist, &sets.query_meta, &sets.gallery_meta, ranks, exclusion)
}

/// CMC of condition `n`'s encoder and diagonal matrix applied to everything.
pub fn evaluate_single(
    smb: &SynthesisModelBank,
    n: u16,
    sets: &SplitSets,
    ranks: &[usize],
    exclusion: Exclusion,
) -> Result<CmcCurve> {
    let encoder = &smb.encoders()[n as usize - 1];
    let matrix = smb.bank().get(n, n).ok_or(Error::Range {
        what: "condition",
        value: n as i64,
    })?;
    let dist = evalproto::single_model_distances(encoder, matrix, &sets.queries, &sets.gallery)?;
    evalproto::cmc(&dist, &sets.query_meta, &sets.gallery_meta, ranks, exclusion)
}

pub fn evaluate_euclidean(sets: &SplitSets, ranks: &[usize], exclusion: Exclusion) -> Result<CmcCurve> {
    let dist = evalproto::euclidean_distances(&sets.queries, &sets.gallery)?;
    evalproto::cmc(&dist, &sets.query_meta, &sets.gallery_meta, ranks, exclusion)
}

/// One condition's share of the test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub condition: u16,
    pub queries: usize,
    pub gallery: usize,
    pub valid_queries: usize,
    /// Condition `n`'s single model on its own subset; absent with no valid query.
    pub subset_cmc: Option<CmcCurve>,
    /// The same model on the full split.
    pub full_cmc: CmcCurve,
}

/// Restricts the split to samples the switch routes to each condition, drops
/// unmatched queries and evaluates that condition's single model there.
pub fn evaluate_subsets(
    smb: &SynthesisModelBank,
    target: &SampleSet,
    meta: &[MetaRecord],
    split: &SplitSpec,
    ranks: &[usize],
    exclusion: Exclusion,
) -> Result<Vec<SubsetReport>> {
    let routed = smb.switch().classify_set(target)?;
    let full = split_sets(target, meta, split)?;
    (1..=smb.conditions() as u16)
        .map(|n| {
            let keep = |idx: &[usize]| idx.iter().copied().filter(|&i| routed[i] == n).collect::<Vec<_>>();
            let sub = SplitSpec {
                query: keep(&split.query),
                gallery: keep(&split.gallery),
                ..split.clone()
            };
            let valid = evalproto::filter_valid_queries(&sub, meta);
            let subset_cmc = if valid.query.is_empty() {
                None
            } else {
                Some(evaluate_single(smb, n, &split_sets(target, meta, &valid)?, ranks, exclusion)?)
            };
            Ok(SubsetReport {
                condition: n,
                queries: sub.query.len(),
                gallery: sub.gallery.len(),
                valid_queries: valid.query.len(),
                subset_cmc,
                full_cmc: evaluate_single(smb, n, &full, ranks, exclusion)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    /// Estimator prediction counts over the target, by source label.
    pub label_counts: BTreeMap<u16, usize>,
    /// Chosen labels; condition `n + 1` is `selected_labels[n]`.
    pub selected_labels: Vec<u16>,
    pub coverage: f64,
    /// Fraction of target samples with a chosen true label that the switch routes to it.
    pub switch_accuracy: f64,
    pub queries: usize,
    pub gallery: usize,
    pub smb: CmcCurve,
    /// `single[n]` uses condition `n + 1`'s encoder and matrix for every sample.
    pub single: Vec<CmcCurve>,
    pub euclidean: CmcCurve,
    pub subsets: Vec<SubsetReport>,
}

/// Generates both domains and runs every stage of the experiment.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    config.validate()?;
    let source = ulisynth::generate_source_domain(&config.seeded_source()).map_err(|e| e.in_stage("generate"))?;
    let target = ulisynth::simulate_target_domain(&config.target, &config.target_weights, config.seed)
        .map_err(|e| e.in_stage("generate"))?;
    run_on(config, &source, &target)
}

/// Runs the experiment on given domains; `target` labels are only used for reporting.
pub fn run_on(config: &PipelineConfig, source: &SampleSet, target: &SampleSet) -> Result<PipelineReport> {
    let choice = choose_conditions(source, target, config.conditions).map_err(|e| e.in_stage("estimate"))?;
    let subsets = condition_subsets(source, &choice.labels).map_err(|e| e.in_stage("select"))?;
    let policy = PairingPolicy {
        max_similar: config.max_similar_pairs,
        seed: config.seed,
    };
    let smb = train_model_bank(&subsets, config.encoder, &policy, Regularization::TraceScaled(config.ridge))?;

    let meta = evalproto::meta_from_set(target);
    let split = evalproto::make_split(&meta, config.protocol, config.seed).map_err(|e| e.in_stage("split"))?;
    let split = evalproto::filter_valid_queries(&split, &meta);
    let sets = split_sets(target, &meta, &split).map_err(|e| e.in_stage("split"))?;

    let eval = |e: Error| e.in_stage("evaluate");
    let smb_cmc = evaluate_bank(&smb, &sets, &config.ranks, config.exclusion).map_err(eval)?;
    let single = (1..=smb.conditions() as u16)
        .map(|n| evaluate_single(&smb, n, &sets, &config.ranks, config.exclusion))
        .collect::<Result<Vec<_>>>()
        .map_err(eval)?;
    let euclidean = evaluate_euclidean(&sets, &config.ranks, config.exclusion).map_err(eval)?;
    let subsets =
        evaluate_subsets(&smb, target, &meta, &split, &config.ranks, config.exclusion).map_err(eval)?;

    let routed = smb.switch().classify_set(target)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for (s, c) in target.iter().zip(&routed) {
        if let Some(l) = s.illumination {
            if choice.labels.contains(&(l as u16)) {
                total += 1;
                hit += usize::from(choice.labels[*c as usize - 1] == l as u16);
            }
        }
    }

    Ok(PipelineReport {
        seed: config.seed,
        label_counts: choice.counts,
        selected_labels: choice.labels,
        coverage: choice.coverage,
        switch_accuracy: if total == 0 { 0.0 } else { hit as f64 / total as f64 },
        queries: sets.queries.len(),
        gallery: sets.gallery.len(),
        smb: smb_cmc,
        single,
        euclidean,
        subsets,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionDemoConfig {
    pub seed: u64,
    pub steps: usize,
    pub dimension: usize,
    pub samples: usize,
    pub source_mean: f64,
    pub target_mean: f64,
    pub data_scale: f64,
    /// PSNR peak value.
    pub peak: f64,
}

impl Default for DiffusionDemoConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 100,
            dimension: 8,
            samples: 200,
            source_mean: 0.0,
            target_mean: 5.0,
            data_scale: 1.0,
            peak: 10.0,
        }
    }
}

impl DiffusionDemoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 5 {
            return Err(Error::arg("the demo needs at least 5 diffusion steps"));
        }
        if self.dimension == 0 || self.samples == 0 {
            return Err(Error::arg("dimension and sample count must be positive"));
        }
        if !(self.peak > 0.0) {
            return Err(Error::arg("peak must be positive"));
        }
        Ok(())
    }

    /// `T_es` values at 40, 60, 80 and 100 percent of `T`.
    pub fn encoding_steps(&self) -> Vec<usize> {
        [4, 6, 8, 10].iter().map(|f| (self.steps * f + 5) / 10).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionRow {
    pub t_es: usize,
    /// Largest coordinate error when source and target models coincide.
    pub reconstruction_error: f64,
    /// Mean PSNR of translations against their inputs.
    pub psnr: f64,
    /// Largest coordinate gap between the translated sample mean and the target mean.
    pub target_mean_error: f64,
    /// Mean absolute coordinate change caused by translation.
    pub mean_abs_change: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionReport {
    pub seed: u64,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub rows: Vec<DiffusionRow>,
    pub psnr_non_increasing: bool,
}

/// Translates Gaussian source samples to a Gaussian target for several `T_es`.
pub fn run_diffusion_demo(config: &DiffusionDemoConfig) -> Result<DiffusionReport> {
    config.validate()?;
    let schedule = NoiseSchedule::linear_rescaled(config.steps)?;
    let d = config.dimension;
    let source = GaussianDdim::new(vec![config.source_mean; d], config.data_scale, schedule.clone())?;
    let target = GaussianDdim::new(vec![config.target_mean; d], config.data_scale, schedule.clone())?;
    let mut draw = rng::stream(config.seed, "diffusion/inputs");
    let inputs: Vec<Vec<f64>> = (0..config.samples)
        .map(|_| {
            (0..d)
                .map(|_| config.source_mean + config.data_scale * draw.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let rows = config
        .encoding_steps()
        .into_iter()
        .map(|t_es| {
            let outcome = inputs
                .par_iter()
                .enumerate()
                .map(|(i, x0)| {
                    let mut r = rng::stream(config.seed, &format!("diffusion/{t_es}/{i}"));
                    let z = cyclediff::encode(&source, x0, t_es, &mut r)?;
                    let back = cyclediff::decode(&source, &z)?;
                    let moved = cyclediff::decode(&target, &z)?;
                    let err = back.iter().zip(x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    Ok((err, cyclediff::psnr(&moved, x0, config.peak)?, moved))
                })
                .collect::<Result<Vec<_>>>()?;
            let n = outcome.len() as f64;
            let mut mean = vec![0.0; d];
            let mut change = 0.0;
            for ((_, _, moved), x0) in outcome.iter().zip(&inputs) {
                mean.iter_mut().zip(moved).for_each(|(m, v)| *m += v / n);
                change += moved.iter().zip(x0).map(|(a, b)| (a - b).abs()).sum::<f64>() / (n * d as f64);
            }
            Ok(DiffusionRow {
                t_es,
                reconstruction_error: outcome.iter().map(|o| o.0).fold(0.0, f64::max),
                psnr: outcome.iter().map(|o| o.1).sum::<f64>() / n,
                target_mean_error: mean.iter().map(|m| (m - config.target_mean).abs()).fold(0.0, f64::max),
                mean_abs_change: change,
            })
        })
        .collect::<Result<Vec<DiffusionRow>>>()?;
    let psnr_non_increasing = rows.windows(2).all(|w| w[1].psnr <= w[0].psnr);
    Ok(DiffusionReport {
        seed: config.seed,
        steps: config.steps,
        beta_start: schedule.beta_start(),
        beta_end: schedule.beta_end(),
        rows,
        psnr_non_increasing,
    })
}
