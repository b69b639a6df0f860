//! The Synthesis Model Bank: switch, per-condition encoders and metric bank.
//!
//! A sample is routed to the condition its switch predicts and encoded by
//! that condition's encoder. Two routed samples are compared under the bank
//! matrix of their (unordered) condition pair. Distances produced by
//! different matrices within one ranking are compared as they are.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::encoders::Encoder;
use crate::error::{Error, Result};
use crate::illum::{CentroidClassifier, Classifier};
use crate::metric::{self, MetricBank};
use crate::types::{DistanceMatrix, FeatureVector, Sample, SampleSet};

#[derive(Clone, Debug)]
pub struct SynthesisModelBank {
    switch: CentroidClassifier,
    encoders: Vec<Encoder>,
    bank: MetricBank,
}

/// A sample after routing: its condition and encoded vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Routed {
    pub condition: u16,
    pub encoded: FeatureVector,
}

impl SynthesisModelBank {
    /// Validates that the switch, encoders and bank describe the same `N` conditions.
    pub fn assemble(switch: CentroidClassifier, encoders: Vec<Encoder>, bank: MetricBank) -> Result<Self> {
        let n = encoders.len();
        if n == 0 {
            return Err(Error::Assembly {
                component: "encoders",
                detail: "no encoders given".into(),
            });
        }
        let expected: Vec<u16> = (1..=n as u16).collect();
        if switch.labels() != expected.as_slice() {
            return Err(Error::Assembly {
                component: "switch",
                detail: format!("switch labels {:?} do not match {n} encoders", switch.labels()),
            });
        }
        if bank.conditions() != n || bank.len() != metric::bank_size(n) {
            return Err(Error::Assembly {
                component: "metric bank",
                detail: format!(
                    "bank holds {} matrices over {} conditions, {n} encoders need {}",
                    bank.len(),
                    bank.conditions(),
                    metric::bank_size(n)
                ),
            });
        }
        let d_in = switch.dimension();
        for (i, e) in encoders.iter().enumerate() {
            if e.condition() as usize != i + 1 {
                return Err(Error::Assembly {
                    component: "encoders",
                    detail: format!("encoder {i} is for condition {}, expected {}", e.condition(), i + 1),
                });
            }
            if e.input_dim() != d_in {
                return Err(Error::Assembly {
                    component: "encoders",
                    detail: format!("encoder {} takes dimension {}, switch uses {d_in}", i + 1, e.input_dim()),
                });
            }
            if e.output_dim() != bank.dim() {
                return Err(Error::Assembly {
                    component: "encoders",
                    detail: format!("encoder {} emits dimension {}, bank uses {}", i + 1, e.output_dim(), bank.dim()),
                });
            }
        }
        Ok(Self { switch, encoders, bank })
    }

    pub fn conditions(&self) -> usize {
        self.encoders.len()
    }

    pub fn switch(&self) -> &CentroidClassifier {
        &self.switch
    }

    pub fn encoders(&self) -> &[Encoder] {
        &self.encoders
    }

    pub fn bank(&self) -> &MetricBank {
        &self.bank
    }

    /// The same bank with every matrix multiplied by `c > 0`.
    pub fn with_scaled_bank(&self, c: f64) -> Result<Self> {
        Ok(Self {
            switch: self.switch.clone(),
            encoders: self.encoders.clone(),
            bank: self.bank.scaled(c)?,
        })
    }

    pub fn route(&self, sample: &Sample) -> Result<Routed> {
        let x = sample.features.as_slice();
        let condition = self.switch.classify(x)?;
        let encoded = self.encoders[condition as usize - 1].encode(x)?;
        Ok(Routed { condition, encoded })
    }

    fn routed_distance(&self, q: &Routed, g: &Routed) -> f64 {
        let m = self
            .bank
            .get(q.condition, g.condition)
            .expect("assembled bank covers every condition pair");
        metric::quadratic_form(m.entries(), q.encoded.as_slice(), g.encoded.as_slice())
    }

    pub fn distance(&self, query: &Sample, gallery: &Sample) -> Result<f64> {
        Ok(self.routed_distance(&self.route(query)?, &self.route(gallery)?))
    }

    pub fn route_set(&self, set: &SampleSet) -> Result<Vec<Routed>> {
        set.samples().par_iter().map(|s| self.route(s)).collect()
    }

    /// Query-by-gallery distances, rows evaluated in parallel.
    pub fn distance_matrix(&self, queries: &SampleSet, gallery: &SampleSet) -> Result<DistanceMatrix> {
        let (rq, rg) = (self.route_set(queries)?, self.route_set(gallery)?);
        let entries: Vec<f64> = rq
            .par_iter()
            .flat_map_iter(|q| rg.iter().map(move |g| self.routed_distance(q, g)))
            .collect();
        DistanceMatrix::new(rq.len(), rg.len(), entries)
    }

    /// Same result as [`Self::distance_matrix`], computed on one thread.
    pub fn distance_matrix_sequential(&self, queries: &SampleSet, gallery: &SampleSet) -> Result<DistanceMatrix> {
        let rq = queries.iter().map(|s| self.route(s)).collect::<Result<Vec<_>>>()?;
        let rg = gallery.iter().map(|s| self.route(s)).collect::<Result<Vec<_>>>()?;
        DistanceMatrix::from_fn(rq.len(), rg.len(), |q, g| self.routed_distance(&rq[q], &rg[g]))
    }
}

/// Gallery indices by ascending distance; ties keep the lower index first.
pub fn rank_row(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    order
}
