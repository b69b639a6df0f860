//! Per-condition affine encoders.
//!
//! An encoder maps `x` to `W (x - mean)`. The identity kind leaves vectors
//! untouched; the whitening kind is fitted to one condition's synthetic set
//! so that set comes out centred with unit covariance.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::types::{FeatureVector, Sample, SampleSet};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Identity,
    Whitening,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Identity => "identity",
            EncoderKind::Whitening => "whitening",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(EncoderKind::Identity),
            "whitening" => Ok(EncoderKind::Whitening),
            other => Err(Error::arg(format!("unknown encoder kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    kind: EncoderKind,
    condition: u16,
    mean: DVector<f64>,
    weights: DMatrix<f64>,
}

impl Encoder {
    /// Assembles an encoder from explicit parameters; `weights` is `d_out x d_in`.
    pub fn from_parts(kind: EncoderKind, condition: u16, mean: Vec<f64>, weights: DMatrix<f64>) -> Result<Self> {
        Error::check_dim(weights.ncols(), mean.len())?;
        if weights.nrows() == 0 || mean.is_empty() {
            return Err(Error::arg("encoder dimensions must be positive"));
        }
        if mean.iter().chain(weights.iter()).any(|v| !v.is_finite()) {
            return Err(Error::arg("encoder parameters must be finite"));
        }
        Ok(Self {
            kind,
            condition,
            mean: DVector::from_vec(mean),
            weights,
        })
    }

    pub fn identity(condition: u16, dim: usize) -> Self {
        Self {
            kind: EncoderKind::Identity,
            condition,
            mean: DVector::zeros(dim),
            weights: DMatrix::identity(dim, dim),
        }
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn condition(&self) -> u16 {
        self.condition
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn encode(&self, x: &[f64]) -> Result<FeatureVector> {
        Error::check_dim(self.input_dim(), x.len())?;
        if self.kind == EncoderKind::Identity {
            return Ok(FeatureVector::from(x.to_vec()));
        }
        let centred: Vec<f64> = x.iter().zip(self.mean.iter()).map(|(a, m)| a - m).collect();
        let out: Vec<f64> = (0..self.output_dim())
            .map(|r| {
                self.weights
                    .row(r)
                    .iter()
                    .zip(&centred)
                    .map(|(w, c)| w * c)
                    .sum::<f64>()
            })
            .collect();
        Ok(FeatureVector::from(out))
    }

    /// Encodes every sample of `set`, keeping its labels.
    pub fn encode_set(&self, set: &SampleSet) -> Result<SampleSet> {
        let samples = set
            .iter()
            .map(|s| {
                Ok(Sample {
                    features: self.encode(s.features.as_slice())?,
                    ..s.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleSet::new(self.output_dim(), samples))
    }
}

/// Fits an encoder of `kind` for `condition` on one synthetic set.
///
/// Whitening uses `W = (S + eps I)^{-1/2}` with `S` the population covariance
/// and `eps = 1e-6 tr(S) / d`, floored at `1e-12`.
pub fn train_condition_encoder(synthetic: &SampleSet, kind: EncoderKind, condition: u16) -> Result<Encoder> {
    if synthetic.is_empty() {
        return Err(Error::arg("cannot fit an encoder on an empty set"));
    }
    let d = synthetic.dimension();
    for s in synthetic {
        Error::check_dim(d, s.features.dim())?;
    }
    if kind == EncoderKind::Identity {
        return Ok(Encoder::identity(condition, d));
    }
    let n = synthetic.len() as f64;
    let mut mean = DVector::<f64>::zeros(d);
    for s in synthetic {
        mean += DVector::from_column_slice(s.features.as_slice());
    }
    mean /= n;
    let mut centred = DMatrix::<f64>::zeros(synthetic.len(), d);
    for (r, s) in synthetic.iter().enumerate() {
        for c in 0..d {
            centred[(r, c)] = s.features.as_slice()[c] - mean[c];
        }
    }
    let cov = linalg::symmetrize(&(centred.transpose() * &centred / n));
    let eps = (1e-6 * cov.trace() / d as f64).max(1e-12);
    let weights = linalg::spd_inverse_sqrt(&(cov + DMatrix::identity(d, d) * eps), "encoder covariance")?;
    Ok(Encoder {
        kind,
        condition,
        mean,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[&[f64]]) -> SampleSet {
        SampleSet::new(
            rows[0].len(),
            rows.iter()
                .map(|r| Sample::new(0, 0, FeatureVector::from(r.to_vec())))
                .collect(),
        )
    }

    #[test]
    fn identity_encoder_is_exact() {
        let e = train_condition_encoder(&set(&[&[1.0, 2.0], &[3.0, 5.0]]), EncoderKind::Identity, 1).unwrap();
        assert_eq!(e.encode(&[1.0, 2.0]).unwrap().as_slice(), &[1.0, 2.0]);
        assert!(matches!(e.encode(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn hand_affine_examples() {
        let centring = Encoder::from_parts(EncoderKind::Whitening, 1, vec![1.0, 1.0], DMatrix::identity(2, 2)).unwrap();
        assert_eq!(centring.encode(&[1.0, 1.0]).unwrap().as_slice(), &[0.0, 0.0]);
        let half = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0]);
        let scaling = Encoder::from_parts(EncoderKind::Whitening, 1, vec![0.0, 0.0], half).unwrap();
        assert_eq!(scaling.encode(&[4.0, 3.0]).unwrap().as_slice(), &[2.0, 3.0]);
    }

    #[test]
    fn repeated_vector_whitens_to_zero() {
        let e = train_condition_encoder(&set(&[&[2.0, -1.0], &[2.0, -1.0], &[2.0, -1.0]]), EncoderKind::Whitening, 1).unwrap();
        assert!(e.weights().iter().all(|w| w.is_finite()));
        assert_eq!(e.encode(&[2.0, -1.0]).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn empty_set_is_rejected() {
        assert!(train_condition_encoder(&SampleSet::empty(2), EncoderKind::Whitening, 1).is_err());
        assert!("pca".parse::<EncoderKind>().is_err());
        assert_eq!("whitening".parse::<EncoderKind>().unwrap(), EncoderKind::Whitening);
    }
}
