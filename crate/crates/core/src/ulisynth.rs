//! Labelled synthetic feature data with controlled illumination.
//!
//! Each generated feature vector is
//! `prototype(identity) + offset(background) + offset(zrotation)`, with the
//! first `illum_gain_dims` coordinates multiplied by the relative light
//! intensity of the sample's illumination label, plus isotropic noise.
//! Label 0 is the neutral gain. Background and z-rotation offsets live only
//! on the last `nuisance_dims` coordinates, so every domain shares the same
//! nuisance subspace even though the offsets themselves are redrawn.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StageRng};
use crate::types::{FeatureVector, Sample, SampleSet, ILLUMINATION_LEVELS, ZROTATION_LEVELS};

/// Light intensity parameter for illumination `label`: `exp(0.5 * label + 0.6) - 1`.
pub fn light_intensity(label: u8) -> Result<f64> {
    if label >= ILLUMINATION_LEVELS {
        return Err(Error::Range {
            what: "illumination label",
            value: label as i64,
        });
    }
    Ok((0.5 * label as f64 + 0.6).exp_m1())
}

/// Multiplicative gain of `label` relative to label 0.
pub fn relative_gain(label: u8) -> Result<f64> {
    Ok(light_intensity(label)? / light_intensity(0)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub identities: usize,
    pub backgrounds: usize,
    pub zrotations: usize,
    pub illuminations: Vec<u8>,
    pub dimension: usize,
    pub illum_gain_dims: usize,
    /// Trailing coordinates that carry background and z-rotation offsets.
    pub nuisance_dims: usize,
    pub noise_scale: f64,
    /// Mean level of the gain coordinates before the illumination gain.
    pub albedo: f64,
    pub background_scale: f64,
    pub zrotation_scale: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            identities: 115,
            backgrounds: 8,
            zrotations: 8,
            illuminations: (0..ILLUMINATION_LEVELS).collect(),
            dimension: crate::types::DEFAULT_DIM,
            illum_gain_dims: crate::types::DEFAULT_DIM / 4,
            nuisance_dims: crate::types::DEFAULT_DIM / 4,
            noise_scale: 0.1,
            albedo: 4.0,
            background_scale: 0.3,
            zrotation_scale: 0.2,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.identities < 2 {
            return Err(Error::arg("at least two identities are required"));
        }
        if self.backgrounds == 0 {
            return Err(Error::arg("at least one background is required"));
        }
        if self.zrotations == 0 || self.zrotations > ZROTATION_LEVELS as usize {
            return Err(Error::arg(format!(
                "z-rotation count must be in 1..={ZROTATION_LEVELS}"
            )));
        }
        if self.illuminations.is_empty() {
            return Err(Error::arg("at least one illumination label is required"));
        }
        for (i, &l) in self.illuminations.iter().enumerate() {
            light_intensity(l)?;
            if self.illuminations[..i].contains(&l) {
                return Err(Error::arg(format!("illumination label {l} listed twice")));
            }
        }
        if self.dimension == 0 {
            return Err(Error::arg("dimension must be positive"));
        }
        if self.illum_gain_dims > self.dimension {
            return Err(Error::arg("illum_gain_dims exceeds dimension"));
        }
        if self.nuisance_dims > self.dimension {
            return Err(Error::arg("nuisance_dims exceeds dimension"));
        }
        for (name, v) in [
            ("noise_scale", self.noise_scale),
            ("background_scale", self.background_scale),
            ("zrotation_scale", self.zrotation_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("{name} must be finite and non-negative")));
            }
        }
        if !self.albedo.is_finite() {
            return Err(Error::arg("albedo must be finite"));
        }
        Ok(())
    }

    /// Number of samples [`generate_source_domain`] produces.
    pub fn sample_count(&self) -> usize {
        self.identities * self.backgrounds * self.zrotations * self.illuminations.len()
    }
}

/// Identity, background and z-rotation components drawn for one domain.
struct Factors {
    prototypes: Vec<Vec<f64>>,
    backgrounds: Vec<Vec<f64>>,
    zrotations: Vec<Vec<f64>>,
}

impl Factors {
    fn draw(config: &GeneratorConfig, seed: u64, domain: &str) -> Self {
        let d = config.dimension;
        let gauss = |rng: &mut StageRng, scale: f64| -> Vec<f64> {
            (0..d)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let mut r = rng::stream(seed, &format!("{domain}/prototypes"));
        let prototypes = (0..config.identities)
            .map(|_| {
                let mut p = gauss(&mut r, 1.0);
                p[..config.illum_gain_dims]
                    .iter_mut()
                    .for_each(|v| *v += config.albedo);
                p
            })
            .collect();
        let first_nuisance = d - config.nuisance_dims;
        let nuisance = |mut v: Vec<f64>| {
            v[..first_nuisance].iter_mut().for_each(|x| *x = 0.0);
            v
        };
        let mut r = rng::stream(seed, &format!("{domain}/backgrounds"));
        let backgrounds = (0..config.backgrounds)
            .map(|_| nuisance(gauss(&mut r, config.background_scale)))
            .collect();
        let mut r = rng::stream(seed, &format!("{domain}/zrotations"));
        let zrotations = (0..config.zrotations)
            .map(|_| nuisance(gauss(&mut r, config.zrotation_scale)))
            .collect();
        Self {
            prototypes,
            backgrounds,
            zrotations,
        }
    }

    fn render(
        &self,
        config: &GeneratorConfig,
        identity: usize,
        background: usize,
        zrotation: usize,
        gain: f64,
        noise: &mut StageRng,
    ) -> FeatureVector {
        let (p, b, z) = (
            &self.prototypes[identity],
            &self.backgrounds[background],
            &self.zrotations[zrotation],
        );
        let values: Vec<f64> = (0..config.dimension)
            .map(|j| {
                let base = p[j] + b[j] + z[j];
                let lit = if j < config.illum_gain_dims { base * gain } else { base };
                lit + config.noise_scale * noise.sample::<f64, _>(StandardNormal)
            })
            .collect();
        FeatureVector::from(values)
    }
}

/// Generates the labelled source domain: one sample per
/// `(identity, background, zrotation, illumination)` tuple, enumerated in
/// that lexicographic order.
pub fn generate_source_domain(config: &GeneratorConfig) -> Result<SampleSet> {
    config.validate()?;
    let factors = Factors::draw(config, config.seed, "source");
    let gains = config
        .illuminations
        .iter()
        .map(|&l| relative_gain(l))
        .collect::<Result<Vec<_>>>()?;
    let mut noise = rng::stream(config.seed, "source/noise");
    let mut out = SampleSet::empty(config.dimension);
    for id in 0..config.identities {
        for bg in 0..config.backgrounds {
            for zr in 0..config.zrotations {
                for (&label, &gain) in config.illuminations.iter().zip(&gains) {
                    let features = factors.render(config, id, bg, zr, gain, &mut noise);
                    out.push(
                        Sample::new(id as u32, bg as u32, features)
                            .with_illumination(label)
                            .with_zrotation(zr as u8),
                    );
                }
            }
        }
    }
    Ok(out)
}

/// The samples of `set` whose illumination label equals `label`, order preserved.
pub fn select_subset_by_illumination(set: &SampleSet, label: u8) -> SampleSet {
    set.filter(|s| s.illumination == Some(label))
}

/// Simulates an unlabelled-illumination target domain.
///
/// Each identity gets `backgrounds * zrotations` samples, alternating between
/// cameras 0 and 1. Illumination labels are drawn from `condition_weights`,
/// aligned with `config.illuminations`, and stored on each sample as ground
/// truth for evaluation only. Identities, backgrounds and noise all come from
/// `seed`, independent of `config.seed`.
pub fn simulate_target_domain(
    config: &GeneratorConfig,
    condition_weights: &[f64],
    seed: u64,
) -> Result<SampleSet> {
    config.validate()?;
    if condition_weights.len() != config.illuminations.len() {
        return Err(Error::arg(format!(
            "{} weights given for {} illumination labels",
            condition_weights.len(),
            config.illuminations.len()
        )));
    }
    if condition_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::arg("condition weights must be finite and non-negative"));
    }
    let total: f64 = condition_weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::arg(format!("condition weights sum to {total}, not 1")));
    }
    let picker = WeightedIndex::new(condition_weights).map_err(|e| Error::arg(e.to_string()))?;
    let gains = config
        .illuminations
        .iter()
        .map(|&l| relative_gain(l))
        .collect::<Result<Vec<_>>>()?;

    let factors = Factors::draw(config, seed, "target");
    let mut labels = rng::stream(seed, "target/illumination");
    let mut noise = rng::stream(seed, "target/noise");
    let mut out = SampleSet::empty(config.dimension);
    for id in 0..config.identities {
        let mut shot = 0u32;
        for bg in 0..config.backgrounds {
            for zr in 0..config.zrotations {
                let which = picker.sample(&mut labels);
                let features = factors.render(config, id, bg, zr, gains[which], &mut noise);
                out.push(
                    Sample::new(id as u32, shot % 2, features)
                        .with_illumination(config.illuminations[which])
                        .with_zrotation(zr as u8),
                );
                shot += 1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn small(identities: usize, backgrounds: usize, zrotations: usize) -> GeneratorConfig {
        GeneratorConfig {
            identities,
            backgrounds,
            zrotations,
            dimension: 6,
            illum_gain_dims: 2,
            nuisance_dims: 2,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn light_intensity_values() {
        // Reference values from 30-digit evaluation of exp(x) - 1.
        assert!((light_intensity(0).unwrap() - 0.822_118_800_390_509).abs() < 1e-12);
        assert!((light_intensity(1).unwrap() - 2.004_166_023_946_433).abs() < 1e-12);
        assert!((light_intensity(7).unwrap() - 59.340_287_597_361_97).abs() < 1e-12);
        assert!(matches!(light_intensity(8), Err(Error::Range { .. })));
    }

    #[test]
    fn light_intensity_is_strictly_increasing() {
        let v: Vec<f64> = (0..8).map(|l| light_intensity(l).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(relative_gain(0).unwrap(), 1.0);
    }

    #[test]
    fn counts_follow_the_product() {
        let set = generate_source_domain(&small(20, 4, 4)).unwrap();
        assert_eq!(set.len(), 2560);
    }

    #[test]
    fn one_sample_per_factor_tuple() {
        let set = generate_source_domain(&small(3, 2, 2)).unwrap();
        let tuples: BTreeSet<_> = set
            .iter()
            .map(|s| (s.identity, s.camera, s.zrotation, s.illumination))
            .collect();
        assert_eq!(tuples.len(), set.len());
    }

    #[test]
    fn generation_is_deterministic() {
        let c = small(4, 2, 2);
        assert_eq!(generate_source_domain(&c).unwrap(), generate_source_domain(&c).unwrap());
    }

    #[test]
    fn illumination_touches_only_gain_dims_without_noise() {
        let mut c = small(2, 1, 1);
        c.noise_scale = 0.0;
        let set = generate_source_domain(&c).unwrap();
        // all 8 labels of identity 0 share every non-gain coordinate
        let first = &set.samples()[0];
        for s in set.iter().filter(|s| s.identity == 0) {
            assert_eq!(&s.features.as_slice()[2..], &first.features.as_slice()[2..]);
            let g = relative_gain(s.illumination.unwrap()).unwrap();
            for j in 0..2 {
                let expected = first.features.as_slice()[j] * g;
                assert!((s.features.as_slice()[j] - expected).abs() < 1e-12 * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn subset_selection() {
        let set = generate_source_domain(&small(3, 2, 2)).unwrap();
        let sub = select_subset_by_illumination(&set, 3);
        assert_eq!(sub.len(), set.len() / 8);
        assert!(sub.iter().all(|s| s.illumination == Some(3)));
        assert!(select_subset_by_illumination(&set, 9).is_empty());
        let mut c = small(3, 2, 2);
        c.illuminations = vec![0, 1];
        let set = generate_source_domain(&c).unwrap();
        assert!(select_subset_by_illumination(&set, 5).is_empty());
    }

    #[test]
    fn target_weights_are_validated() {
        let mut c = small(10, 10, 8);
        c.illuminations = vec![2, 5, 7];
        assert!(simulate_target_domain(&c, &[0.6, 0.3], 1).is_err());
        assert!(simulate_target_domain(&c, &[0.6, 0.3, 0.2], 1).is_err());
        assert!(simulate_target_domain(&c, &[0.6, 0.5, -0.1], 1).is_err());
    }

    #[test]
    fn degenerate_weight_gives_single_label() {
        let mut c = small(5, 2, 2);
        c.illuminations = vec![4];
        let set = simulate_target_domain(&c, &[1.0], 3).unwrap();
        assert!(set.iter().all(|s| s.illumination == Some(4)));
    }

    #[test]
    fn target_cameras_alternate_per_identity() {
        let c = GeneratorConfig {
            illuminations: vec![2, 5],
            ..small(3, 2, 3)
        };
        let set = simulate_target_domain(&c, &[0.5, 0.5], 9).unwrap();
        for id in 0..3 {
            let cams: Vec<u32> = set.iter().filter(|s| s.identity == id).map(|s| s.camera).collect();
            assert_eq!(cams, vec![0, 1, 0, 1, 0, 1]);
        }
        assert_eq!(set, simulate_target_domain(&c, &[0.5, 0.5], 9).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(GeneratorConfig { identities: 1, ..small(2, 1, 1) }.validate().is_err());
        assert!(GeneratorConfig { illum_gain_dims: 7, ..small(2, 1, 1) }.validate().is_err());
        assert!(GeneratorConfig { zrotations: 9, ..small(2, 1, 1) }.validate().is_err());
        assert!(GeneratorConfig { illuminations: vec![1, 1], ..small(2, 1, 1) }.validate().is_err());
        assert!(GeneratorConfig { illuminations: vec![8], ..small(2, 1, 1) }.validate().is_err());
    }
}
