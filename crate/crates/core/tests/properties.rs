use nalgebra::DMatrix;
use proptest::prelude::*;
use smb_core::cyclediff::{decode, encode, GaussianDdim, NoiseSchedule};
use smb_core::encoders::{Encoder, EncoderKind};
use smb_core::evalproto::{cmc, euclidean_distances, filter_valid_queries, Exclusion, MetaRecord, Protocol, SplitSpec};
use smb_core::illum::{partition_target, CentroidClassifier, Classifier};
use smb_core::linalg::min_eigenvalue;
use smb_core::metric::{mahalanobis_sq, psd_project, ConditionPair, MahalanobisMatrix, MetricBank};
use smb_core::smb::{rank_row, SynthesisModelBank};
use smb_core::{DistanceMatrix, FeatureVector, Sample, SampleSet};

fn vec_of(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, d)
}

fn symmetric(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-5.0f64..5.0, d * d).prop_map(move |v| {
        let a = DMatrix::from_vec(d, d, v);
        (&a + a.transpose()) * 0.5
    })
}

fn psd(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0f64..2.0, d * d).prop_map(move |v| {
        let a = DMatrix::from_vec(d, d, v);
        let m = &a * a.transpose();
        (&m + m.transpose()) * 0.5
    })
}

fn set_of(points: &[Vec<f64>], ids: &[u32]) -> SampleSet {
    SampleSet::new(
        points[0].len(),
        points
            .iter()
            .zip(ids)
            .enumerate()
            .map(|(i, (p, &id))| Sample::new(id, (i % 2) as u32, FeatureVector::from(p.clone())))
            .collect(),
    )
}

/// Two conditions split by the sign of the first coordinate, random PSD bank.
fn random_bank(d: usize, mats: [DMatrix<f64>; 3], shift: Vec<f64>) -> SynthesisModelBank {
    let mut neg = vec![0.0; d];
    let mut pos = vec![0.0; d];
    neg[0] = -1.0;
    pos[0] = 1.0;
    let switch = CentroidClassifier::new(vec![(1, FeatureVector::from(neg)), (2, FeatureVector::from(pos))]).unwrap();
    let encoders = vec![
        Encoder::identity(1, d),
        Encoder::from_parts(EncoderKind::Whitening, 2, shift, DMatrix::identity(d, d) * 0.5).unwrap(),
    ];
    let [m11, m12, m22] = mats;
    let bank = MetricBank::new(
        2,
        vec![
            MahalanobisMatrix::new(ConditionPair::new(1, 1), m11).unwrap(),
            MahalanobisMatrix::new(ConditionPair::new(1, 2), m12).unwrap(),
            MahalanobisMatrix::new(ConditionPair::new(2, 2), m22).unwrap(),
        ],
    )
    .unwrap();
    SynthesisModelBank::assemble(switch, encoders, bank).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mahalanobis_is_symmetric_and_identity_is_euclidean(
        (m, x, y) in (1usize..8).prop_flat_map(|d| (psd(d), vec_of(d), vec_of(d)))
    ) {
        let d = x.len();
        let mm = MahalanobisMatrix::new(ConditionPair::new(1, 1), m).unwrap();
        let xy = mahalanobis_sq(&mm, &x, &y).unwrap();
        prop_assert_eq!(xy.to_bits(), mahalanobis_sq(&mm, &y, &x).unwrap().to_bits());
        prop_assert!(xy >= 0.0);
        let eye = MahalanobisMatrix::identity(ConditionPair::new(1, 1), d);
        let e = mahalanobis_sq(&eye, &x, &y).unwrap();
        let want: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        prop_assert!((e - want).abs() <= 1e-12 * want.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn psd_projection_clears_negative_spectrum(m in (1usize..10).prop_flat_map(symmetric)) {
        let p = psd_project(&m).unwrap();
        prop_assert!(min_eigenvalue(&p) >= -1e-9);
        // Projecting twice changes nothing beyond round-off.
        let q = psd_project(&p).unwrap();
        prop_assert!((&q - &p).amax() <= 1e-9 * (1.0 + p.amax()));
    }

    #[test]
    fn ranking_is_invariant_under_bank_scaling(
        (m1, m2, m3, shift, q, gallery, c) in (2usize..5).prop_flat_map(|d| (
            psd(d), psd(d), psd(d), vec_of(d), vec_of(d),
            prop::collection::vec(vec_of(d), 2..12), 0.01f64..100.0,
        ))
    ) {
        let d = q.len();
        let smb = random_bank(d, [m1, m2, m3], shift);
        let scaled = smb.with_scaled_bank(c).unwrap();
        let ids: Vec<u32> = (0..gallery.len() as u32).collect();
        let g = set_of(&gallery, &ids);
        let qs = set_of(&[q], &[0]);
        let a = smb.distance_matrix(&qs, &g).unwrap();
        let b = scaled.distance_matrix(&qs, &g).unwrap();
        // Scaling by c is exact only up to rounding, so compare ranks of well-separated rows.
        let row = a.row(0);
        let mut sorted = row.to_vec();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let separated = sorted.windows(2).all(|w| w[1] - w[0] > 1e-9 * (1.0 + w[1].abs()));
        prop_assume!(separated);
        prop_assert_eq!(rank_row(row), rank_row(b.row(0)));
    }

    #[test]
    fn parallel_and_sequential_distances_agree(
        (m1, m2, m3, shift, qs, gs) in (2usize..5).prop_flat_map(|d| (
            psd(d), psd(d), psd(d), vec_of(d),
            prop::collection::vec(vec_of(d), 1..8),
            prop::collection::vec(vec_of(d), 1..16),
        ))
    ) {
        let d = shift.len();
        let smb = random_bank(d, [m1, m2, m3], shift);
        let q = set_of(&qs, &vec![0; qs.len()]);
        let g = set_of(&gs, &vec![0; gs.len()]);
        let a = smb.distance_matrix(&q, &g).unwrap();
        let b = smb.distance_matrix_sequential(&q, &g).unwrap();
        let bits = |m: &DistanceMatrix| m.entries().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn single_condition_bank_ranks_like_euclidean(
        (qs, gs) in (1usize..6).prop_flat_map(|d| (
            prop::collection::vec(vec_of(d), 1..6),
            prop::collection::vec(vec_of(d), 1..20),
        ))
    ) {
        let d = qs[0].len();
        let switch = CentroidClassifier::new(vec![(1, FeatureVector::zeros(d))]).unwrap();
        let bank = MetricBank::new(1, vec![MahalanobisMatrix::identity(ConditionPair::new(1, 1), d)]).unwrap();
        let smb = SynthesisModelBank::assemble(switch, vec![Encoder::identity(1, d)], bank).unwrap();
        let q = set_of(&qs, &vec![0; qs.len()]);
        let g = set_of(&gs, &vec![0; gs.len()]);
        let a = smb.distance_matrix(&q, &g).unwrap();
        let b = euclidean_distances(&q, &g).unwrap();
        for r in 0..q.len() {
            prop_assert_eq!(rank_row(a.row(r)), rank_row(b.row(r)));
        }
    }

    #[test]
    fn partition_is_a_disjoint_cover(
        (centroids, points) in (1usize..4).prop_flat_map(|d| (
            prop::collection::vec(vec_of(d), 1..5),
            prop::collection::vec(vec_of(d), 0..40),
        ))
    ) {
        let d = centroids[0].len();
        let clf = CentroidClassifier::new(
            centroids.iter().enumerate().map(|(i, c)| ((i + 1) as u16, FeatureVector::from(c.clone()))).collect(),
        ).unwrap();
        let ids: Vec<u32> = (0..points.len() as u32).collect();
        let set = if points.is_empty() { SampleSet::empty(d) } else { set_of(&points, &ids) };
        let parts = partition_target(&clf, &set).unwrap();
        prop_assert_eq!(parts.len(), clf.labels().len());
        prop_assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), set.len());
        let mut seen = Vec::new();
        for (part, &label) in parts.iter().zip(clf.labels()) {
            let mut last = None;
            for s in part.iter() {
                prop_assert_eq!(clf.classify(s.features.as_slice()).unwrap(), label);
                // Order within a part follows the input order.
                prop_assert!(last.is_none_or(|l| l < s.identity));
                last = Some(s.identity);
                seen.push(s.identity);
            }
        }
        seen.sort_unstable();
        prop_assert_eq!(seen, ids);
    }

    #[test]
    fn cmc_is_monotone_and_order_invariant(
        (cells, query_ids, gallery_ids) in (1usize..8, 2usize..20).prop_flat_map(|(q, g)| (
            prop::collection::vec(0u32..16, q * g),
            prop::collection::vec(0u32..4, q),
            prop::collection::vec(0u32..4, g),
        ))
    ) {
        let (q, g) = (query_ids.len(), gallery_ids.len());
        prop_assume!(query_ids.iter().all(|id| gallery_ids.contains(id)));
        let qm: Vec<MetaRecord> = query_ids.iter().map(|&i| MetaRecord::new(i, 0)).collect();
        let gm: Vec<MetaRecord> = gallery_ids.iter().map(|&i| MetaRecord::new(i, 1)).collect();
        let ks: Vec<usize> = (1..=g).collect();
        let base = DistanceMatrix::new(q, g, cells.iter().map(|&c| c as f64).collect()).unwrap();
        let curve = cmc(&base, &qm, &gm, &ks, Exclusion::None).unwrap();
        let fractions: Vec<f64> = ks.iter().map(|&k| curve.at(k).unwrap().fraction()).collect();
        prop_assert!(fractions.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*fractions.last().unwrap(), 1.0);
        // Small integers keep both transforms exact and strictly increasing.
        for f in [|x: f64| 2.0 * x + 1.0, |x: f64| x * x * x] {
            let moved = cmc(&base.map(f).unwrap(), &qm, &gm, &ks, Exclusion::None).unwrap();
            prop_assert_eq!(&moved, &curve);
        }
    }

    #[test]
    fn valid_query_filter_is_idempotent(
        (query_ids, gallery_ids) in (prop::collection::vec(0u32..10, 0..15), prop::collection::vec(0u32..10, 0..15))
    ) {
        let meta: Vec<MetaRecord> = query_ids.iter().map(|&i| MetaRecord::new(i, 0))
            .chain(gallery_ids.iter().map(|&i| MetaRecord::new(i, 1)))
            .collect();
        let split = SplitSpec {
            query: (0..query_ids.len()).collect(),
            gallery: (query_ids.len()..meta.len()).collect(),
            seed: 0,
            protocol: Protocol::Generic { identity_fraction: 1.0 },
        };
        let once = filter_valid_queries(&split, &meta);
        prop_assert_eq!(&filter_valid_queries(&once, &meta), &once);
        prop_assert!(once.query.iter().all(|&q| gallery_ids.contains(&meta[q].identity)));
        prop_assert_eq!(once.gallery, split.gallery);
    }

    #[test]
    fn encoders_are_affine(
        (mean, w, x, y, a) in (1usize..6).prop_flat_map(|d| (
            vec_of(d), prop::collection::vec(-2.0f64..2.0, d * d), vec_of(d), vec_of(d), 0.0f64..1.0,
        ))
    ) {
        let d = mean.len();
        let weights = DMatrix::from_vec(d, d, w);
        let enc = Encoder::from_parts(EncoderKind::Whitening, 1, mean.clone(), weights.clone()).unwrap();
        let ex = enc.encode(&x).unwrap();
        for i in 0..d {
            let want: f64 = (0..d).map(|j| weights[(i, j)] * (x[j] - mean[j])).sum();
            prop_assert!((ex.as_slice()[i] - want).abs() <= 1e-9);
        }
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + (1.0 - a) * q).collect();
        let ey = enc.encode(&y).unwrap();
        let em = enc.encode(&mix).unwrap();
        for i in 0..d {
            let want = a * ex.as_slice()[i] + (1.0 - a) * ey.as_slice()[i];
            prop_assert!((em.as_slice()[i] - want).abs() <= 1e-9);
        }
    }

    #[test]
    fn same_model_translation_reconstructs(
        (mean, x0) in (1usize..9).prop_flat_map(|d| (vec_of(d), vec_of(d))),
        scale in 0.1f64..5.0,
        steps in 21usize..80,
        frac in 0.05f64..1.0,
        seed in any::<u64>(),
    ) {
        use rand::SeedableRng;
        let schedule = NoiseSchedule::linear_rescaled(steps).unwrap();
        let model = GaussianDdim::new(mean, scale, schedule).unwrap();
        let t_es = ((steps as f64 * frac).ceil() as usize).clamp(1, steps);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let z = encode(&model, &x0, t_es, &mut rng).unwrap();
        prop_assert_eq!(z.residuals.len(), t_es);
        let back = decode(&model, &z).unwrap();
        let err = back.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-6, "error {}", err);
    }

    #[test]
    fn schedule_invariants(steps in 1usize..400, b0 in 1e-5f64..0.01, extra in 0.0f64..0.05) {
        let s = NoiseSchedule::linear(steps, b0, b0 + extra).unwrap();
        prop_assert_eq!(s.alpha_bar(0), 1.0);
        prop_assert_eq!(s.sigma(1), 0.0);
        for t in 1..=steps {
            prop_assert!(s.beta(t) >= s.beta_start() - 1e-15 && s.beta(t) <= s.beta_end() + 1e-15);
            prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1) && s.alpha_bar(t) > 0.0);
            prop_assert!((s.alpha_bar(t) - s.alpha_bar(t - 1) * s.alpha(t)).abs() <= 1e-12);
            prop_assert!(s.sigma(t) >= 0.0 && s.sigma(t) * s.sigma(t) <= s.beta(t) * (1.0 + 1e-12));
            // Noise-free x_t must map back onto the noise-free x_{t-1}.
            let (c0, ct) = s.posterior_coefficients(t);
            // Both coefficients divide by 1 - ab_t, which loses digits when it is tiny.
            let tol = 1e-14 / (1.0 - s.alpha_bar(t));
            prop_assert!((c0 + ct * s.alpha_bar(t).sqrt() - s.alpha_bar(t - 1).sqrt()).abs() <= tol);
        }
    }
}

#[test]
fn posterior_identity_holds_for_a_flat_tiny_beta_schedule() {
    let s = NoiseSchedule::linear(265, 1e-5, 1e-5).unwrap();
    for t in 1..=265 {
        let (c0, ct) = s.posterior_coefficients(t);
        let err = (c0 + ct * s.alpha_bar(t).sqrt() - s.alpha_bar(t - 1).sqrt()).abs();
        assert!(err <= 1e-14 / (1.0 - s.alpha_bar(t)), "t={t}: {err:e}");
    }
}
