mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smb_core::evalproto::{cmc, Exclusion, MetaRecord};
use smb_core::metric::{kissme_learn, PairSet, Regularization};
use smb_core::DistanceMatrix;

fn as_pair_set<'a>(similar: &'a [(Vec<f64>, Vec<f64>)], dissimilar: &'a [(Vec<f64>, Vec<f64>)]) -> PairSet<'a> {
    PairSet {
        similar: similar.iter().map(|(x, y)| (x.as_slice(), y.as_slice())).collect(),
        dissimilar: dissimilar.iter().map(|(x, y)| (x.as_slice(), y.as_slice())).collect(),
    }
}

#[test]
fn kissme_agrees_with_reference_on_random_pair_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &d in &[2usize, 4, 8] {
        for trial in 0..40 {
            let similar = random_pairs(&mut rng, d, 6 * d + 10);
            let dissimilar: Vec<_> = random_pairs(&mut rng, d, 8 * d + 10)
                .into_iter()
                .map(|(x, y)| (x.iter().map(|v| 2.0 * v).collect(), y))
                .collect();
            let lambda = if trial % 2 == 0 { 0.0 } else { 0.05 };
            let got = kissme_learn(&as_pair_set(&similar, &dissimilar), Regularization::Fixed(lambda)).unwrap();
            let want = kissme(&similar, &dissimilar, d, lambda);
            let err = max_abs_diff(&want, got.entries());
            assert!(err < 1e-9, "d={d} trial={trial}: max abs diff {err:e}");
        }
    }
}

#[test]
fn trace_scaled_ridge_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = 4;
    let similar = random_pairs(&mut rng, d, 40);
    let dissimilar = random_pairs(&mut rng, d, 60);
    let (s, c) = (pair_covariance(&similar, d), pair_covariance(&dissimilar, d));
    let trace: f64 = (0..d).map(|i| s[i][i] + c[i][i]).sum();
    let lambda = 0.01 * trace / (2.0 * d as f64);
    let got = kissme_learn(&as_pair_set(&similar, &dissimilar), Regularization::TraceScaled(0.01)).unwrap();
    assert!(max_abs_diff(&kissme(&similar, &dissimilar, d, lambda), got.entries()) < 1e-9);
}

fn one_dim_pairs(spread: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
    // Differences of +-spread give a second moment of spread^2.
    vec![(vec![spread], vec![0.0]), (vec![0.0], vec![spread])]
}

#[test]
fn one_dimensional_closed_forms() {
    let unit = one_dim_pairs(1.0);
    let wide = one_dim_pairs(2.0);
    let m = kissme_learn(&as_pair_set(&unit, &wide), Regularization::Fixed(0.0)).unwrap();
    assert!((m.entries()[(0, 0)] - 0.75).abs() <= 1e-12);
    let m = kissme_learn(&as_pair_set(&wide, &unit), Regularization::Fixed(0.0)).unwrap();
    assert!(m.entries()[(0, 0)].abs() <= 1e-12);
}

#[test]
fn jacobi_oracle_reconstructs_its_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 5;
    let mut a = zeros(n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = rng.random_range(-1.0..1.0);
            a[i][j] = v;
            a[j][i] = v;
        }
    }
    let (vals, vecs) = jacobi_eigen(&a);
    for i in 0..n {
        for j in 0..n {
            let r: f64 = (0..n).map(|k| vals[k] * vecs[i][k] * vecs[j][k]).sum();
            assert!((r - a[i][j]).abs() < 1e-12);
        }
    }
}

/// Random 10x50 instance with coarse distances so ties are common.
fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<(u32, u32)>, Vec<(u32, u32)>) {
    let (q, g) = (10, 50);
    let gallery: Vec<(u32, u32)> = (0..g).map(|_| (rng.random_range(0..12), rng.random_range(0..3))).collect();
    let query: Vec<(u32, u32)> = (0..q)
        .map(|_| {
            let g0 = gallery[rng.random_range(0..g)];
            let cam = rng.random_range(0..3);
            // Keep a match on another camera so the exclusion rule never empties a query.
            if gallery.iter().any(|&(i, c)| i == g0.0 && c != cam) {
                (g0.0, cam)
            } else {
                (g0.0, (g0.1 + 1) % 3)
            }
        })
        .collect();
    let dist = (0..q)
        .map(|_| (0..g).map(|_| rng.random_range(0..20) as f64 / 4.0).collect())
        .collect();
    (dist, query, gallery)
}

fn meta(ids: &[(u32, u32)]) -> Vec<MetaRecord> {
    ids.iter().map(|&(i, c)| MetaRecord::new(i, c)).collect()
}

#[test]
fn cmc_matches_brute_force_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let ks: Vec<usize> = (1..=50).collect();
    for _ in 0..100 {
        let (dist, query, gallery) = random_instance(&mut rng);
        let flat: Vec<f64> = dist.iter().flatten().copied().collect();
        let dm = DistanceMatrix::new(10, 50, flat).unwrap();
        for (exclusion, flag) in [(Exclusion::None, false), (Exclusion::SameCameraSameIdentity, true)] {
            let curve = cmc(&dm, &meta(&query), &meta(&gallery), &ks, exclusion).unwrap();
            let want = brute_force_cmc(&brute_force_ranks(&dist, &query, &gallery, flag), &ks);
            let mut last = 0.0;
            for (k, (hits, total)) in ks.iter().zip(want) {
                let acc = curve.at(*k).unwrap();
                assert_eq!((acc.hits, acc.total), (hits, total));
                assert_eq!(acc.fraction().to_bits(), (hits as f64 / total as f64).to_bits());
                assert!(acc.fraction() >= last);
                last = acc.fraction();
            }
        }
    }
}
