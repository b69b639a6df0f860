// Independent reference implementations used by the integration tests. None
// of this calls into the library's linear algebra or ranking code.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;

pub type Mat = Vec<Vec<f64>>;

pub fn zeros(n: usize) -> Mat {
    vec![vec![0.0; n]; n]
}

pub fn eye(n: usize) -> Mat {
    let mut m = zeros(n);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

/// Mean outer product of the pair differences, summed term by term.
pub fn pair_covariance(pairs: &[(Vec<f64>, Vec<f64>)], d: usize) -> Mat {
    let mut c = zeros(d);
    for (x, y) in pairs {
        for i in 0..d {
            for j in 0..d {
                c[i][j] += (x[i] - y[i]) * (x[j] - y[j]);
            }
        }
    }
    let n = pairs.len() as f64;
    for row in &mut c {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    c
}

/// Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &Mat) -> Mat {
    let n = a.len();
    let mut m = a.clone();
    let mut inv = eye(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| m[r][col].abs().partial_cmp(&m[s][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        inv.swap(col, pivot);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular matrix in oracle");
        for j in 0..n {
            m[col][j] /= p;
            inv[col][j] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for j in 0..n {
                        m[r][j] -= f * m[col][j];
                        inv[r][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    inv
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix: (values, vectors as columns).
pub fn jacobi_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.len();
    let mut m = a.clone();
    let mut v = eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[i][i]).collect(), v)
}

/// Clips negative eigenvalues to zero and rebuilds the matrix.
pub fn clip_psd(a: &Mat) -> Mat {
    let n = a.len();
    let (vals, vecs) = jacobi_eigen(a);
    let mut out = zeros(n);
    for (k, &l) in vals.iter().enumerate() {
        let l = l.max(0.0);
        for i in 0..n {
            for j in 0..n {
                out[i][j] += l * vecs[i][k] * vecs[j][k];
            }
        }
    }
    out
}

/// Reference KISSME with ridge `lambda`.
pub fn kissme(similar: &[(Vec<f64>, Vec<f64>)], dissimilar: &[(Vec<f64>, Vec<f64>)], d: usize, lambda: f64) -> Mat {
    let mut s = pair_covariance(similar, d);
    let mut c = pair_covariance(dissimilar, d);
    for i in 0..d {
        s[i][i] += lambda;
        c[i][i] += lambda;
    }
    let (is, ic) = (invert(&s), invert(&c));
    let mut diff = zeros(d);
    for i in 0..d {
        for j in 0..d {
            diff[i][j] = is[i][j] - ic[i][j];
        }
    }
    let mut sym = zeros(d);
    for i in 0..d {
        for j in 0..d {
            sym[i][j] = 0.5 * (diff[i][j] + diff[j][i]);
        }
    }
    clip_psd(&sym)
}

/// First-match rank of every query by exhaustive counting.
///
/// A gallery entry `g` precedes `h` when its distance is smaller, or equal
/// with a lower index. Excluded entries are skipped entirely.
pub fn brute_force_ranks(
    dist: &[Vec<f64>],
    query_ids: &[(u32, u32)],
    gallery_ids: &[(u32, u32)],
    exclude_same_camera: bool,
) -> Vec<Option<usize>> {
    let excluded = |q: usize, g: usize| {
        exclude_same_camera && query_ids[q].0 == gallery_ids[g].0 && query_ids[q].1 == gallery_ids[g].1
    };
    (0..dist.len())
        .map(|q| {
            let row = &dist[q];
            let mut best: Option<usize> = None;
            for g in 0..row.len() {
                if excluded(q, g) || gallery_ids[g].0 != query_ids[q].0 {
                    continue;
                }
                let ahead = (0..row.len())
                    .filter(|&h| !excluded(q, h))
                    .filter(|&h| row[h] < row[g] || (row[h] == row[g] && h < g))
                    .count();
                let rank = ahead + 1;
                best = Some(best.map_or(rank, |b| b.min(rank)));
            }
            best
        })
        .collect()
}

/// `(hits, total)` per `k`.
pub fn brute_force_cmc(ranks: &[Option<usize>], ks: &[usize]) -> Vec<(usize, usize)> {
    ks.iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|r| matches!(r, Some(r) if *r <= k)).count();
            (hits, ranks.len())
        })
        .collect()
}

pub fn gaussian_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Random pairs whose differences are `L z` with `L` lower triangular, its
/// diagonal in `[0.5, 2)`, so the difference covariance is never near singular.
pub fn random_pairs(rng: &mut impl Rng, d: usize, n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut l = zeros(d);
    for i in 0..d {
        l[i][i] = rng.random_range(0.5..2.0);
        for j in 0..i {
            l[i][j] = 0.3 * rng.sample::<f64, _>(StandardNormal) / (d as f64).sqrt();
        }
    }
    (0..n)
        .map(|_| {
            let x = gaussian_vec(rng, d);
            let z = gaussian_vec(rng, d);
            let y: Vec<f64> = (0..d)
                .map(|i| x[i] + (0..=i).map(|j| l[i][j] * z[j]).sum::<f64>())
                .collect();
            (x, y)
        })
        .collect()
}

pub fn max_abs_diff(a: &Mat, b: &nalgebra::DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((v - b[(i, j)]).abs());
        }
    }
    worst
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}
