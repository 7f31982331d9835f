//! Fixtures and reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use nesphere::tagger::{CrfModel, FeatureSpec, Instance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut impl Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Haar-distributed orthogonal matrix.
pub fn random_orthogonal(rng: &mut impl Rng, dim: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn matvec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows()];
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[i] += m[(i, j)] * v[j];
        }
    }
    out
}

pub fn naive_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut total = 0.0;
    for k in 0..a.len() {
        let d = a[k] - b[k];
        total += d * d;
    }
    total.sqrt()
}

/// Best F1 over every strict threshold `d < t`, returned as `(2G, T + P)` so callers can compare exactly.
pub fn exhaustive_best_f1(distances: &[f64], positive: &[bool]) -> (usize, usize) {
    let t = positive.iter().filter(|&&p| p).count();
    let mut thresholds: Vec<f64> = distances.to_vec();
    thresholds.push(0.0);
    thresholds.push(f64::INFINITY);
    let mut best = (0usize, t.max(1));
    for &th in &thresholds {
        let mut p = 0;
        let mut g = 0;
        for (d, &pos) in distances.iter().zip(positive) {
            if *d < th {
                p += 1;
                if pos {
                    g += 1;
                }
            }
        }
        let candidate = (2 * g, t + p);
        // compare 2g/(t+p) as fractions
        if candidate.0 * best.1 > best.0 * candidate.1 {
            best = candidate;
        }
    }
    best
}

pub fn bare_spec(width: usize) -> FeatureSpec {
    FeatureSpec {
        embedding_dim: width - 1,
        hypersphere: false,
        lexical: false,
    }
}

pub fn tag_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("T{i}")).collect()
}

/// A CRF with Gaussian parameters and a random instance of `len` tokens.
pub fn random_crf(rng: &mut impl Rng, tags: usize, len: usize, width: usize, scale: f64) -> (CrfModel, Instance) {
    let mut model = CrfModel::new(tag_names(tags), bare_spec(width)).unwrap();
    let params = gaussian_vec(rng, model.parameter_count(), scale);
    model.set_parameters(&params).unwrap();
    let features = (0..len)
        .map(|_| {
            let mut f = gaussian_vec(rng, width - 1, 1.0);
            f.push(1.0);
            f
        })
        .collect();
    let tags_idx = (0..len).map(|_| rng.gen_range(0..tags)).collect();
    (
        model,
        Instance {
            features,
            tags: tags_idx,
        },
    )
}

/// Every tag sequence of length `len` over `tags` tags, in lexicographic order.
pub fn all_sequences(tags: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..tags).map(move |t| {
                    let mut next = prefix.clone();
                    next.push(t);
                    next
                })
            })
            .collect();
    }
    out
}

/// `s(x, y)` summed directly from the model fields.
pub fn oracle_score(model: &CrfModel, features: &[Vec<f64>], y: &[usize]) -> f64 {
    let stop = model.tags.len();
    let start = model.tags.len();
    let mut total = 0.0;
    let mut prev = start;
    for (i, &tag) in y.iter().enumerate() {
        total += model.transitions[prev][tag];
        let mut emit = 0.0;
        for k in 0..features[i].len() {
            emit += model.emissions[tag][k] * features[i][k];
        }
        total += emit;
        prev = tag;
    }
    total + model.transitions[prev][stop]
}

/// `log Z` by enumeration, with a max shift for stability.
pub fn oracle_log_partition(model: &CrfModel, features: &[Vec<f64>]) -> f64 {
    let scores: Vec<f64> = all_sequences(model.tags.len(), features.len())
        .iter()
        .map(|y| oracle_score(model, features, y))
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Highest-scoring sequence by enumeration; the first one in lexicographic order wins ties.
pub fn oracle_argmax(model: &CrfModel, features: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for y in all_sequences(model.tags.len(), features.len()) {
        let s = oracle_score(model, features, &y);
        if s > best.1 {
            best = (y, s);
        }
    }
    best
}

pub fn oracle_log_likelihood(model: &CrfModel, inst: &Instance) -> f64 {
    oracle_score(model, &inst.features, &inst.tags) - oracle_log_partition(model, &inst.features)
}

/// Symmetric eigenvalues by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(matrix: &[Vec<f64>]) -> Vec<f64> {
    let n = matrix.len();
    let mut a = matrix.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig
}

/// Population covariance of the rows.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for k in 0..d {
            mean[k] += r[k] / n;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / n;
            }
        }
    }
    cov
}

/// Mean and population standard deviation by two passes.
pub fn two_pass_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
