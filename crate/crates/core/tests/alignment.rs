mod common;

use common::*;
use nalgebra::DMatrix;
use nesphere::alignment::{
    procrustes, train_adversarial, transform_hypersphere, translation_accuracy, AdversarialConfig, AlignmentMap,
};
use nesphere::embeddings::EmbeddingSpace;
use nesphere::hypersphere::{Hypersphere, SphereType};
use rand::Rng;

fn space_from(rows: &[Vec<f64>], prefix: &str) -> EmbeddingSpace {
    EmbeddingSpace::from_entries(
        rows[0].len(),
        prefix,
        rows.iter()
            .enumerate()
            .map(|(i, v)| (format!("{prefix}{i}"), v.clone())),
    )
    .unwrap()
}

#[test]
fn procrustes_recovers_rotation() {
    let mut rng = rng(40);
    let q = random_orthogonal(&mut rng, 16);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..40)
        .map(|_| {
            let x = gaussian_vec(&mut rng, 16, 1.0);
            let y = matvec(&q, &x);
            (x, y)
        })
        .collect();
    let m = procrustes(&pairs).unwrap().to_matrix();
    assert!((&m - &q).abs().max() < 1e-6);
    let gram = m.transpose() * &m;
    assert!((gram - DMatrix::identity(16, 16)).abs().max() < 1e-6);

    let same: Vec<(Vec<f64>, Vec<f64>)> = pairs.iter().map(|(x, _)| (x.clone(), x.clone())).collect();
    assert!(
        (procrustes(&same).unwrap().to_matrix() - DMatrix::identity(16, 16))
            .abs()
            .max()
            < 1e-6
    );
}

/// Least squares `min ||X M^T - Y||` without the orthogonality constraint, via normal equations.
fn least_squares(pairs: &[(Vec<f64>, Vec<f64>)]) -> DMatrix<f64> {
    let d = pairs[0].0.len();
    let x = DMatrix::from_fn(pairs.len(), d, |i, j| pairs[i].0[j]);
    let y = DMatrix::from_fn(pairs.len(), d, |i, j| pairs[i].1[j]);
    let mt = (x.transpose() * &x).lu().solve(&(x.transpose() * y)).unwrap();
    mt.transpose()
}

#[test]
fn procrustes_with_noise_stays_within_five_sigma() {
    let mut rng = rng(41);
    let sigma = 0.01;
    let dim = 8;
    let mut procrustes_err = 0.0;
    let mut lsq_err = 0.0;
    let trials = 20;
    for _ in 0..trials {
        let q = random_orthogonal(&mut rng, dim);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..100)
            .map(|_| {
                let x = gaussian_vec(&mut rng, dim, 1.0);
                let y: Vec<f64> = matvec(&q, &x)
                    .iter()
                    .map(|v| v + sigma * gaussian_vec(&mut rng, 1, 1.0)[0])
                    .collect();
                (x, y)
            })
            .collect();
        let m = procrustes(&pairs).unwrap().to_matrix();
        let l = least_squares(&pairs);
        let probe: Vec<Vec<f64>> = (0..50).map(|_| gaussian_vec(&mut rng, dim, 1.0)).collect();
        for v in &probe {
            let truth = matvec(&q, v);
            // per-component RMS error of the mapped vector
            procrustes_err += naive_distance(&matvec(&m, v), &truth) / (dim as f64).sqrt();
            lsq_err += naive_distance(&matvec(&l, v), &truth) / (dim as f64).sqrt();
        }
    }
    let n = (trials * 50) as f64;
    let (procrustes_err, lsq_err) = (procrustes_err / n, lsq_err / n);
    assert!(procrustes_err < 5.0 * sigma, "{procrustes_err}");
    // the constrained fit is at least as accurate as the unconstrained one
    assert!(procrustes_err <= lsq_err * 1.05, "{procrustes_err} vs {lsq_err}");
}

#[test]
fn map_vector_matches_loop() {
    let mut rng = rng(42);
    let m = DMatrix::from_fn(5, 7, |_, _| rng.gen_range(-1.0..1.0));
    let map = AlignmentMap::from_matrix(&m, "a", "b");
    for _ in 0..20 {
        let v = gaussian_vec(&mut rng, 7, 1.0);
        let got = map.map_vector(&v).unwrap();
        let want = matvec(&m, &v);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}

#[test]
fn anisotropic_radius_matches_median_of_ratios() {
    let mut rng = rng(43);
    let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 0.5, 1.0, 2.0]));
    let map = AlignmentMap::from_matrix(&m, "", "");
    let center = gaussian_vec(&mut rng, 4, 1.0);
    let s = Hypersphere::new(SphereType::Loc, center.clone(), 0.8).unwrap();
    let sample: Vec<Vec<f64>> = (0..100)
        .map(|_| {
            center
                .iter()
                .zip(gaussian_vec(&mut rng, 4, 0.3))
                .map(|(c, e)| c + e)
                .collect()
        })
        .collect();
    let moved = transform_hypersphere(&map, &s, &sample).unwrap();
    let mapped_center = matvec(&m, &center);
    let mut ratios: Vec<f64> = sample
        .iter()
        .map(|v| naive_distance(&matvec(&m, v), &mapped_center) / naive_distance(v, &center))
        .collect();
    ratios.sort_by(f64::total_cmp);
    let median = (ratios[49] + ratios[50]) / 2.0;
    assert!((moved.radius - 0.8 * median).abs() < 1e-12);
}

#[test]
fn orthogonal_transfer_preserves_membership() {
    let mut rng = rng(44);
    let q = random_orthogonal(&mut rng, 6);
    let map = AlignmentMap::from_matrix(&q, "", "");
    let center = gaussian_vec(&mut rng, 6, 1.0);
    let s = Hypersphere::new(SphereType::Per, center.clone(), 1.0).unwrap();
    let sample: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            center
                .iter()
                .zip(gaussian_vec(&mut rng, 6, 0.5))
                .map(|(c, e)| c + e)
                .collect()
        })
        .collect();
    let moved = transform_hypersphere(&map, &s, &sample).unwrap();
    assert!((moved.radius - 1.0).abs() < 1e-9);
    for v in &sample {
        if (naive_distance(v, &center) - 1.0).abs() < 1e-6 {
            continue;
        }
        assert_eq!(s.contains(v).unwrap(), moved.contains(&matvec(&q, v)).unwrap());
    }
}

#[test]
fn random_map_accuracy_near_chance() {
    let mut rng = rng(45);
    let mut hits = 0.0;
    let trials = 3;
    for _ in 0..trials {
        let src: Vec<Vec<f64>> = (0..1000).map(|_| gaussian_vec(&mut rng, 10, 1.0)).collect();
        let tgt: Vec<Vec<f64>> = (0..1000).map(|_| gaussian_vec(&mut rng, 10, 1.0)).collect();
        let (s, t) = (space_from(&src, "s"), space_from(&tgt, "t"));
        let m = AlignmentMap::from_matrix(&DMatrix::from_fn(10, 10, |_, _| rng.gen_range(-1.0..1.0)), "", "");
        let lexicon: Vec<(String, String)> = (0..1000).map(|i| (format!("s{i}"), format!("t{i}"))).collect();
        hits += translation_accuracy(&m, &lexicon, &s, &t, 1).unwrap().accuracy;
    }
    // chance is 1/1000; allow generous Monte Carlo slack
    assert!(hits / trials as f64 <= 0.006, "{}", hits / trials as f64);
}

#[test]
fn accuracy_full_k_is_one() {
    let mut rng = rng(46);
    let rows: Vec<Vec<f64>> = (0..30).map(|_| gaussian_vec(&mut rng, 4, 1.0)).collect();
    let s = space_from(&rows, "w");
    let lexicon: Vec<(String, String)> = (0..30).map(|i| (format!("w{i}"), format!("w{i}"))).collect();
    let id = AlignmentMap::identity(4, 4);
    assert_eq!(translation_accuracy(&id, &lexicon, &s, &s, 1).unwrap().accuracy, 1.0);
    let m = AlignmentMap::from_matrix(&DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0)), "", "");
    assert_eq!(translation_accuracy(&m, &lexicon, &s, &s, 30).unwrap().accuracy, 1.0);
}

fn small_config(steps: usize) -> AdversarialConfig {
    AdversarialConfig {
        steps,
        critic_hidden_size: 64,
        batch_size: 32,
        ..AdversarialConfig::default()
    }
}

#[test]
fn self_alignment_keeps_identity_quality() {
    let mut rng = rng(47);
    let rows: Vec<Vec<f64>> = (0..300).map(|_| gaussian_vec(&mut rng, 16, 1.0)).collect();
    let s = space_from(&rows, "w");
    let map = train_adversarial(&s, &s, &small_config(300)).unwrap();
    let lexicon: Vec<(String, String)> = (0..300).map(|i| (format!("w{i}"), format!("w{i}"))).collect();
    assert!(translation_accuracy(&map, &lexicon, &s, &s, 1).unwrap().accuracy >= 0.8);
}

#[test]
fn adversarial_training_is_bit_reproducible() {
    let mut rng = rng(48);
    let src: Vec<Vec<f64>> = (0..100).map(|_| gaussian_vec(&mut rng, 8, 1.0)).collect();
    let tgt: Vec<Vec<f64>> = (0..80).map(|_| gaussian_vec(&mut rng, 6, 1.0)).collect();
    let (s, t) = (space_from(&src, "s"), space_from(&tgt, "t"));
    let cfg = AdversarialConfig {
        seed: 9,
        normalize_inputs: true,
        orthogonality: 0.1,
        ..small_config(50)
    };
    let a = train_adversarial(&s, &t, &cfg).unwrap();
    let b = train_adversarial(&s, &t, &cfg).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!((a.rows, a.cols), (6, 8));
    let other = train_adversarial(&s, &t, &AdversarialConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.matrix, other.matrix);
}

#[test]
fn zero_steps_return_padded_identity() {
    let mut rng = rng(49);
    let src: Vec<Vec<f64>> = (0..10).map(|_| gaussian_vec(&mut rng, 3, 1.0)).collect();
    let tgt: Vec<Vec<f64>> = (0..10).map(|_| gaussian_vec(&mut rng, 5, 1.0)).collect();
    let map = train_adversarial(&space_from(&src, "s"), &space_from(&tgt, "t"), &small_config(0)).unwrap();
    assert_eq!(map.to_matrix(), DMatrix::identity(5, 3));
}

#[test]
fn divergence_is_reported() {
    let mut rng = rng(50);
    let src: Vec<Vec<f64>> = (0..10).map(|_| gaussian_vec(&mut rng, 3, 1e300)).collect();
    let s = space_from(&src, "s");
    let err = train_adversarial(&s, &s, &small_config(5)).unwrap_err();
    assert!(matches!(err, nesphere::Error::Training { .. }), "{err}");
}
