//! Linear maps between embedding spaces.
//!
//! The unsupervised route trains the map as the generator of a Wasserstein
//! GAN: a one-hidden-layer critic with clipped weights estimates the earth
//! mover's distance between mapped source vectors and target vectors, and the
//! generator steps against it. Orthogonal Procrustes on known pairs is the
//! supervised, closed-form route.

use std::fs;
use std::path::Path;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::hypersphere::{distance, Hypersphere};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub iterations: usize,
    pub final_critic_loss: f64,
}

/// A `target_dim x source_dim` matrix taking source vectors into the target space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMap {
    pub source_tag: String,
    pub target_tag: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub matrix: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingMeta>,
}

impl AlignmentMap {
    pub fn from_matrix(matrix: &DMatrix<f64>, source_tag: impl Into<String>, target_tag: impl Into<String>) -> Self {
        AlignmentMap {
            source_tag: source_tag.into(),
            target_tag: target_tag.into(),
            rows: matrix.nrows(),
            cols: matrix.ncols(),
            matrix: matrix.transpose().as_slice().to_vec(),
            training: None,
        }
    }

    /// Identity when the dimensions agree, otherwise the identity padded with zeros.
    pub fn identity(source_dim: usize, target_dim: usize) -> Self {
        Self::from_matrix(&DMatrix::identity(target_dim, source_dim), "", "")
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.matrix)
    }

    pub fn source_dim(&self) -> usize {
        self.cols
    }

    pub fn target_dim(&self) -> usize {
        self.rows
    }

    fn validate(self) -> Result<Self> {
        if self.rows == 0 || self.cols == 0 || self.matrix.len() != self.rows * self.cols {
            return Err(Error::format(
                0,
                format!(
                    "matrix has {} entries, declared shape {}x{}",
                    self.matrix.len(),
                    self.rows,
                    self.cols
                ),
            ));
        }
        if self.matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(0, "matrix entries must be finite"));
        }
        Ok(self)
    }

    /// Matrix-vector product.
    pub fn map_vector(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::usage(format!(
                "vector has dimension {}, map expects {}",
                v.len(),
                self.cols
            )));
        }
        Ok(self
            .matrix
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<AlignmentMap>(text)?.validate()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Orthogonal map minimizing `sum ||M x - y||^2` over the pairs, via the SVD of `sum y x^T`.
pub fn procrustes<S: AsRef<[f64]>, T: AsRef<[f64]>>(pairs: &[(S, T)]) -> Result<AlignmentMap> {
    let Some((first, _)) = pairs.first() else {
        return Err(Error::usage("procrustes needs at least one pair"));
    };
    let dim = first.as_ref().len();
    if pairs.len() < dim {
        return Err(Error::usage(format!(
            "procrustes needs at least {dim} pairs, got {}",
            pairs.len()
        )));
    }
    let mut cross = DMatrix::<f64>::zeros(dim, dim);
    for (x, y) in pairs {
        let (x, y) = (x.as_ref(), y.as_ref());
        if x.len() != dim || y.len() != dim {
            return Err(Error::usage("procrustes pairs must all share one dimension"));
        }
        for i in 0..dim {
            for j in 0..dim {
                cross[(i, j)] += y[i] * x[j];
            }
        }
    }
    let svd = cross.svd(true, true);
    let top = svd.singular_values.max();
    let bottom = svd.singular_values.min();
    if !(top > 0.0) || bottom <= top * 1e-12 * dim as f64 {
        return Err(Error::degenerate("cross-covariance of the pairs is rank deficient"));
    }
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    Ok(AlignmentMap::from_matrix(&(u * v_t), "", ""))
}

/// Carries a sphere through a map: the center is mapped, and the radius is
/// scaled by the median ratio `||M v - M c|| / ||v - c||` over `sample`.
pub fn transform_hypersphere<V: AsRef<[f64]>>(m: &AlignmentMap, s: &Hypersphere, sample: &[V]) -> Result<Hypersphere> {
    if sample.is_empty() {
        return Err(Error::usage("radius projection needs a non-empty sample"));
    }
    let center = m.map_vector(&s.center)?;
    let mut ratios = Vec::with_capacity(sample.len());
    for v in sample {
        let v = v.as_ref();
        let before = crate::hypersphere::euclidean_distance(v, &s.center)?;
        if before < 1e-12 {
            continue;
        }
        let after = distance(&m.map_vector(v)?, &center);
        ratios.push(after / before);
    }
    if ratios.is_empty() {
        return Err(Error::degenerate("every sample vector sits on the sphere center"));
    }
    ratios.sort_by(f64::total_cmp);
    let k = ratios.len();
    let median = if k % 2 == 1 {
        ratios[k / 2]
    } else {
        0.5 * (ratios[k / 2 - 1] + ratios[k / 2])
    };
    Hypersphere::new(s.ne_type, center, s.radius * median)
}

/// Outcome of [`translation_accuracy`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TranslationAccuracy {
    pub accuracy: f64,
    pub evaluated: usize,
    /// Lexicon entries with a token missing from either space.
    pub skipped: usize,
}

/// Fraction of lexicon pairs whose mapped source vector has the gold target among its `k` nearest target words.
///
/// A target counts as within the top `k` when fewer than `k` target words are strictly closer.
pub fn translation_accuracy<S: AsRef<str>, T: AsRef<str>>(
    m: &AlignmentMap,
    lexicon: &[(S, T)],
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    k: usize,
) -> Result<TranslationAccuracy> {
    if k == 0 {
        return Err(Error::usage("k must be positive"));
    }
    if m.source_dim() != source.dim() || m.target_dim() != target.dim() {
        return Err(Error::usage(format!(
            "map is {}x{}, spaces are {}-D -> {}-D",
            m.rows,
            m.cols,
            source.dim(),
            target.dim()
        )));
    }
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (s, t) in lexicon {
        match (source.lookup(s.as_ref()), target.index_of(t.as_ref())) {
            (Some(v), Some(gold)) => pairs.push((v, gold)),
            _ => skipped += 1,
        }
    }
    if pairs.is_empty() {
        return Err(Error::usage("no lexicon entry resolves in both spaces"));
    }
    use rayon::prelude::*;
    let hits: usize = pairs
        .par_iter()
        .map(|&(v, gold)| {
            let mapped = m.map_vector(v).expect("dimension checked");
            let gold_distance = distance(&mapped, target.vector(gold));
            let closer = (0..target.len())
                .filter(|&j| distance(&mapped, target.vector(j)) < gold_distance)
                .take(k)
                .count();
            usize::from(closer < k)
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(TranslationAccuracy {
        accuracy: hits as f64 / pairs.len() as f64,
        evaluated: pairs.len(),
        skipped,
    })
}

/// Reads a `source<TAB>target` lexicon.
pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_lexicon(&text)
}

pub fn parse_lexicon(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, line)| {
            let line = line.trim_end_matches('\r');
            match line.split_once('\t') {
                Some((s, t)) if !s.is_empty() && !t.is_empty() && !t.contains('\t') => {
                    Ok((s.to_string(), t.to_string()))
                }
                _ => Err(Error::format(i + 1, "expected `source<TAB>target`")),
            }
        })
        .collect()
}

/// Settings for [`train_adversarial`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversarialConfig {
    pub critic_hidden_size: usize,
    /// Critic parameters are clipped to `[-clip_value, clip_value]` after every update.
    pub clip_value: f64,
    /// Generator updates.
    pub steps: usize,
    pub critic_steps_per_generator_step: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Scale every input vector to unit length before training.
    pub normalize_inputs: bool,
    /// Weight of the `||M^T M - I||^2` penalty on the generator.
    pub orthogonality: f64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig {
            critic_hidden_size: 500,
            clip_value: 0.01,
            steps: 20_000,
            critic_steps_per_generator_step: 5,
            learning_rate: 1e-4,
            batch_size: 128,
            seed: 0,
            normalize_inputs: false,
            orthogonality: 0.0,
        }
    }
}

impl AdversarialConfig {
    fn validate(&self) -> Result<()> {
        let positive = self.critic_hidden_size > 0
            && self.clip_value > 0.0
            && self.critic_steps_per_generator_step > 0
            && self.learning_rate > 0.0
            && self.batch_size > 0
            && self.orthogonality >= 0.0;
        if !positive {
            return Err(Error::usage(
                "adversarial settings must be positive (orthogonality non-negative)",
            ));
        }
        Ok(())
    }
}

/// RMSProp: every parameter steps by its gradient divided by a running RMS of its past gradients.
#[derive(Debug, Clone)]
struct RmsProp {
    mean_square: Vec<Real>,
}

impl RmsProp {
    const DECAY: Real = 0.99;
    const EPS: Real = 1e-8;

    fn new(len: usize) -> Self {
        RmsProp {
            mean_square: vec![0.0; len],
        }
    }

    /// Descends along `grad`.
    fn step(&mut self, params: &mut [Real], grad: &[Real], lr: Real) {
        for ((p, g), s) in params.iter_mut().zip(grad).zip(self.mean_square.iter_mut()) {
            *s = Self::DECAY * *s + (1.0 - Self::DECAY) * g * g;
            *p -= lr * g / (s.sqrt() + Self::EPS);
        }
    }
}

/// Scalar type of the adversarial trainer.
type Real = f32;

const LEAK: Real = 0.2;

/// Sum of leaky-ReLU activations, accumulated in eight fixed lanes.
fn leaky_sum(values: &[Real]) -> Real {
    let mut lanes = [0.0; 8];
    let chunks = values.chunks_exact(8);
    let tail: Real = chunks.remainder().iter().map(|&p| p.max(0.0) + LEAK * p.min(0.0)).sum();
    for chunk in chunks {
        for (l, &p) in lanes.iter_mut().zip(chunk) {
            *l += p.max(0.0) + LEAK * p.min(0.0);
        }
    }
    lanes.iter().sum::<Real>() + tail
}

/// `f(z) = w2 . leaky_relu(W1^T z + b1)`.
struct Critic {
    // d x hidden, so a batch's pre-activations are `Z * w1`
    w1: DMatrix<Real>,
    b1: DVector<Real>,
    w2: DVector<Real>,
    opt_w1: RmsProp,
    opt_b1: RmsProp,
    opt_w2: RmsProp,
}

/// Buffers for one batch pass through the critic.
struct Pass {
    pre: DMatrix<Real>,
    delta: DMatrix<Real>,
}

impl Pass {
    fn new(batch: usize, hidden: usize) -> Self {
        Pass {
            pre: DMatrix::zeros(batch, hidden),
            delta: DMatrix::zeros(batch, hidden),
        }
    }
}

impl Critic {
    fn new(dim: usize, hidden: usize, clip: Real, rng: &mut ChaCha8Rng) -> Self {
        let w1 = DMatrix::from_fn(dim, hidden, |_, _| rng.gen_range(-clip..=clip));
        let w2 = DVector::from_fn(hidden, |_, _| rng.gen_range(-clip..=clip));
        Critic {
            opt_w1: RmsProp::new(dim * hidden),
            opt_b1: RmsProp::new(hidden),
            opt_w2: RmsProp::new(hidden),
            w1,
            b1: DVector::zeros(hidden),
            w2,
        }
    }

    /// Fills `pass.pre` and returns the mean critic value over the batch.
    fn forward(&self, z: &DMatrix<Real>, pass: &mut Pass) -> Real {
        pass.pre.gemm(1.0, z, &self.w1, 0.0);
        let rows = z.nrows();
        let mut total = 0.0;
        for (h, col) in pass.pre.as_mut_slice().chunks_exact_mut(rows).enumerate() {
            let b = self.b1[h];
            col.iter_mut().for_each(|p| *p += b);
            total += self.w2[h] * leaky_sum(col);
        }
        total / rows as Real
    }

    /// Accumulates `sign * d(mean f)/d(params)` for the batch held in `pass`,
    /// and leaves `d(mean f)/d(pre)` (times `sign`) in `pass.delta`.
    fn backward(&self, z: &DMatrix<Real>, pass: &mut Pass, sign: Real, grads: &mut CriticGrads) {
        let rows = z.nrows();
        let scale = sign / rows as Real;
        let pre = pass.pre.as_slice().chunks_exact(rows);
        let delta = pass.delta.as_mut_slice().chunks_exact_mut(rows);
        for (h, (col, d)) in pre.zip(delta).enumerate() {
            let ws = scale * self.w2[h];
            let mut slopes = 0.0;
            for (p, d) in col.iter().zip(d.iter_mut()) {
                let slope = if *p > 0.0 { 1.0 } else { LEAK };
                *d = ws * slope;
                slopes += slope;
            }
            grads.b1[h] += ws * slopes;
            grads.w2[h] += scale * leaky_sum(col);
        }
        grads.w1.gemm(1.0, &z.transpose(), &pass.delta, 1.0);
    }

    fn update(&mut self, grads: &CriticGrads, lr: Real, clip: Real) {
        self.opt_w1.step(self.w1.as_mut_slice(), grads.w1.as_slice(), lr);
        self.opt_b1.step(self.b1.as_mut_slice(), grads.b1.as_slice(), lr);
        self.opt_w2.step(self.w2.as_mut_slice(), grads.w2.as_slice(), lr);
        for p in self.w1.iter_mut().chain(self.b1.iter_mut()).chain(self.w2.iter_mut()) {
            *p = p.clamp(-clip, clip);
        }
    }
}

struct CriticGrads {
    w1: DMatrix<Real>,
    b1: DVector<Real>,
    w2: DVector<Real>,
}

impl CriticGrads {
    fn new(dim: usize, hidden: usize) -> Self {
        CriticGrads {
            w1: DMatrix::zeros(dim, hidden),
            b1: DVector::zeros(hidden),
            w2: DVector::zeros(hidden),
        }
    }

    fn clear(&mut self) {
        self.w1.fill(0.0);
        self.b1.fill(0.0);
        self.w2.fill(0.0);
    }
}

fn normalized_rows(space: &EmbeddingSpace, normalize: bool) -> DMatrix<Real> {
    let mut m = space.to_matrix().map(|v| v as Real);
    if normalize {
        for mut row in m.row_iter_mut() {
            let norm = row.norm();
            if norm > 0.0 {
                row /= norm;
            }
        }
    }
    m
}

fn sample_rows(rng: &mut ChaCha8Rng, data: &DMatrix<Real>, batch: usize, out: &mut DMatrix<Real>) {
    let n = data.nrows();
    if batch <= n {
        for (r, i) in index::sample(rng, n, batch).into_iter().enumerate() {
            out.set_row(r, &data.row(i));
        }
    } else {
        for r in 0..batch {
            out.set_row(r, &data.row(rng.gen_range(0..n)));
        }
    }
}

/// Progress snapshot handed to the observer of [`train_adversarial_with`].
#[derive(Debug, Clone, Copy)]
pub struct AdversarialProgress<'a> {
    pub step: usize,
    /// Mean critic value on targets minus mean on mapped sources, from the last critic update.
    pub wasserstein_estimate: f64,
    /// Current generator, `target_dim x source_dim`.
    pub generator: &'a DMatrix<f64>,
}

/// Trains a linear map from `source` to `target` by adversarial distribution matching.
pub fn train_adversarial(
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    cfg: &AdversarialConfig,
) -> Result<AlignmentMap> {
    train_adversarial_with(source, target, cfg, |_| {})
}

/// [`train_adversarial`] calling `observe` after every generator step.
pub fn train_adversarial_with<F>(
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    cfg: &AdversarialConfig,
    mut observe: F,
) -> Result<AlignmentMap>
where
    F: FnMut(AdversarialProgress<'_>),
{
    if source.is_empty() || target.is_empty() {
        return Err(Error::usage("adversarial training needs two non-empty spaces"));
    }
    cfg.validate()?;
    let (ds, dt) = (source.dim(), target.dim());
    let (batch, hidden) = (cfg.batch_size, cfg.critic_hidden_size);
    let xs = normalized_rows(source, cfg.normalize_inputs);
    let ys = normalized_rows(target, cfg.normalize_inputs);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut generator = DMatrix::<f64>::identity(dt, ds);
    let mut generator_t = DMatrix::<Real>::identity(ds, dt);
    let lr = cfg.learning_rate as Real;
    let clip = cfg.clip_value as Real;
    let orthogonality = cfg.orthogonality as Real;
    let mut opt_generator = RmsProp::new(ds * dt);
    let mut critic = Critic::new(dt, hidden, clip, &mut rng);
    let mut grads = CriticGrads::new(dt, hidden);

    let mut src_batch = DMatrix::zeros(batch, ds);
    let mut tgt_batch = DMatrix::zeros(batch, dt);
    let mut mapped = DMatrix::zeros(batch, dt);
    let mut pass = Pass::new(batch, hidden);
    let mut grad_mapped = DMatrix::zeros(batch, dt);
    let mut grad_generator_t = DMatrix::zeros(ds, dt);
    let mut critic_loss: Real = 0.0;

    for step in 0..cfg.steps {
        for _ in 0..cfg.critic_steps_per_generator_step {
            sample_rows(&mut rng, &xs, batch, &mut src_batch);
            sample_rows(&mut rng, &ys, batch, &mut tgt_batch);
            mapped.gemm(1.0, &src_batch, &generator_t, 0.0);
            grads.clear();
            // the critic minimizes mean f(mapped) - mean f(target)
            let fake = critic.forward(&mapped, &mut pass);
            critic.backward(&mapped, &mut pass, 1.0, &mut grads);
            let real = critic.forward(&tgt_batch, &mut pass);
            critic.backward(&tgt_batch, &mut pass, -1.0, &mut grads);
            critic_loss = fake - real;
            critic.update(&grads, lr, clip);
        }
        if !critic_loss.is_finite() {
            return Err(Error::Training {
                location: format!("generator step {step}"),
                message: format!("critic loss is {critic_loss}"),
            });
        }

        // the generator minimizes -mean f(M x)
        sample_rows(&mut rng, &xs, batch, &mut src_batch);
        mapped.gemm(1.0, &src_batch, &generator_t, 0.0);
        grads.clear();
        critic.forward(&mapped, &mut pass);
        critic.backward(&mapped, &mut pass, -1.0, &mut grads);
        grad_mapped.gemm(1.0, &pass.delta, &critic.w1.transpose(), 0.0);
        grad_generator_t.gemm(1.0, &src_batch.transpose(), &grad_mapped, 0.0);
        if cfg.orthogonality > 0.0 {
            // d/dM ||M^T M - I||^2 = 4 M (M^T M - I), stored transposed
            let mut gram = &generator_t * generator_t.transpose();
            for i in 0..ds {
                gram[(i, i)] -= 1.0;
            }
            grad_generator_t += (4.0 * orthogonality) * (gram * &generator_t);
        }
        opt_generator.step(generator_t.as_mut_slice(), grad_generator_t.as_slice(), lr);
        if generator_t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training {
                location: format!("generator step {step}"),
                message: "generator became non-finite".into(),
            });
        }
        generator = generator_t.transpose().map(f64::from);
        observe(AdversarialProgress {
            step,
            wasserstein_estimate: -f64::from(critic_loss),
            generator: &generator,
        });
        if step % 1000 == 0 {
            debug!("step {step}: critic loss {critic_loss:.6}");
        }
    }

    let mut map = AlignmentMap::from_matrix(&generator, source.language_tag(), target.language_tag());
    map.training = Some(TrainingMeta {
        iterations: cfg.steps,
        final_critic_loss: f64::from(critic_loss),
    });
    Ok(map)
}
