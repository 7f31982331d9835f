//! Linear-chain CRF tagger.
//!
//! A tag sequence `y` for sentence `x` scores
//! `s(x, y) = sum_i T[y_i, y_{i+1}] + sum_i L[i, y_i]`, where the transition sum
//! runs from a virtual start tag to a virtual stop tag and `L[i, j]` is the dot
//! product of tag `j`'s emission weights with token `i`'s feature vector.
//! `p(y | x) = exp(s(x, y)) / sum_y' exp(s(x, y'))`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{entity_prf, TaggedCorpus};
use crate::embeddings::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::features::HsFeatureVector;
use crate::hypersphere::PrfReport;

/// Number of binary lexical indicators.
pub const LEXICAL_FEATURES: usize = 4;

/// Which feature blocks make up a token's feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// Dimension of the embedding block; 0 disables it.
    pub embedding_dim: usize,
    pub hypersphere: bool,
    pub lexical: bool,
}

impl FeatureSpec {
    pub fn new(embedding_dim: usize, hypersphere: bool) -> Self {
        FeatureSpec {
            embedding_dim,
            hypersphere,
            lexical: true,
        }
    }

    /// Length of a feature vector, including the constant bias.
    pub fn len(&self) -> usize {
        self.embedding_dim + if self.hypersphere { 3 } else { 0 } + if self.lexical { LEXICAL_FEATURES } else { 0 } + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Initial capital, all caps, contains a digit, punctuation only.
pub fn lexical_indicators(token: &str) -> [f64; LEXICAL_FEATURES] {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let initial_cap = token.chars().next().is_some_and(char::is_uppercase);
    let mut letters = token.chars().filter(|c| c.is_alphabetic()).peekable();
    let all_caps = letters.peek().is_some() && letters.all(char::is_uppercase);
    let digit = token.chars().any(|c| c.is_ascii_digit());
    let punct = !token.is_empty()
        && token
            .chars()
            .all(|c| c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace()));
    [flag(initial_cap), flag(all_caps), flag(digit), flag(punct)]
}

/// Per-token feature vectors: embedding ⊕ hypersphere z-scores ⊕ lexical indicators ⊕ bias.
///
/// Blocks disabled in `spec` are omitted; `hs` is ignored when the hypersphere block is off.
pub fn build_features<S: AsRef<str>>(
    sentence: &[S],
    space: Option<&EmbeddingSpace>,
    hs: Option<&[HsFeatureVector]>,
    spec: &FeatureSpec,
) -> Result<Vec<Vec<f64>>> {
    if spec.hypersphere {
        match hs {
            None => {
                return Err(Error::usage(
                    "hypersphere block enabled but no hypersphere features given",
                ))
            }
            Some(rows) if rows.len() != sentence.len() => {
                return Err(Error::usage(format!(
                    "{} hypersphere rows for a sentence of {} tokens",
                    rows.len(),
                    sentence.len()
                )))
            }
            _ => {}
        }
    }
    if spec.embedding_dim > 0 {
        match space {
            Some(s) if s.dim() == spec.embedding_dim => {}
            Some(s) => {
                return Err(Error::usage(format!(
                    "space dimension {} does not match feature spec {}",
                    s.dim(),
                    spec.embedding_dim
                )))
            }
            None => return Err(Error::usage("embedding block enabled but no embedding space given")),
        }
    }
    Ok(sentence
        .iter()
        .enumerate()
        .map(|(i, token)| {
            let token = token.as_ref();
            let mut f = Vec::with_capacity(spec.len());
            if spec.embedding_dim > 0 {
                match space.and_then(|s| s.lookup(token)) {
                    Some(v) => f.extend_from_slice(v),
                    None => f.resize(spec.embedding_dim, 0.0),
                }
            }
            if spec.hypersphere {
                f.extend_from_slice(&hs.expect("checked above")[i].z);
            }
            if spec.lexical {
                f.extend_from_slice(&lexical_indicators(token));
            }
            f.push(1.0);
            f
        })
        .collect())
}

/// One training or evaluation sentence: feature vectors plus gold tag indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub features: Vec<Vec<f64>>,
    pub tags: Vec<usize>,
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// CRF parameters. Transitions are `(n+1) x (n+1)`: row `n` is the virtual
/// start tag and column `n` the virtual stop tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfModel {
    pub tags: Vec<String>,
    pub feature_spec: FeatureSpec,
    pub transitions: Vec<Vec<f64>>,
    /// One weight row per tag, each `feature_spec.len()` long.
    pub emissions: Vec<Vec<f64>>,
}

impl CrfModel {
    /// A zero-initialized model.
    pub fn new(tags: Vec<String>, feature_spec: FeatureSpec) -> Result<Self> {
        if tags.is_empty() {
            return Err(Error::usage("a CRF needs at least one tag"));
        }
        let n = tags.len();
        Ok(CrfModel {
            feature_spec,
            transitions: vec![vec![0.0; n + 1]; n + 1],
            emissions: vec![vec![0.0; feature_spec.len()]; n],
            tags,
        })
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    fn boundary(&self) -> usize {
        self.tags.len()
    }

    pub fn tag_index(&self, tag: &str) -> Result<usize> {
        self.tags
            .iter()
            .position(|t| t == tag)
            .ok_or_else(|| Error::usage(format!("unknown tag {tag:?}")))
    }

    pub fn tag_indices<S: AsRef<str>>(&self, tags: &[S]) -> Result<Vec<usize>> {
        tags.iter().map(|t| self.tag_index(t.as_ref())).collect()
    }

    fn check_features(&self, features: &[Vec<f64>]) -> Result<()> {
        if features.is_empty() {
            return Err(Error::usage("empty sentence"));
        }
        let want = self.feature_spec.len();
        if let Some(f) = features.iter().find(|f| f.len() != want) {
            return Err(Error::usage(format!(
                "feature vector of length {}, model expects {want}",
                f.len()
            )));
        }
        Ok(())
    }

    /// `L[i][j]`: score of tag `j` at token `i`.
    pub fn emission_scores(&self, features: &[Vec<f64>]) -> Vec<Vec<f64>> {
        features
            .iter()
            .map(|x| {
                self.emissions
                    .iter()
                    .map(|w| w.iter().zip(x).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect()
    }

    fn sequence_score(&self, emit: &[Vec<f64>], y: &[usize]) -> f64 {
        let b = self.boundary();
        let mut score = self.transitions[b][y[0]];
        for i in 0..y.len() {
            score += emit[i][y[i]];
            let next = if i + 1 < y.len() { y[i + 1] } else { b };
            score += self.transitions[y[i]][next];
        }
        score
    }

    fn check_tags(&self, features: &[Vec<f64>], y: &[usize]) -> Result<()> {
        self.check_features(features)?;
        if y.len() != features.len() {
            return Err(Error::usage(format!("{} tags for {} tokens", y.len(), features.len())));
        }
        if let Some(bad) = y.iter().find(|&&t| t >= self.num_tags()) {
            return Err(Error::usage(format!("unknown tag index {bad}")));
        }
        Ok(())
    }

    /// `s(x, y)`.
    pub fn score_sequence(&self, features: &[Vec<f64>], y: &[usize]) -> Result<f64> {
        self.check_tags(features, y)?;
        Ok(self.sequence_score(&self.emission_scores(features), y))
    }

    /// Log-space forward table `alpha[i][j]`.
    fn forward(&self, emit: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (n, b) = (self.num_tags(), self.boundary());
        let mut alpha = Vec::with_capacity(emit.len());
        alpha.push((0..n).map(|j| self.transitions[b][j] + emit[0][j]).collect::<Vec<_>>());
        let mut scratch = vec![0.0; n];
        for row in &emit[1..] {
            let prev = alpha.last().expect("non-empty");
            let next = (0..n)
                .map(|j| {
                    for k in 0..n {
                        scratch[k] = prev[k] + self.transitions[k][j];
                    }
                    row[j] + log_sum_exp(&scratch)
                })
                .collect();
            alpha.push(next);
        }
        alpha
    }

    fn backward(&self, emit: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (n, b) = (self.num_tags(), self.boundary());
        let len = emit.len();
        let mut beta = vec![vec![0.0; n]; len];
        for j in 0..n {
            beta[len - 1][j] = self.transitions[j][b];
        }
        let mut scratch = vec![0.0; n];
        for i in (0..len - 1).rev() {
            for j in 0..n {
                for k in 0..n {
                    scratch[k] = self.transitions[j][k] + emit[i + 1][k] + beta[i + 1][k];
                }
                beta[i][j] = log_sum_exp(&scratch);
            }
        }
        beta
    }

    fn log_partition_from(&self, alpha: &[Vec<f64>]) -> f64 {
        let b = self.boundary();
        let last = alpha.last().expect("non-empty");
        let ends: Vec<f64> = last
            .iter()
            .enumerate()
            .map(|(j, a)| a + self.transitions[j][b])
            .collect();
        log_sum_exp(&ends)
    }

    /// `log sum_y exp(s(x, y))` by the forward recursion.
    pub fn log_partition(&self, features: &[Vec<f64>]) -> Result<f64> {
        self.check_features(features)?;
        let emit = self.emission_scores(features);
        Ok(self.log_partition_from(&self.forward(&emit)))
    }

    /// `log p(y | x)`.
    pub fn sequence_log_probability(&self, features: &[Vec<f64>], y: &[usize]) -> Result<f64> {
        self.check_tags(features, y)?;
        let emit = self.emission_scores(features);
        Ok(self.sequence_score(&emit, y) - self.log_partition_from(&self.forward(&emit)))
    }

    /// Highest-scoring tag sequence. Ties go to the lowest tag index.
    pub fn viterbi(&self, features: &[Vec<f64>]) -> Result<Vec<usize>> {
        self.check_features(features)?;
        let emit = self.emission_scores(features);
        let (n, b) = (self.num_tags(), self.boundary());
        let mut best: Vec<f64> = (0..n).map(|j| self.transitions[b][j] + emit[0][j]).collect();
        let mut back: Vec<Vec<usize>> = Vec::with_capacity(emit.len());
        for row in &emit[1..] {
            let mut next = vec![0.0; n];
            let mut ptr = vec![0; n];
            for j in 0..n {
                let (mut arg, mut top) = (0, f64::NEG_INFINITY);
                for k in 0..n {
                    let s = best[k] + self.transitions[k][j];
                    if s > top {
                        arg = k;
                        top = s;
                    }
                }
                next[j] = top + row[j];
                ptr[j] = arg;
            }
            best = next;
            back.push(ptr);
        }
        let (mut last, mut top) = (0, f64::NEG_INFINITY);
        for j in 0..n {
            let s = best[j] + self.transitions[j][b];
            if s > top {
                last = j;
                top = s;
            }
        }
        let mut path = vec![last];
        for ptr in back.iter().rev() {
            last = ptr[last];
            path.push(last);
        }
        path.reverse();
        Ok(path)
    }

    /// Decoded tag strings.
    pub fn predict(&self, features: &[Vec<f64>]) -> Result<Vec<String>> {
        Ok(self
            .viterbi(features)?
            .into_iter()
            .map(|j| self.tags[j].clone())
            .collect())
    }

    /// Number of parameters in [`CrfModel::parameters`] order: transitions then emissions, row-major.
    pub fn parameter_count(&self) -> usize {
        let n = self.num_tags();
        (n + 1) * (n + 1) + n * self.feature_spec.len()
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.transitions
            .iter()
            .chain(&self.emissions)
            .flat_map(|row| row.iter().copied())
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::usage(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for row in self.transitions.iter_mut().chain(self.emissions.iter_mut()) {
            for v in row.iter_mut() {
                *v = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// `log p(y | x)` and its gradient (in [`CrfModel::parameters`] order), from forward-backward marginals.
    pub fn log_likelihood_gradient(&self, features: &[Vec<f64>], y: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check_tags(features, y)?;
        let (n, b) = (self.num_tags(), self.boundary());
        let width = self.feature_spec.len();
        let emit = self.emission_scores(features);
        let alpha = self.forward(&emit);
        let beta = self.backward(&emit);
        let log_z = self.log_partition_from(&alpha);
        let ll = self.sequence_score(&emit, y) - log_z;

        let mut grad = vec![0.0; self.parameter_count()];
        let t = |from: usize, to: usize| from * (n + 1) + to;
        let e0 = (n + 1) * (n + 1);
        let len = features.len();

        // observed counts
        grad[t(b, y[0])] += 1.0;
        for i in 0..len {
            let next = if i + 1 < len { y[i + 1] } else { b };
            grad[t(y[i], next)] += 1.0;
            let row = e0 + y[i] * width;
            for (g, x) in grad[row..row + width].iter_mut().zip(&features[i]) {
                *g += x;
            }
        }
        // expected counts
        for i in 0..len {
            for j in 0..n {
                let p = (alpha[i][j] + beta[i][j] - log_z).exp();
                if i == 0 {
                    grad[t(b, j)] -= p;
                }
                if i + 1 == len {
                    grad[t(j, b)] -= p;
                }
                let row = e0 + j * width;
                for (g, x) in grad[row..row + width].iter_mut().zip(&features[i]) {
                    *g -= p * x;
                }
            }
            if i + 1 < len {
                for j in 0..n {
                    for k in 0..n {
                        let p = (alpha[i][j] + self.transitions[j][k] + emit[i + 1][k] + beta[i + 1][k] - log_z).exp();
                        grad[t(j, k)] -= p;
                    }
                }
            }
        }
        // start -> stop is never used by a non-empty sentence
        Ok((ll, grad))
    }

    /// Training objective `sum log p(y | x) - l2 * ||theta||^2` and its gradient.
    pub fn objective_gradient(&self, data: &[Instance], l2_strength: f64) -> Result<(f64, Vec<f64>)> {
        let params = self.parameters();
        let mut value = -l2_strength * params.iter().map(|p| p * p).sum::<f64>();
        let mut grad: Vec<f64> = params.iter().map(|p| -2.0 * l2_strength * p).collect();
        for inst in data {
            let (ll, g) = self.log_likelihood_gradient(&inst.features, &inst.tags)?;
            value += ll;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((value, grad))
    }

    pub fn objective(&self, data: &[Instance], l2_strength: f64) -> Result<f64> {
        let params = self.parameters();
        let mut value = -l2_strength * params.iter().map(|p| p * p).sum::<f64>();
        for inst in data {
            value += self.sequence_log_probability(&inst.features, &inst.tags)?;
        }
        Ok(value)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: CrfModel = serde_json::from_str(text)?;
        let n = model.tags.len();
        let width = model.feature_spec.len();
        let shape_ok = n > 0
            && model.transitions.len() == n + 1
            && model.transitions.iter().all(|r| r.len() == n + 1)
            && model.emissions.len() == n
            && model.emissions.iter().all(|r| r.len() == width);
        if !shape_ok {
            return Err(Error::format(
                0,
                "CRF parameter shapes do not match its tags and feature spec",
            ));
        }
        if model.parameters().iter().any(|p| !p.is_finite()) {
            return Err(Error::format(0, "CRF parameters must be finite"));
        }
        Ok(model)
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

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_strength: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Sentences per gradient step.
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 0.05,
            l2_strength: 1e-4,
            seed: 0,
            shuffle: true,
            batch_size: 1,
        }
    }
}

/// Mean `log p(y | x)` over `data` after each epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_mean_log_likelihood: Vec<f64>,
}

/// Stochastic gradient ascent on `sum log p(y | x) - l2 * ||theta||^2`.
///
/// Gradients of one batch are computed independently and summed in batch
/// order, so results do not depend on the worker count.
pub fn train(mut model: CrfModel, data: &[Instance], config: &TrainConfig) -> Result<(CrfModel, TrainReport)> {
    if data.is_empty() {
        return Err(Error::usage("cannot train on an empty corpus"));
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) || !(config.l2_strength >= 0.0) {
        return Err(Error::usage(
            "batch size and learning rate must be positive, l2 non-negative",
        ));
    }
    for inst in data {
        model.check_tags(&inst.features, &inst.tags)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut params = model.parameters();
    let decay = 2.0 * config.l2_strength / data.len() as f64;
    let mut report = TrainReport::default();

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(config.batch_size) {
            let grads: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_iter()
                .map(|&s| model.log_likelihood_gradient(&data[s].features, &data[s].tags))
                .collect();
            let scale = config.learning_rate / batch.len() as f64;
            let shrink = config.learning_rate * decay * batch.len() as f64;
            let mut step = vec![0.0; params.len()];
            for (g, &s) in grads.into_iter().zip(batch) {
                let (ll, g) = g?;
                if !ll.is_finite() {
                    return Err(Error::Training {
                        location: format!("epoch {epoch}, sentence {s}"),
                        message: format!("log-likelihood is {ll}"),
                    });
                }
                step.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            for (p, s) in params.iter_mut().zip(&step) {
                *p += scale * s - shrink * *p;
            }
            if let Some(bad) = params.iter().position(|p| !p.is_finite()) {
                return Err(Error::Training {
                    location: format!("epoch {epoch}, batch ending at sentence {}", batch[batch.len() - 1]),
                    message: format!("parameter {bad} became non-finite"),
                });
            }
            model.set_parameters(&params)?;
        }
        let total: f64 = data
            .par_iter()
            .map(|inst| model.sequence_log_probability(&inst.features, &inst.tags))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .sum();
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Training {
                location: format!("epoch {epoch}"),
                message: format!("mean log-likelihood is {mean}"),
            });
        }
        report.epoch_mean_log_likelihood.push(mean);
    }
    Ok((model, report))
}

/// Builds CRF instances for a corpus. `hs` holds per-sentence hypersphere rows when that block is enabled.
pub fn prepare_instances(
    model: &CrfModel,
    corpus: &TaggedCorpus,
    space: Option<&EmbeddingSpace>,
    hs: Option<&[Vec<HsFeatureVector>]>,
) -> Result<Vec<Instance>> {
    if let Some(rows) = hs {
        if rows.len() != corpus.len() {
            return Err(Error::usage(format!(
                "hypersphere features cover {} sentences, corpus has {}",
                rows.len(),
                corpus.len()
            )));
        }
    }
    corpus
        .sentences()
        .iter()
        .zip(corpus.tags())
        .enumerate()
        .map(|(i, (tokens, tags))| {
            let features = build_features(tokens, space, hs.map(|h| h[i].as_slice()), &model.feature_spec)?;
            Ok(Instance {
                features,
                tags: model.tag_indices(tags)?,
            })
        })
        .collect()
}

/// Decodes every sentence and scores entity spans against the gold tags.
pub fn evaluate_ner(model: &CrfModel, corpus: &TaggedCorpus, instances: &[Instance]) -> Result<PrfReport> {
    if instances.len() != corpus.len() {
        return Err(Error::usage("instances do not match the corpus"));
    }
    let predicted = instances
        .par_iter()
        .map(|inst| model.predict(&inst.features))
        .collect::<Result<Vec<_>>>()?;
    Ok(entity_prf(corpus.tags(), &predicted))
}
