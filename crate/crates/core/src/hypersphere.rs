//! The named-entity hypersphere: a center `C` and radius `R` such that a word
//! vector `W` is predicted to be an entity iff `ED(W, C) < R`.
//!
//! Fitting is two-staged. The center is a location estimate of the
//! dictionary vectors (mean by default), then the radius is the exact F1
//! maximizer over every distinct threshold of the universe's distances.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{NeType, ResolvedEntities};
use crate::embeddings::{EmbeddingSpace, RunningMean};
use crate::error::{Error, Result};

/// Which entities a sphere covers: one type or the union of all three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SphereType {
    Per,
    Loc,
    Org,
    All,
}

impl SphereType {
    pub fn ne_type(self) -> Option<NeType> {
        match self {
            SphereType::Per => Some(NeType::Per),
            SphereType::Loc => Some(NeType::Loc),
            SphereType::Org => Some(NeType::Org),
            SphereType::All => None,
        }
    }

    pub fn covers(self, ne_type: NeType) -> bool {
        self.ne_type().is_none_or(|t| t == ne_type)
    }
}

impl From<NeType> for SphereType {
    fn from(t: NeType) -> Self {
        match t {
            NeType::Per => SphereType::Per,
            NeType::Loc => SphereType::Loc,
            NeType::Org => SphereType::Org,
        }
    }
}

impl fmt::Display for SphereType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ne_type() {
            Some(t) => t.fmt(f),
            None => f.write_str("All"),
        }
    }
}

impl FromStr for SphereType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "All" {
            return Ok(SphereType::All);
        }
        s.parse::<NeType>()
            .map(Into::into)
            .map_err(|_| Error::usage(format!("unknown sphere type {s:?} (expected Per, Loc, Org or All)")))
    }
}

/// Euclidean distance between two equal-length vectors.
pub fn euclidean_distance(w: &[f64], c: &[f64]) -> Result<f64> {
    check_dims(w.len(), c.len())?;
    Ok(distance(w, c))
}

pub(crate) fn distance(w: &[f64], c: &[f64]) -> f64 {
    w.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::usage(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// How the center is estimated from the dictionary vectors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CenterMethod {
    #[default]
    Mean,
    /// Coordinate-wise median.
    Median,
}

/// Componentwise mean of the positive vectors.
pub fn fit_center<V: AsRef<[f64]>>(positives: &[V]) -> Result<Vec<f64>> {
    fit_center_with(positives, CenterMethod::Mean)
}

pub fn fit_center_with<V: AsRef<[f64]>>(positives: &[V], method: CenterMethod) -> Result<Vec<f64>> {
    let Some(first) = positives.first() else {
        return Err(Error::usage("cannot fit a center without positive vectors"));
    };
    let dim = first.as_ref().len();
    for v in positives {
        check_dims(dim, v.as_ref().len())?;
    }
    match method {
        CenterMethod::Mean => {
            let mut mean = RunningMean::new(dim);
            positives.iter().for_each(|v| mean.push(v.as_ref()));
            Ok(mean.finish().expect("non-empty"))
        }
        CenterMethod::Median => {
            let mut column = Vec::with_capacity(positives.len());
            Ok((0..dim)
                .map(|k| {
                    column.clear();
                    column.extend(positives.iter().map(|v| v.as_ref()[k]));
                    column.sort_by(f64::total_cmp);
                    let n = column.len();
                    if n % 2 == 1 {
                        column[n / 2]
                    } else {
                        0.5 * (column[n / 2 - 1] + column[n / 2])
                    }
                })
                .collect())
        }
    }
}

/// Precision / recall / F1 over the sets T (true), P (predicted) and G = T ∩ P.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    pub true_count: usize,
    pub predicted_count: usize,
    pub hit_count: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfReport {
    pub fn from_counts(true_count: usize, predicted_count: usize, hit_count: usize) -> Self {
        debug_assert!(hit_count <= true_count.min(predicted_count));
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(hit_count, predicted_count);
        let recall = ratio(hit_count, true_count);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        PrfReport {
            true_count,
            predicted_count,
            hit_count,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniverseItem {
    pub id: String,
    pub vector: Vec<f64>,
    pub positive: bool,
}

/// The candidate pool a sphere is scored against; positives form the set T.
#[derive(Debug, Clone, Default)]
pub struct Universe {
    items: Vec<UniverseItem>,
    index: HashMap<String, usize>,
    dim: Option<usize>,
}

impl Universe {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a universe from items and a set of positive identifiers.
    pub fn from_parts<S: AsRef<str>>(items: Vec<(String, Vec<f64>)>, positives: &[S]) -> Result<Self> {
        let mut universe = Self::new();
        for (id, vector) in items {
            universe.add(id, vector, false)?;
        }
        for id in positives {
            let id = id.as_ref();
            let Some(&i) = universe.index.get(id) else {
                return Err(Error::usage(format!("positive {id:?} is not a universe item")));
            };
            universe.items[i].positive = true;
        }
        Ok(universe)
    }

    /// Adds an item; identifiers must be unique.
    pub fn add(&mut self, id: impl Into<String>, vector: Vec<f64>, positive: bool) -> Result<()> {
        let id = id.into();
        match self.dim {
            Some(d) => check_dims(d, vector.len())?,
            None => self.dim = Some(vector.len()),
        }
        if self.index.contains_key(&id) {
            return Err(Error::usage(format!("duplicate universe item {id:?}")));
        }
        self.index.insert(id.clone(), self.items.len());
        self.items.push(UniverseItem { id, vector, positive });
        Ok(())
    }

    /// The evaluation pool for one sphere type.
    ///
    /// Items are every vocabulary entry plus every multi-token (or otherwise
    /// out-of-vocabulary) dictionary surface. Positives are the resolved
    /// dictionary entries covered by `sphere_type`.
    pub fn for_dictionary(space: &EmbeddingSpace, resolved: &ResolvedEntities, sphere_type: SphereType) -> Self {
        let mut universe = Self::new();
        for (token, vector) in space.iter() {
            universe
                .add(token, vector.to_vec(), false)
                .expect("vocabulary tokens are unique and share a dimension");
        }
        for ne_type in NeType::ALL {
            let covered = sphere_type.covers(ne_type);
            for entity in &resolved.of(ne_type).entities {
                match universe.index.get(&entity.surface) {
                    Some(&i) => universe.items[i].positive |= covered,
                    None => universe
                        .add(entity.surface.clone(), entity.vector.clone(), covered)
                        .expect("resolved vectors match the space dimension"),
                }
            }
        }
        universe
    }

    pub fn items(&self) -> &[UniverseItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        self.items.iter().filter(|i| i.positive).count()
    }

    pub fn positives(&self) -> impl Iterator<Item = &UniverseItem> + '_ {
        self.items.iter().filter(|i| i.positive)
    }

    /// Distance of every item to `center`, in item order.
    pub fn distances(&self, center: &[f64]) -> Result<Vec<f64>> {
        if let Some(d) = self.dim {
            check_dims(d, center.len())?;
        }
        Ok(self
            .items
            .par_iter()
            .map(|item| distance(&item.vector, center))
            .collect())
    }
}

/// One candidate radius of the sweep with its scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub radius: f64,
    pub report: PrfReport,
}

/// Scores every distinct threshold for a fixed center, in increasing radius order.
///
/// Candidates are 0, the midpoint between each pair of consecutive distinct
/// distances, and a radius just above the largest distance.
pub fn radius_sweep(center: &[f64], universe: &Universe) -> Result<Vec<SweepPoint>> {
    if universe.is_empty() {
        return Err(Error::usage("universe has no items"));
    }
    let true_count = universe.positive_count();
    if true_count == 0 {
        return Err(Error::usage("universe has no positive items"));
    }
    let distances = universe.distances(center)?;
    let mut order: Vec<(f64, bool)> = distances
        .into_iter()
        .zip(universe.items())
        .map(|(d, item)| (d, item.positive))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut sweep = Vec::with_capacity(order.len() + 1);
    sweep.push(SweepPoint {
        radius: 0.0,
        report: PrfReport::from_counts(true_count, 0, 0),
    });
    let (mut predicted, mut hits) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let d = order[i].0;
        while i < order.len() && order[i].0 == d {
            predicted += 1;
            hits += usize::from(order[i].1);
            i += 1;
        }
        let radius = match order.get(i) {
            Some(&(next, _)) => {
                let mid = 0.5 * (d + next);
                if mid > d {
                    mid
                } else {
                    next
                }
            }
            None => d + d.abs().max(1.0) * 1e-9,
        };
        // a zero distance still needs a positive radius to be enclosed
        if radius > 0.0 {
            sweep.push(SweepPoint {
                radius,
                report: PrfReport::from_counts(true_count, predicted, hits),
            });
        }
    }
    Ok(sweep)
}

/// Smallest radius attaining the maximal F1 for the given center.
pub fn fit_radius(center: &[f64], universe: &Universe) -> Result<(f64, PrfReport)> {
    let sweep = radius_sweep(center, universe)?;
    let best = sweep
        .iter()
        .fold(sweep[0], |best, p| if p.report.f1 > best.report.f1 { *p } else { best });
    Ok((best.radius, best.report))
}

/// A sphere in embedding space. Membership is the strict inequality `ED(W, C) < R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypersphere {
    pub ne_type: SphereType,
    pub radius: f64,
    pub center: Vec<f64>,
}

impl Hypersphere {
    pub fn new(ne_type: SphereType, center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::usage(format!(
                "radius must be finite and non-negative, got {radius}"
            )));
        }
        if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::usage("center must be a non-empty finite vector"));
        }
        Ok(Hypersphere {
            ne_type,
            radius,
            center,
        })
    }

    /// Fits center then radius on `universe`, whose positives are the dictionary vectors.
    pub fn fit(ne_type: SphereType, universe: &Universe, method: CenterMethod) -> Result<(Self, PrfReport)> {
        let positives: Vec<&[f64]> = universe.positives().map(|i| i.vector.as_slice()).collect();
        let center = fit_center_with(&positives, method)?;
        let (radius, report) = fit_radius(&center, universe)?;
        Ok((Hypersphere::new(ne_type, center, radius)?, report))
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, w: &[f64]) -> Result<bool> {
        Ok(self.ne_likelihood(w)? < self.radius)
    }

    /// Distance to the center; smaller means more entity-like.
    pub fn ne_likelihood(&self, w: &[f64]) -> Result<f64> {
        euclidean_distance(w, &self.center)
    }

    /// Indices of `words` ordered from most to least entity-like (stable on ties).
    pub fn rank<V: AsRef<[f64]>>(&self, words: &[V]) -> Result<Vec<usize>> {
        let scores = words
            .iter()
            .map(|w| self.ne_likelihood(w.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..words.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        Ok(order)
    }

    /// T = universe positives, P = items inside the sphere, G = T ∩ P.
    pub fn evaluate(&self, universe: &Universe) -> Result<PrfReport> {
        let distances = universe.distances(&self.center)?;
        let (mut predicted, mut hits) = (0, 0);
        for (d, item) in distances.iter().zip(universe.items()) {
            if *d < self.radius {
                predicted += 1;
                hits += usize::from(item.positive);
            }
        }
        Ok(PrfReport::from_counts(universe.positive_count(), predicted, hits))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Hypersphere = serde_json::from_str(text)?;
        Hypersphere::new(s.ne_type, s.center, s.radius)
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
