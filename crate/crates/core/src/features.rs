//! z-scored hypersphere distances: for a word `W` and each type's center `C`,
//! `z = (ED(W, C) - mu) / sigma`, with `mu` and `sigma` taken over the whole
//! vocabulary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TaggedCorpus;
use crate::dictionary::NeType;
use crate::embeddings::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::hypersphere::{distance, Hypersphere, SphereType};

/// One sphere per entity type, indexed by [`NeType`].
#[derive(Debug, Clone, PartialEq)]
pub struct SphereSet {
    spheres: [Hypersphere; 3],
}

impl SphereSet {
    /// Requires exactly one Per, one Loc and one Org sphere of equal dimension, in any order.
    pub fn new(spheres: Vec<Hypersphere>) -> Result<Self> {
        let mut slots: [Option<Hypersphere>; 3] = [None, None, None];
        for s in spheres {
            let Some(t) = s.ne_type.ne_type() else {
                return Err(Error::usage("an All sphere cannot be used as a per-type feature"));
            };
            if slots[t.index()].replace(s).is_some() {
                return Err(Error::usage(format!("more than one {t} sphere")));
            }
        }
        let [Some(per), Some(loc), Some(org)] = slots else {
            return Err(Error::usage("need one Per, one Loc and one Org sphere"));
        };
        if per.dim() != loc.dim() || per.dim() != org.dim() {
            return Err(Error::usage("sphere dimensions differ"));
        }
        Ok(SphereSet {
            spheres: [per, loc, org],
        })
    }

    pub fn get(&self, ne_type: NeType) -> &Hypersphere {
        &self.spheres[ne_type.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Hypersphere> + '_ {
        self.spheres.iter()
    }

    pub fn dim(&self) -> usize {
        self.spheres[0].dim()
    }

    /// Loads `sphere_Per.json`, `sphere_Loc.json` and `sphere_Org.json` from a directory.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let spheres = NeType::ALL
            .iter()
            .map(|t| Hypersphere::load(dir.join(sphere_file_name(SphereType::from(*t)))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(spheres)
    }
}

/// File name used for a sphere inside an output directory.
pub fn sphere_file_name(ne_type: SphereType) -> String {
    format!("sphere_{ne_type}.json")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub mean: f64,
    pub std_dev: f64,
}

/// Per-type distance mean and (population) standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypersphereStats {
    pub per: DistanceStats,
    pub loc: DistanceStats,
    pub org: DistanceStats,
}

impl HypersphereStats {
    pub fn get(&self, ne_type: NeType) -> DistanceStats {
        match ne_type {
            NeType::Per => self.per,
            NeType::Loc => self.loc,
            NeType::Org => self.org,
        }
    }
}

/// Mean and standard deviation (divisor N) of the distances from every vocabulary vector to each center.
pub fn compute_stats(space: &EmbeddingSpace, spheres: &SphereSet) -> Result<HypersphereStats> {
    if space.len() < 2 {
        return Err(Error::usage("statistics need a vocabulary of at least two words"));
    }
    if spheres.dim() != space.dim() {
        return Err(Error::usage(format!(
            "sphere dimension {} does not match space dimension {}",
            spheres.dim(),
            space.dim()
        )));
    }
    let stats = |t: NeType| -> Result<DistanceStats> {
        let center = &spheres.get(t).center;
        let distances: Vec<f64> = (0..space.len())
            .into_par_iter()
            .map(|i| distance(space.vector(i), center))
            .collect();
        let n = distances.len() as f64;
        let mean = distances.iter().sum::<f64>() / n;
        let var = distances.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
        let std_dev = var.sqrt();
        if !(std_dev > 0.0) {
            return Err(Error::degenerate(format!(
                "all vocabulary words are equidistant from the {t} center"
            )));
        }
        Ok(DistanceStats { mean, std_dev })
    };
    Ok(HypersphereStats {
        per: stats(NeType::Per)?,
        loc: stats(NeType::Loc)?,
        org: stats(NeType::Org)?,
    })
}

/// The 3-d hypersphere feature, indexed Per, Loc, Org.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HsFeatureVector {
    pub z: [f64; 3],
}

impl HsFeatureVector {
    /// Feature for words with no vector: the population mean.
    pub const NEUTRAL: HsFeatureVector = HsFeatureVector { z: [0.0; 3] };

    pub fn z_per(&self) -> f64 {
        self.z[0]
    }

    pub fn z_loc(&self) -> f64 {
        self.z[1]
    }

    pub fn z_org(&self) -> f64 {
        self.z[2]
    }
}

pub fn featurize(v: &[f64], spheres: &SphereSet, stats: &HypersphereStats) -> Result<HsFeatureVector> {
    if v.len() != spheres.dim() {
        return Err(Error::usage(format!(
            "vector dimension {} does not match sphere dimension {}",
            v.len(),
            spheres.dim()
        )));
    }
    let mut z = [0.0; 3];
    for t in NeType::ALL {
        let s = stats.get(t);
        z[t.index()] = (distance(v, &spheres.get(t).center) - s.mean) / s.std_dev;
    }
    Ok(HsFeatureVector { z })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub sentence_idx: usize,
    pub token_idx: usize,
    pub token: String,
    pub features: HsFeatureVector,
}

/// One feature row per corpus token, in corpus order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    /// Rows of one sentence.
    pub fn sentence(&self, sentence_idx: usize) -> Vec<HsFeatureVector> {
        self.rows
            .iter()
            .filter(|r| r.sentence_idx == sentence_idx)
            .map(|r| r.features)
            .collect()
    }

    /// Rows grouped by sentence.
    pub fn by_sentence(&self) -> Vec<Vec<HsFeatureVector>> {
        let mut out: Vec<Vec<HsFeatureVector>> = Vec::new();
        for row in &self.rows {
            if out.len() <= row.sentence_idx {
                out.resize_with(row.sentence_idx + 1, Vec::new);
            }
            out[row.sentence_idx].push(row.features);
        }
        out
    }

    /// TSV with columns `sentence_idx token_idx token z_per z_loc z_org`.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "sentence_idx\ttoken_idx\ttoken\tz_per\tz_loc\tz_org")?;
        for r in &self.rows {
            let [p, l, o] = r.features.z;
            writeln!(
                out,
                "{}\t{}\t{}\t{p:?}\t{l:?}\t{o:?}",
                r.sentence_idx, r.token_idx, r.token
            )?;
        }
        out.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_tsv(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }
}

/// Features for every corpus token; tokens missing from the space get [`HsFeatureVector::NEUTRAL`].
pub fn featurize_corpus(
    corpus: &TaggedCorpus,
    space: &EmbeddingSpace,
    spheres: &SphereSet,
    stats: &HypersphereStats,
) -> FeatureTable {
    let rows = corpus
        .sentences()
        .iter()
        .enumerate()
        .flat_map(|(s, tokens)| tokens.iter().enumerate().map(move |(t, token)| (s, t, token)))
        .map(|(sentence_idx, token_idx, token)| {
            let features = space
                .lookup(token)
                .map(|v| featurize(v, spheres, stats).expect("space and spheres share a dimension"))
                .unwrap_or(HsFeatureVector::NEUTRAL);
            FeatureRow {
                sentence_idx,
                token_idx,
                token: token.clone(),
                features,
            }
        })
        .collect();
    FeatureTable { rows }
}
