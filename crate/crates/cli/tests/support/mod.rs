//! Fixtures shared by the command-line tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DMatrix;
use nesphere::corpus::TaggedCorpus;
use nesphere::dictionary::{NeDictionary, NeType};
use nesphere::embeddings::EmbeddingSpace;
use rand::seq::SliceRandom;
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
    let qr = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal)).qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn matvec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

/// Point uniformly distributed in the shell `inner <= |x - center| < outer`.
pub fn shell_point(rng: &mut impl Rng, center: &[f64], inner: f64, outer: f64) -> Vec<f64> {
    let dir = gaussian_vec(rng, center.len(), 1.0);
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let d = center.len() as i32;
    let u: f64 = rng.gen();
    let radius = (inner.powi(d) + u * (outer.powi(d) - inner.powi(d))).powf(1.0 / d as f64);
    center.iter().zip(&dir).map(|(c, x)| c + radius * x / norm).collect()
}

pub fn space_from(rows: &[Vec<f64>], prefix: &str) -> EmbeddingSpace {
    EmbeddingSpace::from_entries(
        rows[0].len(),
        prefix,
        rows.iter()
            .enumerate()
            .map(|(i, v)| (format!("{prefix}{i}"), v.clone())),
    )
    .unwrap()
}

pub fn nesphere() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nesphere"));
    cmd.env_remove("NESPHERE_THREADS").env("RUST_LOG", "error");
    cmd
}

/// Runs the binary with `--out-dir out` and the given arguments.
pub fn run(out: &Path, args: &[&str]) -> Output {
    nesphere()
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn run_ok(out: &Path, args: &[&str]) -> String {
    let output = run(out, args);
    assert!(
        output.status.success(),
        "nesphere {args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout).unwrap()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

pub fn path_str(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn write_dictionary(path: &Path, entries: &[(NeType, String)]) {
    let mut text = String::new();
    for (t, surface) in entries {
        writeln!(text, "{t}\t{surface}").unwrap();
    }
    fs::write(path, text).unwrap();
}

pub fn write_lexicon(path: &Path, pairs: &[(String, String)]) {
    let text: String = pairs.iter().map(|(s, t)| format!("{s}\t{t}\n")).collect();
    fs::write(path, text).unwrap();
}

/// A synthetic language with one planted sphere per entity type.
///
/// Entity words are uniform inside a ball of radius 1 around their type's
/// center. Noise words labelled `O` fill the shell between 1.3 and 2 around
/// the same centers, so no hyperplane separates them from the entities.
/// Generic `O` words lie far from every center. All tokens are lowercase
/// letters and digits, so the lexical block carries no signal.
pub struct World {
    pub space: EmbeddingSpace,
    pub entities: Vec<(NeType, String)>,
    pub corpus: TaggedCorpus,
}

pub struct WorldConfig {
    pub dim: usize,
    pub entities_per_type: usize,
    pub noise_per_type: usize,
    pub generic: usize,
    pub sentences: usize,
    pub noise_rate: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            dim: 64,
            entities_per_type: 200,
            noise_per_type: 200,
            generic: 400,
            sentences: 2000,
            noise_rate: 0.2,
        }
    }
}

fn tag_suffix(t: NeType) -> &'static str {
    match t {
        NeType::Per => "PER",
        NeType::Loc => "LOC",
        NeType::Org => "ORG",
    }
}

pub fn planted_world(seed: u64, cfg: &WorldConfig) -> World {
    let mut rng = rng(seed);
    let centers: Vec<Vec<f64>> = (0..3).map(|_| gaussian_vec(&mut rng, cfg.dim, 1.0)).collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut entity_ids: Vec<Vec<usize>> = vec![Vec::new(); 3];
    let mut noise_ids = Vec::new();
    let mut generic_ids = Vec::new();
    for (k, c) in centers.iter().enumerate() {
        for _ in 0..cfg.entities_per_type {
            entity_ids[k].push(rows.len());
            rows.push(shell_point(&mut rng, c, 0.0, 1.0));
        }
        for _ in 0..cfg.noise_per_type {
            noise_ids.push(rows.len());
            rows.push(shell_point(&mut rng, c, 1.3, 2.0));
        }
    }
    for _ in 0..cfg.generic {
        generic_ids.push(rows.len());
        rows.push(gaussian_vec(&mut rng, cfg.dim, 1.0));
    }
    // token names carry no hint of the row's role
    let mut names: Vec<usize> = (0..rows.len()).collect();
    names.shuffle(&mut rng);
    let name = |i: usize| format!("w{}", names[i]);
    let space = EmbeddingSpace::from_entries(
        cfg.dim,
        "synthetic",
        rows.iter().enumerate().map(|(i, v)| (name(i), v.clone())),
    )
    .unwrap();

    let entities = NeType::ALL
        .iter()
        .zip(&entity_ids)
        .flat_map(|(&t, ids)| ids.iter().map(move |&i| (t, i)))
        .map(|(t, i)| (t, name(i)))
        .collect();

    let (mut sentences, mut tags) = (Vec::new(), Vec::new());
    for _ in 0..cfg.sentences {
        let len = rng.gen_range(4..12);
        let (mut tokens, mut seq) = (Vec::new(), Vec::new());
        while tokens.len() < len {
            let roll: f64 = rng.gen();
            if roll < cfg.noise_rate {
                tokens.push(name(*noise_ids.choose(&mut rng).unwrap()));
                seq.push("O".to_string());
            } else if roll < cfg.noise_rate + 0.3 {
                let k = rng.gen_range(0..3);
                let suffix = tag_suffix(NeType::ALL[k]);
                let span = if rng.gen_bool(0.3) { 2 } else { 1 };
                for j in 0..span {
                    tokens.push(name(*entity_ids[k].choose(&mut rng).unwrap()));
                    seq.push(format!("{}-{suffix}", if j == 0 { "B" } else { "I" }));
                }
            } else {
                tokens.push(name(*generic_ids.choose(&mut rng).unwrap()));
                seq.push("O".to_string());
            }
        }
        sentences.push(tokens);
        tags.push(seq);
    }
    World {
        space,
        entities,
        corpus: TaggedCorpus::new(sentences, tags).unwrap(),
    }
}

impl World {
    pub fn dictionary(&self) -> NeDictionary {
        let mut text = String::new();
        for (t, s) in &self.entities {
            writeln!(text, "{t}\t{s}").unwrap();
        }
        NeDictionary::read(text.as_bytes()).unwrap()
    }

    /// Splits the corpus into a training part holding `fraction` of the sentences and the rest.
    pub fn split(&self, fraction: f64) -> (TaggedCorpus, TaggedCorpus) {
        let cut = (self.corpus.len() as f64 * fraction).round() as usize;
        let part = |range: std::ops::Range<usize>| {
            TaggedCorpus::new(
                self.corpus.sentences()[range.clone()].to_vec(),
                self.corpus.tags()[range].to_vec(),
            )
            .unwrap()
        };
        (part(0..cut), part(cut..self.corpus.len()))
    }

    /// Writes `embeddings.txt`, `dictionary.tsv`, `train.tsv` and `test.tsv` into `dir`.
    pub fn write(&self, dir: &Path, train_fraction: f64) -> WorldFiles {
        let files = WorldFiles {
            embeddings: dir.join("embeddings.txt"),
            dictionary: dir.join("dictionary.tsv"),
            train: dir.join("train.tsv"),
            test: dir.join("test.tsv"),
        };
        self.space.save(&files.embeddings).unwrap();
        write_dictionary(&files.dictionary, &self.entities);
        let (train, test) = self.split(train_fraction);
        train.save(&files.train).unwrap();
        test.save(&files.test).unwrap();
        files
    }
}

pub struct WorldFiles {
    pub embeddings: PathBuf,
    pub dictionary: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
}
