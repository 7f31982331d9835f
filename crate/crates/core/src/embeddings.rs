//! Dense word-embedding spaces.
//!
//! The on-disk format is the plain word2vec text layout: a `<count> <dim>`
//! header followed by one `token v1 ... vdim` row per entry. Vectors are kept
//! exactly as read; nothing is normalized on load.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// A vocabulary-indexed table of equal-length, finite vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingSpace {
    dim: usize,
    language_tag: String,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    // row-major, tokens.len() * dim
    data: Vec<f64>,
    lowercase_fallback: bool,
    duplicates: usize,
}

/// Result of averaging the vectors of a multi-token phrase.
#[derive(Debug, Clone, PartialEq)]
pub struct Phrase {
    /// Mean of the found member vectors, `None` when no member was found.
    pub vector: Option<Vec<f64>>,
    /// Number of member tokens missing from the space.
    pub skipped: usize,
}

impl EmbeddingSpace {
    /// An empty space of the given dimension.
    pub fn new(dim: usize, language_tag: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::usage("embedding dimension must be positive"));
        }
        Ok(EmbeddingSpace {
            dim,
            language_tag: language_tag.into(),
            tokens: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
            lowercase_fallback: false,
            duplicates: 0,
        })
    }

    /// Builds a space from `(token, vector)` pairs. Duplicate tokens keep their first vector.
    pub fn from_entries<I, S>(dim: usize, language_tag: impl Into<String>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut space = Self::new(dim, language_tag)?;
        for (token, vector) in entries {
            space.insert(token.into(), &vector)?;
        }
        Ok(space)
    }

    /// Appends an entry. Returns `false` (and bumps the duplicate tally) if the token already exists.
    pub fn insert(&mut self, token: String, vector: &[f64]) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::usage(format!(
                "vector for {token:?} has {} components, space dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        if let Some(bad) = vector.iter().find(|v| !v.is_finite()) {
            return Err(Error::usage(format!(
                "vector for {token:?} has non-finite component {bad}"
            )));
        }
        if self.index.contains_key(&token) {
            self.duplicates += 1;
            return Ok(false);
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.data.extend_from_slice(vector);
        Ok(true)
    }

    /// Loads a text embedding file, keeping at most `limit` entries in file order.
    pub fn load(path: impl AsRef<Path>, limit: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let tag = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::read(BufReader::new(file), tag, limit)
    }

    /// Parses the text embedding format from any reader.
    pub fn read<R: BufRead>(reader: R, language_tag: impl Into<String>, limit: Option<usize>) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line.map_err(|e| Error::format(1, e.to_string()))?,
            None => return Err(Error::format(1, "missing `<count> <dim>` header")),
        };
        let (count, dim) = parse_header(&header)?;
        let mut space = Self::new(dim, language_tag).map_err(|_| Error::format(1, "dimension must be positive"))?;
        let limit = limit.unwrap_or(usize::MAX);

        let mut rows = 0usize;
        let mut values = Vec::with_capacity(dim);
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::format(lineno, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            if space.len() >= limit {
                break;
            }
            rows += 1;
            if rows > count {
                return Err(Error::format(
                    lineno,
                    format!("header declares {count} rows but more follow"),
                ));
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().expect("non-blank line has a field");
            values.clear();
            for field in fields {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::format(lineno, format!("cannot parse {field:?} as a number")))?;
                if !v.is_finite() {
                    return Err(Error::format(lineno, format!("non-finite value {field:?}")));
                }
                values.push(v);
            }
            if values.len() != dim {
                return Err(Error::format(
                    lineno,
                    format!("expected {dim} components for {token:?}, found {}", values.len()),
                ));
            }
            space.insert(token.to_string(), &values)?;
        }
        if space.len() < limit && rows < count {
            return Err(Error::format(
                0,
                format!("header declares {count} rows but only {rows} present"),
            ));
        }
        if space.duplicates > 0 {
            warn!("{} duplicate tokens ignored", space.duplicates);
        }
        Ok(space)
    }

    /// Writes the space in the text format. Values use the shortest representation that reparses exactly.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (token, vector) in self.iter() {
            write!(out, "{token}")?;
            for v in vector {
                write!(out, " {v:?}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    /// Enables lookup retrying with the lowercased token when the exact token is missing.
    pub fn with_lowercase_fallback(mut self, enabled: bool) -> Self {
        self.lowercase_fallback = enabled;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn language_tag(&self) -> &str {
        &self.language_tag
    }

    /// Duplicate tokens dropped while building the space.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Vector of the entry at `index` (file order).
    pub fn vector(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> + '_ {
        self.tokens
            .iter()
            .zip(self.data.chunks_exact(self.dim))
            .map(|(t, v)| (t.as_str(), v))
    }

    /// Index of a token, honoring the lowercase fallback.
    pub fn index_of(&self, token: &str) -> Option<usize> {
        if let Some(&i) = self.index.get(token) {
            return Some(i);
        }
        if self.lowercase_fallback {
            let lower = token.to_lowercase();
            if lower != token {
                return self.index.get(&lower).copied();
            }
        }
        None
    }

    pub fn lookup(&self, token: &str) -> Option<&[f64]> {
        self.index_of(token).map(|i| self.vector(i))
    }

    /// Componentwise mean of the vectors of every member token found in the space.
    pub fn phrase_vector<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Phrase> {
        if tokens.is_empty() {
            return Err(Error::usage("phrase must contain at least one token"));
        }
        let mut mean = RunningMean::new(self.dim);
        let mut skipped = 0;
        for token in tokens {
            match self.lookup(token.as_ref()) {
                Some(v) => mean.push(v),
                None => skipped += 1,
            }
        }
        Ok(Phrase {
            vector: mean.finish(),
            skipped,
        })
    }

    /// The whole table as a `len x dim` matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.data)
    }
}

fn parse_header(header: &str) -> Result<(usize, usize)> {
    let mut parts = header.split_whitespace();
    let (Some(count), Some(dim), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(Error::format(
            1,
            format!("expected `<count> <dim>` header, found {header:?}"),
        ));
    };
    let count = count
        .parse()
        .map_err(|_| Error::format(1, format!("bad row count {count:?}")))?;
    let dim: usize = dim
        .parse()
        .map_err(|_| Error::format(1, format!("bad dimension {dim:?}")))?;
    if dim == 0 {
        return Err(Error::format(1, "dimension must be positive"));
    }
    Ok((count, dim))
}

/// Incremental componentwise mean. Averaging identical vectors reproduces them exactly.
#[derive(Debug, Clone)]
pub(crate) struct RunningMean {
    mean: Vec<f64>,
    n: usize,
}

impl RunningMean {
    pub(crate) fn new(dim: usize) -> Self {
        RunningMean {
            mean: vec![0.0; dim],
            n: 0,
        }
    }

    pub(crate) fn push(&mut self, v: &[f64]) {
        self.n += 1;
        if self.n == 1 {
            self.mean.copy_from_slice(v);
            return;
        }
        let n = self.n as f64;
        for (m, x) in self.mean.iter_mut().zip(v) {
            *m += (x - *m) / n;
        }
    }

    pub(crate) fn finish(self) -> Option<Vec<f64>> {
        (self.n > 0).then_some(self.mean)
    }
}

/// One labelled input point for [`project`].
#[derive(Debug, Clone)]
pub struct LabelledPoint {
    pub token: String,
    pub label: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedRow {
    pub token: String,
    pub label: String,
    pub coords: Vec<f64>,
}

/// Low-dimensional coordinates for plotting; every row has the same 2 or 3 coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPoints {
    pub out_dim: usize,
    pub rows: Vec<ProjectedRow>,
    /// Eigenvalues of the kept principal components, descending.
    pub explained_variance: Vec<f64>,
}

impl ProjectedPoints {
    /// CSV with a `token,type,x,y[,z]` header.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let axes = ["x", "y", "z"];
        let mut header = vec!["token", "type"];
        header.extend(&axes[..self.out_dim]);
        w.write_record(&header)?;
        for row in &self.rows {
            let mut record = vec![row.token.clone(), row.label.clone()];
            record.extend(row.coords.iter().map(|c| format!("{c:?}")));
            w.write_record(&record)?;
        }
        w.flush()
    }
}

/// Centered PCA onto the top `out_dim` principal axes.
///
/// Each axis is oriented so its largest-magnitude loading is positive, which
/// makes the output deterministic.
pub fn project(points: &[LabelledPoint], out_dim: usize) -> Result<ProjectedPoints> {
    if out_dim != 2 && out_dim != 3 {
        return Err(Error::usage(format!(
            "projection dimension must be 2 or 3, got {out_dim}"
        )));
    }
    if points.len() < out_dim + 1 {
        return Err(Error::usage(format!(
            "projection to {out_dim}-D needs at least {} points, got {}",
            out_dim + 1,
            points.len()
        )));
    }
    let dim = points[0].vector.len();
    if dim < out_dim {
        return Err(Error::usage(format!(
            "input dimension {dim} is below projection dimension {out_dim}"
        )));
    }
    if let Some(p) = points.iter().find(|p| p.vector.len() != dim) {
        return Err(Error::usage(format!(
            "point {:?} has dimension {}, expected {dim}",
            p.token,
            p.vector.len()
        )));
    }

    let n = points.len();
    let mut centroid = RunningMean::new(dim);
    points.iter().for_each(|p| centroid.push(&p.vector));
    let centroid = centroid.finish().expect("at least one point");
    let centered = DMatrix::from_fn(n, dim, |i, j| points[i].vector[j] - centroid[j]);
    if centered.iter().all(|&v| v == 0.0) {
        return Err(Error::degenerate("all projected points are identical"));
    }

    let cov = centered.tr_mul(&centered) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut axes = DMatrix::zeros(dim, out_dim);
    let mut explained_variance = Vec::with_capacity(out_dim);
    for (k, &col) in order.iter().take(out_dim).enumerate() {
        let mut axis = eig.eigenvectors.column(col).into_owned();
        let pivot = axis
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            axis.neg_mut();
        }
        axes.set_column(k, &axis);
        explained_variance.push(eig.eigenvalues[col].max(0.0));
    }

    let coords = centered * axes;
    let rows = points
        .iter()
        .enumerate()
        .map(|(i, p)| ProjectedRow {
            token: p.token.clone(),
            label: p.label.clone(),
            coords: coords.row(i).iter().copied().collect(),
        })
        .collect();
    Ok(ProjectedPoints {
        out_dim,
        rows,
        explained_variance,
    })
}
