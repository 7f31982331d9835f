//! Typed named-entity dictionaries.
//!
//! File layout: one `Per|Loc|Org<TAB>surface tokens` entry per line, `#` starts a comment line.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingSpace;
use crate::error::{Error, Result};

/// The three entity types covered by dictionaries and spheres.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NeType {
    Per,
    Loc,
    Org,
}

impl NeType {
    pub const ALL: [NeType; 3] = [NeType::Per, NeType::Loc, NeType::Org];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NeType::Per => "Per",
            NeType::Loc => "Loc",
            NeType::Org => "Org",
        }
    }
}

impl fmt::Display for NeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NeType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Per" => Ok(NeType::Per),
            "Loc" => Ok(NeType::Loc),
            "Org" => Ok(NeType::Org),
            other => Err(Error::usage(format!(
                "unknown entity type {other:?} (expected Per, Loc or Org)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DictEntry {
    pub surface: Vec<String>,
    pub ne_type: NeType,
}

impl DictEntry {
    /// Surface tokens joined by single spaces.
    pub fn surface_text(&self) -> String {
        self.surface.join(" ")
    }
}

/// A deduplicated list of typed dictionary entries, in file order.
#[derive(Debug, Clone, Default)]
pub struct NeDictionary {
    entries: Vec<DictEntry>,
    seen: HashSet<DictEntry>,
    duplicates: usize,
}

impl NeDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry; returns `false` for a repeated `(surface, type)` pair.
    pub fn push(&mut self, entry: DictEntry) -> Result<bool> {
        if entry.surface.is_empty() {
            return Err(Error::usage("dictionary surface must not be empty"));
        }
        if !self.seen.insert(entry.clone()) {
            self.duplicates += 1;
            return Ok(false);
        }
        self.entries.push(entry);
        Ok(true)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut dict = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::format(lineno, e.to_string()))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((tag, surface)) = line.split_once('\t') else {
                return Err(Error::format(lineno, "expected `type<TAB>surface`"));
            };
            let ne_type = tag
                .parse::<NeType>()
                .map_err(|_| Error::format(lineno, format!("unknown entity type {tag:?}")))?;
            let surface: Vec<String> = surface
                .split(' ')
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect();
            if surface.is_empty() {
                return Err(Error::format(lineno, "empty surface"));
            }
            dict.push(DictEntry { surface, ne_type })?;
        }
        if dict.duplicates > 0 {
            warn!("{} duplicate dictionary entries ignored", dict.duplicates);
        }
        Ok(dict)
    }

    pub fn entries(&self) -> &[DictEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn count(&self, ne_type: NeType) -> usize {
        self.entries.iter().filter(|e| e.ne_type == ne_type).count()
    }

    /// Maps every entry to its averaged phrase vector. Entries with no known token count as OOV.
    pub fn resolve(&self, space: &EmbeddingSpace) -> ResolvedEntities {
        let mut resolved = ResolvedEntities::default();
        for entry in &self.entries {
            let slot = &mut resolved.by_type[entry.ne_type.index()];
            match space
                .phrase_vector(&entry.surface)
                .expect("surfaces are non-empty")
                .vector
            {
                Some(vector) => slot.entities.push(ResolvedEntity {
                    surface: entry.surface_text(),
                    vector,
                }),
                None => slot.oov += 1,
            }
        }
        resolved
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedEntity {
    pub surface: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TypeEntities {
    pub entities: Vec<ResolvedEntity>,
    pub oov: usize,
}

/// Dictionary entries mapped into an embedding space, grouped by type.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResolvedEntities {
    by_type: [TypeEntities; 3],
}

impl ResolvedEntities {
    pub fn of(&self, ne_type: NeType) -> &TypeEntities {
        &self.by_type[ne_type.index()]
    }

    /// Resolved entities of every type, Per then Loc then Org.
    pub fn all(&self) -> impl Iterator<Item = &ResolvedEntity> + '_ {
        self.by_type.iter().flat_map(|t| t.entities.iter())
    }

    pub fn total_oov(&self) -> usize {
        self.by_type.iter().map(|t| t.oov).sum()
    }
}
