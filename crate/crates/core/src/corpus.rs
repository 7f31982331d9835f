//! CoNLL-style tagged corpora in the BIO scheme, and entity span extraction.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::hypersphere::PrfReport;

pub const OUTSIDE: &str = "O";

/// A parsed BIO tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bio<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

impl<'a> Bio<'a> {
    pub fn parse(tag: &'a str) -> Option<Self> {
        if tag == OUTSIDE {
            return Some(Bio::Outside);
        }
        match tag.split_once('-') {
            Some(("B", ty)) if !ty.is_empty() => Some(Bio::Begin(ty)),
            Some(("I", ty)) if !ty.is_empty() => Some(Bio::Inside(ty)),
            _ => None,
        }
    }

    fn entity_type(self) -> Option<&'a str> {
        match self {
            Bio::Outside => None,
            Bio::Begin(t) | Bio::Inside(t) => Some(t),
        }
    }
}

/// Sentences of tokens with parallel BIO tags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaggedCorpus {
    sentences: Vec<Vec<String>>,
    tags: Vec<Vec<String>>,
    tag_set: Vec<String>,
    repairs: usize,
}

impl TaggedCorpus {
    /// Validates and builds a corpus. Ill-formed `I-X` tags are rewritten to `B-X` and counted.
    pub fn new(sentences: Vec<Vec<String>>, mut tags: Vec<Vec<String>>) -> Result<Self> {
        if sentences.len() != tags.len() {
            return Err(Error::usage(format!(
                "{} sentences but {} tag sequences",
                sentences.len(),
                tags.len()
            )));
        }
        let mut repairs = 0;
        for (i, (tokens, seq)) in sentences.iter().zip(tags.iter_mut()).enumerate() {
            if tokens.len() != seq.len() {
                return Err(Error::usage(format!(
                    "sentence {i} has {} tokens but {} tags",
                    tokens.len(),
                    seq.len()
                )));
            }
            if tokens.is_empty() {
                return Err(Error::usage(format!("sentence {i} is empty")));
            }
            if let Some(bad) = seq.iter().find(|t| Bio::parse(t).is_none()) {
                return Err(Error::usage(format!("sentence {i} has malformed tag {bad:?}")));
            }
            repairs += repair_bio(seq);
        }
        if repairs > 0 {
            warn!("{repairs} ill-formed I- tags repaired to B-");
        }
        let mut labels: BTreeSet<&str> = tags.iter().flatten().map(String::as_str).collect();
        labels.remove(OUTSIDE);
        let tag_set = std::iter::once(OUTSIDE.to_string())
            .chain(labels.into_iter().map(str::to_string))
            .collect();
        Ok(TaggedCorpus {
            sentences,
            tags,
            tag_set,
            repairs,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    /// Reads `token<TAB>tag` lines with blank lines between sentences.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut sentences = Vec::new();
        let mut tags = Vec::new();
        let (mut tokens, mut seq) = (Vec::new(), Vec::new());
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::format(lineno, e.to_string()))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                if !tokens.is_empty() {
                    sentences.push(std::mem::take(&mut tokens));
                    tags.push(std::mem::take(&mut seq));
                }
                continue;
            }
            let Some((token, tag)) = line.split_once('\t') else {
                return Err(Error::format(lineno, "expected `token<TAB>tag`"));
            };
            if token.is_empty() {
                return Err(Error::format(lineno, "empty token"));
            }
            if Bio::parse(tag).is_none() {
                return Err(Error::format(lineno, format!("malformed BIO tag {tag:?}")));
            }
            tokens.push(token.to_string());
            seq.push(tag.to_string());
        }
        if !tokens.is_empty() {
            sentences.push(tokens);
            tags.push(seq);
        }
        Self::new(sentences, tags)
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (k, (tokens, seq)) in self.sentences.iter().zip(&self.tags).enumerate() {
            if k > 0 {
                writeln!(out)?;
            }
            for (t, y) in tokens.iter().zip(seq) {
                writeln!(out, "{t}\t{y}")?;
            }
        }
        out.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn sentences(&self) -> &[Vec<String>] {
        &self.sentences
    }

    pub fn tags(&self) -> &[Vec<String>] {
        &self.tags
    }

    /// `O` first, then the remaining tags in lexical order.
    pub fn tag_set(&self) -> &[String] {
        &self.tag_set
    }

    pub fn repairs(&self) -> usize {
        self.repairs
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

/// Rewrites every `I-X` that does not continue an `X` span into `B-X`. Returns the number of rewrites.
pub fn repair_bio(tags: &mut [String]) -> usize {
    let mut repairs = 0;
    let mut prev_type: Option<String> = None;
    for tag in tags.iter_mut() {
        let fixed = match Bio::parse(tag) {
            Some(Bio::Inside(ty)) if prev_type.as_deref() != Some(ty) => Some(format!("B-{ty}")),
            _ => None,
        };
        if let Some(fixed) = fixed {
            *tag = fixed;
            repairs += 1;
        }
        prev_type = Bio::parse(tag).and_then(Bio::entity_type).map(str::to_string);
    }
    repairs
}

/// An entity mention covering tokens `start..end`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
}

/// Entity spans of a BIO sequence. An `I-X` that does not continue an `X` span opens a new one.
pub fn extract_spans<S: AsRef<str>>(tags: &[S]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let bio = Bio::parse(tag.as_ref()).unwrap_or(Bio::Outside);
        let continues = matches!((bio, open), (Bio::Inside(t), Some((_, o))) if t == o);
        if continues {
            continue;
        }
        if let Some((start, ty)) = open.take() {
            spans.push(Span {
                start,
                end: i,
                entity_type: ty.to_string(),
            });
        }
        if let Some(ty) = bio.entity_type() {
            open = Some((i, ty));
        }
    }
    if let Some((start, ty)) = open {
        spans.push(Span {
            start,
            end: tags.len(),
            entity_type: ty.to_string(),
        });
    }
    spans
}

/// Exact span-and-type match scores over parallel gold and predicted tag sequences.
pub fn entity_prf<S: AsRef<str>, P: AsRef<str>>(gold: &[Vec<S>], predicted: &[Vec<P>]) -> PrfReport {
    assert_eq!(
        gold.len(),
        predicted.len(),
        "gold and predicted corpora differ in length"
    );
    let (mut t, mut p, mut g) = (0, 0, 0);
    for (gold_seq, pred_seq) in gold.iter().zip(predicted) {
        let gold_spans: BTreeSet<Span> = extract_spans(gold_seq).into_iter().collect();
        let pred_spans: BTreeSet<Span> = extract_spans(pred_seq).into_iter().collect();
        t += gold_spans.len();
        p += pred_spans.len();
        g += gold_spans.intersection(&pred_spans).count();
    }
    PrfReport::from_counts(t, p, g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(tags: &[&str]) -> Vec<String> {
        tags.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn reads_conll_blocks() {
        let text = "John\tB-PER\nSmith\tI-PER\nran\tO\n\n\nParis\tB-LOC\n";
        let corpus = TaggedCorpus::read(text.as_bytes()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.token_count(), 4);
        assert_eq!(corpus.tag_set(), &strings(&["O", "B-LOC", "B-PER", "I-PER"])[..]);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(
            TaggedCorpus::read("John B-PER\n".as_bytes()),
            Err(Error::Format { line: 1, .. })
        ));
        assert!(matches!(
            TaggedCorpus::read("a\tO\nJohn\tX-PER\n".as_bytes()),
            Err(Error::Format { line: 2, .. })
        ));
    }

    #[test]
    fn repairs_orphan_inside_tags() {
        let mut tags = strings(&["I-PER", "O", "I-LOC", "B-ORG", "I-PER", "I-PER"]);
        assert_eq!(repair_bio(&mut tags), 3);
        assert_eq!(tags, strings(&["B-PER", "O", "B-LOC", "B-ORG", "B-PER", "I-PER"]));
        let corpus = TaggedCorpus::new(vec![strings(&["a", "b"])], vec![strings(&["O", "I-LOC"])]).unwrap();
        assert_eq!(corpus.repairs(), 1);
        assert_eq!(corpus.tags()[0][1], "B-LOC");
    }

    #[test]
    fn spans_from_bio() {
        let spans = extract_spans(&["B-PER", "I-PER", "O", "B-LOC", "B-LOC", "I-ORG"]);
        let got: Vec<(usize, usize, &str)> = spans.iter().map(|s| (s.start, s.end, s.entity_type.as_str())).collect();
        assert_eq!(got, vec![(0, 2, "PER"), (3, 4, "LOC"), (4, 5, "LOC"), (5, 6, "ORG")]);
    }

    #[test]
    fn entity_scores() {
        let gold = vec![strings(&["B-PER", "I-PER", "O", "B-LOC"])];
        assert_eq!(entity_prf(&gold, &gold).f1, 1.0);

        let all_o = vec![strings(&["O", "O", "O", "O"])];
        let r = entity_prf(&gold, &all_o);
        assert_eq!((r.recall, r.f1), (0.0, 0.0));

        // PER span right, LOC missed, one spurious ORG
        let pred = vec![strings(&["B-PER", "I-PER", "B-ORG", "O"])];
        let r = entity_prf(&gold, &pred);
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn write_then_read() {
        let corpus = TaggedCorpus::new(
            vec![strings(&["a", "b"]), strings(&["c"])],
            vec![strings(&["B-X", "I-X"]), strings(&["O"])],
        )
        .unwrap();
        let mut buf = Vec::new();
        corpus.write(&mut buf).unwrap();
        assert_eq!(TaggedCorpus::read(buf.as_slice()).unwrap(), corpus);
    }
}
