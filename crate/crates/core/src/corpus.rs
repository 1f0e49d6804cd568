//! Corpus and benchmark ingestion, train/validation splitting, and the
//! character-level reversal transform.
//!
//! Reversal operates on Unicode scalar values. A corpus carries its
//! orientation so that a backward corpus can never be mistaken for a forward
//! one further down the pipeline.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the PRNG used for every seeded shuffle in the crate.
pub const SHUFFLE_PRNG: &str = "ChaCha8 (rand_chacha 0.9, seed_from_u64)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    #[default]
    Forward,
    Backward,
}

impl Orientation {
    pub fn flipped(self) -> Self {
        match self {
            Orientation::Forward => Orientation::Backward,
            Orientation::Backward => Orientation::Forward,
        }
    }

    /// Applies the orientation to a piece of forward text.
    pub fn orient(self, text: &str) -> String {
        match self {
            Orientation::Forward => text.to_owned(),
            Orientation::Backward => reverse_text(text),
        }
    }

    /// Fails unless `self == expected`.
    pub fn expect(self, expected: Orientation) -> Result<()> {
        if self == expected {
            Ok(())
        } else {
            Err(Error::OrientationMismatch {
                expected,
                found: self,
            })
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::Forward => "forward",
            Orientation::Backward => "backward",
        })
    }
}

impl std::str::FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" | "fwd" => Ok(Orientation::Forward),
            "backward" | "bwd" => Ok(Orientation::Backward),
            other => Err(Error::InvalidArgument(format!("unknown orientation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
    orientation: Orientation,
}

impl Corpus {
    /// Builds a corpus, validating id uniqueness and non-empty text.
    pub fn new(documents: Vec<Document>, orientation: Orientation) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::DuplicateId {
                    id: doc.id.clone(),
                    line: i + 1,
                });
            }
            if doc.text.trim().is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "document `{}` has empty text",
                    doc.id
                )));
            }
        }
        Ok(Corpus {
            documents,
            orientation,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().map(|d| d.id.as_str())
    }

    /// Writes the corpus as JSONL. Backward corpora tag every record with
    /// their orientation so the file round-trips through [`load_corpus`].
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Record<'a> {
            id: &'a str,
            text: &'a str,
            #[serde(skip_serializing_if = "Option::is_none")]
            orientation: Option<Orientation>,
        }
        let orientation = match self.orientation {
            Orientation::Forward => None,
            Orientation::Backward => Some(Orientation::Backward),
        };
        let mut out = Vec::new();
        for doc in &self.documents {
            serde_json::to_writer(
                &mut out,
                &Record {
                    id: &doc.id,
                    text: &doc.text,
                    orientation,
                },
            )?;
            out.push(b'\n');
        }
        write_file(path, &out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    TextDir,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "text_dir" | "text-dir" | "dir" => Ok(CorpusFormat::TextDir),
            other => Err(Error::InvalidArgument(format!("unknown corpus format `{other}`"))),
        }
    }
}

#[derive(Deserialize)]
struct CorpusRecord {
    id: String,
    text: String,
    #[serde(default)]
    orientation: Option<Orientation>,
}

/// Loads a corpus from disk, preserving on-disk order.
///
/// Plain files load as forward corpora. Records written by
/// [`Corpus::save_jsonl`] for a backward corpus carry an `orientation` field,
/// which must then agree across every line.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    match format {
        CorpusFormat::Jsonl => load_corpus_jsonl(path),
        CorpusFormat::TextDir => load_corpus_dir(path),
    }
}

fn load_corpus_jsonl(path: &Path) -> Result<Corpus> {
    let mut documents = Vec::new();
    let mut seen = HashSet::new();
    let mut orientation: Option<Orientation> = None;
    for (line_no, line) in read_lines(path)? {
        let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_owned(),
            line: line_no,
            message: e.to_string(),
        })?;
        if rec.text.trim().is_empty() {
            return Err(Error::Malformed {
                path: path.to_owned(),
                line: line_no,
                message: format!("document `{}` has empty text", rec.id),
            });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId {
                id: rec.id,
                line: line_no,
            });
        }
        let rec_orientation = rec.orientation.unwrap_or_default();
        match orientation {
            None => orientation = Some(rec_orientation),
            Some(o) if o != rec_orientation => {
                return Err(Error::Malformed {
                    path: path.to_owned(),
                    line: line_no,
                    message: format!("orientation {rec_orientation} differs from corpus orientation {o}"),
                })
            }
            Some(_) => {}
        }
        documents.push(Document {
            id: rec.id,
            text: rec.text,
        });
    }
    if documents.is_empty() {
        return Err(Error::Empty(path.display().to_string()));
    }
    Ok(Corpus {
        documents,
        orientation: orientation.unwrap_or_default(),
    })
}

fn load_corpus_dir(path: &Path) -> Result<Corpus> {
    let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let p = entry.path();
        if p.extension().and_then(|e| e.to_str()) == Some("txt") && p.is_file() {
            files.push(p);
        }
    }
    // Directory iteration order is platform-dependent; sort by file name.
    files.sort();
    let mut documents = Vec::with_capacity(files.len());
    for p in files {
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let id = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidArgument(format!("non UTF-8 file name {}", p.display())))?
            .to_owned();
        documents.push(Document { id, text });
    }
    if documents.is_empty() {
        return Err(Error::Empty(path.display().to_string()));
    }
    Corpus::new(documents, Orientation::Forward)
}

/// Splits a corpus into train and validation parts by whole documents.
///
/// `round(train_fraction * N)` documents go to training, chosen by a seeded
/// ChaCha8 shuffle of document indices. Both parts keep the source order.
pub fn split_corpus(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n = corpus.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n < 2 || n_train == 0 || n_train >= n {
        return Err(Error::InvalidArgument(format!(
            "corpus of {n} documents cannot be split with fraction {train_fraction} into two non-empty parts"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(n_train), Vec::with_capacity(n - n_train));
    for (doc, is_train) in corpus.documents.iter().zip(in_train) {
        if is_train {
            train.push(doc.clone());
        } else {
            val.push(doc.clone());
        }
    }
    Ok((
        Corpus {
            documents: train,
            orientation: corpus.orientation,
        },
        Corpus {
            documents: val,
            orientation: corpus.orientation,
        },
    ))
}

/// Reverses a string by Unicode scalar values.
pub fn reverse_text(text: &str) -> String {
    text.chars().rev().collect()
}

/// Reverses every document of a forward corpus.
pub fn reverse_corpus(corpus: &Corpus) -> Result<Corpus> {
    corpus.orientation.expect(Orientation::Forward)?;
    Ok(Corpus {
        documents: corpus
            .documents
            .iter()
            .map(|d| Document {
                id: d.id.clone(),
                text: reverse_text(&d.text),
            })
            .collect(),
        orientation: Orientation::Backward,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub original: String,
    pub altered: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subfield: Option<String>,
}

impl BenchmarkItem {
    pub fn validate(&self) -> Result<()> {
        if self.original.trim().is_empty() || self.altered.trim().is_empty() {
            return Err(Error::InvalidArgument(format!("item `{}` has an empty passage", self.id)));
        }
        if self.original == self.altered {
            return Err(Error::InvalidArgument(format!(
                "item `{}`: original and altered passages are identical",
                self.id
            )));
        }
        Ok(())
    }
}

/// Loads a benchmark JSONL file in file order.
pub fn load_benchmark(path: &Path) -> Result<Vec<BenchmarkItem>> {
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in read_lines(path)? {
        let mut item: BenchmarkItem = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_owned(),
            line: line_no,
            message: e.to_string(),
        })?;
        if item.subfield.as_deref().is_some_and(|s| s.trim().is_empty()) {
            item.subfield = None;
        }
        item.validate().map_err(|e| Error::Malformed {
            path: path.to_owned(),
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(item.id.clone()) {
            return Err(Error::DuplicateId {
                id: item.id,
                line: line_no,
            });
        }
        items.push(item);
    }
    if items.is_empty() {
        return Err(Error::Empty(path.display().to_string()));
    }
    Ok(items)
}

pub fn save_benchmark(items: &[BenchmarkItem], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    write_file(path, &out)
}

/// Non-blank lines with their 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            lines.push((i + 1, line));
        }
    }
    Ok(lines)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
