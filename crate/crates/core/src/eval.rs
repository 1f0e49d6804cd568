//! Perplexity and two-alternative forced-choice scoring.
//!
//! Every scored string is `prefix + " " + passage`, oriented for the
//! tokenizer as a single unit and preceded by the end-of-document token.
//! Only tokens overlapping the passage enter the average; the prefix
//! conditions them but is not scored.

use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_file, BenchmarkItem, Corpus, Orientation};
use crate::error::{Error, Result};
use crate::model::{self, Params, Real};
use crate::tokenizer::TokenizerModel;

pub const DEFAULT_PREFIX: &str =
    "You are a neuroscientist with deep knowledge in neuroscience. Here is an abstract from a neuroscience publication:";

/// Anything that assigns next-token log-probabilities.
pub trait LanguageModel: Sync {
    fn vocab_size(&self) -> usize;
    fn context_length(&self) -> usize;
    /// `log p(ids[i] | ids[..i])` for `i` in `1..ids.len()`.
    fn log_probs(&self, ids: &[u32]) -> Result<Vec<f64>>;
}

impl<T: Real> LanguageModel for Params<T> {
    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn context_length(&self) -> usize {
        self.config().context_length
    }

    fn log_probs(&self, ids: &[u32]) -> Result<Vec<f64>> {
        model::sequence_log_probs(self, ids)
    }
}

/// Assigns `1 / vocab_size` to every token.
#[derive(Debug, Clone, Copy)]
pub struct UniformModel {
    pub vocab_size: usize,
    pub context_length: usize,
}

impl LanguageModel for UniformModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn context_length(&self) -> usize {
        self.context_length
    }

    fn log_probs(&self, ids: &[u32]) -> Result<Vec<f64>> {
        Ok(vec![-(self.vocab_size as f64).ln(); ids.len().saturating_sub(1)])
    }
}

/// How sequences longer than the context window are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LongPolicy {
    /// Refuse with [`Error::SequenceTooLong`].
    #[default]
    Strict,
    /// Slide a full-context window forward by half its length, scoring
    /// each position once with as much left context as fits.
    Window,
}

/// `log p(ids[i] | ids[..i])` for `i >= 1`, windowed when the sequence
/// exceeds the model context.
pub fn windowed_log_probs<M: LanguageModel + ?Sized>(model: &M, ids: &[u32], policy: LongPolicy) -> Result<Vec<f64>> {
    let ctx = model.context_length();
    if ids.len() <= ctx + 1 {
        return model.log_probs(ids);
    }
    if policy == LongPolicy::Strict {
        return Err(Error::SequenceTooLong {
            len: ids.len() - 1,
            context_length: ctx,
        });
    }
    let stride = (ctx / 2).max(1);
    let mut out = Vec::with_capacity(ids.len() - 1);
    let mut start = 0;
    loop {
        let end = (start + ctx + 1).min(ids.len());
        let lp = model.log_probs(&ids[start..end])?;
        // Positions already scored by the previous window are skipped.
        let skip = (out.len() + 1) - (start + 1);
        out.extend_from_slice(&lp[skip..]);
        if end == ids.len() {
            break;
        }
        start += stride;
    }
    Ok(out)
}

/// Perplexity of `log_probs` (natural-log probabilities).
pub fn perplexity_from_log_probs(log_probs: &[f64]) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(Error::InvalidArgument("perplexity over zero tokens".into()));
    }
    let nll = -log_probs.iter().sum::<f64>() / log_probs.len() as f64;
    Ok(nll.exp())
}

/// Scoring context: a model, its tokenizer, and the prompt prefix.
pub struct Scorer<'a, M: ?Sized> {
    model: &'a M,
    tok: &'a TokenizerModel,
    prefix: String,
    policy: LongPolicy,
}

impl<'a, M: LanguageModel + ?Sized> Scorer<'a, M> {
    /// Fails unless the tokenizer was trained in `model_orientation` and
    /// its vocabulary matches the model's.
    pub fn new(model: &'a M, tok: &'a TokenizerModel, model_orientation: Orientation, prefix: &str) -> Result<Self> {
        tok.orientation().expect(model_orientation)?;
        if tok.vocab_size() != model.vocab_size() {
            return Err(Error::InvalidArgument(format!(
                "tokenizer has {} tokens, model expects {}",
                tok.vocab_size(),
                model.vocab_size()
            )));
        }
        Ok(Scorer {
            model,
            tok,
            prefix: prefix.to_owned(),
            policy: LongPolicy::Strict,
        })
    }

    pub fn with_policy(mut self, policy: LongPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn orientation(&self) -> Orientation {
        self.tok.orientation()
    }

    /// The exact string the model reads for `text`, and the byte range of
    /// the passage inside it.
    pub fn effective_context(&self, text: &str) -> (String, Range<usize>) {
        let (combined, span) = if self.prefix.is_empty() {
            (text.to_owned(), 0..text.len())
        } else {
            let start = self.prefix.len() + 1;
            (format!("{} {text}", self.prefix), start..start + text.len())
        };
        match self.orientation() {
            Orientation::Forward => (combined, span),
            Orientation::Backward => {
                let n = combined.len();
                (self.orientation().orient(&combined), n - span.end..n - span.start)
            }
        }
    }

    /// Per-token log-probabilities of the passage tokens of `text`.
    pub fn passage_log_probs(&self, text: &str) -> Result<Vec<f64>> {
        if text.trim().is_empty() {
            return Err(Error::InvalidArgument("cannot score empty text".into()));
        }
        let (ctx, span) = self.effective_context(text);
        let toks = self.tok.encode_with_offsets(&ctx);
        let mut ids = Vec::with_capacity(toks.len() + 1);
        ids.push(self.tok.eod_id());
        ids.extend(toks.iter().map(|(id, _)| *id));
        let lp = windowed_log_probs(self.model, &ids, self.policy)?;
        Ok(toks
            .iter()
            .zip(lp)
            .filter(|((_, r), _)| r.start < span.end && span.start < r.end)
            .map(|(_, l)| l)
            .collect())
    }

    pub fn perplexity(&self, text: &str) -> Result<f64> {
        perplexity_from_log_probs(&self.passage_log_probs(text)?)
    }

    pub fn score_item(&self, item: &BenchmarkItem) -> Result<ItemScore> {
        item.validate()?;
        let ppl_original = self.perplexity(&item.original)?;
        let ppl_altered = self.perplexity(&item.altered)?;
        Ok(ItemScore::decide(&item.id, ppl_original, ppl_altered))
    }

    /// Scores every item in parallel; output order follows input order.
    pub fn run_benchmark(&self, items: &[BenchmarkItem], meta: ModelMeta) -> Result<BenchmarkResult> {
        if items.is_empty() {
            return Err(Error::Empty("benchmark".into()));
        }
        let outcomes: Vec<_> = items.par_iter().map(|it| (it, self.score_item(it))).collect();
        let mut scores = Vec::new();
        let mut skipped = Vec::new();
        for (it, r) in outcomes {
            match r {
                Ok(s) => scores.push(s),
                Err(e) => skipped.push(SkippedItem {
                    item_id: it.id.clone(),
                    reason: e.to_string(),
                }),
            }
        }
        BenchmarkResult::new(scores, skipped, meta, &self.prefix)
    }
}

/// Convenience wrapper for one-off perplexity.
pub fn perplexity<M: LanguageModel + ?Sized>(
    model: &M,
    tok: &TokenizerModel,
    orientation: Orientation,
    text: &str,
    prefix: &str,
) -> Result<f64> {
    Scorer::new(model, tok, orientation, prefix)?.perplexity(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Original,
    Altered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub item_id: String,
    pub ppl_original: f64,
    pub ppl_altered: f64,
    pub chosen: Choice,
    pub correct: bool,
    pub confidence: f64,
}

impl ItemScore {
    /// The lower-perplexity passage wins; exact ties go to the altered one.
    pub fn decide(item_id: &str, ppl_original: f64, ppl_altered: f64) -> Self {
        let chosen = if ppl_original < ppl_altered {
            Choice::Original
        } else {
            Choice::Altered
        };
        ItemScore {
            item_id: item_id.to_owned(),
            ppl_original,
            ppl_altered,
            chosen,
            correct: chosen == Choice::Original,
            confidence: (ppl_original - ppl_altered).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub item_id: String,
    pub reason: String,
}

/// Identifies the model behind a result.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelMeta {
    pub label: String,
    pub orientation: Option<Orientation>,
    /// Parameter count.
    pub size: Option<usize>,
    pub checkpoint_hash: Option<String>,
    pub tokenizer_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub accuracy: f64,
    pub n_items: usize,
    pub n_scored: usize,
    pub n_skipped: usize,
    pub skipped: Vec<SkippedItem>,
    pub meta: ModelMeta,
    pub prefix: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    pub scores: Vec<ItemScore>,
    pub summary: BenchmarkSummary,
}

const SCORES_FILE: &str = "scores.jsonl";
const SUMMARY_FILE: &str = "summary.json";

impl BenchmarkResult {
    pub fn new(scores: Vec<ItemScore>, skipped: Vec<SkippedItem>, meta: ModelMeta, prefix: &str) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no item could be scored ({} skipped{})",
                skipped.len(),
                skipped.first().map(|s| format!("; first: {}", s.reason)).unwrap_or_default()
            )));
        }
        let accuracy = scores.iter().filter(|s| s.correct).count() as f64 / scores.len() as f64;
        Ok(BenchmarkResult {
            summary: BenchmarkSummary {
                accuracy,
                n_items: scores.len() + skipped.len(),
                n_scored: scores.len(),
                n_skipped: skipped.len(),
                skipped,
                meta,
                prefix: prefix.to_owned(),
            },
            scores,
        })
    }

    pub fn accuracy(&self) -> f64 {
        self.summary.accuracy
    }

    /// Writes `scores.jsonl` and `summary.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut lines = String::new();
        for s in &self.scores {
            lines.push_str(&serde_json::to_string(s)?);
            lines.push('\n');
        }
        write_file(&dir.join(SCORES_FILE), lines.as_bytes())?;
        write_file(&dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&self.summary)?.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let scores_path = dir.join(SCORES_FILE);
        let text = std::fs::read_to_string(&scores_path).map_err(|e| Error::io(&scores_path, e))?;
        let mut scores = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            scores.push(serde_json::from_str(line).map_err(|e| Error::Malformed {
                path: scores_path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        let summary_path = dir.join(SUMMARY_FILE);
        let raw = std::fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
        let summary: BenchmarkSummary = serde_json::from_str(&raw)?;
        if summary.n_scored != scores.len() {
            return Err(Error::Malformed {
                path: scores_path,
                line: 0,
                message: format!("summary lists {} scores, file holds {}", summary.n_scored, scores.len()),
            });
        }
        Ok(BenchmarkResult { scores, summary })
    }
}

/// Perplexity of each document under the model, windowing long documents.
pub fn document_perplexities<M: LanguageModel + ?Sized>(
    model: &M,
    tok: &TokenizerModel,
    model_orientation: Orientation,
    corpus: &Corpus,
) -> Result<Vec<(String, f64)>> {
    tok.orientation().expect(model_orientation)?;
    corpus.orientation().expect(model_orientation)?;
    corpus
        .documents()
        .par_iter()
        .map(|d| {
            let mut ids = vec![tok.eod_id()];
            ids.extend(tok.encode_ids(&d.text));
            let lp = windowed_log_probs(model, &ids, LongPolicy::Window)?;
            Ok((d.id.clone(), perplexity_from_log_probs(&lp)?))
        })
        .collect()
}
