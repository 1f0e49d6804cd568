//! Byte-level BPE tokenizer trained from scratch.
//!
//! The base alphabet is the 256 byte values plus an end-of-document marker,
//! so any string encodes without unknown tokens. Text is first split into
//! whitespace-delimited pieces (a word keeps one leading whitespace character,
//! GPT-2 style) and merges never cross piece boundaries. Merges are learned
//! greedily: the most frequent adjacent pair wins, ties go to the
//! lexicographically smallest `(left, right)` byte strings, and pairs seen
//! fewer than twice are never merged.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{reverse_text, write_file, Corpus, Orientation};
use crate::error::{Error, Result};

pub const EOD_TOKEN: &str = "<|endoftext|>";
/// Number of byte tokens; ids `0..256` are the raw bytes in value order.
pub const NUM_BYTE_TOKENS: usize = 256;
/// Id of the end-of-document marker.
pub const EOD_ID: u32 = NUM_BYTE_TOKENS as u32;
/// Bytes plus the end-of-document marker.
pub const BASE_ALPHABET_LEN: usize = NUM_BYTE_TOKENS + 1;
pub const TIE_BREAK_RULE: &str = "max pair count; ties by lexicographic (left bytes, right bytes)";
pub const MIN_PAIR_COUNT: u64 = 2;
const FORMAT_VERSION: u32 = 1;

/// GPT-2's reversible byte to printable-character table.
fn byte_encoder() -> &'static [char; 256] {
    static TABLE: OnceLock<[char; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = ['\0'; 256];
        let printable = |b: u32| (0x21..=0x7e).contains(&b) || (0xa1..=0xac).contains(&b) || (0xae..=0xff).contains(&b);
        let mut next = 256u32;
        for b in 0..256u32 {
            table[b as usize] = if printable(b) {
                char::from_u32(b).unwrap()
            } else {
                let c = char::from_u32(next).unwrap();
                next += 1;
                c
            };
        }
        table
    })
}

fn byte_decoder() -> &'static HashMap<char, u8> {
    static TABLE: OnceLock<HashMap<char, u8>> = OnceLock::new();
    TABLE.get_or_init(|| {
        byte_encoder()
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect()
    })
}

/// Printable escape of a byte string.
pub fn escape_bytes(bytes: &[u8]) -> String {
    let table = byte_encoder();
    bytes.iter().map(|&b| table[b as usize]).collect()
}

pub fn unescape_token(s: &str) -> Result<Vec<u8>> {
    let table = byte_decoder();
    s.chars()
        .map(|c| {
            table
                .get(&c)
                .copied()
                .ok_or_else(|| Error::InvalidTokenizer(format!("character {c:?} is not a byte escape")))
        })
        .collect()
}

/// Splits text into merge-isolated pieces, returning byte ranges.
///
/// Runs of whitespace and non-whitespace alternate; a whitespace run that
/// precedes a word gives its last character to that word.
pub fn pretokenize(text: &str) -> Vec<Range<usize>> {
    let mut runs: Vec<(Range<usize>, bool)> = Vec::new();
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        let end = i + c.len_utf8();
        match runs.last_mut() {
            Some((r, w)) if *w == ws => r.end = end,
            _ => runs.push((i..end, ws)),
        }
    }
    let mut pieces = Vec::with_capacity(runs.len());
    let mut carry: Option<usize> = None;
    for (k, (r, ws)) in runs.iter().enumerate() {
        if *ws {
            let followed_by_word = k + 1 < runs.len();
            if followed_by_word {
                let last_start = text[r.clone()].char_indices().last().map(|(i, _)| r.start + i).unwrap();
                if last_start > r.start {
                    pieces.push(r.start..last_start);
                }
                carry = Some(last_start);
            } else {
                pieces.push(r.clone());
            }
        } else {
            let start = carry.take().unwrap_or(r.start);
            pieces.push(start..r.end);
        }
    }
    pieces
}

#[derive(Debug, Clone)]
pub struct TokenizerModel {
    orientation: Orientation,
    vocab_size: usize,
    /// Byte content of each token; the end-of-document entry is empty.
    tokens: Vec<Vec<u8>>,
    merges: Vec<(u32, u32)>,
    merge_ranks: HashMap<(u32, u32), u32>,
    id: String,
}

/// A sequence of token ids tied to the tokenizer that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub tokenizer_id: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    version: u32,
    orientation: Orientation,
    vocab_size: usize,
    vocab: Vec<String>,
    merges: Vec<(String, String)>,
    #[serde(default)]
    tie_break: Option<String>,
}

impl TokenizerModel {
    /// A tokenizer with no merges: bytes plus the end-of-document marker.
    pub fn byte_level(orientation: Orientation, vocab_size: usize) -> Result<Self> {
        Self::from_merges(orientation, vocab_size, Vec::new())
    }

    fn from_merges(orientation: Orientation, vocab_size: usize, merges: Vec<(u32, u32)>) -> Result<Self> {
        if vocab_size < BASE_ALPHABET_LEN {
            return Err(Error::InvalidArgument(format!(
                "vocab size {vocab_size} is smaller than the base alphabet ({BASE_ALPHABET_LEN})"
            )));
        }
        if BASE_ALPHABET_LEN + merges.len() > vocab_size {
            return Err(Error::InvalidTokenizer(format!(
                "{} merges exceed vocab size {vocab_size}",
                merges.len()
            )));
        }
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        tokens.push(Vec::new());
        let mut seen: HashSet<Vec<u8>> = tokens[..NUM_BYTE_TOKENS].iter().cloned().collect();
        seen.insert(EOD_TOKEN.as_bytes().to_vec());
        let mut merge_ranks = HashMap::with_capacity(merges.len());
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let known = tokens.len() as u32;
            if a >= known || b >= known || a == EOD_ID || b == EOD_ID {
                return Err(Error::InvalidTokenizer(format!(
                    "merge {rank} references a token that is not yet in the vocabulary"
                )));
            }
            let mut product = tokens[a as usize].clone();
            product.extend_from_slice(&tokens[b as usize]);
            if !seen.insert(product.clone()) {
                return Err(Error::InvalidTokenizer(format!(
                    "merge {rank} produces duplicate token {:?}",
                    escape_bytes(&product)
                )));
            }
            if merge_ranks.insert((a, b), rank as u32).is_some() {
                return Err(Error::InvalidTokenizer(format!("merge {rank} is repeated")));
            }
            tokens.push(product);
        }
        let id = tokenizer_hash(orientation, vocab_size, &merges);
        Ok(TokenizerModel {
            orientation,
            vocab_size,
            tokens,
            merges,
            merge_ranks,
            id,
        })
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    /// Configured vocabulary budget.
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Number of tokens actually in the vocabulary.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Content hash identifying this tokenizer.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn eod_id(&self) -> u32 {
        EOD_ID
    }

    /// Raw bytes of a token. The end-of-document marker maps to its literal string.
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        if id == EOD_ID {
            return Some(EOD_TOKEN.as_bytes());
        }
        self.tokens.get(id as usize).map(|t| t.as_slice())
    }

    /// Token bytes as they read in forward text: backward tokens are
    /// character-reversed, the end-of-document marker never is.
    fn forward_token_bytes(&self, id: u32) -> Vec<u8> {
        let bytes = self.token_bytes(id).expect("id in range");
        match self.orientation {
            Orientation::Backward if id != EOD_ID => reverse_token_bytes(bytes),
            _ => bytes.to_vec(),
        }
    }

    /// Printable vocabulary strings in id order.
    pub fn vocabulary(&self) -> Vec<String> {
        (0..self.tokens.len() as u32)
            .map(|id| {
                if id == EOD_ID {
                    EOD_TOKEN.to_owned()
                } else {
                    escape_bytes(&self.tokens[id as usize])
                }
            })
            .collect()
    }

    /// Merge pairs as byte strings, in learned order.
    pub fn merge_strings(&self) -> Vec<(Vec<u8>, Vec<u8>)> {
        self.merges
            .iter()
            .map(|&(a, b)| (self.tokens[a as usize].clone(), self.tokens[b as usize].clone()))
            .collect()
    }

    /// The same tokenizer restricted to its first `k` merges.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.merges.len());
        Self::from_merges(self.orientation, self.vocab_size, self.merges[..k].to_vec())
            .expect("a prefix of valid merges is valid")
    }

    fn encode_piece(&self, bytes: &[u8], out: &mut Vec<u32>) {
        let mut symbols: Vec<u32> = bytes.iter().map(|&b| b as u32).collect();
        while symbols.len() > 1 {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.merge_ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                .min_by_key(|&(r, _)| r);
            let Some((rank, pair)) = best else { break };
            let new_id = (BASE_ALPHABET_LEN as u32) + rank;
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && (symbols[i], symbols[i + 1]) == pair {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(symbols[i]);
                    i += 1;
                }
            }
            symbols = merged;
        }
        out.extend_from_slice(&symbols);
    }

    pub fn encode_ids(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::with_capacity(text.len() / 2);
        for piece in pretokenize(text) {
            self.encode_piece(text[piece].as_bytes(), &mut out);
        }
        out
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        TokenSequence {
            ids: self.encode_ids(text),
            tokenizer_id: self.id.clone(),
        }
    }

    /// Encodes and reports the byte span each token covers in `text`.
    pub fn encode_with_offsets(&self, text: &str) -> Vec<(u32, Range<usize>)> {
        let mut out = Vec::new();
        let mut ids = Vec::new();
        for piece in pretokenize(text) {
            ids.clear();
            self.encode_piece(text[piece.clone()].as_bytes(), &mut ids);
            let mut pos = piece.start;
            for &id in &ids {
                let len = self.tokens[id as usize].len();
                out.push((id, pos..pos + len));
                pos += len;
            }
        }
        out
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let bytes = self.token_bytes(id).ok_or(Error::TokenOutOfRange {
                id,
                vocab_size: self.tokens.len(),
            })?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    /// Decodes ids to text. Byte sequences that are not valid UTF-8 (possible
    /// only for id lists that did not come from [`encode`](Self::encode)) are
    /// replaced lossily.
    pub fn decode_ids(&self, ids: &[u32]) -> Result<String> {
        let bytes = self.decode_bytes(ids)?;
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    pub fn decode(&self, seq: &TokenSequence) -> Result<String> {
        if seq.tokenizer_id != self.id {
            return Err(Error::InvalidArgument(format!(
                "sequence was produced by tokenizer {}, not {}",
                seq.tokenizer_id, self.id
            )));
        }
        self.decode_ids(&seq.ids)
    }

    pub fn to_json(&self) -> Result<String> {
        let merges = self
            .merges
            .iter()
            .map(|&(a, b)| (escape_bytes(&self.tokens[a as usize]), escape_bytes(&self.tokens[b as usize])))
            .collect();
        let file = TokenizerFile {
            version: FORMAT_VERSION,
            orientation: self.orientation,
            vocab_size: self.vocab_size,
            vocab: self.vocabulary(),
            merges,
            tie_break: Some(TIE_BREAK_RULE.to_owned()),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parses and validates a tokenizer file.
    pub fn from_json(s: &str) -> Result<Self> {
        let file: TokenizerFile = serde_json::from_str(s)?;
        if file.version != FORMAT_VERSION {
            return Err(Error::InvalidTokenizer(format!("unsupported version {}", file.version)));
        }
        if file.vocab.len() < BASE_ALPHABET_LEN {
            return Err(Error::InvalidTokenizer("vocabulary is missing base tokens".into()));
        }
        for b in 0..NUM_BYTE_TOKENS {
            if unescape_token(&file.vocab[b])? != [b as u8] {
                return Err(Error::InvalidTokenizer(format!("vocab entry {b} is not byte {b}")));
            }
        }
        if file.vocab[NUM_BYTE_TOKENS] != EOD_TOKEN {
            return Err(Error::InvalidTokenizer("missing end-of-document marker".into()));
        }
        let mut index: HashMap<Vec<u8>, u32> = HashMap::new();
        for (i, tok) in file.vocab.iter().enumerate().take(NUM_BYTE_TOKENS) {
            index.insert(unescape_token(tok)?, i as u32);
        }
        let mut merges = Vec::with_capacity(file.merges.len());
        for (rank, (l, r)) in file.merges.iter().enumerate() {
            let (lb, rb) = (unescape_token(l)?, unescape_token(r)?);
            let lookup = |b: &[u8]| {
                index.get(b).copied().ok_or_else(|| {
                    Error::InvalidTokenizer(format!("merge {rank} references unknown token {:?}", escape_bytes(b)))
                })
            };
            let pair = (lookup(&lb)?, lookup(&rb)?);
            let mut product = lb;
            product.extend_from_slice(&rb);
            let expected = file
                .vocab
                .get(BASE_ALPHABET_LEN + rank)
                .ok_or_else(|| Error::InvalidTokenizer("vocabulary shorter than merge list".into()))?;
            if unescape_token(expected)? != product {
                return Err(Error::InvalidTokenizer(format!(
                    "vocab entry {} does not match merge {rank}",
                    BASE_ALPHABET_LEN + rank
                )));
            }
            index.insert(product, (BASE_ALPHABET_LEN + rank) as u32);
            merges.push(pair);
        }
        if file.vocab.len() != BASE_ALPHABET_LEN + merges.len() {
            return Err(Error::InvalidTokenizer(
                "vocabulary length differs from base alphabet plus merges".into(),
            ));
        }
        Self::from_merges(file.orientation, file.vocab_size, merges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

fn tokenizer_hash(orientation: Orientation, vocab_size: usize, merges: &[(u32, u32)]) -> String {
    let mut h = Sha256::new();
    h.update(orientation.to_string().as_bytes());
    h.update((vocab_size as u64).to_le_bytes());
    for &(a, b) in merges {
        h.update(a.to_le_bytes());
        h.update(b.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

#[derive(PartialEq, Eq)]
struct Candidate {
    count: u64,
    left: Vec<u8>,
    right: Vec<u8>,
    pair: (u32, u32),
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.left.cmp(&self.left))
            .then_with(|| other.right.cmp(&self.right))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Learns BPE merges on a corpus until the vocabulary holds `vocab_size`
/// tokens or no pair occurs at least twice.
///
/// A pair whose concatenation already exists as a token is never merged, so
/// the vocabulary stays free of duplicates.
pub fn train_bpe(corpus: &Corpus, vocab_size: usize) -> Result<TokenizerModel> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus".into()));
    }
    if vocab_size < BASE_ALPHABET_LEN {
        return Err(Error::InvalidArgument(format!(
            "vocab size {vocab_size} is smaller than the base alphabet ({BASE_ALPHABET_LEN})"
        )));
    }

    let mut piece_counts: HashMap<&[u8], u64> = HashMap::new();
    for doc in corpus.documents() {
        for r in pretokenize(&doc.text) {
            *piece_counts.entry(doc.text[r].as_bytes()).or_default() += 1;
        }
    }
    let mut unique: Vec<(&[u8], u64)> = piece_counts.into_iter().collect();
    unique.sort_unstable();
    let counts: Vec<u64> = unique.iter().map(|&(_, c)| c).collect();
    let mut words: Vec<Vec<u32>> = unique
        .iter()
        .map(|(w, _)| w.iter().map(|&b| b as u32).collect())
        .collect();

    let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    tokens.push(EOD_TOKEN.as_bytes().to_vec());
    let mut existing: HashSet<Vec<u8>> = tokens.iter().cloned().collect();

    let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut pair_words: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in w.windows(2) {
            let pair = (p[0], p[1]);
            *pair_counts.entry(pair).or_default() += counts[wi];
            pair_words.entry(pair).or_default().insert(wi);
        }
    }

    let candidate = |pair: (u32, u32), count: u64, tokens: &[Vec<u8>]| Candidate {
        count,
        left: tokens[pair.0 as usize].clone(),
        right: tokens[pair.1 as usize].clone(),
        pair,
    };
    let mut heap: BinaryHeap<Candidate> = pair_counts
        .iter()
        .map(|(&pair, &count)| candidate(pair, count, &tokens))
        .collect();
    let mut banned: HashSet<(u32, u32)> = HashSet::new();
    let mut merges: Vec<(u32, u32)> = Vec::new();

    while tokens.len() < vocab_size {
        let Some(top) = heap.pop() else { break };
        let current = pair_counts.get(&top.pair).copied().unwrap_or(0);
        if current != top.count || banned.contains(&top.pair) {
            continue;
        }
        if current < MIN_PAIR_COUNT {
            break;
        }
        let mut product = top.left.clone();
        product.extend_from_slice(&top.right);
        if existing.contains(&product) {
            banned.insert(top.pair);
            continue;
        }
        let new_id = tokens.len() as u32;
        existing.insert(product.clone());
        tokens.push(product);
        merges.push(top.pair);

        let mut affected: Vec<usize> = pair_words.remove(&top.pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        let mut touched: HashSet<(u32, u32)> = HashSet::new();
        for wi in affected {
            let word = &mut words[wi];
            if !word.windows(2).any(|p| (p[0], p[1]) == top.pair) {
                continue;
            }
            let c = counts[wi];
            for p in word.windows(2) {
                let pair = (p[0], p[1]);
                let e = pair_counts.get_mut(&pair).expect("counted pair");
                *e -= c;
                touched.insert(pair);
            }
            let mut merged = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && (word[i], word[i + 1]) == top.pair {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(word[i]);
                    i += 1;
                }
            }
            *word = merged;
            for p in word.windows(2) {
                let pair = (p[0], p[1]);
                *pair_counts.entry(pair).or_default() += c;
                pair_words.entry(pair).or_default().insert(wi);
                touched.insert(pair);
            }
        }
        pair_counts.remove(&top.pair);
        let mut touched: Vec<(u32, u32)> = touched.into_iter().collect();
        touched.sort_unstable();
        for pair in touched {
            match pair_counts.get(&pair).copied() {
                Some(0) => {
                    pair_counts.remove(&pair);
                }
                Some(count) => heap.push(candidate(pair, count, &tokens)),
                None => {}
            }
        }
    }

    TokenizerModel::from_merges(corpus.orientation(), vocab_size, merges)
}

/// Character-level reversal of a token's text. Bytes that do not form valid
/// UTF-8 are kept as single units.
fn reverse_token_bytes(bytes: &[u8]) -> Vec<u8> {
    let mut units: Vec<&[u8]> = Vec::new();
    for chunk in bytes.utf8_chunks() {
        let valid = chunk.valid();
        let mut start = 0;
        for c in valid.chars() {
            let end = start + c.len_utf8();
            units.push(&valid.as_bytes()[start..end]);
            start = end;
        }
        for b in chunk.invalid().chunks(1) {
            units.push(b);
        }
    }
    units.into_iter().rev().flatten().copied().collect()
}

/// Shared-vocabulary summary for a forward/backward tokenizer pair.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OverlapReport {
    pub shared: usize,
    pub denominator: usize,
    pub shared_fraction: f64,
    pub forward_only: Vec<String>,
    pub backward_only: Vec<String>,
}

impl fmt::Display for OverlapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "shared {}/{} ({:.1}%), forward-only {}, backward-only {}",
            self.shared,
            self.denominator,
            100.0 * self.shared_fraction,
            self.forward_only.len(),
            self.backward_only.len()
        )
    }
}

/// Compares a forward and a backward vocabulary after reversing every
/// backward token. The fraction is taken over the larger vocabulary.
pub fn vocab_overlap(fwd: &TokenizerModel, bwd: &TokenizerModel) -> Result<OverlapReport> {
    fwd.orientation().expect(Orientation::Forward)?;
    bwd.orientation().expect(Orientation::Backward)?;
    let fwd_set: HashSet<Vec<u8>> = (0..fwd.len() as u32).map(|i| fwd.token_bytes(i).unwrap().to_vec()).collect();
    let bwd_set: HashSet<Vec<u8>> = (0..bwd.len() as u32).map(|i| bwd.forward_token_bytes(i)).collect();
    let shared = fwd_set.intersection(&bwd_set).count();
    let denominator = fwd.len().max(bwd.len());
    let mut forward_only: Vec<String> = fwd_set.difference(&bwd_set).map(|b| escape_bytes(b)).collect();
    let mut backward_only: Vec<String> = bwd_set.difference(&fwd_set).map(|b| escape_bytes(b)).collect();
    forward_only.sort();
    backward_only.sort();
    Ok(OverlapReport {
        shared,
        denominator,
        shared_fraction: shared as f64 / denominator as f64,
        forward_only,
        backward_only,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DomainTokenReport {
    pub orientation: Orientation,
    pub matched_fraction: f64,
    pub matched: Vec<String>,
}

fn normalize_term(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Fraction of the vocabulary whose normalized text (read forward) is a
/// wordlist term. Matching is case-insensitive and ignores surrounding
/// whitespace.
pub fn classify_domain_tokens(tok: &TokenizerModel, wordlist: &HashSet<String>) -> Result<DomainTokenReport> {
    if wordlist.is_empty() {
        return Err(Error::InvalidArgument("empty wordlist".into()));
    }
    let terms: HashSet<String> = wordlist.iter().map(|w| normalize_term(w)).collect();
    let mut matched = Vec::new();
    for id in 0..tok.len() as u32 {
        let bytes = tok.forward_token_bytes(id);
        let text = String::from_utf8_lossy(&bytes);
        if terms.contains(&normalize_term(&text)) {
            matched.push(text.into_owned());
        }
    }
    Ok(DomainTokenReport {
        orientation: tok.orientation(),
        matched_fraction: matched.len() as f64 / tok.len() as f64,
        matched,
    })
}

/// Reads a wordlist file: one term per line, blank lines ignored.
pub fn load_wordlist(path: &Path) -> Result<HashSet<String>> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(s.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

/// Reverses text when `orientation` is backward; used to put forward text
/// into a tokenizer's reading order.
pub fn in_reading_order(tok: &TokenizerModel, text: &str) -> String {
    match tok.orientation() {
        Orientation::Forward => text.to_owned(),
        Orientation::Backward => reverse_text(text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{reverse_corpus, Document};
    use proptest::prelude::*;

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Document {
                    id: i.to_string(),
                    text: t.to_string(),
                })
                .collect(),
            Orientation::Forward,
        )
        .unwrap()
    }

    fn merge_strs(tok: &TokenizerModel) -> Vec<(String, String)> {
        tok.merge_strings()
            .into_iter()
            .map(|(a, b)| (String::from_utf8(a).unwrap(), String::from_utf8(b).unwrap()))
            .collect()
    }

    #[test]
    fn pretokenize_attaches_one_leading_space() {
        let text = "ab  cd\nef ";
        let pieces: Vec<&str> = pretokenize(text).into_iter().map(|r| &text[r]).collect();
        assert_eq!(pieces, ["ab", " ", " cd", "\nef", " "]);
        assert!(pretokenize("").is_empty());
    }

    #[test]
    fn escape_table_is_a_bijection() {
        let all: Vec<u8> = (0..=255).collect();
        let s = escape_bytes(&all);
        assert_eq!(s.chars().count(), 256);
        assert_eq!(unescape_token(&s).unwrap(), all);
        assert_eq!(escape_bytes(b" a"), "\u{120}a");
    }

    #[test]
    fn first_merges_on_classic_example() {
        let tok = train_bpe(&corpus(&["aaabdaaabac"]), BASE_ALPHABET_LEN + 3).unwrap();
        let merges = merge_strs(&tok);
        // pair counts: aa 4, ab 2, ..., then aa+a 2, aa+ab 2 ...
        assert_eq!(merges[0], ("a".into(), "a".into()));
        assert_eq!(merges.len(), 3);
    }

    #[test]
    fn single_pair_corpus() {
        let tok = train_bpe(&corpus(&["aaaa"]), BASE_ALPHABET_LEN + 5).unwrap();
        let merges = merge_strs(&tok);
        assert_eq!(merges[0], ("a".into(), "a".into()));
        // "aa aa" -> (aa, aa) occurs once, below the minimum count.
        assert_eq!(merges.len(), 1);
    }

    #[test]
    fn zero_merge_budget() {
        let tok = train_bpe(&corpus(&["hello hello"]), BASE_ALPHABET_LEN).unwrap();
        assert!(tok.merges().is_empty());
        assert_eq!(tok.len(), BASE_ALPHABET_LEN);
        assert_eq!(tok.encode_ids("ab"), vec![b'a' as u32, b'b' as u32]);
    }

    #[test]
    fn vocab_below_alphabet_is_rejected() {
        assert!(train_bpe(&corpus(&["x"]), 10).is_err());
    }

    #[test]
    fn merges_do_not_cross_whitespace() {
        let tok = train_bpe(&corpus(&["a b a b a b a b"]), BASE_ALPHABET_LEN + 10).unwrap();
        for (l, r) in merge_strs(&tok) {
            let joined = format!("{l}{r}");
            assert!(!joined.trim_start().contains(' '), "{joined:?}");
        }
    }

    #[test]
    fn decode_basics() {
        let tok = train_bpe(&corpus(&["the cat the hat"]), 300).unwrap();
        assert_eq!(tok.decode_ids(&[]).unwrap(), "");
        assert_eq!(tok.decode_ids(&[b'q' as u32]).unwrap(), "q");
        assert!(matches!(
            tok.decode_ids(&[tok.len() as u32]),
            Err(Error::TokenOutOfRange { .. })
        ));
        let seq = tok.encode("the hat");
        assert_eq!(tok.decode(&seq).unwrap(), "the hat");
    }

    #[test]
    fn offsets_cover_text() {
        let tok = train_bpe(&corpus(&["neurons fire neurons fire"]), 300).unwrap();
        let text = "neurons  fire é";
        let spans = tok.encode_with_offsets(text);
        let mut pos = 0;
        for (_, r) in &spans {
            assert_eq!(r.start, pos);
            pos = r.end;
        }
        assert_eq!(pos, text.len());
        let ids: Vec<u32> = spans.iter().map(|(i, _)| *i).collect();
        assert_eq!(ids, tok.encode_ids(text));
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let tok = train_bpe(&corpus(&["spike spike spiking synapse synapses"]), 290).unwrap();
        let json = tok.to_json().unwrap();
        let back = TokenizerModel::from_json(&json).unwrap();
        assert_eq!(back.merges(), tok.merges());
        assert_eq!(back.id(), tok.id());

        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["vocab"][BASE_ALPHABET_LEN] = serde_json::Value::String("zzz".into());
        assert!(TokenizerModel::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn overlap_identity_and_unique_lists() {
        // Palindromic tokens read the same in both orientations.
        let c = corpus(&["aaaaaaaa"]);
        let fwd = train_bpe(&c, 262).unwrap();
        let bwd = train_bpe(&reverse_corpus(&c).unwrap(), 262).unwrap();
        assert_eq!(fwd.merges().len(), 2);
        let rep = vocab_overlap(&fwd, &bwd).unwrap();
        assert_eq!(rep.shared_fraction, 1.0);
        assert!(rep.forward_only.is_empty() && rep.backward_only.is_empty());
        assert!(vocab_overlap(&bwd, &fwd).is_err());

        let other = reverse_corpus(&corpus(&["qq qq qq"])).unwrap();
        let bwd2 = train_bpe(&other, 258).unwrap();
        let rep2 = vocab_overlap(&fwd, &bwd2).unwrap();
        assert_eq!(rep2.forward_only, ["aa", "aaaa"]);
        assert_eq!(rep2.backward_only, ["qq"]);
        assert_eq!(rep2.shared, BASE_ALPHABET_LEN);
    }

    #[test]
    fn backward_tokens_are_compared_reversed() {
        let c = corpus(&["xay xay xay"]);
        let fwd = train_bpe(&c, 258).unwrap();
        let bwd = train_bpe(&reverse_corpus(&c).unwrap(), 258).unwrap();
        // forward learns "ay"; backward learns "ax", which reads "xa" forward.
        let rep = vocab_overlap(&fwd, &bwd).unwrap();
        assert_eq!(rep.forward_only, ["ay"]);
        assert_eq!(rep.backward_only, ["xa"]);
    }

    #[test]
    fn domain_classification() {
        let tok = train_bpe(&corpus(&["cortex cortex cortex"]), 270).unwrap();
        let all: HashSet<String> = (0..tok.len() as u32)
            .map(|i| String::from_utf8_lossy(tok.token_bytes(i).unwrap()).into_owned())
            .collect();
        let rep = classify_domain_tokens(&tok, &all).unwrap();
        assert_eq!(rep.matched_fraction, 1.0);
        let none: HashSet<String> = ["zzzzzz".to_string()].into();
        assert_eq!(classify_domain_tokens(&tok, &none).unwrap().matched_fraction, 0.0);
        assert!(classify_domain_tokens(&tok, &HashSet::new()).is_err());

        let bwd = train_bpe(&reverse_corpus(&corpus(&["cortex cortex cortex"])).unwrap(), 270).unwrap();
        let terms: HashSet<String> = ["CORTEX".to_string()].into();
        let rep = classify_domain_tokens(&bwd, &terms).unwrap();
        assert!(rep.matched.iter().any(|t| t.trim() == "cortex"), "{:?}", rep.matched);
    }

    proptest! {
        #[test]
        fn roundtrip_arbitrary_unicode(s in any::<String>()) {
            let tok = train_bpe(&corpus(&["the theory of the thermal therapist é é"]), 280).unwrap();
            prop_assert_eq!(tok.decode_ids(&tok.encode_ids(&s)).unwrap(), s);
        }

        #[test]
        fn compression_is_monotone(s in "[ab ]{0,40}") {
            let tok = train_bpe(&corpus(&["ab aab abab bba baba aaab abba"]), 270).unwrap();
            let mut prev = usize::MAX;
            for k in 0..=tok.merges().len() {
                let n = tok.truncated(k).encode_ids(&s).len();
                prop_assert!(n <= prev);
                prev = n;
            }
        }
    }
}
