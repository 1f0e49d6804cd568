//! A small stochastic grammar of region → neurotransmitter findings used to
//! produce a training corpus, forced-choice items, and simulated human
//! responses for desk-scale experiments.
//!
//! Every (region, target) pair carries one fixed effect direction. Corpus
//! sentences always state the true direction; an altered item flips the
//! verb of one to three of its sentences.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BenchmarkItem, Corpus, Document, Orientation};
use crate::error::{Error, Result};
use crate::stats::HumanResponse;

const REGIONS: [&str; 12] = [
    "hippocampus",
    "amygdala",
    "striatum",
    "thalamus",
    "cerebellum",
    "insula",
    "hypothalamus",
    "prefrontal cortex",
    "visual cortex",
    "motor cortex",
    "nucleus accumbens",
    "locus coeruleus",
];

const TARGETS: [&str; 10] = [
    "dopamine",
    "serotonin",
    "glutamate",
    "GABA",
    "cortisol",
    "acetylcholine",
    "noradrenaline",
    "oxytocin",
    "BDNF",
    "histamine",
];

const SPECIES: [&str; 5] = ["mice", "rats", "macaques", "zebrafish", "humans"];
const FILLER_ADJ: [&str; 4] = ["robust", "modest", "transient", "consistent"];
const FILLER_UNIT: [&str; 4] = ["cohorts", "sessions", "animals", "sites"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GrammarConfig {
    /// Seeds the fact table.
    pub grammar_seed: u64,
    /// Seeds corpus sampling.
    pub seed: u64,
    pub regions: usize,
    pub targets: usize,
    /// One direction per region instead of per (region, target) pair.
    pub region_keyed: bool,
    /// Approximate corpus length in whitespace-separated words.
    pub corpus_words: usize,
    pub sentences_per_doc: (usize, usize),
}

impl Default for GrammarConfig {
    /// Roughly 200k tokens under a 512-token BPE vocabulary.
    fn default() -> Self {
        GrammarConfig {
            grammar_seed: 0,
            seed: 0,
            regions: MAX_REGIONS,
            targets: MAX_TARGETS,
            region_keyed: true,
            corpus_words: 170_000,
            sentences_per_doc: (4, 9),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Fact {
    region: usize,
    target: usize,
}

/// The fixed fact table.
#[derive(Debug, Clone)]
pub struct Grammar {
    /// `up[region][target]`: whether the region raises the target.
    up: Vec<Vec<bool>>,
}

pub const MAX_REGIONS: usize = REGIONS.len();
pub const MAX_TARGETS: usize = TARGETS.len();

impl Grammar {
    /// The full table of every region and target.
    pub fn new(seed: u64) -> Self {
        Self::with_size(seed, MAX_REGIONS, MAX_TARGETS).expect("full table is valid")
    }

    /// A table over the first `regions` regions and `targets` targets.
    pub fn with_size(seed: u64, regions: usize, targets: usize) -> Result<Self> {
        if !(1..=MAX_REGIONS).contains(&regions) || !(1..=MAX_TARGETS).contains(&targets) {
            return Err(Error::InvalidArgument(format!(
                "grammar size must be 1..={MAX_REGIONS} regions and 1..={MAX_TARGETS} targets"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_FAC7);
        let up = (0..regions)
            .map(|_| (0..targets).map(|_| rng.random_bool(0.5)).collect())
            .collect();
        Ok(Grammar { up })
    }

    pub fn from_config(cfg: &GrammarConfig) -> Result<Self> {
        if cfg.region_keyed {
            Self::region_keyed(cfg.grammar_seed, cfg.regions, cfg.targets)
        } else {
            Self::with_size(cfg.grammar_seed, cfg.regions, cfg.targets)
        }
    }

    /// A table where each region has a single direction for every target,
    /// so the verb is predictable from the region alone.
    pub fn region_keyed(seed: u64, regions: usize, targets: usize) -> Result<Self> {
        let mut g = Self::with_size(seed, regions, targets)?;
        for row in &mut g.up {
            let first = row[0];
            row.iter_mut().for_each(|u| *u = first);
        }
        Ok(g)
    }

    pub fn n_facts(&self) -> usize {
        self.up.len() * self.up[0].len()
    }

    fn random_fact(&self, rng: &mut impl Rng) -> Fact {
        Fact {
            region: rng.random_range(0..self.up.len()),
            target: rng.random_range(0..self.up[0].len()),
        }
    }

    /// One fact sentence; `truthful = false` states the opposite direction.
    fn fact_sentence(&self, f: Fact, truthful: bool, rng: &mut impl Rng) -> String {
        let up = self.up[f.region][f.target] == truthful;
        let species = SPECIES.choose(rng).unwrap();
        let (region, target) = (REGIONS[f.region], TARGETS[f.target]);
        if rng.random_bool(0.5) {
            let verb = if up { "increased" } else { "decreased" };
            format!("In {species}, {region} activity {verb} {target} levels.")
        } else {
            let verb = if up { "rose" } else { "fell" };
            format!("Levels of {target} {verb} after {region} stimulation in {species}.")
        }
    }

    fn filler_sentence(rng: &mut impl Rng) -> String {
        if rng.random_bool(0.5) {
            format!(
                "The effect was {} across {} {}.",
                FILLER_ADJ.choose(rng).unwrap(),
                rng.random_range(2..10),
                FILLER_UNIT.choose(rng).unwrap()
            )
        } else {
            format!("We recorded {} neurons per session.", rng.random_range(10..100))
        }
    }

    /// A forward corpus of truthful documents.
    pub fn corpus(&self, cfg: &GrammarConfig) -> Result<Corpus> {
        let (lo, hi) = cfg.sentences_per_doc;
        if lo == 0 || hi < lo {
            return Err(Error::InvalidArgument("sentences_per_doc must be a non-empty range".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut docs = Vec::new();
        let mut words = 0;
        while words < cfg.corpus_words.max(1) {
            let n = rng.random_range(lo..=hi);
            let sentences: Vec<String> = (0..n)
                .map(|_| {
                    if rng.random_bool(0.75) {
                        let f = self.random_fact(&mut rng);
                        self.fact_sentence(f, true, &mut rng)
                    } else {
                        Self::filler_sentence(&mut rng)
                    }
                })
                .collect();
            let text = sentences.join(" ");
            words += text.split_whitespace().count();
            docs.push(Document {
                id: format!("doc{:06}", docs.len()),
                text,
            });
        }
        Corpus::new(docs, Orientation::Forward)
    }

    /// Forced-choice items: three true sentences plus a filler, against the
    /// same text with one to three verbs flipped.
    pub fn items(&self, n: usize, seed: u64) -> Vec<BenchmarkItem> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x17E4_5EED);
        (0..n)
            .map(|i| {
                let facts: Vec<Fact> = (0..3).map(|_| self.random_fact(&mut rng)).collect();
                let n_flip = rng.random_range(1..=3);
                let mut flip = [false; 3];
                for k in rand::seq::index::sample(&mut rng, 3, n_flip) {
                    flip[k] = true;
                }
                let mut original = Vec::new();
                let mut altered = Vec::new();
                for (f, &fl) in facts.iter().zip(&flip) {
                    // Same random draws for both versions: only the verb differs.
                    let state: u64 = rng.random();
                    original.push(self.fact_sentence(*f, true, &mut ChaCha8Rng::seed_from_u64(state)));
                    altered.push(self.fact_sentence(*f, !fl, &mut ChaCha8Rng::seed_from_u64(state)));
                }
                let filler = Self::filler_sentence(&mut rng);
                original.push(filler.clone());
                altered.push(filler);
                BenchmarkItem {
                    id: format!("item{i:04}"),
                    original: original.join(" "),
                    altered: altered.join(" "),
                    subfield: Some(format!("flips-{n_flip}")),
                }
            })
            .collect()
    }
}

/// Simulated expert answers. Each item gets a latent easiness that rises
/// with the number of flipped sentences; participants answer independently
/// with that probability, skipping a fraction of items.
pub fn simulate_humans(items: &[BenchmarkItem], participants: usize, seed: u64) -> Vec<HumanResponse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4A3A_17E5);
    let easiness: Vec<f64> = items
        .iter()
        .map(|it| {
            let flips = it
                .subfield
                .as_deref()
                .and_then(|s| s.strip_prefix("flips-"))
                .and_then(|s| s.parse::<f64>().ok())
                .unwrap_or(2.0);
            (0.45 + 0.12 * flips + rng.random_range(-0.15..0.15)).clamp(0.05, 0.98)
        })
        .collect();
    let mut out = Vec::new();
    for p in 0..participants {
        let expertise = rng.random_range(1..=5) as f64;
        for (it, &e) in items.iter().zip(&easiness) {
            if rng.random_bool(0.3) {
                continue;
            }
            let correct = rng.random_bool(e);
            out.push(HumanResponse {
                participant_id: format!("p{p:03}"),
                item_id: it.id.clone(),
                correct: correct as u8,
                confidence: Some(rng.random_range(1..=7) as f64),
                expertise: Some(expertise),
            });
        }
    }
    out
}

/// CSV text for simulated responses.
pub fn responses_csv(responses: &[HumanResponse]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in responses {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8"))
}
