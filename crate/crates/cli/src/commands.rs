use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use mirrorlm::corpus::{self, load_benchmark, load_corpus, reverse_corpus, split_corpus, CorpusFormat, Orientation};
use mirrorlm::eval::{self, BenchmarkResult, LongPolicy, ModelMeta, Scorer};
use mirrorlm::manifest::{RunLock, RunManifest};
use mirrorlm::model::checkpoint::{file_hash, Checkpoint};
use mirrorlm::model::{ModelConfig, Params};
use mirrorlm::report::{self, AccuracyBar, BoxGroup};
use mirrorlm::stats::{self, load_human_responses};
use mirrorlm::synth::{self, Grammar};
use mirrorlm::tokenizer::{self, train_bpe, TokenizerModel};
use mirrorlm::trainer::{self, chunk_stream, latest_checkpoint, RunIdentity, TrainData, TrainLog, TrainOptions};
use serde::{Deserialize, Serialize};

use crate::{Context, Failure};

fn run_dir(ctx: &Context, name: &str) -> Result<PathBuf, Failure> {
    if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
        return Err(Failure::Usage(format!("invalid run name `{name}`")));
    }
    Ok(ctx.out.join(name))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Failure::Runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v).map_err(|e| Failure::Runtime(e.to_string()))
}

fn load_jsonl_corpus(path: &Path) -> Result<mirrorlm::Corpus, Failure> {
    Ok(load_corpus(path, CorpusFormat::Jsonl)?)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Source corpus (JSONL of {id, text}, or a directory of .txt files).
    #[arg(long)]
    pub corpus: PathBuf,
    /// `jsonl` or `text-dir`.
    #[arg(long, default_value = "jsonl")]
    pub format: String,
    /// Also write the character-reversed corpora.
    #[arg(long)]
    pub reverse: bool,
    /// Fraction of documents for training; the rest become validation.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long, default_value = "data")]
    pub name: String,
}

pub fn prepare(ctx: &Context, a: PrepareArgs) -> Result<(), Failure> {
    let format: CorpusFormat = a.format.parse().map_err(|e: mirrorlm::Error| Failure::Usage(e.to_string()))?;
    let dir = run_dir(ctx, &a.name)?;
    let _lock = RunLock::acquire(&dir)?;
    let corpus = load_corpus(&a.corpus, format)?;
    corpus.orientation().expect(Orientation::Forward)?;
    let split = a.split.or(ctx.file.prepare.split);

    let parts: Vec<(&str, mirrorlm::Corpus)> = match split {
        Some(f) => {
            let (train, val) = split_corpus(&corpus, f, ctx.seed)?;
            vec![("train", train), ("val", val)]
        }
        None => vec![("train", corpus.clone())],
    };
    let mut manifest = RunManifest::new(&a.name, "prepare");
    manifest.add_input("corpus", &a.corpus)?;
    manifest.seeds.insert("split".into(), ctx.seed);
    manifest.set_config(
        "prepare",
        &serde_json::json!({ "split": split, "reverse": a.reverse, "format": a.format }),
    )?;
    let mut orientations = vec![Orientation::Forward];
    if a.reverse {
        orientations.push(Orientation::Backward);
    }
    for o in orientations {
        for (part, c) in &parts {
            let c = match o {
                Orientation::Forward => c.clone(),
                Orientation::Backward => reverse_corpus(c)?,
            };
            let path = dir.join(o.to_string()).join(format!("{part}.jsonl"));
            c.save_jsonl(&path)?;
            manifest.add_output(&format!("{o}/{part}"), &path)?;
            manifest.notes.insert(format!("{o}/{part}.documents"), c.len().to_string());
        }
    }
    manifest.save(&dir)?;
    let counts: Vec<String> = parts.iter().map(|(p, c)| format!("{p} {}", c.len())).collect();
    eprintln!("prepared {} ({}) in {}", a.corpus.display(), counts.join(", "), dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct TrainTokenizerArgs {
    /// Prepared corpus; its orientation becomes the tokenizer's.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Final vocabulary size including the 256 bytes and the end-of-text token.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Defaults to `tokenizer-<orientation>`.
    #[arg(long)]
    pub name: Option<String>,
}

pub fn train_tokenizer(ctx: &Context, a: TrainTokenizerArgs) -> Result<(), Failure> {
    let corpus = load_jsonl_corpus(&a.corpus)?;
    let vocab_size = a
        .vocab_size
        .or(ctx.file.tokenizer.vocab_size)
        .ok_or_else(|| Failure::Usage("--vocab-size is required (flag or [tokenizer] vocab_size)".into()))?;
    let name = a.name.unwrap_or_else(|| format!("tokenizer-{}", corpus.orientation()));
    let dir = run_dir(ctx, &name)?;
    let _lock = RunLock::acquire(&dir)?;
    let tok = train_bpe(&corpus, vocab_size)?;
    let path = dir.join("tokenizer.json");
    tok.save(&path)?;

    let mut manifest = RunManifest::new(&name, "train-tokenizer");
    manifest.orientation = Some(tok.orientation());
    manifest.add_input("corpus", &a.corpus)?;
    manifest.add_output("tokenizer", &path)?;
    manifest.set_config("tokenizer", &serde_json::json!({ "vocab_size": vocab_size }))?;
    manifest.notes.insert("tie_break".into(), tokenizer::TIE_BREAK_RULE.into());
    manifest.notes.insert("merges".into(), tok.merges().len().to_string());
    manifest.notes.insert("tokenizer_id".into(), tok.id().to_owned());
    manifest.save(&dir)?;
    eprintln!(
        "trained {} tokenizer: {} tokens ({} merges) -> {}",
        tok.orientation(),
        tok.vocab_size(),
        tok.merges().len(),
        path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Validation corpus for per-epoch loss.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub tokenizer: PathBuf,
    /// tiny, toy, small, gpt2-124m, gpt2-355m or gpt2-774m.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub name: String,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub grad_accum: Option<usize>,
    /// Tokens per chunk; defaults to the model context length.
    #[arg(long)]
    pub chunk_size: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub warmup_ratio: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Continue from the latest checkpoint in the run directory.
    #[arg(long, conflicts_with = "force")]
    pub resume: bool,
    /// Discard existing checkpoints in the run directory.
    #[arg(long)]
    pub force: bool,
    /// Stop after this many epochs (the schedule still spans all epochs).
    #[arg(long, hide = true)]
    pub stop_after_epoch: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunRecord {
    model: ModelConfig,
    train: trainer::TrainConfig,
    orientation: Orientation,
    tokenizer_id: String,
    total_steps: usize,
    train_chunks: usize,
    val_chunks: usize,
    log: TrainLog,
}

fn model_config(ctx: &Context, preset: Option<&str>, vocab: usize, seed: u64) -> Result<ModelConfig, Failure> {
    let m = &ctx.file.model;
    let name = preset.or(m.preset.as_deref()).unwrap_or("toy");
    let mut cfg = ModelConfig::preset(name, vocab)?;
    if let Some(v) = m.context_length {
        cfg.context_length = v;
    }
    if let Some(v) = m.n_layers {
        cfg.n_layers = v;
    }
    if let Some(v) = m.n_heads {
        cfg.n_heads = v;
    }
    if let Some(v) = m.d_model {
        cfg.d_model = v;
        cfg.d_ff = 4 * v;
    }
    if let Some(v) = m.d_ff {
        cfg.d_ff = v;
    }
    cfg.seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(ctx: &Context, a: TrainArgs) -> Result<(), Failure> {
    let dir = run_dir(ctx, &a.name)?;
    let _lock = RunLock::acquire(&dir)?;
    let ck_dir = dir.join("checkpoints");

    let tok = TokenizerModel::load(&a.tokenizer)?;
    let corpus = load_jsonl_corpus(&a.corpus)?;
    corpus.orientation().expect(tok.orientation())?;
    let val = a.val.as_deref().map(load_jsonl_corpus).transpose()?;
    if let Some(v) = &val {
        v.orientation().expect(tok.orientation())?;
    }

    let model = model_config(ctx, a.preset.as_deref(), tok.vocab_size(), ctx.seed)?;
    let (mut cfg, chunk_in_file) = ctx.file.train_config()?;
    cfg.seed = ctx.seed;
    if !chunk_in_file {
        cfg.chunk_size = model.context_length;
    }
    macro_rules! over {
        ($($flag:ident => $field:ident),*) => { $( if let Some(v) = a.$flag { cfg.$field = v; } )* };
    }
    over!(epochs => epochs, lr => base_lr, batch_size => batch_size, grad_accum => grad_accum_steps,
          chunk_size => chunk_size, warmup_ratio => warmup_ratio, weight_decay => weight_decay);
    if a.max_steps.is_some() {
        cfg.max_steps = a.max_steps;
    }
    cfg.validate()?;
    if cfg.chunk_size > model.context_length + 1 {
        return Err(Failure::Validation(format!(
            "chunk size {} exceeds context length {} + 1",
            cfg.chunk_size, model.context_length
        )));
    }

    let existing = latest_checkpoint(&ck_dir)?;
    let mut prior_log = TrainLog::default();
    let resume = match (existing, a.resume) {
        (Some(p), true) => {
            let ck = Checkpoint::load(&p)?;
            let run_json = dir.join("run.json");
            if let Ok(raw) = fs::read_to_string(&run_json) {
                let rec: RunRecord =
                    serde_json::from_str(&raw).map_err(|e| Failure::Validation(format!("{}: {e}", run_json.display())))?;
                if rec.model != model || rec.train != cfg {
                    return Err(Failure::Validation(
                        "resume requires the same model and training configuration".into(),
                    ));
                }
                prior_log = rec.log;
                prior_log.steps.retain(|s| s.step < ck.step);
                prior_log.epochs.retain(|e| e.epoch <= ck.epoch);
            }
            eprintln!("resuming from {} (epoch {}, step {})", p.display(), ck.epoch, ck.step);
            Some(ck)
        }
        (None, true) => return Err(Failure::Validation(format!("nothing to resume in {}", ck_dir.display()))),
        (Some(_), false) if !a.force => {
            return Err(Failure::Validation(format!(
                "{} already holds checkpoints; pass --resume or --force",
                ck_dir.display()
            )))
        }
        (Some(_), false) => {
            fs::remove_dir_all(&ck_dir).map_err(|e| Failure::Runtime(format!("{}: {e}", ck_dir.display())))?;
            None
        }
        (None, false) => None,
    };

    let train_chunks = chunk_stream(&corpus, &tok, cfg.chunk_size)?;
    let val_chunks = match &val {
        Some(v) => chunk_stream(v, &tok, cfg.chunk_size)?,
        None => Vec::new(),
    };
    let data = TrainData {
        train: train_chunks,
        val: val_chunks,
    };
    let total = trainer::total_steps(data.train.len(), &cfg);
    eprintln!(
        "training {} model: {} parameters, {} chunks of {}, {} steps",
        tok.orientation(),
        model.num_params(),
        data.train.len(),
        cfg.chunk_size,
        total
    );
    let params = Params::<f32>::init(&model)?;
    let mut on_epoch = |r: &trainer::EpochRecord| match r.val_loss {
        Some(l) => eprintln!("epoch {}: val loss {l:.4}, val ppl {:.3}", r.epoch, l.exp()),
        None => eprintln!("epoch {} done", r.epoch),
    };
    let mut last_report = std::time::Instant::now();
    let mut on_step = |r: &trainer::StepRecord| {
        if last_report.elapsed().as_secs() >= 10 {
            eprintln!("step {}/{total}: loss {:.4}, lr {:.2e}", r.step + 1, r.loss, r.lr);
            last_report = std::time::Instant::now();
        }
    };
    let outcome = trainer::train(
        params,
        &data,
        &cfg,
        TrainOptions {
            identity: Some(RunIdentity {
                tokenizer_id: tok.id().to_owned(),
                orientation: tok.orientation(),
            }),
            checkpoint_dir: Some(ck_dir.clone()),
            resume,
            on_step: Some(&mut on_step),
            on_epoch: Some(&mut on_epoch),
            stop_after_epoch: a.stop_after_epoch,
        },
    )?;

    let mut log = prior_log;
    log.steps.extend(outcome.log.steps);
    log.epochs.extend(outcome.log.epochs);
    trainer::write_logs(&log, &dir)?;
    let record = RunRecord {
        model: model.clone(),
        train: cfg.clone(),
        orientation: tok.orientation(),
        tokenizer_id: tok.id().to_owned(),
        total_steps: total,
        train_chunks: data.train.len(),
        val_chunks: data.val.len(),
        log,
    };
    write(&dir.join("run.json"), &to_json(&record)?)?;

    let mut manifest = RunManifest::new(&a.name, "train");
    manifest.orientation = Some(tok.orientation());
    manifest.seeds.insert("init".into(), model.seed);
    manifest.seeds.insert("shuffle".into(), cfg.seed);
    manifest.add_input("corpus", &a.corpus)?;
    manifest.add_input("tokenizer", &a.tokenizer)?;
    if let Some(v) = &a.val {
        manifest.add_input("val", v)?;
    }
    manifest.set_config("model", &model)?;
    manifest.set_config("train", &cfg)?;
    let mut ckpts: Vec<PathBuf> = fs::read_dir(&ck_dir)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", ck_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    ckpts.sort();
    for p in &ckpts {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
        manifest.add_output(&format!("checkpoint/{stem}"), p)?;
    }
    manifest.add_output("train_log", &dir.join("train_log.csv"))?;
    manifest.add_output("val_log", &dir.join("val_log.csv"))?;
    manifest.notes.insert("shuffle_prng".into(), corpus::SHUFFLE_PRNG.into());
    manifest.save(&dir)?;
    if let Some(last) = ckpts.last() {
        eprintln!("wrote {}", last.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub tokenizer: PathBuf,
    /// JSONL of {id, original, altered[, subfield]}; always in reading order.
    #[arg(long)]
    pub benchmark: PathBuf,
    /// Prompt placed before every passage.
    #[arg(long)]
    pub prefix: Option<String>,
    /// Name recorded in results; defaults to the run name.
    #[arg(long)]
    pub label: Option<String>,
    /// Slide over passages longer than the context instead of failing.
    #[arg(long)]
    pub window: bool,
    /// Also report per-document perplexity on this (oriented) corpus.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub name: String,
}

pub fn eval(ctx: &Context, a: EvalArgs) -> Result<(), Failure> {
    let dir = run_dir(ctx, &a.name)?;
    let _lock = RunLock::acquire(&dir)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let tok = TokenizerModel::load(&a.tokenizer)?;
    if !ck.tokenizer_id.is_empty() && ck.tokenizer_id != tok.id() {
        return Err(Failure::Validation(format!(
            "checkpoint was trained with tokenizer {}, got {}",
            ck.tokenizer_id,
            tok.id()
        )));
    }
    let items = load_benchmark(&a.benchmark)?;
    let prefix = a
        .prefix
        .or_else(|| ctx.file.eval.prefix.clone())
        .unwrap_or_else(|| eval::DEFAULT_PREFIX.to_owned());
    let policy = if a.window {
        LongPolicy::Window
    } else {
        ctx.file.eval.long_policy.unwrap_or_default()
    };
    let scorer = Scorer::new(&ck.params, &tok, ck.orientation, &prefix)?.with_policy(policy);
    let meta = ModelMeta {
        label: a.label.unwrap_or_else(|| a.name.clone()),
        orientation: Some(ck.orientation),
        size: Some(ck.params.num_params()),
        checkpoint_hash: Some(file_hash(&a.checkpoint)?),
        tokenizer_id: Some(tok.id().to_owned()),
    };
    let result = scorer.run_benchmark(&items, meta)?;
    result.save(&dir)?;

    let mut manifest = RunManifest::new(&a.name, "eval");
    manifest.orientation = Some(ck.orientation);
    manifest.add_input("checkpoint", &a.checkpoint)?;
    manifest.add_input("tokenizer", &a.tokenizer)?;
    manifest.add_input("benchmark", &a.benchmark)?;
    manifest.set_config(
        "eval",
        &serde_json::json!({ "prefix": prefix, "long_policy": policy }),
    )?;
    manifest.notes.insert(
        "benchmark_text".into(),
        match ck.orientation {
            Orientation::Forward => "scored as written".into(),
            Orientation::Backward => "prefix and passage character-reversed together before scoring".into(),
        },
    );
    manifest.add_output("scores", &dir.join("scores.jsonl"))?;
    manifest.add_output("summary", &dir.join("summary.json"))?;

    if let Some(vp) = &a.validation {
        let vc = load_jsonl_corpus(vp)?;
        let ppl = eval::document_perplexities(&ck.params, &tok, ck.orientation, &vc)?;
        let mut csv = String::from("doc_id,perplexity\n");
        for (id, p) in &ppl {
            let _ = writeln!(csv, "{id},{p}");
        }
        let path = dir.join("validation_ppl.csv");
        write(&path, &csv)?;
        manifest.add_input("validation", vp)?;
        manifest.add_output("validation_ppl", &path)?;
    }
    manifest.save(&dir)?;
    eprintln!(
        "{}: accuracy {:.4} on {} items ({} skipped)",
        result.summary.meta.label, result.summary.accuracy, result.summary.n_scored, result.summary.n_skipped
    );
    println!("{}", result.summary.accuracy);
    Ok(())
}

// ---------------------------------------------------------------------------

fn load_results(dirs: &[PathBuf]) -> Result<Vec<BenchmarkResult>, Failure> {
    let results = dirs
        .iter()
        .map(|d| BenchmarkResult::load(d))
        .collect::<mirrorlm::Result<Vec<_>>>()?;
    let mut labels = HashSet::new();
    for r in &results {
        if !labels.insert(r.summary.meta.label.clone()) {
            return Err(Failure::Validation(format!(
                "two result sets share the label `{}`",
                r.summary.meta.label
            )));
        }
    }
    Ok(results)
}

/// Item ids for human difficulty: the benchmark file if given, otherwise
/// every item any result saw.
fn item_ids(results: &[BenchmarkResult], benchmark: Option<&Path>) -> Result<Vec<String>, Failure> {
    if let Some(b) = benchmark {
        return Ok(load_benchmark(b)?.into_iter().map(|i| i.id).collect());
    }
    let mut seen = BTreeSet::new();
    let mut ids = Vec::new();
    for r in results {
        let all = r
            .scores
            .iter()
            .map(|s| &s.item_id)
            .chain(r.summary.skipped.iter().map(|s| &s.item_id));
        for id in all {
            if seen.insert(id.clone()) {
                ids.push(id.clone());
            }
        }
    }
    Ok(ids)
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Directories written by `eval`.
    #[arg(long, num_args = 1.., required = true)]
    pub results: Vec<PathBuf>,
    /// CSV of participant_id,item_id,correct[,confidence,expertise].
    #[arg(long)]
    pub human: Option<PathBuf>,
    /// Benchmark file defining the item set for human difficulty.
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
    #[arg(long, default_value = "stats")]
    pub name: String,
}

pub fn stats(ctx: &Context, a: StatsArgs) -> Result<(), Failure> {
    let dir = run_dir(ctx, &a.name)?;
    let _lock = RunLock::acquire(&dir)?;
    let results = load_results(&a.results)?;
    let human = a.human.as_deref().map(load_human_responses).transpose()?;
    let ids = item_ids(&results, a.benchmark.as_deref())?;
    let report = stats::analyze(&results, human.as_deref().map(|h| (h, ids.as_slice())))?;

    let mut manifest = RunManifest::new(&a.name, "stats");
    for (i, d) in a.results.iter().enumerate() {
        manifest.add_input(&format!("results/{i}"), &d.join("scores.jsonl"))?;
    }
    if let Some(h) = &a.human {
        manifest.add_input("human", h)?;
    }
    let path = dir.join("stats.json");
    write(&path, &to_json(&report)?)?;
    manifest.add_output("stats", &path)?;
    if let Some(c) = &report.correlation {
        let p = dir.join("correlation.csv");
        write(&p, &c.matrix_csv())?;
        manifest.add_output("correlation", &p)?;
    }
    if let Some(t) = &report.anova {
        let mut csv = String::from("term,ss,df,f,p\n");
        for term in &t.terms {
            let _ = writeln!(csv, "{},{},{},{},{}", term.term, term.ss, term.df, term.f, term.p);
        }
        let _ = writeln!(csv, "residual,{},{},,", t.residual_ss, t.residual_df);
        let p = dir.join("anova.csv");
        write(&p, &csv)?;
        manifest.add_output("anova", &p)?;
    }
    if let Some(h) = &human {
        let hd = stats::human_difficulty(h, &ids)?;
        let mut csv = String::from("item_id,mean_correct\n");
        for (id, v) in hd.vector.item_ids.iter().zip(&hd.vector.values) {
            let _ = writeln!(csv, "{id},{v}");
        }
        let p = dir.join("human_difficulty.csv");
        write(&p, &csv)?;
        manifest.add_output("human_difficulty", &p)?;
    }
    manifest.save(&dir)?;

    for r in &report.runs {
        eprintln!("{}: accuracy {:.4}", r.label, r.accuracy);
    }
    if let Some(c) = &report.correlation {
        if let Some(g) = &c.model_model {
            eprintln!("model-model rho: mean {:.3} (n={})", g.mean, g.n);
        }
        if let Some(g) = &c.model_human {
            eprintln!("model-human rho: mean {:.3} (n={})", g.mean, g.n);
        }
    }
    if let Some(t) = &report.anova {
        for term in &t.terms {
            eprintln!("{}: F(1, {}) = {:.3}, p = {:.3}", term.term, t.residual_df, term.f, term.p);
        }
    }
    for (k, why) in &report.skipped {
        eprintln!("skipped {k}: {why}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub results: Vec<PathBuf>,
    #[arg(long)]
    pub human: Option<PathBuf>,
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
    /// Forward then backward tokenizer, for the vocabulary overlap table.
    #[arg(long, num_args = 2, value_names = ["FORWARD", "BACKWARD"])]
    pub tokenizers: Option<Vec<PathBuf>>,
    /// Domain word list (one per line) for classifying tokenizer entries.
    #[arg(long, requires = "tokenizers")]
    pub wordlist: Option<PathBuf>,
    #[arg(long, default_value = "report")]
    pub name: String,
}

pub fn report(ctx: &Context, a: ReportArgs) -> Result<(), Failure> {
    let dir = run_dir(ctx, &a.name)?;
    let _lock = RunLock::acquire(&dir)?;
    let results = load_results(&a.results)?;
    let mut manifest = RunManifest::new(&a.name, "report");

    let human = a.human.as_deref().map(load_human_responses).transpose()?;
    let ids = item_ids(&results, a.benchmark.as_deref())?;
    let human_vec = human
        .as_deref()
        .map(|h| stats::human_difficulty(h, &ids))
        .transpose()?
        .map(|h| h.vector);
    let baseline = human_vec
        .as_ref()
        .map(|v| v.values.iter().sum::<f64>() / v.len().max(1) as f64);

    let bars: Vec<AccuracyBar> = results
        .iter()
        .map(|r| AccuracyBar {
            label: r.summary.meta.label.clone(),
            direction: r.summary.meta.orientation,
            size: r.summary.meta.size,
            accuracy: r.accuracy(),
        })
        .collect();
    let mut charts = vec![("accuracy", report::accuracy_chart(&bars, baseline))];
    let groups: Vec<BoxGroup> = results
        .iter()
        .map(|r| BoxGroup {
            label: r.summary.meta.label.clone(),
            direction: r.summary.meta.orientation,
            values: r.scores.iter().map(|s| s.ppl_original).collect(),
        })
        .collect();
    charts.push((
        "perplexity",
        report::perplexity_boxplot("Perplexity of original passages", &groups),
    ));
    if results.len() >= 2 {
        let models = results
            .iter()
            .map(stats::model_difficulty)
            .collect::<mirrorlm::Result<Vec<_>>>()?;
        let c = stats::correlation_summary(&models, human_vec.as_ref())?;
        charts.push(("correlation", report::correlation_heatmap(&c.sources, &c.matrix)));
    }
    for (stem, chart) in &charts {
        chart.save(&dir, stem)?;
        manifest.add_output(&format!("{stem}.svg"), &dir.join(format!("{stem}.svg")))?;
        manifest.add_output(&format!("{stem}.csv"), &dir.join(format!("{stem}.csv")))?;
    }

    if let Some(paths) = &a.tokenizers {
        let fwd = TokenizerModel::load(&paths[0])?;
        let bwd = TokenizerModel::load(&paths[1])?;
        let overlap = tokenizer::vocab_overlap(&fwd, &bwd)?;
        let mut out = serde_json::json!({ "overlap": overlap });
        if let Some(w) = &a.wordlist {
            let words = tokenizer::load_wordlist(w)?;
            out["forward_domain"] = serde_json::to_value(tokenizer::classify_domain_tokens(&fwd, &words)?)
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            out["backward_domain"] = serde_json::to_value(tokenizer::classify_domain_tokens(&bwd, &words)?)
                .map_err(|e| Failure::Runtime(e.to_string()))?;
        }
        let p = dir.join("tokenizer_overlap.json");
        write(&p, &to_json(&out)?)?;
        manifest.add_input("tokenizer/forward", &paths[0])?;
        manifest.add_input("tokenizer/backward", &paths[1])?;
        manifest.add_output("tokenizer_overlap", &p)?;
    }
    manifest.save(&dir)?;
    eprintln!("report written to {}", dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of forced-choice items.
    #[arg(long)]
    pub items: Option<usize>,
    /// Simulated participants (0 skips the human file).
    #[arg(long)]
    pub participants: Option<usize>,
    /// Approximate corpus size in words.
    #[arg(long)]
    pub corpus_words: Option<usize>,
    /// Tie effect directions to (region, target) pairs instead of regions.
    #[arg(long)]
    pub pair_keyed: bool,
    #[arg(long, default_value = "synth")]
    pub name: String,
}

pub fn synth(ctx: &Context, a: SynthArgs) -> Result<(), Failure> {
    let dir = run_dir(ctx, &a.name)?;
    let _lock = RunLock::acquire(&dir)?;
    let section = &ctx.file.synth;
    let mut grammar_cfg = section.grammar.clone().unwrap_or_default();
    grammar_cfg.seed = ctx.seed;
    if let Some(w) = a.corpus_words {
        grammar_cfg.corpus_words = w;
    }
    if a.pair_keyed {
        grammar_cfg.region_keyed = false;
    }
    let n_items = a.items.or(section.items).unwrap_or(100);
    let participants = a.participants.or(section.participants).unwrap_or(30);

    let grammar = Grammar::from_config(&grammar_cfg)?;
    let corpus = grammar.corpus(&grammar_cfg)?;
    let items = grammar.items(n_items, ctx.seed);
    let mut manifest = RunManifest::new(&a.name, "synth");
    manifest.seeds.insert("synth".into(), ctx.seed);
    manifest.set_config("grammar", &grammar_cfg)?;

    let corpus_path = dir.join("corpus.jsonl");
    corpus.save_jsonl(&corpus_path)?;
    manifest.add_output("corpus", &corpus_path)?;
    let items_path = dir.join("items.jsonl");
    corpus::save_benchmark(&items, &items_path)?;
    manifest.add_output("items", &items_path)?;
    if participants > 0 {
        let responses = synth::simulate_humans(&items, participants, ctx.seed);
        let p = dir.join("human.csv");
        write(&p, &synth::responses_csv(&responses)?)?;
        manifest.add_output("human", &p)?;
    }
    manifest.save(&dir)?;
    eprintln!(
        "synthetic corpus: {} documents; {} items; {} participants -> {}",
        corpus.len(),
        items.len(),
        participants,
        dir.display()
    );
    Ok(())
}
