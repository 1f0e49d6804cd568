//! Next-token training: chunked data, AdamW, warmup plus cosine decay, and
//! gradient accumulation with per-epoch checkpoints.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_file, Corpus, Orientation};
use crate::error::{Error, Result};
use crate::model::checkpoint::{Checkpoint, OptimizerMoments};
use crate::model::{self, Params, Real};
use crate::tokenizer::TokenizerModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub grad_accum_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub chunk_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Global gradient-norm clip; off unless set.
    pub grad_clip: Option<f64>,
    /// Caps the optimizer-step budget below `epochs * steps_per_epoch`.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    /// The reference hyperparameters used for the GPT-2 runs.
    fn default() -> Self {
        TrainConfig {
            base_lr: 2e-5,
            warmup_ratio: 0.03,
            weight_decay: 0.001,
            grad_accum_steps: 8,
            epochs: 5,
            batch_size: 16,
            chunk_size: 1024,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            grad_clip: None,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("train config: {m}")));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad("warmup_ratio must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return bad("weight_decay must be non-negative");
        }
        if self.grad_accum_steps == 0 || self.epochs == 0 || self.batch_size == 0 {
            return bad("grad_accum_steps, epochs and batch_size must be positive");
        }
        if self.chunk_size < 2 {
            return bad("chunk_size must be at least 2");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_epsilon <= 0.0 {
            return bad("adam betas must lie in [0, 1) and epsilon must be positive");
        }
        if matches!(self.max_steps, Some(0)) {
            return bad("max_steps must be positive");
        }
        Ok(())
    }
}

/// Encodes every document (each preceded by the end-of-document marker),
/// concatenates them, and cuts non-overlapping chunks of exactly
/// `chunk_size` tokens. A trailing partial chunk is dropped.
pub fn chunk_stream(corpus: &Corpus, tok: &TokenizerModel, chunk_size: usize) -> Result<Vec<Vec<u32>>> {
    corpus.orientation().expect(tok.orientation())?;
    if chunk_size == 0 {
        return Err(Error::InvalidArgument("chunk_size must be positive".into()));
    }
    let encoded: Vec<Vec<u32>> = corpus
        .documents()
        .par_iter()
        .map(|d| tok.encode_ids(&d.text))
        .collect();
    let mut stream = Vec::with_capacity(encoded.iter().map(|e| e.len() + 1).sum());
    for ids in encoded {
        stream.push(tok.eod_id());
        stream.extend(ids);
    }
    Ok(chunk_tokens(&stream, chunk_size))
}

pub fn chunk_tokens(stream: &[u32], chunk_size: usize) -> Vec<Vec<u32>> {
    stream.chunks_exact(chunk_size).map(|c| c.to_vec()).collect()
}

/// Warmup over the first `ceil(warmup_ratio * total_steps)` steps, then a
/// half-cosine from `base_lr` down to exactly zero at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, warmup_ratio: f64, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidArgument("total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(Error::InvalidArgument(format!("step {step} beyond total {total_steps}")));
    }
    let warmup = warmup_steps(total_steps, warmup_ratio);
    if step < warmup {
        return Ok(base_lr * step as f64 / warmup as f64);
    }
    if step == total_steps {
        return Ok(0.0);
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    Ok(base_lr * 0.5 * (1.0 + (PI * progress).cos()))
}

pub fn warmup_steps(total_steps: usize, warmup_ratio: f64) -> usize {
    (warmup_ratio * total_steps as f64).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        AdamHyper {
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            epsilon: c.adam_epsilon,
            weight_decay: c.weight_decay,
        }
    }
}

/// AdamW moments and step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: usize,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(n: usize) -> Self {
        OptimizerState {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }
}

/// One AdamW update: decoupled decay `p -= lr * wd * p`, then the
/// bias-corrected moment step. Non-finite gradients leave everything
/// untouched and return an error.
pub fn adamw_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut OptimizerState<T>,
    hp: &AdamHyper,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Shape("optimizer buffers do not match parameters".into()));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate {lr}")));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            step: state.step,
            what: format!("gradient element {i}"),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(hp.beta1);
    let b2 = T::from_f64(hp.beta2);
    let one = T::one();
    let bc1 = T::from_f64(1.0 - hp.beta1.powi(t));
    let bc2 = T::from_f64(1.0 - hp.beta2.powi(t));
    let lr_t = T::from_f64(lr);
    let decay = T::from_f64(1.0 - lr * hp.weight_decay);
    let eps = T::from_f64(hp.epsilon);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub val_loss: Option<f64>,
    pub val_ppl: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// `step,lr,loss` rows.
    pub fn steps_csv(&self) -> String {
        let mut s = String::from("step,lr,loss\n");
        for r in &self.steps {
            let _ = writeln!(s, "{},{:e},{}", r.step, r.lr, r.loss);
        }
        s
    }

    pub fn epochs_csv(&self) -> String {
        let mut s = String::from("epoch,val_loss,val_ppl\n");
        for r in &self.epochs {
            let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{}", r.epoch, f(r.val_loss), f(r.val_ppl));
        }
        s
    }

    /// Parses a `step,lr,loss` file written by [`steps_csv`](Self::steps_csv).
    pub fn parse_steps_csv(text: &str) -> Result<Vec<StepRecord>> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut out = Vec::new();
        for rec in rdr.deserialize() {
            out.push(rec?);
        }
        Ok(out)
    }
}

/// Token chunks for one run.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub train: Vec<Vec<u32>>,
    pub val: Vec<Vec<u32>>,
}

/// Where a run writes checkpoints and what identifies them.
#[derive(Debug, Clone)]
pub struct RunIdentity {
    pub tokenizer_id: String,
    pub orientation: Orientation,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    pub identity: Option<RunIdentity>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from this checkpoint: its parameters, moments and counters
    /// replace the initial state.
    pub resume: Option<Checkpoint>,
    pub on_step: Option<&'a mut dyn FnMut(&StepRecord)>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochRecord)>,
    /// Stop once this many epochs are complete, leaving the schedule
    /// untouched so a later resume continues exactly where this left off.
    pub stop_after_epoch: Option<usize>,
}

#[derive(Debug)]
pub struct TrainOutcome<T> {
    pub params: Params<T>,
    pub optimizer: OptimizerState<T>,
    pub log: TrainLog,
    pub checkpoints: Vec<PathBuf>,
    pub total_steps: usize,
}

pub fn steps_per_epoch(n_chunks: usize, cfg: &TrainConfig) -> usize {
    n_chunks / (cfg.batch_size * cfg.grad_accum_steps)
}

/// Optimizer steps a run will take.
pub fn total_steps(n_chunks: usize, cfg: &TrainConfig) -> usize {
    let full = cfg.epochs * steps_per_epoch(n_chunks, cfg);
    cfg.max_steps.map_or(full, |m| m.min(full))
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mix = seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix));
    order
}

fn split_chunk(chunk: &[u32]) -> (Vec<u32>, Vec<u32>) {
    (chunk[..chunk.len() - 1].to_vec(), chunk[1..].to_vec())
}

/// Token-weighted mean next-token loss over a set of chunks.
pub fn evaluate_loss<T: Real>(params: &Params<T>, chunks: &[Vec<u32>], batch_size: usize) -> Result<f64> {
    if chunks.is_empty() {
        return Err(Error::InvalidArgument("no evaluation chunks".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for batch in chunks.chunks(batch_size.max(1)) {
        let (inputs, targets): (Vec<_>, Vec<_>) = batch.iter().map(|c| split_chunk(c)).unzip();
        let logits = model::forward(params, &inputs)?;
        let n = targets.iter().map(Vec::len).sum::<usize>();
        total += model::loss(&logits, &targets)? * n as f64;
        count += n;
    }
    Ok(total / count as f64)
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch-{epoch:03}.ckpt"))
}

/// Most recent `epoch-NNN.ckpt` in a directory.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let epoch = p
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("epoch-"))
            .and_then(|n| n.strip_suffix(".ckpt"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(e) = epoch {
            if best.as_ref().is_none_or(|(b, _)| e > *b) {
                best = Some((e, p));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Trains `params` on `data.train` chunks.
///
/// Each optimizer step averages the gradients of `grad_accum_steps`
/// micro-batches of `batch_size` chunks, so the step equals one step on the
/// combined batch. Chunk order is reshuffled every epoch from
/// `(seed, epoch)`. Validation loss is computed and a checkpoint written at
/// the end of each epoch.
pub fn train<T: Real>(
    mut params: Params<T>,
    data: &TrainData,
    cfg: &TrainConfig,
    mut opts: TrainOptions<'_>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if let Some(bad) = data.train.iter().chain(&data.val).find(|c| c.len() < 2) {
        return Err(Error::InvalidArgument(format!("chunk of length {} is too short", bad.len())));
    }
    if let Some(too_long) = data.train.iter().find(|c| c.len() - 1 > params.config().context_length) {
        return Err(Error::SequenceTooLong {
            len: too_long.len() - 1,
            context_length: params.config().context_length,
        });
    }
    let per_epoch = steps_per_epoch(data.train.len(), cfg);
    if per_epoch == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} chunks cannot fill one optimizer step of {} x {} chunks",
            data.train.len(),
            cfg.batch_size,
            cfg.grad_accum_steps
        )));
    }
    let total = total_steps(data.train.len(), cfg);
    let hp = AdamHyper::from(cfg);
    let mut optimizer = OptimizerState::new(params.num_params());
    let mut start_epoch = 0;

    if let Some(ck) = opts.resume.take() {
        if let Some(id) = &opts.identity {
            ck.orientation.expect(id.orientation)?;
            if ck.tokenizer_id != id.tokenizer_id {
                return Err(Error::Checkpoint("checkpoint was trained with a different tokenizer".into()));
            }
        }
        if ck.config() != params.config() {
            return Err(Error::Checkpoint("checkpoint config differs from run config".into()));
        }
        params = ck.params.cast();
        let moments = ck
            .moments
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state to resume from".into()))?;
        optimizer.m = moments.m.iter().map(|&x| T::from_f64(x as f64)).collect();
        optimizer.v = moments.v.iter().map(|&x| T::from_f64(x as f64)).collect();
        optimizer.step = ck.step;
        start_epoch = ck.epoch;
    }

    let mut log = TrainLog::default();
    let mut checkpoints = Vec::new();
    let micro = cfg.batch_size;
    let accum = cfg.grad_accum_steps;

    for epoch in start_epoch..cfg.epochs {
        if optimizer.step >= total {
            break;
        }
        let order = epoch_order(data.train.len(), cfg.seed, epoch);
        for s in 0..per_epoch {
            if optimizer.step >= total {
                break;
            }
            let mut grads = params.zeros_like();
            let mut loss_sum = 0.0;
            for a in 0..accum {
                let start = (s * accum + a) * micro;
                let (inputs, targets): (Vec<_>, Vec<_>) =
                    order[start..start + micro].iter().map(|&i| split_chunk(&data.train[i])).unzip();
                let (g, l) = model::backward(&params, &inputs, &targets)?;
                for (acc, x) in grads.data.iter_mut().zip(&g.data) {
                    *acc = *acc + *x;
                }
                loss_sum += l;
            }
            let step_loss = loss_sum / accum as f64;
            if !step_loss.is_finite() {
                return Err(Error::NonFinite {
                    step: optimizer.step,
                    what: format!("loss {step_loss}"),
                });
            }
            let inv = T::from_f64(1.0 / accum as f64);
            grads.data.iter_mut().for_each(|g| *g = *g * inv);
            if let Some(clip) = cfg.grad_clip {
                let norm = grads.data.iter().map(|&g| Real::to_f64(g).powi(2)).sum::<f64>().sqrt();
                if norm > clip {
                    let k = T::from_f64(clip / norm);
                    grads.data.iter_mut().for_each(|g| *g = *g * k);
                }
            }
            let lr = lr_schedule(optimizer.step, total, cfg.warmup_ratio, cfg.base_lr)?;
            let record = StepRecord {
                step: optimizer.step,
                lr,
                loss: step_loss,
            };
            adamw_step(&mut params.data, &grads.data, &mut optimizer, &hp, lr)?;
            if let Some(cb) = opts.on_step.as_mut() {
                cb(&record);
            }
            log.steps.push(record);
        }

        let val_loss = if data.val.is_empty() {
            None
        } else {
            Some(evaluate_loss(&params, &data.val, micro)?)
        };
        let rec = EpochRecord {
            epoch: epoch + 1,
            val_loss,
            val_ppl: val_loss.map(f64::exp),
        };
        if let Some(cb) = opts.on_epoch.as_mut() {
            cb(&rec);
        }
        log.epochs.push(rec);

        if let Some(dir) = &opts.checkpoint_dir {
            let identity = opts.identity.clone().unwrap_or(RunIdentity {
                tokenizer_id: String::new(),
                orientation: Orientation::Forward,
            });
            let ck = Checkpoint {
                tokenizer_id: identity.tokenizer_id,
                orientation: identity.orientation,
                step: optimizer.step,
                epoch: epoch + 1,
                params: params.cast(),
                moments: Some(OptimizerMoments {
                    m: optimizer.m.iter().map(|&x| Real::to_f64(x) as f32).collect(),
                    v: optimizer.v.iter().map(|&x| Real::to_f64(x) as f32).collect(),
                }),
            };
            let path = checkpoint_path(dir, epoch + 1);
            ck.save(&path)?;
            checkpoints.push(path);
        }
        if opts.stop_after_epoch.is_some_and(|stop| epoch + 1 >= stop) {
            break;
        }
    }

    if !params.is_finite() {
        return Err(Error::NonFinite {
            step: optimizer.step,
            what: "parameters".into(),
        });
    }
    Ok(TrainOutcome {
        params,
        optimizer,
        log,
        checkpoints,
        total_steps: total,
    })
}

/// Writes `train_log.csv` and `val_log.csv` into `dir`.
pub fn write_logs(log: &TrainLog, dir: &Path) -> Result<()> {
    write_file(&dir.join("train_log.csv"), log.steps_csv().as_bytes())?;
    write_file(&dir.join("val_log.csv"), log.epochs_csv().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{reverse_corpus, Document};
    use crate::model::ModelConfig;
    use crate::tokenizer::train_bpe;

    fn tiny_cfg(vocab: usize, ctx: usize) -> ModelConfig {
        ModelConfig {
            seed: 1,
            ..ModelConfig::new(vocab, ctx, 1, 2, 8)
        }
    }

    #[test]
    fn schedule_boundaries() {
        let (total, base) = (100, 1e-3);
        assert_eq!(lr_schedule(0, total, 0.03, base).unwrap(), 0.0);
        assert_eq!(lr_schedule(3, total, 0.03, base).unwrap(), base);
        assert_eq!(lr_schedule(total, total, 0.03, base).unwrap(), 0.0);
        let mid = 3 + (total - 3) / 2; // 97 decay steps: midpoint is 48.5 in
        let lr = lr_schedule(mid, total, 0.03, base).unwrap();
        assert!(lr > base / 2.0 && lr < base * 0.52);
        // even-length decay phase has an exact midpoint
        assert!((lr_schedule(51, 102, 0.0, base).unwrap() - base / 2.0).abs() < 1e-15);
        assert!(lr_schedule(1, 0, 0.0, base).is_err());
        assert!(lr_schedule(5, 4, 0.0, base).is_err());
        assert_eq!(lr_schedule(0, 10, 0.0, base).unwrap(), base);
    }

    #[test]
    fn schedule_is_monotone_in_each_phase() {
        let total = 200;
        let w = warmup_steps(total, 0.1);
        let lrs: Vec<f64> = (0..=total).map(|s| lr_schedule(s, total, 0.1, 1.0).unwrap()).collect();
        assert!(lrs[..=w].windows(2).all(|p| p[0] < p[1]));
        assert!(lrs[w..].windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn adamw_fixed_points_and_first_step() {
        let hp = AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        };
        let mut p = vec![1.5f64, -2.0];
        let mut st = OptimizerState::new(2);
        adamw_step(&mut p, &[0.0, 0.0], &mut st, &hp, 0.1).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
        assert_eq!(st.step, 1);

        let hp_wd = AdamHyper { weight_decay: 0.1, ..hp };
        let mut p = vec![1.0f64, -3.0];
        let mut st = OptimizerState::new(2);
        adamw_step(&mut p, &[0.0, 0.0], &mut st, &hp_wd, 0.1).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-15 && (p[1] + 2.97).abs() < 1e-15);

        // m = 0.1, v = 0.001; bias-corrected both equal 1 -> step of lr / (1 + eps).
        let mut p = vec![0.0f64];
        let mut st = OptimizerState::new(1);
        adamw_step(&mut p, &[1.0], &mut st, &hp, 0.1).unwrap();
        assert!((p[0] - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15, "{}", p[0]);
    }

    #[test]
    fn adamw_rejects_non_finite() {
        let hp = AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        };
        let mut p = vec![1.0f32];
        let mut st = OptimizerState::new(1);
        assert!(matches!(
            adamw_step(&mut p, &[f32::NAN], &mut st, &hp, 0.1),
            Err(Error::NonFinite { .. })
        ));
        assert_eq!((p[0], st.step), (1.0, 0));
    }

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Document {
                    id: format!("d{i}"),
                    text: t.to_string(),
                })
                .collect(),
            Orientation::Forward,
        )
        .unwrap()
    }

    #[test]
    fn chunking_arithmetic() {
        let stream: Vec<u32> = (0..2050).collect();
        let chunks = chunk_tokens(&stream, 1024);
        assert_eq!(chunks.len(), 2);
        assert!(chunks.iter().all(|c| c.len() == 1024));
        assert_eq!(chunks[1][1023], 2047);
    }

    #[test]
    fn chunk_stream_guards_orientation() {
        let c = corpus(&["alpha beta", "gamma"]);
        let fwd_tok = train_bpe(&c, 270).unwrap();
        let bwd = reverse_corpus(&c).unwrap();
        let bwd_tok = train_bpe(&bwd, 270).unwrap();
        assert!(matches!(
            chunk_stream(&c, &bwd_tok, 4),
            Err(Error::OrientationMismatch { .. })
        ));
        assert!(chunk_stream(&bwd, &fwd_tok, 4).is_err());
        let chunks = chunk_stream(&c, &fwd_tok, 3).unwrap();
        let total = 2 + fwd_tok.encode_ids("alpha beta").len() + fwd_tok.encode_ids("gamma").len();
        assert_eq!(chunks.len(), total / 3);
        assert_eq!(chunks[0][0], fwd_tok.eod_id());
    }

    fn toy_data(vocab: u32, n: usize, len: usize) -> Vec<Vec<u32>> {
        (0..n)
            .map(|i| (0..len).map(|j| ((i * 7 + j * 3) as u32) % vocab).collect())
            .collect()
    }

    #[test]
    fn lr_trace_matches_schedule() {
        let cfg = TrainConfig {
            base_lr: 1e-2,
            warmup_ratio: 0.2,
            epochs: 2,
            batch_size: 2,
            grad_accum_steps: 2,
            chunk_size: 9,
            ..TrainConfig::default()
        };
        let data = TrainData {
            train: toy_data(32, 12, 9),
            val: toy_data(32, 2, 9),
        };
        let params = Params::<f32>::init(&tiny_cfg(32, 8)).unwrap();
        let out = train(params, &data, &cfg, TrainOptions::default()).unwrap();
        assert_eq!(out.total_steps, 6);
        assert_eq!(out.log.steps.len(), 6);
        for r in &out.log.steps {
            assert_eq!(r.lr, lr_schedule(r.step, 6, 0.2, 1e-2).unwrap());
            assert!(r.loss.is_finite());
        }
        assert_eq!(out.log.epochs.len(), 2);
        assert!(out.params.is_finite());
        let parsed = TrainLog::parse_steps_csv(&out.log.steps_csv()).unwrap();
        assert_eq!(parsed.len(), 6);
    }

    #[test]
    fn too_little_data_is_an_error() {
        let cfg = TrainConfig {
            batch_size: 4,
            grad_accum_steps: 2,
            chunk_size: 5,
            ..TrainConfig::default()
        };
        let data = TrainData {
            train: toy_data(16, 7, 5),
            val: vec![],
        };
        let params = Params::<f32>::init(&tiny_cfg(16, 8)).unwrap();
        assert!(train(params, &data, &cfg, TrainOptions::default()).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            base_lr: 1e-2,
            warmup_ratio: 0.0,
            epochs: 3,
            batch_size: 2,
            grad_accum_steps: 1,
            chunk_size: 9,
            ..TrainConfig::default()
        };
        let data = TrainData {
            train: toy_data(32, 8, 9),
            val: vec![],
        };
        let run = || {
            let params = Params::<f32>::init(&tiny_cfg(32, 8)).unwrap();
            train(params, &data, &cfg, TrainOptions::default()).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.params.data, b.params.data);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let cfg = TrainConfig {
            base_lr: 1e-2,
            warmup_ratio: 0.1,
            epochs: 3,
            batch_size: 2,
            grad_accum_steps: 2,
            chunk_size: 9,
            ..TrainConfig::default()
        };
        let data = TrainData {
            train: toy_data(32, 9, 9),
            val: toy_data(32, 2, 9),
        };
        let init = || Params::<f32>::init(&tiny_cfg(32, 8)).unwrap();
        let full = train(init(), &data, &cfg, TrainOptions::default()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let first = train(
            init(),
            &data,
            &cfg,
            TrainOptions {
                checkpoint_dir: Some(dir.path().to_owned()),
                stop_after_epoch: Some(1),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(first.checkpoints.len(), 1);
        let ck = Checkpoint::load(&latest_checkpoint(dir.path()).unwrap().unwrap()).unwrap();
        let rest = train(
            init(),
            &data,
            &cfg,
            TrainOptions {
                resume: Some(ck),
                ..Default::default()
            },
        )
        .unwrap();
        let mut trace = first.log.steps.clone();
        trace.extend(rest.log.steps.clone());
        assert_eq!(trace, full.log.steps);
        assert_eq!(rest.params.data, full.params.data);
    }

    #[test]
    fn latest_checkpoint_picks_highest_epoch() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(latest_checkpoint(dir.path()).unwrap(), None);
        for e in [1, 3, 2] {
            std::fs::write(checkpoint_path(dir.path(), e), b"x").unwrap();
        }
        assert_eq!(
            latest_checkpoint(dir.path()).unwrap(),
            Some(checkpoint_path(dir.path(), 3))
        );
    }
}
