//! A pre-norm GPT-2-style decoder with hand-written forward and backward
//! passes.
//!
//! Parameters live in one flat buffer described by a [`Layout`]; the output
//! projection is tied to the token embedding. Everything is generic over
//! [`Real`] so training runs in `f32` while gradient checks run in `f64`.

pub mod checkpoint;
mod ops;

use std::fmt::Debug;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ops::log_softmax_row;

/// Marks a target position that does not contribute to the loss.
pub const IGNORE_INDEX: u32 = u32::MAX;

/// Floating-point element type of parameters and activations.
pub trait Real: num_traits::Float + Default + Debug + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Raw strided GEMM: `c = a · b + beta * c` (`alpha` fixed to 1).
    ///
    /// # Safety
    /// Pointers and strides must describe in-bounds, non-overlapping
    /// matrices as required by `matrixmultiply`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_length: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_init_std() -> f64 {
    0.02
}

impl ModelConfig {
    /// A config with the conventional `d_ff = 4 * d_model`.
    pub fn new(vocab_size: usize, context_length: usize, n_layers: usize, n_heads: usize, d_model: usize) -> Self {
        ModelConfig {
            vocab_size,
            context_length,
            n_layers,
            n_heads,
            d_model,
            d_ff: 4 * d_model,
            init_std: default_init_std(),
            seed: 0,
        }
    }

    /// Named architecture presets. `gpt2-*` reproduce the published GPT-2
    /// hyperparameters; `tiny` and `toy` are desk-scale.
    pub fn preset(name: &str, vocab_size: usize) -> Result<Self> {
        let (ctx, layers, heads, d) = match name {
            "tiny" => (64, 2, 2, 16),
            "toy" => (64, 2, 4, 64),
            "small" => (128, 4, 4, 128),
            "gpt2-124m" => (1024, 12, 12, 768),
            "gpt2-355m" => (1024, 24, 16, 1024),
            "gpt2-774m" => (1024, 36, 20, 1280),
            other => return Err(Error::InvalidArgument(format!("unknown model preset `{other}`"))),
        };
        let cfg = Self::new(vocab_size, ctx, layers, heads, d);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("model config: {m}")));
        if self.vocab_size == 0 || self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return bad("sizes must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.context_length < 2 {
            return bad("context_length must be at least 2");
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return bad("init_std must be finite and non-negative");
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn num_params(&self) -> usize {
        let (v, t, c, f, l) = (self.vocab_size, self.context_length, self.d_model, self.d_ff, self.n_layers);
        let per_layer = 2 * c // ln1
            + 3 * c * c + 3 * c // qkv
            + c * c + c // attention output
            + 2 * c // ln2
            + f * c + f // fc
            + c * f + c; // fc projection
        v * c + t * c + l * per_layer + 2 * c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Embedding,
    Weight,
    Bias,
    LayerNormGain,
    LayerNormBias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub kind: TensorKind,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    ln1_g: usize,
    ln1_b: usize,
    qkv_w: usize,
    qkv_b: usize,
    proj_w: usize,
    proj_b: usize,
    ln2_g: usize,
    ln2_b: usize,
    fc_w: usize,
    fc_b: usize,
    fcproj_w: usize,
    fcproj_b: usize,
}

/// Names, shapes, and offsets of every parameter tensor.
#[derive(Debug, Clone)]
pub struct Layout {
    tensors: Vec<TensorSpec>,
    layers: Vec<LayerOffsets>,
    wte: usize,
    wpe: usize,
    lnf_g: usize,
    lnf_b: usize,
    total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (v, t, c, f) = (cfg.vocab_size, cfg.context_length, cfg.d_model, cfg.d_ff);
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>, kind: TensorKind| {
            let spec = TensorSpec { name, shape, offset, kind };
            offset += spec.len();
            let o = spec.offset;
            tensors.push(spec);
            o
        };
        use TensorKind::*;
        let wte = push("wte".into(), vec![v, c], Embedding);
        let wpe = push("wpe".into(), vec![t, c], Embedding);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            layers.push(LayerOffsets {
                ln1_g: push(format!("h{l}.ln1.gain"), vec![c], LayerNormGain),
                ln1_b: push(format!("h{l}.ln1.bias"), vec![c], LayerNormBias),
                qkv_w: push(format!("h{l}.attn.qkv.weight"), vec![3 * c, c], Weight),
                qkv_b: push(format!("h{l}.attn.qkv.bias"), vec![3 * c], Bias),
                proj_w: push(format!("h{l}.attn.proj.weight"), vec![c, c], Weight),
                proj_b: push(format!("h{l}.attn.proj.bias"), vec![c], Bias),
                ln2_g: push(format!("h{l}.ln2.gain"), vec![c], LayerNormGain),
                ln2_b: push(format!("h{l}.ln2.bias"), vec![c], LayerNormBias),
                fc_w: push(format!("h{l}.mlp.fc.weight"), vec![f, c], Weight),
                fc_b: push(format!("h{l}.mlp.fc.bias"), vec![f], Bias),
                fcproj_w: push(format!("h{l}.mlp.proj.weight"), vec![c, f], Weight),
                fcproj_b: push(format!("h{l}.mlp.proj.bias"), vec![c], Bias),
            });
        }
        let lnf_g = push("lnf.gain".into(), vec![c], LayerNormGain);
        let lnf_b = push("lnf.bias".into(), vec![c], LayerNormBias);
        Layout {
            tensors,
            layers,
            wte,
            wpe,
            lnf_g,
            lnf_b,
            total: offset,
        }
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Learnable parameters: a flat buffer plus the layout that names it.
#[derive(Debug, Clone)]
pub struct Params<T> {
    config: ModelConfig,
    layout: Arc<Layout>,
    pub data: Vec<T>,
}

/// Gradients share the parameter layout.
pub type Gradients<T> = Params<T>;

impl<T: Real> Params<T> {
    /// Gaussian weights (`init_std`), zero biases, unit layer-norm gains.
    /// Deterministic in `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(Layout::new(config));
        let mut data = vec![T::zero(); layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for spec in layout.tensors() {
            let slot = &mut data[spec.range()];
            match spec.kind {
                TensorKind::Embedding | TensorKind::Weight => {
                    for x in slot.iter_mut() {
                        *x = T::from_f64(normal.sample(&mut rng));
                    }
                }
                TensorKind::LayerNormGain => slot.fill(T::one()),
                TensorKind::Bias | TensorKind::LayerNormBias => {}
            }
        }
        Ok(Params {
            config: config.clone(),
            layout,
            data,
        })
    }

    /// A zero buffer with this layout.
    pub fn zeros_like(&self) -> Self {
        Params {
            config: self.config.clone(),
            layout: Arc::clone(&self.layout),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn from_data(config: &ModelConfig, data: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(Layout::new(config));
        if data.len() != layout.total() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                layout.total(),
                data.len()
            )));
        }
        Ok(Params {
            config: config.clone(),
            layout,
            data,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.get(name).map(|s| &self.data[s.range()])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            config: self.config.clone(),
            layout: Arc::clone(&self.layout),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }

    fn slice(&self, offset: usize, len: usize) -> &[T] {
        &self.data[offset..offset + len]
    }
}

/// Logits of shape `(batch, seq_len, vocab_size)`.
#[derive(Debug, Clone)]
pub struct Logits<T> {
    pub batch: usize,
    pub seq_len: usize,
    pub vocab_size: usize,
    pub data: Vec<T>,
}

impl<T: Real> Logits<T> {
    pub fn row(&self, b: usize, t: usize) -> &[T] {
        let start = (b * self.seq_len + t) * self.vocab_size;
        &self.data[start..start + self.vocab_size]
    }
}

struct LayerActs<T> {
    input: Vec<T>,
    ln1: Vec<T>,
    ln1_mean: Vec<T>,
    ln1_rstd: Vec<T>,
    qkv: Vec<T>,
    att: Vec<T>,
    atty: Vec<T>,
    mid: Vec<T>,
    ln2: Vec<T>,
    ln2_mean: Vec<T>,
    ln2_rstd: Vec<T>,
    fch: Vec<T>,
    fch_gelu: Vec<T>,
}

struct SeqActs<T> {
    layers: Vec<LayerActs<T>>,
    last: Vec<T>,
    lnf: Vec<T>,
    lnf_mean: Vec<T>,
    lnf_rstd: Vec<T>,
    logits: Vec<T>,
}

fn check_tokens(cfg: &ModelConfig, tokens: &[u32]) -> Result<()> {
    if tokens.len() > cfg.context_length {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            context_length: cfg.context_length,
        });
    }
    if let Some(&id) = tokens.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(())
}

fn seq_forward<T: Real>(p: &Params<T>, tokens: &[u32]) -> SeqActs<T> {
    let cfg = &p.config;
    let lay = &p.layout;
    let (t, c, f, v, nh) = (tokens.len(), cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.n_heads);
    let wte = p.slice(lay.wte, v * c);
    let wpe = p.slice(lay.wpe, cfg.context_length * c);

    let mut x = vec![T::zero(); t * c];
    for (i, &tok) in tokens.iter().enumerate() {
        let e = &wte[tok as usize * c..(tok as usize + 1) * c];
        let pe = &wpe[i * c..(i + 1) * c];
        for j in 0..c {
            x[i * c + j] = e[j] + pe[j];
        }
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for lo in &lay.layers {
        let mut a = LayerActs {
            input: x,
            ln1: vec![T::zero(); t * c],
            ln1_mean: vec![T::zero(); t],
            ln1_rstd: vec![T::zero(); t],
            qkv: vec![T::zero(); t * 3 * c],
            att: vec![T::zero(); nh * t * t],
            atty: vec![T::zero(); t * c],
            mid: vec![T::zero(); t * c],
            ln2: vec![T::zero(); t * c],
            ln2_mean: vec![T::zero(); t],
            ln2_rstd: vec![T::zero(); t],
            fch: vec![T::zero(); t * f],
            fch_gelu: vec![T::zero(); t * f],
        };
        ops::layernorm_forward(
            &mut a.ln1,
            &mut a.ln1_mean,
            &mut a.ln1_rstd,
            &a.input,
            p.slice(lo.ln1_g, c),
            p.slice(lo.ln1_b, c),
            t,
            c,
        );
        ops::linear_forward(
            &mut a.qkv,
            &a.ln1,
            p.slice(lo.qkv_w, 3 * c * c),
            Some(p.slice(lo.qkv_b, 3 * c)),
            t,
            c,
            3 * c,
        );
        ops::attention_forward(&mut a.atty, &mut a.att, &a.qkv, t, c, nh);
        ops::linear_forward(&mut a.mid, &a.atty, p.slice(lo.proj_w, c * c), Some(p.slice(lo.proj_b, c)), t, c, c);
        for (m, &xi) in a.mid.iter_mut().zip(&a.input) {
            *m = *m + xi;
        }
        ops::layernorm_forward(
            &mut a.ln2,
            &mut a.ln2_mean,
            &mut a.ln2_rstd,
            &a.mid,
            p.slice(lo.ln2_g, c),
            p.slice(lo.ln2_b, c),
            t,
            c,
        );
        ops::linear_forward(&mut a.fch, &a.ln2, p.slice(lo.fc_w, f * c), Some(p.slice(lo.fc_b, f)), t, c, f);
        ops::gelu_forward(&mut a.fch_gelu, &a.fch);
        let mut out = vec![T::zero(); t * c];
        ops::linear_forward(
            &mut out,
            &a.fch_gelu,
            p.slice(lo.fcproj_w, c * f),
            Some(p.slice(lo.fcproj_b, c)),
            t,
            f,
            c,
        );
        for (o, &m) in out.iter_mut().zip(&a.mid) {
            *o = *o + m;
        }
        x = out;
        layers.push(a);
    }

    let mut lnf = vec![T::zero(); t * c];
    let mut lnf_mean = vec![T::zero(); t];
    let mut lnf_rstd = vec![T::zero(); t];
    ops::layernorm_forward(
        &mut lnf,
        &mut lnf_mean,
        &mut lnf_rstd,
        &x,
        p.slice(lay.lnf_g, c),
        p.slice(lay.lnf_b, c),
        t,
        c,
    );
    let mut logits = vec![T::zero(); t * v];
    ops::linear_forward(&mut logits, &lnf, wte, None, t, c, v);
    SeqActs {
        layers,
        last: x,
        lnf,
        lnf_mean,
        lnf_rstd,
        logits,
    }
}

/// Backpropagates `dlogits` through one sequence, accumulating into `g`.
fn seq_backward<T: Real>(p: &Params<T>, tokens: &[u32], acts: &SeqActs<T>, dlogits: &[T], g: &mut [T]) {
    let cfg = &p.config;
    let lay = &p.layout;
    let (t, c, f, v, nh) = (tokens.len(), cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.n_heads);

    let mut dlnf = vec![T::zero(); t * c];
    ops::linear_backward(
        &mut dlnf,
        &mut g[lay.wte..lay.wte + v * c],
        None,
        dlogits,
        &acts.lnf,
        p.slice(lay.wte, v * c),
        t,
        c,
        v,
    );
    let mut dx = vec![T::zero(); t * c];
    {
        let (dg, db) = split_pair(g, lay.lnf_g, lay.lnf_b, c);
        ops::layernorm_backward(
            &mut dx,
            dg,
            db,
            &dlnf,
            &acts.last,
            p.slice(lay.lnf_g, c),
            &acts.lnf_mean,
            &acts.lnf_rstd,
            t,
            c,
        );
    }

    for (lo, a) in lay.layers.iter().zip(&acts.layers).rev() {
        // x_out = mid + mlp(ln2(mid)); dx holds d x_out.
        let mut dgelu = vec![T::zero(); t * f];
        {
            let (dw, db) = split_pair(g, lo.fcproj_w, lo.fcproj_b, c * f);
            ops::linear_backward(&mut dgelu, dw, Some(&mut db[..c]), &dx, &a.fch_gelu, p.slice(lo.fcproj_w, c * f), t, f, c);
        }
        let mut dfch = vec![T::zero(); t * f];
        ops::gelu_backward(&mut dfch, &a.fch, &dgelu);
        let mut dln2 = vec![T::zero(); t * c];
        {
            let (dw, db) = split_pair(g, lo.fc_w, lo.fc_b, f * c);
            ops::linear_backward(&mut dln2, dw, Some(&mut db[..f]), &dfch, &a.ln2, p.slice(lo.fc_w, f * c), t, c, f);
        }
        let mut dmid = dx;
        {
            let (dg, db) = split_pair(g, lo.ln2_g, lo.ln2_b, c);
            ops::layernorm_backward(
                &mut dmid,
                dg,
                db,
                &dln2,
                &a.mid,
                p.slice(lo.ln2_g, c),
                &a.ln2_mean,
                &a.ln2_rstd,
                t,
                c,
            );
        }
        // mid = input + proj(attn(ln1(input)))
        let mut datty = vec![T::zero(); t * c];
        {
            let (dw, db) = split_pair(g, lo.proj_w, lo.proj_b, c * c);
            ops::linear_backward(&mut datty, dw, Some(&mut db[..c]), &dmid, &a.atty, p.slice(lo.proj_w, c * c), t, c, c);
        }
        let mut dqkv = vec![T::zero(); t * 3 * c];
        ops::attention_backward(&mut dqkv, &datty, &a.qkv, &a.att, t, c, nh);
        let mut dln1 = vec![T::zero(); t * c];
        {
            let (dw, db) = split_pair(g, lo.qkv_w, lo.qkv_b, 3 * c * c);
            ops::linear_backward(&mut dln1, dw, Some(&mut db[..3 * c]), &dqkv, &a.ln1, p.slice(lo.qkv_w, 3 * c * c), t, c, 3 * c);
        }
        let mut dinput = dmid;
        {
            let (dg, db) = split_pair(g, lo.ln1_g, lo.ln1_b, c);
            ops::layernorm_backward(
                &mut dinput,
                dg,
                db,
                &dln1,
                &a.input,
                p.slice(lo.ln1_g, c),
                &a.ln1_mean,
                &a.ln1_rstd,
                t,
                c,
            );
        }
        dx = dinput;
    }

    for (i, &tok) in tokens.iter().enumerate() {
        let d = &dx[i * c..(i + 1) * c];
        let we = lay.wte + tok as usize * c;
        for j in 0..c {
            g[we + j] = g[we + j] + d[j];
        }
        let pe = lay.wpe + i * c;
        for j in 0..c {
            g[pe + j] = g[pe + j] + d[j];
        }
    }
}

/// Mutable views of two adjacent tensors: `[a, a + len_a)` and everything
/// from `b` on. Requires `a + len_a <= b`.
fn split_pair<T>(g: &mut [T], a: usize, b: usize, len_a: usize) -> (&mut [T], &mut [T]) {
    debug_assert!(a + len_a <= b);
    let (lo, hi) = g.split_at_mut(b);
    (&mut lo[a..a + len_a], hi)
}

fn check_batch(cfg: &ModelConfig, inputs: &[Vec<u32>]) -> Result<usize> {
    let Some(first) = inputs.first() else {
        return Err(Error::InvalidArgument("empty batch".into()));
    };
    let len = first.len();
    for seq in inputs {
        if seq.len() != len {
            return Err(Error::Shape("sequences in a batch must share a length".into()));
        }
        check_tokens(cfg, seq)?;
    }
    Ok(len)
}

/// Logits for a batch of equal-length sequences.
pub fn forward<T: Real>(params: &Params<T>, inputs: &[Vec<u32>]) -> Result<Logits<T>> {
    let seq_len = check_batch(&params.config, inputs)?;
    let per_seq: Vec<Vec<T>> = inputs.par_iter().map(|seq| seq_forward(params, seq).logits).collect();
    Ok(Logits {
        batch: inputs.len(),
        seq_len,
        vocab_size: params.config.vocab_size,
        data: per_seq.concat(),
    })
}

/// Mean next-token cross-entropy (nats) over non-ignored target positions.
pub fn loss<T: Real>(logits: &Logits<T>, targets: &[Vec<u32>]) -> Result<f64> {
    if targets.len() != logits.batch || targets.iter().any(|t| t.len() != logits.seq_len) {
        return Err(Error::Shape(format!(
            "targets do not match logits of shape ({}, {}, {})",
            logits.batch, logits.seq_len, logits.vocab_size
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (b, row_targets) in targets.iter().enumerate() {
        for (t, &target) in row_targets.iter().enumerate() {
            if target == IGNORE_INDEX {
                continue;
            }
            if target as usize >= logits.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id: target,
                    vocab_size: logits.vocab_size,
                });
            }
            total -= log_softmax_row(logits.row(b, t))[target as usize];
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no target positions".into()));
    }
    Ok(total / count as f64)
}

/// Writes `(softmax - onehot) * scale` into `logits` in place and returns
/// the summed negative log-likelihood of the row targets.
fn softmax_xent_backward<T: Real>(logits: &mut [T], targets: &[u32], v: usize, scale: T) -> f64 {
    let mut nll = 0.0;
    for (row, &target) in logits.chunks_exact_mut(v).zip(targets) {
        if target == IGNORE_INDEX {
            row.fill(T::zero());
            continue;
        }
        let lp = log_softmax_row(row);
        nll -= lp[target as usize];
        for (x, l) in row.iter_mut().zip(&lp) {
            *x = T::from_f64(l.exp()) * scale;
        }
        row[target as usize] = row[target as usize] - scale;
    }
    nll
}

/// Exact gradients of the mean cross-entropy, plus that loss.
///
/// Sequences are processed independently and their gradients summed in
/// batch order, so the result does not depend on the thread count.
pub fn backward<T: Real>(params: &Params<T>, inputs: &[Vec<u32>], targets: &[Vec<u32>]) -> Result<(Gradients<T>, f64)> {
    let seq_len = check_batch(&params.config, inputs)?;
    if targets.len() != inputs.len() || targets.iter().any(|t| t.len() != seq_len) {
        return Err(Error::Shape("targets must match inputs".into()));
    }
    let v = params.config.vocab_size;
    let mut count = 0usize;
    for &tgt in targets.iter().flatten() {
        if tgt == IGNORE_INDEX {
            continue;
        }
        if tgt as usize >= v {
            return Err(Error::TokenOutOfRange { id: tgt, vocab_size: v });
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidArgument("zero-length effective batch".into()));
    }
    let scale = T::from_f64(1.0 / count as f64);
    let per_seq: Vec<(Vec<T>, f64)> = inputs
        .par_iter()
        .zip(targets.par_iter())
        .map(|(inp, tgt)| {
            let mut acts = seq_forward(params, inp);
            let mut dlogits = std::mem::take(&mut acts.logits);
            let nll = softmax_xent_backward(&mut dlogits, tgt, v, scale);
            let mut g = vec![T::zero(); params.data.len()];
            seq_backward(params, inp, &acts, &dlogits, &mut g);
            (g, nll)
        })
        .collect();
    let mut grads = params.zeros_like();
    let mut nll = 0.0;
    for (g, l) in per_seq {
        for (a, b) in grads.data.iter_mut().zip(g) {
            *a = *a + b;
        }
        nll += l;
    }
    Ok((grads, nll / count as f64))
}

/// `log p(ids[i] | ids[..i])` for every `i >= 1`.
pub fn sequence_log_probs<T: Real>(params: &Params<T>, ids: &[u32]) -> Result<Vec<f64>> {
    if ids.len() < 2 {
        check_tokens(&params.config, ids)?;
        return Ok(Vec::new());
    }
    // The last id is only a target, so `ids` may be one longer than the context.
    check_tokens(&params.config, &ids[..ids.len() - 1])?;
    check_tokens(&params.config, &ids[ids.len() - 1..])?;
    let acts = seq_forward(params, &ids[..ids.len() - 1]);
    let v = params.config.vocab_size;
    Ok(acts
        .logits
        .chunks_exact(v)
        .zip(&ids[1..])
        .map(|(row, &next)| log_softmax_row(row)[next as usize])
        .collect())
}
