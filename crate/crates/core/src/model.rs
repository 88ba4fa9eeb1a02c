//! The sequence model: temporal-convolution embedding, sinusoidal positional
//! encoding, self-attention encoder blocks, and the three per-frame heads.

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{NodeId, Tape};
use crate::{AU_UNITS, EXPR_CLASSES};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Input feature dimension (after any stream merging).
    pub d_v: usize,
    /// Embedded model dimension.
    pub d_m: usize,
    pub num_heads: usize,
    /// Per-head query/key dimension; always d_m / num_heads.
    pub d_k: usize,
    pub d_ffn: usize,
    pub num_layers: usize,
    /// Odd temporal kernel width.
    pub conv_kernel: usize,
    /// Maximum window length.
    pub max_t: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Defaults sized for CPU-scale training.
    pub fn new(d_v: usize) -> Self {
        ModelConfig {
            d_v,
            d_m: 128,
            num_heads: 4,
            d_k: 32,
            d_ffn: 256,
            num_layers: 2,
            conv_kernel: 3,
            max_t: 64,
            dropout_rate: 0.1,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || !self.d_m.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "d_m {} must be divisible by num_heads {}",
                self.d_m, self.num_heads
            )));
        }
        if self.d_k != self.d_m / self.num_heads {
            return Err(Error::Config(format!(
                "d_k {} must equal d_m/num_heads = {}",
                self.d_k,
                self.d_m / self.num_heads
            )));
        }
        if !self.d_m.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "d_m {} must be even for the positional encoding",
                self.d_m
            )));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "conv_kernel {} must be odd",
                self.conv_kernel
            )));
        }
        if self.max_t == 0 {
            return Err(Error::Config("max_T must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} must lie in [0, 1)",
                self.dropout_rate
            )));
        }
        if self.d_v == 0 || self.d_ffn == 0 || self.num_layers == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Train mode applies dropout; inference is a pure function of the inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// One dense tensor of learnable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

impl Param {
    fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Param {
            data: vec![0.0; n],
            shape,
        }
    }

    fn ones(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Param {
            data: vec![1.0; n],
            shape,
        }
    }

    /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    fn xavier(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let n: usize = shape.iter().product();
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Param {
            data: (0..n).map(|_| rng.uniform(-bound, bound)).collect(),
            shape,
        }
    }
}

/// Query/key/value/output projections of one attention sublayer. Each matrix
/// is d_m x d_m, read as H stacked d_m x d_k column blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProjections {
    pub w_q: Param,
    pub w_k: Param,
    pub w_v: Param,
    pub w_o: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub attn: AttentionProjections,
    pub ln1_gamma: Param,
    pub ln1_beta: Param,
    pub ffn_w1: Param,
    pub ffn_b1: Param,
    pub ffn_w2: Param,
    pub ffn_b2: Param,
    pub ln2_gamma: Param,
    pub ln2_beta: Param,
}

/// All learnable tensors, in a fixed walk order shared by initialization,
/// optimizer state, and checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conv_w: Param,
    pub conv_b: Param,
    pub blocks: Vec<BlockParams>,
    pub va_w: Param,
    pub va_b: Param,
    pub expr_w: Param,
    pub expr_b: Param,
    pub au_w: Param,
    pub au_b: Param,
}

impl ModelParams {
    /// Deterministic initialization: affine weights Xavier-uniform from the
    /// seed, biases zero, layer-norm gains one.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::for_stream(seed, rng::stream::INIT);
        let (d_v, d_m, d_ffn, k) = (cfg.d_v, cfg.d_m, cfg.d_ffn, cfg.conv_kernel);
        let conv_w = Param::xavier(vec![k, d_v, d_m], k * d_v, d_m, &mut rng);
        let conv_b = Param::zeros(vec![d_m]);
        let mut blocks = Vec::with_capacity(cfg.num_layers);
        for _ in 0..cfg.num_layers {
            blocks.push(BlockParams {
                attn: AttentionProjections {
                    w_q: Param::xavier(vec![d_m, d_m], d_m, d_m, &mut rng),
                    w_k: Param::xavier(vec![d_m, d_m], d_m, d_m, &mut rng),
                    w_v: Param::xavier(vec![d_m, d_m], d_m, d_m, &mut rng),
                    w_o: Param::xavier(vec![d_m, d_m], d_m, d_m, &mut rng),
                },
                ln1_gamma: Param::ones(vec![d_m]),
                ln1_beta: Param::zeros(vec![d_m]),
                ffn_w1: Param::xavier(vec![d_m, d_ffn], d_m, d_ffn, &mut rng),
                ffn_b1: Param::zeros(vec![d_ffn]),
                ffn_w2: Param::xavier(vec![d_ffn, d_m], d_ffn, d_m, &mut rng),
                ffn_b2: Param::zeros(vec![d_m]),
                ln2_gamma: Param::ones(vec![d_m]),
                ln2_beta: Param::zeros(vec![d_m]),
            });
        }
        Ok(ModelParams {
            conv_w,
            conv_b,
            blocks,
            va_w: Param::xavier(vec![d_m, 2], d_m, 2, &mut rng),
            va_b: Param::zeros(vec![2]),
            expr_w: Param::xavier(vec![d_m, EXPR_CLASSES], d_m, EXPR_CLASSES, &mut rng),
            expr_b: Param::zeros(vec![EXPR_CLASSES]),
            au_w: Param::xavier(vec![d_m, AU_UNITS], d_m, AU_UNITS, &mut rng),
            au_b: Param::zeros(vec![AU_UNITS]),
        })
    }

    /// Visit every parameter with its canonical name, in walk order.
    pub fn for_each(&self, mut f: impl FnMut(String, &Param)) {
        f("embed.conv_w".into(), &self.conv_w);
        f("embed.conv_b".into(), &self.conv_b);
        for (i, b) in self.blocks.iter().enumerate() {
            f(format!("block{i}.attn.w_q"), &b.attn.w_q);
            f(format!("block{i}.attn.w_k"), &b.attn.w_k);
            f(format!("block{i}.attn.w_v"), &b.attn.w_v);
            f(format!("block{i}.attn.w_o"), &b.attn.w_o);
            f(format!("block{i}.ln1_gamma"), &b.ln1_gamma);
            f(format!("block{i}.ln1_beta"), &b.ln1_beta);
            f(format!("block{i}.ffn_w1"), &b.ffn_w1);
            f(format!("block{i}.ffn_b1"), &b.ffn_b1);
            f(format!("block{i}.ffn_w2"), &b.ffn_w2);
            f(format!("block{i}.ffn_b2"), &b.ffn_b2);
            f(format!("block{i}.ln2_gamma"), &b.ln2_gamma);
            f(format!("block{i}.ln2_beta"), &b.ln2_beta);
        }
        f("head.va_w".into(), &self.va_w);
        f("head.va_b".into(), &self.va_b);
        f("head.expr_w".into(), &self.expr_w);
        f("head.expr_b".into(), &self.expr_b);
        f("head.au_w".into(), &self.au_w);
        f("head.au_b".into(), &self.au_b);
    }

    /// Mutable references in the same walk order, paired with names.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out: Vec<(String, &mut Param)> = Vec::new();
        out.push(("embed.conv_w".into(), &mut self.conv_w));
        out.push(("embed.conv_b".into(), &mut self.conv_b));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i}.attn.w_q"), &mut b.attn.w_q));
            out.push((format!("block{i}.attn.w_k"), &mut b.attn.w_k));
            out.push((format!("block{i}.attn.w_v"), &mut b.attn.w_v));
            out.push((format!("block{i}.attn.w_o"), &mut b.attn.w_o));
            out.push((format!("block{i}.ln1_gamma"), &mut b.ln1_gamma));
            out.push((format!("block{i}.ln1_beta"), &mut b.ln1_beta));
            out.push((format!("block{i}.ffn_w1"), &mut b.ffn_w1));
            out.push((format!("block{i}.ffn_b1"), &mut b.ffn_b1));
            out.push((format!("block{i}.ffn_w2"), &mut b.ffn_w2));
            out.push((format!("block{i}.ffn_b2"), &mut b.ffn_b2));
            out.push((format!("block{i}.ln2_gamma"), &mut b.ln2_gamma));
            out.push((format!("block{i}.ln2_beta"), &mut b.ln2_beta));
        }
        out.push(("head.va_w".into(), &mut self.va_w));
        out.push(("head.va_b".into(), &mut self.va_b));
        out.push(("head.expr_w".into(), &mut self.expr_w));
        out.push(("head.expr_b".into(), &mut self.expr_b));
        out.push(("head.au_w".into(), &mut self.au_w));
        out.push(("head.au_b".into(), &mut self.au_b));
        out
    }

    pub fn named(&self) -> Vec<(String, Param)> {
        let mut out = Vec::new();
        self.for_each(|name, p| out.push((name, p.clone())));
        out
    }

    /// Register every parameter on a tape as a gradient-tracked leaf.
    pub fn register(&self, tape: &mut Tape) -> Result<RegisteredParams> {
        let mut ids = Vec::new();
        let mut err = None;
        self.for_each(|_, p| {
            if err.is_some() {
                return;
            }
            match tape.variable(p.data.clone(), p.shape.clone()) {
                Ok(id) => ids.push(id),
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        Ok(RegisteredParams {
            ids,
            num_layers: self.blocks.len(),
        })
    }
}

/// Tape handles for one registration of [`ModelParams`], in walk order.
#[derive(Debug, Clone)]
pub struct RegisteredParams {
    ids: Vec<NodeId>,
    num_layers: usize,
}

const BLOCK_STRIDE: usize = 12;

impl RegisteredParams {
    pub fn all_ids(&self) -> &[NodeId] {
        &self.ids
    }

    fn conv_w(&self) -> NodeId {
        self.ids[0]
    }
    fn conv_b(&self) -> NodeId {
        self.ids[1]
    }
    fn block(&self, i: usize) -> &[NodeId] {
        let base = 2 + i * BLOCK_STRIDE;
        &self.ids[base..base + BLOCK_STRIDE]
    }
    fn heads(&self) -> &[NodeId] {
        let base = 2 + self.num_layers * BLOCK_STRIDE;
        &self.ids[base..base + 6]
    }
}

/// Sinusoidal positional table: PE[t, 2i] = sin(t / 10000^(2i/d_m)),
/// PE[t, 2i+1] = cos of the same argument. Constant, not trainable.
pub fn positional_encoding(max_t: usize, d_m: usize) -> Result<Vec<f64>> {
    if !d_m.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "positional encoding needs even d_m, got {d_m}"
        )));
    }
    let mut table = vec![0.0; max_t * d_m];
    for t in 0..max_t {
        for i in 0..d_m / 2 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / d_m as f64);
            table[t * d_m + 2 * i] = angle.sin();
            table[t * d_m + 2 * i + 1] = angle.cos();
        }
    }
    Ok(table)
}

/// Inverted dropout: zero with probability `rate`, scale the rest by
/// 1/(1-rate) so inference needs no correction. The mask comes from `rng`,
/// a per-step stream, so training replays exactly.
fn dropout(tape: &mut Tape, x: NodeId, rate: f64, rng: &mut Rng) -> Result<NodeId> {
    if rate == 0.0 {
        return Ok(x);
    }
    let n = tape.numel_of(x);
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.chance(rate) { 0.0 } else { keep })
        .collect();
    let mask_node = tape.constant(mask, tape.shape(x).to_vec())?;
    tape.mul(x, mask_node)
}

fn linear(tape: &mut Tape, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let prod = tape.matmul(x, w)?;
    tape.add(prod, b)
}

/// softmax(Q K^T / sqrt(d_k)) V over the full window; no causal mask.
pub fn scaled_dot_attention(tape: &mut Tape, q: NodeId, k: NodeId, v: NodeId) -> Result<NodeId> {
    let (sq, sk, sv) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if sq != sk || sq != sv || sq.len() != 2 {
        return Err(Error::dimension("scaled_dot_attention", &sq, &sk));
    }
    let d_k = sq[1];
    let k_t = tape.transpose(k)?;
    let scores = tape.matmul(q, k_t)?;
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
    let weights = tape.softmax_lastdim(scaled)?;
    tape.matmul(weights, v)
}

/// Same as [`scaled_dot_attention`] but also returns the weight matrix, for
/// invariant checks on the attention distribution itself.
pub fn scaled_dot_attention_with_weights(
    tape: &mut Tape,
    q: NodeId,
    k: NodeId,
    v: NodeId,
) -> Result<(NodeId, NodeId)> {
    let d_k = tape.shape(q)[1];
    let k_t = tape.transpose(k)?;
    let scores = tape.matmul(q, k_t)?;
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
    let weights = tape.softmax_lastdim(scaled)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// Multi-head attention over time: project, split the last dimension into H
/// heads, attend per head across all timesteps, concatenate, project out.
pub fn tma_forward(
    tape: &mut Tape,
    x: NodeId,
    w_q: NodeId,
    w_k: NodeId,
    w_v: NodeId,
    w_o: NodeId,
    num_heads: usize,
) -> Result<NodeId> {
    let d_m = tape.shape(x)[1];
    if num_heads == 0 || !d_m.is_multiple_of(num_heads) {
        return Err(Error::Config(format!(
            "d_m {d_m} not divisible into {num_heads} heads"
        )));
    }
    let d_k = d_m / num_heads;
    let q = tape.matmul(x, w_q)?;
    let k = tape.matmul(x, w_k)?;
    let v = tape.matmul(x, w_v)?;
    let mut heads = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let qh = tape.slice_lastdim(q, h * d_k, d_k)?;
        let kh = tape.slice_lastdim(k, h * d_k, d_k)?;
        let vh = tape.slice_lastdim(v, h * d_k, d_k)?;
        heads.push(scaled_dot_attention(tape, qh, kh, vh)?);
    }
    let concat = tape.concat_lastdim(&heads)?;
    tape.matmul(concat, w_o)
}

/// Post-norm encoder block:
/// y = LN(x + dropout(attention(x))); out = LN(y + dropout(FFN(y))).
#[allow(clippy::too_many_arguments)]
fn encoder_block(
    tape: &mut Tape,
    x: NodeId,
    block: &[NodeId],
    num_heads: usize,
    rate: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<NodeId> {
    let [w_q, w_k, w_v, w_o, ln1_g, ln1_b, ffn_w1, ffn_b1, ffn_w2, ffn_b2, ln2_g, ln2_b] =
        *block
    else {
        return Err(Error::Contract("encoder block parameter count".into()));
    };
    let attn = tma_forward(tape, x, w_q, w_k, w_v, w_o, num_heads)?;
    let attn = match mode {
        Mode::Train => dropout(tape, attn, rate, rng)?,
        Mode::Infer => attn,
    };
    let res1 = tape.add(x, attn)?;
    let y = tape.layer_norm_lastdim(res1, ln1_g, ln1_b)?;

    let hidden = linear(tape, y, ffn_w1, ffn_b1)?;
    let act = tape.relu(hidden);
    let ffn = linear(tape, act, ffn_w2, ffn_b2)?;
    let ffn = match mode {
        Mode::Train => dropout(tape, ffn, rate, rng)?,
        Mode::Infer => ffn,
    };
    let res2 = tape.add(y, ffn)?;
    tape.layer_norm_lastdim(res2, ln2_g, ln2_b)
}

/// Per-frame outputs of one forward pass, as tape handles.
#[derive(Debug, Clone, Copy)]
pub struct TaskOutputs {
    /// T x 2, tanh-bounded to (-1, 1).
    pub va: NodeId,
    /// T x 8 expression logits.
    pub expr_logits: NodeId,
    /// T x 12 action-unit logits.
    pub au_logits: NodeId,
}

/// Embed one window: temporal convolution to d_m, then add the positional
/// encoding rows for 0..T.
pub fn embed_sequence(
    tape: &mut Tape,
    features: &[f64],
    t: usize,
    cfg: &ModelConfig,
    reg: &RegisteredParams,
) -> Result<NodeId> {
    embed_with_options(tape, features, t, cfg, reg, true)
}

fn embed_with_options(
    tape: &mut Tape,
    features: &[f64],
    t: usize,
    cfg: &ModelConfig,
    reg: &RegisteredParams,
    positional: bool,
) -> Result<NodeId> {
    if t == 0 || features.len() != t * cfg.d_v {
        return Err(Error::dimension(
            "embed_sequence",
            &[t, cfg.d_v],
            &[features.len()],
        ));
    }
    if t > cfg.max_t {
        return Err(Error::Window {
            len: t,
            max_t: cfg.max_t,
        });
    }
    let x = tape.constant(features.to_vec(), vec![t, cfg.d_v])?;
    let embedded = tape.conv1d_temporal(x, reg.conv_w(), reg.conv_b())?;
    if !positional {
        return Ok(embedded);
    }
    let table = positional_encoding(cfg.max_t, cfg.d_m)?;
    let rows = table[0..t * cfg.d_m].to_vec();
    let pe = tape.constant(rows, vec![t, cfg.d_m])?;
    tape.add(embedded, pe)
}

/// Full forward pass over one window of `t` frames (`features` row-major
/// T x d_v). In train mode, dropout draws from `rng`; inference ignores it.
pub fn model_forward(
    tape: &mut Tape,
    features: &[f64],
    t: usize,
    cfg: &ModelConfig,
    reg: &RegisteredParams,
    mode: Mode,
    rng: &mut Rng,
) -> Result<TaskOutputs> {
    model_forward_opts(tape, features, t, cfg, reg, mode, rng, true)
}

/// Forward pass with the positional encoding optionally disabled; the switch
/// exists for equivariance checks and is on in normal use.
#[allow(clippy::too_many_arguments)]
pub fn model_forward_opts(
    tape: &mut Tape,
    features: &[f64],
    t: usize,
    cfg: &ModelConfig,
    reg: &RegisteredParams,
    mode: Mode,
    rng: &mut Rng,
    positional: bool,
) -> Result<TaskOutputs> {
    cfg.validate()?;
    let mut h = embed_with_options(tape, features, t, cfg, reg, positional)?;
    for i in 0..cfg.num_layers {
        h = encoder_block(
            tape,
            h,
            reg.block(i),
            cfg.num_heads,
            cfg.dropout_rate,
            mode,
            rng,
        )?;
    }
    let [va_w, va_b, expr_w, expr_b, au_w, au_b] = *reg.heads() else {
        return Err(Error::Contract("head parameter count".into()));
    };
    let va_lin = linear(tape, h, va_w, va_b)?;
    let va = tape.tanh_elem(va_lin);
    let expr_logits = linear(tape, h, expr_w, expr_b)?;
    let au_logits = linear(tape, h, au_w, au_b)?;
    Ok(TaskOutputs {
        va,
        expr_logits,
        au_logits,
    })
}

/// Plain-value predictions extracted from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub va: Vec<[f64; 2]>,
    pub expr_logits: Vec<[f64; EXPR_CLASSES]>,
    pub au_logits: Vec<[f64; AU_UNITS]>,
}

impl TaskOutputs {
    pub fn extract(&self, tape: &Tape) -> Predictions {
        let t = tape.shape(self.va)[0];
        let va_data = tape.value(self.va);
        let expr_data = tape.value(self.expr_logits);
        let au_data = tape.value(self.au_logits);
        let mut va = Vec::with_capacity(t);
        let mut expr_logits = Vec::with_capacity(t);
        let mut au_logits = Vec::with_capacity(t);
        for i in 0..t {
            va.push([va_data[i * 2], va_data[i * 2 + 1]]);
            expr_logits.push(std::array::from_fn(|c| expr_data[i * EXPR_CLASSES + c]));
            au_logits.push(std::array::from_fn(|u| au_data[i * AU_UNITS + u]));
        }
        Predictions {
            va,
            expr_logits,
            au_logits,
        }
    }
}

/// Argmax with ties resolved to the smallest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
