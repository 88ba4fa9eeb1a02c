//! AFCK checkpoint files.
//!
//! Layout (little-endian): magic "AFCK", u32 version=1, then length-prefixed
//! sections in fixed order: config (key=value text), run metadata, named
//! parameter tensors (f64), optimizer moments, and named RNG states.
//! Save -> load -> save reproduces the bytes exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Param};

use super::adam::{AdamHyper, AdamState};

pub const MAGIC: &[u8; 4] = b"AFCK";
pub const VERSION: u32 = 1;

/// Complete training state at an epoch boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub adam: AdamState,
    /// Epochs completed.
    pub epoch: u32,
    /// Windows consumed (drives the dropout stream on resume).
    pub global_step: u64,
    /// Best validation score so far; -inf before any evaluation.
    pub best_score: f64,
    pub best_epoch: u32,
    /// Metric name the score tracks, e.g. "expr_macro_f1".
    pub best_metric: String,
    /// Named RNG states (sampler, augment).
    pub rng_states: Vec<(String, u64)>,
}

fn config_text(cfg: &ModelConfig) -> String {
    format!(
        "d_v={}\nd_m={}\nnum_heads={}\nd_k={}\nd_ffn={}\nnum_layers={}\nconv_kernel={}\nmax_t={}\ndropout_rate={}\nseed={}\n",
        cfg.d_v,
        cfg.d_m,
        cfg.num_heads,
        cfg.d_k,
        cfg.d_ffn,
        cfg.num_layers,
        cfg.conv_kernel,
        cfg.max_t,
        cfg.dropout_rate,
        cfg.seed
    )
}

fn parse_val<T: std::str::FromStr>(value: &str, line: &str, offset: u64) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::format(offset, format!("invalid value in config line {line:?}")))
}

fn parse_config_text(text: &str, offset: u64) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::new(1);
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(offset, format!("malformed config line {line:?}")))?;
        match key {
            "d_v" => cfg.d_v = parse_val(value, line, offset)?,
            "d_m" => cfg.d_m = parse_val(value, line, offset)?,
            "num_heads" => cfg.num_heads = parse_val(value, line, offset)?,
            "d_k" => cfg.d_k = parse_val(value, line, offset)?,
            "d_ffn" => cfg.d_ffn = parse_val(value, line, offset)?,
            "num_layers" => cfg.num_layers = parse_val(value, line, offset)?,
            "conv_kernel" => cfg.conv_kernel = parse_val(value, line, offset)?,
            "max_t" => cfg.max_t = parse_val(value, line, offset)?,
            "dropout_rate" => cfg.dropout_rate = parse_val(value, line, offset)?,
            "seed" => cfg.seed = parse_val(value, line, offset)?,
            other => {
                return Err(Error::format(offset, format!("unknown config key {other:?}")));
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn section(&mut self, body: Vec<u8>) {
        self.buf.extend_from_slice(&(body.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(&body);
    }
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u16).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, vals: &[f64]) {
    for &v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer {
        buf: Vec::with_capacity(1 << 16),
    };
    w.buf.extend_from_slice(MAGIC);
    w.buf.extend_from_slice(&VERSION.to_le_bytes());

    w.section(config_text(&ck.config).into_bytes());

    let mut meta = Vec::new();
    meta.extend_from_slice(&ck.epoch.to_le_bytes());
    meta.extend_from_slice(&ck.global_step.to_le_bytes());
    meta.extend_from_slice(&ck.best_score.to_le_bytes());
    meta.extend_from_slice(&ck.best_epoch.to_le_bytes());
    put_str(&mut meta, &ck.best_metric);
    w.section(meta);

    let named = ck.params.named();
    let mut params = Vec::new();
    params.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, p) in &named {
        put_str(&mut params, name);
        params.push(p.shape.len() as u8);
        for &d in &p.shape {
            params.extend_from_slice(&(d as u32).to_le_bytes());
        }
        put_f64s(&mut params, &p.data);
    }
    w.section(params);

    let mut adam = Vec::new();
    adam.extend_from_slice(&ck.adam.t.to_le_bytes());
    put_f64s(
        &mut adam,
        &[
            ck.adam.hyper.lr,
            ck.adam.hyper.beta1,
            ck.adam.hyper.beta2,
            ck.adam.hyper.eps,
        ],
    );
    for (m, v) in ck.adam.m.iter().zip(ck.adam.v.iter()) {
        put_f64s(&mut adam, m);
        put_f64s(&mut adam, v);
    }
    w.section(adam);

    let mut rng = Vec::new();
    rng.extend_from_slice(&(ck.rng_states.len() as u32).to_le_bytes());
    for (name, state) in &ck.rng_states {
        put_str(&mut rng, name);
        rng.extend_from_slice(&state.to_le_bytes());
    }
    w.section(rng);

    w.buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u16(what)? as usize;
        let off = self.pos;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::format(off as u64, format!("{what} is not UTF-8")))
    }
    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"AFCK\"")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }

    let config_len = r.u32("config section length")? as usize;
    let config_off = r.pos as u64;
    let config_bytes = r.take(config_len, "config section")?;
    let config_text = std::str::from_utf8(config_bytes)
        .map_err(|_| Error::format(config_off, "config section is not UTF-8"))?;
    let config = parse_config_text(config_text, config_off)?;

    let meta_len = r.u32("meta section length")? as usize;
    let meta_end = r.pos + meta_len;
    let epoch = r.u32("epoch")?;
    let global_step = r.u64("global step")?;
    let best_score = r.f64("best score")?;
    let best_epoch = r.u32("best epoch")?;
    let best_metric = r.str("best metric name")?;
    if r.pos != meta_end {
        return Err(Error::format(r.pos as u64, "meta section length mismatch"));
    }

    let params_len = r.u32("params section length")? as usize;
    let params_end = r.pos + params_len;
    let count = r.u32("parameter count")? as usize;
    let mut named: Vec<(String, Param)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.str("parameter name")?;
        let rank = r.take(1, "parameter rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("parameter extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = r.f64s(numel, "parameter payload")?;
        named.push((name, Param { data, shape }));
    }
    if r.pos != params_end {
        return Err(Error::format(r.pos as u64, "params section length mismatch"));
    }

    // Rebuild the structured parameters by name against a config-shaped
    // skeleton.
    let mut params = ModelParams::init(&config, 0)?;
    {
        let mut tensors = params.tensors_mut();
        if tensors.len() != named.len() {
            return Err(Error::format(
                params_end as u64,
                format!("{} tensors in file, config implies {}", named.len(), tensors.len()),
            ));
        }
        for (slot, (name, p)) in tensors.iter_mut().zip(named.iter()) {
            if slot.0 != *name {
                return Err(Error::format(
                    params_end as u64,
                    format!("unexpected tensor {name:?}, wanted {:?}", slot.0),
                ));
            }
            if slot.1.shape != p.shape {
                return Err(Error::format(
                    params_end as u64,
                    format!("tensor {name:?} has shape {:?}, wanted {:?}", p.shape, slot.1.shape),
                ));
            }
            *slot.1 = p.clone();
        }
    }

    let adam_len = r.u32("adam section length")? as usize;
    let adam_end = r.pos + adam_len;
    let t = r.u64("adam step")?;
    let lr = r.f64("adam lr")?;
    let beta1 = r.f64("adam beta1")?;
    let beta2 = r.f64("adam beta2")?;
    let eps = r.f64("adam eps")?;
    let mut m = Vec::with_capacity(named.len());
    let mut v = Vec::with_capacity(named.len());
    for (_, p) in &named {
        m.push(r.f64s(p.data.len(), "adam m")?);
        v.push(r.f64s(p.data.len(), "adam v")?);
    }
    if r.pos != adam_end {
        return Err(Error::format(r.pos as u64, "adam section length mismatch"));
    }
    let adam = AdamState {
        t,
        hyper: AdamHyper {
            lr,
            beta1,
            beta2,
            eps,
        },
        m,
        v,
    };

    let rng_len = r.u32("rng section length")? as usize;
    let rng_end = r.pos + rng_len;
    let n_rng = r.u32("rng state count")? as usize;
    let mut rng_states = Vec::with_capacity(n_rng);
    for _ in 0..n_rng {
        let name = r.str("rng state name")?;
        let state = r.u64("rng state")?;
        rng_states.push((name, state));
    }
    if r.pos != rng_end {
        return Err(Error::format(r.pos as u64, "rng section length mismatch"));
    }
    if r.pos != buf.len() {
        return Err(Error::format(
            r.pos as u64,
            format!("{} trailing bytes after checkpoint", buf.len() - r.pos),
        ));
    }

    Ok(Checkpoint {
        config,
        params,
        adam,
        epoch,
        global_step,
        best_score,
        best_epoch,
        best_metric,
        rng_states,
    })
}

/// Write-then-rename keeps an existing checkpoint intact if the write fails.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("afck.tmp");
    fs::write(&tmp, encode_checkpoint(ck))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path)?;
    decode_checkpoint(&buf)
}
