//! AFSQ on-disk feature files and dual-stream merging.
//!
//! Layout (little-endian): magic "AFSQ", u32 version=1, u32 T, u32 d,
//! u16 id length + UTF-8 video id, T u64 frame ids, then T*d f32 row-major
//! payload. Values are promoted to f64 in memory.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AFSQ";
pub const VERSION: u32 = 1;

/// Per-frame feature matrix for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    /// Strictly increasing.
    pub frame_ids: Vec<u64>,
    /// T x dim, row-major.
    pub features: Vec<f64>,
    pub dim: usize,
}

impl FeatureSequence {
    pub fn new(video_id: String, frame_ids: Vec<u64>, features: Vec<f64>, dim: usize) -> Result<Self> {
        let seq = FeatureSequence {
            video_id,
            frame_ids,
            features,
            dim,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ids.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.features[t * self.dim..(t + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.frame_ids.len();
        if t == 0 {
            return Err(Error::data(0, "feature sequence must have at least one frame"));
        }
        if self.dim == 0 || self.features.len() != t * self.dim {
            return Err(Error::dimension(
                "feature sequence",
                &[t, self.dim],
                &[self.features.len()],
            ));
        }
        for w in self.frame_ids.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::data(
                    w[1],
                    format!("frame ids must be strictly increasing ({} then {})", w[0], w[1]),
                ));
            }
        }
        for (i, &v) in self.features.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::data(
                    self.frame_ids[i / self.dim],
                    "non-finite feature value",
                ));
            }
        }
        Ok(())
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
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

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_feature_bytes(buf: &[u8]) -> Result<FeatureSequence> {
    let mut cur = Cursor { buf, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"AFSQ\"")));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let t = cur.u32("frame count")? as usize;
    let d = cur.u32("feature dim")? as usize;
    if t == 0 || d == 0 {
        return Err(Error::format(8, format!("degenerate dimensions T={t} d={d}")));
    }
    let id_len = cur.u16("id length")? as usize;
    let id_off = cur.pos;
    let id_bytes = cur.take(id_len, "video id")?;
    let video_id = std::str::from_utf8(id_bytes)
        .map_err(|_| Error::format(id_off as u64, "video id is not UTF-8"))?
        .to_string();
    let mut frame_ids = Vec::with_capacity(t);
    for _ in 0..t {
        frame_ids.push(cur.u64("frame id")?);
    }
    let mut features = Vec::with_capacity(t * d);
    for i in 0..t * d {
        let off = cur.pos;
        let v = cur.f32("payload")?;
        if !v.is_finite() {
            let _ = off;
            return Err(Error::data(frame_ids[i / d], "non-finite feature value in payload"));
        }
        features.push(v as f64);
    }
    if cur.pos != buf.len() {
        return Err(Error::format(
            cur.pos as u64,
            format!("{} trailing bytes after payload", buf.len() - cur.pos),
        ));
    }
    let seq = FeatureSequence {
        video_id,
        frame_ids,
        features,
        dim: d,
    };
    seq.validate()?;
    Ok(seq)
}

pub fn encode_feature_bytes(seq: &FeatureSequence) -> Result<Vec<u8>> {
    seq.validate()?;
    if seq.video_id.len() > u16::MAX as usize {
        return Err(Error::Contract("video id longer than 65535 bytes".into()));
    }
    let t = seq.len();
    let mut out = Vec::with_capacity(18 + seq.video_id.len() + t * 8 + t * seq.dim * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(seq.dim as u32).to_le_bytes());
    out.extend_from_slice(&(seq.video_id.len() as u16).to_le_bytes());
    out.extend_from_slice(seq.video_id.as_bytes());
    for &f in &seq.frame_ids {
        out.extend_from_slice(&f.to_le_bytes());
    }
    for &v in &seq.features {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn read_feature_file(path: &Path) -> Result<FeatureSequence> {
    let buf = fs::read(path)?;
    decode_feature_bytes(&buf)
}

pub fn write_feature_file(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let bytes = encode_feature_bytes(seq)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Concatenate two aligned streams along the feature dimension.
pub fn merge_streams(a: &FeatureSequence, b: &FeatureSequence) -> Result<FeatureSequence> {
    if a.video_id != b.video_id {
        return Err(Error::Config(format!(
            "cannot merge streams from different videos: {:?} vs {:?}",
            a.video_id, b.video_id
        )));
    }
    if a.len() != b.len() {
        return Err(Error::Alignment {
            row: a.len().min(b.len()),
        });
    }
    for (row, (x, y)) in a.frame_ids.iter().zip(b.frame_ids.iter()).enumerate() {
        if x != y {
            return Err(Error::Alignment { row });
        }
    }
    let dim = a.dim + b.dim;
    let mut features = Vec::with_capacity(a.len() * dim);
    for t in 0..a.len() {
        features.extend_from_slice(a.row(t));
        features.extend_from_slice(b.row(t));
    }
    FeatureSequence::new(a.video_id.clone(), a.frame_ids.clone(), features, dim)
}
