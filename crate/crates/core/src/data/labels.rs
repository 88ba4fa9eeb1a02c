//! Text label files: one frame per line,
//! `frame_id,valence,arousal,expr,au0..au11,mask`, header `#affectlabels v1`.
//! The sentinel -5 marks unannotated numeric fields; a track's per-frame mask
//! is the file mask ANDed with "all of this track's fields annotated".

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::{AU_UNITS, EXPR_CLASSES};

pub const HEADER: &str = "#affectlabels v1";
const SENTINEL: f64 = -5.0;
const FIELDS: usize = 4 + AU_UNITS + 1;

/// Which annotation track a label payload belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Va,
    Expr,
    Au,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VaTrack {
    pub values: Vec<[f64; 2]>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExprTrack {
    pub classes: Vec<u8>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuTrack {
    pub bits: Vec<[u8; AU_UNITS]>,
    pub mask: Vec<bool>,
}

/// All three per-frame label tracks of one video.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelSet {
    pub frame_ids: Vec<u64>,
    pub va: VaTrack,
    pub expr: ExprTrack,
    pub au: AuTrack,
}

impl LabelSet {
    pub fn len(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ids.is_empty()
    }

    pub fn valid_frames(&self, task: TaskKind) -> usize {
        let mask = match task {
            TaskKind::Va => &self.va.mask,
            TaskKind::Expr => &self.expr.mask,
            TaskKind::Au => &self.au.mask,
        };
        mask.iter().filter(|&&m| m).count()
    }
}

fn parse_num(s: &str, frame: u64, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::data(frame, format!("invalid {what}: {s:?}")))
}

/// Parse label text. `offset_base` feeds format-error offsets when embedded.
pub fn decode_label_text(text: &str) -> Result<LabelSet> {
    let mut lines = text.split_inclusive('\n');
    let mut offset = 0u64;
    let header = lines.next().unwrap_or("");
    if header.trim_end_matches(['\r', '\n']) != HEADER {
        return Err(Error::format(0, format!("expected header {HEADER:?}")));
    }
    offset += header.len() as u64;

    let mut set = LabelSet::default();
    for line in lines {
        let line_start = offset;
        offset += line.len() as u64;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != FIELDS {
            return Err(Error::format(
                line_start,
                format!("expected {FIELDS} comma-separated fields, got {}", fields.len()),
            ));
        }
        let frame: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::format(line_start, format!("invalid frame id {:?}", fields[0])))?;
        if let Some(&last) = set.frame_ids.last() {
            if frame <= last {
                return Err(Error::data(
                    frame,
                    format!("frame ids must be strictly increasing ({last} then {frame})"),
                ));
            }
        }
        let valence = parse_num(fields[1], frame, "valence")?;
        let arousal = parse_num(fields[2], frame, "arousal")?;
        let expr = parse_num(fields[3], frame, "expression")?;
        let mut au = [0f64; AU_UNITS];
        for (u, slot) in au.iter_mut().enumerate() {
            *slot = parse_num(fields[4 + u], frame, &format!("au{u}"))?;
        }
        let mask_field = parse_num(fields[4 + AU_UNITS], frame, "mask")?;
        let mask = if mask_field == 0.0 {
            false
        } else if mask_field == 1.0 {
            true
        } else {
            return Err(Error::data(
                frame,
                format!("mask must be 0 or 1, got {mask_field}"),
            ));
        };

        let va_annotated = valence != SENTINEL && arousal != SENTINEL;
        if va_annotated && !((-1.0..=1.0).contains(&valence) && (-1.0..=1.0).contains(&arousal)) {
            return Err(Error::data(
                frame,
                format!("valence/arousal ({valence}, {arousal}) outside [-1, 1]"),
            ));
        }
        let expr_annotated = expr != SENTINEL;
        let expr_class = if expr_annotated {
            if expr.fract() != 0.0 || !(0.0..EXPR_CLASSES as f64).contains(&expr) {
                return Err(Error::data(
                    frame,
                    format!("expression label {expr} out of range 0..{EXPR_CLASSES}"),
                ));
            }
            expr as u8
        } else {
            0
        };
        let au_annotated = au.iter().all(|&b| b != SENTINEL);
        let mut au_bits = [0u8; AU_UNITS];
        if au_annotated {
            for (u, &b) in au.iter().enumerate() {
                if b != 0.0 && b != 1.0 {
                    return Err(Error::data(frame, format!("au{u} must be 0 or 1, got {b}")));
                }
                au_bits[u] = b as u8;
            }
        }

        set.frame_ids.push(frame);
        set.va.values.push(if va_annotated { [valence, arousal] } else { [0.0, 0.0] });
        set.va.mask.push(mask && va_annotated);
        set.expr.classes.push(expr_class);
        set.expr.mask.push(mask && expr_annotated);
        set.au.bits.push(au_bits);
        set.au.mask.push(mask && au_annotated);
    }
    if set.is_empty() {
        return Err(Error::format(offset, "label file has no frame records"));
    }
    Ok(set)
}

/// Canonical encoding: VA at 6 decimals, sentinel -5 where a track is
/// unannotated. Decoding then re-encoding reproduces the bytes exactly.
pub fn encode_label_text(set: &LabelSet) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for i in 0..set.len() {
        let frame = set.frame_ids[i];
        let (v, a) = if set.va.mask[i] {
            (
                format!("{:.6}", set.va.values[i][0]),
                format!("{:.6}", set.va.values[i][1]),
            )
        } else {
            ("-5".into(), "-5".into())
        };
        let e = if set.expr.mask[i] {
            set.expr.classes[i].to_string()
        } else {
            "-5".into()
        };
        let aus: Vec<String> = if set.au.mask[i] {
            set.au.bits[i].iter().map(|b| b.to_string()).collect()
        } else {
            vec!["-5".into(); AU_UNITS]
        };
        // A row where every track is unannotated keeps mask 1 only if the
        // file said so; re-encoding uses the per-track masks directly.
        let any = set.va.mask[i] || set.expr.mask[i] || set.au.mask[i];
        out.push_str(&format!(
            "{frame},{v},{a},{e},{},{}\n",
            aus.join(","),
            if any { 1 } else { 0 }
        ));
    }
    out
}

pub fn read_label_file(path: &Path) -> Result<LabelSet> {
    let text = fs::read_to_string(path)?;
    decode_label_text(&text)
}

pub fn write_label_file(path: &Path, set: &LabelSet) -> Result<()> {
    fs::write(path, encode_label_text(set))?;
    Ok(())
}
