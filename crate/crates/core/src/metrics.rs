//! Evaluation metrics: concordance correlation for valence/arousal, macro-F1
//! for expressions, per-unit binary F1 for action units.
//!
//! All functions are pure and operate on already mask-filtered slices.

use crate::error::{Error, Result};
use crate::{AU_UNITS, EXPR_CLASSES};

/// Concordance correlation coefficient with population (1/N) moments:
/// 2*cov / (var_p + var_g + (mean_p - mean_g)^2).
///
/// Conventions: both sequences constant and equal -> 1; constant but unequal
/// -> 0 (the mean-difference term keeps the denominator nonzero).
pub fn ccc(pred: &[f64], gold: &[f64]) -> Result<f64> {
    if pred.is_empty() || gold.is_empty() {
        return Err(Error::Evaluation("ccc over empty input".into()));
    }
    if pred.len() != gold.len() {
        return Err(Error::dimension("ccc", &[pred.len()], &[gold.len()]));
    }
    let n = pred.len() as f64;
    let mean_p = pred.iter().sum::<f64>() / n;
    let mean_g = gold.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_p = 0.0;
    let mut var_g = 0.0;
    for (&p, &g) in pred.iter().zip(gold.iter()) {
        cov += (p - mean_p) * (g - mean_g);
        var_p += (p - mean_p) * (p - mean_p);
        var_g += (g - mean_g) * (g - mean_g);
    }
    cov /= n;
    var_p /= n;
    var_g /= n;
    let dmean = mean_p - mean_g;
    let denom = var_p + var_g + dmean * dmean;
    if denom == 0.0 {
        // Both constant with equal means: perfect agreement.
        return Ok(1.0);
    }
    Ok(2.0 * cov / denom)
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    // 0/0 counts as 0, the pessimistic challenge-scoring convention.
    if 2 * tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Unweighted mean of per-class F1. A class absent from both predictions and
/// gold contributes 0.
pub fn macro_f1(pred: &[usize], gold: &[usize], num_classes: usize) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Evaluation("macro_f1 over empty input".into()));
    }
    if pred.len() != gold.len() {
        return Err(Error::dimension("macro_f1", &[pred.len()], &[gold.len()]));
    }
    if let Some(&bad) = pred.iter().chain(gold.iter()).find(|&&c| c >= num_classes) {
        return Err(Error::Evaluation(format!(
            "class {bad} out of range 0..{num_classes}"
        )));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &g) in pred.iter().zip(gold.iter()) {
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    let sum: f64 = (0..num_classes)
        .map(|c| f1_from_counts(tp[c], fp[c], fn_[c]))
        .sum();
    Ok(sum / num_classes as f64)
}

/// Per-unit binary F1 over bit matrices, plus their mean. Uses the 0/0 -> 0
/// convention per unit.
pub fn au_f1(pred: &[[u8; AU_UNITS]], gold: &[[u8; AU_UNITS]]) -> Result<([f64; AU_UNITS], f64)> {
    if pred.is_empty() {
        return Err(Error::Evaluation("au_f1 over empty input".into()));
    }
    if pred.len() != gold.len() {
        return Err(Error::dimension("au_f1", &[pred.len()], &[gold.len()]));
    }
    let mut per_unit = [0.0; AU_UNITS];
    for u in 0..AU_UNITS {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for (p, g) in pred.iter().zip(gold.iter()) {
            match (p[u], g[u]) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => {}
            }
        }
        per_unit[u] = f1_from_counts(tp, fp, fn_);
    }
    let mean = per_unit.iter().sum::<f64>() / AU_UNITS as f64;
    Ok((per_unit, mean))
}

/// Valence/arousal agreement over one evaluated track.
#[derive(Debug, Clone, PartialEq)]
pub struct VaMetrics {
    pub ccc_valence: f64,
    pub ccc_arousal: f64,
    pub ccc_mean: f64,
    pub frames: usize,
}

impl VaMetrics {
    pub fn new(ccc_valence: f64, ccc_arousal: f64, frames: usize) -> Self {
        VaMetrics {
            ccc_valence,
            ccc_arousal,
            ccc_mean: (ccc_valence + ccc_arousal) / 2.0,
            frames,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExprMetrics {
    pub macro_f1: f64,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuMetrics {
    pub f1_per_unit: [f64; AU_UNITS],
    pub f1_mean: f64,
    pub frames: usize,
}

/// Full evaluation summary. Tracks with no annotated frames are `None` and
/// appear in the flat form only through their zero frame count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub va: Option<VaMetrics>,
    pub expr: Option<ExprMetrics>,
    pub au: Option<AuMetrics>,
}

impl MetricReport {
    /// Flat `name=value` serialization, one entry per line, 6 decimal places.
    pub fn to_flat(&self) -> String {
        self.flat_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Same pairs joined on one line, used for per-epoch log records.
    pub fn to_flat_line(&self) -> String {
        self.flat_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn flat_pairs(&self) -> Vec<(String, String)> {
        let num = |v: f64| format!("{v:.6}");
        let mut out = Vec::new();
        match &self.va {
            Some(va) => {
                out.push(("va_frames".into(), va.frames.to_string()));
                out.push(("ccc_valence".into(), num(va.ccc_valence)));
                out.push(("ccc_arousal".into(), num(va.ccc_arousal)));
                out.push(("ccc_mean".into(), num(va.ccc_mean)));
            }
            None => out.push(("va_frames".into(), "0".into())),
        }
        match &self.expr {
            Some(expr) => {
                out.push(("expr_frames".into(), expr.frames.to_string()));
                out.push(("expr_macro_f1".into(), num(expr.macro_f1)));
            }
            None => out.push(("expr_frames".into(), "0".into())),
        }
        match &self.au {
            Some(au) => {
                out.push(("au_frames".into(), au.frames.to_string()));
                for (u, v) in au.f1_per_unit.iter().enumerate() {
                    out.push((format!("au_f1_{u:02}"), num(*v)));
                }
                out.push(("au_f1_mean".into(), num(au.f1_mean)));
            }
            None => out.push(("au_frames".into(), "0".into())),
        }
        out
    }

    /// The scalar tracked for best-checkpoint selection, averaged over the
    /// given tracks; `None` when none of them were evaluated.
    pub fn score(&self, tracks: &[ScoreTrack]) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0;
        for track in tracks {
            let v = match track {
                ScoreTrack::Va => self.va.as_ref().map(|m| m.ccc_mean),
                ScoreTrack::Expr => self.expr.as_ref().map(|m| m.macro_f1),
                ScoreTrack::Au => self.au.as_ref().map(|m| m.f1_mean),
            };
            if let Some(v) = v {
                sum += v;
                n += 1;
            }
        }
        if n == 0 {
            None
        } else {
            Some(sum / n as f64)
        }
    }
}

/// Which track(s) feed the tracked validation score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreTrack {
    Va,
    Expr,
    Au,
}

/// Number of expression classes, re-exported for score computations.
pub const NUM_EXPR_CLASSES: usize = EXPR_CLASSES;
