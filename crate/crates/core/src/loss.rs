//! Differentiable training objectives, built on tape ops so gradients come
//! from the same reverse pass as the rest of the model.

use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape};
use crate::{AU_UNITS, EXPR_CLASSES};

/// Guards the concordance denominator against a degenerate 0/0 when a window's
/// gold track happens to be constant and matched.
const CCC_DENOM_EPS: f64 = 1e-12;

fn valid_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

/// Differentiable concordance of one predicted column against constants.
fn ccc_column(tape: &mut Tape, pred: NodeId, gold: &[f64]) -> Result<NodeId> {
    let n = gold.len() as f64;
    let mean_g = gold.iter().sum::<f64>() / n;
    let var_g = gold.iter().map(|&g| (g - mean_g) * (g - mean_g)).sum::<f64>() / n;
    let dev_g: Vec<f64> = gold.iter().map(|&g| g - mean_g).collect();

    let mean_p = tape.mean_all(pred);
    let dev_p = tape.sub(pred, mean_p)?;
    let dev_g_node = tape.constant(dev_g, vec![gold.len(), 1])?;
    let prod = tape.mul(dev_p, dev_g_node)?;
    let cov = tape.mean_all(prod);
    let sq = tape.mul(dev_p, dev_p)?;
    let var_p = tape.mean_all(sq);

    let mean_g_node = tape.scalar(mean_g);
    let dmean = tape.sub(mean_p, mean_g_node)?;
    let dmean_sq = tape.mul(dmean, dmean)?;
    let var_sum = tape.add(var_p, dmean_sq)?;
    let denom = tape.affine(var_sum, 1.0, var_g + CCC_DENOM_EPS);
    let numer = tape.affine(cov, 2.0, 0.0);
    tape.div(numer, denom)
}

/// 1 - (CCC_valence + CCC_arousal)/2 over the masked frames of a window.
/// Fewer than 2 valid frames cannot support a covariance and signal skip.
pub fn ccc_loss(
    tape: &mut Tape,
    va_pred: NodeId,
    va_gold: &[[f64; 2]],
    mask: &[bool],
) -> Result<NodeId> {
    let idx = valid_indices(mask);
    if idx.len() < 2 {
        return Err(Error::SkipBatch(format!(
            "ccc_loss needs at least 2 valid frames, got {}",
            idx.len()
        )));
    }
    if tape.shape(va_pred) != [mask.len(), 2] {
        return Err(Error::dimension(
            "ccc_loss",
            tape.shape(va_pred),
            &[mask.len(), 2],
        ));
    }
    let picked = tape.gather_rows(va_pred, &idx)?;
    let mut per_dim = Vec::with_capacity(2);
    for dim in [0usize, 1] {
        let col = tape.slice_lastdim(picked, dim, 1)?;
        let gold: Vec<f64> = idx.iter().map(|&i| va_gold[i][dim]).collect();
        per_dim.push(ccc_column(tape, col, &gold)?);
    }
    let total = tape.add(per_dim[0], per_dim[1])?;
    Ok(tape.affine(total, -0.5, 1.0))
}

/// Inverse-frequency class weights normalized to mean 1. Classes never seen
/// get the mean weight so they neither dominate nor vanish.
pub fn inverse_frequency_weights(counts: &[usize; EXPR_CLASSES]) -> [f64; EXPR_CLASSES] {
    let mut raw = [0.0; EXPR_CLASSES];
    let mut sum = 0.0;
    let mut present = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            raw[c] = 1.0 / n as f64;
            sum += raw[c];
            present += 1;
        }
    }
    if present == 0 {
        return [1.0; EXPR_CLASSES];
    }
    let mean = sum / present as f64;
    for w in raw.iter_mut() {
        if *w == 0.0 {
            *w = mean;
        }
    }
    let total: f64 = raw.iter().sum();
    let scale = EXPR_CLASSES as f64 / total;
    raw.map(|w| w * scale)
}

/// Per-unit positive weights neg/pos with fallback 1.0 for units that never
/// fire in the training split.
pub fn au_pos_weights(pos: &[usize; AU_UNITS], neg: &[usize; AU_UNITS]) -> [f64; AU_UNITS] {
    let mut out = [1.0; AU_UNITS];
    for u in 0..AU_UNITS {
        if pos[u] > 0 {
            out[u] = neg[u] as f64 / pos[u] as f64;
        }
    }
    out
}

/// Weighted softmax cross-entropy over the masked frames of a window:
/// mean of `w[y] * (-log softmax(logits)[y])`.
pub fn weighted_cross_entropy(
    tape: &mut Tape,
    logits: NodeId,
    labels: &[u8],
    mask: &[bool],
    class_weights: &[f64; EXPR_CLASSES],
    frame_ids: &[u64],
) -> Result<NodeId> {
    let idx = valid_indices(mask);
    if idx.is_empty() {
        return Err(Error::SkipBatch(
            "weighted_cross_entropy with no valid frames".into(),
        ));
    }
    if tape.shape(logits) != [mask.len(), EXPR_CLASSES] {
        return Err(Error::dimension(
            "weighted_cross_entropy",
            tape.shape(logits),
            &[mask.len(), EXPR_CLASSES],
        ));
    }
    let mut targets = Vec::with_capacity(idx.len());
    for &i in &idx {
        let y = labels[i] as usize;
        if y >= EXPR_CLASSES {
            return Err(Error::data(
                frame_ids.get(i).copied().unwrap_or(i as u64),
                format!("expression label {y} out of range 0..{EXPR_CLASSES}"),
            ));
        }
        targets.push(y);
    }
    let picked = tape.gather_rows(logits, &idx)?;
    tape.cross_entropy_rows(picked, &targets, class_weights)
}

/// Pos-weighted binary cross-entropy over all (valid frame, unit) cells.
pub fn bce_multilabel(
    tape: &mut Tape,
    logits: NodeId,
    labels: &[[u8; AU_UNITS]],
    mask: &[bool],
    pos_weights: &[f64; AU_UNITS],
    frame_ids: &[u64],
) -> Result<NodeId> {
    let idx = valid_indices(mask);
    if idx.is_empty() {
        return Err(Error::SkipBatch("bce_multilabel with no valid frames".into()));
    }
    if tape.shape(logits) != [mask.len(), AU_UNITS] {
        return Err(Error::dimension(
            "bce_multilabel",
            tape.shape(logits),
            &[mask.len(), AU_UNITS],
        ));
    }
    if pos_weights.iter().any(|&w| w <= 0.0) {
        return Err(Error::Contract("pos_weights must be positive".into()));
    }
    let mut targets = Vec::with_capacity(idx.len() * AU_UNITS);
    for &i in &idx {
        for (u, &b) in labels[i].iter().enumerate() {
            if b > 1 {
                return Err(Error::data(
                    frame_ids.get(i).copied().unwrap_or(i as u64),
                    format!("action unit {u} value {b} is not a bit"),
                ));
            }
            targets.push(b as f64);
        }
    }
    let picked = tape.gather_rows(logits, &idx)?;
    tape.bce_logits(picked, &targets, pos_weights)
}
