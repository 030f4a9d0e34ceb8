//! Loss functions, each in a plain scalar form and a tape form.

use alloc::vec::Vec;

use super::tape::{Mat, NodeId, Tape};
use crate::math;
use crate::va::VaPoint;
use crate::{Error, Result};

/// Probabilities below this are treated as zero by the capped
/// cross-entropy; the per-item loss is then `ln(1e12)`.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropy {
    pub value: f64,
    /// Some target had zero probability and was replaced by the cap.
    pub capped: bool,
}

/// Mean `-ln p(target)` over rows of a probability matrix.
pub fn cross_entropy_loss(probs: &[Vec<f64>], targets: &[usize]) -> Result<CrossEntropy> {
    if probs.is_empty() {
        return Err(Error::Empty("cross-entropy batch"));
    }
    if probs.len() != targets.len() {
        return Err(Error::Shape("one target per row".into()));
    }
    let mut total = 0.0;
    let mut capped = false;
    for (row, &t) in probs.iter().zip(targets) {
        if t >= row.len() {
            return Err(Error::OutOfRange { index: t, len: row.len() });
        }
        let s: f64 = row.iter().sum();
        if math::abs(s - 1.0) > 1e-9 || row.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::Config("cross-entropy input is not a distribution".into()));
        }
        let p = row[t];
        if p < PROB_FLOOR {
            capped = true;
        }
        total -= math::ln(p.max(PROB_FLOOR));
    }
    Ok(CrossEntropy { value: total / probs.len() as f64, capped })
}

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits`.
pub fn cross_entropy_logits(tape: &mut Tape, logits: NodeId, targets: Vec<usize>) -> NodeId {
    let lp = tape.log_softmax(logits);
    let picked = tape.pick(lp, targets);
    let m = tape.mean(picked);
    tape.scale(m, -1.0)
}

/// Tape form of [`cross_entropy_loss`] over an already normalized input.
pub fn cross_entropy_probs(tape: &mut Tape, probs: NodeId, targets: Vec<usize>) -> NodeId {
    let picked = tape.pick(probs, targets);
    let logs = tape.ln_floor(picked, PROB_FLOOR);
    let m = tape.mean(logs);
    tape.scale(m, -1.0)
}

/// `(1/N) Σ (V_x − V_g)² + (A_x − A_g)²`.
pub fn va_l2_loss(pred: &[VaPoint], gold: &[VaPoint]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Empty("VA batch"));
    }
    if pred.len() != gold.len() {
        return Err(Error::Shape("VA batch sizes differ".into()));
    }
    let total: f64 = pred.iter().zip(gold).map(|(p, g)| p.squared_distance(g)).sum();
    Ok(total / pred.len() as f64)
}

/// Tape form of [`va_l2_loss`]: `pred` is N×2, `gold` holds N points.
pub fn va_l2(tape: &mut Tape, pred: NodeId, gold: &[VaPoint]) -> NodeId {
    let n = gold.len();
    let g = tape.leaf(Mat::from_vec(
        n,
        2,
        gold.iter().flat_map(|p| [p.valence, p.arousal]).collect(),
    ));
    let d = tape.sub(pred, g);
    let sq = tape.square(d);
    let s = tape.sum(sq);
    tape.scale(s, 1.0 / n as f64)
}

pub fn smooth_l1_loss(pred: f64, target: f64) -> f64 {
    let d = pred - target;
    if math::abs(d) < 1.0 {
        0.5 * d * d
    } else {
        math::abs(d) - 0.5
    }
}

/// Mean smooth-L1 between two same-shaped nodes.
pub fn smooth_l1(tape: &mut Tape, pred: NodeId, target: NodeId) -> NodeId {
    let d = tape.sub(pred, target);
    let l = tape.smooth_l1(d);
    tape.mean(l)
}

/// Mean binary cross-entropy of logits.
pub fn bce_with_logits(tape: &mut Tape, logits: NodeId, targets: Vec<f64>) -> NodeId {
    let l = tape.bce_logits(logits, targets);
    tape.mean(l)
}

/// In-batch retrieval loss: row `i` of `scores` holds the dot products of
/// context `i` with every gold reply in the batch; the diagonal is gold.
pub fn in_batch_nll(tape: &mut Tape, scores: NodeId) -> NodeId {
    let b = tape.value(scores).rows;
    cross_entropy_logits(tape, scores, (0..b).collect())
}

/// Plain in-batch NLL over a score matrix.
pub fn in_batch_nll_value(scores: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (i, row) in scores.iter().enumerate() {
        let mut r = row.clone();
        math::log_softmax_in_place(&mut r);
        total -= r[i];
    }
    total / scores.len() as f64
}
