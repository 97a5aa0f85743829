use super::Real;
use crate::error::{Error, Result};

/// Additive logit used for masked positions before exponentiation.
pub const MASK_SENTINEL: f64 = -1e30;

/// Masked, max-shifted softmax.
///
/// `masked[j] == true` excludes position `j`: its logit is replaced by
/// [`MASK_SENTINEL`] and its output is forced to exactly zero afterwards.
pub fn softmax<S: Real>(logits: &[S], masked: &[bool]) -> Result<Vec<S>> {
    if logits.len() != masked.len() {
        return Err(Error::Dimension {
            op: "softmax",
            lhs: vec![logits.len()],
            rhs: vec![masked.len()],
        });
    }
    if masked.iter().all(|&m| m) {
        return Err(Error::DegenerateRow(logits.len()));
    }
    let shifted: Vec<f64> = logits
        .iter()
        .zip(masked)
        .map(|(&x, &m)| if m { MASK_SENTINEL } else { x.to_f64() })
        .collect();
    Ok(softmax_unmasked_f64(&shifted)
        .into_iter()
        .zip(masked)
        .map(|(p, &m)| if m { S::ZERO } else { S::from_f64(p) })
        .collect())
}

/// Softmax over a row with no masked positions, computed in f64.
pub(crate) fn softmax_unmasked_f64(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}
