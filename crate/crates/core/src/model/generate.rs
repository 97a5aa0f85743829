use super::forward::forward;
use super::hooks::HookSet;
use super::params::ModelParams;
use super::vocab::Control;
use crate::error::{Error, Result};
use crate::numerics::Real;

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax<S: Real>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding. The returned tokens include the terminating EOS if one
/// was produced within `max_new`.
///
/// The rewriter (if any) is active on every decoding forward. The observer
/// (if any) is called once per `(layer, head, position)` on a final pass
/// over the prompt plus all generated tokens but the last; by causality those
/// rows are exactly the ones seen while decoding.
pub fn generate_greedy<S: Real>(
    params: &ModelParams<S>,
    prompt: &[usize],
    hooks: &mut HookSet<'_>,
    max_new: usize,
) -> Result<Vec<usize>> {
    if max_new == 0 {
        return Ok(Vec::new());
    }
    if prompt.is_empty() {
        return Err(Error::Input("empty prompt".into()));
    }
    if prompt.len() + max_new > params.config.max_seq_len {
        return Err(Error::Input(format!(
            "prompt of {} tokens plus {max_new} new exceeds max_seq_len {}",
            prompt.len(),
            params.config.max_seq_len
        )));
    }
    let eos = Control::Eos.id();
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    let mut decode_hooks = HookSet {
        observer: None,
        rewriter: hooks.rewriter,
    };
    while out.len() < max_new {
        let logits = forward(params, &seq, &mut decode_hooks)?;
        let next = argmax(logits.row(seq.len() - 1));
        out.push(next);
        seq.push(next);
        if next == eos {
            break;
        }
    }
    if hooks.observer.is_some() {
        seq.pop();
        forward(params, &seq, hooks)?;
    }
    Ok(out)
}
