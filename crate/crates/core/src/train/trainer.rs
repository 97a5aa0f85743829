use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{batch_loss_value, loss_and_grads, LossRow, ModelParams};
use crate::numerics::{adam_step, clip_global_norm, AdamState, Tensor};
use crate::worldgen::TrainSequence;

/// Parameters, optimizer moments and the number of completed steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    pub step: u64,
}

impl TrainState {
    pub fn fresh(params: ModelParams) -> Self {
        let adam = AdamState::for_shapes(params.named().into_iter().map(|(_, t)| t));
        TrainState { params, adam, step: 0 }
    }
}

/// One row of the loss curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: u64,
    pub train_loss: f64,
    pub eval_loss: Option<f64>,
}

/// Sequence indices of the batch used at 1-based `step`.
///
/// Each epoch is an independent seeded permutation, so the batch at any
/// step is a pure function of `(seed, step, n, batch)` and resuming from a
/// checkpoint reproduces the uninterrupted run.
pub fn batch_indices(seed: u64, step: u64, n: usize, batch: usize) -> Vec<usize> {
    let start = (step - 1) as usize * batch;
    let mut out = Vec::with_capacity(batch);
    let mut epoch = usize::MAX;
    let mut perm: Vec<usize> = Vec::new();
    for g in start..start + batch {
        let e = g / n;
        if e != epoch {
            epoch = e;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(e as u64);
            perm = (0..n).collect();
            perm.shuffle(&mut rng);
        }
        out.push(perm[g % n]);
    }
    out
}

fn rows<'s>(seqs: &[&'s TrainSequence]) -> Vec<LossRow<'s>> {
    seqs.iter()
        .map(|s| LossRow {
            tokens: &s.tokens,
            loss_mask: &s.loss_mask,
        })
        .collect()
}

fn supervised(seqs: &[&TrainSequence]) -> usize {
    seqs.iter().map(|s| s.supervised_tokens()).sum()
}

/// Mean loss and gradients over a batch, computed in parallel chunks and
/// combined in chunk order, weighted by supervised-token counts.
pub fn batch_grads(params: &ModelParams, batch: &[&TrainSequence], chunk_rows: usize) -> Result<(f64, Vec<Tensor>)> {
    let chunks: Vec<&[&TrainSequence]> = batch.chunks(chunk_rows).filter(|c| supervised(c) > 0).collect();
    let total = supervised(batch);
    if total == 0 {
        return Err(Error::Input("batch has no supervised tokens".into()));
    }
    let parts: Vec<(usize, f64, Vec<Tensor>)> = chunks
        .par_iter()
        .map(|c| loss_and_grads(params, &rows(c)).map(|(l, g)| (supervised(c), l, g)))
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grads: Vec<Tensor> = params.named().iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect();
    for (n, l, g) in parts {
        let w = n as f64 / total as f64;
        loss += w * l;
        for (acc, part) in grads.iter_mut().zip(&g) {
            for (a, &p) in acc.data_mut().iter_mut().zip(part.data()) {
                *a += (w * p as f64) as f32;
            }
        }
    }
    Ok((loss, grads))
}

/// Token-weighted mean loss over `seqs`.
pub fn eval_loss(params: &ModelParams, seqs: &[TrainSequence], chunk_rows: usize) -> Result<f64> {
    let refs: Vec<&TrainSequence> = seqs.iter().collect();
    let total = supervised(&refs);
    if total == 0 {
        return Err(Error::Input("eval set has no supervised tokens".into()));
    }
    let parts: Vec<(usize, f64)> = refs
        .chunks(chunk_rows)
        .filter(|c| supervised(c) > 0)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|c| batch_loss_value(params, &rows(c)).map(|l| (supervised(c), l)))
        .collect::<Result<_>>()?;
    Ok(parts.iter().map(|&(n, l)| n as f64 / total as f64 * l).sum())
}

fn check_corpus(params: &ModelParams, seqs: &[TrainSequence], what: &str) -> Result<()> {
    let v = params.config.vocab_size;
    for (i, s) in seqs.iter().enumerate() {
        if let Some(&t) = s.tokens.iter().find(|&&t| t >= v) {
            return Err(Error::Config(format!(
                "{what} sequence {i} has token id {t} but the model vocabulary has {v} entries"
            )));
        }
        if s.tokens.len() != s.loss_mask.len() {
            return Err(Error::Input(format!("{what} sequence {i}: tokens and loss_mask lengths differ")));
        }
        if s.tokens.len() > params.config.max_seq_len {
            return Err(Error::Input(format!(
                "{what} sequence {i} has {} tokens, max_seq_len is {}",
                s.tokens.len(),
                params.config.max_seq_len
            )));
        }
    }
    Ok(())
}

/// Runs `cfg.steps - state.step` optimizer steps.
///
/// `on_step` sees every logged point together with the updated state; an
/// error from it stops training. A non-finite batch loss aborts with
/// [`Error::NanLoss`] before the update is applied.
pub fn train(
    state: &mut TrainState,
    cfg: &TrainConfig,
    data: &[TrainSequence],
    eval: &[TrainSequence],
    on_step: &mut dyn FnMut(&LossPoint, &TrainState) -> Result<()>,
) -> Result<Vec<LossPoint>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training corpus is empty".into()));
    }
    check_corpus(&state.params, data, "training")?;
    check_corpus(&state.params, eval, "eval")?;
    let mut curve = Vec::new();
    while state.step < cfg.steps {
        let step = state.step + 1;
        let idx = batch_indices(cfg.seed, step, data.len(), cfg.batch_size);
        let batch: Vec<&TrainSequence> = idx.iter().map(|&i| &data[i]).collect();
        let (loss, mut grads) = batch_grads(&state.params, &batch, cfg.chunk_rows)?;
        if !loss.is_finite() {
            return Err(Error::NanLoss { step });
        }
        if cfg.grad_clip > 0.0 {
            clip_global_norm(&mut grads, cfg.grad_clip);
        }
        adam_step(&mut state.params.named_mut(), &grads, &mut state.adam, &cfg.adam(step))?;
        state.step = step;
        let eval_loss = if !eval.is_empty() && cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == cfg.steps) {
            Some(eval_loss(&state.params, eval, cfg.chunk_rows)?)
        } else {
            None
        };
        let point = LossPoint {
            step,
            train_loss: loss,
            eval_loss,
        };
        on_step(&point, state)?;
        curve.push(point);
    }
    Ok(curve)
}

/// Loss curve as CSV with columns `step,train_loss,eval_loss`.
pub fn write_loss_csv(w: impl std::io::Write, curve: &[LossPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "train_loss", "eval_loss"])?;
    for p in curve {
        out.write_record([
            p.step.to_string(),
            p.train_loss.to_string(),
            p.eval_loss.map(|l| l.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush().map_err(|e| Error::Format(format!("csv flush: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_each_epoch_once() {
        let n = 10;
        let mut seen = vec![0; n];
        for step in 1..=5 {
            for i in batch_indices(7, step, n, 4) {
                seen[i] += 1;
            }
        }
        // 20 draws = two full epochs
        assert!(seen.iter().all(|&c| c == 2), "{seen:?}");
        assert_eq!(batch_indices(7, 3, n, 4), batch_indices(7, 3, n, 4));
        assert_ne!(batch_indices(7, 1, n, 10), batch_indices(8, 1, n, 10));
    }

    #[test]
    fn csv_has_expected_header() {
        let mut buf = Vec::new();
        let curve = [
            LossPoint { step: 1, train_loss: 2.5, eval_loss: None },
            LossPoint { step: 2, train_loss: 2.0, eval_loss: Some(2.25) },
        ];
        write_loss_csv(&mut buf, &curve).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,train_loss,eval_loss\n1,2.5,\n2,2,2.25\n");
    }
}
