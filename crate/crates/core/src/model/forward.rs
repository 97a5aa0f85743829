use super::hooks::{HeadObservation, HookSet, SiteKey};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::numerics::{AttentionHook, AttnObservation, AttnSite, Real, Segment, Tape, Tensor, Var};

/// Tape handles for every parameter, in canonical order.
pub struct BoundParams {
    tok_emb: Var,
    pos_emb: Var,
    blocks: Vec<[Var; 12]>,
    lnf_gain: Var,
    lnf_bias: Var,
    unembed: Var,
}

impl BoundParams {
    /// Vars in the order of [`ModelParams::named`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.tok_emb, self.pos_emb];
        for b in &self.blocks {
            out.extend_from_slice(b);
        }
        out.extend([self.lnf_gain, self.lnf_bias, self.unembed]);
        out
    }
}

pub fn bind<'a, S: Real>(tape: &mut Tape<'a, S>, params: &'a ModelParams<S>) -> BoundParams {
    let tok_emb = tape.leaf(&params.tok_emb);
    let pos_emb = tape.leaf(&params.pos_emb);
    let blocks = params
        .blocks
        .iter()
        .map(|b| {
            [
                tape.leaf(&b.ln1_gain),
                tape.leaf(&b.ln1_bias),
                tape.leaf(&b.wq),
                tape.leaf(&b.wk),
                tape.leaf(&b.wv),
                tape.leaf(&b.wo),
                tape.leaf(&b.ln2_gain),
                tape.leaf(&b.ln2_bias),
                tape.leaf(&b.w_in),
                tape.leaf(&b.b_in),
                tape.leaf(&b.w_out),
                tape.leaf(&b.b_out),
            ]
        })
        .collect();
    BoundParams {
        tok_emb,
        pos_emb,
        blocks,
        lnf_gain: tape.leaf(&params.lnf_gain),
        lnf_bias: tape.leaf(&params.lnf_bias),
        unembed: tape.leaf(&params.unembed),
    }
}

/// Adapts a [`HookSet`] to the attention op of one layer.
struct LayerHook<'x, 'h> {
    layer: usize,
    hooks: &'x mut HookSet<'h>,
    w_o: Vec<f64>,
    d_model: usize,
}

impl LayerHook<'_, '_> {
    fn key(&self, site: AttnSite) -> SiteKey {
        SiteKey {
            layer: self.layer,
            head: site.head,
            step: site.step,
            sequence: site.segment,
        }
    }
}

impl AttentionHook for LayerHook<'_, '_> {
    fn rewrite(&mut self, site: AttnSite, _logits: &[f64], row: &[f64]) -> Result<Option<Vec<f64>>> {
        match self.hooks.rewriter {
            Some(r) => r.rewrite(self.key(site), row),
            None => Ok(None),
        }
    }

    fn observes(&self) -> bool {
        self.hooks.observer.is_some()
    }

    fn observe(&mut self, site: AttnSite, obs: &AttnObservation<'_>) {
        let key = self.key(site);
        let dh = obs.d_head;
        let w_o = &self.w_o[site.head * dh * self.d_model..(site.head + 1) * dh * self.d_model];
        if let Some(o) = self.hooks.observer.as_deref_mut() {
            o.observe(&HeadObservation {
                key,
                logits: obs.logits,
                weights: obs.weights,
                values: obs.values,
                d_head: dh,
                w_o,
                d_model: self.d_model,
                mix: obs.mix,
            });
        }
    }
}

fn validate_tokens<S: Real>(params: &ModelParams<S>, seq: &[usize]) -> Result<()> {
    let cfg = &params.config;
    if seq.is_empty() {
        return Err(Error::Input("empty token sequence".into()));
    }
    if seq.len() > cfg.max_seq_len {
        return Err(Error::Input(format!(
            "sequence of length {} exceeds max_seq_len {}",
            seq.len(),
            cfg.max_seq_len
        )));
    }
    if let Some(&bad) = seq.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::Input(format!("token {bad} outside vocabulary of {}", cfg.vocab_size)));
    }
    Ok(())
}

/// Builds the logits graph for a ragged batch. Each sequence attends only
/// within itself. Returns `[total_rows, vocab]` logits and the row layout.
pub fn logits_graph<'a, S: Real>(
    tape: &mut Tape<'a, S>,
    bound: &BoundParams,
    params: &'a ModelParams<S>,
    seqs: &[&[usize]],
    hooks: &mut HookSet<'_>,
) -> Result<(Var, Vec<Segment>)> {
    let cfg = &params.config;
    let mut segments = Vec::with_capacity(seqs.len());
    let mut ids = Vec::new();
    let mut positions = Vec::new();
    for seq in seqs {
        validate_tokens(params, seq)?;
        segments.push(Segment {
            offset: ids.len(),
            len: seq.len(),
        });
        ids.extend_from_slice(seq);
        positions.extend(0..seq.len());
    }
    if segments.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }

    let tok = tape.embedding(bound.tok_emb, &ids)?;
    let pos = tape.embedding(bound.pos_emb, &positions)?;
    let mut x = tape.add(tok, pos)?;

    for (layer, (b, vars)) in params.blocks.iter().zip(&bound.blocks).enumerate() {
        let [ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w_in, b_in, w_out, b_out] = *vars;
        let h = tape.layer_norm(x, ln1_g, ln1_b)?;
        let q = tape.matmul(h, wq)?;
        let k = tape.matmul(h, wk)?;
        let v = tape.matmul(h, wv)?;
        let att = if hooks.is_empty() {
            tape.causal_attention(q, k, v, &segments, cfg.n_heads, None)?
        } else {
            let w_o = if hooks.observer.is_some() {
                b.wo.data().iter().map(|x| x.to_f64()).collect()
            } else {
                Vec::new()
            };
            let mut adapter = LayerHook {
                layer,
                hooks,
                w_o,
                d_model: cfg.d_model,
            };
            tape.causal_attention(q, k, v, &segments, cfg.n_heads, Some(&mut adapter))?
        };
        let o = tape.matmul(att, wo)?;
        x = tape.add(x, o)?;
        let h2 = tape.layer_norm(x, ln2_g, ln2_b)?;
        let f = tape.matmul(h2, w_in)?;
        let f = tape.add_bias(f, b_in)?;
        let f = tape.gelu(f);
        let f = tape.matmul(f, w_out)?;
        let f = tape.add_bias(f, b_out)?;
        x = tape.add(x, f)?;
    }
    let h = tape.layer_norm(x, bound.lnf_gain, bound.lnf_bias)?;
    let logits = tape.matmul(h, bound.unembed)?;
    Ok((logits, segments))
}

/// Logits `[len, vocab]` for one sequence.
pub fn forward<S: Real>(params: &ModelParams<S>, tokens: &[usize], hooks: &mut HookSet<'_>) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params);
    let (logits, _) = logits_graph(&mut tape, &bound, params, &[tokens], hooks)?;
    Ok(tape.value(logits).clone().with_grad(false))
}

/// One supervised sequence: `loss_mask[i]` marks token `i` as a target
/// predicted from the prefix `..i`.
#[derive(Clone, Copy, Debug)]
pub struct LossRow<'r> {
    pub tokens: &'r [usize],
    pub loss_mask: &'r [bool],
}

/// Teacher-forced mean cross-entropy over all supervised tokens of a batch.
pub fn batch_loss<'a, S: Real>(
    tape: &mut Tape<'a, S>,
    params: &'a ModelParams<S>,
    rows: &[LossRow<'_>],
) -> Result<(Var, BoundParams)> {
    let bound = bind(tape, params);
    let seqs: Vec<&[usize]> = rows.iter().map(|r| r.tokens).collect();
    let (logits, _) = logits_graph(tape, &bound, params, &seqs, &mut HookSet::none())?;
    let mut targets = Vec::new();
    let mut mask = Vec::new();
    for r in rows {
        if r.loss_mask.len() != r.tokens.len() {
            return Err(Error::Dimension {
                op: "batch_loss",
                lhs: vec![r.tokens.len()],
                rhs: vec![r.loss_mask.len()],
            });
        }
        for p in 0..r.tokens.len() {
            let next = p + 1;
            if next < r.tokens.len() {
                targets.push(r.tokens[next]);
                mask.push(r.loss_mask[next]);
            } else {
                targets.push(0);
                mask.push(false);
            }
        }
    }
    let loss = tape.cross_entropy(logits, &targets, &mask)?;
    Ok((loss, bound))
}

/// Loss value and parameter gradients (canonical order) for one batch.
pub fn loss_and_grads<S: Real>(params: &ModelParams<S>, rows: &[LossRow<'_>]) -> Result<(f64, Vec<Tensor<S>>)> {
    let mut tape = Tape::new();
    let (loss, bound) = batch_loss(&mut tape, params, rows)?;
    let mut grads = tape.backward(loss)?;
    let value = tape.value(loss).data()[0].to_f64();
    let out = bound
        .vars()
        .into_iter()
        .zip(params.named())
        .map(|(v, (_, t))| {
            grads
                .take(v)
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
                .with_grad(false)
        })
        .collect();
    Ok((value, out))
}

/// Loss only, no backward pass.
pub fn batch_loss_value<S: Real>(params: &ModelParams<S>, rows: &[LossRow<'_>]) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, _) = batch_loss(&mut tape, params, rows)?;
    Ok(tape.value(loss).data()[0].to_f64())
}
