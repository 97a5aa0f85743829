//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and the parent
//! references its backward rule needs. Nodes are only ever appended, so the
//! tape order is already a topological order; `backward` walks it once in
//! reverse.

use std::borrow::Cow;

use super::softmax::softmax_unmasked_f64;
use super::tensor::{gemm_nt, gemm_tn, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A contiguous run of rows that form one causal sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub offset: usize,
    pub len: usize,
}

/// Identifies one attention row inside a [`Tape::causal_attention`] call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnSite {
    pub segment: usize,
    pub head: usize,
    /// Query position inside the segment (0-based); the row has `step + 1` entries.
    pub step: usize,
}

/// Everything an observer may want about one attention row.
pub struct AttnObservation<'r> {
    /// Scaled pre-softmax scores `q·k / sqrt(d_head)`.
    pub logits: &'r [f64],
    /// The weights actually used (after any rewrite).
    pub weights: &'r [f64],
    /// Value vectors of positions `0..=step`, row-major, `d_head` wide.
    pub values: &'r [f64],
    pub d_head: usize,
    /// `Σ_j w_j v_j` read back from the op output (after rounding to the
    /// tape's element type).
    pub mix: &'r [f64],
}

/// Callback interface into the attention op.
pub trait AttentionHook {
    /// Optionally replace the normalized attention row before it is used.
    fn rewrite(&mut self, _site: AttnSite, _logits: &[f64], _row: &[f64]) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }

    fn observes(&self) -> bool {
        false
    }

    fn observe(&mut self, _site: AttnSite, _obs: &AttnObservation<'_>) {}
}

/// Tolerance on the row sum of a rewritten attention row.
pub const ROW_SUM_TOL: f64 = 1e-9;

pub(crate) fn check_distribution(row: &[f64], expected_len: usize) -> Result<()> {
    if row.len() != expected_len {
        return Err(Error::Input(format!(
            "attention row has length {}, expected {expected_len}",
            row.len()
        )));
    }
    if row.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::Input("attention row has negative or non-finite weight".into()));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::Input(format!("attention row sums to {sum}, not 1")));
    }
    Ok(())
}

const LN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, f64),
    Gelu(usize),
    Sum(usize),
    SumSquares(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        segments: Vec<Segment>,
        n_heads: usize,
        /// Per (segment, head): lower-triangular `len x len` weights, row-major.
        weights: Vec<Vec<f64>>,
        rewritten: bool,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        mask: Vec<bool>,
        count: usize,
    },
}

struct Node<'a, S: Real> {
    value: Cow<'a, Tensor<S>>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<S: Real> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Real> Gradients<S> {
    pub fn get(&self, var: Var) -> Option<&Tensor<S>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

/// Linear record of operations. Single-threaded; build one per sequence or batch.
pub struct Tape<'a, S: Real = f32> {
    nodes: Vec<Node<'a, S>>,
}

impl<S: Real> Default for Tape<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, S: Real> Tape<'a, S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<S> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    /// Register a borrowed tensor; it participates in gradients if its
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, t: &'a Tensor<S>) -> Var {
        let requires_grad = t.requires_grad();
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf_owned(&mut self, t: Tensor<S>) -> Var {
        let requires_grad = t.requires_grad();
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(out, Op::MatMul(a.0, b.0), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Dimension {
                op: "add",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(out, Op::Add(a.0, b.0), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Dimension {
                op: "mul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(out, Op::Mul(a.0, b.0), rg))
    }

    /// `x[n, m] + bias[m]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let (_, m) = vx.dims2()?;
        if vb.numel() != m {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: vx.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let b = vb.data();
        let data = vx
            .data()
            .chunks(m)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x.0) || self.rg(bias.0);
        Ok(self.push(out, Op::AddBias(x.0, bias.0), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let vx = self.value(x);
        let f = S::from_f64(factor);
        let out = Tensor::new(vx.shape().to_vec(), vx.data().iter().map(|&v| v * f).collect())
            .expect("same shape");
        let rg = self.rg(x.0);
        self.push(out, Op::Scale(x.0, factor), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| S::from_f64(gelu(v.to_f64()))).collect();
        let out = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x.0);
        self.push(out, Op::Gelu(x.0), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.to_f64()).sum();
        let rg = self.rg(x.0);
        self.push(Tensor::scalar(S::from_f64(s)), Op::Sum(x.0), rg)
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.to_f64().powi(2)).sum();
        let rg = self.rg(x.0);
        self.push(Tensor::scalar(S::from_f64(s)), Op::SumSquares(x.0), rg)
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        let (n, d) = vx.dims2()?;
        if vg.numel() != d || vb.numel() != d {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: vx.shape().to_vec(),
                rhs: vg.shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity(n * d);
        let mut means = Vec::with_capacity(n);
        let mut rstds = Vec::with_capacity(n);
        for row in vx.data().chunks(d) {
            let mean = row.iter().map(|v| v.to_f64()).sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + LN_EPS).sqrt();
            for ((&v, &g), &b) in row.iter().zip(vg.data()).zip(vb.data()) {
                out.push(S::from_f64((v.to_f64() - mean) * rstd * g.to_f64() + b.to_f64()));
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(x.0) || self.rg(gain.0) || self.rg(bias.0);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                mean: means,
                rstd: rstds,
            },
            rg,
        ))
    }

    /// Gather rows of `table[vocab, d]` by index.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (rows, d) = vt.dims2()?;
        if ids.is_empty() {
            return Err(Error::Input("embedding lookup with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Input(format!("embedding index {bad} out of range 0..{rows}")));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(vt.row(i));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        let rg = self.rg(table.0);
        Ok(self.push(
            out,
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Multi-head causal self-attention over independent segments.
    ///
    /// `q`, `k`, `v` are `[rows, n_heads * d_head]`; the output is the
    /// concatenation of per-head mixtures `Σ_j w_tj v_j` (before any output
    /// projection). Each segment attends only within itself.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        segments: &[Segment],
        n_heads: usize,
        mut hook: Option<&mut dyn AttentionHook>,
    ) -> Result<Var> {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let (rows, width) = vq.dims2()?;
        if vk.shape() != vq.shape() || vv.shape() != vq.shape() {
            return Err(Error::Dimension {
                op: "causal_attention",
                lhs: vq.shape().to_vec(),
                rhs: vk.shape().to_vec(),
            });
        }
        if n_heads == 0 || width % n_heads != 0 {
            return Err(Error::Config(format!("width {width} not divisible by {n_heads} heads")));
        }
        let covered: usize = segments.iter().map(|s| s.len).sum();
        if segments.iter().any(|s| s.len == 0 || s.offset + s.len > rows) || covered > rows {
            return Err(Error::Input("attention segments exceed the input rows".into()));
        }
        let dh = width / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let observes = hook.as_ref().is_some_and(|h| h.observes());

        let mut out = vec![S::ZERO; rows * width];
        let mut all_weights = Vec::with_capacity(segments.len() * n_heads);
        let mut rewritten = false;

        for (si, seg) in segments.iter().enumerate() {
            let n = seg.len;
            for h in 0..n_heads {
                let gather = |t: &Tensor<S>| -> Vec<f64> {
                    let mut buf = Vec::with_capacity(n * dh);
                    for i in 0..n {
                        let row = t.row(seg.offset + i);
                        buf.extend(row[h * dh..(h + 1) * dh].iter().map(|x| x.to_f64()));
                    }
                    buf
                };
                let qh = gather(vq);
                let kh = gather(vk);
                let vh = gather(vv);
                let mut weights = vec![0.0; n * n];
                for t in 0..n {
                    let qt = &qh[t * dh..(t + 1) * dh];
                    let logits: Vec<f64> = (0..=t)
                        .map(|j| dot(qt, &kh[j * dh..(j + 1) * dh]) * scale)
                        .collect();
                    let mut row = softmax_unmasked_f64(&logits);
                    let site = AttnSite {
                        segment: si,
                        head: h,
                        step: t,
                    };
                    if let Some(hk) = hook.as_deref_mut() {
                        if let Some(new_row) = hk.rewrite(site, &logits, &row)? {
                            check_distribution(&new_row, t + 1)?;
                            row = new_row;
                            rewritten = true;
                        }
                    }
                    let mut mix = vec![0.0; dh];
                    for (j, &w) in row.iter().enumerate() {
                        for (m, &x) in mix.iter_mut().zip(&vh[j * dh..(j + 1) * dh]) {
                            *m += w * x;
                        }
                    }
                    let dst = &mut out[(seg.offset + t) * width + h * dh..][..dh];
                    for (o, &m) in dst.iter_mut().zip(&mix) {
                        *o = S::from_f64(m);
                    }
                    if observes {
                        let used: Vec<f64> = dst.iter().map(|x| x.to_f64()).collect();
                        if let Some(hk) = hook.as_deref_mut() {
                            hk.observe(
                                site,
                                &AttnObservation {
                                    logits: &logits,
                                    weights: &row,
                                    values: &vh[..(t + 1) * dh],
                                    d_head: dh,
                                    mix: &used,
                                },
                            );
                        }
                    }
                    weights[t * n..t * n + t + 1].copy_from_slice(&row);
                }
                all_weights.push(weights);
            }
        }
        let out = Tensor::new(vec![rows, width], out)?;
        let rg = self.rg(q.0) || self.rg(k.0) || self.rg(v.0);
        Ok(self.push(
            out,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                segments: segments.to_vec(),
                n_heads,
                weights: all_weights,
                rewritten,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` over rows where `mask` is set.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let vl = self.value(logits);
        let (n, vocab) = vl.dims2()?;
        if targets.len() != n || mask.len() != n {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: vl.shape().to_vec(),
                rhs: vec![targets.len(), mask.len()],
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Input("cross_entropy with empty loss mask".into()));
        }
        let mut total = 0.0;
        for (i, (&t, &m)) in targets.iter().zip(mask).enumerate() {
            if !m {
                continue;
            }
            if t >= vocab {
                return Err(Error::Input(format!("target {t} out of vocabulary 0..{vocab}")));
            }
            total += -log_softmax_at(vl.row(i), t);
        }
        let loss = total / count as f64;
        let rg = self.rg(logits.0);
        Ok(self.push(
            Tensor::scalar(S::from_f64(loss)),
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar root. Returns gradients for every node
    /// that requires them.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>> {
        if self.value(root).numel() != 1 {
            return Err(Error::Input(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![S::ONE]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, node.requires_grad) {
                (Some(g), true) => Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape")),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, idx: usize, g: &[S], grads: &mut [Option<Vec<S>>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k) = va.dims2()?;
                let (_, n) = vb.dims2()?;
                if self.rg(*a) {
                    // dA = G · Bᵀ
                    let acc = slot(grads, *a, m * k);
                    gemm_nt(m, n, k, g, vb.data(), acc, S::ONE);
                }
                if self.rg(*b) {
                    // dB = Aᵀ · G
                    let acc = slot(grads, *b, k * n);
                    gemm_tn(k, m, n, va.data(), g, acc, S::ONE);
                }
            }
            Op::Add(a, b) => {
                for p in [*a, *b] {
                    if self.rg(p) {
                        accumulate(slot(grads, p, g.len()), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                if self.rg(*a) {
                    let acc = slot(grads, *a, g.len());
                    for ((d, &gi), &y) in acc.iter_mut().zip(g).zip(vb) {
                        *d += gi * y;
                    }
                }
                if self.rg(*b) {
                    let acc = slot(grads, *b, g.len());
                    for ((d, &gi), &x) in acc.iter_mut().zip(g).zip(va) {
                        *d += gi * x;
                    }
                }
            }
            Op::AddBias(x, b) => {
                if self.rg(*x) {
                    accumulate(slot(grads, *x, g.len()), g);
                }
                if self.rg(*b) {
                    let m = self.nodes[*b].value.numel();
                    let acc = slot(grads, *b, m);
                    for row in g.chunks(m) {
                        accumulate(acc, row);
                    }
                }
            }
            Op::Scale(x, f) => {
                if self.rg(*x) {
                    let f = S::from_f64(*f);
                    let acc = slot(grads, *x, g.len());
                    for (d, &gi) in acc.iter_mut().zip(g) {
                        *d += gi * f;
                    }
                }
            }
            Op::Gelu(x) => {
                if self.rg(*x) {
                    let vx = self.nodes[*x].value.data();
                    let acc = slot(grads, *x, g.len());
                    for ((d, &gi), &xi) in acc.iter_mut().zip(g).zip(vx) {
                        *d += gi * S::from_f64(gelu_grad(xi.to_f64()));
                    }
                }
            }
            Op::Sum(x) => {
                if self.rg(*x) {
                    let n = self.nodes[*x].value.numel();
                    let acc = slot(grads, *x, n);
                    for d in acc.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::SumSquares(x) => {
                if self.rg(*x) {
                    let vx = self.nodes[*x].value.data();
                    let acc = slot(grads, *x, vx.len());
                    let two = S::from_f64(2.0);
                    for (d, &xi) in acc.iter_mut().zip(vx) {
                        *d += g[0] * two * xi;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            } => self.backprop_layer_norm(*x, *gain, *bias, mean, rstd, g, grads)?,
            Op::Embedding { table, ids } => {
                if self.rg(*table) {
                    let vt = &self.nodes[*table].value;
                    let (_, d) = vt.dims2()?;
                    let acc = slot(grads, *table, vt.numel());
                    for (r, &id) in ids.iter().enumerate() {
                        accumulate(&mut acc[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                segments,
                n_heads,
                weights,
                rewritten,
            } => {
                if *rewritten {
                    return Err(Error::Input(
                        "cannot differentiate through a rewritten attention row".into(),
                    ));
                }
                self.backprop_attention(*q, *k, *v, segments, *n_heads, weights, g, grads)?;
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                count,
            } => {
                if self.rg(*logits) {
                    let vl = &self.nodes[*logits].value;
                    let (_, vocab) = vl.dims2()?;
                    let acc = slot(grads, *logits, vl.numel());
                    let scale = g[0].to_f64() / *count as f64;
                    for (i, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                        if !m {
                            continue;
                        }
                        let row: Vec<f64> = vl.row(i).iter().map(|x| x.to_f64()).collect();
                        let p = softmax_unmasked_f64(&row);
                        let dst = &mut acc[i * vocab..(i + 1) * vocab];
                        for (j, (d, pj)) in dst.iter_mut().zip(p).enumerate() {
                            let y = if j == t { 1.0 } else { 0.0 };
                            *d += S::from_f64((pj - y) * scale);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_layer_norm(
        &self,
        x: usize,
        gain: usize,
        bias: usize,
        mean: &[f64],
        rstd: &[f64],
        g: &[S],
        grads: &mut [Option<Vec<S>>],
    ) -> Result<()> {
        let vx = &self.nodes[x].value;
        let vg = self.nodes[gain].value.data();
        let (n, d) = vx.dims2()?;
        let mut dgain = vec![0.0; d];
        let mut dbias = vec![0.0; d];
        let mut dx = vec![S::ZERO; n * d];
        for r in 0..n {
            let row = vx.row(r);
            let gr = &g[r * d..(r + 1) * d];
            let xhat: Vec<f64> = row.iter().map(|v| (v.to_f64() - mean[r]) * rstd[r]).collect();
            let mut dxhat_mean = 0.0;
            let mut dxhat_xhat_mean = 0.0;
            for c in 0..d {
                let gy = gr[c].to_f64();
                dgain[c] += gy * xhat[c];
                dbias[c] += gy;
                let dxh = gy * vg[c].to_f64();
                dxhat_mean += dxh;
                dxhat_xhat_mean += dxh * xhat[c];
            }
            dxhat_mean /= d as f64;
            dxhat_xhat_mean /= d as f64;
            for c in 0..d {
                let dxh = gr[c].to_f64() * vg[c].to_f64();
                dx[r * d + c] = S::from_f64(rstd[r] * (dxh - dxhat_mean - xhat[c] * dxhat_xhat_mean));
            }
        }
        if self.rg(x) {
            accumulate(slot(grads, x, n * d), &dx);
        }
        if self.rg(gain) {
            let acc = slot(grads, gain, d);
            for (a, v) in acc.iter_mut().zip(dgain) {
                *a += S::from_f64(v);
            }
        }
        if self.rg(bias) {
            let acc = slot(grads, bias, d);
            for (a, v) in acc.iter_mut().zip(dbias) {
                *a += S::from_f64(v);
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_attention(
        &self,
        q: usize,
        k: usize,
        v: usize,
        segments: &[Segment],
        n_heads: usize,
        weights: &[Vec<f64>],
        g: &[S],
        grads: &mut [Option<Vec<S>>],
    ) -> Result<()> {
        let (vq, vk, vv) = (&self.nodes[q].value, &self.nodes[k].value, &self.nodes[v].value);
        let (rows, width) = vq.dims2()?;
        let dh = width / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = vec![0.0f64; rows * width];
        let mut dk = vec![0.0f64; rows * width];
        let mut dv = vec![0.0f64; rows * width];
        let at = |t: &Tensor<S>, r: usize, h: usize, c: usize| t.row(r)[h * dh + c].to_f64();

        for (si, seg) in segments.iter().enumerate() {
            let n = seg.len;
            for h in 0..n_heads {
                let w = &weights[si * n_heads + h];
                for t in 0..n {
                    let rt = seg.offset + t;
                    let go: Vec<f64> = (0..dh).map(|c| g[rt * width + h * dh + c].to_f64()).collect();
                    // dW_tj = dO_t · v_j
                    let dw: Vec<f64> = (0..=t)
                        .map(|j| (0..dh).map(|c| go[c] * at(vv, seg.offset + j, h, c)).sum())
                        .collect();
                    let wrow = &w[t * n..t * n + t + 1];
                    let inner: f64 = wrow.iter().zip(&dw).map(|(a, b)| a * b).sum();
                    for j in 0..=t {
                        let rj = seg.offset + j;
                        let wj = wrow[j];
                        for c in 0..dh {
                            dv[rj * width + h * dh + c] += wj * go[c];
                        }
                        let ds = wj * (dw[j] - inner) * scale;
                        if ds != 0.0 {
                            for c in 0..dh {
                                dq[rt * width + h * dh + c] += ds * at(vk, rj, h, c);
                                dk[rj * width + h * dh + c] += ds * at(vq, rt, h, c);
                            }
                        }
                    }
                }
            }
        }
        for (p, d) in [(q, dq), (k, dk), (v, dv)] {
            if self.rg(p) {
                let acc = slot(grads, p, rows * width);
                for (a, x) in acc.iter_mut().zip(d) {
                    *a += S::from_f64(x);
                }
            }
        }
        Ok(())
    }
}

fn slot<S: Real>(grads: &mut [Option<Vec<S>>], idx: usize, len: usize) -> &mut [S] {
    grads[idx].get_or_insert_with(|| vec![S::ZERO; len])
}

fn accumulate<S: Real>(acc: &mut [S], g: &[S]) {
    for (a, &x) in acc.iter_mut().zip(g) {
        *a += x;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_softmax_at<S: Real>(row: &[S], target: usize) -> f64 {
    let max = row.iter().map(|x| x.to_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|x| (x.to_f64() - max).exp()).sum::<f64>().ln() + max;
    row[target].to_f64() - lse
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let th = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data).unwrap().with_grad(true)
    }

    #[test]
    fn sum_gradient_is_ones() {
        let w = param(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, 1.5]);
        let mut tape = Tape::new();
        let x = tape.leaf(&w);
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn squared_norm_gradient_is_twice_w() {
        let w = param(vec![4], vec![0.5, -1.0, 2.0, 3.0]);
        let mut tape = Tape::new();
        let x = tape.leaf(&w);
        let loss = tape.sum_squares(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, -2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let w = param(vec![2], vec![1.0, 2.0]);
        let mut tape = Tape::new();
        let x = tape.leaf(&w);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let w = param(vec![1, 2], vec![1.0, 2.0]);
        let c = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let mut tape = Tape::new();
        let a = tape.leaf(&w);
        let b = tape.leaf(&c);
        let y = tape.matmul(a, b).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[3.0, 4.0]);
        assert!(grads.get(b).is_none());
    }

    #[test]
    fn cross_entropy_values() {
        // Forcing logits: probability ~1 on the target.
        let t = Tensor::<f64>::new(vec![1, 3], vec![0.0, 800.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        let l = tape.leaf(&t);
        let loss = tape.cross_entropy(l, &[1], &[true]).unwrap();
        assert!(tape.value(loss).data()[0].abs() < 1e-12);

        // Uniform logits over V = 7 give ln 7.
        let u = Tensor::<f64>::zeros(vec![2, 7]);
        let mut tape = Tape::new();
        let l = tape.leaf(&u);
        let loss = tape.cross_entropy(l, &[3, 0], &[true, true]).unwrap();
        assert!((tape.value(loss).data()[0] - 7f64.ln()).abs() < 1e-12);

        // Two tokens by hand: logits [ln 1, ln 3] -> p = [0.25, 0.75];
        // targets 0 and 1 -> NLL = (ln 4 + ln 4/3) / 2.
        let h = Tensor::<f64>::new(vec![2, 2], vec![0.0, 3f64.ln(), 0.0, 3f64.ln()]).unwrap();
        let mut tape = Tape::new();
        let l = tape.leaf(&h);
        let loss = tape.cross_entropy(l, &[0, 1], &[true, true]).unwrap();
        let expected = (4f64.ln() + (4.0f64 / 3.0).ln()) / 2.0;
        assert!((tape.value(loss).data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_requires_mask() {
        let u = Tensor::<f64>::zeros(vec![2, 3]);
        let mut tape = Tape::new();
        let l = tape.leaf(&u);
        assert!(tape.cross_entropy(l, &[0, 1], &[false, false]).is_err());
    }

    #[test]
    fn attention_rejects_invalid_rewrite() {
        struct Bad;
        impl AttentionHook for Bad {
            fn rewrite(&mut self, _: AttnSite, _: &[f64], row: &[f64]) -> Result<Option<Vec<f64>>> {
                Ok(Some(vec![2.0; row.len()]))
            }
        }
        let x = Tensor::<f64>::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let seg = [Segment { offset: 0, len: 2 }];
        let mut bad = Bad;
        assert!(tape.causal_attention(v, v, v, &seg, 1, Some(&mut bad)).is_err());
    }
}
