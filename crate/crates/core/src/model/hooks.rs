//! Observation and intervention points on attention rows.

use crate::error::Result;

/// Coordinates of one attention row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SiteKey {
    pub layer: usize,
    pub head: usize,
    /// Query position `t`; the row covers positions `0..=t`.
    pub step: usize,
    /// Index of the sequence within the forward batch.
    pub sequence: usize,
}

/// What an observer sees at one `(layer, head, step)`.
pub struct HeadObservation<'r> {
    pub key: SiteKey,
    /// Scaled pre-softmax scores.
    pub logits: &'r [f64],
    /// Weights `w_t` actually used, after any rewrite.
    pub weights: &'r [f64],
    /// Value vectors `v_0..v_t`, row-major, `d_head` wide.
    pub values: &'r [f64],
    pub d_head: usize,
    /// This head's slice of the output projection, `[d_head, d_model]`.
    pub w_o: &'r [f64],
    pub d_model: usize,
    /// `Σ_j w_tj v_j` as consumed by the rest of the forward pass.
    pub mix: &'r [f64],
}

impl HeadObservation<'_> {
    pub fn value(&self, j: usize) -> &[f64] {
        &self.values[j * self.d_head..(j + 1) * self.d_head]
    }

    /// `W_O v` for a `d_head` vector in this head's value space.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d_model];
        for (c, &x) in v.iter().enumerate() {
            let row = &self.w_o[c * self.d_model..(c + 1) * self.d_model];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        out
    }

    /// The head's contribution to the residual stream, `W_O Σ_j w_tj v_j`.
    pub fn head_output(&self) -> Vec<f64> {
        self.project(self.mix)
    }
}

pub trait Observer {
    fn observe(&mut self, obs: &HeadObservation<'_>);
}

impl<F: FnMut(&HeadObservation<'_>)> Observer for F {
    fn observe(&mut self, obs: &HeadObservation<'_>) {
        self(obs)
    }
}

/// May replace a normalized attention row. Returning `None` keeps it.
/// Replacements must be valid distributions over the same positions.
pub trait Rewriter {
    fn rewrite(&self, key: SiteKey, row: &[f64]) -> Result<Option<Vec<f64>>>;
}

impl<F: Fn(SiteKey, &[f64]) -> Option<Vec<f64>>> Rewriter for F {
    fn rewrite(&self, key: SiteKey, row: &[f64]) -> Result<Option<Vec<f64>>> {
        Ok(self(key, row))
    }
}

/// Optional observer and rewriter for a forward pass.
#[derive(Default)]
pub struct HookSet<'h> {
    pub observer: Option<&'h mut dyn Observer>,
    pub rewriter: Option<&'h dyn Rewriter>,
}

impl<'h> HookSet<'h> {
    pub fn none() -> Self {
        HookSet::default()
    }

    pub fn observe(observer: &'h mut dyn Observer) -> Self {
        HookSet {
            observer: Some(observer),
            rewriter: None,
        }
    }

    pub fn rewrite(rewriter: &'h dyn Rewriter) -> Self {
        HookSet {
            observer: None,
            rewriter: Some(rewriter),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.observer.is_none() && self.rewriter.is_none()
    }
}
