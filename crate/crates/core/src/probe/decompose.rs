use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::spans::{Group, SpanMap};
use crate::error::{Error, Result};
use crate::model::HeadObservation;

/// Reconstruction tolerance, relative to `max(1, |head output|_inf)`.
pub const RECONSTRUCTION_TOL: f64 = 1e-6;

/// Per-group quantities at one attention row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    /// `|u_k|`, the L2 norm of the group's contribution.
    pub norm: f64,
    /// Total attention weight on the group.
    pub mass: f64,
    /// Mean pre-softmax score over the group's positions.
    pub mean_logit: f64,
    pub max_logit: f64,
}

/// Decomposition of one head's output at one row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub layer: usize,
    pub head: usize,
    pub step: usize,
    /// Groups with at least one position in the row.
    pub groups: BTreeMap<Group, GroupStats>,
    /// Largest absolute deviation between `Σ_k u_k` and the head output.
    pub reconstruction_error: f64,
    /// Scale the error is judged against.
    pub output_scale: f64,
    /// The attention row as used, kept for in-process analysis.
    #[serde(skip)]
    pub weights: Vec<f64>,
}

impl SiteRecord {
    pub fn reconstructs(&self) -> bool {
        self.reconstruction_error <= RECONSTRUCTION_TOL * self.output_scale.max(1.0)
    }

    pub fn norm(&self, g: Group) -> f64 {
        self.groups.get(&g).map_or(0.0, |s| s.norm)
    }
}

/// Splits `W_O Σ_j w_tj v_j` into per-group terms `u_k = W_O Σ_{j∈C_k} w_tj v_j`.
///
/// Returns the per-group contributions (in [`Group::ALL`] order, zero for
/// empty groups) alongside the summary record.
pub fn decompose(obs: &HeadObservation<'_>, spans: &SpanMap) -> Result<(SiteRecord, Vec<Vec<f64>>)> {
    let n = obs.weights.len();
    if n != obs.key.step + 1 || obs.logits.len() != n || obs.values.len() != n * obs.d_head {
        return Err(Error::Input(format!(
            "observation at step {} has {} weights, {} logits, {} value entries",
            obs.key.step,
            n,
            obs.logits.len(),
            obs.values.len()
        )));
    }
    let mut mixes = vec![vec![0.0; obs.d_head]; Group::ALL.len()];
    let mut groups = BTreeMap::new();
    for (gi, &g) in Group::ALL.iter().enumerate() {
        let pos: Vec<usize> = (0..n).filter(|&j| spans.group(j) == g).collect();
        if pos.is_empty() {
            continue;
        }
        let mut mass = 0.0;
        for &j in &pos {
            let w = obs.weights[j];
            mass += w;
            for (m, &v) in mixes[gi].iter_mut().zip(obs.value(j)) {
                *m += w * v;
            }
        }
        let logits: Vec<f64> = pos.iter().map(|&j| obs.logits[j]).collect();
        groups.insert(
            g,
            GroupStats {
                norm: 0.0,
                mass,
                mean_logit: logits.iter().sum::<f64>() / logits.len() as f64,
                max_logit: logits.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            },
        );
    }
    let contributions: Vec<Vec<f64>> = mixes.iter().map(|m| obs.project(m)).collect();
    for (gi, g) in Group::ALL.iter().enumerate() {
        if let Some(s) = groups.get_mut(g) {
            s.norm = contributions[gi].iter().map(|x| x * x).sum::<f64>().sqrt();
        }
    }
    let out = obs.head_output();
    let mut err: f64 = 0.0;
    for (i, &o) in out.iter().enumerate() {
        let sum: f64 = contributions.iter().map(|c| c[i]).sum();
        err = err.max((sum - o).abs());
    }
    let scale = out.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let rec = SiteRecord {
        layer: obs.key.layer,
        head: obs.key.head,
        step: obs.key.step,
        groups,
        reconstruction_error: err,
        output_scale: scale,
        weights: obs.weights.to_vec(),
    };
    Ok((rec, contributions))
}
