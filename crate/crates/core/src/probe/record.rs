use serde::{Deserialize, Serialize};

use super::decompose::{decompose, SiteRecord};
use super::spans::{Group, SpanMap};
use crate::error::{Error, Result};
use crate::model::{generate_greedy, Domain, HeadObservation, HookSet, ModelParams, Rewriter};
use crate::numerics::Real;
use crate::worldgen::{render_prompt, Condition, ConflictInstance, Order, PromptMode};

/// Decompositions for every `(layer, head, answer step)` of one decoding run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub instance_id: String,
    pub condition: Condition,
    pub order: Order,
    pub prompt_mode: PromptMode,
    pub conflict: bool,
    pub prompt_len: usize,
    pub domains: [Domain; 2],
    pub n_layers: usize,
    pub n_heads: usize,
    pub response: Vec<usize>,
    pub sites: Vec<SiteRecord>,
}

impl ProbeRecord {
    /// `ū_k`: mean contribution norm over all recorded sites.
    pub fn mean_norm(&self, g: Group) -> Result<f64> {
        if self.sites.is_empty() {
            return Err(Error::DegenerateRecord(format!("record {} has no sites", self.instance_id)));
        }
        Ok(self.sites.iter().map(|s| s.norm(g)).sum::<f64>() / self.sites.len() as f64)
    }

    /// `ū` of the evidence span in `domain` (cross-domain records only).
    pub fn mean_norm_of(&self, domain: Domain) -> Result<f64> {
        self.mean_norm(self.evidence_in(domain)?)
    }

    pub fn evidence_in(&self, domain: Domain) -> Result<Group> {
        match (self.domains[0] == domain, self.domains[1] == domain) {
            (true, false) => Ok(Group::Evidence1),
            (false, true) => Ok(Group::Evidence2),
            _ => Err(Error::Input(format!(
                "record {} has no unique {domain:?} span",
                self.instance_id
            ))),
        }
    }

    /// The two evidence groups as `(x, y)`: domain A then B for cross
    /// records, presentation order otherwise.
    pub fn evidence_pair(&self) -> (Group, Group) {
        match (self.evidence_in(Domain::A), self.evidence_in(Domain::B)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => (Group::Evidence1, Group::Evidence2),
        }
    }

    /// `[ū_x, ū_y]` over the evidence pair.
    pub fn pair_norms(&self) -> Result<[f64; 2]> {
        let (x, y) = self.evidence_pair();
        Ok([self.mean_norm(x)?, self.mean_norm(y)?])
    }

    /// `|ln(ū_x / ū_y)|` over the evidence pair.
    pub fn imbalance(&self) -> Result<f64> {
        let [x, y] = self.pair_norms()?;
        log_ratio(x, y, &self.instance_id).map(f64::abs)
    }

    /// Evidence group with the smaller mean contribution.
    pub fn lower_group(&self) -> Result<Group> {
        let (x, y) = self.evidence_pair();
        Ok(if self.mean_norm(x)? <= self.mean_norm(y)? { x } else { y })
    }

    /// `[layer][head]` mean of `f(site)` over answer steps.
    pub fn layer_head_mean(&self, f: impl Fn(&SiteRecord) -> f64) -> Vec<Vec<f64>> {
        let mut sum = vec![vec![0.0; self.n_heads]; self.n_layers];
        let mut count = vec![vec![0usize; self.n_heads]; self.n_layers];
        for s in &self.sites {
            sum[s.layer][s.head] += f(s);
            count[s.layer][s.head] += 1;
        }
        for (row, crow) in sum.iter_mut().zip(&count) {
            for (x, &c) in row.iter_mut().zip(crow) {
                if c > 0 {
                    *x /= c as f64;
                }
            }
        }
        sum
    }

    /// `[layer][head]` imbalance, NaN where either mean norm is zero.
    pub fn layer_head_imbalance(&self) -> Vec<Vec<f64>> {
        let (x, y) = self.evidence_pair();
        let ux = self.layer_head_mean(|s| s.norm(x));
        let uy = self.layer_head_mean(|s| s.norm(y));
        ux.iter()
            .zip(&uy)
            .map(|(rx, ry)| {
                rx.iter()
                    .zip(ry)
                    .map(|(&a, &b)| if a > 0.0 && b > 0.0 { (a / b).ln().abs() } else { f64::NAN })
                    .collect()
            })
            .collect()
    }

    pub fn reconstruction_violations(&self) -> usize {
        self.sites.iter().filter(|s| !s.reconstructs()).count()
    }

    pub fn max_reconstruction_error(&self) -> f64 {
        self.sites.iter().map(|s| s.reconstruction_error).fold(0.0, f64::max)
    }
}

fn log_ratio(x: f64, y: f64, id: &str) -> Result<f64> {
    if y == 0.0 || x == 0.0 || !x.is_finite() || !y.is_finite() {
        return Err(Error::DegenerateRecord(format!(
            "{id}: contribution ratio {x}/{y} has no finite logarithm"
        )));
    }
    Ok((x / y).ln())
}

/// Decodes `inst` greedily while decomposing every answer-step row.
///
/// Answer steps are query positions from the last prompt token onward, one
/// per generated token. `rewriter`, when given, steers the run.
pub fn record_run<S: Real>(
    params: &ModelParams<S>,
    inst: &ConflictInstance,
    rewriter: Option<&dyn Rewriter>,
    max_new: usize,
) -> Result<ProbeRecord> {
    let (prompt, spans) = render_prompt(inst);
    record_prompt(params, inst, &prompt, &spans, rewriter, max_new)
}

fn record_prompt<S: Real>(
    params: &ModelParams<S>,
    inst: &ConflictInstance,
    prompt: &[usize],
    spans: &SpanMap,
    rewriter: Option<&dyn Rewriter>,
    max_new: usize,
) -> Result<ProbeRecord> {
    let first_step = prompt.len() - 1;
    let mut sites = Vec::new();
    let mut failure = None;
    let mut observer = |obs: &HeadObservation<'_>| {
        if obs.key.step < first_step || failure.is_some() {
            return;
        }
        match decompose(obs, spans) {
            Ok((rec, _)) => sites.push(rec),
            Err(e) => failure = Some(e),
        }
    };
    let mut hooks = HookSet {
        observer: Some(&mut observer),
        rewriter,
    };
    let response = generate_greedy(params, prompt, &mut hooks, max_new)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(ProbeRecord {
        instance_id: inst.id.clone(),
        condition: inst.condition,
        order: inst.order,
        prompt_mode: inst.prompt_mode,
        conflict: inst.conflict,
        prompt_len: prompt.len(),
        domains: spans.domains(),
        n_layers: params.config.n_layers,
        n_heads: params.config.n_heads,
        response,
        sites,
    })
}

/// Mean of per-record imbalances.
pub fn mean_imbalance(records: &[ProbeRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Input("no probe records".into()));
    }
    let mut sum = 0.0;
    for r in records {
        sum += r.imbalance()?;
    }
    Ok(sum / records.len() as f64)
}

/// `|ln(mean ū_x / mean ū_y)|` over a set of `[ū_x, ū_y]` pairs.
///
/// Unlike [`mean_imbalance`], a model that favours whichever span comes
/// first scores zero here on a set balanced over presentation orders.
pub fn pooled_imbalance(pairs: &[[f64; 2]]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Input("no contribution pairs".into()));
    }
    let x: f64 = pairs.iter().map(|p| p[0]).sum();
    let y: f64 = pairs.iter().map(|p| p[1]).sum();
    log_ratio(x, y, "pooled").map(f64::abs)
}

/// Element-wise mean of `[layer][head]` matrices, ignoring NaN entries.
pub fn mean_matrix(ms: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let Some(first) = ms.first() else {
        return Vec::new();
    };
    first
        .iter()
        .enumerate()
        .map(|(l, row)| {
            (0..row.len())
                .map(|h| {
                    let vals: Vec<f64> = ms.iter().map(|m| m[l][h]).filter(|x| !x.is_nan()).collect();
                    if vals.is_empty() {
                        f64::NAN
                    } else {
                        vals.iter().sum::<f64>() / vals.len() as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// `[layer][head]` matrix as CSV: a `layer` column then `head0..`.
pub fn write_matrix_csv(w: impl std::io::Write, m: &[Vec<f64>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let n_heads = m.first().map_or(0, Vec::len);
    let mut header = vec!["layer".to_string()];
    header.extend((0..n_heads).map(|h| format!("head{h}")));
    out.write_record(&header)?;
    for (l, row) in m.iter().enumerate() {
        let mut rec = vec![l.to_string()];
        rec.extend(row.iter().map(|x| x.to_string()));
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::Format(format!("csv flush: {e}")))?;
    Ok(())
}
