use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::judge::{control_correct, detection_rate, judge, Judgement};
use crate::error::{Error, Result};
use crate::model::{generate_greedy, HookSet, ModelParams};
use crate::probe::{pooled_imbalance, record_run, ProbeRecord};
use crate::steer::SteerSpec;
use crate::worldgen::{render_prompt, Condition, ConflictInstance, Order, PromptMode};

/// Tokens generated per answer; enough for the longest gold response.
pub const DEFAULT_MAX_NEW: usize = 6;

/// Identifies the configuration that produced a result.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub seeds: Vec<u64>,
    /// SHA-256 of the JSON-serialized configuration.
    pub config_hash: String,
    pub tool_version: String,
}

impl RunMeta {
    pub fn new(config: &impl Serialize, seeds: &[u64]) -> Result<Self> {
        let config_hash = hex(&Sha256::digest(serde_json::to_vec(config)?));
        let mut h = Sha256::new();
        h.update(config_hash.as_bytes());
        for s in seeds {
            h.update(s.to_le_bytes());
        }
        Ok(RunMeta {
            run_id: hex(&h.finalize())[..16].to_string(),
            seeds: seeds.to_vec(),
            config_hash,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Result of answering one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub id: String,
    pub condition: Condition,
    pub prompt_mode: PromptMode,
    pub order: Order,
    pub conflict: bool,
    pub response: Vec<usize>,
    pub judgement: Judgement,
    /// Control items only: answered correctly without a conflict claim.
    pub correct: bool,
    /// Mean evidence-pair norms `[ū_x, ū_y]`, when probed.
    pub contributions: Option<[f64; 2]>,
    /// `|ln(ū_x / ū_y)|`, when probed.
    pub imbalance: Option<f64>,
}

/// Answers one instance, optionally steered, optionally probed.
pub fn evaluate_instance(
    params: &ModelParams,
    inst: &ConflictInstance,
    steer: Option<&SteerSpec>,
    probe: bool,
    max_new: usize,
) -> Result<(InstanceOutcome, Option<ProbeRecord>)> {
    let (prompt, spans) = render_prompt(inst);
    let steerer = steer.map(|s| s.attach(&spans, &params.config)).transpose()?;
    let rewriter = steerer.as_ref().map(|s| s as &dyn crate::model::Rewriter);
    let (response, record) = if probe {
        let rec = record_run(params, inst, rewriter, max_new)?;
        (rec.response.clone(), Some(rec))
    } else {
        let mut hooks = HookSet {
            observer: None,
            rewriter,
        };
        (generate_greedy(params, &prompt, &mut hooks, max_new)?, None)
    };
    let judgement = judge(&response, inst.answer, inst.conflicting_answer);
    let contributions = record.as_ref().map(ProbeRecord::pair_norms).transpose()?;
    let imbalance = record.as_ref().map(ProbeRecord::imbalance).transpose()?;
    Ok((
        InstanceOutcome {
            id: inst.id.clone(),
            condition: inst.condition,
            prompt_mode: inst.prompt_mode,
            order: inst.order,
            conflict: inst.conflict,
            correct: !inst.conflict && control_correct(&response, inst.answer),
            response,
            judgement,
            contributions,
            imbalance,
        },
        record,
    ))
}

/// Evaluates instances in parallel; output order follows input order.
pub fn evaluate_all(
    params: &ModelParams,
    insts: &[ConflictInstance],
    steer: Option<&SteerSpec>,
    probe: bool,
    max_new: usize,
) -> Result<Vec<(InstanceOutcome, Option<ProbeRecord>)>> {
    insts
        .par_iter()
        .map(|i| evaluate_instance(params, i, steer, probe, max_new))
        .collect()
}

/// Aggregate metrics over a set of outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub n_conflict: usize,
    /// Share of conflict items reported; `None` without conflict items.
    pub detection_rate: Option<f64>,
    /// Share of control items wrongly reported as conflicts.
    pub false_alarm_rate: Option<f64>,
    /// Share of control items answered correctly.
    pub control_accuracy: Option<f64>,
    /// Mean of the per-instance `|ln(ū_x / ū_y)|`, when probed.
    pub imbalance: Option<f64>,
    /// `|ln(mean ū_x / mean ū_y)|` over the probed outcomes.
    pub pooled_imbalance: Option<f64>,
}

impl Metrics {
    pub fn of(outcomes: &[&InstanceOutcome]) -> Result<Self> {
        let conflicts: Vec<Judgement> = outcomes.iter().filter(|o| o.conflict).map(|o| o.judgement).collect();
        let controls: Vec<&&InstanceOutcome> = outcomes.iter().filter(|o| !o.conflict).collect();
        let fa: Vec<Judgement> = controls.iter().map(|o| o.judgement).collect();
        let rate = |j: &[Judgement]| if j.is_empty() { Ok(None) } else { detection_rate(j).map(Some) };
        let imb: Option<Vec<f64>> = outcomes.iter().map(|o| o.imbalance).collect();
        let pairs: Option<Vec<[f64; 2]>> = outcomes.iter().map(|o| o.contributions).collect();
        Ok(Metrics {
            n: outcomes.len(),
            n_conflict: conflicts.len(),
            detection_rate: rate(&conflicts)?,
            false_alarm_rate: rate(&fa)?,
            control_accuracy: (!controls.is_empty())
                .then(|| controls.iter().filter(|o| o.correct).count() as f64 / controls.len() as f64),
            imbalance: imb.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64),
            pooled_imbalance: pairs.filter(|v| !v.is_empty()).map(|v| pooled_imbalance(&v)).transpose()?,
        })
    }
}

/// Metrics for one `(condition, prompt mode, order)` cell. `order` is
/// `None` for the row pooling both orders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: Condition,
    pub prompt_mode: PromptMode,
    pub order: Option<Order>,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub meta: RunMeta,
}

/// Per-cell reports: one row per order plus a pooled row, sorted by
/// condition, prompt mode and order (pooled last).
pub fn reports_from(outcomes: &[InstanceOutcome], meta: &RunMeta) -> Result<Vec<EvalReport>> {
    let mut cells: BTreeMap<(Condition, PromptMode, Option<Order>), Vec<&InstanceOutcome>> = BTreeMap::new();
    for o in outcomes {
        cells.entry((o.condition, o.prompt_mode, Some(o.order))).or_default().push(o);
        cells.entry((o.condition, o.prompt_mode, None)).or_default().push(o);
    }
    let mut out: Vec<EvalReport> = cells
        .into_iter()
        .map(|((condition, prompt_mode, order), os)| {
            Ok(EvalReport {
                condition,
                prompt_mode,
                order,
                metrics: Metrics::of(&os)?,
                meta: meta.clone(),
            })
        })
        .collect::<Result<_>>()?;
    out.sort_by_key(|r| (r.condition, r.prompt_mode, r.order.is_none(), r.order));
    Ok(out)
}

/// Evaluates every instance and summarizes per cell.
pub fn run_condition_grid(
    params: &ModelParams,
    insts: &[ConflictInstance],
    probe: bool,
    meta: &RunMeta,
) -> Result<(Vec<EvalReport>, Vec<InstanceOutcome>)> {
    let outcomes: Vec<InstanceOutcome> = evaluate_all(params, insts, None, probe, DEFAULT_MAX_NEW)?
        .into_iter()
        .map(|(o, _)| o)
        .collect();
    Ok((reports_from(&outcomes, meta)?, outcomes))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_reports_csv(w: impl std::io::Write, reports: &[EvalReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "run_id",
        "config_hash",
        "seeds",
        "condition",
        "prompt_mode",
        "order",
        "n",
        "n_conflict",
        "detection_rate",
        "false_alarm_rate",
        "control_accuracy",
        "imbalance",
        "pooled_imbalance",
    ])?;
    for r in reports {
        let m = &r.metrics;
        out.write_record([
            r.meta.run_id.clone(),
            r.meta.config_hash.clone(),
            seeds_field(&r.meta.seeds),
            r.condition.label().to_string(),
            r.prompt_mode.label().to_string(),
            r.order.map_or("all", Order::label).to_string(),
            m.n.to_string(),
            m.n_conflict.to_string(),
            opt(m.detection_rate),
            opt(m.false_alarm_rate),
            opt(m.control_accuracy),
            opt(m.imbalance),
            opt(m.pooled_imbalance),
        ])?;
    }
    out.flush().map_err(|e| Error::Format(format!("csv flush: {e}")))?;
    Ok(())
}

pub(crate) fn seeds_field(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::MatchedRule;

    fn outcome(cond: Condition, order: Order, conflict: bool, detected: bool, correct: bool) -> InstanceOutcome {
        InstanceOutcome {
            id: "x".into(),
            condition: cond,
            prompt_mode: PromptMode::Standard,
            order,
            conflict,
            response: vec![],
            judgement: Judgement {
                detected,
                rule: if detected { MatchedRule::ConflictToken } else { MatchedRule::None },
            },
            correct,
            contributions: Some(if conflict { [2.0, 1.0] } else { [1.0, 1.0] }),
            imbalance: Some(if conflict { 1.0 } else { 0.0 }),
        }
    }

    #[test]
    fn cells_and_pooled_rows() {
        let meta = RunMeta::new(&"cfg", &[1, 2]).unwrap();
        let os = vec![
            outcome(Condition::Cross, Order::AFirst, true, true, false),
            outcome(Condition::Cross, Order::BFirst, true, false, false),
            outcome(Condition::Cross, Order::AFirst, false, true, false),
            outcome(Condition::Cross, Order::BFirst, false, false, true),
        ];
        let reps = reports_from(&os, &meta).unwrap();
        assert_eq!(reps.len(), 3);
        let pooled = reps.iter().find(|r| r.order.is_none()).unwrap();
        assert_eq!(pooled.metrics.detection_rate, Some(0.5));
        assert_eq!(pooled.metrics.false_alarm_rate, Some(0.5));
        assert_eq!(pooled.metrics.control_accuracy, Some(0.5));
        assert_eq!(pooled.metrics.imbalance, Some(0.5));
        assert!((pooled.metrics.pooled_imbalance.unwrap() - (6.0f64 / 4.0).ln()).abs() < 1e-12);
        let a = reps.iter().find(|r| r.order == Some(Order::AFirst)).unwrap();
        assert_eq!(a.metrics.detection_rate, Some(1.0));
        let mut buf = Vec::new();
        write_reports_csv(&mut buf, &reps).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(3).unwrap().contains(",cross,standard,all,4,2,0.5,0.5,0.5,0.5"));
    }

    #[test]
    fn meta_is_stable_and_sensitive() {
        let a = RunMeta::new(&serde_json::json!({"x": 1}), &[1]).unwrap();
        assert_eq!(a, RunMeta::new(&serde_json::json!({"x": 1}), &[1]).unwrap());
        assert_ne!(a.run_id, RunMeta::new(&serde_json::json!({"x": 1}), &[2]).unwrap().run_id);
        assert_ne!(a.config_hash, RunMeta::new(&serde_json::json!({"x": 2}), &[1]).unwrap().config_hash);
        assert_eq!(a.config_hash.len(), 64);
        assert_eq!(a.run_id.len(), 16);
    }
}
