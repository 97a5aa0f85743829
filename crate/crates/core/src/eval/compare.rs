use serde::{Deserialize, Serialize};

use super::run::{evaluate_all, seeds_field, InstanceOutcome, Metrics, RunMeta, DEFAULT_MAX_NEW};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::worldgen::{Condition, ConflictInstance, MixMode};

pub const MIN_COMPARISON_SEEDS: usize = 3;

/// Cross-domain metrics of both mixing arms for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub dataset: Metrics,
    pub instance: Metrics,
}

impl SeedComparison {
    /// Instance-level imbalance strictly lower than dataset-level.
    pub fn imbalance_improved(&self) -> bool {
        matches!((self.instance.imbalance, self.dataset.imbalance), (Some(i), Some(d)) if i < d)
    }

    /// Instance-level detection strictly higher than dataset-level.
    pub fn detection_improved(&self) -> bool {
        matches!((self.instance.detection_rate, self.dataset.detection_rate), (Some(i), Some(d)) if i > d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingComparison {
    pub per_seed: Vec<SeedComparison>,
    pub mean_imbalance_dataset: f64,
    pub mean_imbalance_instance: f64,
    pub mean_detection_dataset: f64,
    pub mean_detection_instance: f64,
    /// Seeds where instance-level mixing lowered imbalance.
    pub imbalance_wins: usize,
    /// Seeds where instance-level mixing raised detection.
    pub detection_wins: usize,
    /// Seeds where both happened.
    pub joint_wins: usize,
    /// One-sided sign-test p-value for `joint_wins` out of all seeds.
    pub sign_test_p: f64,
    pub meta: RunMeta,
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test_p(k: usize, n: usize) -> f64 {
    let mut total = 0.0;
    let mut c = 1.0f64; // C(n, 0)
    for i in 0..=n {
        if i >= k {
            total += c;
        }
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    total / 2f64.powi(n as i32)
}

/// Compares dataset- and instance-level mixing over seeds.
///
/// `arm(seed, mode)` trains one arm and returns its probed outcomes on the
/// cross-domain set; [`cross_outcomes`] produces them from a model.
pub fn run_mixing_comparison(
    seeds: &[u64],
    arm: &mut dyn FnMut(u64, MixMode) -> Result<Vec<InstanceOutcome>>,
    meta: &RunMeta,
) -> Result<MixingComparison> {
    if seeds.len() < MIN_COMPARISON_SEEDS {
        return Err(Error::Input(format!(
            "a mixing comparison needs at least {MIN_COMPARISON_SEEDS} seeds, got {}",
            seeds.len()
        )));
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut metrics = Vec::with_capacity(2);
        for mode in [MixMode::Dataset, MixMode::Instance] {
            let outcomes = arm(seed, mode)?;
            if outcomes.iter().any(|o| o.condition != Condition::Cross || o.imbalance.is_none()) {
                return Err(Error::Input(format!(
                    "seed {seed} {}: comparison needs probed cross-domain outcomes only",
                    mode.label()
                )));
            }
            metrics.push(Metrics::of(&outcomes.iter().collect::<Vec<_>>())?);
        }
        let instance = metrics.pop().expect("two arms");
        let dataset = metrics.pop().expect("two arms");
        per_seed.push(SeedComparison { seed, dataset, instance });
    }
    Ok(summarize(per_seed, meta))
}

/// Probed, unsteered outcomes of `params` on the cross-domain members of
/// `insts`.
pub fn cross_outcomes(params: &ModelParams, insts: &[ConflictInstance]) -> Result<Vec<InstanceOutcome>> {
    let cross: Vec<ConflictInstance> = insts.iter().filter(|i| i.condition == Condition::Cross).cloned().collect();
    Ok(evaluate_all(params, &cross, None, true, DEFAULT_MAX_NEW)?
        .into_iter()
        .map(|(o, _)| o)
        .collect())
}

pub fn summarize(per_seed: Vec<SeedComparison>, meta: &RunMeta) -> MixingComparison {
    let n = per_seed.len() as f64;
    let mean = |f: &dyn Fn(&SeedComparison) -> Option<f64>| per_seed.iter().filter_map(f).sum::<f64>() / n;
    let imbalance_wins = per_seed.iter().filter(|s| s.imbalance_improved()).count();
    let detection_wins = per_seed.iter().filter(|s| s.detection_improved()).count();
    let joint_wins = per_seed.iter().filter(|s| s.imbalance_improved() && s.detection_improved()).count();
    MixingComparison {
        mean_imbalance_dataset: mean(&|s| s.dataset.imbalance),
        mean_imbalance_instance: mean(&|s| s.instance.imbalance),
        mean_detection_dataset: mean(&|s| s.dataset.detection_rate),
        mean_detection_instance: mean(&|s| s.instance.detection_rate),
        imbalance_wins,
        detection_wins,
        joint_wins,
        sign_test_p: sign_test_p(joint_wins, per_seed.len()),
        per_seed,
        meta: meta.clone(),
    }
}

/// One paired row per seed, then a `summary` row holding the means and,
/// in the `*_improved` columns, the win counts.
pub fn write_comparison_csv(w: impl std::io::Write, c: &MixingComparison) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "run_id",
        "config_hash",
        "seeds",
        "seed",
        "dataset_detection_rate",
        "instance_detection_rate",
        "dataset_false_alarm_rate",
        "instance_false_alarm_rate",
        "dataset_imbalance",
        "instance_imbalance",
        "dataset_pooled_imbalance",
        "instance_pooled_imbalance",
        "imbalance_improved",
        "detection_improved",
    ])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let head = [c.meta.run_id.clone(), c.meta.config_hash.clone(), seeds_field(&c.meta.seeds)];
    for s in &c.per_seed {
        let mut row = head.to_vec();
        row.extend([
            s.seed.to_string(),
            opt(s.dataset.detection_rate),
            opt(s.instance.detection_rate),
            opt(s.dataset.false_alarm_rate),
            opt(s.instance.false_alarm_rate),
            opt(s.dataset.imbalance),
            opt(s.instance.imbalance),
            opt(s.dataset.pooled_imbalance),
            opt(s.instance.pooled_imbalance),
            s.imbalance_improved().to_string(),
            s.detection_improved().to_string(),
        ]);
        out.write_record(&row)?;
    }
    let mut row = head.to_vec();
    row.extend([
        "summary".to_string(),
        c.mean_detection_dataset.to_string(),
        c.mean_detection_instance.to_string(),
        String::new(),
        String::new(),
        c.mean_imbalance_dataset.to_string(),
        c.mean_imbalance_instance.to_string(),
        String::new(),
        String::new(),
        c.imbalance_wins.to_string(),
        c.detection_wins.to_string(),
    ]);
    out.write_record(&row)?;
    out.flush().map_err(|e| Error::Format(format!("csv flush: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom(n: u64, k: u64) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn sign_test_against_direct_sum() {
        for n in 0..12u64 {
            for k in 0..=n + 1 {
                let want: f64 = (k..=n).map(|i| binom(n, i)).sum::<f64>() / 2f64.powi(n as i32);
                assert!((sign_test_p(k as usize, n as usize) - want).abs() < 1e-12, "{n} {k}");
            }
        }
        assert_eq!(sign_test_p(5, 5), 1.0 / 32.0);
        assert_eq!(sign_test_p(0, 5), 1.0);
    }

    #[test]
    fn too_few_seeds() {
        let meta = RunMeta::new(&0, &[1, 2]).unwrap();
        let mut arm = |_: u64, _: MixMode| -> Result<Vec<InstanceOutcome>> { unreachable!() };
        assert!(run_mixing_comparison(&[1, 2], &mut arm, &meta).is_err());
    }
}
