use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use super::run::{evaluate_all, evaluate_instance, seeds_field, InstanceOutcome, Metrics, RunMeta, DEFAULT_MAX_NEW};
use crate::error::{Error, Result};
use crate::model::{Domain, ModelParams};
use crate::probe::{Group, ProbeRecord, SpanMap};
use crate::steer::{manipulate_row, target_mass, SteerSpec, SteerTarget};
use crate::worldgen::{render_prompt, ConflictInstance};

/// Which span a sweep steers toward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepTarget {
    /// Per instance, the evidence span with the lower mean contribution in
    /// its unsteered run.
    LowerContribution,
    Fixed(SteerTarget),
}

impl SweepTarget {
    pub fn label(self) -> &'static str {
        match self {
            SweepTarget::LowerContribution => "lower-contribution",
            SweepTarget::Fixed(t) => t.label(),
        }
    }
}

/// Options for [`run_epsilon_sweep`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub grid: Vec<f64>,
    pub target: SweepTarget,
    pub layers: Option<Vec<usize>>,
    pub heads: Option<Vec<usize>>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            grid: crate::steer::default_grid(),
            target: SweepTarget::LowerContribution,
            layers: None,
            heads: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    #[serde(flatten)]
    pub metrics: Metrics,
    /// Mean target mass after applying the bias to the unsteered rows at
    /// the steered sites.
    pub target_mass: f64,
    /// Mean target mass measured in the steered run itself.
    pub observed_target_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub target: SweepTarget,
    /// The span each instance was steered toward, named by domain on
    /// cross-domain instances and by slot otherwise.
    pub instance_targets: Vec<SteerTarget>,
    pub layers: Option<Vec<usize>>,
    pub heads: Option<Vec<usize>>,
    pub points: Vec<SweepPoint>,
    /// `[instance][grid point]` target mass, as in [`SweepPoint::target_mass`].
    pub instance_mass: Vec<Vec<f64>>,
    pub meta: RunMeta,
}

impl SweepResult {
    pub fn point(&self, eps: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.epsilon == eps)
    }

    /// Highest detection rate; ties go to the smallest `|ε|`, then the
    /// smaller `ε`.
    pub fn best(&self) -> Option<&SweepPoint> {
        self.best_where(|_| true)
    }

    /// [`best`](Self::best) restricted to `ε > 0`, where the bias moves
    /// mass onto the target.
    pub fn best_toward(&self) -> Option<&SweepPoint> {
        self.best_where(|eps| eps > 0.0)
    }

    fn best_where(&self, keep: impl Fn(f64) -> bool) -> Option<&SweepPoint> {
        self.points
            .iter()
            .filter(|p| p.metrics.detection_rate.is_some() && keep(p.epsilon))
            .min_by(|a, b| {
                let da = a.metrics.detection_rate.unwrap_or(0.0);
                let db = b.metrics.detection_rate.unwrap_or(0.0);
                db.total_cmp(&da)
                    .then(a.epsilon.abs().total_cmp(&b.epsilon.abs()))
                    .then(a.epsilon.total_cmp(&b.epsilon))
            })
    }

    /// Instances whose target mass decreases somewhere along the grid
    /// (grid sorted ascending) by more than `tol`.
    pub fn monotonicity_violations(&self, tol: f64) -> usize {
        let mut order: Vec<usize> = (0..self.points.len()).collect();
        order.sort_by(|&a, &b| self.points[a].epsilon.total_cmp(&self.points[b].epsilon));
        self.instance_mass
            .iter()
            .filter(|m| order.windows(2).any(|w| m[w[1]] < m[w[0]] - tol))
            .count()
    }

    /// Instances steered toward each target, in label order.
    pub fn target_counts(&self) -> Vec<(SteerTarget, usize)> {
        SteerTarget::ALL
            .into_iter()
            .map(|t| (t, self.instance_targets.iter().filter(|&&x| x == t).count()))
            .filter(|&(_, n)| n > 0)
            .collect()
    }
}

fn lower_target(rec: &ProbeRecord) -> Result<SteerTarget> {
    let group = rec.lower_group()?;
    let slot = match group {
        Group::Evidence1 => 0,
        Group::Evidence2 => 1,
        _ => unreachable!("lower group is an evidence span"),
    };
    let cross = rec.evidence_in(Domain::A).is_ok() && rec.evidence_in(Domain::B).is_ok();
    Ok(match (cross, rec.domains[slot], slot) {
        (true, Domain::A, _) => SteerTarget::DomainA,
        (true, Domain::B, _) => SteerTarget::DomainB,
        (false, _, 0) => SteerTarget::Evidence1,
        (false, ..) => SteerTarget::Evidence2,
    })
}

fn mean_mass(rec: &ProbeRecord, spec: &SteerSpec, spans: &SpanMap, group: Group, eps: Option<f64>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in rec.sites.iter().filter(|s| spec.covers(s.layer, s.head)) {
        let mask = spans.mask(group, s.weights.len());
        let w = match eps {
            Some(e) => manipulate_row(&s.weights, &mask, e)?,
            None => s.weights.clone(),
        };
        sum += target_mass(&w, &mask);
        n += 1;
    }
    if n == 0 {
        return Err(Error::DegenerateRecord(format!("{}: no steered sites", rec.instance_id)));
    }
    Ok(sum / n as f64)
}

/// Evaluates `insts` at every `ε` in the grid, steering every covered head
/// toward each instance's target span.
pub fn run_epsilon_sweep(
    params: &ModelParams,
    insts: &[ConflictInstance],
    opts: &SweepOptions,
    meta: &RunMeta,
) -> Result<SweepResult> {
    if opts.grid.is_empty() {
        return Err(Error::Input("empty epsilon grid".into()));
    }
    if insts.is_empty() {
        return Err(Error::Input("no instances to sweep".into()));
    }
    let base: Vec<ProbeRecord> = evaluate_all(params, insts, None, true, DEFAULT_MAX_NEW)?
        .into_iter()
        .map(|(_, r)| r.expect("probed"))
        .collect();
    let targets: Vec<SteerTarget> = match opts.target {
        SweepTarget::Fixed(t) => vec![t; insts.len()],
        SweepTarget::LowerContribution => base.iter().map(lower_target).collect::<Result<_>>()?,
    };
    let maps: Vec<SpanMap> = insts.iter().map(|i| render_prompt(i).1).collect();
    let groups: Vec<Group> = maps.iter().zip(&targets).map(|(m, t)| t.resolve(m)).collect::<Result<_>>()?;
    let mut instance_mass = vec![Vec::with_capacity(opts.grid.len()); insts.len()];
    let mut points = Vec::with_capacity(opts.grid.len());
    for &eps in &opts.grid {
        let specs: Vec<SteerSpec> = targets
            .iter()
            .map(|&target| SteerSpec {
                target,
                epsilon: eps,
                layers: opts.layers.clone(),
                heads: opts.heads.clone(),
            })
            .collect();
        let runs: Vec<(InstanceOutcome, Option<ProbeRecord>)> = insts
            .par_iter()
            .zip(&specs)
            .map(|(inst, spec)| evaluate_instance(params, inst, Some(spec), true, DEFAULT_MAX_NEW))
            .collect::<Result<_>>()?;
        let mut mass_sum = 0.0;
        let mut observed_sum = 0.0;
        for (i, (_, rec)) in runs.iter().enumerate() {
            let m = mean_mass(&base[i], &specs[i], &maps[i], groups[i], Some(eps))?;
            instance_mass[i].push(m);
            mass_sum += m;
            observed_sum += mean_mass(rec.as_ref().expect("probed"), &specs[i], &maps[i], groups[i], None)?;
        }
        let outcomes: Vec<&InstanceOutcome> = runs.iter().map(|(o, _)| o).collect();
        points.push(SweepPoint {
            epsilon: eps,
            metrics: Metrics::of(&outcomes)?,
            target_mass: mass_sum / insts.len() as f64,
            observed_target_mass: observed_sum / insts.len() as f64,
        });
    }
    Ok(SweepResult {
        target: opts.target,
        instance_targets: targets,
        layers: opts.layers.clone(),
        heads: opts.heads.clone(),
        points,
        instance_mass,
        meta: meta.clone(),
    })
}

pub fn write_sweep_csv(w: impl std::io::Write, s: &SweepResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "run_id",
        "config_hash",
        "seeds",
        "target",
        "epsilon",
        "n",
        "detection_rate",
        "false_alarm_rate",
        "control_accuracy",
        "imbalance",
        "target_mass",
        "observed_target_mass",
    ])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for p in &s.points {
        out.write_record([
            s.meta.run_id.clone(),
            s.meta.config_hash.clone(),
            seeds_field(&s.meta.seeds),
            s.target.label().to_string(),
            p.epsilon.to_string(),
            p.metrics.n.to_string(),
            opt(p.metrics.detection_rate),
            opt(p.metrics.false_alarm_rate),
            opt(p.metrics.control_accuracy),
            opt(p.metrics.imbalance),
            p.target_mass.to_string(),
            p.observed_target_mass.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::Format(format!("csv flush: {e}")))?;
    Ok(())
}
