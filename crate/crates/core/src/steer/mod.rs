//! Inference-time attention bias toward a chosen span.
//!
//! [`manipulate_row`] adds `ε` to the log-weights of the target positions
//! and renormalizes. Zero weights stay zero, `ε = 0` is the identity, and
//! two biases compose additively.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Domain, ModelConfig, Rewriter, SiteKey};
use crate::numerics::ROW_SUM_TOL;
use crate::probe::{Group, SpanMap};

/// `softmax(log w + ε·mask)`, with `log 0 = -∞`.
///
/// Errors when `w` is not a distribution within [`ROW_SUM_TOL`], when the
/// lengths differ, or when `ε` is not finite.
pub fn manipulate_row(w: &[f64], mask: &[bool], eps: f64) -> Result<Vec<f64>> {
    if w.len() != mask.len() {
        return Err(Error::Dimension {
            op: "manipulate_row",
            lhs: vec![w.len()],
            rhs: vec![mask.len()],
        });
    }
    if !eps.is_finite() {
        return Err(Error::Input(format!("epsilon must be finite, got {eps}")));
    }
    if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Input("attention row has negative or non-finite weights".into()));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::Input(format!("attention row sums to {sum}, not 1")));
    }
    let scale = eps.exp();
    let inside: f64 = w.iter().zip(mask).filter(|(_, &m)| m).map(|(x, _)| x).sum();
    let outside: f64 = w.iter().zip(mask).filter(|(_, &m)| !m).map(|(x, _)| x).sum();
    let total = inside * scale + outside;
    // Finite ε and a positive row keep `total` positive unless overflow;
    // fall back to the limiting distribution in that case.
    if !(total.is_finite() && total > 0.0) {
        let (keep_inside, denom) = if scale > 1.0 { (true, inside) } else { (false, outside) };
        if denom <= 0.0 {
            return Ok(w.to_vec());
        }
        return Ok(w
            .iter()
            .zip(mask)
            .map(|(&x, &m)| if m == keep_inside { x / denom } else { 0.0 })
            .collect());
    }
    Ok(w
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { x * scale / total } else { x / total })
        .collect())
}

/// Attention mass on masked positions.
pub fn target_mass(w: &[f64], mask: &[bool]) -> f64 {
    w.iter().zip(mask).filter(|(_, &m)| m).map(|(x, _)| x).sum()
}

/// Span a steering intervention favours.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SteerTarget {
    #[serde(rename = "evidence-1")]
    Evidence1,
    #[serde(rename = "evidence-2")]
    Evidence2,
    #[serde(rename = "domain-A")]
    DomainA,
    #[serde(rename = "domain-B")]
    DomainB,
}

impl SteerTarget {
    pub const ALL: [SteerTarget; 4] = [
        SteerTarget::Evidence1,
        SteerTarget::Evidence2,
        SteerTarget::DomainA,
        SteerTarget::DomainB,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SteerTarget::Evidence1 => "evidence-1",
            SteerTarget::Evidence2 => "evidence-2",
            SteerTarget::DomainA => "domain-A",
            SteerTarget::DomainB => "domain-B",
        }
    }

    pub fn of_domain(d: Domain) -> Self {
        match d {
            Domain::A => SteerTarget::DomainA,
            Domain::B => SteerTarget::DomainB,
        }
    }

    /// The prompt group this target names under `spans`.
    pub fn resolve(self, spans: &SpanMap) -> Result<Group> {
        match self {
            SteerTarget::Evidence1 => Ok(Group::Evidence1),
            SteerTarget::Evidence2 => Ok(Group::Evidence2),
            SteerTarget::DomainA => spans.evidence_in(Domain::A),
            SteerTarget::DomainB => spans.evidence_in(Domain::B),
        }
    }
}

impl FromStr for SteerTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SteerTarget::ALL.into_iter().find(|t| t.label() == s).ok_or_else(|| {
            Error::Input(format!(
                "unknown steer group {s:?} (expected evidence-1, evidence-2, domain-A or domain-B)"
            ))
        })
    }
}

/// Where and how strongly to bias attention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerSpec {
    pub target: SteerTarget,
    pub epsilon: f64,
    /// Layers to steer; `None` means all.
    #[serde(default)]
    pub layers: Option<Vec<usize>>,
    /// Heads to steer; `None` means all.
    #[serde(default)]
    pub heads: Option<Vec<usize>>,
}

impl SteerSpec {
    pub fn new(target: SteerTarget, epsilon: f64) -> Self {
        SteerSpec {
            target,
            epsilon,
            layers: None,
            heads: None,
        }
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if !self.epsilon.is_finite() {
            return Err(Error::Input(format!("epsilon must be finite, got {}", self.epsilon)));
        }
        if let Some(bad) = self.layers.iter().flatten().find(|&&l| l >= config.n_layers) {
            return Err(Error::Input(format!("steer layer {bad} out of range 0..{}", config.n_layers)));
        }
        if let Some(bad) = self.heads.iter().flatten().find(|&&h| h >= config.n_heads) {
            return Err(Error::Input(format!("steer head {bad} out of range 0..{}", config.n_heads)));
        }
        Ok(())
    }

    pub fn covers(&self, layer: usize, head: usize) -> bool {
        self.layers.as_ref().map_or(true, |ls| ls.contains(&layer)) && self.heads.as_ref().map_or(true, |hs| hs.contains(&head))
    }

    /// Binds the spec to one prompt, yielding a rewriter for decoding.
    pub fn attach(&self, spans: &SpanMap, config: &ModelConfig) -> Result<Steerer> {
        self.validate(config)?;
        Ok(Steerer {
            group: self.target.resolve(spans)?,
            spans: spans.clone(),
            epsilon: self.epsilon,
            layers: self.layers.as_ref().map(|v| v.iter().copied().collect()),
            heads: self.heads.as_ref().map(|v| v.iter().copied().collect()),
        })
    }
}

/// A [`SteerSpec`] bound to a prompt's span map.
#[derive(Clone, Debug)]
pub struct Steerer {
    group: Group,
    spans: SpanMap,
    epsilon: f64,
    layers: Option<BTreeSet<usize>>,
    heads: Option<BTreeSet<usize>>,
}

impl Steerer {
    pub fn group(&self) -> Group {
        self.group
    }

    pub fn applies(&self, key: SiteKey) -> bool {
        self.layers.as_ref().map_or(true, |s| s.contains(&key.layer)) && self.heads.as_ref().map_or(true, |s| s.contains(&key.head))
    }

    /// Target mask for a row ending at `step`.
    pub fn mask(&self, step: usize) -> Vec<bool> {
        self.spans.mask(self.group, step + 1)
    }
}

impl Rewriter for Steerer {
    fn rewrite(&self, key: SiteKey, row: &[f64]) -> Result<Option<Vec<f64>>> {
        if self.epsilon == 0.0 || !self.applies(key) {
            return Ok(None);
        }
        let mask = self.mask(key.step);
        if !mask.iter().any(|&m| m) {
            return Ok(None);
        }
        manipulate_row(row, &mask, self.epsilon).map(Some)
    }
}

/// Nine evenly spaced values from -1 to 1.
pub fn default_grid() -> Vec<f64> {
    (0..9).map(|i| -1.0 + 0.25 * i as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_case() {
        let out = manipulate_row(&[0.5, 0.5], &[true, false], 3f64.ln()).unwrap();
        assert!((out[0] - 0.75).abs() < 1e-12 && (out[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(manipulate_row(&[0.5, 0.6], &[true, false], 1.0).is_err());
        assert!(manipulate_row(&[0.5, 0.5], &[true], 1.0).is_err());
        assert!(manipulate_row(&[1.5, -0.5], &[true, false], 1.0).is_err());
        assert!(manipulate_row(&[0.5, 0.5], &[true, false], f64::NAN).is_err());
    }

    #[test]
    fn extreme_epsilon_saturates() {
        let out = manipulate_row(&[0.25, 0.75, 0.0], &[true, false, true], 1e6).unwrap();
        assert_eq!(out, vec![1.0, 0.0, 0.0]);
        let out = manipulate_row(&[0.25, 0.75, 0.0], &[true, false, true], -1e6).unwrap();
        assert_eq!(out, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn grid_has_nine_points() {
        let g = default_grid();
        assert_eq!(g.len(), 9);
        assert_eq!((g[0], g[4], g[8]), (-1.0, 0.0, 1.0));
    }

    #[test]
    fn target_labels_round_trip() {
        for t in SteerTarget::ALL {
            assert_eq!(t.label().parse::<SteerTarget>().unwrap(), t);
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{}\"", t.label()));
        }
        assert!("domain-C".parse::<SteerTarget>().is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let s = SteerSpec {
            layers: Some(vec![0, 2]),
            ..SteerSpec::new(SteerTarget::DomainB, -0.5)
        };
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<SteerSpec>(&j).unwrap(), s);
        let minimal: SteerSpec = serde_json::from_str(r#"{"target":"domain-A","epsilon":1.0}"#).unwrap();
        assert!(minimal.covers(3, 3));
    }

    fn row_and_mask() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (1usize..24).prop_flat_map(|n| {
            (
                prop::collection::vec(prop_oneof![Just(0.0), 0.001f64..1.0], n),
                prop::collection::vec(any::<bool>(), n),
            )
                .prop_filter_map("non-zero row", |(raw, mask)| {
                    let s: f64 = raw.iter().sum();
                    (s > 0.0).then(|| (raw.iter().map(|x| x / s).collect(), mask))
                })
        })
    }

    proptest! {
        #[test]
        fn output_is_a_distribution_keeping_zeros((w, mask) in row_and_mask(), eps in -5.0f64..5.0) {
            let out = manipulate_row(&w, &mask, eps).unwrap();
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (a, b) in w.iter().zip(&out) {
                prop_assert_eq!(*a == 0.0, *b == 0.0);
            }
        }

        #[test]
        fn zero_is_identity((w, mask) in row_and_mask()) {
            let out = manipulate_row(&w, &mask, 0.0).unwrap();
            for (a, b) in w.iter().zip(&out) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn biases_compose((w, mask) in row_and_mask(), e1 in -2.0f64..2.0, e2 in -2.0f64..2.0) {
            let two = manipulate_row(&manipulate_row(&w, &mask, e1).unwrap(), &mask, e2).unwrap();
            let one = manipulate_row(&w, &mask, e1 + e2).unwrap();
            for (a, b) in two.iter().zip(&one) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn mass_is_monotone((w, mask) in row_and_mask(), e1 in -3.0f64..3.0, d in 0.0f64..3.0) {
            let lo = target_mass(&manipulate_row(&w, &mask, e1).unwrap(), &mask);
            let hi = target_mass(&manipulate_row(&w, &mask, e1 + d).unwrap(), &mask);
            prop_assert!(hi >= lo - 1e-12);
        }
    }
}
