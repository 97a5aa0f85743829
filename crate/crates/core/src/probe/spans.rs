use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Domain;

/// Position groups of a rendered prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    /// First evidence span in presentation order.
    #[serde(rename = "evidence-1")]
    Evidence1,
    /// Second evidence span in presentation order.
    #[serde(rename = "evidence-2")]
    Evidence2,
    /// Question, framing tokens and the answer cue.
    #[serde(rename = "question")]
    Question,
    /// BOS and generated tokens.
    #[serde(rename = "other")]
    Other,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Evidence1, Group::Evidence2, Group::Question, Group::Other];

    pub fn label(self) -> &'static str {
        match self {
            Group::Evidence1 => "evidence-1",
            Group::Evidence2 => "evidence-2",
            Group::Question => "question",
            Group::Other => "other",
        }
    }

    fn slot(self) -> Option<usize> {
        match self {
            Group::Evidence1 => Some(0),
            Group::Evidence2 => Some(1),
            _ => None,
        }
    }
}

/// Group label for every prompt position, plus the domain of each evidence
/// span. Positions past the prompt (generated tokens) are [`Group::Other`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanMap {
    groups: Vec<Group>,
    domains: [Domain; 2],
}

impl SpanMap {
    pub fn new(groups: Vec<Group>, domains: [Domain; 2]) -> Result<Self> {
        for g in [Group::Evidence1, Group::Evidence2] {
            if !groups.contains(&g) {
                return Err(Error::Input(format!("span map has no {} positions", g.label())));
            }
        }
        Ok(SpanMap { groups, domains })
    }

    pub fn prompt_len(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, pos: usize) -> Group {
        self.groups.get(pos).copied().unwrap_or(Group::Other)
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    /// Domain of an evidence group; `None` for non-evidence groups.
    pub fn domain(&self, g: Group) -> Option<Domain> {
        g.slot().map(|s| self.domains[s])
    }

    pub fn domains(&self) -> [Domain; 2] {
        self.domains
    }

    /// The evidence group in `domain`. Errors unless exactly one span
    /// has that domain, as for cross-domain prompts.
    pub fn evidence_in(&self, domain: Domain) -> Result<Group> {
        match (self.domains[0] == domain, self.domains[1] == domain) {
            (true, false) => Ok(Group::Evidence1),
            (false, true) => Ok(Group::Evidence2),
            _ => Err(Error::Input(format!(
                "domain {domain:?} does not identify a single evidence span (spans are {:?})",
                self.domains
            ))),
        }
    }

    /// Positions `0..len` that belong to `g`.
    pub fn mask(&self, g: Group, len: usize) -> Vec<bool> {
        (0..len).map(|p| self.group(p) == g).collect()
    }

    pub fn positions(&self, g: Group) -> Vec<usize> {
        (0..self.groups.len()).filter(|&p| self.groups[p] == g).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Group::*;

    fn map() -> SpanMap {
        SpanMap::new(vec![Other, Evidence1, Evidence1, Evidence2, Question], [Domain::B, Domain::A]).unwrap()
    }

    #[test]
    fn lookup_and_extension() {
        let m = map();
        assert_eq!(m.group(1), Evidence1);
        assert_eq!(m.group(9), Other);
        assert_eq!(m.positions(Evidence1), vec![1, 2]);
        assert_eq!(m.mask(Evidence2, 6), vec![false, false, false, true, false, false]);
        assert_eq!(m.evidence_in(Domain::A).unwrap(), Evidence2);
        assert_eq!(m.domain(Evidence1), Some(Domain::B));
        assert_eq!(m.domain(Question), None);
    }

    #[test]
    fn same_domain_spans_are_ambiguous() {
        let m = SpanMap::new(vec![Evidence1, Evidence2], [Domain::A, Domain::A]).unwrap();
        assert!(m.evidence_in(Domain::A).is_err());
        assert!(m.evidence_in(Domain::B).is_err());
    }

    #[test]
    fn missing_evidence_rejected() {
        assert!(SpanMap::new(vec![Evidence1, Question], [Domain::A, Domain::B]).is_err());
    }

    #[test]
    fn labels_match_serde() {
        for g in Group::ALL {
            assert_eq!(serde_json::to_string(&g).unwrap(), format!("\"{}\"", g.label()));
        }
    }
}
