use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Control;

/// Which rule fired.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchedRule {
    ConflictToken,
    BothAnswers,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgement {
    pub detected: bool,
    pub rule: MatchedRule,
}

/// A response reports the conflict if it contains the conflict token, or
/// if it names both competing answers (which requires them to differ).
/// Total over all inputs.
pub fn judge(response: &[usize], answer: usize, conflicting_answer: usize) -> Judgement {
    let rule = if response.contains(&Control::Conflict.id()) {
        MatchedRule::ConflictToken
    } else if answer != conflicting_answer && response.contains(&answer) && response.contains(&conflicting_answer) {
        MatchedRule::BothAnswers
    } else {
        MatchedRule::None
    };
    Judgement {
        detected: rule != MatchedRule::None,
        rule,
    }
}

/// A control answer is correct if it names the answer and does not claim
/// a conflict.
pub fn control_correct(response: &[usize], answer: usize) -> bool {
    response.contains(&answer) && !response.contains(&Control::Conflict.id())
}

/// Fraction of judgements that detected a conflict.
pub fn detection_rate(judgements: &[Judgement]) -> Result<f64> {
    if judgements.is_empty() {
        return Err(Error::Input("detection rate of an empty set".into()));
    }
    Ok(judgements.iter().filter(|j| j.detected).count() as f64 / judgements.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const C: usize = 3;

    #[test]
    fn rules() {
        assert_eq!(Control::Conflict.id(), C);
        assert_eq!(judge(&[C, 1], 40, 41).rule, MatchedRule::ConflictToken);
        assert_eq!(judge(&[41, 2, 40], 40, 41).rule, MatchedRule::BothAnswers);
        assert_eq!(judge(&[40, 1], 40, 41).rule, MatchedRule::None);
        assert_eq!(judge(&[], 40, 41).rule, MatchedRule::None);
        assert!(!judge(&[40, 40], 40, 40).detected);
        assert!(judge(&[C], 40, 40).detected);
    }

    #[test]
    fn rates() {
        assert!(detection_rate(&[]).is_err());
        let j = [judge(&[C], 1, 2), judge(&[1], 1, 2), judge(&[1, 2], 1, 2), judge(&[5], 1, 2)];
        assert_eq!(detection_rate(&j).unwrap(), 0.5);
        assert!(control_correct(&[8, 40, 1], 40));
        assert!(!control_correct(&[C, 40], 40));
    }
}
