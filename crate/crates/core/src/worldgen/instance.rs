use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::world::{EntityPool, FactWorld};
use crate::error::{Error, Result};
use crate::model::{Control, Domain};
use crate::probe::{Group, SpanMap};

/// Which domains the two evidence spans come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "uni-A")]
    UniA,
    #[serde(rename = "uni-B")]
    UniB,
    #[serde(rename = "cross")]
    Cross,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::UniA, Condition::UniB, Condition::Cross];

    pub fn label(self) -> &'static str {
        match self {
            Condition::UniA => "uni-A",
            Condition::UniB => "uni-B",
            Condition::Cross => "cross",
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| Error::Input(format!("unknown condition {s:?} (expected uni-A, uni-B or cross)")))
    }
}

/// Domain of the first-presented span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Order {
    #[serde(rename = "A-first")]
    AFirst,
    #[serde(rename = "B-first")]
    BFirst,
}

impl Order {
    pub fn label(self) -> &'static str {
        match self {
            Order::AFirst => "A-first",
            Order::BFirst => "B-first",
        }
    }

    pub fn of_first(domain: Domain) -> Order {
        match domain {
            Domain::A => Order::AFirst,
            Domain::B => Order::BFirst,
        }
    }
}

/// How the question is framed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Standard,
    /// Appends a marker asking for conflicts to be reported.
    Instructed,
    /// Asks whether the two spans agree before answering.
    Explicit,
}

impl PromptMode {
    pub const ALL: [PromptMode; 3] = [PromptMode::Standard, PromptMode::Instructed, PromptMode::Explicit];

    pub fn label(self) -> &'static str {
        match self {
            PromptMode::Standard => "standard",
            PromptMode::Instructed => "instructed",
            PromptMode::Explicit => "explicit",
        }
    }
}

impl std::str::FromStr for PromptMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PromptMode::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Input(format!("unknown prompt mode {s:?} (expected standard, instructed or explicit)")))
    }
}

/// One evidence span in prompt order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvidenceSpan {
    pub domain: Domain,
    pub tokens: Vec<usize>,
}

/// A question with two evidence spans that may disagree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConflictInstance {
    pub id: String,
    pub condition: Condition,
    pub conflict: bool,
    pub order: Order,
    /// The two spans in prompt order.
    pub spans: [EvidenceSpan; 2],
    pub question: Vec<usize>,
    /// Token id of the true answer.
    pub answer: usize,
    /// Token id of the competing answer; equals `answer` for controls.
    pub conflicting_answer: usize,
    pub prompt_mode: PromptMode,
}

/// Question framing tokens placed after the spans, ending with the answer cue.
pub(crate) fn frame_question(question: &[usize], mode: PromptMode) -> (Vec<usize>, Vec<Group>) {
    let mut toks = Vec::new();
    if mode == PromptMode::Explicit {
        toks.push(Control::AskSame.id());
    }
    toks.extend_from_slice(question);
    if mode == PromptMode::Instructed {
        toks.push(Control::Report.id());
    }
    toks.push(Control::Answer.id());
    let groups = vec![Group::Question; toks.len()];
    (toks, groups)
}

/// Prompt tokens for two spans plus a question, without BOS.
pub(crate) fn prompt_body(spans: [&[usize]; 2], question: &[usize], mode: PromptMode) -> (Vec<usize>, Vec<Group>) {
    let mut toks = Vec::new();
    let mut groups = Vec::new();
    for (span, g) in spans.iter().zip([Group::Evidence1, Group::Evidence2]) {
        toks.extend_from_slice(span);
        groups.extend(std::iter::repeat(g).take(span.len()));
    }
    let (q, qg) = frame_question(question, mode);
    toks.extend(q);
    groups.extend(qg);
    (toks, groups)
}

/// Gold response (without EOS) for a two-span prompt.
pub fn gold_response(conflict: bool, answer: usize, mode: PromptMode) -> Vec<usize> {
    let c = Control::Conflict.id();
    match (mode, conflict) {
        (PromptMode::Explicit, true) => vec![Control::No.id(), c],
        (PromptMode::Explicit, false) => vec![Control::Yes.id(), answer],
        (_, true) => vec![c],
        (_, false) => vec![answer],
    }
}

/// Model input for an instance and the group of every prompt position.
pub fn render_prompt(inst: &ConflictInstance) -> (Vec<usize>, SpanMap) {
    let (body, body_groups) = prompt_body(
        [&inst.spans[0].tokens, &inst.spans[1].tokens],
        &inst.question,
        inst.prompt_mode,
    );
    let mut toks = vec![Control::Bos.id()];
    toks.extend(body);
    let mut groups = vec![Group::Other];
    groups.extend(body_groups);
    let map = SpanMap::new(groups, [inst.spans[0].domain, inst.spans[1].domain]).expect("two evidence spans");
    (toks, map)
}

/// Parameters of one evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSetSpec {
    pub condition: Condition,
    pub n: usize,
    pub conflict_ratio: f64,
    pub prompt_mode: PromptMode,
    pub seed: u64,
    pub pool: EntityPool,
}

impl Default for EvalSetSpec {
    fn default() -> Self {
        EvalSetSpec {
            condition: Condition::Cross,
            n: 200,
            conflict_ratio: 0.5,
            prompt_mode: PromptMode::Standard,
            seed: 0,
            pool: EntityPool::Heldout,
        }
    }
}

/// `n` flags with exactly `ones` true, spread over the conflict and control
/// halves as evenly as their sizes allow.
fn balanced_flags(n_conflict: usize, n_control: usize, ones: usize, rng: &mut ChaCha8Rng) -> (Vec<bool>, Vec<bool>) {
    let mut c_ones = n_conflict / 2;
    let mut k_ones = n_control / 2;
    if c_ones + k_ones < ones {
        if n_conflict % 2 == 1 {
            c_ones += 1;
        } else {
            k_ones += 1;
        }
    }
    debug_assert_eq!(c_ones + k_ones, ones);
    let mut c: Vec<bool> = (0..n_conflict).map(|i| i < c_ones).collect();
    let mut k: Vec<bool> = (0..n_control).map(|i| i < k_ones).collect();
    c.shuffle(rng);
    k.shuffle(rng);
    (c, k)
}

/// A seeded evaluation set over distinct entities from `spec.pool`.
///
/// `round(n * conflict_ratio)` items conflict. Cross sets have exactly half
/// the items with the domain-A span first; in unimodal sets the span
/// carrying the true value comes first in exactly half the items.
pub fn gen_eval_set(world: &FactWorld, spec: &EvalSetSpec) -> Result<Vec<ConflictInstance>> {
    if spec.n == 0 || spec.n % 2 == 1 {
        return Err(Error::Input(format!("eval set size must be even and positive, got {}", spec.n)));
    }
    if !(0.0..=1.0).contains(&spec.conflict_ratio) {
        return Err(Error::Input(format!("conflict_ratio {} is outside [0, 1]", spec.conflict_ratio)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let entities = world.sample_entities(spec.pool, spec.n, &mut rng)?;
    let n_conflict = (spec.n as f64 * spec.conflict_ratio).round() as usize;
    let (c_flags, k_flags) = balanced_flags(n_conflict, spec.n - n_conflict, spec.n / 2, &mut rng);
    let vocab = world.vocab();
    let mut out = Vec::with_capacity(spec.n);
    for (i, &e) in entities.iter().enumerate() {
        let conflict = i < n_conflict;
        let first_flag = if conflict { c_flags[i] } else { k_flags[i - n_conflict] };
        let entity = world.entity(e);
        let a = entity.value;
        let a_bar = if conflict { world.other_value(a, &mut rng) } else { a };
        // true span and competing span
        let (d_true, d_other) = match spec.condition {
            Condition::UniA => (Domain::A, Domain::A),
            Condition::UniB => (Domain::B, Domain::B),
            Condition::Cross => (Domain::A, Domain::B),
        };
        let s_true = EvidenceSpan {
            domain: d_true,
            tokens: world.render(&entity.key, a, d_true),
        };
        let s_other = EvidenceSpan {
            domain: d_other,
            tokens: world.render(&entity.key, a_bar, d_other),
        };
        // Cross: flag means A-first. Uni: flag means the true span first.
        let spans = if first_flag { [s_true, s_other] } else { [s_other, s_true] };
        out.push(ConflictInstance {
            id: format!("{}-{}-{}-{i:05}", spec.condition.label(), spec.prompt_mode.label(), spec.seed),
            condition: spec.condition,
            conflict,
            order: Order::of_first(spans[0].domain),
            spans,
            question: world.question(&entity.key),
            answer: vocab.value(a),
            conflicting_answer: vocab.value(a_bar),
            prompt_mode: spec.prompt_mode,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldgen::world::{parse_span, WorldConfig};

    fn world() -> FactWorld {
        FactWorld::build(&WorldConfig::default()).unwrap()
    }

    #[test]
    fn counts_and_balance() {
        let w = world();
        for cond in Condition::ALL {
            for (n, ratio) in [(100, 0.5), (42, 0.3), (10, 0.0), (10, 1.0), (2, 0.5)] {
                let set = gen_eval_set(
                    &w,
                    &EvalSetSpec {
                        condition: cond,
                        n,
                        conflict_ratio: ratio,
                        ..Default::default()
                    },
                )
                .unwrap();
                assert_eq!(set.len(), n);
                let nc = set.iter().filter(|i| i.conflict).count();
                assert_eq!(nc, (n as f64 * ratio).round() as usize);
                for inst in &set {
                    let a = parse_span(w.vocab(), &inst.spans[0].tokens).unwrap();
                    let b = parse_span(w.vocab(), &inst.spans[1].tokens).unwrap();
                    assert_eq!(a.key, b.key);
                    assert_eq!(inst.conflict, a.value != b.value);
                    assert_eq!(inst.conflict, inst.answer != inst.conflicting_answer);
                }
                if cond == Condition::Cross {
                    let af = set.iter().filter(|i| i.order == Order::AFirst).count();
                    assert_eq!(af, n / 2);
                    for inst in &set {
                        let pa = inst.spans.iter().find(|s| s.domain == Domain::A).unwrap();
                        let va = parse_span(w.vocab(), &pa.tokens).unwrap().value;
                        assert_eq!(w.vocab().value(va), inst.answer);
                    }
                }
            }
        }
    }

    #[test]
    fn odd_or_oversized_sets_rejected() {
        let w = world();
        let spec = |n| EvalSetSpec { n, ..Default::default() };
        assert!(gen_eval_set(&w, &spec(7)).is_err());
        assert!(gen_eval_set(&w, &spec(0)).is_err());
        assert!(gen_eval_set(&w, &spec(1000)).is_err());
    }

    #[test]
    fn entities_are_heldout_and_distinct() {
        let w = world();
        let set = gen_eval_set(&w, &EvalSetSpec::default()).unwrap();
        let heldout: std::collections::HashSet<_> = w.pool(EntityPool::Heldout).map(|e| w.question(&w.entity(e).key)).collect();
        let mut seen = std::collections::HashSet::new();
        for inst in &set {
            assert!(heldout.contains(&inst.question));
            assert!(seen.insert(inst.question.clone()));
        }
    }

    #[test]
    fn prompt_layout_per_mode() {
        let w = world();
        for mode in PromptMode::ALL {
            let set = gen_eval_set(
                &w,
                &EvalSetSpec {
                    n: 4,
                    prompt_mode: mode,
                    ..Default::default()
                },
            )
            .unwrap();
            let (toks, map) = render_prompt(&set[0]);
            assert_eq!(toks[0], Control::Bos.id());
            assert_eq!(*toks.last().unwrap(), Control::Answer.id());
            assert_eq!(map.prompt_len(), toks.len());
            let extra = usize::from(mode != PromptMode::Standard);
            let q = set[0].question.len();
            assert_eq!(toks.len(), 1 + set[0].spans[0].tokens.len() + set[0].spans[1].tokens.len() + q + 1 + extra);
            assert_eq!(toks.contains(&Control::Report.id()), mode == PromptMode::Instructed);
            assert_eq!(toks.contains(&Control::AskSame.id()), mode == PromptMode::Explicit);
            let ev1 = map.positions(Group::Evidence1);
            assert_eq!(ev1.iter().map(|&p| toks[p]).collect::<Vec<_>>(), set[0].spans[0].tokens);
        }
    }
}
