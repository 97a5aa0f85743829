use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::instance::{gold_response, prompt_body, PromptMode};
use super::world::{EntityPool, FactWorld};
use crate::error::{Error, Result};
use crate::model::{Control, Domain};

/// What a training item's two spans are about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    /// Both spans describe the queried entity with different values.
    Conflict,
    /// Both spans describe the queried entity with its value.
    Consistent,
    /// One span describes the queried entity, the other a different one.
    Distractor,
}

/// A single-domain instruction/response pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstructionItem {
    pub id: String,
    pub domain: Domain,
    pub kind: ItemKind,
    pub spans: [Vec<usize>; 2],
    pub question: Vec<usize>,
    /// Response tokens without EOS.
    pub response: Vec<usize>,
    pub prompt_mode: PromptMode,
}

impl InstructionItem {
    /// Spans, question and framing, without BOS and without the answer cue.
    pub fn instruction(&self) -> Vec<usize> {
        let (mut toks, _) = prompt_body([&self.spans[0], &self.spans[1]], &self.question, self.prompt_mode);
        let cue = toks.pop();
        debug_assert_eq!(cue, Some(Control::Answer.id()));
        toks
    }
}

/// Parameters of a single-domain instruction corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub domain: Domain,
    pub n: usize,
    /// Fraction of items that are two-span conflicts answered with the
    /// conflict token.
    pub conflict_fraction: f64,
    /// Share of the remaining items that are consistent pairs rather than
    /// distractor pairs.
    pub consistent_share: f64,
    /// Prompt modes cycled through item by item.
    pub prompt_modes: Vec<PromptMode>,
    pub seed: u64,
    pub pool: EntityPool,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            domain: Domain::A,
            n: 20_000,
            conflict_fraction: 0.1,
            consistent_share: 0.5,
            prompt_modes: vec![PromptMode::Standard],
            seed: 0,
            pool: EntityPool::Train,
        }
    }
}

pub const MAX_CONFLICT_FRACTION: f64 = 0.5;

/// A seeded single-domain corpus. Exactly `round(n * conflict_fraction)`
/// items are conflicts; all spans use `spec.domain`.
pub fn gen_instruction_corpus(world: &FactWorld, spec: &CorpusSpec) -> Result<Vec<InstructionItem>> {
    if !(0.0..=MAX_CONFLICT_FRACTION).contains(&spec.conflict_fraction) {
        return Err(Error::Input(format!(
            "conflict_fraction {} is outside [0, {MAX_CONFLICT_FRACTION}]",
            spec.conflict_fraction
        )));
    }
    if !(0.0..=1.0).contains(&spec.consistent_share) {
        return Err(Error::Input(format!("consistent_share {} is outside [0, 1]", spec.consistent_share)));
    }
    if spec.prompt_modes.is_empty() {
        return Err(Error::Input("prompt_modes is empty".into()));
    }
    let pool: Vec<usize> = world.pool(spec.pool).collect();
    if pool.len() < 2 {
        return Err(Error::Input(format!("the {:?} pool needs at least 2 entities", spec.pool)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_conflict = (spec.n as f64 * spec.conflict_fraction).round() as usize;
    let n_consistent = ((spec.n - n_conflict) as f64 * spec.consistent_share).round() as usize;
    let mut kinds: Vec<ItemKind> = std::iter::repeat(ItemKind::Conflict)
        .take(n_conflict)
        .chain(std::iter::repeat(ItemKind::Consistent).take(n_consistent))
        .chain(std::iter::repeat(ItemKind::Distractor).take(spec.n - n_conflict - n_consistent))
        .collect();
    kinds.shuffle(&mut rng);
    let d = spec.domain;
    let vocab = world.vocab();
    let mut out = Vec::with_capacity(spec.n);
    for (i, kind) in kinds.into_iter().enumerate() {
        let e = world.entity(pool[rng.gen_range(0..pool.len())]);
        let mode = spec.prompt_modes[i % spec.prompt_modes.len()];
        let main = world.render(&e.key, e.value, d);
        let second = match kind {
            ItemKind::Conflict => world.render(&e.key, world.other_value(e.value, &mut rng), d),
            ItemKind::Consistent => main.clone(),
            ItemKind::Distractor => {
                let other = loop {
                    let o = world.entity(pool[rng.gen_range(0..pool.len())]);
                    if o.key != e.key {
                        break o;
                    }
                };
                world.render(&other.key, rng.gen_range(0..world.config().n_values), d)
            }
        };
        let spans = if rng.gen_bool(0.5) { [main, second] } else { [second, main] };
        out.push(InstructionItem {
            id: format!("{}-{}-{i:06}", domain_tag(d), spec.seed),
            domain: d,
            kind,
            spans,
            question: world.question(&e.key),
            response: gold_response(kind == ItemKind::Conflict, vocab.value(e.value), mode),
            prompt_mode: mode,
        });
    }
    Ok(out)
}

fn domain_tag(d: Domain) -> &'static str {
    match d {
        Domain::A => "a",
        Domain::B => "b",
    }
}

/// A token sequence with a mask marking supervised positions.
///
/// `loss_mask[i]` is true when token `i` is a prediction target (predicted
/// from position `i - 1`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSequence {
    pub tokens: Vec<usize>,
    pub loss_mask: Vec<bool>,
}

impl TrainSequence {
    pub fn supervised_tokens(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }
}

/// `<bos> instruction <ans> response <eos>`, supervising response and EOS.
pub fn single_sequence(item: &InstructionItem) -> TrainSequence {
    let mut tokens = vec![Control::Bos.id()];
    tokens.extend(item.instruction());
    tokens.push(Control::Answer.id());
    let n_prompt = tokens.len();
    tokens.extend(&item.response);
    tokens.push(Control::Eos.id());
    let loss_mask = (0..tokens.len()).map(|i| i >= n_prompt).collect();
    TrainSequence { tokens, loss_mask }
}

/// How two single-domain corpora are combined for training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MixMode {
    /// Shuffled union of both corpora.
    #[serde(rename = "dataset")]
    Dataset,
    /// One item from each corpus per sequence.
    #[serde(rename = "instance")]
    Instance,
    #[serde(rename = "a-only")]
    AOnly,
    #[serde(rename = "b-only")]
    BOnly,
}

impl MixMode {
    pub const ALL: [MixMode; 4] = [MixMode::Dataset, MixMode::Instance, MixMode::AOnly, MixMode::BOnly];

    pub fn label(self) -> &'static str {
        match self {
            MixMode::Dataset => "dataset",
            MixMode::Instance => "instance",
            MixMode::AOnly => "a-only",
            MixMode::BOnly => "b-only",
        }
    }
}

impl std::str::FromStr for MixMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MixMode::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Input(format!("unknown mix mode {s:?} (expected dataset, instance, a-only or b-only)")))
    }
}

/// Which domain's item leads an instance-level sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceOrder {
    /// Always the domain-A item first.
    #[default]
    AFirst,
    /// Seeded coin flip per sequence.
    Random,
}

fn check_domain(items: &[InstructionItem], d: Domain) -> Result<()> {
    match items.iter().find(|it| it.domain != d) {
        Some(it) => Err(Error::Input(format!("item {} is in domain {:?}, expected {d:?}", it.id, it.domain))),
        None => Ok(()),
    }
}

/// Shuffled union of both corpora, one item per sequence.
pub fn mix_dataset_level(a: &[InstructionItem], b: &[InstructionItem], seed: u64) -> Result<Vec<TrainSequence>> {
    check_domain(a, Domain::A)?;
    check_domain(b, Domain::B)?;
    let mut out: Vec<TrainSequence> = a.iter().chain(b).map(single_sequence).collect();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(out)
}

/// Pairs the i-th items of both (seed-shuffled) corpora into one sequence:
/// `<bos> first <sep> second <sep> <reply-both> <ans> r1 <sep> r2 <eos>`.
/// Yields `min(|a|, |b|)` sequences; the responses, the separator between
/// them and EOS are supervised.
pub fn mix_instance_level(
    a: &[InstructionItem],
    b: &[InstructionItem],
    seed: u64,
    order: InstanceOrder,
) -> Result<Vec<TrainSequence>> {
    check_domain(a, Domain::A)?;
    check_domain(b, Domain::B)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ia: Vec<usize> = (0..a.len()).collect();
    let mut ib: Vec<usize> = (0..b.len()).collect();
    ia.shuffle(&mut rng);
    ib.shuffle(&mut rng);
    let sep = Control::Sep.id();
    let mut out = Vec::with_capacity(a.len().min(b.len()));
    for (&i, &j) in ia.iter().zip(&ib) {
        let (x, y) = match order {
            InstanceOrder::Random if rng.gen_bool(0.5) => (&b[j], &a[i]),
            _ => (&a[i], &b[j]),
        };
        let mut tokens = vec![Control::Bos.id()];
        tokens.extend(x.instruction());
        tokens.push(sep);
        tokens.extend(y.instruction());
        tokens.extend([sep, Control::ReplyBoth.id(), Control::Answer.id()]);
        let n_prompt = tokens.len();
        tokens.extend(&x.response);
        tokens.push(sep);
        tokens.extend(&y.response);
        tokens.push(Control::Eos.id());
        let loss_mask = (0..tokens.len()).map(|p| p >= n_prompt).collect();
        out.push(TrainSequence { tokens, loss_mask });
    }
    Ok(out)
}

/// Sequences for one training arm.
pub fn build_mixture(
    mode: MixMode,
    a: &[InstructionItem],
    b: &[InstructionItem],
    seed: u64,
    order: InstanceOrder,
) -> Result<Vec<TrainSequence>> {
    match mode {
        MixMode::Dataset => mix_dataset_level(a, b, seed),
        MixMode::Instance => mix_instance_level(a, b, seed, order),
        MixMode::AOnly => mix_dataset_level(a, &[], seed),
        MixMode::BOnly => mix_dataset_level(&[], b, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldgen::world::{parse_span, WorldConfig};

    fn world() -> FactWorld {
        FactWorld::build(&WorldConfig::default()).unwrap()
    }

    fn corpus(w: &FactWorld, d: Domain, n: usize) -> Vec<InstructionItem> {
        gen_instruction_corpus(
            w,
            &CorpusSpec {
                domain: d,
                n,
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn corpus_is_single_domain_and_labelled() {
        let w = world();
        let items = corpus(&w, Domain::B, 500);
        assert_eq!(items.iter().filter(|i| i.kind == ItemKind::Conflict).count(), 50);
        let train: std::collections::HashSet<_> = w.pool(EntityPool::Train).map(|e| w.question(&w.entity(e).key)).collect();
        for it in &items {
            let p: Vec<_> = it.spans.iter().map(|s| parse_span(w.vocab(), s).unwrap()).collect();
            assert!(p.iter().all(|s| s.domain == Domain::B));
            assert!(train.contains(&it.question));
            let on_topic = p.iter().filter(|s| w.question(&s.key) == it.question).count();
            match it.kind {
                ItemKind::Conflict => {
                    assert_eq!(on_topic, 2);
                    assert_ne!(p[0].value, p[1].value);
                    assert_eq!(it.response, vec![Control::Conflict.id()]);
                }
                ItemKind::Consistent => {
                    assert_eq!(on_topic, 2);
                    assert_eq!(p[0].value, p[1].value);
                }
                ItemKind::Distractor => assert_eq!(on_topic, 1),
            }
            if it.kind != ItemKind::Conflict {
                let v = p.iter().find(|s| w.question(&s.key) == it.question).unwrap().value;
                assert_eq!(it.response, vec![w.vocab().value(v)]);
            }
        }
    }

    #[test]
    fn conflict_fraction_bounds() {
        let w = world();
        for bad in [-0.1, 0.51, 1.0] {
            let spec = CorpusSpec {
                conflict_fraction: bad,
                ..Default::default()
            };
            assert!(gen_instruction_corpus(&w, &spec).is_err());
        }
    }

    #[test]
    fn dataset_mix_is_a_union() {
        let w = world();
        let a = corpus(&w, Domain::A, 30);
        let b = corpus(&w, Domain::B, 20);
        let mix = mix_dataset_level(&a, &b, 1).unwrap();
        assert_eq!(mix.len(), 50);
        let mut got: Vec<_> = mix.iter().map(|s| s.tokens.clone()).collect();
        let mut want: Vec<_> = a.iter().chain(&b).map(|i| single_sequence(i).tokens).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
        assert!(mix_dataset_level(&b, &a, 1).is_err());
    }

    #[test]
    fn instance_mix_template() {
        let w = world();
        let a = corpus(&w, Domain::A, 30);
        let b = corpus(&w, Domain::B, 20);
        let mix = mix_instance_level(&a, &b, 1, InstanceOrder::AFirst).unwrap();
        assert_eq!(mix.len(), 20);
        let sep = Control::Sep.id();
        for s in &mix {
            assert_eq!(s.tokens.len(), s.loss_mask.len());
            let start = s.tokens.iter().position(|&t| t == Control::ReplyBoth.id()).unwrap() + 2;
            assert_eq!(s.tokens[start - 1], Control::Answer.id());
            assert!(s.loss_mask[start..].iter().all(|&m| m));
            assert!(s.loss_mask[..start].iter().all(|&m| !m));
            let tail = &s.tokens[start..];
            assert_eq!(*tail.last().unwrap(), Control::Eos.id());
            assert_eq!(tail.iter().filter(|&&t| t == sep).count(), 1);
            let first_a = s.tokens.iter().position(|&t| w.vocab().domain_of(t) == Some(Domain::A)).unwrap();
            let first_b = s.tokens.iter().position(|&t| w.vocab().domain_of(t) == Some(Domain::B)).unwrap();
            assert!(first_a < first_b);
        }
        let supervised_inst: usize = mix.iter().map(TrainSequence::supervised_tokens).sum();
        let ds = mix_dataset_level(&a[..20], &b, 1).unwrap();
        let supervised_ds: usize = ds.iter().map(TrainSequence::supervised_tokens).sum();
        assert_eq!(supervised_inst, supervised_ds);
    }

    #[test]
    fn random_order_uses_both_orders() {
        let w = world();
        let a = corpus(&w, Domain::A, 40);
        let b = corpus(&w, Domain::B, 40);
        let mix = mix_instance_level(&a, &b, 1, InstanceOrder::Random).unwrap();
        let a_first = mix
            .iter()
            .filter(|s| w.vocab().domain_of(s.tokens[1]) == Some(Domain::A))
            .count();
        assert!(a_first > 5 && a_first < 35);
    }
}
