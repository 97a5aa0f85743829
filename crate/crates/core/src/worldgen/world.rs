use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AlphabetSizes, Domain, Marker, Vocab};

/// Parameters of a synthetic fact world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_entities: usize,
    /// Digits per entity key.
    pub key_digits: usize,
    /// Size of each key-digit alphabet.
    pub key_base: usize,
    /// Size of the shared answer alphabet.
    pub n_values: usize,
    /// Filler symbols per domain alphabet.
    pub n_fillers: usize,
    /// Filler tokens inside each domain-A span.
    pub a_filler_len: usize,
    /// Filler tokens inside each domain-B span.
    pub b_filler_len: usize,
    /// Fraction of entities reserved for evaluation.
    pub heldout_fraction: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 0,
            n_entities: 600,
            key_digits: 3,
            key_base: 10,
            n_values: 12,
            n_fillers: 4,
            a_filler_len: 0,
            b_filler_len: 2,
            heldout_fraction: 1.0 / 3.0,
        }
    }
}

impl WorldConfig {
    pub fn alphabet_sizes(&self) -> AlphabetSizes {
        AlphabetSizes {
            key_base: self.key_base,
            n_values: self.n_values,
            n_fillers: self.n_fillers,
        }
    }

    pub fn span_len(&self, domain: Domain) -> usize {
        4 + self.key_digits
            + match domain {
                Domain::A => self.a_filler_len,
                Domain::B => self.b_filler_len,
            }
    }
}

/// One entity: a key (digit tuple) and its true value index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub key: Vec<usize>,
    pub value: usize,
}

/// A seeded set of entity facts with per-domain renderers.
#[derive(Clone, Debug, PartialEq)]
pub struct FactWorld {
    config: WorldConfig,
    vocab: Vocab,
    entities: Vec<Entity>,
    n_train: usize,
}

/// Entities available to a generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityPool {
    Train,
    Heldout,
    All,
}

impl FactWorld {
    /// Deterministic world construction.
    pub fn build(config: &WorldConfig) -> Result<Self> {
        let vocab = Vocab::new(config.alphabet_sizes())?;
        if config.key_digits == 0 {
            return Err(Error::Config("key_digits must be positive".into()));
        }
        let capacity = (config.key_base as u128).checked_pow(config.key_digits as u32).unwrap_or(u128::MAX);
        if (config.n_entities as u128) > capacity {
            return Err(Error::Config(format!(
                "{} entities need more keys than {} digits over base {} provide ({capacity})",
                config.n_entities, config.key_digits, config.key_base
            )));
        }
        if (config.a_filler_len > 0 || config.b_filler_len > 0) && config.n_fillers == 0 {
            return Err(Error::Config("filler lengths require n_fillers > 0".into()));
        }
        if !(0.0..=1.0).contains(&config.heldout_fraction) {
            return Err(Error::Config("heldout_fraction must lie in [0, 1]".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut seen = std::collections::HashSet::new();
        let mut entities = Vec::with_capacity(config.n_entities);
        while entities.len() < config.n_entities {
            let key: Vec<usize> = (0..config.key_digits).map(|_| rng.gen_range(0..config.key_base)).collect();
            if seen.insert(key.clone()) {
                let value = rng.gen_range(0..config.n_values);
                entities.push(Entity { key, value });
            }
        }
        let n_heldout = (config.n_entities as f64 * config.heldout_fraction).round() as usize;
        Ok(FactWorld {
            config: config.clone(),
            vocab,
            entities,
            n_train: config.n_entities - n_heldout,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn entity(&self, idx: usize) -> &Entity {
        &self.entities[idx]
    }

    /// Entity indices in a pool, in world order.
    pub fn pool(&self, pool: EntityPool) -> std::ops::Range<usize> {
        match pool {
            EntityPool::Train => 0..self.n_train,
            EntityPool::Heldout => self.n_train..self.entities.len(),
            EntityPool::All => 0..self.entities.len(),
        }
    }

    /// `count` distinct entity indices drawn from `pool`.
    pub fn sample_entities(&self, pool: EntityPool, count: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        let mut idx: Vec<usize> = self.pool(pool).collect();
        if idx.len() < count {
            return Err(Error::Input(format!(
                "need {count} distinct entities but the {pool:?} pool has {}",
                idx.len()
            )));
        }
        idx.shuffle(rng);
        idx.truncate(count);
        Ok(idx)
    }

    /// A value index different from `value`, uniform over the rest.
    pub fn other_value(&self, value: usize, rng: &mut impl Rng) -> usize {
        let pick = rng.gen_range(0..self.config.n_values - 1);
        if pick >= value {
            pick + 1
        } else {
            pick
        }
    }

    /// Token span asserting "entity has value" in `domain`'s grammar.
    ///
    /// Domain A: `open k.. [fill..] link v close`.
    /// Domain B: `open v link k.. [fill..] close`.
    /// Filler symbols depend only on the key, so rendering is a function.
    pub fn render(&self, key: &[usize], value: usize, domain: Domain) -> Vec<usize> {
        let v = &self.vocab;
        let keys = key.iter().map(|&d| v.key_digit(domain, d));
        let fill_len = match domain {
            Domain::A => self.config.a_filler_len,
            Domain::B => self.config.b_filler_len,
        };
        let seed: usize = key.iter().fold(7, |acc, &d| acc * 31 + d);
        let fillers = (0..fill_len).map(|i| v.filler(domain, (seed + i * 13) % self.config.n_fillers.max(1)));
        let mut out = vec![v.marker(domain, Marker::Open)];
        match domain {
            Domain::A => {
                out.extend(keys);
                out.extend(fillers);
                out.push(v.marker(domain, Marker::Link));
                out.push(v.value(value));
            }
            Domain::B => {
                out.push(v.value(value));
                out.push(v.marker(domain, Marker::Link));
                out.extend(keys);
                out.extend(fillers);
            }
        }
        out.push(v.marker(domain, Marker::Close));
        out
    }

    /// The question tokens `<q> k.. ` for an entity key.
    pub fn question(&self, key: &[usize]) -> Vec<usize> {
        let mut q = vec![crate::model::Control::Question.id()];
        q.extend(key.iter().map(|&d| self.vocab.query_digit(d)));
        q
    }
}

/// A parsed evidence span.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedSpan {
    pub domain: Domain,
    pub key: Vec<usize>,
    pub value: usize,
}

/// Inverse of [`FactWorld::render`]; rejects anything the renderer
/// could not have produced.
pub fn parse_span(vocab: &Vocab, tokens: &[usize]) -> Result<ParsedSpan> {
    let bad = || Error::Input(format!("not a rendered evidence span: {tokens:?}"));
    let first = *tokens.first().ok_or_else(bad)?;
    let domain = vocab.domain_of(first).ok_or_else(bad)?;
    if first != vocab.marker(domain, Marker::Open) || *tokens.last().ok_or_else(bad)? != vocab.marker(domain, Marker::Close) {
        return Err(bad());
    }
    let body = &tokens[1..tokens.len() - 1];
    let take_keys = |s: &[usize]| -> Vec<usize> {
        s.iter()
            .take_while(|&&t| vocab.key_digit_index(domain, t).is_some())
            .map(|&t| vocab.key_digit_index(domain, t).expect("checked"))
            .collect()
    };
    let (key, value, rest) = match domain {
        Domain::A => {
            let key = take_keys(body);
            let after = &body[key.len()..];
            let fill = after.iter().take_while(|&&t| vocab.is_filler(domain, t)).count();
            let tail = &after[fill..];
            if tail.len() != 2 || tail[0] != vocab.marker(domain, Marker::Link) {
                return Err(bad());
            }
            (key, vocab.value_index(tail[1]).ok_or_else(bad)?, &[][..])
        }
        Domain::B => {
            if body.len() < 2 || body[1] != vocab.marker(domain, Marker::Link) {
                return Err(bad());
            }
            let value = vocab.value_index(body[0]).ok_or_else(bad)?;
            let key = take_keys(&body[2..]);
            (key.clone(), value, &body[2 + key.len()..])
        }
    };
    if key.is_empty() || rest.iter().any(|&t| !vocab.is_filler(domain, t)) {
        return Err(bad());
    }
    Ok(ParsedSpan { domain, key, value })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            n_entities: 50,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn same_seed_same_world() {
        assert_eq!(FactWorld::build(&small()).unwrap(), FactWorld::build(&small()).unwrap());
        let other = WorldConfig { seed: 1, ..small() };
        assert_ne!(FactWorld::build(&small()).unwrap().entities(), FactWorld::build(&other).unwrap().entities());
    }

    #[test]
    fn empty_world_is_accepted_but_cannot_supply_entities() {
        let w = FactWorld::build(&WorldConfig {
            n_entities: 0,
            ..small()
        })
        .unwrap();
        assert!(w.entities().is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(w.sample_entities(EntityPool::All, 1, &mut rng).is_err());
    }

    #[test]
    fn insufficient_key_alphabet_is_rejected() {
        let cfg = WorldConfig {
            n_entities: 101,
            key_digits: 2,
            ..small()
        };
        assert!(FactWorld::build(&cfg).is_err());
    }

    #[test]
    fn every_rendering_parses_back() {
        let w = FactWorld::build(&small()).unwrap();
        for e in w.entities() {
            for d in [Domain::A, Domain::B] {
                for value in [e.value, (e.value + 3) % w.config().n_values] {
                    let toks = w.render(&e.key, value, d);
                    assert_eq!(toks.len(), w.config().span_len(d));
                    assert!(toks.iter().all(|&t| w.vocab().domain_of(t) == Some(d) || w.vocab().value_index(t).is_some()));
                    let p = parse_span(w.vocab(), &toks).unwrap();
                    assert_eq!(p, ParsedSpan { domain: d, key: e.key.clone(), value });
                }
            }
        }
    }

    #[test]
    fn other_value_never_returns_input() {
        let w = FactWorld::build(&small()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for v in 0..w.config().n_values {
            for _ in 0..50 {
                assert_ne!(w.other_value(v, &mut rng), v);
            }
        }
    }

    #[test]
    fn malformed_spans_rejected() {
        let w = FactWorld::build(&small()).unwrap();
        let mut t = w.render(&w.entity(0).key, 1, Domain::A);
        t.pop();
        assert!(parse_span(w.vocab(), &t).is_err());
        assert!(parse_span(w.vocab(), &[]).is_err());
    }
}
