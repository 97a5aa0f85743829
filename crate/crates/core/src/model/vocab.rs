use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which alphabet a token belongs to. Every token has exactly one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// BOS, EOS, SEP, CONFLICT and the prompt/answer markers.
    Control,
    /// Entity-key digits used by questions; shared by both domains.
    Query,
    DomainA,
    DomainB,
    /// Answer values; shared by both domains.
    Answer,
}

/// Domain of an evidence span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub fn other(self) -> Domain {
        match self {
            Domain::A => Domain::B,
            Domain::B => Domain::A,
        }
    }

    pub fn partition(self) -> Partition {
        match self {
            Domain::A => Partition::DomainA,
            Domain::B => Partition::DomainB,
        }
    }
}

/// Reserved control tokens, in vocabulary order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Bos,
    Eos,
    Sep,
    Conflict,
    Question,
    Answer,
    Report,
    AskSame,
    Yes,
    No,
    ReplyBoth,
}

impl Control {
    pub const ALL: [Control; 11] = [
        Control::Bos,
        Control::Eos,
        Control::Sep,
        Control::Conflict,
        Control::Question,
        Control::Answer,
        Control::Report,
        Control::AskSame,
        Control::Yes,
        Control::No,
        Control::ReplyBoth,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Control::Bos => "<bos>",
            Control::Eos => "<eos>",
            Control::Sep => "<sep>",
            Control::Conflict => "<conflict>",
            Control::Question => "<q>",
            Control::Answer => "<ans>",
            Control::Report => "<report>",
            Control::AskSame => "<same?>",
            Control::Yes => "<yes>",
            Control::No => "<no>",
            Control::ReplyBoth => "<reply-both>",
        }
    }

    /// Token id; control tokens occupy the first ids.
    pub fn id(self) -> usize {
        Control::ALL.iter().position(|&c| c == self).expect("listed")
    }
}

/// Structural tokens of a domain's span grammar.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Marker {
    Open,
    Link,
    Close,
}

/// Sizes of the non-control alphabets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlphabetSizes {
    /// Number of distinct key digits (per domain, and for queries).
    pub key_base: usize,
    /// Number of answer values.
    pub n_values: usize,
    /// Distinct filler symbols per domain.
    pub n_fillers: usize,
}

/// Ordered symbol table partitioned into disjoint alphabets.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    sizes: AlphabetSizes,
    symbols: Vec<String>,
    partitions: Vec<Partition>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(sizes: AlphabetSizes) -> Result<Self> {
        if sizes.key_base == 0 || sizes.n_values < 2 {
            return Err(Error::Config(format!(
                "alphabets need key_base >= 1 and n_values >= 2, got {sizes:?}"
            )));
        }
        let mut symbols = Vec::new();
        let mut partitions = Vec::new();
        let mut add = |s: String, p: Partition| {
            symbols.push(s);
            partitions.push(p);
        };
        for c in Control::ALL {
            add(c.symbol().to_string(), Partition::Control);
        }
        for d in 0..sizes.key_base {
            add(format!("k{d}"), Partition::Query);
        }
        for (dom, prefix) in [(Domain::A, "a"), (Domain::B, "b")] {
            let p = dom.partition();
            for m in ["open", "link", "close"] {
                add(format!("{prefix}:{m}"), p);
            }
            for d in 0..sizes.key_base {
                add(format!("{prefix}{d}"), p);
            }
            for f in 0..sizes.n_fillers {
                add(format!("{prefix}~{f}"), p);
            }
        }
        for v in 0..sizes.n_values {
            add(format!("v{v}"), Partition::Answer);
        }
        let index = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Vocab {
            sizes,
            symbols,
            partitions,
            index,
        })
    }

    pub fn sizes(&self) -> AlphabetSizes {
        self.sizes
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn id(&self, symbol: &str) -> Result<usize> {
        self.index
            .get(symbol)
            .copied()
            .ok_or_else(|| Error::Input(format!("unknown symbol `{symbol}`")))
    }

    pub fn partition(&self, id: usize) -> Option<Partition> {
        self.partitions.get(id).copied()
    }

    pub fn control(&self, c: Control) -> usize {
        c.id()
    }

    fn domain_base(&self, d: Domain) -> usize {
        let after_query = Control::ALL.len() + self.sizes.key_base;
        let per_domain = 3 + self.sizes.key_base + self.sizes.n_fillers;
        match d {
            Domain::A => after_query,
            Domain::B => after_query + per_domain,
        }
    }

    pub fn marker(&self, d: Domain, m: Marker) -> usize {
        self.domain_base(d)
            + match m {
                Marker::Open => 0,
                Marker::Link => 1,
                Marker::Close => 2,
            }
    }

    pub fn key_digit(&self, d: Domain, digit: usize) -> usize {
        debug_assert!(digit < self.sizes.key_base);
        self.domain_base(d) + 3 + digit
    }

    pub fn filler(&self, d: Domain, f: usize) -> usize {
        debug_assert!(f < self.sizes.n_fillers);
        self.domain_base(d) + 3 + self.sizes.key_base + f
    }

    pub fn query_digit(&self, digit: usize) -> usize {
        debug_assert!(digit < self.sizes.key_base);
        Control::ALL.len() + digit
    }

    pub fn value(&self, v: usize) -> usize {
        debug_assert!(v < self.sizes.n_values);
        self.domain_base(Domain::B) + 3 + self.sizes.key_base + self.sizes.n_fillers + v
    }

    /// Inverse of [`Vocab::value`].
    pub fn value_index(&self, id: usize) -> Option<usize> {
        (self.partition(id)? == Partition::Answer).then(|| id - self.value(0))
    }

    /// Inverse of [`Vocab::key_digit`].
    pub fn key_digit_index(&self, d: Domain, id: usize) -> Option<usize> {
        let lo = self.key_digit(d, 0);
        (lo..lo + self.sizes.key_base).contains(&id).then(|| id - lo)
    }

    pub fn query_digit_index(&self, id: usize) -> Option<usize> {
        (self.partition(id)? == Partition::Query).then(|| id - self.query_digit(0))
    }

    pub fn is_filler(&self, d: Domain, id: usize) -> bool {
        let lo = self.domain_base(d) + 3 + self.sizes.key_base;
        (lo..lo + self.sizes.n_fillers).contains(&id)
    }

    /// Domain whose alphabet contains `id`, if any.
    pub fn domain_of(&self, id: usize) -> Option<Domain> {
        match self.partition(id)? {
            Partition::DomainA => Some(Domain::A),
            Partition::DomainB => Some(Domain::B),
            _ => None,
        }
    }

    pub fn encode(&self, symbols: &[String]) -> Result<Vec<usize>> {
        symbols.iter().map(|s| self.id(s)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&i| {
                self.symbol(i)
                    .map(str::to_string)
                    .ok_or_else(|| Error::Input(format!("token id {i} out of vocabulary")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::new(AlphabetSizes {
            key_base: 4,
            n_values: 5,
            n_fillers: 2,
        })
        .unwrap()
    }

    #[test]
    fn partitions_are_disjoint_and_total() {
        let v = vocab();
        assert_eq!(v.len(), 11 + 4 + 2 * (3 + 4 + 2) + 5);
        let mut seen = std::collections::HashSet::new();
        for id in 0..v.len() {
            assert!(v.partition(id).is_some());
            assert!(seen.insert(v.symbol(id).unwrap().to_string()));
        }
        let conflicts: Vec<_> = (0..v.len()).filter(|&i| v.symbol(i) == Some("<conflict>")).collect();
        assert_eq!(conflicts, vec![Control::Conflict.id()]);
    }

    #[test]
    fn accessors_land_in_their_partition() {
        let v = vocab();
        for d in [Domain::A, Domain::B] {
            for k in 0..4 {
                let id = v.key_digit(d, k);
                assert_eq!(v.domain_of(id), Some(d));
                assert_eq!(v.key_digit_index(d, id), Some(k));
                assert_eq!(v.key_digit_index(d.other(), id), None);
            }
            for f in 0..2 {
                assert!(v.is_filler(d, v.filler(d, f)));
            }
            assert_eq!(v.partition(v.marker(d, Marker::Close)), Some(d.partition()));
        }
        for x in 0..5 {
            assert_eq!(v.partition(v.value(x)), Some(Partition::Answer));
            assert_eq!(v.value_index(v.value(x)), Some(x));
        }
        assert_eq!(v.value(4), v.len() - 1);
        assert_eq!(v.partition(v.query_digit(3)), Some(Partition::Query));
    }

    #[test]
    fn symbols_round_trip() {
        let v = vocab();
        let ids: Vec<usize> = (0..v.len()).collect();
        assert_eq!(v.encode(&v.decode(&ids).unwrap()).unwrap(), ids);
        assert!(v.id("nope").is_err());
    }
}
