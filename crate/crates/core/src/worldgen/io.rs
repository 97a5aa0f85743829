//! JSONL records with tokens written as symbol strings.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::corpus::{InstructionItem, ItemKind};
use super::instance::{Condition, ConflictInstance, EvidenceSpan, Order, PromptMode};
use crate::error::{Error, Result};
use crate::model::{Domain, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanRecord {
    pub domain: Domain,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub id: String,
    pub condition: Condition,
    pub conflict: bool,
    pub order: Order,
    pub spans: Vec<SpanRecord>,
    pub question: Vec<String>,
    pub answer: String,
    pub conflicting_answer: String,
    pub prompt_mode: PromptMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemRecord {
    pub id: String,
    pub domain: Domain,
    pub kind: ItemKind,
    pub spans: Vec<Vec<String>>,
    pub question: Vec<String>,
    pub response: Vec<String>,
    pub prompt_mode: PromptMode,
}

fn sym(vocab: &Vocab, id: usize) -> Result<String> {
    vocab
        .symbol(id)
        .map(str::to_string)
        .ok_or_else(|| Error::Input(format!("token id {id} is outside the vocabulary")))
}

impl InstanceRecord {
    pub fn from_instance(inst: &ConflictInstance, vocab: &Vocab) -> Result<Self> {
        Ok(InstanceRecord {
            id: inst.id.clone(),
            condition: inst.condition,
            conflict: inst.conflict,
            order: inst.order,
            spans: inst
                .spans
                .iter()
                .map(|s| {
                    Ok(SpanRecord {
                        domain: s.domain,
                        tokens: vocab.decode(&s.tokens)?,
                    })
                })
                .collect::<Result<_>>()?,
            question: vocab.decode(&inst.question)?,
            answer: sym(vocab, inst.answer)?,
            conflicting_answer: sym(vocab, inst.conflicting_answer)?,
            prompt_mode: inst.prompt_mode,
        })
    }

    pub fn to_instance(&self, vocab: &Vocab) -> Result<ConflictInstance> {
        let spans: Vec<EvidenceSpan> = self
            .spans
            .iter()
            .map(|s| {
                Ok(EvidenceSpan {
                    domain: s.domain,
                    tokens: vocab.encode(&s.tokens)?,
                })
            })
            .collect::<Result<_>>()?;
        let spans: [EvidenceSpan; 2] = spans
            .try_into()
            .map_err(|v: Vec<_>| Error::Input(format!("instance {} has {} spans, expected 2", self.id, v.len())))?;
        Ok(ConflictInstance {
            id: self.id.clone(),
            condition: self.condition,
            conflict: self.conflict,
            order: self.order,
            spans,
            question: vocab.encode(&self.question)?,
            answer: vocab.id(&self.answer)?,
            conflicting_answer: vocab.id(&self.conflicting_answer)?,
            prompt_mode: self.prompt_mode,
        })
    }
}

impl ItemRecord {
    pub fn from_item(item: &InstructionItem, vocab: &Vocab) -> Result<Self> {
        Ok(ItemRecord {
            id: item.id.clone(),
            domain: item.domain,
            kind: item.kind,
            spans: item.spans.iter().map(|s| vocab.decode(s)).collect::<Result<_>>()?,
            question: vocab.decode(&item.question)?,
            response: vocab.decode(&item.response)?,
            prompt_mode: item.prompt_mode,
        })
    }

    pub fn to_item(&self, vocab: &Vocab) -> Result<InstructionItem> {
        let spans: Vec<Vec<usize>> = self.spans.iter().map(|s| vocab.encode(s)).collect::<Result<_>>()?;
        let spans: [Vec<usize>; 2] = spans
            .try_into()
            .map_err(|v: Vec<_>| Error::Input(format!("item {} has {} spans, expected 2", self.id, v.len())))?;
        Ok(InstructionItem {
            id: self.id.clone(),
            domain: self.domain,
            kind: self.kind,
            spans,
            question: vocab.encode(&self.question)?,
            response: vocab.encode(&self.response)?,
            prompt_mode: self.prompt_mode,
        })
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(mut w: impl Write, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::Format(format!("write failed: {e}")))?;
    }
    Ok(())
}

/// Reads one JSON object per non-empty line; errors name the line number.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(r: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn write_instances(w: impl Write, insts: &[ConflictInstance], vocab: &Vocab) -> Result<()> {
    let recs: Vec<_> = insts.iter().map(|i| InstanceRecord::from_instance(i, vocab)).collect::<Result<_>>()?;
    write_jsonl(w, &recs)
}

pub fn read_instances(r: impl BufRead, vocab: &Vocab) -> Result<Vec<ConflictInstance>> {
    read_jsonl::<InstanceRecord>(r)?.iter().map(|r| r.to_instance(vocab)).collect()
}

pub fn write_items(w: impl Write, items: &[InstructionItem], vocab: &Vocab) -> Result<()> {
    let recs: Vec<_> = items.iter().map(|i| ItemRecord::from_item(i, vocab)).collect::<Result<_>>()?;
    write_jsonl(w, &recs)
}

pub fn read_items(r: impl BufRead, vocab: &Vocab) -> Result<Vec<InstructionItem>> {
    read_jsonl::<ItemRecord>(r)?.iter().map(|r| r.to_item(vocab)).collect()
}
