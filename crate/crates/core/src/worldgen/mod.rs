//! Synthetic fact worlds, conflict evaluation sets, instruction corpora and
//! the two corpus mixers.

mod corpus;
mod instance;
mod io;
mod world;

pub use corpus::{
    build_mixture, gen_instruction_corpus, mix_dataset_level, mix_instance_level, single_sequence, CorpusSpec,
    InstanceOrder, InstructionItem, ItemKind, MixMode, TrainSequence, MAX_CONFLICT_FRACTION,
};
pub use instance::{
    gen_eval_set, gold_response, render_prompt, Condition, ConflictInstance, EvalSetSpec, EvidenceSpan, Order,
    PromptMode,
};
pub use io::{
    read_instances, read_items, read_jsonl, write_instances, write_items, write_jsonl, InstanceRecord, ItemRecord,
    SpanRecord,
};
pub use world::{parse_span, Entity, EntityPool, FactWorld, ParsedSpan, WorldConfig};
