//! Tiny pre-norm decoder-only transformer with attention hooks.

mod forward;
mod generate;
mod hooks;
mod params;
mod vocab;

pub use forward::{
    batch_loss, batch_loss_value, bind, forward, logits_graph, loss_and_grads, BoundParams, LossRow,
};
pub use generate::{argmax, generate_greedy};
pub use hooks::{HeadObservation, HookSet, Observer, Rewriter, SiteKey};
pub use params::{init_params, BlockParams, ModelConfig, ModelParams};
pub use vocab::{AlphabetSizes, Control, Domain, Marker, Partition, Vocab};
