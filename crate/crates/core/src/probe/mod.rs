//! Span maps and per-span decomposition of attention-head outputs.
//!
//! At an answer step `t`, a head's output `W_O Σ_j w_tj v_j` splits exactly
//! into one term per position group `C_k`:
//! `u_k = Σ_{j∈C_k} w_tj W_O v_j`. The mean norm `ū_k` of those terms over
//! layers, heads and answer steps measures how much each evidence span
//! feeds the answer, and `|ln(ū_A / ū_B)|` is the imbalance between them.

mod decompose;
mod record;
mod spans;

pub use decompose::{decompose, GroupStats, SiteRecord, RECONSTRUCTION_TOL};
pub use record::{mean_imbalance, mean_matrix, pooled_imbalance, record_run, write_matrix_csv, ProbeRecord};
pub use spans::{Group, SpanMap};
