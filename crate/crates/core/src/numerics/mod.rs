//! Dense tensors, reverse-mode autodiff and the Adam optimizer.
//!
//! Everything here is deterministic and single-threaded per [`Tape`].
//! Generic over [`Real`] so the same model code runs in `f32` for
//! training and in `f64` when checking gradients.

mod adam;
mod softmax;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use softmax::{softmax, MASK_SENTINEL};
pub use tape::{
    AttentionHook, AttnObservation, AttnSite, Gradients, Segment, Tape, Var, ROW_SUM_TOL,
};
pub use tensor::{Real, Tensor};


/// Global L2 norm across a set of tensors.
pub fn global_norm<'a, S: Real>(tensors: impl IntoIterator<Item = &'a Tensor<S>>) -> f64 {
    tensors
        .into_iter()
        .flat_map(|t| t.data().iter())
        .map(|x| x.to_f64().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Rescale tensors so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(tensors: &mut [Tensor<f32>], max_norm: f64) -> f64 {
    let norm = global_norm(tensors.iter());
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for t in tensors.iter_mut() {
            for x in t.data_mut() {
                *x = (*x as f64 * factor) as f32;
            }
        }
    }
    norm
}
