use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Adam hyperparameters. `weight_decay` is applied decoupled (AdamW style).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments per parameter, plus the step counter.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn for_shapes<'a>(sizes: impl IntoIterator<Item = &'a Tensor<f32>>) -> Self {
        let (m, v) = sizes
            .into_iter()
            .map(|t| (vec![0.0; t.numel()], vec![0.0; t.numel()]))
            .unzip();
        AdamState { step: 0, m, v }
    }
}

/// One bias-corrected Adam update over named parameters.
///
/// All gradients are validated before any parameter is touched, so a
/// non-finite gradient leaves params and state unchanged.
pub fn adam_step(
    params: &mut [(String, &mut Tensor<f32>)],
    grads: &[Tensor<f32>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::Input(format!(
            "adam_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter `{name}`")));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((_, p), g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = gi as f64;
            let m_new = cfg.beta1 * *mi as f64 + (1.0 - cfg.beta1) * gi;
            let v_new = cfg.beta2 * *vi as f64 + (1.0 - cfg.beta2) * gi * gi;
            *mi = m_new as f32;
            *vi = v_new as f32;
            let m_hat = m_new / bc1;
            let v_hat = v_new / bc2;
            let mut wf = *w as f64;
            wf -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * wf);
            *w = wf as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f32) -> Tensor<f32> {
        Tensor::new(vec![1], vec![value]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut w = Tensor::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap();
        let before = w.clone();
        let mut st = AdamState::for_shapes([&w]);
        let g = Tensor::zeros(vec![3]);
        adam_step(&mut [("w".into(), &mut w)], &[g], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(w, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = 1, v̂ = 1 after bias correction, so Δw = -lr / (1 + eps).
        let mut w = single(0.0);
        let mut st = AdamState::for_shapes([&w]);
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        adam_step(&mut [("w".into(), &mut w)], &[single(1.0)], &mut st, &cfg).unwrap();
        assert!((w.data()[0] + 0.01).abs() < 1e-7, "{}", w.data()[0]);
    }

    #[test]
    fn two_steps_descend_quadratic() {
        // loss = (w - 3)^2, gradient 2(w - 3)
        let loss = |w: f32| (w - 3.0).powi(2);
        let mut w = single(0.0);
        let mut st = AdamState::for_shapes([&w]);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut prev = loss(w.data()[0]);
        for _ in 0..2 {
            let g = single(2.0 * (w.data()[0] - 3.0));
            adam_step(&mut [("w".into(), &mut w)], &[g], &mut st, &cfg).unwrap();
            let now = loss(w.data()[0]);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut w = single(1.0);
        let mut st = AdamState::for_shapes([&w]);
        let err = adam_step(
            &mut [("blocks.0.wq".into(), &mut w)],
            &[single(f32::NAN)],
            &mut st,
            &AdamConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("blocks.0.wq"));
        assert_eq!(st.step, 0);
        assert_eq!(w.data()[0], 1.0);
    }
}
