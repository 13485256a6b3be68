use crate::error::{DiffError, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub base_lr: f64,
    /// Linear warmup length in optimizer steps; 0 disables warmup.
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rescale the joint gradient to at most this L2 norm before the update.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            base_lr: 5e-3,
            warmup_steps: 100,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_grad_norm: None,
        }
    }
}

/// Learning rate at 1-based optimizer step `step`.
pub fn effective_lr(base_lr: f64, step: u64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 {
        base_lr
    } else {
        base_lr * (step as f64 / warmup_steps as f64).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub step: u64,
    pub first_moment: Vec<Tensor<F>>,
    pub second_moment: Vec<Tensor<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &[Tensor<F>]) -> Self {
        Self {
            step: 0,
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// L2 norm of all present gradients taken together.
pub fn global_norm<F: Real>(grads: &[Option<&Tensor<F>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// One Adam update with linear warmup, optional global-norm clipping and
/// decoupled weight decay on the parameters flagged in `decay`. Parameters
/// whose gradient is `None` are left untouched. Returns the learning rate used.
pub fn adam_step<F: Real>(
    params: &mut [Tensor<F>],
    grads: &[Option<&Tensor<F>>],
    state: &mut AdamState<F>,
    decay: &[bool],
    cfg: &AdamConfig,
) -> Result<f64> {
    if grads.len() != params.len()
        || decay.len() != params.len()
        || state.first_moment.len() != params.len()
    {
        return Err(DiffError::InvalidArgument(format!(
            "adam_step: {} params, {} grads, {} decay flags, {} moments",
            params.len(),
            grads.len(),
            decay.len(),
            state.first_moment.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        let mismatch = |t: &Tensor<F>| t.shape() != p.shape();
        if grads[i].is_some_and(mismatch)
            || mismatch(&state.first_moment[i])
            || mismatch(&state.second_moment[i])
        {
            return Err(DiffError::Shape {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: grads[i].map(|g| g.shape().to_vec()).unwrap_or_default(),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let lr = effective_lr(cfg.base_lr, state.step, cfg.warmup_steps);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 / (1.0 - b1.powi(t));
    let c2 = 1.0 / (1.0 - b2.powi(t));
    let (fb1, fb2) = (F::from_f64(b1), F::from_f64(b2));
    let (fa1, fa2) = (F::from_f64(1.0 - b1), F::from_f64(1.0 - b2));
    let (fc1, fc2) = (F::from_f64(c1), F::from_f64(c2));
    let (flr, feps) = (F::from_f64(lr), F::from_f64(cfg.epsilon));
    let shrink = F::from_f64(1.0 - lr * cfg.weight_decay);
    let scale = match cfg.max_grad_norm {
        Some(max) => {
            let norm = global_norm(grads);
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    let fscale = F::from_f64(scale);

    for (i, p) in params.iter_mut().enumerate() {
        let Some(g) = grads[i] else { continue };
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j] * fscale;
            m[j] = fb1 * m[j] + fa1 * gj;
            v[j] = fb2 * v[j] + fa2 * gj * gj;
            if decay[i] {
                *w *= shrink;
            }
            *w -= flr * (m[j] * fc1) / ((v[j] * fc2).sqrt() + feps);
        }
    }
    Ok(lr)
}
