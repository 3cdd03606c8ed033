//! Bias-corrected Adam with additive weight decay.

use ndarray::{ArrayD, Zip};

use crate::model::{NamedArray, NamedArrayMut};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// First and second moment estimates for every trainable array.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    first: Vec<ArrayD<f64>>,
    second: Vec<ArrayD<f64>>,
}

impl AdamState {
    pub fn new(params: &[NamedArrayMut<'_>]) -> Self {
        let zeros: Vec<ArrayD<f64>> = params.iter().map(|p| ArrayD::zeros(p.data.raw_dim())).collect();
        AdamState {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One Adam update. Arrays flagged `decays` get `weight_decay · param` added
/// to their gradient first.
pub fn adam_step(
    params: &mut [NamedArrayMut<'_>],
    grads: &[NamedArray<'_>],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Config(format!(
            "{} parameter arrays, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.name != g.name || p.data.shape() != g.data.shape() {
            return Err(Error::Config(format!(
                "gradient {} does not match parameter {}",
                g.name, p.name
            )));
        }
        if g.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient of {}", g.name),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let (b1, b2, lr, eps) = (config.beta1, config.beta2, config.learning_rate, config.eps);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        let decay = if p.decays { config.weight_decay } else { 0.0 };
        Zip::from(&mut p.data)
            .and(&g.data)
            .and(m)
            .and(v)
            .for_each(|w, &g, m, v| {
                let g = g + decay * *w;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
    }
    Ok(())
}
