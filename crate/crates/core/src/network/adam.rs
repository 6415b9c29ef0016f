use crate::error::{invalid, Result};

use super::{Architecture, Weights};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Weights,
    pub v: Weights,
}

impl AdamState {
    pub fn new(arch: &Architecture) -> Self {
        Self::zeros_like(&Weights::zeros(arch))
    }

    pub fn zeros_like(weights: &Weights) -> Self {
        let mut m = weights.clone();
        m.scale(0.0);
        Self {
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut Weights, grads: &Weights, state: &mut AdamState, lr: f64) -> Result<()> {
    let shapes = params.shapes();
    if grads.shapes() != shapes || state.m.shapes() != shapes || state.v.shapes() != shapes {
        return Err(invalid("optimizer state, gradients and parameters differ in shape"));
    }
    state.step += 1;
    let bc1 = 1.0 - BETA1.powi(state.step as i32);
    let bc2 = 1.0 - BETA2.powi(state.step as i32);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut().into_iter().zip(state.v.tensors_mut()));
    for ((mut p, g), (mut m, mut v)) in tensors {
        ndarray::Zip::from(&mut p)
            .and(&g)
            .and(&mut m)
            .and(&mut v)
            .for_each(|p, &g, m, v| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
            });
    }
    Ok(())
}
