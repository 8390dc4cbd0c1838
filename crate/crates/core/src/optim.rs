//! Adam with bias correction, one state per parameter group.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    /// First moments, one buffer per parameter.
    pub m: Vec<Vec<f32>>,
    /// Second moments.
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let sizes: Vec<usize> = params.into_iter().map(Tensor::numel).collect();
        AdamState {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// Applies one Adam update to `params` in place.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&[f32]],
    state: &mut AdamState,
    lr: f32,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len()
    {
        return Err(Error::dim(
            "parameter group",
            params.len(),
            format!("{} grads, {} moments", grads.len(), state.m.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.numel() != g.len() || p.numel() != state.m[i].len() || p.numel() != state.v[i].len() {
            return Err(Error::dim("parameter", p.numel(), g.len()));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    let lr = lr as f64;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, x) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j] as f64;
            let mj = BETA1 * m[j] as f64 + (1.0 - BETA1) * gj;
            let vj = BETA2 * v[j] as f64 + (1.0 - BETA2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let update = lr * (mj / bc1) / ((vj / bc2).sqrt() + EPSILON);
            *x = (*x as f64 - update) as f32;
        }
    }
    Ok(())
}
