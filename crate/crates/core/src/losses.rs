//! Fusion loss (pixel + Sobel gradient) and brightness consistency loss.
//!
//! Every norm is a mean over all elements, so loss scales do not depend on
//! image size or channel count.

use std::fmt;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{ensure_same_shape, Tensor};

/// Scalar loss values for one training iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub step: u64,
    pub pixel: f64,
    pub grad: f64,
    pub fus: f64,
    pub bcl: f64,
    pub total: f64,
}

impl LossReport {
    pub const HEADER: &'static str = "step\tpixel\tgrad\tbcl\ttotal";
}

impl fmt::Display for LossReport {
    /// `step TAB pixel TAB grad TAB bcl TAB total`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.8}\t{:.8}\t{:.8}\t{:.8}",
            self.step, self.pixel, self.grad, self.bcl, self.total
        )
    }
}

/// Brings a 1-channel source up to `channels` by replication.
fn broadcast_channels(t: &Tensor, channels: usize) -> Result<Tensor> {
    match t.shape().channels() {
        c if c == channels => Ok(t.detach()),
        1 => t.repeat_channels(channels),
        c => Err(Error::dim("channel", channels, c)),
    }
}

/// Elementwise `max(I_V, I_I)` with the infrared replicated to match.
pub fn max_target(visible: &Tensor, infrared: &Tensor) -> Result<Tensor> {
    let ir = broadcast_channels(infrared, visible.shape().channels())?;
    visible.maximum(&ir)
}

/// `max(|∇I_V|, |∇I_I|)` with the infrared replicated to match.
pub fn gradient_target(visible: &Tensor, infrared: &Tensor) -> Result<Tensor> {
    let ir = broadcast_channels(infrared, visible.shape().channels())?;
    ops::sobel_magnitude(visible).maximum(&ops::sobel_magnitude(&ir))
}

fn mean_abs_to(g: &mut Graph, x: Var, target: Tensor) -> Result<Var> {
    ensure_same_shape(g.value(x).shape(), target.shape())?;
    let t = g.constant(target);
    let d = g.sub(x, t)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}

fn mean_sq_to(g: &mut Graph, x: Var, target: Tensor) -> Result<Var> {
    ensure_same_shape(g.value(x).shape(), target.shape())?;
    let t = g.constant(target);
    let d = g.sub(x, t)?;
    let s = g.square(d);
    Ok(g.mean(s))
}

/// `mean |I_F − max(I_V, I_I)|`
pub fn pixel_loss(g: &mut Graph, fused: Var, visible: &Tensor, infrared: &Tensor) -> Result<Var> {
    ensure_same_shape(g.value(fused).shape(), visible.shape())?;
    let target = max_target(visible, infrared)?;
    mean_abs_to(g, fused, target)
}

/// `mean | |∇I_F| − max(|∇I_V|, |∇I_I|) |`
pub fn gradient_loss(
    g: &mut Graph,
    fused: Var,
    visible: &Tensor,
    infrared: &Tensor,
) -> Result<Var> {
    ensure_same_shape(g.value(fused).shape(), visible.shape())?;
    let target = gradient_target(visible, infrared)?;
    let mag = g.sobel_magnitude(fused);
    mean_abs_to(g, mag, target)
}

/// Pixel and gradient terms plus their unweighted sum.
pub struct FusionLossVars {
    pub pixel: Var,
    pub grad: Var,
    pub total: Var,
}

pub fn fusion_loss(
    g: &mut Graph,
    fused: Var,
    visible: &Tensor,
    infrared: &Tensor,
) -> Result<FusionLossVars> {
    let pixel = pixel_loss(g, fused, visible, infrared)?;
    let grad = gradient_loss(g, fused, visible, infrared)?;
    let total = g.add(pixel, grad)?;
    Ok(FusionLossVars { pixel, grad, total })
}

/// `mean (I'_F − I_F)² + mean (A(I'_F) − A(I_F))²` where `A` is the
/// normalised DFT amplitude. `reference` is treated as a constant.
pub fn brightness_consistency_loss(
    g: &mut Graph,
    fused_jittered: Var,
    reference: &Tensor,
) -> Result<Var> {
    ensure_same_shape(g.value(fused_jittered).shape(), reference.shape())?;
    let spatial = mean_sq_to(g, fused_jittered, reference.detach())?;
    let amp = g.dft2_amplitude(fused_jittered);
    let spectral = mean_sq_to(g, amp, ops::dft2_amplitude(reference))?;
    g.add(spatial, spectral)
}

/// Gradient-free evaluation of the fusion loss: `(pixel, grad, fus)`.
pub fn evaluate_fusion_loss(
    fused: &Tensor,
    visible: &Tensor,
    infrared: &Tensor,
) -> Result<(f64, f64, f64)> {
    let mut g = Graph::new();
    let f = g.constant(fused.detach());
    let l = fusion_loss(&mut g, f, visible, infrared)?;
    Ok((g.scalar(l.pixel), g.scalar(l.grad), g.scalar(l.total)))
}

pub fn evaluate_bcl(fused_jittered: &Tensor, reference: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let f = g.constant(fused_jittered.detach());
    let l = brightness_consistency_loss(&mut g, f, reference)?;
    Ok(g.scalar(l))
}
