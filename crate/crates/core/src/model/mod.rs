//! The fusion network: shared encoder → gate on visible features →
//! concatenation with infrared features → decoder.

pub mod backbone;
pub mod bag;

pub use backbone::{BackboneParams, BackboneVars};
pub use bag::{BagParams, BagVars, GateDecision, GateVars};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel {
    pub backbone: BackboneParams,
    pub bag: BagParams,
    /// Ablation: normalise every visible channel instead of gating.
    pub disable_bag: bool,
}

/// Which parameter groups are inserted as trainable leaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub backbone: bool,
    pub bag: bool,
}

impl Trainable {
    pub const NONE: Trainable = Trainable {
        backbone: false,
        bag: false,
    };
    pub const BACKBONE: Trainable = Trainable {
        backbone: true,
        bag: false,
    };
    pub const BAG: Trainable = Trainable {
        backbone: false,
        bag: true,
    };
    pub const ALL: Trainable = Trainable {
        backbone: true,
        bag: true,
    };
}

/// Graph handles produced by [`FusionModel::forward`].
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub fused: Var,
    pub gate: GateVars,
    pub backbone: BackboneVars,
    pub bag: BagVars,
}

impl FusionModel {
    pub fn init(
        seed: u64,
        channels: usize,
        reduction: usize,
        eps_gate: f32,
        eps_norm: f32,
        disable_bag: bool,
    ) -> Result<Self> {
        Ok(FusionModel {
            backbone: BackboneParams::init(seed, channels)?,
            bag: BagParams::init(seed, channels, reduction, eps_gate, eps_norm)?,
            disable_bag,
        })
    }

    pub fn channels(&self) -> usize {
        self.backbone.channels
    }

    /// `(name, tensor)` for every parameter, backbone group first.
    pub fn named_parameters(&self) -> Vec<(&'static str, &Tensor)> {
        BackboneParams::NAMES
            .into_iter()
            .zip(self.backbone.tensors())
            .chain(BagParams::NAMES.into_iter().zip(self.bag.tensors()))
            .collect()
    }

    /// Records a forward pass. `visible` is `(B, 3, H, W)`; `infrared` is
    /// `(B, 1, H, W)` and is replicated to three channels for the shared
    /// encoder.
    pub fn forward(
        &self,
        g: &mut Graph,
        visible: &Tensor,
        infrared: &Tensor,
        trainable: Trainable,
    ) -> Result<ForwardVars> {
        let (vs, is) = (visible.shape(), infrared.shape());
        if vs.batch() != is.batch() {
            return Err(Error::dim("batch", vs.batch(), is.batch()));
        }
        if (vs.height(), vs.width()) != (is.height(), is.width()) {
            return Err(Error::Data(format!(
                "visible is {}x{} but infrared is {}x{}",
                vs.width(),
                vs.height(),
                is.width(),
                is.height()
            )));
        }
        let infrared = match is.channels() {
            1 => infrared.repeat_channels(backbone::IMAGE_CHANNELS)?,
            3 => infrared.detach(),
            c => return Err(Error::dim("channel", "1 (infrared)", c)),
        };
        let bb = self.backbone.insert(g, trainable.backbone);
        let bag_vars = self.bag.insert(g, trainable.bag);

        let vis = g.constant(visible.detach());
        let ir = g.constant(infrared);
        let x_v = backbone::encode(g, vis, &bb)?;
        let x_i = backbone::encode(g, ir, &bb)?;
        let (x_g, gate) = bag::bag_forward(g, x_v, &self.bag, &bag_vars, self.disable_bag)?;
        let joined = backbone::fuse_features(g, x_g, x_i)?;
        let fused = backbone::decode(g, joined, &bb)?;
        Ok(ForwardVars {
            fused,
            gate,
            backbone: bb,
            bag: bag_vars,
        })
    }

    /// Inference: raw fused image plus the gate decision.
    pub fn fuse(&self, visible: &Tensor, infrared: &Tensor) -> Result<(Tensor, GateDecision)> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, visible, infrared, Trainable::NONE)?;
        Ok((g.value(f.fused).detach(), f.gate.decision(&g)))
    }
}
