//! Alternating two-stage optimisation.
//!
//! Each iteration runs, on the same batch:
//!
//! 1. **Stage 1**: the clean pair goes through the network with the gate
//!    parameters frozen; the fusion loss updates the backbone.
//! 2. **Stage 2**: the visible images are brightness-jittered; with the
//!    backbone frozen, the brightness consistency loss against the (detached)
//!    clean fusion updates the gate parameters only.
//!
//! The ablation switches replace stage 2's loss with the fusion loss on the
//! jittered pair (`disable_bcl`), or collapse both stages into one joint step
//! over clean and jittered inputs that updates everything (`disable_alternation`).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Graph;
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::imageio::{brightness_jitter, ImagePair};
use crate::losses::{brightness_consistency_loss, fusion_loss, LossReport};
use crate::model::bag::DEFAULT_REDUCTION;
use crate::model::{ForwardVars, FusionModel, Trainable};
use crate::optim::{adam_step, AdamState};
use crate::tensor::Tensor;

/// A stacked mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `(B, 3, H, W)`
    pub visible: Tensor,
    /// `(B, 1, H, W)`
    pub infrared: Tensor,
}

impl Batch {
    pub fn from_pairs(pairs: &[&ImagePair]) -> Result<Self> {
        let vis: Vec<&Tensor> = pairs.iter().map(|p| &p.visible).collect();
        let ir: Vec<&Tensor> = pairs.iter().map(|p| &p.infrared).collect();
        Ok(Batch {
            visible: Tensor::stack(&vis)?,
            infrared: Tensor::stack(&ir)?,
        })
    }

    pub fn len(&self) -> usize {
        self.visible.shape().batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Visible images jittered with one gain per batch item (gamma 1).
    pub fn jittered_visible(&self, gains: &[f32]) -> Result<Tensor> {
        if gains.len() != self.len() {
            return Err(Error::dim("batch", self.len(), gains.len()));
        }
        let items = (0..self.len())
            .map(|n| brightness_jitter(&self.visible.batch_item(n), gains[n], 1.0))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&items.iter().collect::<Vec<_>>())
    }
}

/// Optimiser state for both parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub backbone: AdamState,
    pub bag: AdamState,
}

impl Optimizers {
    pub fn new(model: &FusionModel) -> Self {
        Optimizers {
            backbone: AdamState::new(model.backbone.tensors()),
            bag: AdamState::new(model.bag.tensors()),
        }
    }
}

fn update_backbone(
    model: &mut FusionModel,
    opt: &mut AdamState,
    g: &Graph,
    f: &ForwardVars,
    lr: f32,
) -> Result<()> {
    let grads = grads_of(g, &f.backbone.0)?;
    let grads: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
    adam_step(&mut model.backbone.tensors_mut(), &grads, opt, lr)
}

fn update_bag(
    model: &mut FusionModel,
    opt: &mut AdamState,
    g: &Graph,
    f: &ForwardVars,
    lr: f32,
) -> Result<()> {
    let grads = grads_of(g, &f.bag.0)?;
    let grads: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
    adam_step(&mut model.bag.tensors_mut(), &grads, opt, lr)
}

fn grads_of(g: &Graph, vars: &[crate::autograd::Var]) -> Result<Vec<Vec<f32>>> {
    vars.iter()
        .map(|&v| {
            g.grad(v)
                .map(<[f32]>::to_vec)
                .ok_or_else(|| Error::Contract("parameter has no gradient".into()))
        })
        .collect()
}

/// Clean-pair fusion loss; Adam on the backbone group only.
pub fn train_stage1_step(
    model: &mut FusionModel,
    opt: &mut Optimizers,
    batch: &Batch,
    lr: f32,
) -> Result<LossReport> {
    let mut g = Graph::new();
    let f = model.forward(&mut g, &batch.visible, &batch.infrared, Trainable::BACKBONE)?;
    let loss = fusion_loss(&mut g, f.fused, &batch.visible, &batch.infrared)?;
    let report = LossReport {
        pixel: g.scalar(loss.pixel),
        grad: g.scalar(loss.grad),
        fus: g.scalar(loss.total),
        total: g.scalar(loss.total),
        ..LossReport::default()
    };
    g.backward(loss.total)?;
    update_backbone(model, &mut opt.backbone, &g, &f, lr)?;
    Ok(report)
}

/// Jittered-pair step; Adam on the gate group only.
///
/// The reference fusion is recomputed from the clean pair with the current
/// weights and treated as a constant. With `use_fusion_loss` the objective is
/// the fusion loss on the jittered pair instead of the consistency loss; the
/// returned `bcl` field carries whichever objective was optimised.
pub fn train_stage2_step(
    model: &mut FusionModel,
    opt: &mut Optimizers,
    batch: &Batch,
    gains: &[f32],
    lr: f32,
    use_fusion_loss: bool,
) -> Result<LossReport> {
    let jittered = batch.jittered_visible(gains)?;
    let mut g = Graph::new();
    let f = model.forward(&mut g, &jittered, &batch.infrared, Trainable::BAG)?;
    let loss = if use_fusion_loss {
        fusion_loss(&mut g, f.fused, &jittered, &batch.infrared)?.total
    } else {
        let (reference, _) = model.fuse(&batch.visible, &batch.infrared)?;
        brightness_consistency_loss(&mut g, f.fused, &reference)?
    };
    let bcl = g.scalar(loss);
    g.backward(loss)?;
    update_bag(model, &mut opt.bag, &g, &f, lr)?;
    Ok(LossReport {
        bcl,
        total: bcl,
        ..LossReport::default()
    })
}

/// Joint step without alternation: fusion loss on the clean pair plus
/// consistency loss on the jittered pair, all parameters updated.
pub fn train_joint_step(
    model: &mut FusionModel,
    opt: &mut Optimizers,
    batch: &Batch,
    gains: &[f32],
    lr: f32,
) -> Result<LossReport> {
    let jittered = batch.jittered_visible(gains)?;
    let mut g = Graph::new();
    let clean = model.forward(&mut g, &batch.visible, &batch.infrared, Trainable::ALL)?;
    let fus = fusion_loss(&mut g, clean.fused, &batch.visible, &batch.infrared)?;
    let reference = g.value(clean.fused).detach();
    let jit = model.forward(&mut g, &jittered, &batch.infrared, Trainable::ALL)?;
    let bcl = brightness_consistency_loss(&mut g, jit.fused, &reference)?;
    let total = g.add(fus.total, bcl)?;
    let report = LossReport {
        pixel: g.scalar(fus.pixel),
        grad: g.scalar(fus.grad),
        fus: g.scalar(fus.total),
        bcl: g.scalar(bcl),
        total: g.scalar(total),
        ..LossReport::default()
    };
    g.backward(total)?;

    let sum_grads =
        |a: &[crate::autograd::Var], b: &[crate::autograd::Var]| -> Result<Vec<Vec<f32>>> {
            let (ga, gb) = (grads_of(&g, a)?, grads_of(&g, b)?);
            Ok(ga
                .into_iter()
                .zip(gb)
                .map(|(x, y)| x.iter().zip(&y).map(|(p, q)| p + q).collect())
                .collect())
        };
    let bb = sum_grads(&clean.backbone.0, &jit.backbone.0)?;
    let bag = sum_grads(&clean.bag.0, &jit.bag.0)?;
    let bb: Vec<&[f32]> = bb.iter().map(Vec::as_slice).collect();
    let bag: Vec<&[f32]> = bag.iter().map(Vec::as_slice).collect();
    adam_step(
        &mut model.backbone.tensors_mut(),
        &bb,
        &mut opt.backbone,
        lr,
    )?;
    adam_step(&mut model.bag.tensors_mut(), &bag, &mut opt.bag, lr)?;
    Ok(report)
}

/// Stateful driver over a dataset.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub model: FusionModel,
    pub opt: Optimizers,
    pub step: u64,
    dataset: &'a [ImagePair],
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, dataset: &'a [ImagePair]) -> Result<Self> {
        config.validate()?;
        let first = dataset
            .first()
            .ok_or_else(|| Error::Config("training dataset is empty".into()))?;
        if let Some(p) = dataset
            .iter()
            .find(|p| (p.height(), p.width()) != (first.height(), first.width()))
        {
            return Err(Error::Data(format!(
                "pair {} is {}x{} but {} is {}x{}",
                p.id,
                p.width(),
                p.height(),
                first.id,
                first.width(),
                first.height()
            )));
        }
        let model = FusionModel::init(
            config.seed,
            config.channels,
            DEFAULT_REDUCTION,
            config.eps_gate,
            config.eps_norm,
            config.disable_bag,
        )?;
        let opt = Optimizers::new(&model);
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a),
            config,
            model,
            opt,
            step: 0,
            dataset,
            order: Vec::new(),
            cursor: 0,
        })
    }

    /// Next batch, drawn from per-epoch shuffles of the dataset.
    pub fn next_batch(&mut self) -> Result<Batch> {
        let mut picked = Vec::with_capacity(self.config.batch);
        while picked.len() < self.config.batch {
            if self.cursor >= self.order.len() {
                self.order = (0..self.dataset.len()).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            picked.push(&self.dataset[self.order[self.cursor]]);
            self.cursor += 1;
        }
        Batch::from_pairs(&picked)
    }

    /// One gain per batch item, log-uniform over the jitter range.
    pub fn sample_gains(&mut self, n: usize) -> Vec<f32> {
        let (lo, hi) = (self.config.jitter_min.log2(), self.config.jitter_max.log2());
        (0..n)
            .map(|_| {
                if hi > lo {
                    2f32.powf(self.rng.gen_range(lo..hi))
                } else {
                    2f32.powf(lo)
                }
            })
            .collect()
    }

    /// Runs one full iteration and returns its combined report.
    pub fn step_once(&mut self) -> Result<LossReport> {
        let batch = self.next_batch()?;
        let gains = self.sample_gains(batch.len());
        let lr = self.config.lr;
        let mut report = if self.config.disable_alternation {
            train_joint_step(&mut self.model, &mut self.opt, &batch, &gains, lr)?
        } else {
            let s1 = train_stage1_step(&mut self.model, &mut self.opt, &batch, lr)?;
            let s2 = train_stage2_step(
                &mut self.model,
                &mut self.opt,
                &batch,
                &gains,
                lr,
                self.config.disable_bcl,
            )?;
            LossReport {
                bcl: s2.bcl,
                total: s1.fus + s2.bcl,
                ..s1
            }
        };
        report.step = self.step;
        self.step += 1;
        Ok(report)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            opt: self.opt.clone(),
            step: self.step,
            config: self.config.clone(),
        }
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossReport>,
}

/// Runs `config.iters` iterations. `on_step` sees every report as it is produced.
pub fn train_loop(
    config: &TrainConfig,
    dataset: &[ImagePair],
    mut on_step: impl FnMut(&LossReport),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone(), dataset)?;
    let mut log = Vec::with_capacity(config.iters);
    for _ in 0..config.iters {
        let r = trainer.step_once()?;
        if !r.total.is_finite() {
            return Err(Error::Data(format!("loss diverged at step {}", r.step)));
        }
        on_step(&r);
        log.push(r);
    }
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        log,
    })
}
