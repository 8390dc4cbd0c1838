//! Tagged little-endian binary checkpoints.
//!
//! Layout:
//!
//! ```text
//! "BAFU" | u32 version | u64 step | u32 len, config text (UTF-8)
//! u32 n_params | n × (u32 len, name | u32 rank | rank × u32 dim | f32 values)
//! 2 × (u64 adam step | u32 n | n × (u32 len, f32 m) | n × (u32 len, f32 v))
//! ```
//!
//! Optimiser groups are stored backbone first. Trailing bytes are rejected.

use std::fs;
use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{BackboneParams, BagParams, FusionModel};
use crate::optim::AdamState;
use crate::tensor::{Shape, Tensor};
use crate::train::Optimizers;

pub const MAGIC: &[u8; 4] = b"BAFU";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: FusionModel,
    pub opt: Optimizers,
    pub step: u64,
    pub config: TrainConfig,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("record length fits in u32"));
    }
    fn bytes(&mut self, b: &[u8]) {
        self.len(b.len());
        self.0.extend_from_slice(b);
    }
    fn floats(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn adam(&mut self, s: &AdamState) {
        self.u64(s.step);
        self.len(s.m.len());
        for buf in s.m.iter().chain(&s.v) {
            self.len(buf.len());
            self.floats(buf);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.pos,
                format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            )),
        }
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).unwrap_or(usize::MAX), what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn string(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::format(at, format!("{what} is not UTF-8")))
    }
    fn adam(&mut self, expected: &[usize]) -> Result<AdamState> {
        let step = self.u64("optimizer step")?;
        let at = self.pos;
        let n = self.u32("optimizer group size")? as usize;
        if n != expected.len() {
            return Err(Error::format(
                at,
                format!(
                    "optimizer group has {n} buffers, expected {}",
                    expected.len()
                ),
            ));
        }
        let mut bufs = Vec::with_capacity(2 * n);
        for &size in expected.iter().chain(expected) {
            let at = self.pos;
            let len = self.u32("moment length")? as usize;
            if len != size {
                return Err(Error::format(
                    at,
                    format!("moment buffer has {len} values, expected {size}"),
                ));
            }
            bufs.push(self.floats(len, "moment values")?);
        }
        let v = bufs.split_off(n);
        Ok(AdamState { step, m: bufs, v })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u64(self.step);
        w.bytes(self.config.to_text().as_bytes());
        let params = self.model.named_parameters();
        w.len(params.len());
        for (name, t) in params {
            w.bytes(name.as_bytes());
            w.u32(4);
            for d in t.shape().0 {
                w.len(d);
            }
            w.floats(t.data());
        }
        w.adam(&self.opt.backbone);
        w.adam(&self.opt.bag);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::format(0, "bad magic, not a checkpoint"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format(
                4,
                format!("unsupported version {version}, expected {VERSION}"),
            ));
        }
        let step = r.u64("step")?;
        let cfg_at = r.pos;
        let config = TrainConfig::parse(&r.string("config")?)
            .map_err(|e| Error::format(cfg_at, format!("config echo: {e}")))?;

        let expected_names: Vec<&str> = BackboneParams::NAMES
            .into_iter()
            .chain(BagParams::NAMES)
            .collect();
        let at = r.pos;
        let n = r.u32("parameter count")? as usize;
        if n != expected_names.len() {
            return Err(Error::format(
                at,
                format!("{n} parameters, expected {}", expected_names.len()),
            ));
        }
        let mut tensors = Vec::with_capacity(n);
        for expected in &expected_names {
            let at = r.pos;
            let name = r.string("parameter name")?;
            if name != *expected {
                return Err(Error::format(
                    at,
                    format!("parameter {name:?}, expected {expected:?}"),
                ));
            }
            let at = r.pos;
            let rank = r.u32("rank")?;
            if rank != 4 {
                return Err(Error::format(
                    at,
                    format!("{name} has rank {rank}, expected 4"),
                ));
            }
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32("dimension")? as usize;
            }
            let shape = Shape(dims);
            let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel =
                numel.ok_or_else(|| Error::format(at, format!("{name} dimensions overflow")))?;
            let data = r.floats(numel, "parameter values")?;
            tensors.push(Tensor::from_vec(shape, data)?);
        }
        let bag_tensors = tensors.split_off(BackboneParams::NAMES.len());
        let bad = |e: Error| Error::format(at, format!("inconsistent parameters: {e}"));

        let channels = tensors[0].shape().batch();
        let backbone = BackboneParams::from_tensors(channels, tensors).map_err(bad)?;
        let hidden = bag_tensors[2].shape().batch();
        if hidden == 0 || channels % hidden != 0 {
            return Err(Error::format(
                at,
                format!("gate width {hidden} does not divide {channels}"),
            ));
        }
        let bag = BagParams::from_tensors(
            channels / hidden,
            config.eps_gate,
            config.eps_norm,
            bag_tensors,
        )
        .map_err(bad)?;
        let model = FusionModel {
            backbone,
            bag,
            disable_bag: config.disable_bag,
        };

        let sizes = |ts: Vec<&Tensor>| ts.into_iter().map(Tensor::numel).collect::<Vec<_>>();
        let backbone_opt = r.adam(&sizes(model.backbone.tensors().to_vec()))?;
        let bag_opt = r.adam(&sizes(model.bag.tensors().to_vec()))?;
        if r.pos != bytes.len() {
            return Err(Error::format(
                r.pos,
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }
        Ok(Checkpoint {
            model,
            opt: Optimizers {
                backbone: backbone_opt,
                bag: bag_opt,
            },
            step,
            config,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    Checkpoint::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
