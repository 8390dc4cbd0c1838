//! Training configuration and its `key = value` text form.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::bag::{DEFAULT_EPS_GATE, DEFAULT_EPS_NORM};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub channels: usize,
    pub lr: f32,
    pub batch: usize,
    pub iters: usize,
    pub eps_gate: f32,
    pub eps_norm: f32,
    pub jitter_min: f32,
    pub jitter_max: f32,
    pub disable_bag: bool,
    pub disable_bcl: bool,
    pub disable_alternation: bool,
    pub data_dir: Option<PathBuf>,
    pub image_size: usize,
}

impl Default for TrainConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            channels: 16,
            lr: 1e-4,
            batch: 4,
            iters: 500,
            eps_gate: DEFAULT_EPS_GATE,
            eps_norm: DEFAULT_EPS_NORM,
            jitter_min: 0.5,
            jitter_max: 2.0,
            disable_bag: false,
            disable_bcl: false,
            disable_alternation: false,
            data_dir: None,
            image_size: 64,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value {value:?} for {key}")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 14] = [
        "seed",
        "channels",
        "lr",
        "batch",
        "iters",
        "eps_gate",
        "eps_norm",
        "jitter_min",
        "jitter_max",
        "disable_bag",
        "disable_bcl",
        "disable_alternation",
        "data_dir",
        "image_size",
    ];

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {n}: expected `key = value`")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key.to_owned()) {
                return Err(Error::Config(format!("line {n}: duplicate key {key}")));
            }
            seen.push(key.to_owned());
            match key {
                "seed" => cfg.seed = parse(key, value, n)?,
                "channels" => cfg.channels = parse(key, value, n)?,
                "lr" => cfg.lr = parse(key, value, n)?,
                "batch" => cfg.batch = parse(key, value, n)?,
                "iters" => cfg.iters = parse(key, value, n)?,
                "eps_gate" => cfg.eps_gate = parse(key, value, n)?,
                "eps_norm" => cfg.eps_norm = parse(key, value, n)?,
                "jitter_min" => cfg.jitter_min = parse(key, value, n)?,
                "jitter_max" => cfg.jitter_max = parse(key, value, n)?,
                "disable_bag" => cfg.disable_bag = parse(key, value, n)?,
                "disable_bcl" => cfg.disable_bcl = parse(key, value, n)?,
                "disable_alternation" => cfg.disable_alternation = parse(key, value, n)?,
                "data_dir" => cfg.data_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
                "image_size" => cfg.image_size = parse(key, value, n)?,
                other => return Err(Error::Config(format!("line {n}: unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch == 0 {
            return fail("batch must be at least 1".into());
        }
        if self.channels == 0 || self.channels % crate::model::bag::DEFAULT_REDUCTION != 0 {
            return fail(format!(
                "channels must be a positive multiple of {}, got {}",
                crate::model::bag::DEFAULT_REDUCTION,
                self.channels
            ));
        }
        if !(self.eps_gate > 0.0) || !(self.eps_norm > 0.0) {
            return fail("eps_gate and eps_norm must be positive".into());
        }
        if !(self.jitter_min > 0.0
            && self.jitter_min <= 1.0
            && 1.0 <= self.jitter_max
            && self.jitter_max.is_finite())
        {
            return fail(format!(
                "jitter range must satisfy 0 < jitter_min <= 1 <= jitter_max, got [{}, {}]",
                self.jitter_min, self.jitter_max
            ));
        }
        if self.image_size < 8 {
            return fail(format!(
                "image_size must be at least 8, got {}",
                self.image_size
            ));
        }
        Ok(())
    }

    /// Canonical text form; [`TrainConfig::parse`] reads it back exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "lr = {:e}", self.lr);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "iters = {}", self.iters);
        let _ = writeln!(s, "eps_gate = {:e}", self.eps_gate);
        let _ = writeln!(s, "eps_norm = {:e}", self.eps_norm);
        let _ = writeln!(s, "jitter_min = {}", self.jitter_min);
        let _ = writeln!(s, "jitter_max = {}", self.jitter_max);
        let _ = writeln!(s, "disable_bag = {}", self.disable_bag);
        let _ = writeln!(s, "disable_bcl = {}", self.disable_bcl);
        let _ = writeln!(s, "disable_alternation = {}", self.disable_alternation);
        let dir = self
            .data_dir
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        let _ = writeln!(s, "data_dir = {dir}");
        let _ = writeln!(s, "image_size = {}", self.image_size);
        s
    }
}
