//! Stability of a trained model's fusion across visible-image brightness gains.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::imageio::{brightness_jitter, histogram, ImagePair};
use crate::metrics::MetricRow;
use crate::model::FusionModel;
use crate::tensor::Tensor;

/// Number of columns in a sweep row: five metrics plus histogram distance.
const COLS: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct PairSweep {
    pub id: String,
    /// One metric row per gain, in gain order.
    pub rows: Vec<MetricRow>,
    /// L1 distance of each gain's fused histogram to the gain-1 fused histogram.
    pub hist_l1: Vec<f64>,
}

impl PairSweep {
    fn column(&self, k: usize) -> Vec<f64> {
        if k < 5 {
            self.rows.iter().map(|r| r.values()[k]).collect()
        } else {
            self.hist_l1.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub gains: Vec<f32>,
    pub pairs: Vec<PairSweep>,
}

/// `(mean, population std, std / mean)`; the ratio is 0 when the mean is 0.
pub fn dispersion(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let cv = if mean.abs() > 0.0 {
        std / mean.abs()
    } else {
        0.0
    };
    (mean, std, cv)
}

impl SweepReport {
    fn per_pair(&self, k: usize, pick: fn((f64, f64, f64)) -> f64) -> f64 {
        let n = self.pairs.len().max(1) as f64;
        self.pairs
            .iter()
            .map(|p| pick(dispersion(&p.column(k))))
            .sum::<f64>()
            / n
    }

    /// Column `k` (`sf, sd, mi, ag, qabf, hist_l1`) averaged over pairs, per gain.
    pub fn gain_means(&self, k: usize) -> Vec<f64> {
        let n = self.pairs.len().max(1) as f64;
        (0..self.gains.len())
            .map(|gi| self.pairs.iter().map(|p| p.column(k)[gi]).sum::<f64>() / n)
            .collect()
    }

    /// Coefficient of variation across gains, computed per pair and averaged.
    pub fn cv(&self, k: usize) -> f64 {
        self.per_pair(k, |d| d.2)
    }

    pub fn std(&self, k: usize) -> f64 {
        self.per_pair(k, |d| d.1)
    }

    pub fn cv_sf(&self) -> f64 {
        self.cv(0)
    }

    pub fn cv_sd(&self) -> f64 {
        self.cv(1)
    }

    /// Histogram distance to the gain-1 fusion, averaged over pairs and gains.
    pub fn mean_hist_l1(&self) -> f64 {
        let m = self.gain_means(5);
        m.iter().sum::<f64>() / m.len().max(1) as f64
    }

    pub fn all_finite(&self) -> bool {
        self.pairs.iter().all(|p| {
            p.rows
                .iter()
                .flat_map(|r| r.values())
                .chain(p.hist_l1.iter().copied())
                .all(f64::is_finite)
        })
    }

    /// One row per gain with pair-averaged values, then `MEAN`, `STD` and `CV`
    /// rows; `STD` and `CV` are taken across gains per pair, then averaged.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("gain\tsf\tsd\tmi\tag\tqabf\thist_l1\n");
        let cols: Vec<Vec<f64>> = (0..COLS).map(|k| self.gain_means(k)).collect();
        for (gi, g) in self.gains.iter().enumerate() {
            let _ = write!(s, "{g}");
            for c in &cols {
                let _ = write!(s, "\t{:.6}", c[gi]);
            }
            s.push('\n');
        }
        let rows: [(&str, Box<dyn Fn(usize) -> f64>); 3] = [
            ("MEAN", Box::new(|k| dispersion(&cols[k]).0)),
            ("STD", Box::new(|k| self.std(k))),
            ("CV", Box::new(|k| self.cv(k))),
        ];
        for (label, f) in rows {
            let _ = write!(s, "{label}");
            for k in 0..COLS {
                let _ = write!(s, "\t{:.6}", f(k));
            }
            s.push('\n');
        }
        s
    }
}

/// Fused output of one pair at `gain`, clamped to the displayable range.
pub fn fuse_at_gain(model: &FusionModel, pair: &ImagePair, gain: f32) -> Result<(Tensor, Tensor)> {
    let vis = brightness_jitter(&pair.visible, gain, 1.0)?;
    let (fused, _) = model.fuse(&vis, &pair.infrared)?;
    Ok((fused.clamp01(), vis))
}

/// Fuses every pair at every gain and scores the results.
pub fn robustness_sweep(
    model: &FusionModel,
    pairs: &[ImagePair],
    gains: &[f32],
) -> Result<SweepReport> {
    if gains.len() < 2 {
        return Err(Error::Parameter(format!(
            "sweep needs at least 2 gains, got {}",
            gains.len()
        )));
    }
    if pairs.is_empty() {
        return Err(Error::Data("sweep needs at least one image pair".into()));
    }
    let mut out = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let (reference, _) = fuse_at_gain(model, pair, 1.0)?;
        let ref_hist = histogram(&reference)?;
        let mut rows = Vec::with_capacity(gains.len());
        let mut hist_l1 = Vec::with_capacity(gains.len());
        for &gain in gains {
            let (fused, vis) = fuse_at_gain(model, pair, gain)?;
            rows.push(MetricRow::compute(
                format!("{}@{gain}", pair.id),
                &fused,
                &vis,
                &pair.infrared,
            )?);
            hist_l1.push(histogram(&fused)?.l1_distance(&ref_hist));
        }
        out.push(PairSweep {
            id: pair.id.clone(),
            rows,
            hist_l1,
        });
    }
    Ok(SweepReport {
        gains: gains.to_vec(),
        pairs: out,
    })
}
