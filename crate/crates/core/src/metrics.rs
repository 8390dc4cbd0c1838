//! Fusion-quality metrics on luminance images.
//!
//! SF and AG use the `[0, 1]` value scale, SD the `[0, 255]` scale. MI is in
//! bits over 256 gray levels. Qabf is the Xydeas–Petrović edge-transfer score.

use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imageio::{gray_level, luminance, read_image};
use crate::tensor::Tensor;

pub const QG_GAMMA: f64 = 0.9994;
pub const QG_KAPPA: f64 = -15.0;
pub const QG_SIGMA: f64 = 0.5;
pub const QA_GAMMA: f64 = 0.9879;
pub const QA_KAPPA: f64 = -22.0;
pub const QA_SIGMA: f64 = 0.8;

/// Row-major grayscale image in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gray {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Gray {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::dim("pixels", h * w, data.len()));
        }
        Ok(Gray { h, w, data })
    }

    /// Luminance of batch item 0.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        Gray::new(s.height(), s.width(), luminance(t, 0)?)
    }

    fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    fn require_2x2(&self) -> Result<()> {
        if self.h < 2 {
            return Err(Error::dim("height", ">= 2", self.h));
        }
        if self.w < 2 {
            return Err(Error::dim("width", ">= 2", self.w));
        }
        Ok(())
    }
}

fn same_size(a: &Gray, b: &Gray) -> Result<()> {
    if a.h != b.h {
        return Err(Error::dim("height", a.h, b.h));
    }
    if a.w != b.w {
        return Err(Error::dim("width", a.w, b.w));
    }
    Ok(())
}

/// Spatial frequency `√(RF² + CF²)`.
pub fn metric_sf(f: &Gray) -> Result<f64> {
    f.require_2x2()?;
    let (mut rf, mut cf) = (0.0, 0.0);
    for y in 0..f.h {
        for x in 1..f.w {
            rf += (f.at(y, x) - f.at(y, x - 1)).powi(2);
        }
    }
    for y in 1..f.h {
        for x in 0..f.w {
            cf += (f.at(y, x) - f.at(y - 1, x)).powi(2);
        }
    }
    rf /= (f.h * (f.w - 1)) as f64;
    cf /= ((f.h - 1) * f.w) as f64;
    Ok((rf + cf).sqrt())
}

/// Population standard deviation on the 0–255 scale.
pub fn metric_sd(f: &Gray) -> f64 {
    // Deviations are taken from the first sample so a flat image gives exactly 0.
    let n = f.data.len().max(1) as f64;
    let x0 = f.data.first().copied().unwrap_or(0.0);
    let mean = f.data.iter().map(|v| (v - x0) * 255.0).sum::<f64>() / n;
    let var = f
        .data
        .iter()
        .map(|v| ((v - x0) * 255.0 - mean).powi(2))
        .sum::<f64>()
        / n;
    var.sqrt()
}

/// Mutual information in bits between two equally sized images.
pub fn mutual_information(a: &Gray, b: &Gray) -> Result<f64> {
    same_size(a, b)?;
    let mut joint = vec![0u64; 256 * 256];
    let (mut pa, mut pb) = ([0u64; 256], [0u64; 256]);
    for (&u, &v) in a.data.iter().zip(&b.data) {
        let (i, j) = (gray_level(u), gray_level(v));
        joint[i * 256 + j] += 1;
        pa[i] += 1;
        pb[j] += 1;
    }
    let n = a.data.len() as f64;
    let mut mi = 0.0;
    for i in 0..256 {
        for j in 0..256 {
            let c = joint[i * 256 + j];
            if c == 0 {
                continue;
            }
            let pij = c as f64 / n;
            mi += pij * (pij / ((pa[i] as f64 / n) * (pb[j] as f64 / n))).log2();
        }
    }
    Ok(mi.max(0.0))
}

/// `MI(F; V) + MI(F; I)`.
pub fn metric_mi(f: &Gray, v: &Gray, i: &Gray) -> Result<f64> {
    Ok(mutual_information(f, v)? + mutual_information(f, i)?)
}

/// Average gradient with forward differences.
pub fn metric_ag(f: &Gray) -> Result<f64> {
    f.require_2x2()?;
    let mut acc = 0.0;
    for y in 0..f.h - 1 {
        for x in 0..f.w - 1 {
            let dx = f.at(y, x + 1) - f.at(y, x);
            let dy = f.at(y + 1, x) - f.at(y, x);
            acc += ((dx * dx + dy * dy) / 2.0).sqrt();
        }
    }
    Ok(acc / ((f.h - 1) * (f.w - 1)) as f64)
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let i = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    i as usize
}

/// Sobel edge strength and orientation per pixel.
fn edges(img: &Gray) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (img.h, img.w);
    let mut g = vec![0.0; h * w];
    let mut a = vec![0.0; h * w];
    for y in 0..h {
        let [r0, r1, r2] = [-1, 0, 1].map(|d| reflect(y as isize + d, h));
        for x in 0..w {
            let [c0, c1, c2] = [-1, 0, 1].map(|d| reflect(x as isize + d, w));
            let dx = |r| img.at(r, c2) - img.at(r, c0);
            let dy = |c| img.at(r2, c) - img.at(r0, c);
            let sx = dx(r0) + 2.0 * dx(r1) + dx(r2);
            let sy = dy(c0) + 2.0 * dy(c1) + dy(c2);
            g[y * w + x] = sx.hypot(sy);
            a[y * w + x] = sy.atan2(sx);
        }
    }
    (g, a)
}

fn sigmoid(gamma: f64, kappa: f64, sigma: f64, v: f64) -> f64 {
    gamma / (1.0 + (kappa * (v - sigma)).exp())
}

/// Edge preservation of `f` relative to source `s`, per pixel.
fn preservation(gs: &[f64], as_: &[f64], gf: &[f64], af: &[f64]) -> Vec<f64> {
    (0..gs.len())
        .map(|k| {
            let ratio = if gs[k] == gf[k] {
                1.0
            } else if gs[k] > gf[k] {
                gf[k] / gs[k]
            } else {
                gs[k] / gf[k]
            };
            let mut d = (as_[k] - af[k]).abs() % std::f64::consts::PI;
            if d > FRAC_PI_2 {
                d = std::f64::consts::PI - d;
            }
            let orient = 1.0 - d / FRAC_PI_2;
            sigmoid(QG_GAMMA, QG_KAPPA, QG_SIGMA, ratio)
                * sigmoid(QA_GAMMA, QA_KAPPA, QA_SIGMA, orient)
        })
        .collect()
}

/// Value of a perfectly transferred edge.
pub fn qabf_ceiling() -> f64 {
    sigmoid(QG_GAMMA, QG_KAPPA, QG_SIGMA, 1.0) * sigmoid(QA_GAMMA, QA_KAPPA, QA_SIGMA, 1.0)
}

pub fn metric_qabf(f: &Gray, v: &Gray, i: &Gray) -> Result<f64> {
    same_size(f, v)?;
    same_size(f, i)?;
    let (gf, af) = edges(f);
    let (gv, av) = edges(v);
    let (gi, ai) = edges(i);
    let qv = preservation(&gv, &av, &gf, &af);
    let qi = preservation(&gi, &ai, &gf, &af);
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..gf.len() {
        num += qv[k] * gv[k] + qi[k] * gi[k];
        den += gv[k] + gi[k];
    }
    Ok(if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        0.0
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub id: String,
    pub sf: f64,
    pub sd: f64,
    pub mi: f64,
    pub ag: f64,
    pub qabf: f64,
}

impl MetricRow {
    pub const HEADER: &'static str = "id\tsf\tsd\tmi\tag\tqabf";

    pub fn compute(
        id: impl Into<String>,
        fused: &Tensor,
        visible: &Tensor,
        infrared: &Tensor,
    ) -> Result<Self> {
        let f = Gray::from_tensor(fused)?;
        let v = Gray::from_tensor(visible)?;
        let i = Gray::from_tensor(infrared)?;
        same_size(&f, &v)?;
        same_size(&f, &i)?;
        Ok(MetricRow {
            id: id.into(),
            sf: metric_sf(&f)?,
            sd: metric_sd(&f),
            mi: metric_mi(&f, &v, &i)?,
            ag: metric_ag(&f)?,
            qabf: metric_qabf(&f, &v, &i)?,
        })
    }

    pub fn values(&self) -> [f64; 5] {
        [self.sf, self.sd, self.mi, self.ag, self.qabf]
    }

    /// Arithmetic mean of `rows`, labelled `MEAN`.
    pub fn mean(rows: &[MetricRow]) -> Option<MetricRow> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let mut acc = [0.0; 5];
        for r in rows {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        let [sf, sd, mi, ag, qabf] = acc.map(|a| a / n);
        Some(MetricRow {
            id: "MEAN".into(),
            sf,
            sd,
            mi,
            ag,
            qabf,
        })
    }

    pub fn to_tsv_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.id, self.sf, self.sd, self.mi, self.ag, self.qabf
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    /// Files named by an incomplete triple, as `"<id>: missing <file>"`.
    pub missing: Vec<String>,
}

impl EvalReport {
    pub fn mean(&self) -> Option<MetricRow> {
        MetricRow::mean(&self.rows)
    }

    /// Header, rows sorted by id, then the `MEAN` row when there are rows.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", MetricRow::HEADER);
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.to_tsv_line());
        }
        if let Some(m) = self.mean() {
            let _ = writeln!(s, "{}", m.to_tsv_line());
        }
        s
    }
}

const SUFFIXES: [&str; 3] = ["_vis.ppm", "_ir.pgm", "_fused.ppm"];

/// Scores every `<id>_vis.ppm`, `<id>_ir.pgm`, `<id>_fused.ppm` triple in `dir`.
/// Incomplete triples are skipped and reported in [`EvalReport::missing`].
pub fn evaluate_directory(dir: impl AsRef<Path>) -> Result<EvalReport> {
    let dir = dir.as_ref();
    let mut ids = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(name) = entry.file_name().to_str() {
            if let Some(id) = SUFFIXES.iter().find_map(|s| name.strip_suffix(s)) {
                ids.insert(id.to_owned());
            }
        }
    }
    let mut report = EvalReport::default();
    for id in ids {
        let paths = SUFFIXES.map(|s| dir.join(format!("{id}{s}")));
        let absent: Vec<_> = paths.iter().filter(|p| !p.is_file()).collect();
        if !absent.is_empty() {
            for p in absent {
                report
                    .missing
                    .push(format!("{id}: missing {}", p.display()));
            }
            continue;
        }
        let [v, i, f] = [&paths[0], &paths[1], &paths[2]].map(read_image);
        report.rows.push(MetricRow::compute(id, &f?, &v?, &i?)?);
    }
    Ok(report)
}
