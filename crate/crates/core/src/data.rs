//! Synthetic infrared/visible pairs and on-disk dataset loading.
//!
//! Visible images are oriented sinusoidal gratings overlaid with filled
//! random polygons. Infrared images are a smooth dark background with
//! bright Gaussian blobs centred on a subset of those polygons ("warm
//! objects").

use std::f32::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageio::{read_image, ImagePair};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug)]
struct Polygon {
    vertices: Vec<(f32, f32)>,
    center: (f32, f32),
    radius: f32,
    color: [f32; 3],
}

impl Polygon {
    fn random(rng: &mut ChaCha8Rng, size: f32) -> Self {
        let radius = rng.gen_range(0.08..0.2) * size;
        let cx = rng.gen_range(radius..size - radius);
        let cy = rng.gen_range(radius..size - radius);
        let n = rng.gen_range(3..=6);
        let mut angles: Vec<f32> = (0..n).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        angles.sort_by(f32::total_cmp);
        let vertices = angles
            .iter()
            .map(|a| {
                let r = radius * rng.gen_range(0.6..1.0);
                (cx + r * a.cos(), cy + r * a.sin())
            })
            .collect();
        // Either a dark or a bright object, to keep the visible range wide.
        let base = if rng.gen_bool(0.5) {
            rng.gen_range(0.0..0.25)
        } else {
            rng.gen_range(0.75..1.0)
        };
        let mut color = [0.0; 3];
        for c in &mut color {
            *c = (base + rng.gen_range(-0.1..0.1f32)).clamp(0.0, 1.0);
        }
        Polygon {
            vertices,
            center: (cx, cy),
            radius,
            color,
        }
    }

    /// Even-odd rule.
    fn contains(&self, x: f32, y: f32) -> bool {
        let mut inside = false;
        let n = self.vertices.len();
        for i in 0..n {
            let (xi, yi) = self.vertices[i];
            let (xj, yj) = self.vertices[(i + n - 1) % n];
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
        }
        inside
    }
}

struct Grating {
    freq: f32,
    cos: f32,
    sin: f32,
    phase: f32,
}

/// Generates one pair. Exposed for tests that need the object layout.
fn synthesize(
    rng: &mut ChaCha8Rng,
    size: usize,
    id: String,
) -> Result<(ImagePair, Vec<(f32, f32)>)> {
    let s = size as f32;
    let gratings: Vec<Grating> = (0..2)
        .map(|_| {
            let theta = rng.gen_range(0.0..PI);
            Grating {
                freq: rng.gen_range(2.0..8.0) / s,
                cos: theta.cos(),
                sin: theta.sin(),
                phase: rng.gen_range(0.0..2.0 * PI),
            }
        })
        .collect();
    let tint: [f32; 3] = [
        rng.gen_range(0.8..1.0),
        rng.gen_range(0.8..1.0),
        rng.gen_range(0.8..1.0),
    ];
    let polygons: Vec<Polygon> = (0..rng.gen_range(3..=5))
        .map(|_| Polygon::random(rng, s))
        .collect();
    let warm: Vec<bool> = polygons.iter().map(|_| rng.gen_bool(0.6)).collect();
    let mut warm_centers: Vec<(f32, f32, f32)> = polygons
        .iter()
        .zip(&warm)
        .filter(|(_, &w)| w)
        .map(|(p, _)| (p.center.0, p.center.1, p.radius))
        .collect();
    if warm_centers.is_empty() {
        let p = &polygons[0];
        warm_centers.push((p.center.0, p.center.1, p.radius));
    }
    let blob_gain: Vec<f32> = warm_centers
        .iter()
        .map(|_| rng.gen_range(0.5..0.8))
        .collect();
    let ir_base = rng.gen_range(0.05..0.15f32);
    let ir_dir = rng.gen_range(0.0..2.0 * PI);

    let plane = size * size;
    let mut vis = vec![0.0f32; 3 * plane];
    let mut ir = vec![0.0f32; plane];
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
            let i = y * size + x;
            let texture: f32 = gratings
                .iter()
                .map(|g| (2.0 * PI * g.freq * (fx * g.cos + fy * g.sin) + g.phase).sin())
                .sum::<f32>()
                / gratings.len() as f32;
            let background = 0.5 + 0.45 * texture;
            let mut rgb = tint.map(|t| background * t);
            for p in &polygons {
                if p.contains(fx, fy) {
                    rgb = p.color;
                }
            }
            for c in 0..3 {
                vis[c * plane + i] = rgb[c].clamp(0.0, 1.0);
            }

            let ramp = (fx * ir_dir.cos() + fy * ir_dir.sin()) / s;
            let mut v = ir_base + 0.05 * (1.0 + ramp);
            for ((cx, cy, r), a) in warm_centers.iter().zip(&blob_gain) {
                let sigma = 0.6 * r;
                let d2 = (fx - cx).powi(2) + (fy - cy).powi(2);
                v += a * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            ir[i] = v.clamp(0.0, 1.0);
        }
    }
    let pair = ImagePair::new(
        id,
        Tensor::from_vec(Shape::new(1, 3, size, size), vis)?,
        Tensor::from_vec(Shape::new(1, 1, size, size), ir)?,
    )?;
    Ok((pair, warm_centers.iter().map(|&(x, y, _)| (x, y)).collect()))
}

/// Deterministic synthetic dataset of `count` square pairs.
pub fn build_synthetic_dataset(
    seed: u64,
    count: usize,
    image_size: usize,
) -> Result<Vec<ImagePair>> {
    Ok(build_synthetic_with_centers(seed, count, image_size)?
        .into_iter()
        .map(|(p, _)| p)
        .collect())
}

/// Like [`build_synthetic_dataset`], also returning the warm-object centres
/// `(x, y)` in pixel coordinates.
pub fn build_synthetic_with_centers(
    seed: u64,
    count: usize,
    image_size: usize,
) -> Result<Vec<(ImagePair, Vec<(f32, f32)>)>> {
    if count == 0 {
        return Err(Error::Parameter(
            "synthetic dataset needs at least one pair".into(),
        ));
    }
    if image_size < 8 {
        return Err(Error::Parameter(format!(
            "image size {image_size} is below 8"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| synthesize(&mut rng, image_size, format!("syn{i:05}")))
        .collect()
}

/// Loads `<id>_vis.ppm` / `<id>_ir.pgm` pairs from a directory, sorted by id.
pub fn load_pairs(dir: impl AsRef<Path>) -> Result<Vec<ImagePair>> {
    let dir = dir.as_ref();
    let mut ids: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix("_vis.ppm"))
                .map(str::to_owned)
        })
        .collect();
    ids.sort();
    let mut pairs = Vec::with_capacity(ids.len());
    for id in ids {
        let ir_path = dir.join(format!("{id}_ir.pgm"));
        if !ir_path.exists() {
            return Err(Error::Data(format!(
                "missing infrared image {}",
                ir_path.display()
            )));
        }
        let vis = read_image(dir.join(format!("{id}_vis.ppm")))?;
        let ir = read_image(&ir_path)?;
        pairs.push(ImagePair::new(id, vis, ir)?);
    }
    Ok(pairs)
}
