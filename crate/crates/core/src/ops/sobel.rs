//! Per-channel Sobel gradient magnitude `|Gx| + |Gy|` with reflect padding.

use super::conv::{resolve, Padding};

/// Horizontal derivative kernel, applied as a correlation.
pub const SOBEL_X: [[f32; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_Y: [[f32; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

fn offsets(extent: usize) -> Vec<[usize; 3]> {
    (0..extent)
        .map(|i| {
            let mut o = [0; 3];
            for (k, slot) in o.iter_mut().enumerate() {
                *slot = resolve(i as isize + k as isize - 1, extent, Padding::Reflect).unwrap();
            }
            o
        })
        .collect()
}

/// Sobel responses `(Gx, Gy)` of one plane. Evaluated as weighted central
/// differences so flat regions give exactly zero.
pub(crate) fn responses(plane: &[f32], h: usize, w: usize) -> (Vec<f32>, Vec<f32>) {
    let rows = offsets(h);
    let cols = offsets(w);
    let mut gx = vec![0.0f32; h * w];
    let mut gy = vec![0.0f32; h * w];
    let p = |y: usize, x: usize| plane[y * w + x];
    for y in 0..h {
        let [r0, r1, r2] = rows[y];
        for x in 0..w {
            let [c0, c1, c2] = cols[x];
            let dx = |r: usize| p(r, c2) - p(r, c0);
            let dy = |c: usize| p(r2, c) - p(r0, c);
            gx[y * w + x] = dx(r0) + 2.0 * dx(r1) + dx(r2);
            gy[y * w + x] = dy(c0) + 2.0 * dy(c1) + dy(c2);
        }
    }
    (gx, gy)
}

pub(crate) fn magnitude(plane: &[f32], h: usize, w: usize) -> Vec<f32> {
    let (gx, gy) = responses(plane, h, w);
    gx.iter().zip(&gy).map(|(a, b)| a.abs() + b.abs()).collect()
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn magnitude_backward(plane: &[f32], h: usize, w: usize, grad: &[f32]) -> Vec<f32> {
    let (gx, gy) = responses(plane, h, w);
    let rows = offsets(h);
    let cols = offsets(w);
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let dx = grad[i] * sign(gx[i]);
            let dy = grad[i] * sign(gy[i]);
            if dx == 0.0 && dy == 0.0 {
                continue;
            }
            for (ki, &iy) in rows[y].iter().enumerate() {
                for (kj, &ix) in cols[x].iter().enumerate() {
                    out[iy * w + ix] += dx * SOBEL_X[ki][kj] + dy * SOBEL_Y[ki][kj];
                }
            }
        }
    }
    out
}
