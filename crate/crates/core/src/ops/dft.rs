//! Normalised 2-D DFT amplitude spectrum and its adjoint.
//!
//! The transform is evaluated exactly by separable direct summation in
//! `f64`: rows first, then columns. Amplitudes are divided by `H·W`, so the
//! DC bin equals the plane mean.

use std::f64::consts::PI;

struct Twiddles {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Twiddles {
    fn new(n: usize) -> Self {
        let (cos, sin) = (0..n)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / n as f64;
                (a.cos(), a.sin())
            })
            .unzip();
        Twiddles { cos, sin }
    }
}

/// Full complex spectrum of one `h×w` real plane, row-major `(u, v)`.
pub(crate) fn dft2(plane: &[f32], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let tw = Twiddles::new(w);
    let th = Twiddles::new(h);
    // Row pass: R[y][v] = Σ_x x[y][x]·e^{-2πi·vx/W}
    let mut rr = vec![0.0; h * w];
    let mut ri = vec![0.0; h * w];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for (x, &val) in row.iter().enumerate() {
                let k = (v * x) % w;
                re += val as f64 * tw.cos[k];
                im -= val as f64 * tw.sin[k];
            }
            rr[y * w + v] = re;
            ri[y * w + v] = im;
        }
    }
    // Column pass: F[u][v] = Σ_y R[y][v]·e^{-2πi·uy/H}
    let mut fr = vec![0.0; h * w];
    let mut fi = vec![0.0; h * w];
    for u in 0..h {
        for y in 0..h {
            let k = (u * y) % h;
            let (c, s) = (th.cos[k], th.sin[k]);
            for v in 0..w {
                let (a, b) = (rr[y * w + v], ri[y * w + v]);
                // (a + ib)(c - is)
                fr[u * w + v] += a * c + b * s;
                fi[u * w + v] += b * c - a * s;
            }
        }
    }
    (fr, fi)
}

/// `|F(u, v)| / (H·W)` for one plane.
pub(crate) fn amplitude(plane: &[f32], h: usize, w: usize) -> Vec<f32> {
    let (fr, fi) = dft2(plane, h, w);
    let norm = (h * w) as f64;
    fr.iter()
        .zip(&fi)
        .map(|(re, im)| (re.hypot(*im) / norm) as f32)
        .collect()
}

/// Vector-Jacobian product of [`amplitude`]: maps the upstream gradient on
/// amplitudes back onto the real input plane. Bins with zero magnitude take
/// a zero subgradient.
pub(crate) fn amplitude_backward(plane: &[f32], h: usize, w: usize, grad: &[f32]) -> Vec<f32> {
    let (fr, fi) = dft2(plane, h, w);
    let norm = (h * w) as f64;
    // G = g·F/|F|/(HW); dx = Re Σ_{u,v} G·e^{+2πi(uy/H + vx/W)}
    let mut gr = vec![0.0; h * w];
    let mut gi = vec![0.0; h * w];
    for i in 0..h * w {
        let mag = fr[i].hypot(fi[i]);
        if mag > 0.0 {
            let s = grad[i] as f64 / (mag * norm);
            gr[i] = s * fr[i];
            gi[i] = s * fi[i];
        }
    }
    let tw = Twiddles::new(w);
    let th = Twiddles::new(h);
    // Column pass (over u): T[y][v] = Σ_u G[u][v]·e^{+2πi·uy/H}
    let mut tr = vec![0.0; h * w];
    let mut ti = vec![0.0; h * w];
    for y in 0..h {
        for u in 0..h {
            let k = (u * y) % h;
            let (c, s) = (th.cos[k], th.sin[k]);
            for v in 0..w {
                let (a, b) = (gr[u * w + v], gi[u * w + v]);
                // (a + ib)(c + is)
                tr[y * w + v] += a * c - b * s;
                ti[y * w + v] += a * s + b * c;
            }
        }
    }
    // Row pass, real part only.
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for v in 0..w {
                let k = (v * x) % w;
                acc += tr[y * w + v] * tw.cos[k] - ti[y * w + v] * tw.sin[k];
            }
            out[y * w + x] = acc as f32;
        }
    }
    out
}
