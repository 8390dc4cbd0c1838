//! Test-only oracles shared by the integration suites.

#![allow(dead_code)]

use bafusion::autograd::{Graph, Var};
use bafusion::tensor::{Shape, Tensor};
use bafusion::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape, lo: f32, hi: f32) -> Tensor {
    let data = (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Random values with magnitude in `[margin, 1]`, so that kinks at zero are
/// never straddled by the difference stencil.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: Shape, margin: f32) -> Tensor {
    let data = (0..shape.numel())
        .map(|_| {
            let m = rng.gen_range(margin..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Scalar objective built from the function output. Non-scalar outputs are
/// reduced by a fixed random projection, evaluated in `f64` for the
/// difference quotient.
struct Objective {
    projection: Option<Vec<f32>>,
}

impl Objective {
    fn eval(&self, g: &Graph, out: Var) -> f64 {
        match &self.projection {
            None => g.scalar(out),
            Some(r) => g
                .value(out)
                .data()
                .iter()
                .zip(r)
                .map(|(&y, &w)| y as f64 * w as f64)
                .sum(),
        }
    }
}

/// Compares the graph gradient of `f` with central finite differences for
/// every input. Returns one norm-wise relative error per input:
/// `‖g_fd − g‖ / max(‖g_fd‖, ‖g‖)`.
pub fn gradient_errors(
    inputs: &[Tensor],
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Vec<f64> {
    gradient_errors_with_step(inputs, FD_STEP, f)
}

/// [`gradient_errors`] with an explicit difference step, for functions whose
/// curvature scale is well below [`FD_STEP`].
pub fn gradient_errors_with_step(
    inputs: &[Tensor],
    step: f64,
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Vec<f64> {
    gradient_errors_with_steps(inputs, &vec![step; inputs.len()], f)
}

/// One difference step per input: inputs that reach the output only through
/// strong averaging need a wider step for the `f32` forward pass to resolve it.
pub fn gradient_errors_with_steps(
    inputs: &[Tensor],
    steps: &[f64],
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Vec<f64> {
    // Determine output shape and projection.
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars).unwrap();
    let shape = g.value(out).shape();
    let objective = if shape.is_scalar() {
        Objective { projection: None }
    } else {
        let mut r = rng(0xfd);
        Objective {
            projection: Some((0..shape.numel()).map(|_| r.gen_range(-1.0..1.0)).collect()),
        }
    };

    // Analytic gradient.
    let loss = match &objective.projection {
        None => out,
        Some(p) => {
            let pv = g.constant(Tensor::from_vec(shape, p.clone()).unwrap());
            let prod = g.mul(out, pv).unwrap();
            g.sum(prod)
        }
    };
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f32>> = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars).unwrap();
        objective.eval(&g, out)
    };

    let mut errors = Vec::new();
    for (k, input) in inputs.iter().enumerate() {
        let step = steps[k];
        let mut num = 0.0f64;
        let mut den_fd = 0.0f64;
        let mut den_an = 0.0f64;
        for i in 0..input.numel() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let x = input.data()[i] as f64;
            plus[k].data_mut()[i] = (x + step) as f32;
            minus[k].data_mut()[i] = (x - step) as f32;
            let h = plus[k].data()[i] as f64 - minus[k].data()[i] as f64;
            let fd = (eval(&plus) - eval(&minus)) / h;
            let an = analytic[k][i] as f64;
            num += (fd - an).powi(2);
            den_fd += fd * fd;
            den_an += an * an;
        }
        let den = den_fd.max(den_an).sqrt();
        errors.push(if den == 0.0 {
            num.sqrt()
        } else {
            num.sqrt() / den
        });
    }
    errors
}

/// Naive `O(N²)` DFT amplitude of one plane, normalised by `H·W`.
pub fn naive_dft_amplitude(plane: &[f32], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for y in 0..h {
                for x in 0..w {
                    let theta = -2.0
                        * std::f64::consts::PI
                        * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    re += plane[y * w + x] as f64 * theta.cos();
                    im += plane[y * w + x] as f64 * theta.sin();
                }
            }
            out[u * w + v] = (re * re + im * im).sqrt() / (h * w) as f64;
        }
    }
    out
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Per-pixel 3×3 Sobel stencil `|Gx| + |Gy|` with reflected borders.
pub fn naive_sobel(plane: &[f32], h: usize, w: usize) -> Vec<f64> {
    let px = |y: isize, x: isize| plane[reflect(y, h) * w + reflect(x, w)] as f64;
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = px(y - 1, x + 1) + 2.0 * px(y, x + 1) + px(y + 1, x + 1)
                - px(y - 1, x - 1)
                - 2.0 * px(y, x - 1)
                - px(y + 1, x - 1);
            let gy = px(y + 1, x - 1) + 2.0 * px(y + 1, x) + px(y + 1, x + 1)
                - px(y - 1, x - 1)
                - 2.0 * px(y - 1, x)
                - px(y - 1, x + 1);
            out[(y as usize) * w + x as usize] = gx.abs() + gy.abs();
        }
    }
    out
}

/// Random grayscale image in `[0, 1]`, row-major.
pub fn random_gray(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect()
}

/// Double-loop spatial frequency.
pub fn brute_sf(img: &[f64], h: usize, w: usize) -> f64 {
    let mut rf = 0.0;
    let mut cf = 0.0;
    for y in 0..h {
        for x in 0..w {
            if x > 0 {
                rf += (img[y * w + x] - img[y * w + x - 1]).powi(2);
            }
            if y > 0 {
                cf += (img[y * w + x] - img[(y - 1) * w + x]).powi(2);
            }
        }
    }
    (rf / (h * (w - 1)) as f64 + cf / ((h - 1) * w) as f64).sqrt()
}

/// Two-pass population standard deviation on the 0–255 scale.
pub fn brute_sd(img: &[f64]) -> f64 {
    let n = img.len() as f64;
    let mean: f64 = img.iter().map(|v| 255.0 * v).sum::<f64>() / n;
    (img.iter()
        .map(|v| (255.0 * v - mean) * (255.0 * v - mean))
        .sum::<f64>()
        / n)
        .sqrt()
}

pub fn brute_ag(img: &[f64], h: usize, w: usize) -> f64 {
    let mut s = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let dx = img[y * w + x + 1] - img[y * w + x];
            let dy = img[(y + 1) * w + x] - img[y * w + x];
            s += (0.5 * (dx * dx + dy * dy)).sqrt();
        }
    }
    s / ((h - 1) * (w - 1)) as f64
}

fn level(v: f64) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

/// Mutual information from a sparse joint histogram.
pub fn brute_mi_pair(a: &[f64], b: &[f64]) -> f64 {
    use std::collections::BTreeMap;
    let mut joint: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for (&u, &v) in a.iter().zip(b) {
        *joint.entry((level(u), level(v))).or_default() += 1;
    }
    let mut pa = [0u64; 256];
    let mut pb = [0u64; 256];
    for (&(i, j), &c) in &joint {
        pa[i] += c;
        pb[j] += c;
    }
    let n = a.len() as f64;
    let mut mi = 0.0;
    for (&(i, j), &c) in &joint {
        let pij = c as f64 / n;
        mi += pij * (pij / ((pa[i] as f64 / n) * (pb[j] as f64 / n))).log2();
    }
    mi.max(0.0)
}

pub fn brute_mi(f: &[f64], v: &[f64], i: &[f64]) -> f64 {
    brute_mi_pair(f, v) + brute_mi_pair(f, i)
}

/// Edge strength and orientation (mod π) from explicit 3×3 Sobel stencils.
fn sobel_polar(img: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut gx, mut gy) = (0.0, 0.0);
            for dy in 0..3 {
                for dx in 0..3 {
                    let v =
                        img[reflect(y + dy as isize - 1, h) * w + reflect(x + dx as isize - 1, w)];
                    gx += KX[dy][dx] * v;
                    gy += KY[dy][dx] * v;
                }
            }
            let angle = if gx == 0.0 {
                if gy == 0.0 {
                    0.0
                } else {
                    std::f64::consts::FRAC_PI_2
                }
            } else {
                (gy / gx).atan()
            };
            out.push(((gx * gx + gy * gy).sqrt(), angle));
        }
    }
    out
}

/// Reference edge-transfer quality.
pub fn brute_qabf(f: &[f64], a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    let sig =
        |gamma: f64, kappa: f64, sigma: f64, v: f64| gamma / (1.0 + (kappa * (v - sigma)).exp());
    let pf = sobel_polar(f, h, w);
    let mut num = 0.0;
    let mut den = 0.0;
    for src in [a, b] {
        let ps = sobel_polar(src, h, w);
        for k in 0..h * w {
            let (gs, as_) = ps[k];
            let (gf, af) = pf[k];
            let hi = gs.max(gf);
            let g = if hi == 0.0 || gs == gf {
                1.0
            } else {
                gs.min(gf) / hi
            };
            let d = (as_ - af).abs();
            let d = if d > FRAC_PI_2 { PI - d } else { d };
            let q = sig(0.9994, -15.0, 0.5, g) * sig(0.9879, -22.0, 0.8, 1.0 - d / FRAC_PI_2);
            num += q * gs;
            den += gs;
        }
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Random image whose Sobel responses stay clear of zero. Reflected borders
/// make `Gx` vanish identically on the first and last column (`Gy` on the
/// first and last row); those are exact zeros and need no margin.
pub fn textured(r: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    loop {
        let t = random_tensor(r, shape, 0.0, 1.0);
        let (h, w) = (shape.height(), shape.width());
        let clear = (0..shape.batch() * shape.channels()).all(|p| {
            let plane = &t.data()[p * h * w..(p + 1) * h * w];
            (0..h * w).all(|k| {
                let (y, x) = (k / w, k % w);
                let at = |yy: isize, xx: isize| {
                    let rf = |i: isize, n: usize| if i < 0 { -i } else if i >= n as isize { 2 * n as isize - 2 - i } else { i } as usize;
                    plane[rf(yy, h) * w + rf(xx, w)]
                };
                let (y, x) = (y as isize, x as isize);
                let gx = at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1) - at(y - 1, x - 1) - 2.0 * at(y, x - 1) - at(y + 1, x - 1);
                let gy = at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1) - at(y - 1, x - 1) - 2.0 * at(y - 1, x) - at(y - 1, x + 1);
                (x == 0 || x == w as isize - 1 || gx.abs() > 0.05)
                    && (y == 0 || y == h as isize - 1 || gy.abs() > 0.05)
            })
        });
        if clear {
            return t;
        }
    }
}
