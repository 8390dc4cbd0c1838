//! 2-D convolution (cross-correlation) via im2col + sgemm.
//!
//! Padding is "same"-style: `(k - 1) / 2` on each side, realised through
//! index maps so that reflect padding never materialises a padded copy.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Padding {
    #[default]
    Reflect,
    Zero,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub padding: Padding,
}

impl ConvGeometry {
    pub fn new(input: Shape, weight: Shape, padding: Padding, stride: usize) -> Result<Self> {
        let [batch, in_c, h, w] = input.0;
        let [out_c, w_in, kh, kw] = weight.0;
        if stride == 0 {
            return Err(Error::Parameter("stride must be at least 1".into()));
        }
        if w_in != in_c {
            return Err(Error::dim("channel", format!("{w_in} (weight in_c)"), in_c));
        }
        if kh == 0 || kw == 0 {
            return Err(Error::dim("kernel", "non-empty kernel", weight));
        }
        let pad_h = (kh - 1) / 2;
        let pad_w = (kw - 1) / 2;
        if h + 2 * pad_h < kh {
            return Err(Error::dim("height", format!(">= {}", kh - 2 * pad_h), h));
        }
        if w + 2 * pad_w < kw {
            return Err(Error::dim("width", format!(">= {}", kw - 2 * pad_w), w));
        }
        if padding == Padding::Reflect && ((pad_h > 0 && pad_h >= h) || (pad_w > 0 && pad_w >= w)) {
            return Err(Error::dim(
                "height",
                "extent larger than reflect padding",
                input,
            ));
        }
        Ok(ConvGeometry {
            batch,
            in_c,
            out_c,
            h,
            w,
            kh,
            kw,
            pad_h,
            pad_w,
            stride,
            out_h: (h + 2 * pad_h - kh) / stride + 1,
            out_w: (w + 2 * pad_w - kw) / stride + 1,
            padding,
        })
    }

    pub fn output_shape(&self) -> Shape {
        Shape::new(self.batch, self.out_c, self.out_h, self.out_w)
    }

    fn k(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn n(&self) -> usize {
        self.out_h * self.out_w
    }

    /// `map[k * out + o]` = source index along one axis, or `None` for zero padding.
    fn axis_map(&self, extent: usize, kernel: usize, pad: usize, out: usize) -> Vec<Option<usize>> {
        let mut map = Vec::with_capacity(kernel * out);
        for k in 0..kernel {
            for o in 0..out {
                let pos = (o * self.stride + k) as isize - pad as isize;
                map.push(resolve(pos, extent, self.padding));
            }
        }
        map
    }
}

/// Maps a possibly out-of-range coordinate back onto `[0, extent)`.
pub(crate) fn resolve(pos: isize, extent: usize, padding: Padding) -> Option<usize> {
    let n = extent as isize;
    if (0..n).contains(&pos) {
        return Some(pos as usize);
    }
    match padding {
        Padding::Zero => None,
        Padding::Reflect => {
            if n == 1 {
                return Some(0);
            }
            let period = 2 * (n - 1);
            let mut p = pos.rem_euclid(period);
            if p >= n {
                p = period - p;
            }
            Some(p as usize)
        }
    }
}

struct Maps {
    rows: Vec<Option<usize>>,
    cols: Vec<Option<usize>>,
}

fn maps(g: &ConvGeometry) -> Maps {
    Maps {
        rows: g.axis_map(g.h, g.kh, g.pad_h, g.out_h),
        cols: g.axis_map(g.w, g.kw, g.pad_w, g.out_w),
    }
}

fn im2col(g: &ConvGeometry, m: &Maps, image: &[f32], cols: &mut [f32]) {
    let n = g.n();
    for c in 0..g.in_c {
        let plane = &image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                let xmap = &m.cols[kj * g.out_w..(kj + 1) * g.out_w];
                for oy in 0..g.out_h {
                    let out = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    match m.rows[ki * g.out_h + oy] {
                        None => out.fill(0.0),
                        Some(iy) => {
                            let src = &plane[iy * g.w..(iy + 1) * g.w];
                            for (o, ix) in out.iter_mut().zip(xmap) {
                                *o = ix.map_or(0.0, |ix| src[ix]);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeometry, m: &Maps, cols: &[f32], image: &mut [f32]) {
    let n = g.n();
    for c in 0..g.in_c {
        let plane = &mut image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * n..(row + 1) * n];
                let xmap = &m.cols[kj * g.out_w..(kj + 1) * g.out_w];
                for oy in 0..g.out_h {
                    let Some(iy) = m.rows[ki * g.out_h + oy] else {
                        continue;
                    };
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    for (v, ix) in src[oy * g.out_w..(oy + 1) * g.out_w].iter().zip(xmap) {
                        if let Some(ix) = ix {
                            dst[*ix] += v;
                        }
                    }
                }
            }
        }
    }
}

/// C (m×n) = alpha·A·B + beta·C with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    beta: f32,
    c: &mut [f32],
) {
    // SAFETY: callers pass slices whose lengths cover every strided index
    // touched for the given m, k, n.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn conv2d_forward(
    g: &ConvGeometry,
    input: &[f32],
    weight: &[f32],
    bias: Option<&[f32]>,
) -> Vec<f32> {
    let (k, n) = (g.k(), g.n());
    let m = maps(g);
    let in_len = g.in_c * g.h * g.w;
    let out_len = g.out_c * n;
    let mut out = vec![0.0f32; g.batch * out_len];
    let mut cols = vec![0.0f32; k * n];
    for b in 0..g.batch {
        im2col(g, &m, &input[b * in_len..(b + 1) * in_len], &mut cols);
        let dst = &mut out[b * out_len..(b + 1) * out_len];
        if let Some(bias) = bias {
            for (o, &bv) in bias.iter().enumerate() {
                dst[o * n..(o + 1) * n].fill(bv);
            }
        }
        gemm(g.out_c, k, n, weight, k, 1, &cols, n, 1, 1.0, dst);
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub weight: Option<Vec<f32>>,
    pub bias: Option<Vec<f32>>,
}

pub(crate) fn conv2d_backward(
    g: &ConvGeometry,
    input: &[f32],
    weight: &[f32],
    grad_out: &[f32],
    need: [bool; 3],
) -> ConvGrads {
    let (k, n) = (g.k(), g.n());
    let m = maps(g);
    let in_len = g.in_c * g.h * g.w;
    let out_len = g.out_c * n;
    let [need_input, need_weight, need_bias] = need;

    let mut d_input = need_input.then(|| vec![0.0f32; g.batch * in_len]);
    let mut d_weight = need_weight.then(|| vec![0.0f32; g.out_c * k]);
    let d_bias = need_bias.then(|| {
        let mut acc = vec![0.0f64; g.out_c];
        for b in 0..g.batch {
            for (o, a) in acc.iter_mut().enumerate() {
                let start = b * out_len + o * n;
                *a += grad_out[start..start + n]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
        }
        acc.into_iter().map(|v| v as f32).collect::<Vec<_>>()
    });

    let mut cols = vec![0.0f32; k * n];
    for b in 0..g.batch {
        let dout = &grad_out[b * out_len..(b + 1) * out_len];
        if let Some(dw) = d_weight.as_mut() {
            im2col(g, &m, &input[b * in_len..(b + 1) * in_len], &mut cols);
            // dW (out_c×k) += dOut (out_c×n) · colsᵀ (n×k)
            gemm(g.out_c, n, k, dout, n, 1, &cols, 1, n, 1.0, dw);
        }
        if let Some(dx) = d_input.as_mut() {
            // dCols (k×n) = Wᵀ (k×out_c) · dOut (out_c×n)
            gemm(k, g.out_c, n, weight, 1, k, dout, n, 1, 0.0, &mut cols);
            col2im(g, &m, &cols, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
    ConvGrads {
        input: d_input,
        weight: d_weight,
        bias: d_bias,
    }
}

/// Gradient-free convolution on plain tensors.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    padding: Padding,
    stride: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), padding, stride)?;
    if let Some(b) = bias {
        if b.numel() != g.out_c {
            return Err(Error::dim("bias", g.out_c, b.numel()));
        }
    }
    let out = conv2d_forward(&g, input.data(), weight.data(), bias.map(|b| b.data()));
    Tensor::from_vec(g.output_shape(), out)
}
