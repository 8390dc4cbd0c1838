//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in execution order. Nodes only
//! reference earlier nodes, so the tape is topologically sorted by
//! construction and [`Graph::backward`] simply walks it in reverse.
//!
//! ```
//! use bafusion::autograd::Graph;
//! use bafusion::tensor::{Shape, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, -2.0, 3.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
//! ```

use crate::error::{Error, Result};
use crate::ops::conv::{self, ConvGeometry, Padding};
use crate::ops::{dft, sobel};
use crate::tensor::{ensure_same_shape, Shape, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    GlobalAvgPool(Var),
    ConcatChannels(Var, Var),
    InstanceNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f32,
    },
    Gate {
        alpha: Var,
        eps: f32,
    },
    Recombine {
        x: Var,
        normalized: Var,
        w: Var,
    },
    Sobel(Var),
    DftAmplitude(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// Full-precision value of scalar reductions and their sums.
    exact: Option<f64>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf, keeping the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, mut tensor: Tensor) -> Var {
        tensor.grad = None;
        self.push(tensor, Op::Leaf)
    }

    /// Inserts a trainable leaf.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Inserts a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Value of a scalar node as `f64`. Sums and means are reported at the
    /// precision they were accumulated in rather than the rounded `f32`.
    pub fn scalar(&self, v: Var) -> f64 {
        let node = &self.nodes[v.0];
        node.exact.unwrap_or_else(|| node.value.data()[0] as f64)
    }

    fn with_exact(&mut self, v: Var, exact: f64) -> Var {
        self.nodes[v.0].exact = Some(exact);
        v
    }

    fn exact_pair(&self, a: Var, b: Var) -> Option<(f64, f64)> {
        if self.shape(a).is_scalar() && self.shape(b).is_scalar() {
            Some((self.scalar(a), self.scalar(b)))
        } else {
            None
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    /// Gradient populated by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    fn push(&mut self, tensor: Tensor, op: Op) -> Var {
        let exact = match op {
            Op::Leaf if tensor.shape().is_scalar() => Some(tensor.item() as f64),
            _ => None,
        };
        self.nodes.push(Node {
            value: tensor,
            op,
            exact,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_result(&mut self, shape: Shape, data: Vec<f32>, inputs: &[Var], op: Op) -> Var {
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        let t = Tensor::from_vec(shape, data)
            .expect("op produced inconsistent length")
            .with_requires_grad(rg);
        self.push(t, op)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        padding: Padding,
        stride: usize,
    ) -> Result<Var> {
        let geom = ConvGeometry::new(self.shape(input), self.shape(weight), padding, stride)?;
        if let Some(b) = bias {
            if self.shape(b).numel() != geom.out_c {
                return Err(Error::dim("bias", geom.out_c, self.shape(b).numel()));
            }
        }
        let out = conv::conv2d_forward(
            &geom,
            self.data(input),
            self.data(weight),
            bias.map(|b| self.data(b)),
        );
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push_result(
            geom.output_shape(),
            out,
            &inputs,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        self.push_result(self.shape(x), out, &[x], Op::Relu(x))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, op: Op) -> Result<Var> {
        ensure_same_shape(self.shape(a), self.shape(b))?;
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push_result(self.shape(a), out, &[a, b], op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let exact = self.exact_pair(a, b);
        let v = self.binary(a, b, |x, y| x + y, Op::Add(a, b))?;
        Ok(match exact {
            Some((x, y)) => self.with_exact(v, x + y),
            None => v,
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let exact = self.exact_pair(a, b);
        let v = self.binary(a, b, |x, y| x - y, Op::Sub(a, b))?;
        Ok(match exact {
            Some((x, y)) => self.with_exact(v, x - y),
            None => v,
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, k: f32) -> Var {
        let out = self.data(x).iter().map(|&v| v * k).collect();
        let v = self.push_result(self.shape(x), out, &[x], Op::Scale(x, k));
        if self.shape(x).is_scalar() {
            let e = self.scalar(x) * k as f64;
            self.with_exact(v, e)
        } else {
            v
        }
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|v| v.abs()).collect();
        self.push_result(self.shape(x), out, &[x], Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|v| v * v).collect();
        self.push_result(self.shape(x), out, &[x], Op::Square(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.data(x).iter().map(|&v| v as f64).sum();
        let v = self.push_result(Shape::scalar(), vec![s as f32], &[x], Op::Sum(x));
        self.with_exact(v, s)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.shape(x).numel().max(1) as f64;
        let s: f64 = self.data(x).iter().map(|&v| v as f64).sum::<f64>() / n;
        let v = self.push_result(Shape::scalar(), vec![s as f32], &[x], Op::Mean(x));
        self.with_exact(v, s)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.plane() == 0 {
            return Err(Error::dim("height", "non-empty spatial extent", s));
        }
        let p = s.plane();
        let out = self
            .data(x)
            .chunks(p)
            .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / p as f64) as f32)
            .collect();
        Ok(self.push_result(
            Shape::new(s.batch(), s.channels(), 1, 1),
            out,
            &[x],
            Op::GlobalAvgPool(x),
        ))
    }

    /// Channel concatenation with `a`'s channels first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.batch() != sb.batch() {
            return Err(Error::dim("batch", sa, sb));
        }
        if (sa.height(), sa.width()) != (sb.height(), sb.width()) {
            let axis = if sa.height() != sb.height() {
                "height"
            } else {
                "width"
            };
            return Err(Error::dim(axis, sa, sb));
        }
        let (ca, cb, p) = (sa.channels(), sb.channels(), sa.plane());
        let mut out = Vec::with_capacity(sa.numel() + sb.numel());
        for n in 0..sa.batch() {
            out.extend_from_slice(&self.data(a)[n * ca * p..(n + 1) * ca * p]);
            out.extend_from_slice(&self.data(b)[n * cb * p..(n + 1) * cb * p]);
        }
        let shape = Shape::new(sa.batch(), ca + cb, sa.height(), sa.width());
        Ok(self.push_result(shape, out, &[a, b], Op::ConcatChannels(a, b)))
    }

    /// Per-instance, per-channel standardisation over the spatial extent
    /// (population variance), followed by the affine `gamma·x̂ + beta`.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        let s = self.shape(x);
        let c = s.channels();
        for (axis, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v).numel() != c {
                return Err(Error::dim(axis, c, self.shape(v).numel()));
            }
        }
        if s.plane() == 0 {
            return Err(Error::dim("height", "non-empty spatial extent", s));
        }
        let (gm, bt) = (self.data(gamma), self.data(beta));
        let mut out = Vec::with_capacity(s.numel());
        for (i, plane) in self.data(x).chunks(s.plane()).enumerate() {
            let ch = i % c;
            let (mean, inv_std) = plane_stats(plane, eps);
            out.extend(
                plane
                    .iter()
                    .map(|&v| gm[ch] * (((v as f64 - mean) * inv_std) as f32) + bt[ch]),
            );
        }
        Ok(self.push_result(
            s,
            out,
            &[x, gamma, beta],
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                eps,
            },
        ))
    }

    /// Soft on-off gate `α² / (α² + ε)`, elementwise.
    pub fn gate(&mut self, alpha: Var, eps: f32) -> Var {
        let out = self
            .data(alpha)
            .iter()
            .map(|&a| gate_value(a, eps))
            .collect();
        self.push_result(self.shape(alpha), out, &[alpha], Op::Gate { alpha, eps })
    }

    /// `(1 - w)·x + w·normalized` with `w` broadcast over each spatial plane.
    pub fn recombine(&mut self, x: Var, normalized: Var, w: Var) -> Result<Var> {
        let s = self.shape(x);
        ensure_same_shape(s, self.shape(normalized))?;
        let ws = self.shape(w);
        if ws != Shape::new(s.batch(), s.channels(), 1, 1) {
            return Err(Error::dim(
                "channel",
                Shape::new(s.batch(), s.channels(), 1, 1),
                ws,
            ));
        }
        let p = s.plane();
        let wd = self.data(w);
        let mut out = Vec::with_capacity(s.numel());
        for (i, (xp, np)) in self
            .data(x)
            .chunks(p)
            .zip(self.data(normalized).chunks(p))
            .enumerate()
        {
            let wi = wd[i];
            if wi == 0.0 {
                out.extend_from_slice(xp);
            } else {
                out.extend(xp.iter().zip(np).map(|(&a, &b)| (1.0 - wi) * a + wi * b));
            }
        }
        Ok(self.push_result(
            s,
            out,
            &[x, normalized, w],
            Op::Recombine { x, normalized, w },
        ))
    }

    pub fn sobel_magnitude(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let mut out = Vec::with_capacity(s.numel());
        for plane in self.data(x).chunks(s.plane().max(1)) {
            out.extend(sobel::magnitude(plane, s.height(), s.width()));
        }
        self.push_result(s, out, &[x], Op::Sobel(x))
    }

    pub fn dft2_amplitude(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let mut out = Vec::with_capacity(s.numel());
        for plane in self.data(x).chunks(s.plane().max(1)) {
            out.extend(dft::amplitude(plane, s.height(), s.width()));
        }
        self.push_result(s, out, &[x], Op::DftAmplitude(x))
    }

    /// Accumulates `d loss / d v` into every reachable node that requires a
    /// gradient. The recorded operations are released afterwards; a graph
    /// supports a single backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract("graph already consumed by backward".into()));
        }
        if !self.shape(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got {}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].value.requires_grad {
                self.backprop_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.value.requires_grad {
                node.value.grad = Some(g.unwrap_or_else(|| vec![0.0; node.value.numel()]));
            }
            node.op = Op::Leaf;
        }
        self.consumed = true;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, delta: Vec<f32>| {
            if !self.requires_grad(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
                slot @ None => *slot = Some(delta),
            }
        };
        match node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let need = [
                    self.requires_grad(input),
                    self.requires_grad(weight),
                    bias.is_some_and(|b| self.requires_grad(b)),
                ];
                let r = conv::conv2d_backward(&geom, self.data(input), self.data(weight), g, need);
                if let Some(d) = r.input {
                    acc(input, d);
                }
                if let Some(d) = r.weight {
                    acc(weight, d);
                }
                if let (Some(b), Some(d)) = (bias, r.bias) {
                    acc(b, d);
                }
            }
            Op::Relu(x) => {
                let d = self
                    .data(x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 });
                acc(x, d.collect());
            }
            Op::Add(a, b) => {
                acc(a, g.to_vec());
                acc(b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(a, g.to_vec());
                acc(b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                if self.requires_grad(a) {
                    acc(a, g.iter().zip(self.data(b)).map(|(x, y)| x * y).collect());
                }
                if self.requires_grad(b) {
                    acc(b, g.iter().zip(self.data(a)).map(|(x, y)| x * y).collect());
                }
            }
            Op::Scale(x, k) => acc(x, g.iter().map(|v| v * k).collect()),
            Op::Abs(x) => {
                let d = self.data(x).iter().zip(g).map(|(&v, &gv)| {
                    if v > 0.0 {
                        gv
                    } else if v < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                });
                acc(x, d.collect());
            }
            Op::Square(x) => {
                acc(
                    x,
                    self.data(x)
                        .iter()
                        .zip(g)
                        .map(|(v, gv)| 2.0 * v * gv)
                        .collect(),
                );
            }
            Op::Sum(x) => acc(x, vec![g[0]; self.shape(x).numel()]),
            Op::Mean(x) => {
                let n = self.shape(x).numel();
                acc(x, vec![(g[0] as f64 / n as f64) as f32; n]);
            }
            Op::GlobalAvgPool(x) => {
                let p = self.shape(x).plane();
                let mut d = Vec::with_capacity(self.shape(x).numel());
                for &gv in g {
                    d.extend(std::iter::repeat_n((gv as f64 / p as f64) as f32, p));
                }
                acc(x, d);
            }
            Op::ConcatChannels(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (la, lb) = (sa.channels() * sa.plane(), sb.channels() * sb.plane());
                let mut da = Vec::with_capacity(sa.numel());
                let mut db = Vec::with_capacity(sb.numel());
                for chunk in g.chunks(la + lb) {
                    da.extend_from_slice(&chunk[..la]);
                    db.extend_from_slice(&chunk[la..]);
                }
                acc(a, da);
                acc(b, db);
            }
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                eps,
            } => {
                let s = self.shape(x);
                let (c, p) = (s.channels(), s.plane());
                let gm = self.data(gamma);
                let mut dx = vec![0.0f32; s.numel()];
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                for (i, plane) in self.data(x).chunks(p).enumerate() {
                    let ch = i % c;
                    let (mean, inv_std) = plane_stats(plane, eps);
                    let gp = &g[i * p..(i + 1) * p];
                    let (mut s_dxh, mut s_dxh_xh) = (0.0f64, 0.0f64);
                    for (&v, &gv) in plane.iter().zip(gp) {
                        let xh = (v as f64 - mean) * inv_std;
                        let dxh = gv as f64 * gm[ch] as f64;
                        s_dxh += dxh;
                        s_dxh_xh += dxh * xh;
                        dgamma[ch] += gv as f64 * xh;
                        dbeta[ch] += gv as f64;
                    }
                    let (m1, m2) = (s_dxh / p as f64, s_dxh_xh / p as f64);
                    for ((&v, &gv), out) in plane.iter().zip(gp).zip(&mut dx[i * p..(i + 1) * p]) {
                        let xh = (v as f64 - mean) * inv_std;
                        let dxh = gv as f64 * gm[ch] as f64;
                        *out = ((dxh - m1 - xh * m2) * inv_std) as f32;
                    }
                }
                acc(x, dx);
                acc(gamma, dgamma.into_iter().map(|v| v as f32).collect());
                acc(beta, dbeta.into_iter().map(|v| v as f32).collect());
            }
            Op::Gate { alpha, eps } => {
                let d = self.data(alpha).iter().zip(g).map(|(&a, &gv)| {
                    let (a, e) = (a as f64, eps as f64);
                    let den = a * a + e;
                    (gv as f64 * 2.0 * a * e / (den * den)) as f32
                });
                acc(alpha, d.collect());
            }
            Op::Recombine { x, normalized, w } => {
                let p = self.shape(x).plane();
                let wd = self.data(w);
                if self.requires_grad(x) {
                    let d = g.iter().enumerate().map(|(i, gv)| (1.0 - wd[i / p]) * gv);
                    acc(x, d.collect());
                }
                if self.requires_grad(normalized) {
                    let d = g.iter().enumerate().map(|(i, gv)| wd[i / p] * gv);
                    acc(normalized, d.collect());
                }
                if self.requires_grad(w) {
                    let (xd, nd) = (self.data(x), self.data(normalized));
                    let d = (0..wd.len()).map(|k| {
                        let r = k * p..(k + 1) * p;
                        g[r.clone()]
                            .iter()
                            .zip(&xd[r.clone()])
                            .zip(&nd[r])
                            .map(|((&gv, &a), &b)| gv as f64 * (b as f64 - a as f64))
                            .sum::<f64>() as f32
                    });
                    acc(w, d.collect());
                }
            }
            Op::Sobel(x) => {
                let s = self.shape(x);
                let p = s.plane();
                let mut d = Vec::with_capacity(s.numel());
                for (plane, gp) in self.data(x).chunks(p).zip(g.chunks(p)) {
                    d.extend(sobel::magnitude_backward(plane, s.height(), s.width(), gp));
                }
                acc(x, d);
            }
            Op::DftAmplitude(x) => {
                let s = self.shape(x);
                let p = s.plane();
                let mut d = Vec::with_capacity(s.numel());
                for (plane, gp) in self.data(x).chunks(p).zip(g.chunks(p)) {
                    d.extend(dft::amplitude_backward(plane, s.height(), s.width(), gp));
                }
                acc(x, d);
            }
        }
    }
}

/// Largest `f32` below one; `w` saturates here instead of rounding up to 1.
const GATE_CEILING: f32 = 1.0 - f32::EPSILON / 2.0;

pub(crate) fn gate_value(alpha: f32, eps: f32) -> f32 {
    let (a, e) = (alpha as f64, eps as f64);
    ((a * a / (a * a + e)) as f32).min(GATE_CEILING)
}

/// Mean and `1/√(σ² + eps)` of one plane, in `f64`.
fn plane_stats(plane: &[f32], eps: f32) -> (f64, f64) {
    let n = plane.len() as f64;
    let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = plane
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    (mean, 1.0 / (var + eps as f64).sqrt())
}
