//! Brightness adaptive gate.
//!
//! Visible features `x` are instance-normalised into `x_norm`, a small
//! squeeze network predicts one logit `α` per channel, and the soft switch
//! `w = α² / (α² + ε)` blends the two: `x_g = (1 − w)·x + w·x_norm`.
//! Channels with `w ≈ 0` pass through untouched; channels with `w ≈ 1` are
//! replaced by their normalised version.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backbone::kaiming_uniform;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::ops::Padding;
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_REDUCTION: usize = 4;
pub const DEFAULT_EPS_GATE: f32 = 1e-4;
pub const DEFAULT_EPS_NORM: f32 = 1e-5;

/// Scale applied to the Kaiming bound of the second gate layer at init, so
/// that `|α|` starts around 1e-3 and `w` near zero while `∂w/∂α` is non-zero.
pub const GATE_OUTPUT_INIT_SCALE: f32 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct BagParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub gate1_weight: Tensor,
    pub gate1_bias: Tensor,
    pub gate2_weight: Tensor,
    pub gate2_bias: Tensor,
    pub reduction: usize,
    pub eps_gate: f32,
    pub eps_norm: f32,
}

#[derive(Clone, Copy, Debug)]
pub struct BagVars(pub [Var; 6]);

/// Per-instance, per-channel gate logits and soft indicators.
#[derive(Clone, Debug, PartialEq)]
pub struct GateDecision {
    /// `(B, C, 1, 1)`
    pub alpha: Tensor,
    /// `(B, C, 1, 1)`, in `[0, 1)` unless the gate is ablated.
    pub w: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct GateVars {
    pub alpha: Var,
    pub w: Var,
}

impl GateVars {
    pub fn decision(&self, g: &Graph) -> GateDecision {
        GateDecision {
            alpha: g.value(self.alpha).detach(),
            w: g.value(self.w).detach(),
        }
    }
}

impl GateDecision {
    /// `channel_index TAB alpha TAB w` lines for batch item `n`.
    pub fn to_tsv(&self, n: usize) -> String {
        let c = self.alpha.shape().channels();
        let mut s = String::new();
        for ch in 0..c {
            s.push_str(&format!(
                "{ch}\t{}\t{}\n",
                self.alpha.at(n, ch, 0, 0),
                self.w.at(n, ch, 0, 0)
            ));
        }
        s
    }
}

impl BagParams {
    pub const NAMES: [&'static str; 6] = [
        "bag.gamma",
        "bag.beta",
        "bag.gate1.weight",
        "bag.gate1.bias",
        "bag.gate2.weight",
        "bag.gate2.bias",
    ];

    pub fn shapes(channels: usize, reduction: usize) -> Result<[Shape; 6]> {
        if channels == 0 || reduction == 0 || channels % reduction != 0 {
            return Err(Error::Parameter(format!(
                "channels ({channels}) must be a positive multiple of reduction ({reduction})"
            )));
        }
        let hidden = channels / reduction;
        Ok([
            Shape::new(1, channels, 1, 1),
            Shape::new(1, channels, 1, 1),
            Shape::new(hidden, channels, 1, 1),
            Shape::new(1, hidden, 1, 1),
            Shape::new(channels, hidden, 1, 1),
            Shape::new(1, channels, 1, 1),
        ])
    }

    /// `γ = 1`, `β = 0`, zero gate biases, near-zero second gate layer. The
    /// first gate layer takes the magnitude of a Kaiming-uniform draw: pooled
    /// encoder features are non-negative, so every hidden unit starts active.
    pub fn init(
        seed: u64,
        channels: usize,
        reduction: usize,
        eps_gate: f32,
        eps_norm: f32,
    ) -> Result<Self> {
        let shapes = Self::shapes(channels, reduction)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba6_9a7e);
        let tensors = vec![
            Tensor::full(shapes[0], 1.0),
            Tensor::zeros(shapes[1]),
            kaiming_uniform(&mut rng, shapes[2], 1.0).map(f32::abs),
            Tensor::zeros(shapes[3]),
            kaiming_uniform(&mut rng, shapes[4], GATE_OUTPUT_INIT_SCALE),
            Tensor::zeros(shapes[5]),
        ];
        Self::from_tensors(reduction, eps_gate, eps_norm, tensors)
    }

    pub fn from_tensors(
        reduction: usize,
        eps_gate: f32,
        eps_norm: f32,
        tensors: Vec<Tensor>,
    ) -> Result<Self> {
        if !(eps_gate > 0.0) || !(eps_norm > 0.0) {
            return Err(Error::Parameter(format!(
                "eps_gate ({eps_gate}) and eps_norm ({eps_norm}) must be positive"
            )));
        }
        let channels = tensors.first().map_or(0, |t| t.numel());
        let shapes = Self::shapes(channels, reduction)?;
        if tensors.len() != shapes.len() {
            return Err(Error::dim("gate parameters", shapes.len(), tensors.len()));
        }
        for ((t, s), name) in tensors.iter().zip(shapes).zip(Self::NAMES) {
            if t.shape() != s {
                return Err(Error::dim(
                    "gate parameter",
                    format!("{name} {s}"),
                    t.shape(),
                ));
            }
        }
        let mut it = tensors.into_iter().map(|t| t.with_requires_grad(false));
        let mut next = || it.next().unwrap();
        Ok(BagParams {
            gamma: next(),
            beta: next(),
            gate1_weight: next(),
            gate1_bias: next(),
            gate2_weight: next(),
            gate2_bias: next(),
            reduction,
            eps_gate,
            eps_norm,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn tensors(&self) -> [&Tensor; 6] {
        [
            &self.gamma,
            &self.beta,
            &self.gate1_weight,
            &self.gate1_bias,
            &self.gate2_weight,
            &self.gate2_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.gamma,
            &mut self.beta,
            &mut self.gate1_weight,
            &mut self.gate1_bias,
            &mut self.gate2_weight,
            &mut self.gate2_bias,
        ]
    }

    pub fn insert(&self, g: &mut Graph, trainable: bool) -> BagVars {
        BagVars(self.tensors().map(|t| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        }))
    }
}

/// `γ·(x − μ)/√(σ² + eps) + β` per instance and channel.
pub fn instance_normalize(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    eps_norm: f32,
) -> Result<Var> {
    g.instance_norm(x, gamma, beta, eps_norm)
}

/// `α = W₂·ReLU(W₁·GAP(x) + b₁) + b₂`, `w = α²/(α² + ε)`.
pub fn gate_indicators(g: &mut Graph, x: Var, vars: &BagVars, eps_gate: f32) -> Result<GateVars> {
    let [_, _, w1, b1, w2, b2] = vars.0;
    let pooled = g.global_avg_pool(x)?;
    let h = g.conv2d(pooled, w1, Some(b1), Padding::Zero, 1)?;
    let h = g.relu(h);
    let alpha = g.conv2d(h, w2, Some(b2), Padding::Zero, 1)?;
    let w = g.gate(alpha, eps_gate);
    Ok(GateVars { alpha, w })
}

/// `(1 − w)·x + w·x_norm`, channel-wise.
pub fn recombine(g: &mut Graph, x: Var, normalized: Var, w: Var) -> Result<Var> {
    g.recombine(x, normalized, w)
}

/// Full gate. With `disable_gate` every channel is normalised (`w ≡ 1`).
pub fn bag_forward(
    g: &mut Graph,
    x: Var,
    params: &BagParams,
    vars: &BagVars,
    disable_gate: bool,
) -> Result<(Var, GateVars)> {
    let [gamma, beta, ..] = vars.0;
    let normalized = instance_normalize(g, x, gamma, beta, params.eps_norm)?;
    let gate = gate_indicators(g, x, vars, params.eps_gate)?;
    if disable_gate {
        let ones = Tensor::full(g.value(gate.w).shape(), 1.0);
        let w = g.constant(ones);
        return Ok((
            normalized,
            GateVars {
                alpha: gate.alpha,
                w,
            },
        ));
    }
    let out = recombine(g, x, normalized, gate.w)?;
    Ok((out, gate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(values: Vec<f32>) -> Tensor {
        let n = values.len();
        Tensor::from_vec(Shape::new(1, 1, 1, n), values).unwrap()
    }

    #[test]
    fn normalizes_ramp() {
        let mut g = Graph::new();
        let x = g.constant(plane(vec![1.0, 2.0, 3.0, 4.0]));
        let gm = g.constant(Tensor::channel_vector(vec![1.0]));
        let bt = g.constant(Tensor::channel_vector(vec![0.0]));
        let y = instance_normalize(&mut g, x, gm, bt, 1e-12).unwrap();
        let want = [-1.3416, -0.4472, 0.4472, 1.3416];
        for (a, b) in g.value(y).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }

        let c = g.constant(plane(vec![0.3; 5]));
        let y = instance_normalize(&mut g, c, gm, bt, DEFAULT_EPS_NORM).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_is_applied() {
        // zero-mean, unit-variance channel
        let mut g = Graph::new();
        let x = g.constant(plane(vec![-1.0, 1.0, -1.0, 1.0]));
        let gm = g.constant(Tensor::channel_vector(vec![2.0]));
        let bt = g.constant(Tensor::channel_vector(vec![1.0]));
        let y = instance_normalize(&mut g, x, gm, bt, 1e-12).unwrap();
        for (a, b) in g.value(y).data().iter().zip([-1.0, 3.0, -1.0, 3.0]) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn gate_function_values() {
        let mut g = Graph::new();
        let a = g
            .constant(Tensor::from_vec(Shape::new(1, 4, 1, 1), vec![0.0, 0.1, -0.1, 1e6]).unwrap());
        let w = g.gate(a, 1e-4);
        let w = g.value(w).data();
        assert_eq!(w[0], 0.0);
        assert!((w[1] - 0.990099).abs() < 1e-6);
        assert_eq!(w[1], w[2]);
        assert!(w[3] < 1.0 && w[3] > 0.9999);
    }

    #[test]
    fn recombine_convex_combination() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![2.0, -0.0]).unwrap());
        let n = g.constant(Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.0, 5.0]).unwrap());
        let w = g.constant(Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.5, 0.0]).unwrap());
        let y = recombine(&mut g, x, n, w).unwrap();
        let y = g.value(y).data();
        assert_eq!(y[0], 1.0);
        assert_eq!(y[1].to_bits(), (-0.0f32).to_bits());

        let ones = g.constant(Tensor::full(Shape::new(1, 2, 1, 1), 1.0));
        let y = recombine(&mut g, x, n, ones).unwrap();
        assert_eq!(g.value(y).data(), g.value(n).data());

        let bad = g.constant(Tensor::zeros(Shape::new(1, 3, 1, 1)));
        assert!(recombine(&mut g, x, n, bad).is_err());
    }

    #[test]
    fn zero_gate_is_passthrough() {
        let mut p = BagParams::init(3, 8, 4, DEFAULT_EPS_GATE, DEFAULT_EPS_NORM).unwrap();
        for t in &mut p.tensors_mut()[2..] {
            t.data_mut().fill(0.0);
        }
        let x: Vec<f32> = (0..8 * 9).map(|i| ((i * 37) % 11) as f32 / 7.0).collect();
        let x = Tensor::from_vec(Shape::new(1, 8, 3, 3), x).unwrap();
        let mut g = Graph::new();
        let vars = p.insert(&mut g, true);
        let xv = g.constant(x.clone());
        let (out, gate) = bag_forward(&mut g, xv, &p, &vars, false).unwrap();
        assert!(g.value(gate.alpha).data().iter().all(|&a| a == 0.0));
        assert!(g.value(gate.w).data().iter().all(|&w| w == 0.0));
        assert_eq!(g.value(out).bits(), x.bits());
    }

    #[test]
    fn parameter_validation() {
        assert!(BagParams::init(0, 6, 4, 1e-4, 1e-5).is_err());
        assert!(BagParams::init(0, 8, 4, 0.0, 1e-5).is_err());
        assert!(BagParams::init(0, 8, 4, 1e-4, -1.0).is_err());
        let p = BagParams::init(0, 8, 4, 1e-4, 1e-5).unwrap();
        assert_eq!(p.gate1_weight.shape(), Shape::new(2, 8, 1, 1));
        assert_eq!(p.channels(), 8);
    }
}
