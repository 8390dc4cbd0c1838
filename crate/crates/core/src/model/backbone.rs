//! Shared-weight encoder, channel-concatenation junction and decoder.
//!
//! encoder: conv3×3(3→C) · ReLU · conv3×3(C→C) · ReLU
//! decoder: conv3×3(2C→C) · ReLU · conv3×3(C→3), linear output

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::ops::Padding;
use crate::tensor::{Shape, Tensor};

pub const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams {
    pub channels: usize,
    pub enc1_weight: Tensor,
    pub enc1_bias: Tensor,
    pub enc2_weight: Tensor,
    pub enc2_bias: Tensor,
    pub dec1_weight: Tensor,
    pub dec1_bias: Tensor,
    pub dec2_weight: Tensor,
    pub dec2_bias: Tensor,
}

/// Graph handles for one insertion of [`BackboneParams`], in [`BackboneParams::NAMES`] order.
#[derive(Clone, Copy, Debug)]
pub struct BackboneVars(pub [Var; 8]);

/// Kaiming-uniform (fan-in) conv weight: bound `√(6 / fan_in)`.
pub(crate) fn kaiming_uniform(rng: &mut ChaCha8Rng, shape: Shape, scale: f32) -> Tensor {
    let [_, in_c, kh, kw] = shape.0;
    let bound = (6.0 / (in_c * kh * kw) as f64).sqrt() as f32 * scale;
    let data = (0..shape.numel())
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::from_vec(shape, data).expect("numel matches")
}

impl BackboneParams {
    pub const NAMES: [&'static str; 8] = [
        "enc1.weight",
        "enc1.bias",
        "enc2.weight",
        "enc2.bias",
        "dec1.weight",
        "dec1.bias",
        "dec2.weight",
        "dec2.bias",
    ];

    pub fn shapes(channels: usize) -> [Shape; 8] {
        let c = channels;
        [
            Shape::new(c, IMAGE_CHANNELS, 3, 3),
            Shape::new(1, c, 1, 1),
            Shape::new(c, c, 3, 3),
            Shape::new(1, c, 1, 1),
            Shape::new(c, 2 * c, 3, 3),
            Shape::new(1, c, 1, 1),
            Shape::new(IMAGE_CHANNELS, c, 3, 3),
            Shape::new(1, IMAGE_CHANNELS, 1, 1),
        ]
    }

    /// Kaiming-uniform weights and zero biases, deterministic per seed.
    pub fn init(seed: u64, channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Parameter("channel count must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = Self::shapes(channels).map(|s| {
            if s.0[2] == 3 {
                kaiming_uniform(&mut rng, s, 1.0)
            } else {
                Tensor::zeros(s)
            }
        });
        Self::from_tensors(channels, tensors.into())
    }

    pub fn from_tensors(channels: usize, tensors: Vec<Tensor>) -> Result<Self> {
        let shapes = Self::shapes(channels);
        if tensors.len() != shapes.len() {
            return Err(Error::dim(
                "backbone parameters",
                shapes.len(),
                tensors.len(),
            ));
        }
        for ((t, s), name) in tensors.iter().zip(shapes).zip(Self::NAMES) {
            if t.shape() != s {
                return Err(Error::dim(
                    "backbone parameter",
                    format!("{name} {s}"),
                    t.shape(),
                ));
            }
        }
        let mut it = tensors.into_iter().map(|t| t.with_requires_grad(false));
        let mut next = || it.next().unwrap();
        Ok(BackboneParams {
            channels,
            enc1_weight: next(),
            enc1_bias: next(),
            enc2_weight: next(),
            enc2_bias: next(),
            dec1_weight: next(),
            dec1_bias: next(),
            dec2_weight: next(),
            dec2_bias: next(),
        })
    }

    pub fn tensors(&self) -> [&Tensor; 8] {
        [
            &self.enc1_weight,
            &self.enc1_bias,
            &self.enc2_weight,
            &self.enc2_bias,
            &self.dec1_weight,
            &self.dec1_bias,
            &self.dec2_weight,
            &self.dec2_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.enc1_weight,
            &mut self.enc1_bias,
            &mut self.enc2_weight,
            &mut self.enc2_bias,
            &mut self.dec1_weight,
            &mut self.dec1_bias,
            &mut self.dec2_weight,
            &mut self.dec2_bias,
        ]
    }

    /// Places the parameters on `g`, as trainable leaves or constants.
    pub fn insert(&self, g: &mut Graph, trainable: bool) -> BackboneVars {
        BackboneVars(self.tensors().map(|t| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        }))
    }
}

/// Shared encoder: maps a 3-channel image to a C-channel feature map.
pub fn encode(g: &mut Graph, image: Var, vars: &BackboneVars) -> Result<Var> {
    let c = g.value(image).shape().channels();
    if c != IMAGE_CHANNELS {
        return Err(Error::dim("channel", IMAGE_CHANNELS, c));
    }
    let [w1, b1, w2, b2, ..] = vars.0;
    let h = g.conv2d(image, w1, Some(b1), Padding::Reflect, 1)?;
    let h = g.relu(h);
    let h = g.conv2d(h, w2, Some(b2), Padding::Reflect, 1)?;
    Ok(g.relu(h))
}

/// Channel concatenation, gated visible features first.
pub fn fuse_features(g: &mut Graph, gated_visible: Var, infrared: Var) -> Result<Var> {
    let (a, b) = (g.value(gated_visible).shape(), g.value(infrared).shape());
    crate::tensor::ensure_same_shape(a, b)?;
    g.concat_channels(gated_visible, infrared)
}

/// Decoder producing the raw (unclamped) 3-channel fused image.
pub fn decode(g: &mut Graph, fused: Var, vars: &BackboneVars) -> Result<Var> {
    let [.., w3, b3, w4, b4] = vars.0;
    let expected = g.value(w3).shape().0[1];
    let c = g.value(fused).shape().channels();
    if c != expected {
        return Err(Error::dim("channel", expected, c));
    }
    let h = g.conv2d(fused, w3, Some(b3), Padding::Reflect, 1)?;
    let h = g.relu(h);
    g.conv2d(h, w4, Some(b4), Padding::Reflect, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = BackboneParams::init(7, 4).unwrap();
        let b = BackboneParams::init(7, 4).unwrap();
        let c = BackboneParams::init(8, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.enc1_weight.data(), c.enc1_weight.data());
        for (t, name) in a.tensors().into_iter().zip(BackboneParams::NAMES) {
            if name.ends_with("bias") {
                assert!(t.data().iter().all(|&v| v == 0.0));
            } else {
                let [_, i, kh, kw] = t.shape().0;
                let bound = (6.0 / (i * kh * kw) as f32).sqrt();
                assert!(t.data().iter().all(|v| v.abs() <= bound));
            }
        }
        assert!(BackboneParams::init(1, 0).is_err());
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let p = BackboneParams::init(1, 4).unwrap();
        let mut g = Graph::new();
        let vars = p.insert(&mut g, false);
        let x = g.constant(Tensor::zeros(Shape::new(2, 3, 5, 5)));
        let f = encode(&mut g, x, &vars).unwrap();
        assert_eq!(g.value(f).shape(), Shape::new(2, 4, 5, 5));
        assert!(g.value(f).data().iter().all(|&v| v == 0.0));

        let z = g.constant(Tensor::zeros(Shape::new(2, 8, 5, 5)));
        let out = decode(&mut g, z, &vars).unwrap();
        assert_eq!(g.value(out).shape(), Shape::new(2, 3, 5, 5));
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));

        let bad = g.constant(Tensor::zeros(Shape::new(1, 1, 5, 5)));
        assert!(matches!(
            encode(&mut g, bad, &vars),
            Err(Error::Dimension {
                axis: "channel",
                ..
            })
        ));
        assert!(decode(&mut g, bad, &vars).is_err());
    }

    #[test]
    fn junction_orders_visible_first() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![3.0, 4.0]).unwrap());
        let c = fuse_features(&mut g, a, b).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
        let d = g.constant(Tensor::zeros(Shape::new(1, 3, 1, 1)));
        assert!(fuse_features(&mut g, a, d).is_err());
    }
}
