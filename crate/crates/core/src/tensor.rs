//! Dense rank-4 `f32` tensors in (batch, channel, height, width) layout.

use std::fmt;

use crate::error::{Error, Result};

/// Extents of a rank-4 tensor, ordered (batch, channel, height, width).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn batch(&self) -> usize {
        self.0[0]
    }

    pub fn channels(&self) -> usize {
        self.0[1]
    }

    pub fn height(&self) -> usize {
        self.0[2]
    }

    pub fn width(&self) -> usize {
        self.0[3]
    }

    /// Number of elements in one (batch, channel) plane.
    pub fn plane(&self) -> usize {
        self.0[2] * self.0[3]
    }

    pub fn is_scalar(&self) -> bool {
        self.0 == [1, 1, 1, 1]
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "{n}x{c}x{h}x{w}")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
    pub grad: Option<Vec<f32>>,
    pub requires_grad: bool,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad)
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::dim("data length", shape.numel(), data.len()));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self::full(Shape::scalar(), value)
    }

    /// Builds a `(1, n, 1, 1)` tensor from a per-channel vector.
    pub fn channel_vector(values: Vec<f32>) -> Self {
        let shape = Shape::new(1, values.len(), 1, 1);
        Tensor {
            shape,
            data: values,
            grad: None,
            requires_grad: false,
        }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Reads the single value of a scalar tensor.
    pub fn item(&self) -> f32 {
        debug_assert!(self.shape.is_scalar());
        self.data[0]
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: f32) {
        let i = self.index(n, c, y, x);
        self.data[i] = value;
    }

    fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cs, hs, ws] = self.shape.0;
        ((n * cs + c) * hs + y) * ws + x
    }

    /// The contiguous `(n, c)` spatial plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.channels() + c) * p;
        &self.data[start..start + p]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::dim("reshape", self.shape.numel(), shape.numel()));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        ensure_same_shape(self.shape, other.shape)?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            grad: None,
            requires_grad: false,
        })
    }

    pub fn maximum(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, f32::max)
    }

    pub fn clamp01(&self) -> Tensor {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Replicates a single-channel tensor `n` times along the channel axis.
    pub fn repeat_channels(&self, n: usize) -> Result<Tensor> {
        if self.shape.channels() != 1 {
            return Err(Error::dim("channel", 1, self.shape.channels()));
        }
        let [b, _, h, w] = self.shape.0;
        let p = h * w;
        let mut data = Vec::with_capacity(b * n * p);
        for i in 0..b {
            let plane = &self.data[i * p..(i + 1) * p];
            for _ in 0..n {
                data.extend_from_slice(plane);
            }
        }
        Tensor::from_vec(Shape::new(b, n, h, w), data)
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::Contract("cannot stack an empty list".into()))?;
        let [_, c, h, w] = first.shape.0;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        let mut n = 0;
        for t in items {
            let [tn, tc, th, tw] = t.shape.0;
            if (tc, th, tw) != (c, h, w) {
                return Err(Error::dim("stack", first.shape, t.shape));
            }
            data.extend_from_slice(&t.data);
            n += tn;
        }
        Tensor::from_vec(Shape::new(n, c, h, w), data)
    }

    /// Extracts batch item `n` as a batch-of-one tensor.
    pub fn batch_item(&self, n: usize) -> Tensor {
        let [_, c, h, w] = self.shape.0;
        let len = c * h * w;
        Tensor {
            shape: Shape::new(1, c, h, w),
            data: self.data[n * len..(n + 1) * len].to_vec(),
            grad: None,
            requires_grad: false,
        }
    }

    /// Returns a copy carrying only the values.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.clone(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn bits(&self) -> Vec<u32> {
        self.data.iter().map(|v| v.to_bits()).collect()
    }
}

pub(crate) fn ensure_same_shape(a: Shape, b: Shape) -> Result<()> {
    if a != b {
        let axis = match (0..4).find(|&i| a.0[i] != b.0[i]) {
            Some(0) => "batch",
            Some(1) => "channel",
            Some(2) => "height",
            _ => "width",
        };
        return Err(Error::dim(axis, a, b));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_must_match_extents() {
        assert!(Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
        assert!(Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 4]).is_ok());
    }

    #[test]
    fn repeat_and_stack() {
        let t = Tensor::from_vec(Shape::new(2, 1, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = t.repeat_channels(3).unwrap();
        assert_eq!(r.shape(), Shape::new(2, 3, 1, 2));
        assert_eq!(r.data(), &[1., 2., 1., 2., 1., 2., 3., 4., 3., 4., 3., 4.]);
        let s = Tensor::stack(&[&t, &t]).unwrap();
        assert_eq!(s.shape().batch(), 4);
        assert_eq!(s.batch_item(3).data(), &[3.0, 4.0]);
    }

    #[test]
    fn shape_mismatch_names_axis() {
        let err = ensure_same_shape(Shape::new(1, 3, 4, 4), Shape::new(1, 3, 5, 4)).unwrap_err();
        assert!(err.to_string().contains("height"));
    }
}
