//! Numeric kernels behind the differentiable graph operations.

pub mod conv;
pub(crate) mod dft;
pub(crate) mod sobel;

pub use conv::{conv2d, Padding};
pub use sobel::{SOBEL_X, SOBEL_Y};

use crate::tensor::Tensor;

/// Per-plane Sobel magnitude of a plain tensor.
pub fn sobel_magnitude(t: &Tensor) -> Tensor {
    let s = t.shape();
    let mut out = Vec::with_capacity(s.numel());
    for plane in t.data().chunks(s.plane().max(1)) {
        out.extend(sobel::magnitude(plane, s.height(), s.width()));
    }
    Tensor::from_vec(s, out).expect("shape preserved")
}

/// Per-plane normalised DFT amplitude of a plain tensor.
pub fn dft2_amplitude(t: &Tensor) -> Tensor {
    let s = t.shape();
    let mut out = Vec::with_capacity(s.numel());
    for plane in t.data().chunks(s.plane().max(1)) {
        out.extend(dft::amplitude(plane, s.height(), s.width()));
    }
    Tensor::from_vec(s, out).expect("shape preserved")
}
