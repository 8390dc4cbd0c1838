//! Binary PGM/PPM codec, brightness jitter and luminance histograms.
//!
//! Images live in tensors of shape `(1, C, H, W)` with values in `[0, 1]`;
//! `C` is 1 for P5 (grayscale) files and 3 for P6 (RGB) files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Luminance weights for RGB → gray.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Debug)]
pub struct ImagePair {
    pub id: String,
    /// `(1, 3, H, W)`
    pub visible: Tensor,
    /// `(1, 1, H, W)`
    pub infrared: Tensor,
}

impl ImagePair {
    pub fn new(id: impl Into<String>, visible: Tensor, infrared: Tensor) -> Result<Self> {
        let (vs, is) = (visible.shape(), infrared.shape());
        if vs.channels() != 3 {
            return Err(Error::dim("channel", "3 (visible)", vs.channels()));
        }
        if is.channels() != 1 {
            return Err(Error::dim("channel", "1 (infrared)", is.channels()));
        }
        if (vs.height(), vs.width()) != (is.height(), is.width()) {
            return Err(Error::Data(format!(
                "visible is {}x{} but infrared is {}x{}",
                vs.width(),
                vs.height(),
                is.width(),
                is.height()
            )));
        }
        Ok(ImagePair {
            id: id.into(),
            visible,
            infrared,
        })
    }

    pub fn height(&self) -> usize {
        self.visible.shape().height()
    }

    pub fn width(&self) -> usize {
        self.visible.shape().width()
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(start, format!("{what} out of range")))
    }
}

/// Decodes an in-memory P5/P6 file.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some(m) => {
            return Err(Error::format(
                0,
                format!("unsupported magic {:?}", String::from_utf8_lossy(m)),
            ))
        }
        None => return Err(Error::format(0, "file shorter than magic number")),
    };
    let mut r = HeaderReader { bytes, pos: 2 };
    if !bytes
        .get(2)
        .is_some_and(|b| b.is_ascii_whitespace() || *b == b'#')
    {
        return Err(Error::format(2, "expected whitespace after magic"));
    }
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval_at = {
        r.skip_space();
        r.pos
    };
    let maxval = r.number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(
            maxval_at,
            format!("maxval {maxval} unsupported, expected 255"),
        ));
    }
    if !bytes.get(r.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(
            r.pos,
            "expected single whitespace before payload",
        ));
    }
    let start = r.pos + 1;
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::format(start, "image extents overflow"))?;
    let payload = &bytes[start..];
    if payload.len() < need {
        return Err(Error::format(
            bytes.len(),
            format!(
                "truncated payload: expected {need} bytes, found {}",
                payload.len()
            ),
        ));
    }
    let mut data = vec![0.0f32; need];
    // Interleaved HWC on disk, planar CHW in memory.
    let plane = width * height;
    for (i, &b) in payload[..need].iter().enumerate() {
        let (pixel, c) = (i / channels, i % channels);
        data[c * plane + pixel] = b as f32 / 255.0;
    }
    Tensor::from_vec(Shape::new(1, channels, height, width), data)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}

/// `round(clamp(v, 0, 1)·255)` with halves rounded up.
pub fn quantize(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v as f64 * 255.0 + 0.5).floor() as u8
}

/// Encodes batch item 0 of a 1- or 3-channel tensor as P5/P6.
pub fn encode_pnm(image: &Tensor) -> Result<Vec<u8>> {
    let s = image.shape();
    let magic = match s.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::dim("channel", "1 or 3", c)),
    };
    let (h, w, c) = (s.height(), s.width(), s.channels());
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(quantize(image.at(0, ch, y, x)));
            }
        }
    }
    Ok(out)
}

pub fn write_image(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pnm(image)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Exposure perturbation `clamp(gain · v^gamma, 0, 1)`.
pub fn brightness_jitter(visible: &Tensor, gain: f32, gamma: f32) -> Result<Tensor> {
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(Error::Parameter(format!(
            "gain must be positive, got {gain}"
        )));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Parameter(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    if gamma == 1.0 {
        return Ok(visible.map(|v| (gain * v).clamp(0.0, 1.0)));
    }
    Ok(visible.map(|v| (gain * v.max(0.0).powf(gamma)).clamp(0.0, 1.0)))
}

/// Luminance of batch item `n` as `f64` values.
pub fn luminance(image: &Tensor, n: usize) -> Result<Vec<f64>> {
    let s = image.shape();
    match s.channels() {
        1 => Ok(image.plane(n, 0).iter().map(|&v| v as f64).collect()),
        3 => {
            let (r, g, b) = (image.plane(n, 0), image.plane(n, 1), image.plane(n, 2));
            Ok((0..s.plane())
                .map(|i| LUMA[0] * r[i] as f64 + LUMA[1] * g[i] as f64 + LUMA[2] * b[i] as f64)
                .collect())
        }
        c => Err(Error::dim("channel", "1 or 3", c)),
    }
}

/// Gray level in `0..=255` of a luminance value.
pub fn gray_level(v: f64) -> usize {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as usize
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram {
    pub bins: [u64; 256],
    pub total: u64,
}

impl Histogram {
    /// Normalised-histogram L1 distance, in `[0, 2]`.
    pub fn l1_distance(&self, other: &Histogram) -> f64 {
        let (ta, tb) = (self.total.max(1) as f64, other.total.max(1) as f64);
        self.bins
            .iter()
            .zip(&other.bins)
            .map(|(&a, &b)| (a as f64 / ta - b as f64 / tb).abs())
            .sum()
    }

    /// `bin TAB count` lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::with_capacity(256 * 8);
        for (i, c) in self.bins.iter().enumerate() {
            s.push_str(&format!("{i}\t{c}\n"));
        }
        s
    }
}

/// 256-bin luminance histogram of batch item 0.
pub fn histogram(image: &Tensor) -> Result<Histogram> {
    let lum = luminance(image, 0)?;
    let mut bins = [0u64; 256];
    for v in &lum {
        bins[gray_level(*v)] += 1;
    }
    Ok(Histogram {
        bins,
        total: lum.len() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_p5() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 128, 255, 64]);
        let t = decode_pnm(&bytes).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 1, 2, 2));
        let want = [0.0, 0.50196, 1.0, 0.25098];
        for (a, b) in t.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn decodes_white_p6() {
        let mut bytes = b"P6 3 2 255\n".to_vec();
        bytes.extend([255u8; 18]);
        let t = decode_pnm(&bytes).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 2, 3));
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(
            decode_pnm(b"P7\n1 1\n255\n\0"),
            Err(Error::Format { offset: 0, .. })
        ));
        let err = decode_pnm(b"P5\n2 2\n255\n\0\0").unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        let err = decode_pnm(b"P5\n1 1\n65535\n\0\0").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 7, .. }), "{err}");
        assert!(decode_pnm(b"P5").is_err());
    }

    #[test]
    fn quantizer() {
        assert_eq!(quantize(1.5), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(f32::NAN), 0);
    }

    #[test]
    fn jitter_cases() {
        let t = Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![0.3, 0.8, 0.0]).unwrap();
        assert_eq!(brightness_jitter(&t, 1.0, 1.0).unwrap().data(), t.data());
        let j = brightness_jitter(&t, 2.0, 1.0).unwrap();
        assert!((j.data()[0] - 0.6).abs() < 1e-7);
        assert_eq!(j.data()[1], 1.0);
        assert!(brightness_jitter(&t, 0.0, 1.0).is_err());
        assert!(brightness_jitter(&t, 1.0, -1.0).is_err());
        let g = brightness_jitter(&t, 1.0, 2.0).unwrap();
        assert!((g.data()[0] - 0.09).abs() < 1e-6);
    }

    #[test]
    fn histogram_cases() {
        let black = Tensor::zeros(Shape::new(1, 3, 4, 5));
        let h = histogram(&black).unwrap();
        assert_eq!(h.bins[0], 20);
        assert_eq!(h.total, 20);
        assert_eq!(h.bins[1..].iter().sum::<u64>(), 0);

        let mut data = vec![0.0; 8];
        data[4..].fill(1.0);
        let half = Tensor::from_vec(Shape::new(1, 1, 2, 4), data).unwrap();
        let h = histogram(&half).unwrap();
        assert_eq!((h.bins[0], h.bins[255]), (4, 4));
        assert_eq!(h.l1_distance(&h), 0.0);
        assert_eq!(h.to_tsv().lines().count(), 256);
    }

    #[test]
    fn pair_validation() {
        let v = Tensor::zeros(Shape::new(1, 3, 4, 4));
        let i = Tensor::zeros(Shape::new(1, 1, 4, 5));
        let err = ImagePair::new("x", v.clone(), i).unwrap_err();
        assert!(err.to_string().contains("4x4") && err.to_string().contains("5x4"));
        assert!(ImagePair::new("x", v, Tensor::zeros(Shape::new(1, 1, 4, 4))).is_ok());
    }
}
