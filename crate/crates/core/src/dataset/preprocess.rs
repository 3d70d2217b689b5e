//! Background subtraction, depth normalization and square resizing.

use serde::{Deserialize, Serialize};

use crate::dataset::sample::TactileSample;
use crate::error::{FafError, Result};

/// Maps raw depth into `[0, 1]` through `[min_val − ε, max_val + ε]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthNormalizer {
    pub min_val: f64,
    pub max_val: f64,
    pub eps: f64,
}

/// ε as a fraction of the training depth range.
pub const EPS_FRACTION: f64 = 0.05;

impl DepthNormalizer {
    pub fn new(min_val: f64, max_val: f64, eps: f64) -> Result<Self> {
        if !(max_val > min_val && eps > 0.0 && min_val.is_finite() && max_val.is_finite()) {
            return Err(FafError::Contract(format!(
                "depth normalizer needs max > min and eps > 0, got ({min_val}, {max_val}, {eps})"
            )));
        }
        Ok(Self { min_val, max_val, eps })
    }

    /// Normalizer whose lower and upper bounds are exactly 0 and 1.
    pub fn identity() -> Self {
        Self {
            min_val: 0.25,
            max_val: 0.75,
            eps: 0.25,
        }
    }

    /// Range of the depth pixels in `samples`, with ε = 5% of it.
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a TactileSample>) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in samples {
            for &d in &s.depth {
                lo = lo.min(d as f64);
                hi = hi.max(d as f64);
            }
        }
        if !(hi > lo) {
            return Err(FafError::DegenerateInput("training depth has no range".into()));
        }
        Self::new(lo, hi, EPS_FRACTION * (hi - lo))
    }

    pub fn lower(&self) -> f64 {
        self.min_val - self.eps
    }

    pub fn upper(&self) -> f64 {
        self.max_val + self.eps
    }

    pub fn apply(&self, d: f64) -> f64 {
        ((d - self.lower()) / (self.upper() - self.lower())).clamp(0.0, 1.0)
    }
}

/// Bilinear resize of a `channels × h × w` planar image to `channels × size × size`,
/// sampling with aligned corners (`src = dst · (n − 1) / (size − 1)`).
pub fn resize_bilinear(src: &[f64], channels: usize, h: usize, w: usize, size: usize) -> Vec<f64> {
    assert_eq!(src.len(), channels * h * w);
    let coords = |n: usize| -> Vec<(usize, usize, f64)> {
        (0..size)
            .map(|i| {
                let x = if size > 1 { i as f64 * (n - 1) as f64 / (size - 1) as f64 } else { 0.0 };
                let x0 = (x.floor() as usize).min(n - 1);
                let x1 = (x0 + 1).min(n - 1);
                (x0, x1, x - x0 as f64)
            })
            .collect()
    };
    let (ys, xs) = (coords(h), coords(w));
    let mut out = Vec::with_capacity(channels * size * size);
    for c in 0..channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

/// Center a `channels × h × w` planar image in an `n × n` square filled with `fill`.
fn pad_square(src: &[f64], channels: usize, h: usize, w: usize, fill: f64) -> (Vec<f64>, usize) {
    let n = h.max(w);
    let (top, left) = ((n - h) / 2, (n - w) / 2);
    let mut out = vec![fill; channels * n * n];
    for c in 0..channels {
        for r in 0..h {
            let dst = c * n * n + (r + top) * n + left;
            out[dst..dst + w].copy_from_slice(&src[c * h * w + r * w..c * h * w + (r + 1) * w]);
        }
    }
    (out, n)
}

/// Network inputs for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    /// `3 × size × size`, background-subtracted, in `[−1, 1]`.
    pub image: Vec<f64>,
    /// `size × size`, normalized depth in `[0, 1]`.
    pub depth: Vec<f64>,
}

/// Background-subtract, pad to square (zeros), and resize image and depth to `size`.
///
/// Padded depth is zero penetration, i.e. the undeformed gel.
pub fn preprocess(
    image: &[u8],
    background: &[u8],
    depth: &[f32],
    rows: usize,
    cols: usize,
    norm: &DepthNormalizer,
    size: usize,
) -> Result<Preprocessed> {
    let px = rows * cols;
    if image.len() != px * 3 || background.len() != px * 3 || depth.len() != px {
        return Err(FafError::Shape {
            op: "preprocess",
            detail: format!(
                "expected {rows}x{cols}: image {}, background {}, depth {}",
                image.len(),
                background.len(),
                depth.len()
            ),
        });
    }
    // HWC u8 difference into planar CHW
    let mut planar = vec![0.0; px * 3];
    for i in 0..px {
        for c in 0..3 {
            planar[c * px + i] = (image[i * 3 + c] as f64 - background[i * 3 + c] as f64) / 255.0;
        }
    }
    let (sq, n) = pad_square(&planar, 3, rows, cols, 0.0);
    let img = resize_bilinear(&sq, 3, n, n, size);

    let d: Vec<f64> = depth.iter().map(|&v| norm.apply(v as f64)).collect();
    let (dsq, n) = pad_square(&d, 1, rows, cols, norm.apply(0.0));
    let dep = resize_bilinear(&dsq, 1, n, n, size);
    Ok(Preprocessed { image: img, depth: dep })
}

pub fn preprocess_sample(s: &TactileSample, background: &[u8], norm: &DepthNormalizer, size: usize) -> Result<Preprocessed> {
    preprocess(&s.image, background, &s.depth, s.rows as usize, s.cols as usize, norm, size)
}
