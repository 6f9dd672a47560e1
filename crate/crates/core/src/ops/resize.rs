use std::sync::Arc;

use super::shape::{gather, weighted_gather};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor};

/// Bilinear upsampling by an integer factor with the half-pixel-center
/// convention: output coordinate `o` samples input coordinate
/// `(o + 0.5)/scale - 0.5`, clamped to the valid range.
pub fn bilinear_upsample<T: Element>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    scale: usize,
) -> Result<Tensor<T>> {
    if x.shape().len() != 4 {
        return Err(Error::shape(format!(
            "bilinear_upsample: input must be [B, H, W, C], got {:?}",
            x.shape()
        )));
    }
    if scale == 0 {
        return Err(Error::shape("bilinear_upsample: scale must be >= 1".to_string()));
    }
    let (b, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (h * scale, w * scale);
    let out_shape = [b, oh, ow, c];

    // Per-axis stencils are shared by every row/column.
    let axis_taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) / scale as f64 - 0.5)
                    .clamp(0.0, (n_in - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ytaps = axis_taps(h, oh);
    let xtaps = axis_taps(w, ow);

    let numel = b * oh * ow * c;
    let mut idx = Vec::with_capacity(numel * 4);
    let mut weights: Vec<T> = Vec::with_capacity(numel * 4);
    for bi in 0..b {
        for &(y0, y1, wy) in &ytaps {
            for &(x0, x1, wx) in &xtaps {
                for ci in 0..c {
                    let at = |yy: usize, xx: usize| ((bi * h + yy) * w + xx) * c + ci;
                    idx.extend_from_slice(&[at(y0, x0), at(y0, x1), at(y1, x0), at(y1, x1)]);
                    weights.extend_from_slice(&[
                        T::from_f64((1.0 - wy) * (1.0 - wx)),
                        T::from_f64((1.0 - wy) * wx),
                        T::from_f64(wy * (1.0 - wx)),
                        T::from_f64(wy * wx),
                    ]);
                }
            }
        }
    }
    weighted_gather(tape, x, Arc::new(idx), Arc::new(weights), 4, &out_shape)
}

/// Rearranges channel blocks into spatial positions:
/// `out(b, r*h+dy, r*w+dx, c) = in(b, h, w, c*r^2 + dy*r + dx)`.
pub fn pixel_shuffle<T: Element>(tape: &Tape<T>, x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    if x.shape().len() != 4 {
        return Err(Error::shape(format!(
            "pixel_shuffle: input must be [B, H, W, C], got {:?}",
            x.shape()
        )));
    }
    let (b, h, w, c_in) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if r == 0 || c_in % (r * r) != 0 {
        return Err(Error::shape(format!(
            "pixel_shuffle: channels {c_in} not divisible by r^2 = {}",
            r * r
        )));
    }
    let c = c_in / (r * r);
    let out_shape = [b, h * r, w * r, c];
    let mut map = Vec::with_capacity(x.numel());
    for bi in 0..b {
        for oy in 0..h * r {
            let (hy, dy) = (oy / r, oy % r);
            for ox in 0..w * r {
                let (wx, dx) = (ox / r, ox % r);
                for ci in 0..c {
                    map.push(((bi * h + hy) * w + wx) * c_in + ci * r * r + dy * r + dx);
                }
            }
        }
    }
    gather(tape, x, Arc::new(map), &out_shape)
}

/// Inverse of [`pixel_shuffle`]: spatial positions back into channel blocks.
pub fn pixel_unshuffle<T: Element>(tape: &Tape<T>, x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    if x.shape().len() != 4 {
        return Err(Error::shape(format!(
            "pixel_unshuffle: input must be [B, H, W, C], got {:?}",
            x.shape()
        )));
    }
    let (b, oh, ow, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return Err(Error::shape(format!(
            "pixel_unshuffle: spatial extents {oh}x{ow} not divisible by r = {r}"
        )));
    }
    let (h, w) = (oh / r, ow / r);
    let c_out = c * r * r;
    let out_shape = [b, h, w, c_out];
    let mut map = Vec::with_capacity(x.numel());
    for bi in 0..b {
        for hy in 0..h {
            for wx in 0..w {
                for cc in 0..c_out {
                    let ci = cc / (r * r);
                    let rem = cc % (r * r);
                    let (dy, dx) = (rem / r, rem % r);
                    map.push(((bi * oh + hy * r + dy) * ow + wx * r + dx) * c + ci);
                }
            }
        }
    }
    gather(tape, x, Arc::new(map), &out_shape)
}
