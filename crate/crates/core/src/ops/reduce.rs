use super::LayerNormParams;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor};

/// Scalar sum of all elements, accumulated in f64 for stability.
pub fn sum_all<T: Element>(tape: &Tape<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let s: f64 = a.data().iter().map(|v| v.as_f64()).sum();
    let data = vec![T::from_f64(s)];
    let na = tape.node_of(a);
    if !tape.is_recording() || na.is_none() {
        return Ok(Tensor::raw(vec![1], data));
    }
    let n = na.unwrap();
    Ok(tape.record(
        vec![1],
        data,
        Box::new(move |g, sink| {
            let g0 = g[0];
            for s in sink.slot(n).iter_mut() {
                *s += g0;
            }
        }),
    ))
}

/// Scalar mean of all elements.
pub fn mean_all<T: Element>(tape: &Tape<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let count = a.numel();
    let s: f64 = a.data().iter().map(|v| v.as_f64()).sum();
    let data = vec![T::from_f64(s / count as f64)];
    let na = tape.node_of(a);
    if !tape.is_recording() || na.is_none() {
        return Ok(Tensor::raw(vec![1], data));
    }
    let n = na.unwrap();
    let inv = T::from_f64(1.0 / count as f64);
    Ok(tape.record(
        vec![1],
        data,
        Box::new(move |g, sink| {
            let g0 = g[0] * inv;
            for s in sink.slot(n).iter_mut() {
                *s += g0;
            }
        }),
    ))
}

/// Numerically stabilized softmax over the last axis.
pub fn softmax_last<T: Element>(tape: &Tape<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let c = *a
        .shape()
        .last()
        .ok_or_else(|| Error::shape("softmax: zero-rank tensor".to_string()))?;
    let mut data = vec![T::zero(); a.numel()];
    for (row_in, row_out) in a.data().chunks_exact(c).zip(data.chunks_exact_mut(c)) {
        let max = row_in.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for (o, &x) in row_out.iter_mut().zip(row_in) {
            let e = (x - max).exp();
            *o = e;
            denom += e;
        }
        for o in row_out.iter_mut() {
            *o = *o / denom;
        }
    }
    let na = tape.node_of(a);
    if !tape.is_recording() || na.is_none() {
        return Ok(Tensor::raw(a.shape().to_vec(), data));
    }
    let n = na.unwrap();
    let out = data.clone();
    Ok(tape.record(
        a.shape().to_vec(),
        data,
        Box::new(move |g, sink| {
            let slot = sink.slot(n);
            for ((grow, srow), orow) in g
                .chunks_exact(c)
                .zip(slot.chunks_exact_mut(c))
                .zip(out.chunks_exact(c))
            {
                let mut dot = T::zero();
                for (&gi, &si) in grow.iter().zip(orow) {
                    dot += gi * si;
                }
                for ((s, &gi), &si) in srow.iter_mut().zip(grow).zip(orow) {
                    *s += si * (gi - dot);
                }
            }
        }),
    ))
}

/// Layer normalization over the last axis with affine parameters.
pub fn layer_norm<T: Element>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    p: &LayerNormParams<T>,
) -> Result<Tensor<T>> {
    let gamma = tape.parameter(&p.gamma);
    let beta = tape.parameter(&p.beta);
    layer_norm_t(tape, x, &gamma, &beta, p.eps)
}

/// `(x - mean) / sqrt(var + eps) * gamma + beta`, statistics per position
/// over the trailing axis (biased variance).
pub fn layer_norm_t<T: Element>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let c = *x
        .shape()
        .last()
        .ok_or_else(|| Error::shape("layer_norm: zero-rank tensor".to_string()))?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(format!(
            "layer_norm: affine shapes {:?}/{:?} != [{c}]",
            gamma.shape(),
            beta.shape()
        )));
    }

    let rows = x.numel() / c;
    let mut data = vec![T::zero(); x.numel()];
    // Normalized activations are reused by the backward pass.
    let mut xhat = vec![T::zero(); x.numel()];
    let mut inv_std = vec![T::zero(); rows];
    for r in 0..rows {
        let xin = &x.data()[r * c..(r + 1) * c];
        let mut mean = 0.0f64;
        for v in xin {
            mean += v.as_f64();
        }
        mean /= c as f64;
        let mut var = 0.0f64;
        for v in xin {
            let d = v.as_f64() - mean;
            var += d * d;
        }
        var /= c as f64;
        let istd = 1.0 / (var + eps).sqrt();
        inv_std[r] = T::from_f64(istd);
        for i in 0..c {
            let h = T::from_f64((xin[i].as_f64() - mean) * istd);
            xhat[r * c + i] = h;
            data[r * c + i] = h * gamma.data()[i] + beta.data()[i];
        }
    }

    let (nx, ng, nb) = (tape.node_of(x), tape.node_of(gamma), tape.node_of(beta));
    if !tape.is_recording() || (nx.is_none() && ng.is_none() && nb.is_none()) {
        return Ok(Tensor::raw(x.shape().to_vec(), data));
    }
    let gd = gamma.data_arc();
    Ok(tape.record(
        x.shape().to_vec(),
        data,
        Box::new(move |g, sink| {
            if let Some(node) = nb {
                let slot = sink.slot(node);
                for grow in g.chunks_exact(c) {
                    for (s, &gi) in slot.iter_mut().zip(grow) {
                        *s += gi;
                    }
                }
            }
            if let Some(node) = ng {
                let slot = sink.slot(node);
                for (r, grow) in g.chunks_exact(c).enumerate() {
                    let hrow = &xhat[r * c..(r + 1) * c];
                    for ((s, &gi), &h) in slot.iter_mut().zip(grow).zip(hrow) {
                        *s += gi * h;
                    }
                }
            }
            if let Some(node) = nx {
                let slot = sink.slot(node);
                let inv_c = T::from_f64(1.0 / c as f64);
                for (r, grow) in g.chunks_exact(c).enumerate() {
                    let hrow = &xhat[r * c..(r + 1) * c];
                    // dxhat = g * gamma; dx = (dxhat - mean(dxhat)
                    //        - xhat * mean(dxhat*xhat)) * inv_std
                    let mut sum_d = T::zero();
                    let mut sum_dh = T::zero();
                    for i in 0..c {
                        let dh = grow[i] * gd[i];
                        sum_d += dh;
                        sum_dh += dh * hrow[i];
                    }
                    let mean_d = sum_d * inv_c;
                    let mean_dh = sum_dh * inv_c;
                    let istd = inv_std[r];
                    for i in 0..c {
                        let dh = grow[i] * gd[i];
                        slot[r * c + i] += (dh - mean_d - hrow[i] * mean_dh) * istd;
                    }
                }
            }
        }),
    ))
}
