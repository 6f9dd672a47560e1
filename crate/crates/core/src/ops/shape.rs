use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor};

/// Views the same elements under a new shape. Zero-copy; gradients pass
/// straight through.
pub fn reshape<T: Element>(
    tape: &Tape<T>,
    a: &Tensor<T>,
    shape: &[usize],
) -> Result<Tensor<T>> {
    let _ = tape;
    a.with_shape(shape.to_vec())
}

/// `out[i] = a[map[i]]`. The workhorse behind every pure rearrangement
/// (window partition, cyclic shift, pixel shuffle, unfold, padding, crop).
/// Indices may repeat; the backward pass scatter-adds.
pub fn gather<T: Element>(
    tape: &Tape<T>,
    a: &Tensor<T>,
    map: Arc<Vec<usize>>,
    out_shape: &[usize],
) -> Result<Tensor<T>> {
    let numel: usize = out_shape.iter().product();
    if numel != map.len() {
        return Err(Error::shape(format!(
            "gather: map length {} != output numel {numel}",
            map.len()
        )));
    }
    let n_in = a.numel();
    if let Some(&bad) = map.iter().find(|&&i| i >= n_in) {
        return Err(Error::shape(format!(
            "gather: index {bad} out of range for input of {n_in}"
        )));
    }
    let ad = a.data();
    let data: Vec<T> = map.iter().map(|&i| ad[i]).collect();
    let na = tape.node_of(a);
    if !tape.is_recording() || na.is_none() {
        return Ok(Tensor::raw(out_shape.to_vec(), data));
    }
    let n = na.unwrap();
    Ok(tape.record(
        out_shape.to_vec(),
        data,
        Box::new(move |g, sink| {
            let slot = sink.slot(n);
            for (&gi, &src) in g.iter().zip(map.iter()) {
                slot[src] += gi;
            }
        }),
    ))
}

/// Fixed-coefficient linear gather: `out[i] = sum_j w[i*taps+j] * a[idx[i*taps+j]]`.
/// Used for interpolation where each output is a small weighted stencil.
pub fn weighted_gather<T: Element>(
    tape: &Tape<T>,
    a: &Tensor<T>,
    idx: Arc<Vec<usize>>,
    weights: Arc<Vec<T>>,
    taps: usize,
    out_shape: &[usize],
) -> Result<Tensor<T>> {
    let numel: usize = out_shape.iter().product();
    if idx.len() != numel * taps || weights.len() != numel * taps {
        return Err(Error::shape(format!(
            "weighted_gather: stencil length {} != numel {numel} * taps {taps}",
            idx.len()
        )));
    }
    let n_in = a.numel();
    if let Some(&bad) = idx.iter().find(|&&i| i >= n_in) {
        return Err(Error::shape(format!(
            "weighted_gather: index {bad} out of range for input of {n_in}"
        )));
    }
    let ad = a.data();
    let mut data = vec![T::zero(); numel];
    for (i, o) in data.iter_mut().enumerate() {
        let mut acc = T::zero();
        for j in 0..taps {
            acc += weights[i * taps + j] * ad[idx[i * taps + j]];
        }
        *o = acc;
    }
    let na = tape.node_of(a);
    if !tape.is_recording() || na.is_none() {
        return Ok(Tensor::raw(out_shape.to_vec(), data));
    }
    let n = na.unwrap();
    Ok(tape.record(
        out_shape.to_vec(),
        data,
        Box::new(move |g, sink| {
            let slot = sink.slot(n);
            for (i, &gi) in g.iter().enumerate() {
                for j in 0..taps {
                    slot[idx[i * taps + j]] += gi * weights[i * taps + j];
                }
            }
        }),
    ))
}

/// Concatenates two tensors along the last axis.
pub fn concat_last<T: Element>(
    tape: &Tape<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (ra, rb) = (a.shape().len(), b.shape().len());
    if ra != rb || ra == 0 || a.shape()[..ra - 1] != b.shape()[..rb - 1] {
        return Err(Error::shape(format!(
            "concat_last: shapes {:?} and {:?} differ off the last axis",
            a.shape(),
            b.shape()
        )));
    }
    let (ca, cb) = (a.shape()[ra - 1], b.shape()[rb - 1]);
    let rows = a.numel() / ca;
    let mut out_shape = a.shape().to_vec();
    out_shape[ra - 1] = ca + cb;

    let mut data = Vec::with_capacity(rows * (ca + cb));
    for r in 0..rows {
        data.extend_from_slice(&a.data()[r * ca..(r + 1) * ca]);
        data.extend_from_slice(&b.data()[r * cb..(r + 1) * cb]);
    }
    let (na, nb) = (tape.node_of(a), tape.node_of(b));
    if !tape.is_recording() || (na.is_none() && nb.is_none()) {
        return Ok(Tensor::raw(out_shape, data));
    }
    Ok(tape.record(
        out_shape,
        data,
        Box::new(move |g, sink| {
            let cc = ca + cb;
            if let Some(n) = na {
                let slot = sink.slot(n);
                for r in 0..rows {
                    for i in 0..ca {
                        slot[r * ca + i] += g[r * cc + i];
                    }
                }
            }
            if let Some(n) = nb {
                let slot = sink.slot(n);
                for r in 0..rows {
                    for i in 0..cb {
                        slot[r * cb + i] += g[r * cc + ca + i];
                    }
                }
            }
        }),
    ))
}

/// Takes channels `[start, start+len)` of the last axis.
pub fn slice_last<T: Element>(
    tape: &Tape<T>,
    a: &Tensor<T>,
    start: usize,
    len: usize,
) -> Result<Tensor<T>> {
    let ra = a.shape().len();
    if ra == 0 {
        return Err(Error::shape("slice_last: zero-rank tensor".to_string()));
    }
    let c = a.shape()[ra - 1];
    if start + len > c || len == 0 {
        return Err(Error::shape(format!(
            "slice_last: range {start}..{} out of last extent {c}",
            start + len
        )));
    }
    let rows = a.numel() / c;
    let mut out_shape = a.shape().to_vec();
    out_shape[ra - 1] = len;

    let mut data = Vec::with_capacity(rows * len);
    for r in 0..rows {
        data.extend_from_slice(&a.data()[r * c + start..r * c + start + len]);
    }
    let na = tape.node_of(a);
    if !tape.is_recording() || na.is_none() {
        return Ok(Tensor::raw(out_shape, data));
    }
    let n = na.unwrap();
    Ok(tape.record(
        out_shape,
        data,
        Box::new(move |g, sink| {
            let slot = sink.slot(n);
            for r in 0..rows {
                for i in 0..len {
                    slot[r * c + start + i] += g[r * len + i];
                }
            }
        }),
    ))
}
