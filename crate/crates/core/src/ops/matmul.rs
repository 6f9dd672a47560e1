use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor};

/// Below this many multiply-adds the rayon dispatch overhead dominates.
const PAR_THRESHOLD: usize = 1 << 16;

/// `out[i, :] = sum_p a[i, p] * b[p, :]`, `out` must be zeroed.
pub(crate) fn mm_nn<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    let row = |i: usize, orow: &mut [T]| {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, orow)| row(i, orow));
    } else {
        for (i, orow) in out.chunks_mut(n).enumerate() {
            row(i, orow);
        }
    }
}

/// `out[i, j] = dot(a[i, :], b[j, :])` for `a: [m, q]`, `b: [p, q]`.
pub(crate) fn mm_nt<T: Element>(a: &[T], b: &[T], m: usize, q: usize, p: usize, out: &mut [T]) {
    let row = |i: usize, orow: &mut [T]| {
        let arow = &a[i * q..(i + 1) * q];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * q..(j + 1) * q];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            *o += acc;
        }
    };
    if m * q * p >= PAR_THRESHOLD {
        out.par_chunks_mut(p)
            .enumerate()
            .for_each(|(i, orow)| row(i, orow));
    } else {
        for (i, orow) in out.chunks_mut(p).enumerate() {
            row(i, orow);
        }
    }
}

/// `out[p, :] += sum_i a[i, p] * g[i, :]` for `a: [m, k]`, `g: [m, n]`,
/// i.e. `a^T g`. Sequential accumulation keeps it deterministic.
pub(crate) fn mm_tn<T: Element>(a: &[T], g: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// Applies a 2-d weight `[k, n]` to the last axis of `a: [..., k]`,
/// producing `[..., n]`. All leading axes are treated as rows.
pub fn matmul<T: Element>(tape: &Tape<T>, a: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    if w.shape().len() != 2 {
        return Err(Error::shape(format!(
            "matmul: weight must be 2-d, got {:?}",
            w.shape()
        )));
    }
    let (k, n) = (w.shape()[0], w.shape()[1]);
    if a.shape().last() != Some(&k) {
        return Err(Error::shape(format!(
            "matmul: input last extent {:?} != weight rows {k}",
            a.shape().last()
        )));
    }
    let m = a.numel() / k;
    let mut out_shape = a.shape().to_vec();
    *out_shape.last_mut().unwrap() = n;

    let mut data = vec![T::zero(); m * n];
    mm_nn(a.data(), w.data(), m, k, n, &mut data);

    let (na, nw) = (tape.node_of(a), tape.node_of(w));
    if !tape.is_recording() || (na.is_none() && nw.is_none()) {
        return Ok(Tensor::raw(out_shape, data));
    }
    let (ad, wd) = (a.data_arc(), w.data_arc());
    Ok(tape.record(
        out_shape,
        data,
        Box::new(move |g, sink| {
            if let Some(node) = na {
                let mut da = vec![T::zero(); m * k];
                mm_nt(g, &wd, m, n, k, &mut da);
                for (s, d) in sink.slot(node).iter_mut().zip(da) {
                    *s += d;
                }
            }
            if let Some(node) = nw {
                let mut dw = vec![T::zero(); k * n];
                mm_tn(&ad, g, m, k, n, &mut dw);
                for (s, d) in sink.slot(node).iter_mut().zip(dw) {
                    *s += d;
                }
            }
        }),
    ))
}

fn batch_dims(op: &str, a: &Tensor<impl Element>, b: &Tensor<impl Element>) -> Result<usize> {
    let (ra, rb) = (a.shape().len(), b.shape().len());
    if ra < 2 || rb < 2 || ra != rb || a.shape()[..ra - 2] != b.shape()[..rb - 2] {
        return Err(Error::shape(format!(
            "{op}: incompatible batch shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.shape()[..ra - 2].iter().product())
}

/// Batched matrix product: `a: [..., m, k] @ b: [..., k, n]` with identical
/// leading axes.
pub fn bmm<T: Element>(tape: &Tape<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let batches = batch_dims("bmm", a, b)?;
    let ra = a.shape().len();
    let (m, k) = (a.shape()[ra - 2], a.shape()[ra - 1]);
    let (kb, n) = (b.shape()[ra - 2], b.shape()[ra - 1]);
    if k != kb {
        return Err(Error::shape(format!(
            "bmm: inner extents {k} vs {kb} differ"
        )));
    }
    let mut out_shape = a.shape().to_vec();
    out_shape[ra - 2] = m;
    out_shape[ra - 1] = n;

    let mut data = vec![T::zero(); batches * m * n];
    let run_batch = |bi: usize, out: &mut [T]| {
        mm_nn(
            &a.data()[bi * m * k..(bi + 1) * m * k],
            &b.data()[bi * k * n..(bi + 1) * k * n],
            m,
            k,
            n,
            out,
        );
    };
    if batches * m * k * n >= PAR_THRESHOLD && batches > 1 {
        data.par_chunks_mut(m * n)
            .enumerate()
            .for_each(|(bi, out)| run_batch(bi, out));
    } else {
        for (bi, out) in data.chunks_mut(m * n).enumerate() {
            run_batch(bi, out);
        }
    }

    let (na, nb) = (tape.node_of(a), tape.node_of(b));
    if !tape.is_recording() || (na.is_none() && nb.is_none()) {
        return Ok(Tensor::raw(out_shape, data));
    }
    let (ad, bd) = (a.data_arc(), b.data_arc());
    Ok(tape.record(
        out_shape,
        data,
        Box::new(move |g, sink| {
            if let Some(node) = na {
                let mut da = vec![T::zero(); batches * m * k];
                for bi in 0..batches {
                    mm_nt(
                        &g[bi * m * n..(bi + 1) * m * n],
                        &bd[bi * k * n..(bi + 1) * k * n],
                        m,
                        n,
                        k,
                        &mut da[bi * m * k..(bi + 1) * m * k],
                    );
                }
                for (s, d) in sink.slot(node).iter_mut().zip(da) {
                    *s += d;
                }
            }
            if let Some(node) = nb {
                let slot = sink.slot(node);
                for bi in 0..batches {
                    mm_tn(
                        &ad[bi * m * k..(bi + 1) * m * k],
                        &g[bi * m * n..(bi + 1) * m * n],
                        m,
                        k,
                        n,
                        &mut slot[bi * k * n..(bi + 1) * k * n],
                    );
                }
            }
        }),
    ))
}

/// Batched product against a transposed right operand:
/// `a: [..., m, k] @ b^T` for `b: [..., n, k]`, yielding `[..., m, n]`.
pub fn bmm_nt<T: Element>(tape: &Tape<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let batches = batch_dims("bmm_nt", a, b)?;
    let ra = a.shape().len();
    let (m, k) = (a.shape()[ra - 2], a.shape()[ra - 1]);
    let (n, kb) = (b.shape()[ra - 2], b.shape()[ra - 1]);
    if k != kb {
        return Err(Error::shape(format!(
            "bmm_nt: inner extents {k} vs {kb} differ"
        )));
    }
    let mut out_shape = a.shape().to_vec();
    out_shape[ra - 2] = m;
    out_shape[ra - 1] = n;

    let mut data = vec![T::zero(); batches * m * n];
    let run_batch = |bi: usize, out: &mut [T]| {
        mm_nt(
            &a.data()[bi * m * k..(bi + 1) * m * k],
            &b.data()[bi * n * k..(bi + 1) * n * k],
            m,
            k,
            n,
            out,
        );
    };
    if batches * m * k * n >= PAR_THRESHOLD && batches > 1 {
        data.par_chunks_mut(m * n)
            .enumerate()
            .for_each(|(bi, out)| run_batch(bi, out));
    } else {
        for (bi, out) in data.chunks_mut(m * n).enumerate() {
            run_batch(bi, out);
        }
    }

    let (na, nb) = (tape.node_of(a), tape.node_of(b));
    if !tape.is_recording() || (na.is_none() && nb.is_none()) {
        return Ok(Tensor::raw(out_shape, data));
    }
    let (ad, bd) = (a.data_arc(), b.data_arc());
    Ok(tape.record(
        out_shape,
        data,
        Box::new(move |g, sink| {
            if let Some(node) = na {
                // d a = g @ b
                let mut da = vec![T::zero(); batches * m * k];
                for bi in 0..batches {
                    mm_nn(
                        &g[bi * m * n..(bi + 1) * m * n],
                        &bd[bi * n * k..(bi + 1) * n * k],
                        m,
                        n,
                        k,
                        &mut da[bi * m * k..(bi + 1) * m * k],
                    );
                }
                for (s, d) in sink.slot(node).iter_mut().zip(da) {
                    *s += d;
                }
            }
            if let Some(node) = nb {
                // d b = g^T @ a
                let slot = sink.slot(node);
                for bi in 0..batches {
                    mm_tn(
                        &g[bi * m * n..(bi + 1) * m * n],
                        &ad[bi * m * k..(bi + 1) * m * k],
                        m,
                        n,
                        k,
                        &mut slot[bi * n * k..(bi + 1) * n * k],
                    );
                }
            }
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::grad_check;

    /// Independent triple-loop oracle.
    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        let mut rng = Rng::new(5);
        let a = Tensor::<f64>::from_fn(&[3, 4], |_| rng.uniform_in(-1.0, 1.0));
        let b = Tensor::<f64>::from_fn(&[4, 5], |_| rng.uniform_in(-1.0, 1.0));
        let tape = Tape::inference();
        let c = matmul(&tape, &a, &b).unwrap();
        let oracle = naive_matmul(a.data(), b.data(), 3, 4, 5);
        for (x, y) in c.data().iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn matmul_applies_to_leading_axes() {
        let mut rng = Rng::new(6);
        let a = Tensor::<f64>::from_fn(&[2, 3, 4], |_| rng.uniform_in(-1.0, 1.0));
        let b = Tensor::<f64>::from_fn(&[4, 2], |_| rng.uniform_in(-1.0, 1.0));
        let tape = Tape::inference();
        let c = matmul(&tape, &a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2]);
        let oracle = naive_matmul(a.data(), b.data(), 6, 4, 2);
        for (x, y) in c.data().iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let tape = Tape::<f64>::inference();
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 5]);
        assert!(matmul(&tape, &a, &b).is_err());
    }

    #[test]
    fn bmm_variants_match_each_other() {
        let mut rng = Rng::new(7);
        let a = Tensor::<f64>::from_fn(&[3, 2, 4], |_| rng.uniform_in(-1.0, 1.0));
        let b = Tensor::<f64>::from_fn(&[3, 4, 5], |_| rng.uniform_in(-1.0, 1.0));
        let tape = Tape::inference();
        let c = bmm(&tape, &a, &b).unwrap();
        // b transposed per batch, multiplied through bmm_nt, must agree.
        let mut bt = vec![0.0; b.numel()];
        for bi in 0..3 {
            for i in 0..4 {
                for j in 0..5 {
                    bt[bi * 20 + j * 4 + i] = b.data()[bi * 20 + i * 5 + j];
                }
            }
        }
        let btt = Tensor::new(&[3, 5, 4], bt).unwrap();
        let c2 = bmm_nt(&tape, &a, &btt).unwrap();
        for (x, y) in c.data().iter().zip(c2.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_grad_checks() {
        let mut rng = Rng::new(8);
        let a = Tensor::<f64>::from_fn(&[2, 3], |_| rng.uniform_in(-1.0, 1.0));
        let b = Tensor::<f64>::from_fn(&[3, 4], |_| rng.uniform_in(-1.0, 1.0));
        let err = grad_check(|t, xs| matmul(t, &xs[0], &xs[1]), &[a, b], 1e-6).unwrap();
        assert!(err < 1e-6, "matmul {err}");

        let a = Tensor::<f64>::from_fn(&[2, 3, 4], |_| rng.uniform_in(-1.0, 1.0));
        let b = Tensor::<f64>::from_fn(&[2, 4, 2], |_| rng.uniform_in(-1.0, 1.0));
        let err = grad_check(|t, xs| bmm(t, &xs[0], &xs[1]), &[a, b], 1e-6).unwrap();
        assert!(err < 1e-6, "bmm {err}");

        let a = Tensor::<f64>::from_fn(&[2, 3, 4], |_| rng.uniform_in(-1.0, 1.0));
        let b = Tensor::<f64>::from_fn(&[2, 5, 4], |_| rng.uniform_in(-1.0, 1.0));
        let err = grad_check(|t, xs| bmm_nt(t, &xs[0], &xs[1]), &[a, b], 1e-6).unwrap();
        assert!(err < 1e-6, "bmm_nt {err}");
    }
}
