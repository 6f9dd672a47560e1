use rayon::prelude::*;

use super::matmul::{mm_nn, mm_nt, mm_tn};
use super::ConvParams;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor};

const PAR_THRESHOLD: usize = 1 << 16;

/// Same-padded stride-1 convolution over `[B, H, W, Cin]` with an odd
/// `[kh, kw, Cin, Cout]` kernel.
pub fn conv2d<T: Element>(tape: &Tape<T>, x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let kernel = tape.parameter(&p.kernel);
    let bias = tape.parameter(&p.bias);
    conv2d_t(tape, x, &kernel, Some(&bias))
}

pub fn conv2d_t<T: Element>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if x.shape().len() != 4 {
        return Err(Error::shape(format!(
            "conv2d: input must be [B, H, W, C], got {:?}",
            x.shape()
        )));
    }
    if kernel.shape().len() != 4 {
        return Err(Error::shape(format!(
            "conv2d: kernel must be [kh, kw, in, out], got {:?}",
            kernel.shape()
        )));
    }
    let (b, h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, kci, cout) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::shape(format!(
            "conv2d: kernel extents must be odd for same padding, got {kh}x{kw}"
        )));
    }
    if kci != cin {
        return Err(Error::shape(format!(
            "conv2d: input channels {cin} != kernel channels {kci}"
        )));
    }
    if let Some(bt) = bias {
        if bt.shape() != [cout] {
            return Err(Error::shape(format!(
                "conv2d: bias shape {:?} != [{cout}]",
                bt.shape()
            )));
        }
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let out_shape = vec![b, h, w, cout];

    let mut data = vec![T::zero(); b * h * w * cout];
    if kh == 1 && kw == 1 {
        mm_nn(x.data(), kernel.data(), b * h * w, cin, cout, &mut data);
    } else {
        let xd = x.data();
        let kd = kernel.data();
        let fill_row = |row: usize, orow: &mut [T]| {
            let (bi, y) = (row / h, row % h);
            for xi in 0..w {
                let out_px = &mut orow[xi * cout..(xi + 1) * cout];
                for dy in 0..kh {
                    let iy = y as isize + dy as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for dx in 0..kw {
                        let ix = xi as isize + dx as isize - pw as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let xoff = ((bi * h + iy as usize) * w + ix as usize) * cin;
                        let koff = (dy * kw + dx) * cin * cout;
                        for ci in 0..cin {
                            let xv = xd[xoff + ci];
                            let krow = &kd[koff + ci * cout..koff + (ci + 1) * cout];
                            for (o, &kv) in out_px.iter_mut().zip(krow) {
                                *o += xv * kv;
                            }
                        }
                    }
                }
            }
        };
        if b * h * w * cin * cout * kh * kw >= PAR_THRESHOLD {
            data.par_chunks_mut(w * cout)
                .enumerate()
                .for_each(|(row, orow)| fill_row(row, orow));
        } else {
            for (row, orow) in data.chunks_mut(w * cout).enumerate() {
                fill_row(row, orow);
            }
        }
    }
    if let Some(bt) = bias {
        for px in data.chunks_exact_mut(cout) {
            for (o, &bv) in px.iter_mut().zip(bt.data()) {
                *o += bv;
            }
        }
    }

    let nx = tape.node_of(x);
    let nk = tape.node_of(kernel);
    let nb = bias.and_then(|bt| tape.node_of(bt));
    if !tape.is_recording() || (nx.is_none() && nk.is_none() && nb.is_none()) {
        return Ok(Tensor::raw(out_shape, data));
    }
    let xd = x.data_arc();
    let kd = kernel.data_arc();
    Ok(tape.record(
        out_shape,
        data,
        Box::new(move |g, sink| {
            if let Some(node) = nb {
                let slot = sink.slot(node);
                for px in g.chunks_exact(cout) {
                    for (s, &gv) in slot.iter_mut().zip(px) {
                        *s += gv;
                    }
                }
            }
            if let Some(node) = nx {
                let mut dx = vec![T::zero(); b * h * w * cin];
                if kh == 1 && kw == 1 {
                    mm_nt(g, &kd, b * h * w, cout, cin, &mut dx);
                } else {
                    // dx[iy, ix] gathers output grads at y = iy - dy + ph.
                    for bi in 0..b {
                        for iy in 0..h {
                            for ix in 0..w {
                                let dpx = &mut dx[((bi * h + iy) * w + ix) * cin
                                    ..((bi * h + iy) * w + ix + 1) * cin];
                                for dy in 0..kh {
                                    let y = iy as isize - dy as isize + ph as isize;
                                    if y < 0 || y >= h as isize {
                                        continue;
                                    }
                                    for dx_ in 0..kw {
                                        let xx = ix as isize - dx_ as isize + pw as isize;
                                        if xx < 0 || xx >= w as isize {
                                            continue;
                                        }
                                        let goff =
                                            ((bi * h + y as usize) * w + xx as usize) * cout;
                                        let koff = (dy * kw + dx_) * cin * cout;
                                        for (ci, d) in dpx.iter_mut().enumerate() {
                                            let krow = &kd[koff + ci * cout..koff + (ci + 1) * cout];
                                            let grow = &g[goff..goff + cout];
                                            let mut acc = T::zero();
                                            for (&kv, &gv) in krow.iter().zip(grow) {
                                                acc += kv * gv;
                                            }
                                            *d += acc;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                for (s, d) in sink.slot(node).iter_mut().zip(dx) {
                    *s += d;
                }
            }
            if let Some(node) = nk {
                let slot = sink.slot(node);
                if kh == 1 && kw == 1 {
                    mm_tn(&xd, g, b * h * w, cin, cout, slot);
                } else {
                    for bi in 0..b {
                        for y in 0..h {
                            for xi in 0..w {
                                let goff = ((bi * h + y) * w + xi) * cout;
                                let grow = &g[goff..goff + cout];
                                for dy in 0..kh {
                                    let iy = y as isize + dy as isize - ph as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for dx_ in 0..kw {
                                        let ix = xi as isize + dx_ as isize - pw as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let xoff =
                                            ((bi * h + iy as usize) * w + ix as usize) * cin;
                                        let koff = (dy * kw + dx_) * cin * cout;
                                        for ci in 0..cin {
                                            let xv = xd[xoff + ci];
                                            let srow = &mut slot
                                                [koff + ci * cout..koff + (ci + 1) * cout];
                                            for (s, &gv) in srow.iter_mut().zip(grow) {
                                                *s += xv * gv;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
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

    /// Direct six-loop reference convolution.
    fn naive_conv(
        x: &[f64],
        k: &[f64],
        bias: Option<&[f64]>,
        (b, h, w, cin): (usize, usize, usize, usize),
        (kh, kw, cout): (usize, usize, usize),
    ) -> Vec<f64> {
        let (ph, pw) = (kh / 2, kw / 2);
        let mut out = vec![0.0; b * h * w * cout];
        for bi in 0..b {
            for y in 0..h {
                for xi in 0..w {
                    for co in 0..cout {
                        let mut acc = bias.map_or(0.0, |bb| bb[co]);
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = y as isize + dy as isize - ph as isize;
                                let ix = xi as isize + dx as isize - pw as isize;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    let xv =
                                        x[((bi * h + iy as usize) * w + ix as usize) * cin + ci];
                                    let kv = k[((dy * kw + dx) * cin + ci) * cout + co];
                                    acc += xv * kv;
                                }
                            }
                        }
                        out[((bi * h + y) * w + xi) * cout + co] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn one_by_one_identity_kernel() {
        let mut rng = Rng::new(41);
        let x = Tensor::<f64>::from_fn(&[1, 3, 3, 2], |_| rng.uniform_in(-1.0, 1.0));
        // kernel [1,1,2,2] = identity over channels
        let k = Tensor::new(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let tape = Tape::inference();
        let y = conv2d_t(&tape, &x, &k, None).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn all_ones_kernel_on_constant_field() {
        let x = Tensor::<f64>::filled(&[1, 5, 5, 1], 2.5);
        let k = Tensor::ones(&[3, 3, 1, 1]);
        let tape = Tape::inference();
        let y = conv2d_t(&tape, &x, &k, None).unwrap();
        // interior pixel sees all nine taps
        assert!((y.at(&[0, 2, 2, 0]) - 9.0 * 2.5).abs() < 1e-12);
        // corner sees four
        assert!((y.at(&[0, 0, 0, 0]) - 4.0 * 2.5).abs() < 1e-12);
    }

    #[test]
    fn centered_delta_kernel_is_identity() {
        let mut rng = Rng::new(42);
        let x = Tensor::<f64>::from_fn(&[2, 4, 5, 3], |_| rng.uniform_in(-1.0, 1.0));
        let mut k = Tensor::zeros(&[3, 3, 3, 3]);
        {
            let kd = k.data_mut();
            // delta at (dy=1, dx=1), channel-diagonal
            for c in 0..3 {
                kd[((1 * 3 + 1) * 3 + c) * 3 + c] = 1.0;
            }
        }
        let tape = Tape::inference();
        let y = conv2d_t(&tape, &x, &k, None).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = Rng::new(43);
        let x = Tensor::<f64>::from_fn(&[1, 5, 5, 2], |_| rng.uniform_in(-1.0, 1.0));
        let k = Tensor::<f64>::from_fn(&[3, 3, 2, 3], |_| rng.uniform_in(-1.0, 1.0));
        let bias = Tensor::<f64>::from_fn(&[3], |_| rng.uniform_in(-0.5, 0.5));
        let tape = Tape::inference();
        let y = conv2d_t(&tape, &x, &k, Some(&bias)).unwrap();
        let oracle = naive_conv(
            x.data(),
            k.data(),
            Some(bias.data()),
            (1, 5, 5, 2),
            (3, 3, 3),
        );
        for (a, b) in y.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn conv_rejects_bad_inputs() {
        let tape = Tape::<f64>::inference();
        let x = Tensor::zeros(&[1, 4, 4, 2]);
        // channel mismatch
        assert!(conv2d_t(&tape, &x, &Tensor::zeros(&[3, 3, 3, 4]), None).is_err());
        // even kernel
        assert!(conv2d_t(&tape, &x, &Tensor::zeros(&[2, 2, 2, 4]), None).is_err());
        // bad rank
        assert!(conv2d_t(&tape, &Tensor::zeros(&[4, 4, 2]), &Tensor::zeros(&[3, 3, 2, 4]), None)
            .is_err());
    }

    #[test]
    fn conv_grad_check() {
        let mut rng = Rng::new(44);
        let x = Tensor::<f64>::from_fn(&[1, 4, 4, 2], |_| rng.uniform_in(-1.0, 1.0));
        let k = Tensor::<f64>::from_fn(&[3, 3, 2, 2], |_| rng.uniform_in(-1.0, 1.0));
        let bias = Tensor::<f64>::from_fn(&[2], |_| rng.uniform_in(-0.5, 0.5));
        let err = grad_check(
            |t, xs| conv2d_t(t, &xs[0], &xs[1], Some(&xs[2])),
            &[x, k, bias],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn conv_1x1_grad_check() {
        let mut rng = Rng::new(45);
        let x = Tensor::<f64>::from_fn(&[2, 3, 3, 4], |_| rng.uniform_in(-1.0, 1.0));
        let k = Tensor::<f64>::from_fn(&[1, 1, 4, 2], |_| rng.uniform_in(-1.0, 1.0));
        let bias = Tensor::<f64>::from_fn(&[2], |_| rng.uniform_in(-0.5, 0.5));
        let err = grad_check(
            |t, xs| conv2d_t(t, &xs[0], &xs[1], Some(&xs[2])),
            &[x, k, bias],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "err {err}");
    }
}
