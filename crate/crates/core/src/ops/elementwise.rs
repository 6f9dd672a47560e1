use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor};

fn check_same_shape<T: Element>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn add<T: Element>(tape: &Tape<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("add", a, b)?;
    let data: Vec<T> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    let (na, nb) = (tape.node_of(a), tape.node_of(b));
    if !tape.is_recording() || (na.is_none() && nb.is_none()) {
        return Ok(Tensor::raw(a.shape().to_vec(), data));
    }
    Ok(tape.record(
        a.shape().to_vec(),
        data,
        Box::new(move |g, sink| {
            if let Some(n) = na {
                for (s, &gi) in sink.slot(n).iter_mut().zip(g) {
                    *s += gi;
                }
            }
            if let Some(n) = nb {
                for (s, &gi) in sink.slot(n).iter_mut().zip(g) {
                    *s += gi;
                }
            }
        }),
    ))
}

pub fn sub<T: Element>(tape: &Tape<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("sub", a, b)?;
    let data: Vec<T> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x - y)
        .collect();
    let (na, nb) = (tape.node_of(a), tape.node_of(b));
    if !tape.is_recording() || (na.is_none() && nb.is_none()) {
        return Ok(Tensor::raw(a.shape().to_vec(), data));
    }
    Ok(tape.record(
        a.shape().to_vec(),
        data,
        Box::new(move |g, sink| {
            if let Some(n) = na {
                for (s, &gi) in sink.slot(n).iter_mut().zip(g) {
                    *s += gi;
                }
            }
            if let Some(n) = nb {
                for (s, &gi) in sink.slot(n).iter_mut().zip(g) {
                    *s -= gi;
                }
            }
        }),
    ))
}

pub fn mul<T: Element>(tape: &Tape<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("mul", a, b)?;
    let data: Vec<T> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x * y)
        .collect();
    let (na, nb) = (tape.node_of(a), tape.node_of(b));
    if !tape.is_recording() || (na.is_none() && nb.is_none()) {
        return Ok(Tensor::raw(a.shape().to_vec(), data));
    }
    let (ad, bd) = (a.data_arc(), b.data_arc());
    Ok(tape.record(
        a.shape().to_vec(),
        data,
        Box::new(move |g, sink| {
            if let Some(n) = na {
                for ((s, &gi), &y) in sink.slot(n).iter_mut().zip(g).zip(bd.iter()) {
                    *s += gi * y;
                }
            }
            if let Some(n) = nb {
                for ((s, &gi), &x) in sink.slot(n).iter_mut().zip(g).zip(ad.iter()) {
                    *s += gi * x;
                }
            }
        }),
    ))
}

pub fn scale<T: Element>(tape: &Tape<T>, a: &Tensor<T>, c: f64) -> Result<Tensor<T>> {
    let c = T::from_f64(c);
    let data: Vec<T> = a.data().iter().map(|&x| x * c).collect();
    let na = tape.node_of(a);
    if !tape.is_recording() || na.is_none() {
        return Ok(Tensor::raw(a.shape().to_vec(), data));
    }
    let n = na.unwrap();
    Ok(tape.record(
        a.shape().to_vec(),
        data,
        Box::new(move |g, sink| {
            for (s, &gi) in sink.slot(n).iter_mut().zip(g) {
                *s += gi * c;
            }
        }),
    ))
}

/// Elementwise absolute value; the subgradient at 0 is 0.
pub fn abs<T: Element>(tape: &Tape<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let data: Vec<T> = a.data().iter().map(|&x| x.abs()).collect();
    let na = tape.node_of(a);
    if !tape.is_recording() || na.is_none() {
        return Ok(Tensor::raw(a.shape().to_vec(), data));
    }
    let n = na.unwrap();
    let ad = a.data_arc();
    Ok(tape.record(
        a.shape().to_vec(),
        data,
        Box::new(move |g, sink| {
            for ((s, &gi), &x) in sink.slot(n).iter_mut().zip(g).zip(ad.iter()) {
                *s += gi * x.signum() * T::from_f64(if x == T::zero() { 0.0 } else { 1.0 });
            }
        }),
    ))
}

/// Exact GELU: `x * Phi(x)` with the standard-normal CDF via erf.
pub fn gelu<T: Element>(tape: &Tape<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let data: Vec<T> = a.data().iter().map(|&x| x * normal_cdf(x)).collect();
    let na = tape.node_of(a);
    if !tape.is_recording() || na.is_none() {
        return Ok(Tensor::raw(a.shape().to_vec(), data));
    }
    let n = na.unwrap();
    let ad = a.data_arc();
    Ok(tape.record(
        a.shape().to_vec(),
        data,
        Box::new(move |g, sink| {
            for ((s, &gi), &x) in sink.slot(n).iter_mut().zip(g).zip(ad.iter()) {
                *s += gi * (normal_cdf(x) + x * normal_pdf(x));
            }
        }),
    ))
}

fn normal_cdf<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    half * (T::one() + (x * inv_sqrt2).erf())
}

fn normal_pdf<T: Element>(x: T) -> T {
    let inv_sqrt_2pi = T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    inv_sqrt_2pi * (-(x * x) * T::from_f64(0.5)).exp()
}

/// `a + b` where `b`'s shape is a suffix of `a`'s shape; `b` is tiled over
/// the leading axes. Covers bias addition (`b = [out]`) and per-window bias
/// terms. The gradient of `b` sums over the tiled axes.
pub fn add_broadcast<T: Element>(
    tape: &Tape<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (ra, rb) = (a.shape().len(), b.shape().len());
    if rb > ra || a.shape()[ra - rb..] != *b.shape() {
        return Err(Error::shape(format!(
            "add_broadcast: {:?} is not a suffix of {:?}",
            b.shape(),
            a.shape()
        )));
    }
    let block = b.numel();
    let data: Vec<T> = a
        .data()
        .chunks_exact(block)
        .flat_map(|chunk| {
            chunk
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| x + y)
                .collect::<Vec<T>>()
        })
        .collect();
    let (na, nb) = (tape.node_of(a), tape.node_of(b));
    if !tape.is_recording() || (na.is_none() && nb.is_none()) {
        return Ok(Tensor::raw(a.shape().to_vec(), data));
    }
    Ok(tape.record(
        a.shape().to_vec(),
        data,
        Box::new(move |g, sink| {
            if let Some(n) = na {
                for (s, &gi) in sink.slot(n).iter_mut().zip(g) {
                    *s += gi;
                }
            }
            if let Some(n) = nb {
                let slot = sink.slot(n);
                for chunk in g.chunks_exact(block) {
                    for (s, &gi) in slot.iter_mut().zip(chunk) {
                        *s += gi;
                    }
                }
            }
        }),
    ))
}
