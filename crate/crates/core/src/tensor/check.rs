//! Finite-difference gradient checking.

use super::{Element, Tape, Tensor};
use crate::error::Result;
use crate::rng::Rng;

/// Compares analytic gradients of `f` against central finite differences.
///
/// `f` receives a tape plus leaf-bound copies of `inputs` and returns any
/// tensor; non-scalar outputs are reduced with a fixed random linear
/// functional so every output coordinate influences the check. Returns the
/// maximum over input coordinates of
/// `|analytic - numeric| / max(1e-8, |numeric|)`.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], step: f64) -> Result<f64>
where
    T: Element,
    F: Fn(&Tape<T>, &[Tensor<T>]) -> Result<Tensor<T>>,
{
    // Probe once to size the reduction weights.
    let probe = {
        let tape = Tape::inference();
        let xs: Vec<Tensor<T>> = inputs.iter().map(|t| t.detached()).collect();
        f(&tape, &xs)?
    };
    let weights: Vec<f64> = if probe.numel() == 1 {
        vec![1.0]
    } else {
        let mut rng = Rng::new(0x5eed_c0de);
        (0..probe.numel()).map(|_| rng.uniform_in(0.25, 1.0)).collect()
    };

    // Analytic pass. An output with no tape node ignores its inputs, so all
    // analytic gradients are zero.
    let tape = Tape::new();
    let leaves: Vec<Tensor<T>> = inputs
        .iter()
        .map(|t| tape.leaf(&t.detached().requiring_grad()))
        .collect();
    let y = f(&tape, &leaves)?;
    let loss = dot_with(&tape, &y, &weights);
    let analytic: Vec<Vec<T>> = if tape.node_of(&loss).is_some() {
        let grads = tape.backward(&loss)?;
        leaves
            .iter()
            .map(|l| grads.wrt(l).expect("leaf is on tape").data().to_vec())
            .collect()
    } else {
        leaves.iter().map(|l| vec![T::zero(); l.numel()]).collect()
    };

    // Numeric pass, one coordinate at a time.
    let eval = |xs: &[Tensor<T>]| -> Result<f64> {
        let tape = Tape::inference();
        let y = f(&tape, xs)?;
        Ok(y.data()
            .iter()
            .zip(weights.iter())
            .map(|(v, w)| v.as_f64() * w)
            .sum())
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<T>> = inputs.iter().map(|t| t.detached()).collect();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = T::from_f64(orig.as_f64() + step);
            let plus = eval(&work)?;
            work[i].data_mut()[j] = T::from_f64(orig.as_f64() - step);
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[i][j].as_f64();
            let err = (a - numeric).abs() / f64::max(1e-8, numeric.abs());
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

/// Scalar dot product with constant weights, recorded so it back-propagates.
fn dot_with<T: Element>(tape: &Tape<T>, y: &Tensor<T>, weights: &[f64]) -> Tensor<T> {
    let s: f64 = y
        .data()
        .iter()
        .zip(weights.iter())
        .map(|(v, w)| v.as_f64() * w)
        .sum();
    let node = tape.node_of(y);
    if !tape.is_recording() || node.is_none() {
        return Tensor::scalar(T::from_f64(s));
    }
    let node = node.unwrap();
    let w: Vec<T> = weights.iter().map(|&w| T::from_f64(w)).collect();
    tape.record(
        vec![1],
        vec![T::from_f64(s)],
        Box::new(move |g, sink| {
            let g0 = g[0];
            let slot = sink.slot(node);
            for (s, &wi) in slot.iter_mut().zip(w.iter()) {
                *s += g0 * wi;
            }
        }),
    )
}
