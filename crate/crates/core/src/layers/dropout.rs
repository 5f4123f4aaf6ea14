use rand::Rng;

use super::Result;
use crate::autodiff::{Tape, Tensor, Var};

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else `1/(1−rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], rate: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let keep = 1.0 - rate;
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("mask shape")
}

/// One Bernoulli(`rate`) decision per position.
pub fn drop_decisions<R: Rng + ?Sized>(rng: &mut R, n: usize, rate: f64) -> Vec<bool> {
    (0..n).map(|_| rng.random::<f64>() < rate).collect()
}

/// Per-unit inverted dropout on `x`. Identity when not training or `rate == 0`.
pub fn apply_dropout<R: Rng + ?Sized>(
    tape: &mut Tape<'_>,
    x: Var,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let shape = tape.shape(x).to_vec();
    let mask = tape.constant(dropout_mask(rng, &shape, rate));
    Ok(tape.mul(x, mask)?)
}
