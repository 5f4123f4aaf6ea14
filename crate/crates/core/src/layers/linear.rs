use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::{LayerError, Result};
use crate::autodiff::{glorot, ParamId, ParamStore, Tape, Tensor, Var};

/// Affine map `x W + b` applied row-wise.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
        input: usize,
        output: usize,
    ) -> Self {
        let w = store.add(format!("{name}/w"), glorot(rng, input, output), false);
        let b = store.add(format!("{name}/b"), Tensor::zeros(&[output]), false);
        Linear {
            w,
            b,
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let width = tape.shape(x).last().copied().unwrap_or(0);
        if width != self.input {
            return Err(LayerError::Dimension {
                layer: "linear",
                expected: self.input,
                actual: width,
            });
        }
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let xw = tape.matmul(x, w)?;
        Ok(tape.add(xw, b)?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Nonlinearity {
    #[default]
    Identity,
    Relu,
}

impl FromStr for Nonlinearity {
    type Err = LayerError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "identity" => Ok(Nonlinearity::Identity),
            "relu" => Ok(Nonlinearity::Relu),
            other => Err(LayerError::UnknownNonlinearity(other.to_string())),
        }
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Nonlinearity::Identity => "identity",
            Nonlinearity::Relu => "relu",
        })
    }
}

/// Single-layer feedforward projection.
#[derive(Clone, Debug)]
pub struct Fnn {
    pub linear: Linear,
    pub nonlinearity: Nonlinearity,
}

impl Fnn {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
        input: usize,
        output: usize,
        nonlinearity: Nonlinearity,
    ) -> Self {
        Fnn {
            linear: Linear::new(store, name, rng, input, output),
            nonlinearity,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let y = self.linear.forward(tape, x)?;
        Ok(match self.nonlinearity {
            Nonlinearity::Identity => y,
            Nonlinearity::Relu => tape.relu(y)?,
        })
    }
}
