use rand::Rng;

use super::dropout::dropout_mask;
use super::{LayerError, Result};
use crate::autodiff::{glorot, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LstmDirection {
    Forward,
    Backward,
}

/// One unidirectional LSTM. Gate blocks are laid out `[i | f | o | g]`
/// along the columns of `wx` (`input × 4h`) and `wh` (`h × 4h`).
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
    pub direction: LstmDirection,
}

/// Dropout masks seen by each timestep, for inspection in tests.
#[derive(Clone, Debug, Default)]
pub struct LstmTrace {
    pub input_masks: Vec<Vec<f64>>,
    pub recurrent_masks: Vec<Vec<f64>>,
}

impl LstmParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
        input: usize,
        hidden: usize,
        direction: LstmDirection,
    ) -> Self {
        LstmParams {
            wx: store.add(format!("{name}/wx"), glorot(rng, input, 4 * hidden), false),
            wh: store.add(format!("{name}/wh"), glorot(rng, hidden, 4 * hidden), false),
            b: store.add(format!("{name}/b"), Tensor::zeros(&[4 * hidden]), false),
            input,
            hidden,
            direction,
        }
    }

    /// Runs over the rows of `x` (`n × input`) in this LSTM's direction.
    ///
    /// `input_mask` (`[input]`) and `recurrent_mask` (`[hidden]`) are
    /// multiplied into every timestep's input and previous hidden state.
    /// Returns the hidden states in sentence order and the final state
    /// (`1 × hidden`) reached at the end of the pass.
    pub fn run(
        &self,
        tape: &mut Tape<'_>,
        x: Var,
        input_mask: Option<Var>,
        recurrent_mask: Option<Var>,
        mut trace: Option<&mut LstmTrace>,
    ) -> Result<(Var, Var)> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(LayerError::EmptySequence);
        }
        if shape[1] != self.input {
            return Err(LayerError::Dimension {
                layer: "lstm",
                expected: self.input,
                actual: shape[1],
            });
        }
        let (n, h) = (shape[0], self.hidden);
        let x = match input_mask {
            Some(m) => {
                if let Some(t) = trace.as_deref_mut() {
                    let values = tape.value(m).data().to_vec();
                    t.input_masks.extend(std::iter::repeat_n(values, n));
                }
                tape.mul(x, m)?
            }
            None => x,
        };
        let wx = tape.param(self.wx);
        let wh = tape.param(self.wh);
        let b = tape.param(self.b);
        let projected = tape.matmul(x, wx)?;
        let projected = tape.add(projected, b)?;

        let order: Vec<usize> = match self.direction {
            LstmDirection::Forward => (0..n).collect(),
            LstmDirection::Backward => (0..n).rev().collect(),
        };
        let mut hidden = tape.constant(Tensor::zeros(&[1, h]));
        let mut cell: Option<Var> = None;
        let mut outputs: Vec<Option<Var>> = vec![None; n];
        for &t in &order {
            let mut pre = tape.narrow(projected, 0, t, 1)?;
            if cell.is_some() {
                let prev = match recurrent_mask {
                    Some(m) => {
                        if let Some(tr) = trace.as_deref_mut() {
                            tr.recurrent_masks.push(tape.value(m).data().to_vec());
                        }
                        tape.mul(hidden, m)?
                    }
                    None => hidden,
                };
                let rec = tape.matmul(prev, wh)?;
                pre = tape.add(pre, rec)?;
            }
            let i = tape.narrow(pre, 1, 0, h)?;
            let i = tape.sigmoid(i)?;
            let o = tape.narrow(pre, 1, 2 * h, h)?;
            let o = tape.sigmoid(o)?;
            let g = tape.narrow(pre, 1, 3 * h, h)?;
            let g = tape.tanh(g)?;
            let mut c = tape.mul(i, g)?;
            if let Some(prev_c) = cell {
                let f = tape.narrow(pre, 1, h, h)?;
                let f = tape.sigmoid(f)?;
                let kept = tape.mul(f, prev_c)?;
                c = tape.add(c, kept)?;
            }
            let squashed = tape.tanh(c)?;
            hidden = tape.mul(o, squashed)?;
            cell = Some(c);
            outputs[t] = Some(hidden);
        }
        let rows: Vec<Var> = outputs.into_iter().map(|v| v.expect("every step ran")).collect();
        let all = tape.concat(&rows, 0)?;
        Ok((all, hidden))
    }
}

/// Stacked bidirectional LSTM; each layer reads the concatenated
/// forward/backward states of the layer below.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub layers: Vec<(LstmParams, LstmParams)>,
    pub input: usize,
    pub hidden: usize,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
        input: usize,
        hidden: usize,
        depth: usize,
    ) -> Self {
        let layers = (0..depth)
            .map(|l| {
                let din = if l == 0 { input } else { 2 * hidden };
                (
                    LstmParams::new(store, &format!("{name}/{l}/fw"), rng, din, hidden, LstmDirection::Forward),
                    LstmParams::new(store, &format!("{name}/{l}/bw"), rng, din, hidden, LstmDirection::Backward),
                )
            })
            .collect();
        BiLstm {
            layers,
            input,
            hidden,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    /// `n × input` to `n × 2h`. While training, each direction of each layer
    /// samples one input mask and one recurrent mask for the whole sequence.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        x: Var,
        ff_drop: f64,
        recur_drop: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        self.forward_traced(tape, x, ff_drop, recur_drop, training, rng, None)
    }

    /// As [`BiLstm::forward`], recording one trace per direction per layer.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_traced<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        x: Var,
        ff_drop: f64,
        recur_drop: f64,
        training: bool,
        rng: &mut R,
        mut traces: Option<&mut Vec<LstmTrace>>,
    ) -> Result<Var> {
        let mut input = x;
        for (fw, bw) in &self.layers {
            let mut outs = Vec::with_capacity(2);
            for lstm in [fw, bw] {
                let (im, rm) = if training {
                    (
                        (ff_drop > 0.0).then(|| tape.constant(dropout_mask(rng, &[lstm.input], ff_drop))),
                        (recur_drop > 0.0).then(|| tape.constant(dropout_mask(rng, &[lstm.hidden], recur_drop))),
                    )
                } else {
                    (None, None)
                };
                let out = match traces.as_deref_mut() {
                    Some(ts) => {
                        let mut tr = LstmTrace::default();
                        let out = lstm.run(tape, input, im, rm, Some(&mut tr))?;
                        ts.push(tr);
                        out
                    }
                    None => lstm.run(tape, input, im, rm, None)?,
                };
                outs.push(out.0);
            }
            input = tape.concat(&outs, 1)?;
        }
        Ok(input)
    }
}
