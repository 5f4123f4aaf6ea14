//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of the backward rules it checks.

use rand::seq::index::sample;
use rand::Rng;

use super::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Magnitudes below this are compared as if they were this large, so
/// vanishing gradients are judged by absolute rather than relative error.
pub const DEFAULT_FLOOR: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug, PartialEq)]
pub struct Worst {
    pub tensor: String,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<Worst>,
    /// Per-tensor maxima, in the order the tensors were checked.
    pub per_tensor: Vec<(String, f64)>,
}

impl GradReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < tolerance
    }

    fn record(&mut self, tensor: &str, element: usize, analytic: f64, numeric: f64, floor: f64) {
        let err = relative_error(analytic, numeric, floor);
        let err = if err.is_nan() { f64::INFINITY } else { err };
        self.checked += 1;
        match self.per_tensor.last_mut() {
            Some((name, m)) if name == tensor => *m = m.max(err),
            _ => self.per_tensor.push((tensor.to_string(), err)),
        }
        if self.worst.is_none() || err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = Some(Worst {
                tensor: tensor.to_string(),
                element,
                analytic,
                numeric,
            });
        }
    }
}

/// Checks `f` with respect to every element of every input tensor.
pub fn check_inputs<F>(inputs: &[Tensor], step: f64, floor: f64, f: F) -> Result<GradReport, TensorError>
where
    F: Fn(&mut Tape<'static>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradReport::default();
    let mut work = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let name = format!("input{k}");
        let zeros = vec![0.0; inputs[k].len()];
        let analytic = grads.get(*v).unwrap_or(&zeros);
        for e in 0..inputs[k].len() {
            let orig = inputs[k].data()[e];
            work[k].data_mut()[e] = orig + step;
            let plus = eval(&work)?;
            work[k].data_mut()[e] = orig - step;
            let minus = eval(&work)?;
            work[k].data_mut()[e] = orig;
            report.record(&name, e, analytic[e], (plus - minus) / (2.0 * step), floor);
        }
    }
    Ok(report)
}

/// Checks a loss built from parameters in `store`.
///
/// `loss` is called with a fresh tape for every evaluation and must be
/// deterministic (reseed any dropout source inside it). At most
/// `max_per_tensor` randomly chosen elements of each parameter are probed.
pub fn check_params<F, E, R>(
    store: &mut ParamStore,
    ids: &[ParamId],
    max_per_tensor: usize,
    step: f64,
    floor: f64,
    rng: &mut R,
    loss: F,
) -> Result<GradReport, E>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, E>,
    E: From<TensorError>,
    R: Rng + ?Sized,
{
    let grads = {
        let mut tape = Tape::with_params(store);
        for &id in ids {
            tape.param(id);
        }
        let out = loss(&mut tape)?;
        tape.backward(out)?.into_param_grads(store)
    };
    let eval = |store: &ParamStore| -> Result<f64, E> {
        let mut tape = Tape::with_params(store);
        let out = loss(&mut tape)?;
        Ok(tape.value(out).item())
    };

    let mut report = GradReport::default();
    for &id in ids {
        if store.is_frozen(id) {
            continue;
        }
        let name = store.get(id).name.clone();
        let n = store.value(id).len();
        let analytic = grads.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let picks: Vec<usize> = if n <= max_per_tensor {
            (0..n).collect()
        } else {
            let mut v = sample(rng, n, max_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        for e in picks {
            let orig = store.value(id).data()[e];
            store.value_mut(id).data_mut()[e] = orig + step;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[e] = orig - step;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[e] = orig;
            report.record(&name, e, analytic[e], (plus - minus) / (2.0 * step), floor);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(2.0, 1.0, 1e-3), 0.5);
        assert!((relative_error(1e-9, 0.0, 1e-3) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // x ↦ sum(x·x) with the tape's real rule passes...
        let x = Tensor::vector(vec![0.3, -1.2]).unwrap();
        let ok = check_inputs(std::slice::from_ref(&x), DEFAULT_STEP, DEFAULT_FLOOR, |t, v| {
            let y = t.mul(v[0], v[0])?;
            t.sum(y)
        })
        .unwrap();
        assert!(ok.passes(DEFAULT_TOLERANCE), "{ok:?}");

        // ...while a stop-gradient style constant makes the analytic side half as large.
        let bad = check_inputs(&[x], DEFAULT_STEP, DEFAULT_FLOOR, |t, v| {
            let c = t.constant(t.value(v[0]).clone());
            let y = t.mul(v[0], c)?;
            t.sum(y)
        })
        .unwrap();
        assert!(!bad.passes(DEFAULT_TOLERANCE));
    }
}
