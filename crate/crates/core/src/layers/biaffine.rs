use super::{LayerError, Result};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};

/// Weights of a pairwise classifier `depᵀ Uₖ head + W[k]·(dep ⊕ head) + b[k]`.
///
/// Without the affine part only the bilinear term is computed.
#[derive(Clone, Debug)]
pub struct BiaffineParams {
    /// `d × c × d`, or `c × d` when diagonal.
    pub u: ParamId,
    pub w: Option<ParamId>,
    pub b: Option<ParamId>,
    pub dim: usize,
    pub classes: usize,
    pub diagonal: bool,
}

impl BiaffineParams {
    /// All weights start at zero.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        classes: usize,
        diagonal: bool,
        include_affine: bool,
    ) -> Self {
        let u_shape = if diagonal {
            vec![classes, dim]
        } else {
            vec![dim, classes, dim]
        };
        let u = store.add(format!("{name}/u"), Tensor::zeros(&u_shape), false);
        let (w, b) = if include_affine {
            (
                Some(store.add(format!("{name}/w"), Tensor::zeros(&[classes, 2 * dim]), false)),
                Some(store.add(format!("{name}/b"), Tensor::zeros(&[classes]), false)),
            )
        } else {
            (None, None)
        };
        BiaffineParams {
            u,
            w,
            b,
            dim,
            classes,
            diagonal,
        }
    }

    pub fn include_affine(&self) -> bool {
        self.w.is_some()
    }

    /// `dep: n₁×d`, `head: n₂×d` to `n₁×n₂×c`.
    pub fn forward(&self, tape: &mut Tape<'_>, dep: Var, head: Var) -> Result<Var> {
        for v in [dep, head] {
            let width = tape.shape(v).last().copied().unwrap_or(0);
            if width != self.dim {
                return Err(LayerError::Dimension {
                    layer: "biaffine",
                    expected: self.dim,
                    actual: width,
                });
            }
        }
        let u = tape.param(self.u);
        let w = self.w.map(|w| tape.param(w));
        let b = self.b.map(|b| tape.param(b));
        Ok(tape.biaffine(dep, head, u, w, b, self.diagonal)?)
    }
}
