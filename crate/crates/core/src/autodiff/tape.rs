//! Dynamic reverse-mode tape.
//!
//! Every operation appends a node holding its output value and enough
//! information to replay its backward rule. Nodes are only ever appended, so
//! the node vector is topologically ordered by construction and
//! [`Tape::backward`] is a single reverse sweep.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{gemm, matmul_into, Mat};
use super::{ParamId, ParamStore, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

/// Pointwise operations exposed through [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    Identity,
}

impl Elementwise {
    pub fn is_binary(self) -> bool {
        matches!(self, Elementwise::Add | Elementwise::Mul)
    }
}

impl FromStr for Elementwise {
    type Err = TensorError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "add" => Elementwise::Add,
            "mul" | "multiply" => Elementwise::Mul,
            "sigmoid" => Elementwise::Sigmoid,
            "tanh" => Elementwise::Tanh,
            "relu" => Elementwise::Relu,
            "identity" => Elementwise::Identity,
            other => return Err(TensorError::UnknownOp(other.to_string())),
        })
    }
}

struct BiaffineNode {
    dep: usize,
    head: usize,
    u: usize,
    w: Option<usize>,
    b: Option<usize>,
    diagonal: bool,
    classes: usize,
    dim: usize,
    /// `dep · U` laid out `n_dep × (classes·dim)`; only kept for the full tensor.
    dep_u: Vec<f64>,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    Narrow {
        input: usize,
        axis: usize,
        start: usize,
    },
    SelectRows {
        sources: Vec<usize>,
        picks: Vec<(usize, usize)>,
    },
    Reshape(usize),
    SwapLeading(usize),
    Sum(usize),
    SoftmaxXent {
        logits: usize,
        probs: Vec<f64>,
        gold: Vec<usize>,
        mask: Vec<bool>,
        count: usize,
    },
    SigmoidXent {
        logits: usize,
        gold: Vec<f64>,
        mask: Vec<bool>,
        count: usize,
    },
    Biaffine(Box<BiaffineNode>),
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for one forward/backward pass.
///
/// Parameters are borrowed from a [`ParamStore`] rather than copied; the
/// gradients produced by [`Tape::backward`] are handed back to the caller
/// who applies them to the store once the tape is gone.
pub struct Tape<'p> {
    id: u64,
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

type Result<T> = std::result::Result<T, TensorError>;

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

impl Default for Tape<'static> {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape<'static> {
    /// A tape without parameters; inputs come from [`Tape::variable`] and [`Tape::constant`].
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            params: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }
}

impl<'p> Tape<'p> {
    pub fn with_params(params: &'p ParamStore) -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            params: Some(params),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn push_owned(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let rg = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push(Value::Owned(value), op, rg)
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(v.idx)
    }

    fn val(&self, idx: usize) -> &Tensor {
        match &self.nodes[idx].value {
            Value::Owned(t) => t,
            Value::Param(id) => self
                .params
                .expect("param node on a tape without store")
                .value(*id),
        }
    }

    /// Value of a recorded variable. Panics on a variable from another tape.
    pub fn value(&self, v: Var) -> &Tensor {
        let idx = self.check(v).expect("variable from another tape");
        self.val(idx)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[self.check(v).expect("variable from another tape")].requires_grad
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Value::Owned(t), Op::Leaf, false)
    }

    /// Input leaf whose gradient is reported by [`Gradients::get`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(Value::Owned(t), Op::Leaf, true)
    }

    /// Places a parameter on the tape, once per tape.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let store = self.params.expect("Tape::param on a tape without a ParamStore");
        let frozen = store.is_frozen(id);
        let v = self.push(Value::Param(id), Op::Leaf, !frozen);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(
            Mat::dense(ta.data(), m, k),
            Mat::dense(tb.data(), k, n),
            &mut out,
            false,
        );
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push_owned(t, Op::MatMul(ia, ib), &[ia, ib]))
    }

    fn broadcast_check(&self, op: &'static str, ia: usize, ib: usize) -> Result<()> {
        let (sa, sb) = (self.val(ia).shape(), self.val(ib).shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(TensorError::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    /// `a + b`, where `b` may broadcast over `a`'s leading dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.broadcast_check("add", ia, ib)?;
        let (ta, tb) = (self.val(ia), self.val(ib));
        let bl = tb.len();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tb.data()[i % bl])
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push_owned(t, Op::Add(ia, ib), &[ia, ib]))
    }

    /// Elementwise product with the same trailing broadcast rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.broadcast_check("mul", ia, ib)?;
        let (ta, tb) = (self.val(ia), self.val(ib));
        let bl = tb.len();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * tb.data()[i % bl])
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push_owned(t, Op::Mul(ia, ib), &[ia, ib]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let ta = self.val(ia);
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| x * factor).collect(),
        )?;
        Ok(self.push_owned(t, Op::Scale(ia, factor), &[ia]))
    }

    fn unary(&mut self, a: Var, f: fn(f64) -> f64, op: fn(usize) -> Op) -> Result<Var> {
        let ia = self.check(a)?;
        let ta = self.val(ia);
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())?;
        Ok(self.push_owned(t, op(ia), &[ia]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::tanh, Op::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(0.0), Op::Relu)
    }

    /// Dispatches on an operation kind; binary kinds need `b`, unary kinds reject it.
    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind, b) {
            (Elementwise::Add, Some(b)) => self.add(a, b),
            (Elementwise::Mul, Some(b)) => self.mul(a, b),
            (Elementwise::Sigmoid, None) => self.sigmoid(a),
            (Elementwise::Tanh, None) => self.tanh(a),
            (Elementwise::Relu, None) => self.relu(a),
            (Elementwise::Identity, None) => {
                self.check(a)?;
                Ok(a)
            }
            (kind, _) => Err(TensorError::Invalid {
                op: "elementwise",
                msg: format!(
                    "{kind:?} takes {} operand(s)",
                    if kind.is_binary() { 2 } else { 1 }
                ),
            }),
        }
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect::<Result<_>>()?;
        let first = *idx.first().ok_or(TensorError::Invalid {
            op: "concat",
            msg: "no parts".into(),
        })?;
        if idx.len() == 1 {
            return Ok(parts[0]);
        }
        let base = self.val(first).shape().to_vec();
        if axis >= base.len() {
            return Err(TensorError::Invalid {
                op: "concat",
                msg: format!("axis {axis} out of range for rank {}", base.len()),
            });
        }
        let mut total = 0;
        for &i in &idx {
            let s = self.val(i).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: base,
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in &idx {
                let t = self.val(i);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, data)?;
        let op = Op::Concat {
            parts: idx.clone(),
            axis,
        };
        Ok(self.push_owned(t, op, &idx))
    }

    /// The slice `start..start+len` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let ta = self.val(ia);
        let shape = ta.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::Invalid {
                op: "narrow",
                msg: format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            });
        }
        let (outer, inner) = outer_inner(shape, axis);
        let full = shape[axis] * inner;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = o * full + start * inner;
            data.extend_from_slice(&ta.data()[from..from + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let t = Tensor::new(out_shape, data)?;
        Ok(self.push_owned(
            t,
            Op::Narrow {
                input: ia,
                axis,
                start,
            },
            &[ia],
        ))
    }

    /// Gathers rows from several matrices with equal column counts.
    ///
    /// `picks[r] = (source, row)` selects row `row` of `sources[source]` as
    /// output row `r`.
    pub fn select_rows(&mut self, sources: &[Var], picks: &[(usize, usize)]) -> Result<Var> {
        let idx: Vec<usize> = sources.iter().map(|&s| self.check(s)).collect::<Result<_>>()?;
        let cols = match idx.first() {
            Some(&i) if self.val(i).rank() == 2 => self.val(i).shape()[1],
            _ => {
                return Err(TensorError::Invalid {
                    op: "select_rows",
                    msg: "sources must be non-empty matrices".into(),
                })
            }
        };
        for &i in &idx {
            let s = self.val(i).shape();
            if s.len() != 2 || s[1] != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "select_rows",
                    left: self.val(idx[0]).shape().to_vec(),
                    right: s.to_vec(),
                });
            }
        }
        if picks.is_empty() {
            return Err(TensorError::Invalid {
                op: "select_rows",
                msg: "no rows selected".into(),
            });
        }
        let mut data = Vec::with_capacity(picks.len() * cols);
        for &(s, r) in picks {
            let t = self.val(*idx.get(s).ok_or_else(|| TensorError::Invalid {
                op: "select_rows",
                msg: format!("source {s} of {}", idx.len()),
            })?);
            if r >= t.shape()[0] {
                return Err(TensorError::Invalid {
                    op: "select_rows",
                    msg: format!("row {r} out of range for {:?}", t.shape()),
                });
            }
            data.extend_from_slice(t.row(r));
        }
        let t = Tensor::new(vec![picks.len(), cols], data)?;
        let op = Op::SelectRows {
            sources: idx.clone(),
            picks: picks.to_vec(),
        };
        Ok(self.push_owned(t, op, &idx))
    }

    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let picks: Vec<(usize, usize)> = rows.iter().map(|&r| (0, r)).collect();
        self.select_rows(&[table], &picks)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.val(ia).clone().reshaped(shape.to_vec())?;
        Ok(self.push_owned(t, Op::Reshape(ia), &[ia]))
    }

    /// Swaps the first two axes: `[a, b, rest..] -> [b, a, rest..]`.
    pub fn swap_leading(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let ta = self.val(ia);
        let s = ta.shape();
        if s.len() < 2 {
            return Err(TensorError::Invalid {
                op: "swap_leading",
                msg: format!("rank {} < 2", s.len()),
            });
        }
        let (n0, n1) = (s[0], s[1]);
        let inner: usize = s[2..].iter().product();
        let mut data = vec![0.0; ta.len()];
        for i in 0..n0 {
            for j in 0..n1 {
                let src = (i * n1 + j) * inner;
                let dst = (j * n0 + i) * inner;
                data[dst..dst + inner].copy_from_slice(&ta.data()[src..src + inner]);
            }
        }
        let mut shape = s.to_vec();
        shape.swap(0, 1);
        let t = Tensor::new(shape, data)?;
        Ok(self.push_owned(t, Op::SwapLeading(ia), &[ia]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let s = self.val(ia).data().iter().sum();
        Ok(self.push_owned(Tensor::scalar(s), Op::Sum(ia), &[ia]))
    }

    /// Mean softmax cross-entropy over the rows of `logits` whose mask is set.
    ///
    /// With no rows selected the loss is 0 and no gradient flows.
    pub fn softmax_xent(&mut self, logits: Var, gold: &[usize], mask: &[bool]) -> Result<Var> {
        let il = self.check(logits)?;
        let tl = self.val(il);
        if tl.rank() != 2 || gold.len() != tl.shape()[0] || mask.len() != gold.len() {
            return Err(TensorError::Invalid {
                op: "softmax_xent",
                msg: format!(
                    "logits {:?} with {} gold indices and {} mask entries",
                    tl.shape(),
                    gold.len(),
                    mask.len()
                ),
            });
        }
        let c = tl.shape()[1];
        if let Some(&bad) = gold.iter().find(|&&g| g >= c) {
            return Err(TensorError::ClassOutOfRange {
                op: "softmax_xent",
                index: bad,
                classes: c,
            });
        }
        let mut probs = vec![0.0; tl.len()];
        let mut total = 0.0;
        let mut count = 0;
        for (r, (&g, &m)) in gold.iter().zip(mask).enumerate() {
            if !m {
                continue;
            }
            count += 1;
            let row = &tl.data()[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            for k in 0..c {
                probs[r * c + k] = (row[k] - max).exp() / z;
            }
            total += z.ln() + max - row[g];
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let op = Op::SoftmaxXent {
            logits: il,
            probs,
            gold: gold.to_vec(),
            mask: mask.to_vec(),
            count,
        };
        Ok(self.push_owned(Tensor::scalar(loss), op, &[il]))
    }

    /// Mean binary cross-entropy with logits over the unmasked cells, using
    /// `max(s,0) − s·y + ln(1+e^(−|s|))` so large |s| never overflows.
    pub fn sigmoid_xent(&mut self, logits: Var, gold: &[f64], mask: &[bool]) -> Result<Var> {
        let il = self.check(logits)?;
        let tl = self.val(il);
        if gold.len() != tl.len() || mask.len() != tl.len() {
            return Err(TensorError::Invalid {
                op: "sigmoid_xent",
                msg: format!(
                    "logits {:?} with {} gold and {} mask cells",
                    tl.shape(),
                    gold.len(),
                    mask.len()
                ),
            });
        }
        if let Some(&bad) = gold.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(TensorError::NonBinaryGold {
                op: "sigmoid_xent",
                value: bad,
            });
        }
        let mut total = 0.0;
        let mut count = 0;
        for ((&s, &y), &m) in tl.data().iter().zip(gold).zip(mask) {
            if m {
                count += 1;
                total += s.max(0.0) - s * y + (-s.abs()).exp().ln_1p();
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let op = Op::SigmoidXent {
            logits: il,
            gold: gold.to_vec(),
            mask: mask.to_vec(),
            count,
        };
        Ok(self.push_owned(Tensor::scalar(loss), op, &[il]))
    }

    /// Pairwise bilinear/biaffine scores.
    ///
    /// For `dep: n₁×d`, `head: n₂×d` the result is `n₁×n₂×c` with
    /// `out[i][j][k] = depᵢᵀ Uₖ headⱼ + W[k]·(depᵢ ⊕ headⱼ) + b[k]`.
    /// `u` is `d×c×d`, or `c×d` when `diagonal` (each `Uₖ` diagonal).
    /// `w` is `c×2d` and `b` is `c`; either may be omitted.
    pub fn biaffine(
        &mut self,
        dep: Var,
        head: Var,
        u: Var,
        w: Option<Var>,
        b: Option<Var>,
        diagonal: bool,
    ) -> Result<Var> {
        let (idep, ihead, iu) = (self.check(dep)?, self.check(head)?, self.check(u)?);
        let iw = w.map(|w| self.check(w)).transpose()?;
        let ib = b.map(|b| self.check(b)).transpose()?;
        let (td, th, tu) = (self.val(idep), self.val(ihead), self.val(iu));
        let mismatch = |l: &Tensor, r: &Tensor| TensorError::ShapeMismatch {
            op: "biaffine",
            left: l.shape().to_vec(),
            right: r.shape().to_vec(),
        };
        if td.rank() != 2 || th.rank() != 2 || td.shape()[1] != th.shape()[1] {
            return Err(mismatch(td, th));
        }
        let (n1, n2, d) = (td.shape()[0], th.shape()[0], td.shape()[1]);
        let c = if diagonal {
            if tu.rank() != 2 || tu.shape()[1] != d {
                return Err(mismatch(td, tu));
            }
            tu.shape()[0]
        } else {
            if tu.rank() != 3 || tu.shape()[0] != d || tu.shape()[2] != d {
                return Err(mismatch(td, tu));
            }
            tu.shape()[1]
        };
        if let Some(iw) = iw {
            let tw = self.val(iw);
            if tw.shape() != [c, 2 * d] {
                return Err(mismatch(tu, tw));
            }
        }
        if let Some(ib) = ib {
            let tb = self.val(ib);
            if tb.shape() != [c] {
                return Err(mismatch(tu, tb));
            }
        }

        let mut out = vec![0.0; n1 * n2 * c];
        let mut dep_u = Vec::new();
        if diagonal {
            let mut scaled = vec![0.0; n1 * d];
            for k in 0..c {
                let uk = &tu.data()[k * d..(k + 1) * d];
                for i in 0..n1 {
                    for a in 0..d {
                        scaled[i * d + a] = td.data()[i * d + a] * uk[a];
                    }
                }
                // out[i][j][k] for fixed k: row stride n2·c, column stride c
                gemm(
                    Mat::dense(&scaled, n1, d),
                    Mat::dense(th.data(), n2, d).t(),
                    &mut out[k..],
                    n2 * c,
                    c,
                    0.0,
                );
            }
        } else {
            dep_u = vec![0.0; n1 * c * d];
            matmul_into(
                Mat::dense(td.data(), n1, d),
                Mat::dense(tu.data(), d, c * d),
                &mut dep_u,
                false,
            );
            for i in 0..n1 {
                // (c×d)·(d×n2) written transposed into out[i] (n2×c)
                gemm(
                    Mat::dense(&dep_u[i * c * d..(i + 1) * c * d], c, d),
                    Mat::dense(th.data(), n2, d).t(),
                    &mut out[i * n2 * c..(i + 1) * n2 * c],
                    1,
                    c,
                    0.0,
                );
            }
        }
        if let Some(iw) = iw {
            let tw = self.val(iw);
            let w1 = Mat::strided(tw.data(), c, d, 2 * d, 1);
            let w2 = Mat::strided(&tw.data()[d..], c, d, 2 * d, 1);
            let mut p = vec![0.0; n1 * c];
            let mut q = vec![0.0; n2 * c];
            matmul_into(Mat::dense(td.data(), n1, d), w1.t(), &mut p, false);
            matmul_into(Mat::dense(th.data(), n2, d), w2.t(), &mut q, false);
            for i in 0..n1 {
                for j in 0..n2 {
                    let cell = &mut out[(i * n2 + j) * c..(i * n2 + j + 1) * c];
                    for k in 0..c {
                        cell[k] += p[i * c + k] + q[j * c + k];
                    }
                }
            }
        }
        if let Some(ib) = ib {
            let tb = self.val(ib).data();
            for cell in out.chunks_mut(c) {
                for k in 0..c {
                    cell[k] += tb[k];
                }
            }
        }
        let t = Tensor::new(vec![n1, n2, c], out)?;
        let mut inputs = vec![idep, ihead, iu];
        inputs.extend(iw);
        inputs.extend(ib);
        let op = Op::Biaffine(Box::new(BiaffineNode {
            dep: idep,
            head: ihead,
            u: iu,
            w: iw,
            b: ib,
            diagonal,
            classes: c,
            dim: d,
            dep_u,
        }));
        Ok(self.push_owned(t, op, &inputs))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let il = self.check(loss)?;
        if !self.val(il).is_scalar() {
            return Err(TensorError::NonScalarLoss(self.val(il).shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[il].requires_grad {
            grads[il] = Some(vec![1.0]);
        }
        for i in (0..=il).rev() {
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else {
                continue;
            };
            self.backward_node(i, g, lower);
        }
        let mut param_nodes: Vec<(ParamId, usize)> = self
            .param_vars
            .iter()
            .map(|(id, v)| (*id, v.idx))
            .collect();
        param_nodes.sort();
        Ok(Gradients {
            tape: self.id,
            grads,
            param_nodes,
            param_count: self.params.map_or(0, ParamStore::len),
        })
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], idx: usize) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[idx].requires_grad {
            return None;
        }
        let n = self.val(idx).len();
        Some(grads[idx].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = self.val(i);
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let gm = Mat::dense(g, m, n);
                if let Some(ga) = self.grad_slot(grads, *a) {
                    matmul_into(gm, Mat::dense(tb.data(), k, n).t(), ga, true);
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    matmul_into(Mat::dense(ta.data(), m, k).t(), gm, gb, true);
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    let bl = gb.len();
                    for (j, y) in g.iter().enumerate() {
                        gb[j % bl] += y;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let bl = tb.len();
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for (j, y) in g.iter().enumerate() {
                        ga[j] += y * tb.data()[j % bl];
                    }
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    for (j, y) in g.iter().enumerate() {
                        gb[j % bl] += y * ta.data()[j];
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += f * y);
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for ((x, y), s) in ga.iter_mut().zip(g).zip(out.data()) {
                        *x += y * s * (1.0 - s);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for ((x, y), t) in ga.iter_mut().zip(g).zip(out.data()) {
                        *x += y * (1.0 - t * t);
                    }
                }
            }
            Op::Relu(a) => {
                let ta = self.val(*a);
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for ((x, y), v) in ga.iter_mut().zip(g).zip(ta.data()) {
                        if *v > 0.0 {
                            *x += y;
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, inner) = outer_inner(out.shape(), *axis);
                let full = out.shape()[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = self.val(p).shape()[*axis] * inner;
                    if let Some(gp) = self.grad_slot(grads, p) {
                        for o in 0..outer {
                            let src = &g[o * full + offset..o * full + offset + chunk];
                            gp[o * chunk..(o + 1) * chunk]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Narrow { input, axis, start } => {
                let shape = self.val(*input).shape().to_vec();
                let (outer, inner) = outer_inner(&shape, *axis);
                let full = shape[*axis] * inner;
                let chunk = out.shape()[*axis] * inner;
                if let Some(gi) = self.grad_slot(grads, *input) {
                    for o in 0..outer {
                        let dst = o * full + start * inner;
                        gi[dst..dst + chunk]
                            .iter_mut()
                            .zip(&g[o * chunk..(o + 1) * chunk])
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::SelectRows { sources, picks } => {
                let cols = out.shape()[1];
                for (r, &(s, row)) in picks.iter().enumerate() {
                    if let Some(gs) = self.grad_slot(grads, sources[s]) {
                        gs[row * cols..(row + 1) * cols]
                            .iter_mut()
                            .zip(&g[r * cols..(r + 1) * cols])
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::SwapLeading(a) => {
                let s = out.shape();
                // output is [n1, n0, inner]; input is [n0, n1, inner]
                let (n1, n0) = (s[0], s[1]);
                let inner: usize = s[2..].iter().product();
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for j in 0..n1 {
                        for i in 0..n0 {
                            let src = (j * n0 + i) * inner;
                            let dst = (i * n1 + j) * inner;
                            ga[dst..dst + inner]
                                .iter_mut()
                                .zip(&g[src..src + inner])
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::SoftmaxXent {
                logits,
                probs,
                gold,
                mask,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let c = self.val(*logits).shape()[1];
                let scale = g[0] / *count as f64;
                if let Some(gl) = self.grad_slot(grads, *logits) {
                    for (r, (&y, &m)) in gold.iter().zip(mask).enumerate() {
                        if !m {
                            continue;
                        }
                        for k in 0..c {
                            let target = if k == y { 1.0 } else { 0.0 };
                            gl[r * c + k] += scale * (probs[r * c + k] - target);
                        }
                    }
                }
            }
            Op::SigmoidXent {
                logits,
                gold,
                mask,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let scale = g[0] / *count as f64;
                let tl = self.val(*logits);
                if let Some(gl) = self.grad_slot(grads, *logits) {
                    for (j, ((&s, &y), &m)) in tl.data().iter().zip(gold).zip(mask).enumerate() {
                        if m {
                            gl[j] += scale * (sigmoid(s) - y);
                        }
                    }
                }
            }
            Op::Biaffine(node) => self.biaffine_backward(node, g, grads),
        }
    }

    fn biaffine_backward(&self, node: &BiaffineNode, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (td, th, tu) = (self.val(node.dep), self.val(node.head), self.val(node.u));
        let (n1, n2, d, c) = (td.shape()[0], th.shape()[0], node.dim, node.classes);
        let dep = Mat::dense(td.data(), n1, d);
        let head = Mat::dense(th.data(), n2, d);

        if node.diagonal {
            // m_k = g_k · head (n1×d), r_k = g_kᵀ · dep (n2×d), with g_k = g[:, :, k]
            let mut m = vec![0.0; n1 * d];
            let mut r = vec![0.0; n2 * d];
            for k in 0..c {
                let gk = Mat::strided(&g[k..], n1, n2, n2 * c, c);
                matmul_into(gk, head, &mut m, false);
                matmul_into(gk.t(), dep, &mut r, false);
                let uk = &tu.data()[k * d..(k + 1) * d];
                if let Some(gu) = self.grad_slot(grads, node.u) {
                    for i in 0..n1 {
                        for a in 0..d {
                            gu[k * d + a] += td.data()[i * d + a] * m[i * d + a];
                        }
                    }
                }
                if let Some(gd) = self.grad_slot(grads, node.dep) {
                    for i in 0..n1 {
                        for a in 0..d {
                            gd[i * d + a] += uk[a] * m[i * d + a];
                        }
                    }
                }
                if let Some(gh) = self.grad_slot(grads, node.head) {
                    for j in 0..n2 {
                        for a in 0..d {
                            gh[j * d + a] += uk[a] * r[j * d + a];
                        }
                    }
                }
            }
        } else {
            let dep_u = &node.dep_u;
            let need_du =
                self.nodes[node.dep].requires_grad || self.nodes[node.u].requires_grad;
            let mut d_dep_u = if need_du { vec![0.0; n1 * c * d] } else { Vec::new() };
            for i in 0..n1 {
                // g_i viewed as c×n2 (row stride 1, column stride c)
                let gi = Mat::strided(&g[i * n2 * c..], c, n2, 1, c);
                if need_du {
                    matmul_into(gi, head, &mut d_dep_u[i * c * d..(i + 1) * c * d], false);
                }
                if let Some(gh) = self.grad_slot(grads, node.head) {
                    matmul_into(gi.t(), Mat::dense(&dep_u[i * c * d..], c, d), gh, true);
                }
            }
            if need_du {
                let ddu = Mat::dense(&d_dep_u, n1, c * d);
                if let Some(gd) = self.grad_slot(grads, node.dep) {
                    matmul_into(ddu, Mat::dense(tu.data(), d, c * d).t(), gd, true);
                }
                if let Some(gu) = self.grad_slot(grads, node.u) {
                    matmul_into(dep.t(), ddu, gu, true);
                }
            }
        }

        if let Some(iw) = node.w {
            let mut gp = vec![0.0; n1 * c];
            let mut gq = vec![0.0; n2 * c];
            for i in 0..n1 {
                for j in 0..n2 {
                    for k in 0..c {
                        let v = g[(i * n2 + j) * c + k];
                        gp[i * c + k] += v;
                        gq[j * c + k] += v;
                    }
                }
            }
            let tw = self.val(iw);
            let w1 = Mat::strided(tw.data(), c, d, 2 * d, 1);
            let w2 = Mat::strided(&tw.data()[d..], c, d, 2 * d, 1);
            let gp_m = Mat::dense(&gp, n1, c);
            let gq_m = Mat::dense(&gq, n2, c);
            if let Some(gw) = self.grad_slot(grads, iw) {
                crate::autodiff::kernels::gemm(gp_m.t(), dep, gw, 2 * d, 1, 1.0);
                crate::autodiff::kernels::gemm(gq_m.t(), head, &mut gw[d..], 2 * d, 1, 1.0);
            }
            if let Some(gd) = self.grad_slot(grads, node.dep) {
                matmul_into(gp_m, w1, gd, true);
            }
            if let Some(gh) = self.grad_slot(grads, node.head) {
                matmul_into(gq_m, w2, gh, true);
            }
        }
        if let Some(ib) = node.b {
            if let Some(gb) = self.grad_slot(grads, ib) {
                for cell in g.chunks(c) {
                    for k in 0..c {
                        gb[k] += cell[k];
                    }
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
    param_nodes: Vec<(ParamId, usize)>,
    param_count: usize,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when no gradient reached it
    /// or it does not require one.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx)?.as_deref()
    }

    /// Per-parameter gradients. Every trainable parameter that was placed on
    /// the tape gets an entry, zero-filled when the loss did not depend on it.
    pub fn into_param_grads(mut self, store: &ParamStore) -> ParamGrads {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.param_count).map(|_| None).collect();
        for &(id, idx) in &self.param_nodes {
            if store.is_frozen(id) {
                continue;
            }
            let g = self.grads[idx]
                .take()
                .unwrap_or_else(|| vec![0.0; store.value(id).len()]);
            grads[id.0] = Some(g);
        }
        ParamGrads { grads }
    }
}

/// Gradients indexed by [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGrads {
    grads: Vec<Option<Vec<f64>>>,
}

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.0)?.as_deref()
    }

    /// Adds `other` into `self`, slot by slot.
    pub fn accumulate(&mut self, other: ParamGrads) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.iter_mut().zip(&t).for_each(|(a, b)| *a += b),
                (None, Some(t)) => *mine = Some(t),
                _ => {}
            }
        }
    }

    /// Euclidean norm over every present gradient.
    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}
