//! Tape-based reverse-mode autodiff over [`Array`].
//!
//! A [`Graph`] records every primitive executed on it, in order. Replaying
//! the tape backward visits operations in strict reverse execution order
//! and accumulates gradients into every leaf registered with
//! `requires_grad`. Inputs captured by a recorded operation are immutable
//! after recording (the tape owns them).
//!
//! Graphs are single-threaded; independent graphs never share state.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use super::Array;
use crate::error::{Error, Result};
use crate::math;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct Node {
    value: Array,
    needs_grad: bool,
    op: Op,
}

enum Op {
    Leaf,
    Matmul { a: Var, b: Var, ta: bool, tb: bool },
    Conv1d { x: Var, kernel: Var, stride: usize },
    Softmax { x: Var, axis: usize },
    Gelu { x: Var },
    Mul { a: Var, b: Var },
    MulRows { m: Var, v: Var },
    Add { a: Var, b: Var },
    AddRows { m: Var, v: Var },
    Scale { x: Var, c: f64 },
    Sum { x: Var, axis: Option<usize> },
    Mean { x: Var, axis: Option<usize> },
    Embed { table: Var, ids: Vec<usize> },
    MaskedCe { logits: Var, targets: Vec<usize>, mask: Vec<f64> },
    RmsNorm { x: Var, gain: Var, eps: f64 },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    SliceRows { x: Var, start: usize, len: usize },
    SliceCols { x: Var, start: usize, len: usize },
    MixLayers { weights: Var, layers: Vec<Var> },
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    slots: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.slots.get(v.0).and_then(|s| s.as_ref())
    }

    /// Gradient of a leaf, materializing zeros when the leaf was unused.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Array {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Array::zeros(shape),
        }
    }
}

/// Recording tape plus node storage.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Registers an input. Only `requires_grad` leaves receive gradients.
    pub fn input(&self, value: Array, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Gradient-transparent constant.
    pub fn constant(&self, value: Array) -> Var {
        self.input(value, false)
    }

    /// Trainable leaf.
    pub fn leaf(&self, value: Array) -> Var {
        self.input(value, true)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// Clone of a node's value.
    pub fn value(&self, v: Var) -> Array {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn push(&self, value: Array, needs_grad: bool, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    fn with<R>(&self, v: Var, f: impl FnOnce(&Array) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    // ---- primitives --------------------------------------------------

    /// `a · b`, with optional transposes of either operand.
    pub fn matmul_gen(&self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, ka) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (kb, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let value = self.with(a, |av| self.with(b, |bv| mm(av, bv, ta, tb)));
        let needs = self.needs(a) || self.needs(b);
        let _ = (m, n);
        Ok(self.push(value, needs, Op::Matmul { a, b, ta, tb }))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_gen(a, b, false, false)
    }

    /// `a · bᵀ` — the common projection form for row-major activations.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_gen(a, b, false, true)
    }

    /// 1-D convolution over frames. `x` is frames×C_in, `kernel` is
    /// [k, C_in, C_out] with odd k; zero padding of (k-1)/2 on both sides;
    /// output length is ceil(frames / stride).
    pub fn conv1d(&self, x: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (sx, sk) = (self.shape_of(x), self.shape_of(kernel));
        if sx.len() != 2 || sk.len() != 3 || sk[1] != sx[1] {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: sx,
                rhs: sk,
            });
        }
        if sk[0] % 2 == 0 {
            return Err(Error::invalid(alloc::format!(
                "conv1d: kernel size {} must be odd",
                sk[0]
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv1d: stride must be >= 1"));
        }
        if sx[0] == 0 {
            return Err(Error::EmptyInput { what: "conv1d" });
        }
        let value = self.with(x, |xv| self.with(kernel, |kv| conv1d_fwd(xv, kv, stride)));
        let needs = self.needs(x) || self.needs(kernel);
        Ok(self.push(value, needs, Op::Conv1d { x, kernel, stride }))
    }

    /// Softmax along `axis` (rank 1: axis 0; rank 2: axis 0 = down columns,
    /// axis 1 = along rows).
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let sx = self.shape_of(x);
        if axis >= sx.len().max(1) {
            return Err(Error::InvalidAxis {
                op: "softmax",
                axis,
                rank: sx.len(),
            });
        }
        let value = self.with(x, |xv| softmax_fwd(xv, axis));
        let needs = self.needs(x);
        Ok(self.push(value, needs, Op::Softmax { x, axis }))
    }

    pub fn gelu(&self, x: Var) -> Result<Var> {
        let value = self.with(x, |xv| {
            let mut out = xv.clone();
            for v in out.data_mut() {
                *v = math::gelu(*v);
            }
            out
        });
        let needs = self.needs(x);
        Ok(self.push(value, needs, Op::Gelu { x }))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.zip("elementwise_mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.zip("elementwise_add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    fn zip(
        &self,
        opname: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: impl FnOnce(Var, Var) -> Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: opname,
                lhs: sa,
                rhs: sb,
            });
        }
        let value = self.with(a, |av| {
            self.with(b, |bv| {
                let mut out = av.clone();
                for (o, y) in out.data_mut().iter_mut().zip(bv.data()) {
                    *o = f(*o, *y);
                }
                out
            })
        });
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, needs, mk(a, b)))
    }

    /// Multiplies every row of `m` elementwise by the vector `v`
    /// (broadcast across rows).
    pub fn mul_rows(&self, m: Var, v: Var) -> Result<Var> {
        self.rows_op("mul_rows", m, v, |x, s| x * s, |m, v| Op::MulRows { m, v })
    }

    /// Adds the vector `v` to every row of `m`.
    pub fn add_rows(&self, m: Var, v: Var) -> Result<Var> {
        self.rows_op("add_rows", m, v, |x, s| x + s, |m, v| Op::AddRows { m, v })
    }

    fn rows_op(
        &self,
        opname: &'static str,
        m: Var,
        v: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: impl FnOnce(Var, Var) -> Op,
    ) -> Result<Var> {
        let (sm, sv) = (self.shape_of(m), self.shape_of(v));
        let cols = *sm.last().unwrap_or(&0);
        let vlen: usize = sv.iter().product();
        if sm.len() != 2 || vlen != cols {
            return Err(Error::ShapeMismatch {
                op: opname,
                lhs: sm,
                rhs: sv,
            });
        }
        let value = self.with(m, |mv| {
            self.with(v, |vv| {
                let mut out = mv.clone();
                let c = cols;
                for (i, o) in out.data_mut().iter_mut().enumerate() {
                    *o = f(*o, vv.data()[i % c]);
                }
                out
            })
        });
        let needs = self.needs(m) || self.needs(v);
        Ok(self.push(value, needs, mk(m, v)))
    }

    pub fn scale(&self, x: Var, c: f64) -> Result<Var> {
        let value = self.with(x, |xv| {
            let mut out = xv.clone();
            for v in out.data_mut() {
                *v *= c;
            }
            out
        });
        let needs = self.needs(x);
        Ok(self.push(value, needs, Op::Scale { x, c }))
    }

    /// Sum over an axis, or over everything (axis `None` gives a scalar).
    pub fn sum(&self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce("sum", x, axis, false)
    }

    pub fn mean(&self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce("mean", x, axis, true)
    }

    fn reduce(
        &self,
        opname: &'static str,
        x: Var,
        axis: Option<usize>,
        average: bool,
    ) -> Result<Var> {
        let sx = self.shape_of(x);
        if let Some(ax) = axis {
            if ax >= sx.len() {
                return Err(Error::InvalidAxis {
                    op: opname,
                    axis: ax,
                    rank: sx.len(),
                });
            }
        }
        let value = self.with(x, |xv| reduce_fwd(xv, axis, average));
        let needs = self.needs(x);
        let op = if average {
            Op::Mean { x, axis }
        } else {
            Op::Sum { x, axis }
        };
        Ok(self.push(value, needs, op))
    }

    /// Row lookup: out[i] = table[ids[i]].
    pub fn embedding_lookup(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shape_of(table);
        if st.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embedding_lookup",
                lhs: st,
                rhs: vec![ids.len()],
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= st[0]) {
            return Err(Error::invalid(alloc::format!(
                "embedding_lookup: id {bad} out of range for table with {} rows",
                st[0]
            )));
        }
        let value = self.with(table, |t| {
            let mut out = Array::zeros(&[ids.len(), st[1]]);
            for (r, &id) in ids.iter().enumerate() {
                out.data_mut()[r * st[1]..(r + 1) * st[1]].copy_from_slice(t.row(id));
            }
            out
        });
        let needs = self.needs(table);
        Ok(self.push(
            value,
            needs,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Mean masked next-token cross entropy. `logits` is P×V, `targets` and
    /// `mask` have length P; mask entries must be exactly 0 or 1 and at
    /// least one position must be masked in.
    pub fn masked_cross_entropy(&self, logits: Var, targets: &[usize], mask: &[f64]) -> Result<Var> {
        let sl = self.shape_of(logits);
        if sl.len() != 2 || targets.len() != sl[0] || mask.len() != sl[0] {
            return Err(Error::ShapeMismatch {
                op: "masked_cross_entropy",
                lhs: sl,
                rhs: vec![targets.len(), mask.len()],
            });
        }
        if mask.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::invalid("masked_cross_entropy: mask must be 0/1"));
        }
        let total: f64 = mask.iter().sum();
        if total == 0.0 {
            return Err(Error::invalid("masked_cross_entropy: all-zero mask"));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= sl[1]) {
            return Err(Error::invalid(alloc::format!(
                "masked_cross_entropy: target {bad} out of range for vocab {}",
                sl[1]
            )));
        }
        let value = self.with(logits, |lv| {
            let mut acc = 0.0;
            for p in 0..sl[0] {
                if mask[p] == 1.0 {
                    let row = lv.row(p);
                    acc += logsumexp(row) - row[targets[p]];
                }
            }
            Array::scalar(acc / total)
        });
        let needs = self.needs(logits);
        Ok(self.push(
            value,
            needs,
            Op::MaskedCe {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            },
        ))
    }

    /// Row-wise RMS normalization with a gain vector.
    pub fn rms_norm(&self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let (sx, sg) = (self.shape_of(x), self.shape_of(gain));
        let glen: usize = sg.iter().product();
        if sx.len() != 2 || glen != sx[1] {
            return Err(Error::ShapeMismatch {
                op: "rms_norm",
                lhs: sx,
                rhs: sg,
            });
        }
        let value = self.with(x, |xv| {
            self.with(gain, |gv| {
                let (rows, cols) = (sx[0], sx[1]);
                let mut out = Array::zeros(&[rows, cols]);
                for r in 0..rows {
                    let row = xv.row(r);
                    let ms = row.iter().map(|v| v * v).sum::<f64>() / cols as f64;
                    let inv = 1.0 / math::sqrt(ms + eps);
                    for c in 0..cols {
                        out.set2(r, c, row[c] * inv * gv.data()[c]);
                    }
                }
                out
            })
        });
        let needs = self.needs(x) || self.needs(gain);
        Ok(self.push(value, needs, Op::RmsNorm { x, gain, eps }))
    }

    /// Stacks rank-2 parts vertically (all must share a column count).
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput {
                what: "concat_rows",
            });
        }
        let cols = self.shape_of(parts[0]).get(1).copied().unwrap_or(0);
        let mut rows = 0;
        for &p in parts {
            let sp = self.shape_of(p);
            if sp.len() != 2 || sp[1] != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape_of(parts[0]),
                    rhs: sp,
                });
            }
            rows += sp[0];
        }
        let mut out = Array::zeros(&[rows, cols]);
        let mut at = 0;
        let mut needs = false;
        for &p in parts {
            self.with(p, |pv| {
                out.data_mut()[at..at + pv.len()].copy_from_slice(pv.data());
                at += pv.len();
            });
            needs |= self.needs(p);
        }
        Ok(self.push(
            out,
            needs,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Stacks rank-2 parts side by side (all must share a row count).
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput {
                what: "concat_cols",
            });
        }
        let rows = self.shape_of(parts[0]).first().copied().unwrap_or(0);
        let mut cols = 0;
        for &p in parts {
            let sp = self.shape_of(p);
            if sp.len() != 2 || sp[0] != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape_of(parts[0]),
                    rhs: sp,
                });
            }
            cols += sp[1];
        }
        let mut out = Array::zeros(&[rows, cols]);
        let mut needs = false;
        let mut cat = 0;
        for &p in parts {
            let pc = self.shape_of(p)[1];
            self.with(p, |pv| {
                for r in 0..rows {
                    out.data_mut()[r * cols + cat..r * cols + cat + pc]
                        .copy_from_slice(pv.row(r));
                }
            });
            cat += pc;
            needs |= self.needs(p);
        }
        Ok(self.push(
            out,
            needs,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn slice_rows(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape_of(x);
        if sx.len() != 2 || start + len > sx[0] {
            return Err(Error::invalid(alloc::format!(
                "slice_rows: rows {start}..{} out of range for shape {sx:?}",
                start + len
            )));
        }
        let value = self.with(x, |xv| {
            let cols = sx[1];
            Array::from_vec(
                &[len, cols],
                xv.data()[start * cols..(start + len) * cols].to_vec(),
            )
            .expect("slice_rows shape")
        });
        let needs = self.needs(x);
        Ok(self.push(value, needs, Op::SliceRows { x, start, len }))
    }

    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape_of(x);
        if sx.len() != 2 || start + len > sx[1] {
            return Err(Error::invalid(alloc::format!(
                "slice_cols: cols {start}..{} out of range for shape {sx:?}",
                start + len
            )));
        }
        let value = self.with(x, |xv| {
            let mut out = Array::zeros(&[sx[0], len]);
            for r in 0..sx[0] {
                out.data_mut()[r * len..(r + 1) * len]
                    .copy_from_slice(&xv.row(r)[start..start + len]);
            }
            out
        });
        let needs = self.needs(x);
        Ok(self.push(value, needs, Op::SliceCols { x, start, len }))
    }

    /// Linear combination of equally-shaped layers by a weight vector:
    /// out = Σ_l w[l] · layers[l].
    pub fn mix_layers(&self, weights: Var, layers: &[Var]) -> Result<Var> {
        let sw = self.shape_of(weights);
        let wlen: usize = sw.iter().product();
        if layers.is_empty() {
            return Err(Error::EmptyInput { what: "mix_layers" });
        }
        if wlen != layers.len() {
            return Err(Error::ShapeMismatch {
                op: "mix_layers",
                lhs: sw,
                rhs: vec![layers.len()],
            });
        }
        let s0 = self.shape_of(layers[0]);
        for &l in layers {
            if self.shape_of(l) != s0 {
                return Err(Error::ShapeMismatch {
                    op: "mix_layers",
                    lhs: s0,
                    rhs: self.shape_of(l),
                });
            }
        }
        let mut out = Array::zeros(&s0);
        let mut needs = self.needs(weights);
        self.with(weights, |wv| {
            for (l, &layer) in layers.iter().enumerate() {
                let w = wv.data()[l];
                self.with(layer, |lv| {
                    for (o, v) in out.data_mut().iter_mut().zip(lv.data()) {
                        *o += w * v;
                    }
                });
            }
        });
        for &l in layers {
            needs |= self.needs(l);
        }
        Ok(self.push(
            out,
            needs,
            Op::MixLayers {
                weights,
                layers: layers.to_vec(),
            },
        ))
    }

    // ---- backward -----------------------------------------------------

    /// Accumulates gradients of a scalar loss into every `requires_grad`
    /// leaf, replaying the tape in reverse execution order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes.is_empty() {
            return Err(Error::EmptyInput { what: "backward" });
        }
        let lval = &nodes[loss.0].value;
        if !lval.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: lval.shape().to_vec(),
            });
        }
        let mut slots: Vec<Option<Array>> = vec![None; nodes.len()];
        slots[loss.0] = Some(Array::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if !nodes[idx].needs_grad {
                slots[idx] = None;
                continue;
            }
            let Some(grad) = slots[idx].take() else {
                continue;
            };
            let node = &nodes[idx];
            match &node.op {
                Op::Leaf => {
                    slots[idx] = Some(grad);
                }
                Op::Matmul { a, b, ta, tb } => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if nodes[a.0].needs_grad {
                        let da = if !ta {
                            mm(&grad, bv, false, !tb)
                        } else {
                            mm(bv, &grad, *tb, true)
                        };
                        acc(&mut slots[a.0], da);
                    }
                    if nodes[b.0].needs_grad {
                        let db = if !tb {
                            mm(av, &grad, !ta, false)
                        } else {
                            mm(&grad, av, true, *ta)
                        };
                        acc(&mut slots[b.0], db);
                    }
                }
                Op::Conv1d { x, kernel, stride } => {
                    let (xv, kv) = (&nodes[x.0].value, &nodes[kernel.0].value);
                    let (dx, dk) = conv1d_bwd(xv, kv, *stride, &grad);
                    if nodes[x.0].needs_grad {
                        acc(&mut slots[x.0], dx);
                    }
                    if nodes[kernel.0].needs_grad {
                        acc(&mut slots[kernel.0], dk);
                    }
                }
                Op::Softmax { x, axis } => {
                    if nodes[x.0].needs_grad {
                        let y = &node.value;
                        acc(&mut slots[x.0], softmax_bwd(y, &grad, *axis));
                    }
                }
                Op::Gelu { x } => {
                    if nodes[x.0].needs_grad {
                        let xv = &nodes[x.0].value;
                        let mut dx = grad.clone();
                        for (d, v) in dx.data_mut().iter_mut().zip(xv.data()) {
                            *d *= math::gelu_grad(*v);
                        }
                        acc(&mut slots[x.0], dx);
                    }
                }
                Op::Mul { a, b } => {
                    if nodes[a.0].needs_grad {
                        let mut da = grad.clone();
                        for (d, v) in da.data_mut().iter_mut().zip(nodes[b.0].value.data()) {
                            *d *= v;
                        }
                        acc(&mut slots[a.0], da);
                    }
                    if nodes[b.0].needs_grad {
                        let mut db = grad.clone();
                        for (d, v) in db.data_mut().iter_mut().zip(nodes[a.0].value.data()) {
                            *d *= v;
                        }
                        acc(&mut slots[b.0], db);
                    }
                }
                Op::MulRows { m, v } => {
                    let (mv, vv) = (&nodes[m.0].value, &nodes[v.0].value);
                    let cols = vv.len();
                    if nodes[m.0].needs_grad {
                        let mut dm = grad.clone();
                        for (i, d) in dm.data_mut().iter_mut().enumerate() {
                            *d *= vv.data()[i % cols];
                        }
                        acc(&mut slots[m.0], dm);
                    }
                    if nodes[v.0].needs_grad {
                        let mut dv = Array::zeros(vv.shape());
                        for (i, g) in grad.data().iter().enumerate() {
                            dv.data_mut()[i % cols] += g * mv.data()[i];
                        }
                        acc(&mut slots[v.0], dv);
                    }
                }
                Op::Add { a, b } => {
                    if nodes[a.0].needs_grad {
                        acc(&mut slots[a.0], grad.clone());
                    }
                    if nodes[b.0].needs_grad {
                        acc(&mut slots[b.0], grad.clone());
                    }
                }
                Op::AddRows { m, v } => {
                    if nodes[m.0].needs_grad {
                        acc(&mut slots[m.0], grad.clone());
                    }
                    if nodes[v.0].needs_grad {
                        let vv = &nodes[v.0].value;
                        let cols = vv.len();
                        let mut dv = Array::zeros(vv.shape());
                        for (i, g) in grad.data().iter().enumerate() {
                            dv.data_mut()[i % cols] += g;
                        }
                        acc(&mut slots[v.0], dv);
                    }
                }
                Op::Scale { x, c } => {
                    if nodes[x.0].needs_grad {
                        let mut dx = grad.clone();
                        for d in dx.data_mut() {
                            *d *= c;
                        }
                        acc(&mut slots[x.0], dx);
                    }
                }
                Op::Sum { x, axis } | Op::Mean { x, axis } => {
                    if nodes[x.0].needs_grad {
                        let average = matches!(node.op, Op::Mean { .. });
                        let xv = &nodes[x.0].value;
                        acc(&mut slots[x.0], reduce_bwd(xv, *axis, average, &grad));
                    }
                }
                Op::Embed { table, ids } => {
                    if nodes[table.0].needs_grad {
                        let tv = &nodes[table.0].value;
                        let dim = tv.cols();
                        let mut dt = Array::zeros(tv.shape());
                        for (r, &id) in ids.iter().enumerate() {
                            for c in 0..dim {
                                dt.data_mut()[id * dim + c] += grad.data()[r * dim + c];
                            }
                        }
                        acc(&mut slots[table.0], dt);
                    }
                }
                Op::MaskedCe {
                    logits,
                    targets,
                    mask,
                } => {
                    if nodes[logits.0].needs_grad {
                        let lv = &nodes[logits.0].value;
                        let total: f64 = mask.iter().sum();
                        let g = grad.item() / total;
                        let mut dl = Array::zeros(lv.shape());
                        for p in 0..lv.rows() {
                            if mask[p] == 1.0 {
                                let row = lv.row(p);
                                let lse = logsumexp(row);
                                for c in 0..lv.cols() {
                                    let q = math::exp(row[c] - lse);
                                    let hot = if c == targets[p] { 1.0 } else { 0.0 };
                                    dl.set2(p, c, g * (q - hot));
                                }
                            }
                        }
                        acc(&mut slots[logits.0], dl);
                    }
                }
                Op::RmsNorm { x, gain, eps } => {
                    let (xv, gv) = (&nodes[x.0].value, &nodes[gain.0].value);
                    let (rows, cols) = (xv.rows(), xv.cols());
                    let mut dx = Array::zeros(xv.shape());
                    let mut dg = Array::zeros(gv.shape());
                    for r in 0..rows {
                        let row = xv.row(r);
                        let ms = row.iter().map(|v| v * v).sum::<f64>() / cols as f64;
                        let rms = math::sqrt(ms + eps);
                        let gr = &grad.data()[r * cols..(r + 1) * cols];
                        // s = Σ_i dy_i g_i x_i
                        let s: f64 = (0..cols).map(|c| gr[c] * gv.data()[c] * row[c]).sum();
                        for c in 0..cols {
                            dx.set2(
                                r,
                                c,
                                gr[c] * gv.data()[c] / rms
                                    - row[c] * s / (cols as f64 * rms * rms * rms),
                            );
                            dg.data_mut()[c] += gr[c] * row[c] / rms;
                        }
                    }
                    if nodes[x.0].needs_grad {
                        acc(&mut slots[x.0], dx);
                    }
                    if nodes[gain.0].needs_grad {
                        acc(&mut slots[gain.0], dg);
                    }
                }
                Op::ConcatRows { parts } => {
                    let mut at = 0;
                    for &p in parts {
                        let pv = &nodes[p.0].value;
                        let n = pv.len();
                        if nodes[p.0].needs_grad {
                            let dp = Array::from_vec(
                                pv.shape(),
                                grad.data()[at..at + n].to_vec(),
                            )
                            .expect("concat_rows grad shape");
                            acc(&mut slots[p.0], dp);
                        }
                        at += n;
                    }
                }
                Op::ConcatCols { parts } => {
                    let rows = node.value.rows();
                    let cols = node.value.cols();
                    let mut cat = 0;
                    for &p in parts {
                        let pv = &nodes[p.0].value;
                        let pc = pv.cols();
                        if nodes[p.0].needs_grad {
                            let mut dp = Array::zeros(pv.shape());
                            for r in 0..rows {
                                dp.data_mut()[r * pc..(r + 1) * pc].copy_from_slice(
                                    &grad.data()[r * cols + cat..r * cols + cat + pc],
                                );
                            }
                            acc(&mut slots[p.0], dp);
                        }
                        cat += pc;
                    }
                }
                Op::SliceRows { x, start, len } => {
                    if nodes[x.0].needs_grad {
                        let xv = &nodes[x.0].value;
                        let cols = xv.cols();
                        let mut dx = Array::zeros(xv.shape());
                        dx.data_mut()[start * cols..(start + len) * cols]
                            .copy_from_slice(grad.data());
                        acc(&mut slots[x.0], dx);
                    }
                }
                Op::SliceCols { x, start, len } => {
                    if nodes[x.0].needs_grad {
                        let xv = &nodes[x.0].value;
                        let (rows, cols) = (xv.rows(), xv.cols());
                        let mut dx = Array::zeros(xv.shape());
                        for r in 0..rows {
                            dx.data_mut()[r * cols + start..r * cols + start + len]
                                .copy_from_slice(&grad.data()[r * len..(r + 1) * len]);
                        }
                        acc(&mut slots[x.0], dx);
                    }
                }
                Op::MixLayers { weights, layers } => {
                    let wv = &nodes[weights.0].value;
                    if nodes[weights.0].needs_grad {
                        let mut dw = Array::zeros(wv.shape());
                        for (l, &layer) in layers.iter().enumerate() {
                            let lv = &nodes[layer.0].value;
                            dw.data_mut()[l] = grad
                                .data()
                                .iter()
                                .zip(lv.data())
                                .map(|(g, v)| g * v)
                                .sum();
                        }
                        acc(&mut slots[weights.0], dw);
                    }
                    for (l, &layer) in layers.iter().enumerate() {
                        if nodes[layer.0].needs_grad {
                            let w = wv.data()[l];
                            let mut dl = grad.clone();
                            for d in dl.data_mut() {
                                *d *= w;
                            }
                            acc(&mut slots[layer.0], dl);
                        }
                    }
                }
            }
        }
        Ok(Gradients { slots })
    }
}

fn acc(slot: &mut Option<Array>, delta: Array) {
    match slot {
        None => *slot = Some(delta),
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
    }
}

// ---- raw kernels ------------------------------------------------------

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let (x, y) = (&a[i * 4..i * 4 + 4], &b[i * 4..i * 4 + 4]);
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Dense matmul with optional transposes; shapes validated by callers.
pub(crate) fn mm(a: &Array, b: &Array, ta: bool, tb: bool) -> Array {
    let (m, k) = if ta {
        (a.shape()[1], a.shape()[0])
    } else {
        (a.shape()[0], a.shape()[1])
    };
    let n = if tb { b.shape()[0] } else { b.shape()[1] };
    let mut out = Array::zeros(&[m, n]);
    let (ad, bd, od) = (a.data(), b.data(), out.data_mut());
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                let arow = &ad[i * k..(i + 1) * k];
                let orow = &mut od[i * n..(i + 1) * n];
                for (l, &av) in arow.iter().enumerate() {
                    if av != 0.0 {
                        let brow = &bd[l * n..(l + 1) * n];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += av * bv;
                        }
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let arow = &ad[i * k..(i + 1) * k];
                let orow = &mut od[i * n..(i + 1) * n];
                for (j, o) in orow.iter_mut().enumerate() {
                    *o = dot(arow, &bd[j * k..(j + 1) * k]);
                }
            }
        }
        (true, false) => {
            for l in 0..k {
                let arow = &ad[l * m..(l + 1) * m];
                let brow = &bd[l * n..(l + 1) * n];
                for (i, &av) in arow.iter().enumerate() {
                    if av != 0.0 {
                        let orow = &mut od[i * n..(i + 1) * n];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += av * bv;
                        }
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0;
                    for l in 0..k {
                        s += ad[l * m + i] * bd[j * k + l];
                    }
                    od[i * n + j] = s;
                }
            }
        }
    }
    out
}

fn conv1d_fwd(x: &Array, kernel: &Array, stride: usize) -> Array {
    let (frames, cin) = (x.rows(), x.cols());
    let (ksize, cout) = (kernel.shape()[0], kernel.shape()[2]);
    let pad = (ksize - 1) / 2;
    let out_frames = frames.div_ceil(stride);
    let mut out = Array::zeros(&[out_frames, cout]);
    for o in 0..out_frames {
        let orow = &mut out.data_mut()[o * cout..(o + 1) * cout];
        for t in 0..ksize {
            let pos = (o * stride + t) as isize - pad as isize;
            if pos < 0 || pos as usize >= frames {
                continue;
            }
            let xrow = x.row(pos as usize);
            for (ci, &xv) in xrow.iter().enumerate() {
                if xv != 0.0 {
                    let krow = &kernel.data()[(t * cin + ci) * cout..(t * cin + ci + 1) * cout];
                    for (ov, &kv) in orow.iter_mut().zip(krow) {
                        *ov += xv * kv;
                    }
                }
            }
        }
    }
    out
}

fn conv1d_bwd(x: &Array, kernel: &Array, stride: usize, grad: &Array) -> (Array, Array) {
    let (frames, cin) = (x.rows(), x.cols());
    let (ksize, cout) = (kernel.shape()[0], kernel.shape()[2]);
    let pad = (ksize - 1) / 2;
    let out_frames = frames.div_ceil(stride);
    let mut dx = Array::zeros(x.shape());
    let mut dk = Array::zeros(kernel.shape());
    for o in 0..out_frames {
        let grow = &grad.data()[o * cout..(o + 1) * cout];
        for t in 0..ksize {
            let pos = (o * stride + t) as isize - pad as isize;
            if pos < 0 || pos as usize >= frames {
                continue;
            }
            let p = pos as usize;
            for ci in 0..cin {
                let kbase = (t * cin + ci) * cout;
                let xv = x.at2(p, ci);
                let mut dxv = 0.0;
                for co in 0..cout {
                    dxv += grow[co] * kernel.data()[kbase + co];
                    dk.data_mut()[kbase + co] += grow[co] * xv;
                }
                dx.data_mut()[p * cin + ci] += dxv;
            }
        }
    }
    (dx, dk)
}

fn softmax_fwd(x: &Array, axis: usize) -> Array {
    let mut out = x.clone();
    match (x.rank(), axis) {
        (0, _) => {
            out.data_mut()[0] = 1.0;
        }
        (1, 0) => softmax_slice(out.data_mut()),
        (2, 1) => {
            let cols = x.cols();
            for r in 0..x.rows() {
                softmax_slice(&mut out.data_mut()[r * cols..(r + 1) * cols]);
            }
        }
        (2, 0) => {
            let (rows, cols) = (x.rows(), x.cols());
            let mut col = vec![0.0; rows];
            for c in 0..cols {
                for r in 0..rows {
                    col[r] = x.at2(r, c);
                }
                softmax_slice(&mut col);
                for r in 0..rows {
                    out.set2(r, c, col[r]);
                }
            }
        }
        _ => unreachable!("softmax axis validated"),
    }
    out
}

fn softmax_slice(v: &mut [f64]) {
    let max = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = math::exp(*x - max);
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn softmax_bwd(y: &Array, grad: &Array, axis: usize) -> Array {
    let mut dx = Array::zeros(y.shape());
    let each = |yv: &[f64], gv: &[f64], out: &mut [f64]| {
        let s: f64 = yv.iter().zip(gv).map(|(a, b)| a * b).sum();
        for i in 0..yv.len() {
            out[i] = yv[i] * (gv[i] - s);
        }
    };
    match (y.rank(), axis) {
        (0, _) => {}
        (1, 0) => each(y.data(), grad.data(), dx.data_mut()),
        (2, 1) => {
            let cols = y.cols();
            for r in 0..y.rows() {
                each(
                    y.row(r),
                    &grad.data()[r * cols..(r + 1) * cols],
                    &mut dx.data_mut()[r * cols..(r + 1) * cols],
                );
            }
        }
        (2, 0) => {
            let (rows, cols) = (y.rows(), y.cols());
            for c in 0..cols {
                let yv: Vec<f64> = (0..rows).map(|r| y.at2(r, c)).collect();
                let gv: Vec<f64> = (0..rows).map(|r| grad.at2(r, c)).collect();
                let mut o = vec![0.0; rows];
                each(&yv, &gv, &mut o);
                for r in 0..rows {
                    dx.set2(r, c, o[r]);
                }
            }
        }
        _ => unreachable!(),
    }
    dx
}

fn reduce_fwd(x: &Array, axis: Option<usize>, average: bool) -> Array {
    match axis {
        None => {
            let n = x.len() as f64;
            let s: f64 = x.data().iter().sum();
            Array::scalar(if average { s / n } else { s })
        }
        Some(ax) => match (x.rank(), ax) {
            (1, 0) => {
                let s: f64 = x.data().iter().sum();
                Array::scalar(if average { s / x.len() as f64 } else { s })
            }
            (2, 0) => {
                let (rows, cols) = (x.rows(), x.cols());
                let mut out = Array::zeros(&[cols]);
                for r in 0..rows {
                    for c in 0..cols {
                        out.data_mut()[c] += x.at2(r, c);
                    }
                }
                if average {
                    for v in out.data_mut() {
                        *v /= rows as f64;
                    }
                }
                out
            }
            (2, 1) => {
                let (rows, cols) = (x.rows(), x.cols());
                let mut out = Array::zeros(&[rows]);
                for r in 0..rows {
                    out.data_mut()[r] = x.row(r).iter().sum();
                    if average {
                        out.data_mut()[r] /= cols as f64;
                    }
                }
                out
            }
            _ => unreachable!("reduce axis validated"),
        },
    }
}

fn reduce_bwd(x: &Array, axis: Option<usize>, average: bool, grad: &Array) -> Array {
    let mut dx = Array::zeros(x.shape());
    match axis {
        None => {
            let g = grad.item() / if average { x.len() as f64 } else { 1.0 };
            for d in dx.data_mut() {
                *d = g;
            }
        }
        Some(ax) => match (x.rank(), ax) {
            (1, 0) => {
                let g = grad.item() / if average { x.len() as f64 } else { 1.0 };
                for d in dx.data_mut() {
                    *d = g;
                }
            }
            (2, 0) => {
                let (rows, cols) = (x.rows(), x.cols());
                let scale = if average { 1.0 / rows as f64 } else { 1.0 };
                for r in 0..rows {
                    for c in 0..cols {
                        dx.set2(r, c, grad.data()[c] * scale);
                    }
                }
            }
            (2, 1) => {
                let (rows, cols) = (x.rows(), x.cols());
                let scale = if average { 1.0 / cols as f64 } else { 1.0 };
                for r in 0..rows {
                    for c in 0..cols {
                        dx.set2(r, c, grad.data()[r] * scale);
                    }
                }
            }
            _ => unreachable!(),
        },
    }
    dx
}

pub(crate) fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let s: f64 = row.iter().map(|&v| math::exp(v - max)).sum();
    max + math::ln(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr2(rows: usize, cols: usize, data: &[f64]) -> Array {
        Array::from_vec(&[rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let g = Graph::new();
        let x = g.constant(Array::from_vec(&[3], vec![0.0, 0.0, 0.0]).unwrap());
        let y = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(y).data(), &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn conv1d_output_length_matches_hand_count() {
        // length-8 input, kernel 3, stride 2, padding 1 -> 4 output frames
        let g = Graph::new();
        let x = g.constant(arr2(8, 1, &[1.0; 8]));
        let k = g.constant(Array::from_vec(&[3, 1, 1], vec![1.0, 1.0, 1.0]).unwrap());
        let y = g.conv1d(x, k, 2).unwrap();
        assert_eq!(g.shape_of(y), vec![4, 1]);
        // window centers 0,2,4,6: only the left edge is zero-padded
        assert_eq!(g.value(y).data(), &[2.0, 3.0, 3.0, 3.0]);

        let x5 = g.constant(arr2(5, 1, &[1.0; 5]));
        let y5 = g.conv1d(x5, k, 2).unwrap();
        assert_eq!(g.shape_of(y5), vec![3, 1]);
        assert_eq!(g.value(y5).data(), &[2.0, 3.0, 2.0]);
    }

    #[test]
    fn backward_of_linear_map_is_constant() {
        let g = Graph::new();
        let x = g.leaf(arr2(2, 3, &[0.5, -1.0, 2.0, 0.0, 3.0, -0.25]));
        let y = g.scale(x, 2.0).unwrap();
        let loss = g.sum(y, None).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0; 6]);
    }

    #[test]
    fn backward_of_quadratic_matches_hand_derivative() {
        let g = Graph::new();
        let x = g.leaf(Array::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let y = g.mul(x, x).unwrap();
        let loss = g.sum(y, None).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        // loss = sum(x) + sum(x) => grad = 2s
        let g = Graph::new();
        let x = g.leaf(Array::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let s1 = g.sum(x, None).unwrap();
        let s2 = g.sum(x, None).unwrap();
        let loss = g.add(s1, s2).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let g = Graph::new();
        let x = g.leaf(arr2(2, 2, &[1.0; 4]));
        let err = g.backward(x).unwrap_err();
        assert!(matches!(err, Error::NonScalarLoss { .. }));
    }

    #[test]
    fn shape_mismatch_names_operation_and_shapes() {
        let g = Graph::new();
        let a = g.constant(arr2(2, 3, &[0.0; 6]));
        let b = g.constant(arr2(2, 3, &[0.0; 6]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn masked_ce_rejects_all_zero_mask() {
        let g = Graph::new();
        let logits = g.constant(arr2(2, 3, &[0.1; 6]));
        let err = g
            .masked_cross_entropy(logits, &[0, 1], &[0.0, 0.0])
            .unwrap_err();
        assert!(alloc::format!("{err}").contains("all-zero mask"));
    }

    #[test]
    fn masked_ce_ignores_masked_out_labels() {
        let g = Graph::new();
        let logits = g.constant(arr2(2, 3, &[0.3, -1.0, 0.5, 2.0, 0.0, -0.5]));
        let a = g.masked_cross_entropy(logits, &[1, 2], &[0.0, 1.0]).unwrap();
        let b = g.masked_cross_entropy(logits, &[0, 2], &[0.0, 1.0]).unwrap();
        assert!(g.value(a).bit_eq(&g.value(b)));
    }

    #[test]
    fn matmul_transpose_flags_agree() {
        let g = Graph::new();
        let a = g.constant(arr2(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.constant(arr2(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let at = g.constant(arr2(3, 2, &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]));
        let bt = g.constant(arr2(2, 3, &[7.0, 9.0, 11.0, 8.0, 10.0, 12.0]));
        let base = g.value(g.matmul(a, b).unwrap());
        assert!(g.value(g.matmul_gen(at, b, true, false).unwrap()).bit_eq(&base));
        assert!(g.value(g.matmul_gen(a, bt, false, true).unwrap()).bit_eq(&base));
        assert!(g
            .value(g.matmul_gen(at, bt, true, true).unwrap())
            .bit_eq(&base));
    }

    #[test]
    fn repeated_evaluation_is_bit_identical() {
        let run = || {
            let g = Graph::new();
            let x = g.leaf(arr2(3, 3, &[0.3, -0.7, 1.1, 0.0, 2.2, -0.1, 0.9, 0.4, -1.3]));
            let y = g.gelu(x).unwrap();
            let z = g.softmax(y, 1).unwrap();
            let l = g.mean(z, None).unwrap();
            g.value(l).item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
