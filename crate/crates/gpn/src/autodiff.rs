//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Define-by-run Wengert tape: every operation eagerly computes its value
//! into an arena of nodes and, when any input wants gradients, records an
//! op so `backward` can replay the list in reverse. Tapes are rebuilt each
//! forward pass; persistent parameters live off-tape as [`ParamTensor`]s
//! and are lifted onto a tape with [`Tape::leaf_from`].
//!
//! Conventions that matter for correctness:
//! - tensors are row-major, 1-D `[n]` or 2-D `[r, c]`; scalars are `[1]`;
//! - a tape and its tensors are confined to one thread (`Rc` handles);
//! - backward is deterministic: a fixed reverse replay with ordered
//!   accumulation, so identical inputs give bit-identical gradients;
//! - each `backward` call *adds* into persistent gradients; gradients are
//!   only cleared by [`Tape::zero_grads`];
//! - kinks take the usual subgradient conventions: `relu`' at 0 is 0,
//!   `hard_tanh`' at |x| >= 1 is 0, `clamp`' outside the open interval is 0,
//!   and the row-norm gradient at an exactly-zero row is 0.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::special;

/// Plain tensor value that lives outside any tape: persistent parameters,
/// frozen inputs, gradient-check points.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "ParamTensor: shape {:?} wants {} elements, got {}",
            shape,
            numel(&shape),
            data.len()
        );
        ParamTensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        ParamTensor { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        ParamTensor { shape: vec![1], data: vec![v] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Symmetric sparse matrix in CSR form, used for diffusion inside the tape.
/// Symmetry is a caller contract; backward exploits it (`A^T = A`).
#[derive(Clone, Debug)]
pub struct SparseSym {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseSym {
    /// Dense matrix-vector-style product `out = A * x` for `x` with `cols`
    /// columns, row-major.
    fn matmul_dense(&self, x: &[f64], cols: usize, out: &mut [f64]) {
        for i in 0..self.n {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[e];
                let v = self.values[e];
                let src = &x[j * cols..(j + 1) * cols];
                let dst = &mut out[i * cols..(i + 1) * cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Tape internals
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
enum UnaryKind {
    Exp,
    Ln,
    Neg,
    Square,
    Recip,
    Softplus,
    Digamma,
    LnGamma,
    Relu,
    LogSigmoid,
    Gelu,
    HardTanh,
}

impl UnaryKind {
    fn eval(self, x: f64) -> f64 {
        match self {
            UnaryKind::Exp => x.exp(),
            UnaryKind::Ln => x.ln(),
            UnaryKind::Neg => -x,
            UnaryKind::Square => x * x,
            UnaryKind::Recip => 1.0 / x,
            UnaryKind::Softplus => special::softplus(x),
            UnaryKind::Digamma => special::digamma(x),
            UnaryKind::LnGamma => special::ln_gamma(x),
            UnaryKind::Relu => x.max(0.0),
            UnaryKind::LogSigmoid => -special::softplus(-x),
            UnaryKind::Gelu => x * special::norm_cdf(x),
            UnaryKind::HardTanh => x.clamp(-1.0, 1.0),
        }
    }

    /// d out / d x, given the input `x` and the computed output `y`.
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryKind::Exp => y,
            UnaryKind::Ln => 1.0 / x,
            UnaryKind::Neg => -1.0,
            UnaryKind::Square => 2.0 * x,
            UnaryKind::Recip => -y * y,
            UnaryKind::Softplus => special::sigmoid(x),
            UnaryKind::Digamma => special::trigamma(x),
            UnaryKind::LnGamma => special::digamma(x),
            UnaryKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryKind::LogSigmoid => special::sigmoid(-x),
            UnaryKind::Gelu => special::norm_cdf(x) + x * special::norm_pdf(x),
            UnaryKind::HardTanh => {
                if x > -1.0 && x < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

enum Op {
    Unary { kind: UnaryKind, x: usize, out: usize },
    Scale { c: f64, x: usize, out: usize },
    AddScalar { x: usize, out: usize },
    Clamp { lo: f64, hi: f64, x: usize, out: usize },
    Add { a: usize, b: usize, out: usize },
    Sub { a: usize, b: usize, out: usize },
    Mul { a: usize, b: usize, out: usize },
    Matmul { a: usize, b: usize, out: usize, m: usize, k: usize, n: usize },
    Spmm { mat: Rc<SparseSym>, x: usize, out: usize, cols: usize },
    Sum { x: usize, out: usize },
    Mean { x: usize, out: usize },
    SumRows { x: usize, out: usize, rows: usize, cols: usize },
    MaxRows { x: usize, out: usize, cols: usize, argmax: Vec<usize> },
    RowNorms { x: usize, out: usize, rows: usize, cols: usize },
    AddRow { a: usize, row: usize, out: usize, rows: usize, cols: usize },
    MulCol { a: usize, col: usize, out: usize, rows: usize, cols: usize },
    MulScalar { a: usize, s: usize, out: usize },
    GatherRows { x: usize, out: usize, idx: Vec<usize>, width: usize },
    TakePerRow { x: usize, out: usize, idx: Vec<usize>, cols: usize },
    ConcatCols { parts: Vec<usize>, out: usize, rows: usize },
    ConcatRows { parts: Vec<usize>, out: usize, sizes: Vec<usize> },
    Reshape { x: usize, out: usize },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Persistent accumulated gradient; allocated iff `requires_grad`.
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    ops: Vec<Op>,
}

/// Shared, single-threaded recording of one forward computation.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    id: usize,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.id];
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &node.shape)
            .field("requires_grad", &node.requires_grad)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Number of recorded ops (diagnostic).
    pub fn op_count(&self) -> usize {
        self.inner.borrow().ops.len()
    }

    fn push_node(&self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> usize {
        debug_assert_eq!(numel(&shape), data.len());
        let grad = requires_grad.then(|| vec![0.0; data.len()]);
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { shape, data, grad, requires_grad });
        inner.nodes.len() - 1
    }

    fn push_op(&self, op: Op) {
        self.inner.borrow_mut().ops.push(op);
    }

    pub fn leaf(&self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        assert_eq!(
            numel(&shape),
            data.len(),
            "leaf: shape {:?} wants {} elements, got {}",
            shape,
            numel(&shape),
            data.len()
        );
        Tensor { tape: self.clone(), id: self.push_node(shape, data, requires_grad) }
    }

    pub fn leaf_from(&self, p: &ParamTensor) -> Tensor {
        self.leaf(p.shape.clone(), p.data.clone(), true)
    }

    pub fn constant(&self, shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        self.leaf(shape, data, false)
    }

    pub fn constant_from(&self, p: &ParamTensor) -> Tensor {
        self.leaf(p.shape.clone(), p.data.clone(), false)
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.constant(vec![1], vec![v])
    }

    /// Clear every persistent gradient on the tape.
    pub fn zero_grads(&self) {
        let mut inner = self.inner.borrow_mut();
        for node in &mut inner.nodes {
            if let Some(g) = &mut node.grad {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Concatenate 1-D column vectors of equal length into an `[n, k]` matrix.
    pub fn concat_cols(&self, parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let rows = parts[0].dim1("concat_cols");
        let mut requires = false;
        for p in parts {
            p.assert_same_tape(self);
            let n = p.dim1("concat_cols");
            assert_eq!(n, rows, "concat_cols: column lengths differ: [{rows}] vs [{n}]");
            requires = requires || p.requires_grad();
        }
        let k = parts.len();
        let mut data = vec![0.0; rows * k];
        {
            let inner = self.inner.borrow();
            for (c, p) in parts.iter().enumerate() {
                let col = &inner.nodes[p.id].data;
                for r in 0..rows {
                    data[r * k + c] = col[r];
                }
            }
        }
        let out = self.push_node(vec![rows, k], data, requires);
        if requires {
            self.push_op(Op::ConcatCols { parts: parts.iter().map(|p| p.id).collect(), out, rows });
        }
        Tensor { tape: self.clone(), id: out }
    }

    /// Concatenate matrices with equal column counts along the row axis.
    pub fn concat_rows(&self, parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let cols = parts[0].dim2("concat_rows").1;
        let mut requires = false;
        let mut total_rows = 0;
        let mut sizes = Vec::with_capacity(parts.len());
        for p in parts {
            p.assert_same_tape(self);
            let (r, c) = p.dim2("concat_rows");
            assert_eq!(
                c, cols,
                "concat_rows: column counts differ: {:?} vs {:?}",
                parts[0].shape(),
                p.shape()
            );
            requires = requires || p.requires_grad();
            total_rows += r;
            sizes.push(r * c);
        }
        let mut data = Vec::with_capacity(total_rows * cols);
        {
            let inner = self.inner.borrow();
            for p in parts {
                data.extend_from_slice(&inner.nodes[p.id].data);
            }
        }
        let out = self.push_node(vec![total_rows, cols], data, requires);
        if requires {
            self.push_op(Op::ConcatRows {
                parts: parts.iter().map(|p| p.id).collect(),
                out,
                sizes,
            });
        }
        Tensor { tape: self.clone(), id: out }
    }

    /// Run the reverse pass from `loss`, adding into persistent gradients.
    fn backward_from(&self, loss: usize) {
        let mut inner = self.inner.borrow_mut();
        let inner = &mut *inner;
        assert_eq!(
            inner.nodes[loss].data.len(),
            1,
            "backward: loss must be a scalar, got shape {:?}",
            inner.nodes[loss].shape
        );
        // Per-call adjoints; merged into persistent grads at the end so that
        // repeated backward calls accumulate.
        let mut adj: Vec<Option<Vec<f64>>> = inner.nodes.iter().map(|_| None).collect();
        adj[loss] = Some(vec![1.0]);

        fn take(adj: &mut [Option<Vec<f64>>], id: usize) -> Option<Vec<f64>> {
            adj[id].take()
        }
        fn acc(adj: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, f: impl FnOnce(&mut [f64])) {
            let slot = adj[id].get_or_insert_with(|| vec![0.0; nodes[id].data.len()]);
            f(slot);
        }

        for op in inner.ops.iter().rev() {
            match op {
                Op::Unary { kind, x, out } => {
                    if let Some(go) = take(&mut adj, *out) {
                        let derivs: Vec<f64> = {
                            let xs = &inner.nodes[*x].data;
                            let ys = &inner.nodes[*out].data;
                            xs.iter().zip(ys).map(|(&xv, &yv)| kind.deriv(xv, yv)).collect()
                        };
                        acc(&mut adj, &inner.nodes, *x, |gx| {
                            for i in 0..gx.len() {
                                gx[i] += go[i] * derivs[i];
                            }
                        });
                    }
                }
                Op::Scale { c, x, out } => {
                    if let Some(go) = take(&mut adj, *out) {
                        acc(&mut adj, &inner.nodes, *x, |gx| {
                            for i in 0..gx.len() {
                                gx[i] += go[i] * c;
                            }
                        });
                    }
                }
                Op::AddScalar { x, out } => {
                    if let Some(go) = take(&mut adj, *out) {
                        acc(&mut adj, &inner.nodes, *x, |gx| {
                            for i in 0..gx.len() {
                                gx[i] += go[i];
                            }
                        });
                    }
                }
                Op::Clamp { lo, hi, x, out } => {
                    if let Some(go) = take(&mut adj, *out) {
                        let pass: Vec<f64> = inner.nodes[*x]
                            .data
                            .iter()
                            .map(|&xv| if xv > *lo && xv < *hi { 1.0 } else { 0.0 })
                            .collect();
                        acc(&mut adj, &inner.nodes, *x, |gx| {
                            for i in 0..gx.len() {
                                gx[i] += go[i] * pass[i];
                            }
                        });
                    }
                }
                Op::Add { a, b, out } => {
                    if let Some(go) = take(&mut adj, *out) {
                        acc(&mut adj, &inner.nodes, *a, |ga| {
                            for i in 0..ga.len() {
                                ga[i] += go[i];
                            }
                        });
                        acc(&mut adj, &inner.nodes, *b, |gb| {
                            for i in 0..gb.len() {
                                gb[i] += go[i];
                            }
                        });
                    }
                }
                Op::Sub { a, b, out } => {
                    if let Some(go) = take(&mut adj, *out) {
                        acc(&mut adj, &inner.nodes, *a, |ga| {
                            for i in 0..ga.len() {
                                ga[i] += go[i];
                            }
                        });
                        acc(&mut adj, &inner.nodes, *b, |gb| {
                            for i in 0..gb.len() {
                                gb[i] -= go[i];
                            }
                        });
                    }
                }
                Op::Mul { a, b, out } => {
                    if let Some(go) = take(&mut adj, *out) {
                        let av = inner.nodes[*a].data.clone();
                        let bv = inner.nodes[*b].data.clone();
                        acc(&mut adj, &inner.nodes, *a, |ga| {
                            for i in 0..ga.len() {
                                ga[i] += go[i] * bv[i];
                            }
                        });
                        acc(&mut adj, &inner.nodes, *b, |gb| {
                            for i in 0..gb.len() {
                                gb[i] += go[i] * av[i];
                            }
                        });
                    }
                }
                Op::Matmul { a, b, out, m, k, n } => {
                    if let Some(go) = take(&mut adj, *out) {
                        let (m, k, n) = (*m, *k, *n);
                        let av = inner.nodes[*a].data.clone();
                        let bv = inner.nodes[*b].data.clone();
                        // dA = dOut * B^T
                        acc(&mut adj, &inner.nodes, *a, |ga| {
                            for i in 0..m {
                                for kk in 0..k {
                                    let mut s = 0.0;
                                    for j in 0..n {
                                        s += go[i * n + j] * bv[kk * n + j];
                                    }
                                    ga[i * k + kk] += s;
                                }
                            }
                        });
                        // dB = A^T * dOut
                        acc(&mut adj, &inner.nodes, *b, |gb| {
                            for kk in 0..k {
                                for j in 0..n {
                                    let mut s = 0.0;
                                    for i in 0..m {
                                        s += av[i * k + kk] * go[i * n + j];
                                    }
                                    gb[kk * n + j] += s;
                                }
                            }
                        });
                    }
                }
                Op::Spmm { mat, x, out: o, cols } => {
                    if let Some(go) = take(&mut adj, *o) {
                        // A symmetric, so dX = A^T dOut = A dOut.
                        let mut dx = vec![0.0; inner.nodes[*x].data.len()];
                        mat.matmul_dense(&go, *cols, &mut dx);
                        acc(&mut adj, &inner.nodes, *x, |gx| {
                            for i in 0..gx.len() {
                                gx[i] += dx[i];
                            }
                        });
                    }
                }
                Op::Sum { x, out } => {
                    if let Some(go) = take(&mut adj, *out) {
                        acc(&mut adj, &inner.nodes, *x, |gx| {
                            for g in gx.iter_mut() {
                                *g += go[0];
                            }
                        });
                    }
                }
                Op::Mean { x, out } => {
                    if let Some(go) = take(&mut adj, *out) {
                        let n = inner.nodes[*x].data.len() as f64;
                        acc(&mut adj, &inner.nodes, *x, |gx| {
                            for g in gx.iter_mut() {
                                *g += go[0] / n;
                            }
                        });
                    }
                }
                Op::SumRows { x, out, rows, cols } => {
                    if let Some(go) = take(&mut adj, *out) {
                        let (rows, cols) = (*rows, *cols);
                        acc(&mut adj, &inner.nodes, *x, |gx| {
                            for r in 0..rows {
                                for c in 0..cols {
                                    gx[r * cols + c] += go[r];
                                }
                            }
                        });
                    }
                }
                Op::MaxRows { x, out, cols, argmax } => {
                    if let Some(go) = take(&mut adj, *out) {
                        let cols = *cols;
                        acc(&mut adj, &inner.nodes, *x, |gx| {
                            for (r, &c) in argmax.iter().enumerate() {
                                gx[r * cols + c] += go[r];
                            }
                        });
                    }
                }
                Op::RowNorms { x, out, rows, cols } => {
                    if let Some(go) = take(&mut adj, *out) {
                        let (rows, cols) = (*rows, *cols);
                        let xv = inner.nodes[*x].data.clone();
                        let norms = inner.nodes[*out].data.clone();
                        acc(&mut adj, &inner.nodes, *x, |gx| {
                            for r in 0..rows {
                                if norms[r] == 0.0 {
                                    continue; // subgradient 0 at the kink
                                }
                                let s = go[r] / norms[r];
                                for c in 0..cols {
                                    gx[r * cols + c] += s * xv[r * cols + c];
                                }
                            }
                        });
                    }
                }
                Op::AddRow { a, row, out, rows, cols } => {
                    if let Some(go) = take(&mut adj, *out) {
                        let (rows, cols) = (*rows, *cols);
                        acc(&mut adj, &inner.nodes, *a, |ga| {
                            for i in 0..ga.len() {
                                ga[i] += go[i];
                            }
                        });
                        acc(&mut adj, &inner.nodes, *row, |gr| {
                            for r in 0..rows {
                                for c in 0..cols {
                                    gr[c] += go[r * cols + c];
                                }
                            }
                        });
                    }
                }
                Op::MulCol { a, col, out, rows, cols } => {
                    if let Some(go) = take(&mut adj, *out) {
                        let (rows, cols) = (*rows, *cols);
                        let av = inner.nodes[*a].data.clone();
                        let cv = inner.nodes[*col].data.clone();
                        acc(&mut adj, &inner.nodes, *a, |ga| {
                            for r in 0..rows {
                                for c in 0..cols {
                                    ga[r * cols + c] += go[r * cols + c] * cv[r];
                                }
                            }
                        });
                        acc(&mut adj, &inner.nodes, *col, |gc| {
                            for r in 0..rows {
                                let mut s = 0.0;
                                for c in 0..cols {
                                    s += go[r * cols + c] * av[r * cols + c];
                                }
                                gc[r] += s;
                            }
                        });
                    }
                }
                Op::MulScalar { a, s, out } => {
                    if let Some(go) = take(&mut adj, *out) {
                        let av = inner.nodes[*a].data.clone();
                        let sv = inner.nodes[*s].data[0];
                        acc(&mut adj, &inner.nodes, *a, |ga| {
                            for i in 0..ga.len() {
                                ga[i] += go[i] * sv;
                            }
                        });
                        acc(&mut adj, &inner.nodes, *s, |gs| {
                            let mut acc_s = 0.0;
                            for i in 0..go.len() {
                                acc_s += go[i] * av[i];
                            }
                            gs[0] += acc_s;
                        });
                    }
                }
                Op::GatherRows { x, out, idx, width } => {
                    if let Some(go) = take(&mut adj, *out) {
                        let width = *width;
                        acc(&mut adj, &inner.nodes, *x, |gx| {
                            for (r, &src) in idx.iter().enumerate() {
                                for c in 0..width {
                                    gx[src * width + c] += go[r * width + c];
                                }
                            }
                        });
                    }
                }
                Op::TakePerRow { x, out, idx, cols } => {
                    if let Some(go) = take(&mut adj, *out) {
                        let cols = *cols;
                        acc(&mut adj, &inner.nodes, *x, |gx| {
                            for (r, &c) in idx.iter().enumerate() {
                                gx[r * cols + c] += go[r];
                            }
                        });
                    }
                }
                Op::ConcatCols { parts, out, rows } => {
                    if let Some(go) = take(&mut adj, *out) {
                        let k = parts.len();
                        let rows = *rows;
                        for (c, &p) in parts.iter().enumerate() {
                            acc(&mut adj, &inner.nodes, p, |gp| {
                                for r in 0..rows {
                                    gp[r] += go[r * k + c];
                                }
                            });
                        }
                    }
                }
                Op::ConcatRows { parts, out, sizes } => {
                    if let Some(go) = take(&mut adj, *out) {
                        let mut offset = 0;
                        for (&p, &sz) in parts.iter().zip(sizes) {
                            acc(&mut adj, &inner.nodes, p, |gp| {
                                for i in 0..sz {
                                    gp[i] += go[offset + i];
                                }
                            });
                            offset += sz;
                        }
                    }
                }
                Op::Reshape { x, out } => {
                    if let Some(go) = take(&mut adj, *out) {
                        acc(&mut adj, &inner.nodes, *x, |gx| {
                            for i in 0..gx.len() {
                                gx[i] += go[i];
                            }
                        });
                    }
                }
            }
        }

        // Merge this call's adjoints into persistent gradients.
        for (node, a) in inner.nodes.iter_mut().zip(adj) {
            if let (Some(g), Some(a)) = (&mut node.grad, a) {
                for (gi, ai) in g.iter_mut().zip(a) {
                    *gi += ai;
                }
            }
        }
    }
}

impl Tensor {
    fn assert_same_tape(&self, tape: &Tape) {
        assert!(
            Rc::ptr_eq(&self.tape.inner, &tape.inner),
            "tensors belong to different tapes"
        );
    }

    /// The tape this tensor lives on (cheap handle clone).
    pub fn tape(&self) -> Tape {
        self.tape.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.inner.borrow().nodes[self.id].data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Snapshot of the node's values.
    pub fn values(&self) -> Vec<f64> {
        self.tape.inner.borrow().nodes[self.id].data.clone()
    }

    pub fn scalar_value(&self) -> f64 {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.id];
        assert_eq!(node.data.len(), 1, "scalar_value: shape {:?} is not scalar", node.shape);
        node.data[0]
    }

    /// Snapshot of the accumulated gradient; `None` when the node does not
    /// require gradients.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.inner.borrow().nodes[self.id].grad.clone()
    }

    /// Reverse pass from this scalar. Panics if the tensor is not scalar.
    pub fn backward(&self) {
        self.tape.backward_from(self.id);
    }

    fn dim1(&self, what: &str) -> usize {
        let shape = self.shape();
        assert!(shape.len() == 1, "{what}: expected 1-D tensor, got shape {shape:?}");
        shape[0]
    }

    fn dim2(&self, what: &str) -> (usize, usize) {
        let shape = self.shape();
        assert!(shape.len() == 2, "{what}: expected 2-D tensor, got shape {shape:?}");
        (shape[0], shape[1])
    }

    fn unary(&self, kind: UnaryKind) -> Tensor {
        let (shape, data, requires) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let data: Vec<f64> = node.data.iter().map(|&x| kind.eval(x)).collect();
            (node.shape.clone(), data, node.requires_grad)
        };
        let out = self.tape.push_node(shape, data, requires);
        if requires {
            self.tape.push_op(Op::Unary { kind, x: self.id, out });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    pub fn exp(&self) -> Tensor {
        self.unary(UnaryKind::Exp)
    }
    pub fn ln(&self) -> Tensor {
        self.unary(UnaryKind::Ln)
    }
    pub fn neg(&self) -> Tensor {
        self.unary(UnaryKind::Neg)
    }
    pub fn square(&self) -> Tensor {
        self.unary(UnaryKind::Square)
    }
    pub fn recip(&self) -> Tensor {
        self.unary(UnaryKind::Recip)
    }
    pub fn softplus(&self) -> Tensor {
        self.unary(UnaryKind::Softplus)
    }
    pub fn digamma(&self) -> Tensor {
        self.unary(UnaryKind::Digamma)
    }
    pub fn ln_gamma(&self) -> Tensor {
        self.unary(UnaryKind::LnGamma)
    }
    pub fn relu(&self) -> Tensor {
        self.unary(UnaryKind::Relu)
    }
    pub fn log_sigmoid(&self) -> Tensor {
        self.unary(UnaryKind::LogSigmoid)
    }
    pub fn gelu(&self) -> Tensor {
        self.unary(UnaryKind::Gelu)
    }
    pub fn hard_tanh(&self) -> Tensor {
        self.unary(UnaryKind::HardTanh)
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&self, c: f64) -> Tensor {
        let (shape, data, requires) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            (node.shape.clone(), node.data.iter().map(|&x| c * x).collect(), node.requires_grad)
        };
        let out = self.tape.push_node(shape, data, requires);
        if requires {
            self.tape.push_op(Op::Scale { c, x: self.id, out });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    /// Add a constant to every element.
    pub fn add_scalar(&self, c: f64) -> Tensor {
        let (shape, data, requires) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            (node.shape.clone(), node.data.iter().map(|&x| c + x).collect(), node.requires_grad)
        };
        let out = self.tape.push_node(shape, data, requires);
        if requires {
            self.tape.push_op(Op::AddScalar { x: self.id, out });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    /// Clamp values into `[lo, hi]`; gradient is 0 wherever the clamp is
    /// active (straight-through constant outside the open interval).
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        assert!(lo < hi, "clamp: empty interval [{lo}, {hi}]");
        let (shape, data, requires) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            (
                node.shape.clone(),
                node.data.iter().map(|&x| x.clamp(lo, hi)).collect(),
                node.requires_grad,
            )
        };
        let out = self.tape.push_node(shape, data, requires);
        if requires {
            self.tape.push_op(Op::Clamp { lo, hi, x: self.id, out });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    fn binary(&self, other: &Tensor, what: &str) -> (Vec<usize>, Vec<f64>, Vec<f64>, bool) {
        other.assert_same_tape(&self.tape);
        let inner = self.tape.inner.borrow();
        let a = &inner.nodes[self.id];
        let b = &inner.nodes[other.id];
        assert_eq!(
            a.shape, b.shape,
            "{what}: shape mismatch: {:?} vs {:?}",
            a.shape, b.shape
        );
        (a.shape.clone(), a.data.clone(), b.data.clone(), a.requires_grad || b.requires_grad)
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        let (shape, av, bv, requires) = self.binary(other, "add");
        let data = av.iter().zip(&bv).map(|(x, y)| x + y).collect();
        let out = self.tape.push_node(shape, data, requires);
        if requires {
            self.tape.push_op(Op::Add { a: self.id, b: other.id, out });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        let (shape, av, bv, requires) = self.binary(other, "sub");
        let data = av.iter().zip(&bv).map(|(x, y)| x - y).collect();
        let out = self.tape.push_node(shape, data, requires);
        if requires {
            self.tape.push_op(Op::Sub { a: self.id, b: other.id, out });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        let (shape, av, bv, requires) = self.binary(other, "mul");
        let data = av.iter().zip(&bv).map(|(x, y)| x * y).collect();
        let out = self.tape.push_node(shape, data, requires);
        if requires {
            self.tape.push_op(Op::Mul { a: self.id, b: other.id, out });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        other.assert_same_tape(&self.tape);
        let (m, k) = self.dim2("matmul lhs");
        let (k2, n) = other.dim2("matmul rhs");
        assert_eq!(
            k,
            k2,
            "matmul: inner dimensions differ: {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        let (av, bv, requires) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let b = &inner.nodes[other.id];
            (a.data.clone(), b.data.clone(), a.requires_grad || b.requires_grad)
        };
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for kk in 0..k {
                let aik = av[i * k + kk];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bv[kk * n..(kk + 1) * n];
                let orow = &mut data[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aik * brow[j];
                }
            }
        }
        let out = self.tape.push_node(vec![m, n], data, requires);
        if requires {
            self.tape.push_op(Op::Matmul { a: self.id, b: other.id, out, m, k, n });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    /// Symmetric sparse x dense product: `A [n, n] x self [n, c] -> [n, c]`.
    pub fn spmm(&self, mat: &Rc<SparseSym>) -> Tensor {
        let (rows, cols) = self.dim2("spmm");
        assert_eq!(
            mat.n,
            rows,
            "spmm: matrix of {} nodes applied to tensor with shape {:?}",
            mat.n,
            self.shape()
        );
        let (xv, requires) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            (node.data.clone(), node.requires_grad)
        };
        let mut data = vec![0.0; rows * cols];
        mat.matmul_dense(&xv, cols, &mut data);
        let out = self.tape.push_node(vec![rows, cols], data, requires);
        if requires {
            self.tape.push_op(Op::Spmm { mat: Rc::clone(mat), x: self.id, out, cols });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    /// Sum of all elements -> scalar.
    pub fn sum(&self) -> Tensor {
        let (data, requires) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            (node.data.iter().sum::<f64>(), node.requires_grad)
        };
        let out = self.tape.push_node(vec![1], vec![data], requires);
        if requires {
            self.tape.push_op(Op::Sum { x: self.id, out });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    /// Mean of all elements -> scalar.
    pub fn mean(&self) -> Tensor {
        let (s, n, requires) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            assert!(!node.data.is_empty(), "mean: empty tensor");
            (node.data.iter().sum::<f64>(), node.data.len() as f64, node.requires_grad)
        };
        let out = self.tape.push_node(vec![1], vec![s / n], requires);
        if requires {
            self.tape.push_op(Op::Mean { x: self.id, out });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    /// Row sums of a `[r, c]` matrix -> `[r]`.
    pub fn sum_rows(&self) -> Tensor {
        let (rows, cols) = self.dim2("sum_rows");
        let (data, requires) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let mut v = vec![0.0; rows];
            for r in 0..rows {
                v[r] = node.data[r * cols..(r + 1) * cols].iter().sum();
            }
            (v, node.requires_grad)
        };
        let out = self.tape.push_node(vec![rows], data, requires);
        if requires {
            self.tape.push_op(Op::SumRows { x: self.id, out, rows, cols });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    /// Row maxima of a `[r, c]` matrix -> `[r]`. Gradient goes to the first
    /// maximal element of each row.
    pub fn max_rows(&self) -> Tensor {
        let (rows, cols) = self.dim2("max_rows");
        assert!(cols > 0, "max_rows: zero columns");
        let (data, argmax, requires) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let mut v = vec![0.0; rows];
            let mut arg = vec![0usize; rows];
            for r in 0..rows {
                let row = &node.data[r * cols..(r + 1) * cols];
                let (mut best, mut bi) = (row[0], 0usize);
                for (c, &x) in row.iter().enumerate().skip(1) {
                    if x > best {
                        best = x;
                        bi = c;
                    }
                }
                v[r] = best;
                arg[r] = bi;
            }
            (v, arg, node.requires_grad)
        };
        let out = self.tape.push_node(vec![rows], data, requires);
        if requires {
            self.tape.push_op(Op::MaxRows { x: self.id, out, cols, argmax });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    /// Euclidean norm of each row of a `[r, c]` matrix -> `[r]`.
    pub fn row_norms(&self) -> Tensor {
        let (rows, cols) = self.dim2("row_norms");
        let (data, requires) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let mut v = vec![0.0; rows];
            for r in 0..rows {
                v[r] = node.data[r * cols..(r + 1) * cols]
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
            }
            (v, node.requires_grad)
        };
        let out = self.tape.push_node(vec![rows], data, requires);
        if requires {
            self.tape.push_op(Op::RowNorms { x: self.id, out, rows, cols });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    /// Broadcast-add a `[c]` row vector to every row of a `[r, c]` matrix.
    pub fn add_row(&self, row: &Tensor) -> Tensor {
        row.assert_same_tape(&self.tape);
        let (rows, cols) = self.dim2("add_row");
        let rc = row.dim1("add_row rhs");
        assert_eq!(
            cols,
            rc,
            "add_row: shape mismatch: {:?} vs {:?}",
            self.shape(),
            row.shape()
        );
        let (data, requires) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let rv = &inner.nodes[row.id];
            let mut out = a.data.clone();
            for r in 0..rows {
                for c in 0..cols {
                    out[r * cols + c] += rv.data[c];
                }
            }
            (out, a.requires_grad || rv.requires_grad)
        };
        let out = self.tape.push_node(vec![rows, cols], data, requires);
        if requires {
            self.tape.push_op(Op::AddRow { a: self.id, row: row.id, out, rows, cols });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    /// Broadcast-multiply each row `r` of a `[r, c]` matrix by `col[r]`.
    pub fn mul_col(&self, col: &Tensor) -> Tensor {
        col.assert_same_tape(&self.tape);
        let (rows, cols) = self.dim2("mul_col");
        let cc = col.dim1("mul_col rhs");
        assert_eq!(
            rows,
            cc,
            "mul_col: shape mismatch: {:?} vs {:?}",
            self.shape(),
            col.shape()
        );
        let (data, requires) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let cv = &inner.nodes[col.id];
            let mut out = a.data.clone();
            for r in 0..rows {
                for c in 0..cols {
                    out[r * cols + c] *= cv.data[r];
                }
            }
            (out, a.requires_grad || cv.requires_grad)
        };
        let out = self.tape.push_node(vec![rows, cols], data, requires);
        if requires {
            self.tape.push_op(Op::MulCol { a: self.id, col: col.id, out, rows, cols });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    /// Broadcast-multiply by a `[1]` scalar tensor.
    pub fn mul_scalar(&self, s: &Tensor) -> Tensor {
        s.assert_same_tape(&self.tape);
        assert_eq!(
            s.numel(),
            1,
            "mul_scalar: multiplier must be scalar, got shape {:?}",
            s.shape()
        );
        let (shape, data, requires) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let sv = inner.nodes[s.id].data[0];
            (
                a.shape.clone(),
                a.data.iter().map(|&x| x * sv).collect(),
                a.requires_grad || inner.nodes[s.id].requires_grad,
            )
        };
        let out = self.tape.push_node(shape, data, requires);
        if requires {
            self.tape.push_op(Op::MulScalar { a: self.id, s: s.id, out });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    /// Select rows (first axis) by index, repetition allowed.
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor {
        let shape = self.shape();
        assert!(!shape.is_empty() && shape[0] > 0, "gather_rows: empty tensor");
        let n = shape[0];
        let width: usize = shape[1..].iter().product::<usize>().max(1);
        for &i in idx {
            assert!(i < n, "gather_rows: index {i} out of range for {n} rows");
        }
        let (data, requires) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let mut out = Vec::with_capacity(idx.len() * width);
            for &i in idx {
                out.extend_from_slice(&node.data[i * width..(i + 1) * width]);
            }
            (out, node.requires_grad)
        };
        let mut out_shape = shape.clone();
        out_shape[0] = idx.len();
        let out = self.tape.push_node(out_shape, data, requires);
        if requires {
            self.tape.push_op(Op::GatherRows { x: self.id, out, idx: idx.to_vec(), width });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    /// From a `[r, c]` matrix, pick element `idx[r]` of each row -> `[r]`.
    pub fn take_per_row(&self, idx: &[usize]) -> Tensor {
        let (rows, cols) = self.dim2("take_per_row");
        assert_eq!(idx.len(), rows, "take_per_row: {} indices for {} rows", idx.len(), rows);
        for &c in idx {
            assert!(c < cols, "take_per_row: column {c} out of range for {cols} columns");
        }
        let (data, requires) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let v: Vec<f64> = idx.iter().enumerate().map(|(r, &c)| node.data[r * cols + c]).collect();
            (v, node.requires_grad)
        };
        let out = self.tape.push_node(vec![rows], data, requires);
        if requires {
            self.tape.push_op(Op::TakePerRow { x: self.id, out, idx: idx.to_vec(), cols });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }

    /// Reinterpret the data with a new shape of equal element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Tensor {
        assert_eq!(
            numel(&shape),
            self.numel(),
            "reshape: {:?} -> {:?} changes element count",
            self.shape(),
            shape
        );
        let (data, requires) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            (node.data.clone(), node.requires_grad)
        };
        let out = self.tape.push_node(shape, data, requires);
        if requires {
            self.tape.push_op(Op::Reshape { x: self.id, out });
        }
        Tensor { tape: self.tape.clone(), id: out }
    }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Central-difference step for gradient checks.
pub const GRAD_CHECK_STEP: f64 = 1e-6;

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub ok: bool,
    /// Largest relative error over all coordinates.
    pub max_rel_err: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    /// Analytic gradient at the worst coordinate.
    pub analytic: f64,
    /// Central-difference estimate at the worst coordinate.
    pub numeric: f64,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: max rel err {:.3e} at index {} (analytic {:.9e}, numeric {:.9e})",
            if self.ok { "ok" } else { "FAIL" },
            self.max_rel_err,
            self.worst_index,
            self.analytic,
            self.numeric
        )
    }
}

/// Compare the tape gradient of `f` at `point` against central differences.
///
/// `f` must build a scalar from the given leaf on the given tape. Relative
/// error is `|a - n| / max(|a|, |n|, 1)`, so tiny gradients are judged on
/// absolute error.
pub fn check_gradients<F>(f: F, point: &ParamTensor, tol: f64) -> GradCheckReport
where
    F: Fn(&Tape, &Tensor) -> Tensor,
{
    let tape = Tape::new();
    let leaf = tape.leaf_from(point);
    let loss = f(&tape, &leaf);
    assert_eq!(
        loss.numel(),
        1,
        "check_gradients: objective must be scalar, got shape {:?}",
        loss.shape()
    );
    loss.backward();
    let analytic = leaf.grad().expect("leaf requires grad");

    let eval = |data: &[f64]| -> f64 {
        let tape = Tape::new();
        let leaf = tape.leaf(point.shape.clone(), data.to_vec(), false);
        f(&tape, &leaf).scalar_value()
    };

    let mut report = GradCheckReport {
        ok: true,
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: if analytic.is_empty() { 0.0 } else { analytic[0] },
        numeric: 0.0,
    };
    let mut data = point.data.clone();
    for i in 0..data.len() {
        let saved = data[i];
        data[i] = saved + GRAD_CHECK_STEP;
        let fp = eval(&data);
        data[i] = saved - GRAD_CHECK_STEP;
        let fm = eval(&data);
        data[i] = saved;
        let numeric = (fp - fm) / (2.0 * GRAD_CHECK_STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        if !rel.is_finite() || rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.ok = report.max_rel_err.is_finite() && report.max_rel_err <= tol;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor_1d(tape: &Tape, data: &[f64]) -> Tensor {
        tape.leaf(vec![data.len()], data.to_vec(), true)
    }

    #[test]
    fn add_mul_values() {
        let t = Tape::new();
        let a = tensor_1d(&t, &[1.0, 2.0]);
        let b = tensor_1d(&t, &[3.0, 5.0]);
        assert_eq!(a.add(&b).values(), vec![4.0, 7.0]);
        assert_eq!(a.mul(&b).values(), vec![3.0, 10.0]);
        assert_eq!(a.sub(&b).values(), vec![-2.0, -3.0]);
    }

    #[test]
    fn matmul_known_product() {
        let t = Tape::new();
        let a = t.leaf(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0], true);
        let b = t.leaf(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0], true);
        assert_eq!(a.matmul(&b).values(), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_gradient_of_linear_form_is_broadcast_vector() {
        // d/dW sum(W v) has every row equal to v^T.
        let w = ParamTensor::new(vec![4, 4], (0..16).map(|i| 0.1 * i as f64 - 0.7).collect());
        let v = vec![0.3, -1.2, 2.0, 0.5];
        let report = check_gradients(
            |tape, w| {
                let v = tape.constant(vec![4, 1], v.clone());
                w.matmul(&v).sum()
            },
            &w,
            1e-5,
        );
        assert!(report.ok, "{report}");

        let tape = Tape::new();
        let wt = tape.leaf_from(&w);
        let vt = tape.constant(vec![4, 1], v.clone());
        wt.matmul(&vt).sum().backward();
        let g = wt.grad().unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert!((g[r * 4 + c] - v[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_sigmoid_grad_at_zero_is_half() {
        let t = Tape::new();
        let x = tensor_1d(&t, &[0.0]);
        x.log_sigmoid().sum().backward();
        assert_eq!(x.grad().unwrap(), vec![0.5]);
    }

    #[test]
    fn relu_grad_at_zero_is_zero() {
        let t = Tape::new();
        let x = tensor_1d(&t, &[-1.0, 0.0, 2.0]);
        x.relu().sum().backward();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn hard_tanh_grad_at_boundary_is_zero() {
        let t = Tape::new();
        let x = tensor_1d(&t, &[-1.0, -0.5, 0.99, 1.0, 3.0]);
        x.hard_tanh().sum().backward();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn gelu_values_and_gradient() {
        let t = Tape::new();
        let x = tensor_1d(&t, &[0.0, 10.0]);
        let y = x.gelu().values();
        assert_eq!(y[0], 0.0);
        assert!((y[1] - 10.0).abs() < 1e-9);

        let p = ParamTensor::new(vec![3], vec![-1.3, 0.2, 2.4]);
        let report = check_gradients(|_, x| x.gelu().sum(), &p, 1e-7);
        assert!(report.ok, "{report}");
    }

    #[test]
    fn digamma_grad_is_trigamma() {
        let t = Tape::new();
        let x = tensor_1d(&t, &[2.5]);
        x.digamma().sum().backward();
        let g = x.grad().unwrap();
        assert!((g[0] - special::trigamma(2.5)).abs() < 1e-12);
    }

    #[test]
    fn ln_gamma_grad_is_digamma() {
        let p = ParamTensor::new(vec![3], vec![0.7, 1.9, 6.3]);
        let report = check_gradients(|_, x| x.ln_gamma().sum(), &p, 1e-7);
        assert!(report.ok, "{report}");
    }

    #[test]
    fn fan_out_accumulates() {
        // y = x*x + x => dy/dx = 2x + 1.
        let t = Tape::new();
        let x = tensor_1d(&t, &[3.0]);
        let y = x.mul(&x).add(&x).sum();
        y.backward();
        assert_eq!(x.grad().unwrap(), vec![7.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let t = Tape::new();
        let x = tensor_1d(&t, &[4.0]);
        let y = x.square().sum();
        y.backward();
        y.backward();
        assert_eq!(x.grad().unwrap(), vec![16.0]); // 2 * (2x)
        t.zero_grads();
        y.backward();
        assert_eq!(x.grad().unwrap(), vec![8.0]);
    }

    #[test]
    fn unused_leaf_keeps_zero_grad() {
        let t = Tape::new();
        let x = tensor_1d(&t, &[1.0, 2.0]);
        let z = tensor_1d(&t, &[5.0]);
        x.square().sum().backward();
        assert_eq!(z.grad().unwrap(), vec![0.0]);
    }

    #[test]
    #[should_panic(expected = "loss must be a scalar")]
    fn backward_on_non_scalar_panics() {
        let t = Tape::new();
        let x = tensor_1d(&t, &[1.0, 2.0]);
        x.square().backward();
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn add_shape_mismatch_panics_naming_shapes() {
        let t = Tape::new();
        let a = tensor_1d(&t, &[1.0, 2.0]);
        let b = tensor_1d(&t, &[1.0, 2.0, 3.0]);
        let _ = a.add(&b);
    }

    #[test]
    fn backward_is_bit_deterministic() {
        let run = || -> Vec<u64> {
            let t = Tape::new();
            let a = t.leaf(vec![3, 3], (0..9).map(|i| (i as f64).sin()).collect(), true);
            let b = t.leaf(vec![3, 3], (0..9).map(|i| (i as f64).cos()).collect(), true);
            let loss = a
                .matmul(&b)
                .softplus()
                .mul(&a.exp())
                .sum_rows()
                .ln()
                .sum();
            loss.backward();
            a.grad()
                .unwrap()
                .iter()
                .chain(b.grad().unwrap().iter())
                .map(|x| x.to_bits())
                .collect()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sum_rows_and_mean_grads() {
        let p = ParamTensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.2, 0.3]);
        let report = check_gradients(|_, x| x.sum_rows().square().sum(), &p, 1e-7);
        assert!(report.ok, "{report}");
        let report = check_gradients(|_, x| x.mean(), &p, 1e-7);
        assert!(report.ok, "{report}");
    }

    #[test]
    fn max_rows_values_and_gradient_to_first_max() {
        let t = Tape::new();
        let x = t.leaf(vec![2, 3], vec![1.0, 5.0, 5.0, -2.0, -7.0, -1.0], true);
        let m = x.max_rows();
        assert_eq!(m.values(), vec![5.0, -1.0]);
        m.sum().backward();
        // Tie in row 0 resolves to the first maximal column.
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn row_norms_values_and_gradient() {
        let t = Tape::new();
        let x = t.leaf(vec![2, 2], vec![3.0, 4.0, 0.0, 0.0], true);
        let n = x.row_norms();
        assert_eq!(n.values(), vec![5.0, 0.0]);
        n.sum().backward();
        let g = x.grad().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-15);
        assert!((g[1] - 0.8).abs() < 1e-15);
        // Zero row takes the zero subgradient.
        assert_eq!(&g[2..], &[0.0, 0.0]);

        let p = ParamTensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.4, 0.2, -0.3]);
        let report = check_gradients(|_, x| x.row_norms().sum(), &p, 1e-6);
        assert!(report.ok, "{report}");
    }

    #[test]
    fn broadcast_ops_values_and_gradients() {
        let t = Tape::new();
        let a = t.leaf(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0], true);
        let row = tensor_1d(&t, &[10.0, 20.0]);
        assert_eq!(a.add_row(&row).values(), vec![11.0, 22.0, 13.0, 24.0]);
        let col = tensor_1d(&t, &[2.0, 3.0]);
        assert_eq!(a.mul_col(&col).values(), vec![2.0, 4.0, 9.0, 12.0]);

        let p = ParamTensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.4, 0.2, -0.3]);
        let report = check_gradients(
            |tape, x| {
                let row = tape.leaf(vec![3], vec![0.3, -0.4, 0.9], false);
                let col = tape.leaf(vec![2], vec![1.5, -2.0], false);
                x.add_row(&row).mul_col(&col).square().sum()
            },
            &p,
            1e-6,
        );
        assert!(report.ok, "{report}");

        // Gradients also flow into the broadcast operands.
        let report = check_gradients(
            |tape, row| {
                let a = tape.leaf(vec![2, 3], vec![0.5, -1.0, 2.0, 0.4, 0.2, -0.3], false);
                a.add_row(row).square().sum()
            },
            &ParamTensor::new(vec![3], vec![0.3, -0.4, 0.9]),
            1e-6,
        );
        assert!(report.ok, "{report}");
    }

    #[test]
    fn mul_scalar_gradients_both_sides() {
        let report = check_gradients(
            |tape, s| {
                let a = tape.leaf(vec![3], vec![1.0, -2.0, 0.5], false);
                a.mul_scalar(s).square().sum()
            },
            &ParamTensor::scalar(0.7),
            1e-7,
        );
        assert!(report.ok, "{report}");
    }

    #[test]
    fn gather_take_concat_roundtrip_and_grads() {
        let t = Tape::new();
        let x = t.leaf(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], true);
        let g = x.gather_rows(&[2, 0, 2]);
        assert_eq!(g.shape(), vec![3, 2]);
        assert_eq!(g.values(), vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        g.sum().backward();
        // Row 2 was gathered twice.
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);

        let t = Tape::new();
        let x = t.leaf(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], true);
        let picked = x.take_per_row(&[2, 0]);
        assert_eq!(picked.values(), vec![3.0, 4.0]);
        picked.sum().backward();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);

        let t = Tape::new();
        let a = tensor_1d(&t, &[1.0, 2.0]);
        let b = tensor_1d(&t, &[3.0, 4.0]);
        let m = t.concat_cols(&[&a, &b]);
        assert_eq!(m.shape(), vec![2, 2]);
        assert_eq!(m.values(), vec![1.0, 3.0, 2.0, 4.0]);
        m.take_per_row(&[1, 1]).sum().backward();
        assert_eq!(a.grad().unwrap(), vec![0.0, 0.0]);
        assert_eq!(b.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn concat_rows_values_and_grads() {
        let t = Tape::new();
        let a = t.leaf(vec![1, 2], vec![1.0, 2.0], true);
        let b = t.leaf(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0], true);
        let m = t.concat_rows(&[&a, &b]);
        assert_eq!(m.shape(), vec![3, 2]);
        assert_eq!(m.values(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        m.gather_rows(&[0, 2]).sum().backward();
        assert_eq!(a.grad().unwrap(), vec![1.0, 1.0]);
        assert_eq!(b.grad().unwrap(), vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn clamp_two_sided_gradient() {
        let t = Tape::new();
        let x = tensor_1d(&t, &[-31.0, 0.5, 42.0]);
        let y = x.clamp(-30.0, 30.0);
        assert_eq!(y.values(), vec![-30.0, 0.5, 30.0]);
        y.sum().backward();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn spmm_symmetric_against_dense() {
        // 3-node path graph: 0-1, 1-2, unit weights.
        let mat = Rc::new(SparseSym {
            n: 3,
            row_ptr: vec![0, 1, 3, 4],
            col_idx: vec![1, 0, 2, 1],
            values: vec![1.0, 1.0, 1.0, 1.0],
        });
        let t = Tape::new();
        let x = t.leaf(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0], true);
        let y = x.spmm(&mat);
        assert_eq!(y.values(), vec![0.0, 1.0, 3.0, 2.0, 0.0, 1.0]);

        let p = ParamTensor::new(vec![3, 2], vec![0.3, -0.2, 0.8, 0.1, -0.5, 0.4]);
        let mat2 = Rc::clone(&mat);
        let report = check_gradients(|_, x| x.spmm(&mat2).square().sum(), &p, 1e-6);
        assert!(report.ok, "{report}");
    }

    #[test]
    fn composite_expression_gradcheck() {
        let p = ParamTensor::new(
            vec![3, 3],
            vec![0.31, -0.22, 0.47, 0.05, 0.91, -0.63, 0.12, -0.08, 0.25],
        );
        let report = check_gradients(
            |tape, x| {
                let w = tape.leaf(vec![3, 2], vec![0.5, -0.1, 0.2, 0.7, -0.3, 0.4], false);
                let h = x.matmul(&w).gelu();
                let n = h.row_norms().add_scalar(1.0).recip();
                h.mul_col(&n).square().sum_rows().add_scalar(0.5).ln().sum()
            },
            &p,
            1e-6,
        );
        assert!(report.ok, "{report}");
    }

    #[test]
    fn reshape_preserves_data_and_grad() {
        let p = ParamTensor::new(vec![6], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let report = check_gradients(|_, x| x.reshape(vec![2, 3]).sum_rows().square().sum(), &p, 1e-7);
        assert!(report.ok, "{report}");
    }
}
