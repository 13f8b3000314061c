use std::cell::RefCell;
use std::rc::Rc;

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Records one forward pass. Ops append nodes while at least one operand is
/// bound to the tape; `backward` replays them in reverse. Dropping the tape
/// invalidates all bindings (they hold weak references), so parameters can be
/// re-watched on a fresh tape every step.
pub struct Tape {
    pub(crate) inner: Rc<TapeInner>,
}

pub(crate) struct TapeInner {
    pub(crate) nodes: RefCell<Vec<Node>>,
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) out_len: usize,
}

/// Saved state per op: parent node ids (None = untracked constant operand)
/// plus whatever the backward rule needs.
pub(crate) enum Op {
    Leaf {
        tensor: Tensor,
    },
    Matmul {
        a: Option<usize>,
        b: Option<usize>,
        a_vals: Vec<f64>,
        b_vals: Vec<f64>,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: Option<usize>,
        b: Option<usize>,
    },
    Sub {
        a: Option<usize>,
        b: Option<usize>,
    },
    Mul {
        a: Option<usize>,
        b: Option<usize>,
        a_vals: Vec<f64>,
        b_vals: Vec<f64>,
    },
    Scale {
        a: Option<usize>,
        c: f64,
    },
    Relu {
        a: Option<usize>,
        mask: Vec<f64>,
    },
    Tanh {
        a: Option<usize>,
        y: Vec<f64>,
    },
    Exp {
        a: Option<usize>,
        y: Vec<f64>,
    },
    Log1p {
        a: Option<usize>,
        x: Vec<f64>,
    },
    SumAll {
        a: Option<usize>,
    },
    MeanAll {
        a: Option<usize>,
        n: usize,
    },
    AddBias {
        a: Option<usize>,
        b: Option<usize>,
        rows: usize,
        cols: usize,
    },
    Gather {
        a: Option<usize>,
        indices: Vec<usize>,
    },
    GatherRows {
        a: Option<usize>,
        indices: Vec<usize>,
        cols: usize,
    },
    LogSumExp {
        a: Option<usize>,
        indices: Vec<usize>,
        /// Softmax weights over the subset, saved at forward time.
        weights: Vec<f64>,
    },
    SoftmaxRows {
        a: Option<usize>,
        /// Output values; masked positions are exactly zero, which makes the
        /// backward rule mask-aware for free.
        y: Vec<f64>,
        rows: usize,
        cols: usize,
    },
    Dropout {
        a: Option<usize>,
        /// 0.0 for dropped positions, 1/(1-p) for kept ones.
        mask: Vec<f64>,
    },
    Transpose {
        a: Option<usize>,
        rows: usize,
        cols: usize,
    },
    Concat {
        a: Option<usize>,
        b: Option<usize>,
        axis: usize,
        a_rows: usize,
        a_cols: usize,
        b_cols: usize,
    },
    StackRows {
        parts: Vec<Option<usize>>,
        cols: usize,
    },
    SliceCols {
        a: Option<usize>,
        start: usize,
        len: usize,
        rows: usize,
        src_cols: usize,
    },
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            inner: Rc::new(TapeInner {
                nodes: RefCell::new(Vec::new()),
            }),
        }
    }

    /// Register `t` as a differentiable leaf. Idempotent for a tensor already
    /// watched here; panics if another live tape is tracking it.
    pub fn watch(&self, t: &Tensor) {
        if let Some((tape, _)) = t.live_binding() {
            if Rc::ptr_eq(&tape, &self.inner) {
                return;
            }
            panic!(
                "tensor `{}` is already tracked by another live tape",
                t.name()
            );
        }
        let mut nodes = self.inner.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op: Op::Leaf { tensor: t.clone() },
            out_len: t.numel(),
        });
        drop(nodes);
        t.bind(&self.inner, id);
    }

    pub fn len(&self) -> usize {
        self.inner.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse pass from `loss`, accumulating adjoints into every watched
    /// leaf. A loss with no parameter ancestry still zero-fills leaf
    /// gradients so downstream code can rely on their presence. Repeated
    /// calls without `clear_grad` accumulate.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::NotScalar {
                op: "backward",
                shape: loss.shape().to_vec(),
            });
        }
        let nodes = self.inner.nodes.borrow();
        let start = match loss.node_on(&self.inner) {
            Some(i) => i,
            None => {
                for node in nodes.iter() {
                    if let Op::Leaf { tensor } = &node.op {
                        tensor.ensure_grad();
                    }
                }
                return Ok(());
            }
        };
        let lens: Vec<usize> = nodes.iter().take(start + 1).map(|n| n.out_len).collect();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; start + 1];
        adj[start] = Some(vec![1.0]);
        for i in (0..=start).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &nodes[i].op {
                Op::Leaf { tensor } => tensor.accumulate_grad(&g),
                op => op.propagate(&g, &mut adj, &lens),
            }
        }
        for node in nodes.iter() {
            if let Op::Leaf { tensor } = &node.op {
                tensor.ensure_grad();
            }
        }
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn add_into(
    adj: &mut [Option<Vec<f64>>],
    lens: &[usize],
    idx: Option<usize>,
    f: impl FnOnce(&mut [f64]),
) {
    let Some(i) = idx else { return };
    let slot = adj[i].get_or_insert_with(|| vec![0.0; lens[i]]);
    f(slot);
}

impl Op {
    fn propagate(&self, g: &[f64], adj: &mut [Option<Vec<f64>>], lens: &[usize]) {
        match self {
            Op::Leaf { .. } => unreachable!("leaves are handled by backward directly"),
            Op::Matmul {
                a,
                b,
                a_vals,
                b_vals,
                m,
                k,
                n,
            } => {
                add_into(adj, lens, *a, |da| {
                    let t = matmul_abt(g, b_vals, *m, *n, *k);
                    axpy(da, &t);
                });
                add_into(adj, lens, *b, |db| {
                    let t = matmul_atb(a_vals, g, *m, *k, *n);
                    axpy(db, &t);
                });
            }
            Op::Add { a, b } => {
                add_into(adj, lens, *a, |da| axpy(da, g));
                add_into(adj, lens, *b, |db| axpy(db, g));
            }
            Op::Sub { a, b } => {
                add_into(adj, lens, *a, |da| axpy(da, g));
                add_into(adj, lens, *b, |db| {
                    for (d, x) in db.iter_mut().zip(g) {
                        *d -= x;
                    }
                });
            }
            Op::Mul {
                a,
                b,
                a_vals,
                b_vals,
            } => {
                add_into(adj, lens, *a, |da| {
                    for ((d, x), w) in da.iter_mut().zip(g).zip(b_vals) {
                        *d += x * w;
                    }
                });
                add_into(adj, lens, *b, |db| {
                    for ((d, x), w) in db.iter_mut().zip(g).zip(a_vals) {
                        *d += x * w;
                    }
                });
            }
            Op::Scale { a, c } => {
                add_into(adj, lens, *a, |da| {
                    for (d, x) in da.iter_mut().zip(g) {
                        *d += c * x;
                    }
                });
            }
            Op::Relu { a, mask } | Op::Dropout { a, mask } => {
                add_into(adj, lens, *a, |da| {
                    for ((d, x), m) in da.iter_mut().zip(g).zip(mask) {
                        *d += x * m;
                    }
                });
            }
            Op::Tanh { a, y } => {
                add_into(adj, lens, *a, |da| {
                    for ((d, x), yv) in da.iter_mut().zip(g).zip(y) {
                        *d += x * (1.0 - yv * yv);
                    }
                });
            }
            Op::Exp { a, y } => {
                add_into(adj, lens, *a, |da| {
                    for ((d, x), yv) in da.iter_mut().zip(g).zip(y) {
                        *d += x * yv;
                    }
                });
            }
            Op::Log1p { a, x } => {
                add_into(adj, lens, *a, |da| {
                    for ((d, gv), xv) in da.iter_mut().zip(g).zip(x) {
                        *d += gv / (1.0 + xv);
                    }
                });
            }
            Op::SumAll { a } => {
                add_into(adj, lens, *a, |da| {
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                });
            }
            Op::MeanAll { a, n } => {
                add_into(adj, lens, *a, |da| {
                    let s = g[0] / *n as f64;
                    for d in da.iter_mut() {
                        *d += s;
                    }
                });
            }
            Op::AddBias { a, b, rows, cols } => {
                add_into(adj, lens, *a, |da| axpy(da, g));
                add_into(adj, lens, *b, |db| {
                    for r in 0..*rows {
                        for j in 0..*cols {
                            db[j] += g[r * cols + j];
                        }
                    }
                });
            }
            Op::Gather { a, indices } => {
                add_into(adj, lens, *a, |da| {
                    for (t, &src) in indices.iter().enumerate() {
                        da[src] += g[t];
                    }
                });
            }
            Op::GatherRows { a, indices, cols } => {
                add_into(adj, lens, *a, |da| {
                    for (t, &src) in indices.iter().enumerate() {
                        for j in 0..*cols {
                            da[src * cols + j] += g[t * cols + j];
                        }
                    }
                });
            }
            Op::LogSumExp {
                a,
                indices,
                weights,
            } => {
                add_into(adj, lens, *a, |da| {
                    for (&src, &w) in indices.iter().zip(weights) {
                        da[src] += g[0] * w;
                    }
                });
            }
            Op::SoftmaxRows { a, y, rows, cols } => {
                add_into(adj, lens, *a, |da| {
                    for r in 0..*rows {
                        let row = r * cols;
                        let mut s = 0.0;
                        for j in 0..*cols {
                            s += g[row + j] * y[row + j];
                        }
                        for j in 0..*cols {
                            da[row + j] += y[row + j] * (g[row + j] - s);
                        }
                    }
                });
            }
            Op::Transpose { a, rows, cols } => {
                add_into(adj, lens, *a, |da| {
                    for i in 0..*rows {
                        for j in 0..*cols {
                            da[i * cols + j] += g[j * rows + i];
                        }
                    }
                });
            }
            Op::Concat {
                a,
                b,
                axis,
                a_rows,
                a_cols,
                b_cols,
            } => {
                if *axis == 0 {
                    let a_len = a_rows * a_cols;
                    add_into(adj, lens, *a, |da| axpy(da, &g[..a_len]));
                    add_into(adj, lens, *b, |db| axpy(db, &g[a_len..]));
                } else {
                    let cols = a_cols + b_cols;
                    add_into(adj, lens, *a, |da| {
                        for r in 0..*a_rows {
                            for j in 0..*a_cols {
                                da[r * a_cols + j] += g[r * cols + j];
                            }
                        }
                    });
                    add_into(adj, lens, *b, |db| {
                        for r in 0..*a_rows {
                            for j in 0..*b_cols {
                                db[r * b_cols + j] += g[r * cols + a_cols + j];
                            }
                        }
                    });
                }
            }
            Op::StackRows { parts, cols } => {
                for (t, idx) in parts.iter().enumerate() {
                    add_into(adj, lens, *idx, |dp| axpy(dp, &g[t * cols..(t + 1) * cols]));
                }
            }
            Op::SliceCols {
                a,
                start,
                len,
                rows,
                src_cols,
            } => {
                add_into(adj, lens, *a, |da| {
                    for r in 0..*rows {
                        for j in 0..*len {
                            da[r * src_cols + start + j] += g[r * len + j];
                        }
                    }
                });
            }
        }
    }
}

fn axpy(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// a (m x k) * b (k x n) -> m x n
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = p * n;
            let orow = i * n;
            for j in 0..n {
                out[orow + j] += av * b[brow + j];
            }
        }
    }
    out
}

/// a (m x n) * b^T where b is (p x n) -> m x p
pub(crate) fn matmul_abt(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let arow = i * n;
        for q in 0..p {
            let brow = q * n;
            let mut acc = 0.0;
            for j in 0..n {
                acc += a[arow + j] * b[brow + j];
            }
            out[i * p + q] = acc;
        }
    }
    out
}

/// a^T where a is (m x k), times b (m x n) -> k x n
pub(crate) fn matmul_atb(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = i * n;
            let orow = p * n;
            for j in 0..n {
                out[orow + j] += av * b[brow + j];
            }
        }
    }
    out
}
