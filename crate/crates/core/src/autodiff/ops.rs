use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::tape::{matmul_nn, Node, Op, TapeInner};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// The single live tape shared by a set of operands, if any. Mixing operands
/// from two live tapes is a programming error and panics.
fn joint_tape(operands: &[&Tensor]) -> Option<Rc<TapeInner>> {
    let mut found: Option<Rc<TapeInner>> = None;
    for t in operands {
        if let Some((tape, _)) = t.live_binding() {
            match &found {
                None => found = Some(tape),
                Some(prev) => assert!(
                    Rc::ptr_eq(prev, &tape),
                    "operands from different live tapes mixed in one op"
                ),
            }
        }
    }
    found
}

fn record(tape: Option<Rc<TapeInner>>, out: &Tensor, build: impl FnOnce() -> Op) {
    if let Some(tape) = tape {
        let mut nodes = tape.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op: build(),
            out_len: out.numel(),
        });
        drop(nodes);
        out.bind(&tape, id);
    }
}

fn node_of(t: &Tensor, tape: &Option<Rc<TapeInner>>) -> Option<usize> {
    tape.as_ref().and_then(|tp| t.node_on(tp))
}

fn require_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Tensor {
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            left: self.shape().to_vec(),
            right: other.shape().to_vec(),
        };
        let (m, k) = match self.shape() {
            &[m, k] => (m, k),
            _ => return Err(mismatch()),
        };
        let (k2, n) = match other.shape() {
            &[k2, n] => (k2, n),
            _ => return Err(mismatch()),
        };
        if k != k2 {
            return Err(mismatch());
        }
        let out_vals = matmul_nn(&self.values(), &other.values(), m, k, n);
        let out = Tensor::from_vec(vec![m, n], out_vals);
        let tape = joint_tape(&[self, other]);
        let (ia, ib) = (node_of(self, &tape), node_of(other, &tape));
        record(tape, &out, || Op::Matmul {
            a: ia,
            b: ib,
            a_vals: self.value_vec(),
            b_vals: other.value_vec(),
            m,
            k,
            n,
        });
        Ok(out)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        require_same_shape("add", self, other)?;
        let vals: Vec<f64> = self
            .values()
            .iter()
            .zip(other.values().iter())
            .map(|(a, b)| a + b)
            .collect();
        let out = Tensor::from_vec(self.shape().to_vec(), vals);
        let tape = joint_tape(&[self, other]);
        let (ia, ib) = (node_of(self, &tape), node_of(other, &tape));
        record(tape, &out, || Op::Add { a: ia, b: ib });
        Ok(out)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        require_same_shape("sub", self, other)?;
        let vals: Vec<f64> = self
            .values()
            .iter()
            .zip(other.values().iter())
            .map(|(a, b)| a - b)
            .collect();
        let out = Tensor::from_vec(self.shape().to_vec(), vals);
        let tape = joint_tape(&[self, other]);
        let (ia, ib) = (node_of(self, &tape), node_of(other, &tape));
        record(tape, &out, || Op::Sub { a: ia, b: ib });
        Ok(out)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        require_same_shape("mul", self, other)?;
        let vals: Vec<f64> = self
            .values()
            .iter()
            .zip(other.values().iter())
            .map(|(a, b)| a * b)
            .collect();
        let out = Tensor::from_vec(self.shape().to_vec(), vals);
        let tape = joint_tape(&[self, other]);
        let (ia, ib) = (node_of(self, &tape), node_of(other, &tape));
        record(tape, &out, || Op::Mul {
            a: ia,
            b: ib,
            a_vals: self.value_vec(),
            b_vals: other.value_vec(),
        });
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let vals: Vec<f64> = self.values().iter().map(|x| c * x).collect();
        let out = Tensor::from_vec(self.shape().to_vec(), vals);
        let tape = joint_tape(&[self]);
        let ia = node_of(self, &tape);
        record(tape, &out, || Op::Scale { a: ia, c });
        out
    }

    /// Broadcast-add a rank-1 bias of length `cols` to each row.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (rows, cols) = self.dims2("add_bias")?;
        if bias.shape() != [cols] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: self.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        let bv = bias.value_vec();
        let vals: Vec<f64> = self
            .values()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % cols])
            .collect();
        let out = Tensor::from_vec(self.shape().to_vec(), vals);
        let tape = joint_tape(&[self, bias]);
        let (ia, ib) = (node_of(self, &tape), node_of(bias, &tape));
        record(tape, &out, || Op::AddBias {
            a: ia,
            b: ib,
            rows,
            cols,
        });
        Ok(out)
    }

    /// Rectified linear unit. The subgradient at exactly 0 is taken to be 0.
    pub fn relu(&self) -> Tensor {
        let mask: Vec<f64> = self
            .values()
            .iter()
            .map(|&x| if x > 0.0 { 1.0 } else { 0.0 })
            .collect();
        let vals: Vec<f64> = self
            .values()
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let out = Tensor::from_vec(self.shape().to_vec(), vals);
        let tape = joint_tape(&[self]);
        let ia = node_of(self, &tape);
        record(tape, &out, || Op::Relu { a: ia, mask });
        out
    }

    pub fn tanh(&self) -> Tensor {
        let vals: Vec<f64> = self.values().iter().map(|x| x.tanh()).collect();
        let out = Tensor::from_vec(self.shape().to_vec(), vals.clone());
        let tape = joint_tape(&[self]);
        let ia = node_of(self, &tape);
        record(tape, &out, || Op::Tanh { a: ia, y: vals });
        out
    }

    /// Elementwise exp. Overflow produces `inf` and is propagated; guarding
    /// against it is the caller's job.
    pub fn exp(&self) -> Tensor {
        let vals: Vec<f64> = self.values().iter().map(|x| x.exp()).collect();
        let out = Tensor::from_vec(self.shape().to_vec(), vals.clone());
        let tape = joint_tape(&[self]);
        let ia = node_of(self, &tape);
        record(tape, &out, || Op::Exp { a: ia, y: vals });
        out
    }

    pub fn log1p(&self) -> Result<Tensor> {
        let xs = self.value_vec();
        if let Some(bad) = xs.iter().find(|&&x| x <= -1.0) {
            return Err(Error::Domain {
                op: "log1p",
                detail: format!("input {bad} is <= -1"),
            });
        }
        let vals: Vec<f64> = xs.iter().map(|x| x.ln_1p()).collect();
        let out = Tensor::from_vec(self.shape().to_vec(), vals);
        let tape = joint_tape(&[self]);
        let ia = node_of(self, &tape);
        record(tape, &out, || Op::Log1p { a: ia, x: xs });
        Ok(out)
    }

    pub fn sum(&self) -> Tensor {
        let s: f64 = self.values().iter().sum();
        let out = Tensor::scalar(s);
        let tape = joint_tape(&[self]);
        let ia = node_of(self, &tape);
        record(tape, &out, || Op::SumAll { a: ia });
        out
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::Domain {
                op: "mean",
                detail: "mean of an empty tensor".to_string(),
            });
        }
        let s: f64 = self.values().iter().sum();
        let out = Tensor::scalar(s / n as f64);
        let tape = joint_tape(&[self]);
        let ia = node_of(self, &tape);
        record(tape, &out, || Op::MeanAll { a: ia, n });
        Ok(out)
    }

    /// Flat-index gather into a rank-1 tensor. Duplicate indices are allowed;
    /// backward scatter-adds.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let vals: Vec<f64> = {
            let v = self.values();
            indices.iter().map(|&i| v[i]).collect()
        };
        let out = Tensor::from_vec(vec![indices.len()], vals);
        let tape = joint_tape(&[self]);
        let ia = node_of(self, &tape);
        record(tape, &out, || Op::Gather {
            a: ia,
            indices: indices.to_vec(),
        });
        out
    }

    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (_, cols) = self.dims2("gather_rows")?;
        let vals: Vec<f64> = {
            let v = self.values();
            let mut out = Vec::with_capacity(indices.len() * cols);
            for &r in indices {
                out.extend_from_slice(&v[r * cols..(r + 1) * cols]);
            }
            out
        };
        let out = Tensor::from_vec(vec![indices.len(), cols], vals);
        let tape = joint_tape(&[self]);
        let ia = node_of(self, &tape);
        record(tape, &out, || Op::GatherRows {
            a: ia,
            indices: indices.to_vec(),
            cols,
        });
        Ok(out)
    }

    /// log(sum(exp(x[i])) for i in `indices`), computed against the subset
    /// maximum so large scores cannot overflow. The backward rule is the
    /// softmax over the subset.
    pub fn log_sum_exp(&self, indices: &[usize]) -> Result<Tensor> {
        if indices.is_empty() {
            return Err(Error::InvalidRiskSet {
                detail: "log_sum_exp over an empty index set".to_string(),
            });
        }
        let (value, weights) = {
            let v = self.values();
            let m = indices
                .iter()
                .map(|&i| v[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            let mut w = Vec::with_capacity(indices.len());
            for &i in indices {
                let e = (v[i] - m).exp();
                w.push(e);
                s += e;
            }
            for e in w.iter_mut() {
                *e /= s;
            }
            (m + s.ln(), w)
        };
        let out = Tensor::scalar(value);
        let tape = joint_tape(&[self]);
        let ia = node_of(self, &tape);
        record(tape, &out, || Op::LogSumExp {
            a: ia,
            indices: indices.to_vec(),
            weights,
        });
        Ok(out)
    }

    /// Row-wise softmax with an optional key mask (length = columns). Masked
    /// positions get weight exactly 0; a row with no unmasked position is an
    /// error. Internally subtracts the row max before exponentiating.
    pub fn softmax_rows(&self, mask: Option<&[bool]>) -> Result<Tensor> {
        let (rows, cols) = self.dims2("softmax_rows")?;
        if let Some(m) = mask {
            if m.len() != cols {
                return Err(Error::ShapeMismatch {
                    op: "softmax_rows",
                    left: vec![rows, cols],
                    right: vec![m.len()],
                });
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::DegenerateAttention {
                    which: "key positions",
                });
            }
        }
        let vals = {
            let v = self.values();
            let mut out = vec![0.0; rows * cols];
            for r in 0..rows {
                let row = &v[r * cols..(r + 1) * cols];
                let mut mx = f64::NEG_INFINITY;
                for (j, &x) in row.iter().enumerate() {
                    if mask.is_none_or(|m| m[j]) && x > mx {
                        mx = x;
                    }
                }
                let mut s = 0.0;
                for (j, &x) in row.iter().enumerate() {
                    if mask.is_none_or(|m| m[j]) {
                        let e = (x - mx).exp();
                        out[r * cols + j] = e;
                        s += e;
                    }
                }
                for j in 0..cols {
                    out[r * cols + j] /= s;
                }
            }
            out
        };
        let out = Tensor::from_vec(vec![rows, cols], vals.clone());
        let tape = joint_tape(&[self]);
        let ia = node_of(self, &tape);
        record(tape, &out, || Op::SoftmaxRows {
            a: ia,
            y: vals,
            rows,
            cols,
        });
        Ok(out)
    }

    /// Softmax along `axis` of a rank-2 tensor (1 = along each row, 0 = along
    /// each column). The optional mask applies to the softmax axis.
    pub fn softmax(&self, axis: usize, mask: Option<&[bool]>) -> Result<Tensor> {
        match axis {
            1 => self.softmax_rows(mask),
            0 => self.transpose()?.softmax_rows(mask)?.transpose(),
            other => Err(Error::Domain {
                op: "softmax",
                detail: format!("axis {other} out of range for rank-2 tensor"),
            }),
        }
    }

    /// Inverted dropout: kept positions are scaled by 1/(1-p) so expectations
    /// match eval mode. `p = 0` is the identity.
    pub fn dropout<R: Rng>(&self, p: f64, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Domain {
                op: "dropout",
                detail: format!("rate {p} outside [0, 1)"),
            });
        }
        if p == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let vals: Vec<f64> = self
            .values()
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let out = Tensor::from_vec(self.shape().to_vec(), vals);
        let tape = joint_tape(&[self]);
        let ia = node_of(self, &tape);
        record(tape, &out, || Op::Dropout { a: ia, mask });
        Ok(out)
    }

    /// Add elementwise Gaussian noise N(0, sigma^2). The draw is a constant
    /// on the tape, so gradients pass through unchanged. `sigma = 0` is the
    /// identity.
    pub fn add_noise<R: Rng>(&self, sigma: f64, rng: &mut R) -> Result<Tensor> {
        if sigma < 0.0 {
            return Err(Error::Domain {
                op: "add_noise",
                detail: format!("negative sigma {sigma}"),
            });
        }
        if sigma == 0.0 {
            return Ok(self.clone());
        }
        let normal = Normal::new(0.0, sigma).expect("sigma checked above");
        let noise: Vec<f64> = (0..self.numel()).map(|_| normal.sample(rng)).collect();
        self.add(&Tensor::from_vec(self.shape().to_vec(), noise))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (rows, cols) = match self.shape() {
            &[r, c] => (r, c),
            other => {
                return Err(Error::ShapeMismatch {
                    op: "transpose",
                    left: other.to_vec(),
                    right: vec![],
                })
            }
        };
        let vals = {
            let v = self.values();
            let mut out = vec![0.0; rows * cols];
            for i in 0..rows {
                for j in 0..cols {
                    out[j * rows + i] = v[i * cols + j];
                }
            }
            out
        };
        let out = Tensor::from_vec(vec![cols, rows], vals);
        let tape = joint_tape(&[self]);
        let ia = node_of(self, &tape);
        record(tape, &out, || Op::Transpose { a: ia, rows, cols });
        Ok(out)
    }

    /// Concatenate two rank-2 tensors along `axis` (0 = stack rows, 1 = side
    /// by side).
    pub fn concat(&self, other: &Tensor, axis: usize) -> Result<Tensor> {
        let (a_rows, a_cols) = self.dims2("concat")?;
        let (b_rows, b_cols) = other.dims2("concat")?;
        let (out, shape) = match axis {
            0 if a_cols == b_cols => {
                let mut vals = self.value_vec();
                vals.extend_from_slice(&other.values());
                (vals, vec![a_rows + b_rows, a_cols])
            }
            1 if a_rows == b_rows => {
                let (av, bv) = (self.values(), other.values());
                let cols = a_cols + b_cols;
                let mut vals = vec![0.0; a_rows * cols];
                for r in 0..a_rows {
                    vals[r * cols..r * cols + a_cols]
                        .copy_from_slice(&av[r * a_cols..(r + 1) * a_cols]);
                    vals[r * cols + a_cols..(r + 1) * cols]
                        .copy_from_slice(&bv[r * b_cols..(r + 1) * b_cols]);
                }
                (vals, vec![a_rows, cols])
            }
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: self.shape().to_vec(),
                    right: other.shape().to_vec(),
                })
            }
        };
        let out = Tensor::from_vec(shape, out);
        let tape = joint_tape(&[self, other]);
        let (ia, ib) = (node_of(self, &tape), node_of(other, &tape));
        record(tape, &out, || Op::Concat {
            a: ia,
            b: ib,
            axis,
            a_rows,
            a_cols,
            b_cols,
        });
        Ok(out)
    }

    /// Stack k row vectors (shape [c] or [1, c]) into a k x c tensor.
    pub fn stack_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::Domain {
            op: "stack_rows",
            detail: "no rows to stack".to_string(),
        })?;
        let cols = first.numel();
        let mut vals = Vec::with_capacity(parts.len() * cols);
        for p in parts {
            let (r, c) = p.dims2("stack_rows")?;
            if r * c != cols || (r != 1 && c != 1) {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    left: vec![1, cols],
                    right: p.shape().to_vec(),
                });
            }
            vals.extend_from_slice(&p.values());
        }
        let out = Tensor::from_vec(vec![parts.len(), cols], vals);
        let tape = joint_tape(parts);
        let ids: Vec<Option<usize>> = parts.iter().map(|p| node_of(p, &tape)).collect();
        record(tape, &out, || Op::StackRows { parts: ids, cols });
        Ok(out)
    }

    /// Columns [start, start + len) of a rank-2 tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (rows, src_cols) = self.dims2("slice_cols")?;
        if start + len > src_cols {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                left: vec![rows, src_cols],
                right: vec![start, len],
            });
        }
        let vals = {
            let v = self.values();
            let mut out = Vec::with_capacity(rows * len);
            for r in 0..rows {
                out.extend_from_slice(&v[r * src_cols + start..r * src_cols + start + len]);
            }
            out
        };
        let out = Tensor::from_vec(vec![rows, len], vals);
        let tape = joint_tape(&[self]);
        let ia = node_of(self, &tape);
        record(tape, &out, || Op::SliceCols {
            a: ia,
            start,
            len,
            rows,
            src_cols,
        });
        Ok(out)
    }
}
