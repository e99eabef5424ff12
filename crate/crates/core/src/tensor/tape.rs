//! Arena-based reverse-mode autodiff.
//!
//! A [`Tape`] owns a flat arena of value slots and an append-only op list.
//! Forward methods validate shapes, compute values eagerly, reject non-finite
//! results, and record enough context for the backward sweep. [`Tape::backward`]
//! replays the op list in exact reverse order into a per-call adjoint scratch,
//! then merges the scratch into each slot's persistent gradient, so repeated
//! backward calls accumulate additively.

use std::cmp::Ordering;

use super::{check_shape, shape_string, Tensor, TensorError};

/// Handle into a [`Tape`] arena. Only valid for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

/// Epsilon guard inside the layer-norm variance square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

struct Slot {
    shape: Vec<usize>,
    values: Vec<f64>,
    /// Persistent gradient, accumulated across backward calls.
    grad: Option<Vec<f64>>,
}

enum Op {
    Matmul {
        a: usize,
        b: usize,
        out: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: usize,
        b: usize,
        out: usize,
    },
    Sub {
        a: usize,
        b: usize,
        out: usize,
    },
    Mul {
        a: usize,
        b: usize,
        out: usize,
    },
    Scale {
        x: usize,
        out: usize,
        c: f64,
    },
    Relu {
        x: usize,
        out: usize,
    },
    AddBias {
        x: usize,
        b: usize,
        out: usize,
        rows: usize,
        width: usize,
    },
    Reshape {
        x: usize,
        out: usize,
    },
    ConcatLast {
        parts: Vec<usize>,
        widths: Vec<usize>,
        rows: usize,
        out: usize,
    },
    SliceLast {
        x: usize,
        out: usize,
        start: usize,
        width_in: usize,
        width_out: usize,
        rows: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        out: usize,
        rows: usize,
        width: usize,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    IndexSelect {
        x: usize,
        out: usize,
        idx: Vec<usize>,
        width: usize,
    },
    SegmentSum {
        x: usize,
        out: usize,
        ids: Vec<usize>,
        width: usize,
    },
    BatchedOuter {
        x: usize,
        out: usize,
        n: usize,
        d: usize,
    },
    Contract3 {
        w: usize,
        x: usize,
        out: usize,
        n: usize,
        d_out: usize,
        inner: usize,
    },
    MaskMul {
        x: usize,
        m: usize,
        out: usize,
        n: usize,
        inner: usize,
    },
    SumAll {
        x: usize,
        out: usize,
    },
    SqrtScalar {
        x: usize,
        out: usize,
    },
}

#[derive(Default)]
pub struct Tape {
    slots: Vec<Slot>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Registers an existing tensor's values as a leaf slot.
    pub fn constant(&mut self, t: &Tensor) -> VarId {
        self.push_slot(t.shape().to_vec(), t.values().to_vec())
    }

    /// Registers raw values as a leaf slot, validating shape and finiteness.
    pub fn leaf(&mut self, shape: &[usize], values: Vec<f64>) -> Result<VarId, TensorError> {
        let t = Tensor::new(shape, values)?;
        Ok(self.constant(&t))
    }

    pub fn shape(&self, id: VarId) -> &[usize] {
        &self.slots[id.0].shape
    }

    pub fn value(&self, id: VarId) -> &[f64] {
        &self.slots[id.0].values
    }

    /// Persistent gradient of a slot, if any backward pass reached it.
    pub fn grad(&self, id: VarId) -> Option<&[f64]> {
        self.slots[id.0].grad.as_deref()
    }

    /// Copies a slot out as an untracked tensor.
    pub fn tensor(&self, id: VarId) -> Tensor {
        let s = &self.slots[id.0];
        Tensor::new(&s.shape, s.values.clone()).expect("slot invariants hold")
    }

    fn push_slot(&mut self, shape: Vec<usize>, values: Vec<f64>) -> VarId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.slots.push(Slot {
            shape,
            values,
            grad: None,
        });
        VarId(self.slots.len() - 1)
    }

    fn finish_op(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        values: Vec<f64>,
        op: impl FnOnce(usize) -> Op,
    ) -> Result<VarId, TensorError> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let id = self.push_slot(shape, values);
        self.ops.push(op(id.0));
        Ok(id)
    }

    fn rank2(&self, op: &'static str, id: VarId) -> Result<(usize, usize), TensorError> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op,
                expected: "rank-2 tensor".to_string(),
                got: shape_string(s),
            });
        }
        Ok((s[0], s[1]))
    }

    fn rank3(&self, op: &'static str, id: VarId) -> Result<(usize, usize, usize), TensorError> {
        let s = self.shape(id);
        if s.len() != 3 {
            return Err(TensorError::ShapeMismatch {
                op,
                expected: "rank-3 tensor".to_string(),
                got: shape_string(s),
            });
        }
        Ok((s[0], s[1], s[2]))
    }

    fn same_shape(&self, op: &'static str, a: VarId, b: VarId) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                expected: shape_string(self.shape(a)),
                got: shape_string(self.shape(b)),
            });
        }
        Ok(())
    }

    // ── forward ops ──────────────────────────────────────────────────────

    /// `[m x k] . [k x n] -> [m x n]`.
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        let (m, ka) = self.rank2("matmul", a)?;
        let (kb, n) = self.rank2("matmul", b)?;
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                expected: format!("inner extents to agree ({ka})"),
                got: kb.to_string(),
            });
        }
        let mut out = vec![0.0; m * n];
        dgemm_rowmajor(
            m,
            ka,
            n,
            1.0,
            self.value(a),
            false,
            self.value(b),
            false,
            0.0,
            &mut out,
        );
        self.finish_op("matmul", vec![m, n], out, |o| Op::Matmul {
            a: a.0,
            b: b.0,
            out: o,
            m,
            k: ka,
            n,
        })
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.same_shape("add", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.finish_op("add", shape, out, |o| Op::Add {
            a: a.0,
            b: b.0,
            out: o,
        })
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.same_shape("sub", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.finish_op("sub", shape, out, |o| Op::Sub {
            a: a.0,
            b: b.0,
            out: o,
        })
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.same_shape("mul", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.finish_op("mul", shape, out, |o| Op::Mul {
            a: a.0,
            b: b.0,
            out: o,
        })
    }

    pub fn scale(&mut self, x: VarId, c: f64) -> Result<VarId, TensorError> {
        if !c.is_finite() {
            return Err(TensorError::NonFinite { op: "scale" });
        }
        let out: Vec<f64> = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.finish_op("scale", shape, out, |o| Op::Scale { x: x.0, out: o, c })
    }

    /// Elementwise max(x, 0); the subgradient at zero is taken as zero.
    pub fn relu(&mut self, x: VarId) -> Result<VarId, TensorError> {
        let out: Vec<f64> = self.value(x).iter().map(|v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.finish_op("relu", shape, out, |o| Op::Relu { x: x.0, out: o })
    }

    /// Adds a rank-1 bias along the last axis.
    pub fn add_bias(&mut self, x: VarId, b: VarId) -> Result<VarId, TensorError> {
        let xs = self.shape(x);
        let width = *xs.last().expect("shapes are non-empty");
        let bs = self.shape(b);
        if bs.len() != 1 || bs[0] != width {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                expected: format!("bias [{width}]"),
                got: shape_string(bs),
            });
        }
        let rows = self.value(x).len() / width;
        let bias = self.value(b).to_vec();
        let mut out = self.value(x).to_vec();
        for r in 0..rows {
            for j in 0..width {
                out[r * width + j] += bias[j];
            }
        }
        let shape = xs.to_vec();
        self.finish_op("add_bias", shape, out, |o| Op::AddBias {
            x: x.0,
            b: b.0,
            out: o,
            rows,
            width,
        })
    }

    pub fn reshape(&mut self, x: VarId, new_shape: &[usize]) -> Result<VarId, TensorError> {
        check_shape("reshape", new_shape)?;
        let numel: usize = new_shape.iter().product();
        if numel != self.value(x).len() {
            return Err(TensorError::LengthMismatch {
                op: "reshape",
                expected: self.value(x).len(),
                got: numel,
            });
        }
        let out = self.value(x).to_vec();
        self.finish_op("reshape", new_shape.to_vec(), out, |o| Op::Reshape {
            x: x.0,
            out: o,
        })
    }

    /// Concatenates along the last axis; leading extents must agree.
    pub fn concat_last(&mut self, parts: &[VarId]) -> Result<VarId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "concat_last",
                message: "need at least one part".to_string(),
            });
        }
        let lead = self.shape(parts[0])[..self.shape(parts[0]).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_last",
                    expected: shape_string(&lead),
                    got: shape_string(&s[..s.len() - 1]),
                });
            }
            widths.push(*s.last().expect("shapes are non-empty"));
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut col = 0;
        for (pi, &p) in parts.iter().enumerate() {
            let w = widths[pi];
            let vals = self.value(p);
            for r in 0..rows {
                out[r * total + col..r * total + col + w].copy_from_slice(&vals[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let mut shape = lead;
        shape.push(total);
        let part_ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.finish_op("concat_last", shape, out, |o| Op::ConcatLast {
            parts: part_ids,
            widths,
            rows,
            out: o,
        })
    }

    /// Takes a contiguous column range `[start, start + width)` of the last
    /// axis; leading extents are preserved.
    pub fn slice_last(&mut self, x: VarId, start: usize, width: usize) -> Result<VarId, TensorError> {
        let xs = self.shape(x).to_vec();
        let width_in = *xs.last().expect("shapes are non-empty");
        if width == 0 || start + width > width_in {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_last",
                index: start + width,
                bound: width_in,
            });
        }
        let rows = self.value(x).len() / width_in;
        let xv = self.value(x);
        let mut out = vec![0.0; rows * width];
        for r in 0..rows {
            out[r * width..(r + 1) * width]
                .copy_from_slice(&xv[r * width_in + start..r * width_in + start + width]);
        }
        let mut shape = xs;
        *shape.last_mut().expect("shapes are non-empty") = width;
        self.finish_op("slice_last", shape, out, |o| Op::SliceLast {
            x: x.0,
            out: o,
            start,
            width_in,
            width_out: width,
            rows,
        })
    }

    /// Normalizes the last axis to zero mean / unit variance then applies a
    /// learnable gain and bias: `out = gain * (x - mean) / sqrt(var + eps) + bias`.
    pub fn layer_norm(&mut self, x: VarId, gain: VarId, bias: VarId) -> Result<VarId, TensorError> {
        let xs = self.shape(x);
        let width = *xs.last().expect("shapes are non-empty");
        for (name, id) in [("gain", gain), ("bias", bias)] {
            let s = self.shape(id);
            if s.len() != 1 || s[0] != width {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    expected: format!("{name} [{width}]"),
                    got: shape_string(s),
                });
            }
        }
        let rows = self.value(x).len() / width;
        let xv = self.value(x).to_vec();
        let g = self.value(gain).to_vec();
        let b = self.value(bias).to_vec();
        let mut mean = vec![0.0; rows];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * width];
        for r in 0..rows {
            let row = &xv[r * width..(r + 1) * width];
            let mu = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / width as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            mean[r] = mu;
            inv_std[r] = s;
            for j in 0..width {
                out[r * width + j] = g[j] * (row[j] - mu) * s + b[j];
            }
        }
        let shape = xs.to_vec();
        self.finish_op("layer_norm", shape, out, |o| Op::LayerNorm {
            x: x.0,
            gain: gain.0,
            bias: bias.0,
            out: o,
            rows,
            width,
            mean,
            inv_std,
        })
    }

    /// Gathers rows of a `[N x D]` tensor: `out[r] = x[idx[r]]`.
    pub fn index_select(&mut self, x: VarId, idx: &[usize]) -> Result<VarId, TensorError> {
        let (n, width) = self.rank2("index_select", x)?;
        if idx.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "index_select",
                message: "empty index list".to_string(),
            });
        }
        for &i in idx {
            if i >= n {
                return Err(TensorError::IndexOutOfRange {
                    op: "index_select",
                    index: i,
                    bound: n,
                });
            }
        }
        let xv = self.value(x);
        let mut out = vec![0.0; idx.len() * width];
        for (r, &i) in idx.iter().enumerate() {
            out[r * width..(r + 1) * width].copy_from_slice(&xv[i * width..(i + 1) * width]);
        }
        let shape = vec![idx.len(), width];
        let idx = idx.to_vec();
        self.finish_op("index_select", shape, out, |o| Op::IndexSelect {
            x: x.0,
            out: o,
            idx,
            width,
        })
    }

    /// Sums rows of a `[E x D]` tensor into `num_segments` buckets keyed by
    /// `ids`. Rows within a segment are added in a canonical order (segment
    /// id, then row content under `f64::total_cmp`, then original index), so
    /// the result is bit-identical under any permutation of the input rows.
    /// Empty segments yield zero rows.
    pub fn segment_sum(
        &mut self,
        x: VarId,
        ids: &[usize],
        num_segments: usize,
    ) -> Result<VarId, TensorError> {
        let (e, width) = self.rank2("segment_sum", x)?;
        if ids.len() != e {
            return Err(TensorError::LengthMismatch {
                op: "segment_sum",
                expected: e,
                got: ids.len(),
            });
        }
        if num_segments == 0 {
            return Err(TensorError::InvalidArgument {
                op: "segment_sum",
                message: "num_segments must be positive".to_string(),
            });
        }
        for &s in ids {
            if s >= num_segments {
                return Err(TensorError::IndexOutOfRange {
                    op: "segment_sum",
                    index: s,
                    bound: num_segments,
                });
            }
        }
        let xv = self.value(x);
        let mut order: Vec<usize> = (0..e).collect();
        order.sort_unstable_by(|&p, &q| {
            ids[p]
                .cmp(&ids[q])
                .then_with(|| row_cmp(&xv[p * width..(p + 1) * width], &xv[q * width..(q + 1) * width]))
                .then(p.cmp(&q))
        });
        let mut out = vec![0.0; num_segments * width];
        for &r in &order {
            let seg = ids[r];
            for j in 0..width {
                out[seg * width + j] += xv[r * width + j];
            }
        }
        let shape = vec![num_segments, width];
        let ids = ids.to_vec();
        self.finish_op("segment_sum", shape, out, |o| Op::SegmentSum {
            x: x.0,
            out: o,
            ids,
            width,
        })
    }

    /// `[N x D] -> [N x D x D]` with `out[n,i,j] = x[n,i] * x[n,j]`.
    pub fn batched_outer(&mut self, x: VarId) -> Result<VarId, TensorError> {
        let (n, d) = self.rank2("batched_outer", x)?;
        let xv = self.value(x);
        let mut out = vec![0.0; n * d * d];
        for r in 0..n {
            let row = &xv[r * d..(r + 1) * d];
            let base = r * d * d;
            for i in 0..d {
                for j in 0..d {
                    out[base + i * d + j] = row[i] * row[j];
                }
            }
        }
        self.finish_op("batched_outer", vec![n, d, d], out, |o| Op::BatchedOuter {
            x: x.0,
            out: o,
            n,
            d,
        })
    }

    /// Contracts a rank-3 weight against batched matrices:
    /// `out[n,d] = sum_{a,b} w[d,a,b] * x[n,a,b]`.
    pub fn contract3(&mut self, w: VarId, x: VarId) -> Result<VarId, TensorError> {
        let (d_out, wa, wb) = self.rank3("contract3", w)?;
        let (n, xa, xb) = self.rank3("contract3", x)?;
        if (wa, wb) != (xa, xb) {
            return Err(TensorError::ShapeMismatch {
                op: "contract3",
                expected: format!("[{n}x{wa}x{wb}]"),
                got: shape_string(self.shape(x)),
            });
        }
        let inner = wa * wb;
        // out [N x D] = x_flat [N x inner] . w_flat^T [inner x D]
        let mut out = vec![0.0; n * d_out];
        dgemm_rowmajor(
            n,
            inner,
            d_out,
            1.0,
            self.value(x),
            false,
            self.value(w),
            true,
            0.0,
            &mut out,
        );
        self.finish_op("contract3", vec![n, d_out], out, |o| Op::Contract3 {
            w: w.0,
            x: x.0,
            out: o,
            n,
            d_out,
            inner,
        })
    }

    /// Broadcast elementwise product of `[N x A x B]` with a `[A x B]` matrix.
    pub fn mask_mul(&mut self, x: VarId, m: VarId) -> Result<VarId, TensorError> {
        let (n, a, b) = self.rank3("mask_mul", x)?;
        let (ma, mb) = self.rank2("mask_mul", m)?;
        if (ma, mb) != (a, b) {
            return Err(TensorError::ShapeMismatch {
                op: "mask_mul",
                expected: format!("[{a}x{b}]"),
                got: shape_string(self.shape(m)),
            });
        }
        let inner = a * b;
        let xv = self.value(x);
        let mv = self.value(m);
        let mut out = vec![0.0; n * inner];
        for r in 0..n {
            for i in 0..inner {
                out[r * inner + i] = xv[r * inner + i] * mv[i];
            }
        }
        let shape = vec![n, a, b];
        self.finish_op("mask_mul", shape, out, |o| Op::MaskMul {
            x: x.0,
            m: m.0,
            out: o,
            n,
            inner,
        })
    }

    /// Sums every element into a scalar `[1]`.
    pub fn sum_all(&mut self, x: VarId) -> Result<VarId, TensorError> {
        let s: f64 = self.value(x).iter().sum();
        self.finish_op("sum_all", vec![1], vec![s], |o| Op::SumAll { x: x.0, out: o })
    }

    /// Square root of a non-negative scalar `[1]`.
    pub fn sqrt_scalar(&mut self, x: VarId) -> Result<VarId, TensorError> {
        let s = self.shape(x);
        if s != [1] {
            return Err(TensorError::ShapeMismatch {
                op: "sqrt_scalar",
                expected: "[1]".to_string(),
                got: shape_string(s),
            });
        }
        let v = self.value(x)[0];
        if v < 0.0 {
            return Err(TensorError::InvalidArgument {
                op: "sqrt_scalar",
                message: format!("negative input {v}"),
            });
        }
        self.finish_op("sqrt_scalar", vec![1], vec![v.sqrt()], |o| Op::SqrtScalar {
            x: x.0,
            out: o,
        })
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Runs reverse-mode accumulation from a scalar loss. Each call computes
    /// its own adjoints in a scratch buffer and then adds them into the
    /// persistent per-slot gradients, so calls compose additively. A
    /// non-finite adjoint (for example the square-root derivative at zero)
    /// is reported as an error and nothing is merged.
    pub fn backward(&mut self, loss: VarId) -> Result<(), TensorError> {
        let loss_len = self.value(loss).len();
        if loss_len != 1 {
            return Err(TensorError::NonScalarLoss { len: loss_len });
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.slots.len()).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);

        for op in self.ops.iter().rev() {
            let out = op_out(op);
            let d_out = match &adj[out] {
                Some(g) => g.clone(),
                None => continue,
            };
            match op {
                Op::Matmul { a, b, m, k, n, .. } => {
                    // dA += dC . B^T ; dB += A^T . dC
                    let mut da = vec![0.0; m * k];
                    dgemm_rowmajor(
                        *m,
                        *n,
                        *k,
                        1.0,
                        &d_out,
                        false,
                        &self.slots[*b].values,
                        true,
                        0.0,
                        &mut da,
                    );
                    let mut db = vec![0.0; k * n];
                    {
                        // A^T view via transposed strides.
                        let a_vals = &self.slots[*a].values;
                        dgemm_rowmajor(*k, *m, *n, 1.0, a_vals, true, &d_out, false, 0.0, &mut db);
                    }
                    add_adjoint(&mut adj, *a, &da);
                    add_adjoint(&mut adj, *b, &db);
                }
                Op::Add { a, b, .. } => {
                    add_adjoint(&mut adj, *a, &d_out);
                    add_adjoint(&mut adj, *b, &d_out);
                }
                Op::Sub { a, b, .. } => {
                    add_adjoint(&mut adj, *a, &d_out);
                    let neg: Vec<f64> = d_out.iter().map(|v| -v).collect();
                    add_adjoint(&mut adj, *b, &neg);
                }
                Op::Mul { a, b, .. } => {
                    let av = &self.slots[*a].values;
                    let bv = &self.slots[*b].values;
                    let da: Vec<f64> = d_out.iter().zip(bv).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> = d_out.iter().zip(av).map(|(g, x)| g * x).collect();
                    add_adjoint(&mut adj, *a, &da);
                    add_adjoint(&mut adj, *b, &db);
                }
                Op::Scale { x, c, .. } => {
                    let dx: Vec<f64> = d_out.iter().map(|g| g * c).collect();
                    add_adjoint(&mut adj, *x, &dx);
                }
                Op::Relu { x, .. } => {
                    let xv = &self.slots[*x].values;
                    let dx: Vec<f64> = d_out
                        .iter()
                        .zip(xv)
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect();
                    add_adjoint(&mut adj, *x, &dx);
                }
                Op::AddBias {
                    x, b, rows, width, ..
                } => {
                    add_adjoint(&mut adj, *x, &d_out);
                    let mut db = vec![0.0; *width];
                    for r in 0..*rows {
                        for j in 0..*width {
                            db[j] += d_out[r * width + j];
                        }
                    }
                    add_adjoint(&mut adj, *b, &db);
                }
                Op::Reshape { x, .. } => {
                    add_adjoint(&mut adj, *x, &d_out);
                }
                Op::ConcatLast {
                    parts,
                    widths,
                    rows,
                    ..
                } => {
                    let total: usize = widths.iter().sum();
                    let mut col = 0;
                    for (pi, &p) in parts.iter().enumerate() {
                        let w = widths[pi];
                        let mut dp = vec![0.0; rows * w];
                        for r in 0..*rows {
                            dp[r * w..(r + 1) * w]
                                .copy_from_slice(&d_out[r * total + col..r * total + col + w]);
                        }
                        add_adjoint(&mut adj, p, &dp);
                        col += w;
                    }
                }
                Op::SliceLast {
                    x,
                    start,
                    width_in,
                    width_out,
                    rows,
                    ..
                } => {
                    let mut dx = vec![0.0; rows * width_in];
                    for r in 0..*rows {
                        dx[r * width_in + start..r * width_in + start + width_out]
                            .copy_from_slice(&d_out[r * width_out..(r + 1) * width_out]);
                    }
                    add_adjoint(&mut adj, *x, &dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    rows,
                    width,
                    mean,
                    inv_std,
                    ..
                } => {
                    let w = *width;
                    let xv = &self.slots[*x].values;
                    let gv = &self.slots[*gain].values;
                    let mut dx = vec![0.0; rows * w];
                    let mut dg = vec![0.0; w];
                    let mut db = vec![0.0; w];
                    for r in 0..*rows {
                        let row = &xv[r * w..(r + 1) * w];
                        let go = &d_out[r * w..(r + 1) * w];
                        let s = inv_std[r];
                        let mu = mean[r];
                        // xhat = (x - mu) * s; t = d_out * gain
                        let mut t_mean = 0.0;
                        let mut tx_mean = 0.0;
                        for j in 0..w {
                            let xhat = (row[j] - mu) * s;
                            let t = go[j] * gv[j];
                            t_mean += t;
                            tx_mean += t * xhat;
                            dg[j] += go[j] * xhat;
                            db[j] += go[j];
                        }
                        t_mean /= w as f64;
                        tx_mean /= w as f64;
                        for j in 0..w {
                            let xhat = (row[j] - mu) * s;
                            let t = go[j] * gv[j];
                            dx[r * w + j] = s * (t - t_mean - xhat * tx_mean);
                        }
                    }
                    add_adjoint(&mut adj, *x, &dx);
                    add_adjoint(&mut adj, *gain, &dg);
                    add_adjoint(&mut adj, *bias, &db);
                }
                Op::IndexSelect { x, idx, width, .. } => {
                    let n = self.slots[*x].values.len();
                    let mut dx = vec![0.0; n];
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..*width {
                            dx[i * width + j] += d_out[r * width + j];
                        }
                    }
                    add_adjoint(&mut adj, *x, &dx);
                }
                Op::SegmentSum { x, ids, width, .. } => {
                    let mut dx = vec![0.0; ids.len() * width];
                    for (r, &seg) in ids.iter().enumerate() {
                        dx[r * width..(r + 1) * width]
                            .copy_from_slice(&d_out[seg * width..(seg + 1) * width]);
                    }
                    add_adjoint(&mut adj, *x, &dx);
                }
                Op::BatchedOuter { x, n, d, .. } => {
                    let xv = &self.slots[*x].values;
                    let mut dx = vec![0.0; n * d];
                    for r in 0..*n {
                        let row = &xv[r * d..(r + 1) * d];
                        let base = r * d * d;
                        for i in 0..*d {
                            let mut acc = 0.0;
                            for j in 0..*d {
                                acc += (d_out[base + i * d + j] + d_out[base + j * d + i]) * row[j];
                            }
                            dx[r * d + i] = acc;
                        }
                    }
                    add_adjoint(&mut adj, *x, &dx);
                }
                Op::Contract3 {
                    w,
                    x,
                    n,
                    d_out: do_,
                    inner,
                    ..
                } => {
                    // dW [D x inner] += dOut^T [D x N] . x_flat [N x inner]
                    let mut dw = vec![0.0; do_ * inner];
                    dgemm_rowmajor(
                        *do_,
                        *n,
                        *inner,
                        1.0,
                        &d_out,
                        true,
                        &self.slots[*x].values,
                        false,
                        0.0,
                        &mut dw,
                    );
                    // dX [N x inner] += dOut [N x D] . w_flat [D x inner]
                    let mut dx = vec![0.0; n * inner];
                    dgemm_rowmajor(
                        *n,
                        *do_,
                        *inner,
                        1.0,
                        &d_out,
                        false,
                        &self.slots[*w].values,
                        false,
                        0.0,
                        &mut dx,
                    );
                    add_adjoint(&mut adj, *w, &dw);
                    add_adjoint(&mut adj, *x, &dx);
                }
                Op::MaskMul { x, m, n, inner, .. } => {
                    let xv = &self.slots[*x].values;
                    let mv = &self.slots[*m].values;
                    let mut dx = vec![0.0; n * inner];
                    let mut dm = vec![0.0; *inner];
                    for r in 0..*n {
                        for i in 0..*inner {
                            dx[r * inner + i] = d_out[r * inner + i] * mv[i];
                            dm[i] += d_out[r * inner + i] * xv[r * inner + i];
                        }
                    }
                    add_adjoint(&mut adj, *x, &dx);
                    add_adjoint(&mut adj, *m, &dm);
                }
                Op::SumAll { x, .. } => {
                    let n = self.slots[*x].values.len();
                    let dx = vec![d_out[0]; n];
                    add_adjoint(&mut adj, *x, &dx);
                }
                Op::SqrtScalar { x, .. } => {
                    let y = self.slots[op_out(op)].values[0];
                    let dx = vec![d_out[0] * 0.5 / y];
                    add_adjoint(&mut adj, *x, &dx);
                }
            }
        }

        for a in adj.iter().flatten() {
            if !a.iter().all(|v| v.is_finite()) {
                return Err(TensorError::NonFinite { op: "backward" });
            }
        }
        for (slot, a) in self.slots.iter_mut().zip(adj) {
            if let Some(a) = a {
                match &mut slot.grad {
                    Some(g) => {
                        for (gi, ai) in g.iter_mut().zip(&a) {
                            *gi += ai;
                        }
                    }
                    None => slot.grad = Some(a),
                }
            }
        }
        Ok(())
    }
}

fn op_out(op: &Op) -> usize {
    match op {
        Op::Matmul { out, .. }
        | Op::Add { out, .. }
        | Op::Sub { out, .. }
        | Op::Mul { out, .. }
        | Op::Scale { out, .. }
        | Op::Relu { out, .. }
        | Op::AddBias { out, .. }
        | Op::Reshape { out, .. }
        | Op::ConcatLast { out, .. }
        | Op::SliceLast { out, .. }
        | Op::LayerNorm { out, .. }
        | Op::IndexSelect { out, .. }
        | Op::SegmentSum { out, .. }
        | Op::BatchedOuter { out, .. }
        | Op::Contract3 { out, .. }
        | Op::MaskMul { out, .. }
        | Op::SumAll { out, .. }
        | Op::SqrtScalar { out, .. } => *out,
    }
}

fn add_adjoint(adj: &mut [Option<Vec<f64>>], id: usize, delta: &[f64]) {
    match &mut adj[id] {
        Some(g) => {
            debug_assert_eq!(g.len(), delta.len());
            for (gi, di) in g.iter_mut().zip(delta) {
                *gi += di;
            }
        }
        None => adj[id] = Some(delta.to_vec()),
    }
}

fn row_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let c = x.total_cmp(y);
        if c != Ordering::Equal {
            return c;
        }
    }
    Ordering::Equal
}

/// Row-major dgemm wrapper: `c = alpha * op(a) . op(b) + beta * c`, where
/// `op` transposes via swapped strides when the corresponding flag is set.
/// `m, k, n` refer to the shapes after transposition.
#[allow(clippy::too_many_arguments)]
fn dgemm_rowmajor(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
