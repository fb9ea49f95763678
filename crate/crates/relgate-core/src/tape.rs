//! Tape-based reverse-mode automatic differentiation.
//!
//! Every forward operation appends a node to the tape (value plus the op
//! that produced it); `backward` replays the tape in reverse and accumulates
//! gradients into every node on a path to a `requires_grad` leaf. The tape
//! is rebuilt per forward pass, which keeps data-dependent control flow
//! (the refinement loop exits at different depths per relation) trivially
//! correct: only the ops that actually ran are on the tape.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn index_for_test(index: usize) -> Self {
        TensorId(index)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul {
        a: TensorId,
        b: TensorId,
    },
    Add {
        a: TensorId,
        b: TensorId,
    },
    AddN {
        inputs: Vec<TensorId>,
    },
    AddBias {
        x: TensorId,
        bias: TensorId,
    },
    Mul {
        a: TensorId,
        b: TensorId,
    },
    Relu {
        x: TensorId,
    },
    Sigmoid {
        x: TensorId,
    },
    Gelu {
        x: TensorId,
    },
    Softmax {
        x: TensorId,
        axis: usize,
    },
    LayerNorm {
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        // saved per-row statistics: (mean, 1/sqrt(var + eps))
        stats: Vec<(f64, f64)>,
    },
    Concat {
        a: TensorId,
        b: TensorId,
        axis: usize,
    },
    Slice {
        x: TensorId,
        axis: usize,
        start: usize,
    },
    Transpose {
        x: TensorId,
    },
    Scale {
        x: TensorId,
        factor: f64,
    },
    Sum {
        x: TensorId,
    },
    Embedding {
        table: TensorId,
        ids: Vec<usize>,
    },
    BceMean {
        logits: TensorId,
        targets: Vec<f64>,
    },
    SoftmaxXent {
        logits: TensorId,
        class: usize,
    },
}

struct Node {
    op: Op,
    tensor: Tensor,
    needs_grad: bool,
}

/// The recorded forward graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    finished: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / core::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / core::f64::consts::SQRT_2));
    let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
    cdf + x * pdf
}

/// Numerically stable ln(1 + e^x).
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// Decompose `shape` around `axis` into (outer, axis_len, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            finished: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Ids of every recorded node, in recording order.
    pub fn ids(&self) -> impl Iterator<Item = TensorId> {
        (0..self.nodes.len()).map(TensorId)
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].tensor.data()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].tensor.shape()
    }

    /// Gradient of a node after `backward`; `None` before backward or for
    /// nodes off the loss path.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    fn push(&mut self, op: Op, tensor: Tensor, needs_grad: bool) -> TensorId {
        debug_assert!(
            tensor.all_finite(),
            "non-finite values produced by forward op"
        );
        self.nodes.push(Node {
            op,
            tensor,
            needs_grad,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Record an existing tensor as a leaf. `requires_grad` is taken from
    /// the tensor itself.
    pub fn leaf(&mut self, tensor: Tensor) -> TensorId {
        let needs = tensor.requires_grad;
        self.push(Op::Leaf, tensor, needs)
    }

    /// Record a trainable copy of a parameter tensor.
    pub fn param(&mut self, tensor: &Tensor) -> TensorId {
        let mut t = tensor.clone();
        t.requires_grad = true;
        t.grad = None;
        self.push(Op::Leaf, t, true)
    }

    /// Record a non-trainable constant.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<TensorId> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(Op::Leaf, t, false))
    }

    pub fn scalar_const(&mut self, value: f64) -> TensorId {
        self.push(Op::Leaf, Tensor::scalar(value), false)
    }

    // ── forward ops ──────────────────────────────────────────────────────

    /// 2-D matrix product `[m×k] · [k×n] -> [m×n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a), self.value(b), m, k, n, &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul { a, b }, Tensor::new(vec![m, n], out)?, needs))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add { a, b }, Tensor::new(shape, data)?, needs))
    }

    /// Sum of any number of same-shape tensors.
    pub fn add_n(&mut self, inputs: &[TensorId]) -> Result<TensorId> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Contract("add_n requires at least one input".into()))?;
        let shape = self.shape(first).to_vec();
        let mut data = vec![0.0; self.value(first).len()];
        for &id in inputs {
            if self.shape(id) != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "add_n",
                    lhs: shape,
                    rhs: self.shape(id).to_vec(),
                });
            }
            for (o, v) in data.iter_mut().zip(self.value(id)) {
                *o += v;
            }
        }
        let needs = inputs.iter().any(|&id| self.needs(id));
        Ok(self.push(
            Op::AddN {
                inputs: inputs.to_vec(),
            },
            Tensor::new(shape, data)?,
            needs,
        ))
    }

    /// Broadcast-add a length-n vector over the last axis of `x`.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        let n = *sx.last().unwrap_or(&0);
        if sb.len() != 1 || sb[0] != n {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: sx,
                rhs: sb,
            });
        }
        let bv = self.value(bias).to_vec();
        let data: Vec<f64> = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[i % n])
            .collect();
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(Op::AddBias { x, bias }, Tensor::new(sx, data)?, needs))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul { a, b }, Tensor::new(shape, data)?, needs))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let data: Vec<f64> = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(
            Op::Relu { x },
            Tensor::new(shape, data).expect("shape preserved"),
            needs,
        )
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let data: Vec<f64> = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(
            Op::Sigmoid { x },
            Tensor::new(shape, data).expect("shape preserved"),
            needs,
        )
    }

    pub fn gelu(&mut self, x: TensorId) -> TensorId {
        let data: Vec<f64> = self.value(x).iter().map(|&v| gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(
            Op::Gelu { x },
            Tensor::new(shape, data).expect("shape preserved"),
            needs,
        )
    }

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis {
                axis,
                rank: shape.len(),
            });
        }
        let (outer, alen, inner) = axis_split(&shape, axis);
        let src = self.value(x);
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * alen * inner + j * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..alen {
                    max = max.max(src[at(j)]);
                }
                let mut denom = 0.0;
                for j in 0..alen {
                    let e = libm::exp(src[at(j)] - max);
                    data[at(j)] = e;
                    denom += e;
                }
                for j in 0..alen {
                    data[at(j)] /= denom;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Op::Softmax { x, axis }, Tensor::new(shape, data)?, needs))
    }

    /// Layer normalization over the last axis, then affine (gain, bias).
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().unwrap_or(&0);
        for (name, id) in [("gain", gain), ("bias", bias)] {
            let s = self.shape(id);
            if s.len() != 1 || s[0] != n {
                let _ = name;
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: shape,
                    rhs: s.to_vec(),
                });
            }
        }
        let rows = self.value(x).len() / n;
        let src = self.value(x);
        let gv = self.value(gain);
        let bv = self.value(bias);
        let mut data = vec![0.0; src.len()];
        let mut stats = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv_std = 1.0 / libm::sqrt(var + eps);
            for i in 0..n {
                data[r * n + i] = (row[i] - mean) * inv_std * gv[i] + bv[i];
            }
            stats.push((mean, inv_std));
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            },
            Tensor::new(shape, data)?,
            needs,
        ))
    }

    /// Concatenate along `axis`. All other axes must agree.
    pub fn concat(&mut self, a: TensorId, b: TensorId, axis: usize) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let rank = sa.len();
        let compatible = sb.len() == rank
            && axis < rank
            && sa
                .iter()
                .zip(&sb)
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: sa,
                rhs: sb,
            });
        }
        let (outer, alen, inner) = axis_split(&sa, axis);
        let blen = sb[axis];
        let mut shape = sa.clone();
        shape[axis] = alen + blen;
        let va = self.value(a);
        let vb = self.value(b);
        let mut data = vec![0.0; outer * (alen + blen) * inner];
        for o in 0..outer {
            let dst = &mut data[o * (alen + blen) * inner..];
            dst[..alen * inner].copy_from_slice(&va[o * alen * inner..(o + 1) * alen * inner]);
            dst[alen * inner..(alen + blen) * inner]
                .copy_from_slice(&vb[o * blen * inner..(o + 1) * blen * inner]);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Concat { a, b, axis }, Tensor::new(shape, data)?, needs))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice(&mut self, x: TensorId, axis: usize, start: usize, len: usize) -> Result<TensorId> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() {
            return Err(Error::InvalidAxis {
                axis,
                rank: sx.len(),
            });
        }
        if start + len > sx[axis] || len == 0 {
            return Err(Error::IndexOutOfRange {
                what: "slice range end",
                index: start + len,
                bound: sx[axis],
            });
        }
        let (outer, alen, inner) = axis_split(&sx, axis);
        let src = self.value(x);
        let mut shape = sx.clone();
        shape[axis] = len;
        let mut data = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src_off = (o * alen + start) * inner;
            let dst_off = o * len * inner;
            data[dst_off..dst_off + len * inner]
                .copy_from_slice(&src[src_off..src_off + len * inner]);
        }
        let needs = self.needs(x);
        Ok(self.push(Op::Slice { x, axis, start }, Tensor::new(shape, data)?, needs))
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                lhs: sx,
                rhs: vec![],
            });
        }
        let (m, n) = (sx[0], sx[1]);
        let src = self.value(x);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Op::Transpose { x }, Tensor::new(vec![n, m], data)?, needs))
    }

    /// Multiply by a compile-time constant factor.
    pub fn scale(&mut self, x: TensorId, factor: f64) -> TensorId {
        let data: Vec<f64> = self.value(x).iter().map(|&v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(
            Op::Scale { x, factor },
            Tensor::new(shape, data).expect("shape preserved"),
            needs,
        )
    }

    /// Total sum to a scalar `[1]`.
    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let total: f64 = self.value(x).iter().sum();
        let needs = self.needs(x);
        self.push(Op::Sum { x }, Tensor::scalar(total), needs)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: TensorId) -> TensorId {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Row lookup: `table[V×d]` gathered at `ids` -> `[len(ids)×d]`.
    pub fn embedding(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embedding",
                lhs: st,
                rhs: vec![],
            });
        }
        let (v, d) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::IndexOutOfRange {
                what: "embedding id",
                index: bad,
                bound: v,
            });
        }
        let src = self.value(table);
        let mut data = vec![0.0; ids.len() * d];
        for (row, &id) in ids.iter().enumerate() {
            data[row * d..(row + 1) * d].copy_from_slice(&src[id * d..(id + 1) * d]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            Tensor::new(vec![ids.len(), d], data)?,
            needs,
        ))
    }

    /// Inverted dropout in training mode: multiply by a fresh 0-or-1/(1-p)
    /// mask drawn from `rng`. `p == 0` is the identity (no node recorded).
    pub fn dropout(&mut self, x: TensorId, p: f64, rng: &mut SeededRng) -> Result<TensorId> {
        if p == 0.0 {
            return Ok(x);
        }
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(alloc::format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        let mask = rng.dropout_mask(self.value(x).len(), p);
        let shape = self.shape(x).to_vec();
        let mask_id = self.constant(shape, mask)?;
        self.mul(x, mask_id)
    }

    /// Mean binary cross-entropy of per-class logits against 0/1 targets,
    /// computed in the numerically stable logit form.
    pub fn bce_mean(&mut self, logits: TensorId, targets: &[f64]) -> Result<TensorId> {
        let n = self.value(logits).len();
        if targets.len() != n {
            return Err(Error::ShapeMismatch {
                op: "bce_mean",
                lhs: self.shape(logits).to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let loss = self
            .value(logits)
            .iter()
            .zip(targets)
            .map(|(&z, &y)| softplus(z) - z * y)
            .sum::<f64>()
            / n as f64;
        let needs = self.needs(logits);
        Ok(self.push(
            Op::BceMean {
                logits,
                targets: targets.to_vec(),
            },
            Tensor::scalar(loss),
            needs,
        ))
    }

    /// Softmax cross-entropy of a logit vector against one gold class.
    pub fn softmax_xent(&mut self, logits: TensorId, class: usize) -> Result<TensorId> {
        let n = self.value(logits).len();
        if class >= n {
            return Err(Error::IndexOutOfRange {
                what: "gold class",
                index: class,
                bound: n,
            });
        }
        let z = self.value(logits);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(z.iter().map(|&v| libm::exp(v - max)).sum::<f64>());
        let loss = lse - z[class];
        let needs = self.needs(logits);
        Ok(self.push(Op::SoftmaxXent { logits, class }, Tensor::scalar(loss), needs))
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Every tensor on a path from a
    /// `requires_grad` leaf to the loss receives its gradient; the recorded
    /// operation list is then cleared, so the tape cannot be replayed.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.finished {
            return Err(Error::Contract(
                "backward already ran on this tape".into(),
            ));
        }
        if !self.nodes[loss.0].tensor.is_scalar() {
            return Err(Error::Contract(alloc::format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.finished = true;

        for node in &mut self.nodes {
            node.tensor.grad = None;
        }
        self.nodes[loss.0].tensor.grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let grad = match self.nodes[i].tensor.grad.take() {
                Some(g) => g,
                None => continue, // not on the loss path
            };
            let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.apply_backward(&op, i, &grad);
            // requires_grad leaves keep their gradient; intermediates drop it
            if self.nodes[i].tensor.requires_grad {
                self.nodes[i].tensor.grad = Some(grad);
            }
        }
        // clear any op records below the loss as well
        for node in &mut self.nodes {
            node.op = Op::Leaf;
        }
        Ok(())
    }

    fn accumulate(&mut self, id: TensorId, delta: &[f64]) {
        self.accumulate_at(id, 0, delta);
    }

    fn accumulate_at(&mut self, id: TensorId, offset: usize, delta: &[f64]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let node = &mut self.nodes[id.0];
        let numel = node.tensor.numel();
        let buf = node.tensor.grad.get_or_insert_with(|| vec![0.0; numel]);
        for (g, d) in buf[offset..offset + delta.len()].iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn apply_backward(&mut self, op: &Op, out: usize, grad: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = {
                    let s = self.shape(*a);
                    (s[0], s[1])
                };
                let n = self.shape(*b)[1];
                if self.needs(*a) {
                    // dA = dC · Bᵀ
                    let bval = self.value(*b);
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let g = grad[i * n + j];
                            if g == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] += g * bval[p * n + j];
                            }
                        }
                    }
                    self.accumulate(*a, &da);
                }
                if self.needs(*b) {
                    // dB = Aᵀ · dC
                    let aval = self.value(*a);
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = aval[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += av * grad[i * n + j];
                            }
                        }
                    }
                    self.accumulate(*b, &db);
                }
            }
            Op::Add { a, b } => {
                self.accumulate(*a, grad);
                self.accumulate(*b, grad);
            }
            Op::AddN { inputs } => {
                for &id in inputs {
                    self.accumulate(id, grad);
                }
            }
            Op::AddBias { x, bias } => {
                self.accumulate(*x, grad);
                if self.needs(*bias) {
                    let n = self.shape(*bias)[0];
                    let mut db = vec![0.0; n];
                    for (i, g) in grad.iter().enumerate() {
                        db[i % n] += g;
                    }
                    self.accumulate(*bias, &db);
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let da: Vec<f64> = grad.iter().zip(self.value(*b)).map(|(g, v)| g * v).collect();
                    self.accumulate(*a, &da);
                }
                if self.needs(*b) {
                    let db: Vec<f64> = grad.iter().zip(self.value(*a)).map(|(g, v)| g * v).collect();
                    self.accumulate(*b, &db);
                }
            }
            Op::Relu { x } => {
                let dx: Vec<f64> = grad
                    .iter()
                    .zip(self.value(*x))
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(*x, &dx);
            }
            Op::Sigmoid { x } => {
                let out_val = self.nodes[out].tensor.data();
                let dx: Vec<f64> = grad
                    .iter()
                    .zip(out_val)
                    .map(|(g, &s)| g * s * (1.0 - s))
                    .collect();
                self.accumulate(*x, &dx);
            }
            Op::Gelu { x } => {
                let dx: Vec<f64> = grad
                    .iter()
                    .zip(self.value(*x))
                    .map(|(g, &v)| g * gelu_grad(v))
                    .collect();
                self.accumulate(*x, &dx);
            }
            Op::Softmax { x, axis } => {
                let shape = self.shape(*x).to_vec();
                let (outer, alen, inner) = axis_split(&shape, *axis);
                let y = self.nodes[out].tensor.data();
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * alen * inner + j * inner + i;
                        let mut dot = 0.0;
                        for j in 0..alen {
                            dot += grad[at(j)] * y[at(j)];
                        }
                        for j in 0..alen {
                            dx[at(j)] = y[at(j)] * (grad[at(j)] - dot);
                        }
                    }
                }
                self.accumulate(*x, &dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            } => {
                let n = *self.shape(*x).last().unwrap();
                let rows = stats.len();
                let src = self.value(*x).to_vec();
                let gv = self.value(*gain).to_vec();
                let mut dx = vec![0.0; src.len()];
                let mut dgain = vec![0.0; n];
                let mut dbias = vec![0.0; n];
                for r in 0..rows {
                    let (mean, inv_std) = stats[r];
                    let row = &src[r * n..(r + 1) * n];
                    let grow = &grad[r * n..(r + 1) * n];
                    // x̂ and the two row means the gradient needs
                    let mut mean_gl = 0.0;
                    let mut mean_glx = 0.0;
                    for i in 0..n {
                        let xhat = (row[i] - mean) * inv_std;
                        let gl = grow[i] * gv[i];
                        mean_gl += gl;
                        mean_glx += gl * xhat;
                        dgain[i] += grow[i] * xhat;
                        dbias[i] += grow[i];
                    }
                    mean_gl /= n as f64;
                    mean_glx /= n as f64;
                    for i in 0..n {
                        let xhat = (row[i] - mean) * inv_std;
                        let gl = grow[i] * gv[i];
                        dx[r * n + i] = inv_std * (gl - mean_gl - xhat * mean_glx);
                    }
                }
                self.accumulate(*x, &dx);
                self.accumulate(*gain, &dgain);
                self.accumulate(*bias, &dbias);
            }
            Op::Concat { a, b, axis } => {
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let (outer, alen, inner) = axis_split(&sa, *axis);
                let blen = sb[*axis];
                let total = alen + blen;
                if self.needs(*a) {
                    let mut da = vec![0.0; outer * alen * inner];
                    for o in 0..outer {
                        let src = &grad[o * total * inner..];
                        da[o * alen * inner..(o + 1) * alen * inner]
                            .copy_from_slice(&src[..alen * inner]);
                    }
                    self.accumulate(*a, &da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; outer * blen * inner];
                    for o in 0..outer {
                        let src = &grad[o * total * inner..];
                        db[o * blen * inner..(o + 1) * blen * inner]
                            .copy_from_slice(&src[alen * inner..total * inner]);
                    }
                    self.accumulate(*b, &db);
                }
            }
            Op::Slice { x, axis, start } => {
                let sx = self.shape(*x).to_vec();
                let (outer, alen, inner) = axis_split(&sx, *axis);
                let len = grad.len() / (outer * inner);
                for o in 0..outer {
                    let dst_off = (o * alen + start) * inner;
                    let src_off = o * len * inner;
                    self.accumulate_at(*x, dst_off, &grad[src_off..src_off + len * inner]);
                }
            }
            Op::Transpose { x } => {
                let sx = self.shape(*x).to_vec();
                let (m, n) = (sx[0], sx[1]);
                let mut dx = vec![0.0; m * n];
                for i in 0..n {
                    for j in 0..m {
                        dx[j * n + i] = grad[i * m + j];
                    }
                }
                self.accumulate(*x, &dx);
            }
            Op::Scale { x, factor } => {
                let dx: Vec<f64> = grad.iter().map(|g| g * factor).collect();
                self.accumulate(*x, &dx);
            }
            Op::Sum { x } => {
                let dx = vec![grad[0]; self.nodes[x.0].tensor.numel()];
                self.accumulate(*x, &dx);
            }
            Op::Embedding { table, ids } => {
                let d = self.shape(*table)[1];
                for (row, &id) in ids.iter().enumerate() {
                    self.accumulate_at(*table, id * d, &grad[row * d..(row + 1) * d]);
                }
            }
            Op::BceMean { logits, targets } => {
                let n = targets.len() as f64;
                let dz: Vec<f64> = self
                    .value(*logits)
                    .iter()
                    .zip(targets)
                    .map(|(&z, &y)| grad[0] * (sigmoid(z) - y) / n)
                    .collect();
                self.accumulate(*logits, &dz);
            }
            Op::SoftmaxXent { logits, class } => {
                let z = self.value(*logits);
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = z.iter().map(|&v| libm::exp(v - max)).sum();
                let dz: Vec<f64> = z
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let p = libm::exp(v - max) / denom;
                        grad[0] * (p - if i == *class { 1.0 } else { 0.0 })
                    })
                    .collect();
                self.accumulate(*logits, &dz);
            }
        }
    }
}
