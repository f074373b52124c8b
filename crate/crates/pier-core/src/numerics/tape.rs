//! Tape-based reverse-mode automatic differentiation over flat tensors.
//!
//! A [`Tape`] records every operation of a forward pass. [`Tape::backward`]
//! replays the records in reverse, accumulating gradients into every node
//! that transitively requires them. A tape lives for exactly one
//! forward/backward cycle; training creates a fresh tape per optimization
//! step, which is what keeps the recorded graph and the parameter state from
//! drifting apart.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::numerics::real::Real;
use crate::numerics::tensor::Tensor;
use crate::numerics::{cosine_similarity, cross_entropy, softmax};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op<F> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    /// k * x + c, elementwise; only the slope matters for backward.
    Affine {
        x: Var,
        k: F,
    },
    Matmul(Var, Var),
    /// a @ b^T where a is (m,k) and b is (n,k).
    MatmulNT(Var, Var),
    /// Matrix plus a row vector broadcast over rows.
    AddBias(Var, Var),
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        // cached per-row statistics from the forward pass
        xhat: Vec<F>,
        inv_sigma: Vec<F>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    SelectRows {
        x: Var,
        idx: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    MeanAll(Var),
    SumAll(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
    },
    CosineSim(Var, Var),
    /// Per-row dot product of two same-shape matrices, producing (m, 1).
    RowDot(Var, Var),
    /// Rows of `x` scaled by the matching entry of a column vector `c`.
    ScaleRows { x: Var, c: Var },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// The computation tape.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Mounts a tensor as a leaf. Gradient participation follows the
    /// tensor's `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor<F>) -> Var {
        let needs = t.requires_grad();
        self.push(t.clone(), Op::Leaf, needs)
    }

    /// Mounts a tensor as a leaf with an explicit gradient flag, ignoring
    /// the tensor's own.
    pub fn leaf_with(&mut self, t: &Tensor<F>, requires_grad: bool) -> Var {
        let mut copy = t.clone();
        copy = copy.with_requires_grad(requires_grad);
        self.push(copy, Op::Leaf, requires_grad)
    }

    /// Mounts a tensor as a constant leaf regardless of its flag.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Gradient of a node after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.nodes[v.0].value.grad()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    // ── Kernels ─────────────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> CoreResult<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(CoreError::shape(alloc::format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data: Vec<F> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> CoreResult<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(CoreError::shape(alloc::format!(
                "mul: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data: Vec<F> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x * *y)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), needs))
    }

    /// Elementwise `k * x + c`.
    pub fn affine(&mut self, x: Var, k: f64, c: f64) -> Var {
        let (k, c) = (F::from_f64(k), F::from_f64(c));
        let data: Vec<F> = self.value(x).data().iter().map(|v| k * *v + c).collect();
        let t = Tensor::from_vec(self.value(x).shape().to_vec(), data).expect("affine shape");
        let needs = self.needs(x);
        let _ = c;
        self.push(t, Op::Affine { x, k }, needs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> CoreResult<Var> {
        let (m, ka) = self.value(a).dims2()?;
        let (kb, n) = self.value(b).dims2()?;
        if ka != kb {
            return Err(CoreError::shape(alloc::format!(
                "matmul: ({m},{ka}) @ ({kb},{n})"
            )));
        }
        let mut out = vec![F::zero(); m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, ka, n);
        let t = Tensor::from_vec(vec![m, n], out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Matmul(a, b), needs))
    }

    /// `a @ b^T` for `a: (m,k)`, `b: (n,k)`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> CoreResult<Var> {
        let (m, ka) = self.value(a).dims2()?;
        let (n, kb) = self.value(b).dims2()?;
        if ka != kb {
            return Err(CoreError::shape(alloc::format!(
                "matmul_nt: ({m},{ka}) @ ({n},{kb})^T"
            )));
        }
        let mut out = vec![F::zero(); m * n];
        matmul_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, ka, n);
        let t = Tensor::from_vec(vec![m, n], out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::MatmulNT(a, b), needs))
    }

    /// Adds a row vector to every row of a matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> CoreResult<Var> {
        let (m, n) = self.value(a).dims2()?;
        if self.value(bias).numel() != n {
            return Err(CoreError::shape(alloc::format!(
                "add_bias: matrix ({m},{n}) with bias of {}",
                self.value(bias).numel()
            )));
        }
        let mut data = self.value(a).data().to_vec();
        for r in 0..m {
            for (j, b) in self.value(bias).data().iter().enumerate() {
                data[r * n + j] = data[r * n + j] + *b;
            }
        }
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(t, Op::AddBias(a, bias), needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data: Vec<F> = self
            .value(x)
            .data()
            .iter()
            .map(|v| v.max(F::zero()))
            .collect();
        let t = Tensor::from_vec(self.value(x).shape().to_vec(), data).expect("relu shape");
        let needs = self.needs(x);
        self.push(t, Op::Relu(x), needs)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let data: Vec<F> = self.value(x).data().iter().map(|v| gelu_fwd(*v)).collect();
        let t = Tensor::from_vec(self.value(x).shape().to_vec(), data).expect("gelu shape");
        let needs = self.needs(x);
        self.push(t, Op::Gelu(x), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let data: Vec<F> = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let t = Tensor::from_vec(self.value(x).shape().to_vec(), data).expect("tanh shape");
        let needs = self.needs(x);
        self.push(t, Op::Tanh(x), needs)
    }

    /// Row-wise softmax of a matrix (a vector is one row).
    pub fn softmax_rows(&mut self, x: Var) -> CoreResult<Var> {
        let (m, n) = self.value(x).dims2()?;
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            data.extend(softmax(self.value(x).row(r))?);
        }
        let _ = n;
        let t = Tensor::from_vec(self.value(x).shape().to_vec(), data)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::SoftmaxRows(x), needs))
    }

    /// Row-wise layer normalization with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> CoreResult<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(gamma).numel() != n || self.value(beta).numel() != n {
            return Err(CoreError::shape("layer_norm: gamma/beta width mismatch"));
        }
        let eps = F::from_f64(1e-5);
        let inv_n = F::one() / F::from_f64(n as f64);
        let mut xhat = vec![F::zero(); m * n];
        let mut inv_sigma = vec![F::zero(); m];
        let mut data = vec![F::zero(); m * n];
        for r in 0..m {
            let row = self.value(x).row(r);
            let mut mu = F::zero();
            for v in row {
                mu = mu + *v;
            }
            mu = mu * inv_n;
            let mut var = F::zero();
            for v in row {
                let d = *v - mu;
                var = var + d * d;
            }
            var = var * inv_n;
            let is = F::one() / (var + eps).sqrt();
            inv_sigma[r] = is;
            for j in 0..n {
                let xh = (row[j] - mu) * is;
                xhat[r * n + j] = xh;
                data[r * n + j] =
                    self.value(gamma).data()[j] * xh + self.value(beta).data()[j];
            }
        }
        let t = Tensor::from_vec(self.value(x).shape().to_vec(), data)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_sigma,
            },
            needs,
        ))
    }

    /// Gathers rows of an embedding table by token id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> CoreResult<Var> {
        let (vocab, d) = self.value(table).dims2()?;
        if ids.is_empty() {
            return Err(CoreError::invalid("embedding: empty id sequence"));
        }
        if let Some(bad) = ids.iter().find(|i| **i >= vocab) {
            return Err(CoreError::invalid(alloc::format!(
                "embedding: id {bad} out of vocab {vocab}"
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(self.value(table).row(i));
        }
        let t = Tensor::from_vec(vec![ids.len(), d], data)?;
        let needs = self.needs(table);
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Gathers the given rows of a matrix.
    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> CoreResult<Var> {
        let (m, d) = self.value(x).dims2()?;
        if idx.is_empty() {
            return Err(CoreError::invalid("select_rows: empty index list"));
        }
        if let Some(bad) = idx.iter().find(|i| **i >= m) {
            return Err(CoreError::invalid(alloc::format!(
                "select_rows: row {bad} out of {m}"
            )));
        }
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.value(x).row(i));
        }
        let t = Tensor::from_vec(vec![idx.len(), d], data)?;
        let needs = self.needs(x);
        Ok(self.push(
            t,
            Op::SelectRows {
                x,
                idx: idx.to_vec(),
            },
            needs,
        ))
    }

    /// Keeps columns `[start, start+len)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> CoreResult<Var> {
        let (m, n) = self.value(x).dims2()?;
        if start + len > n || len == 0 {
            return Err(CoreError::shape(alloc::format!(
                "slice_cols: [{start},{}) of width {n}",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&self.value(x).row(r)[start..start + len]);
        }
        let t = Tensor::from_vec(vec![m, len], data)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::SliceCols { x, start, len }, needs))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> CoreResult<Var> {
        if parts.is_empty() {
            return Err(CoreError::invalid("concat_cols: no parts"));
        }
        let (m, _) = self.value(parts[0]).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (mp, np) = self.value(*p).dims2()?;
            if mp != m {
                return Err(CoreError::shape("concat_cols: row count mismatch"));
            }
            widths.push(np);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let t = Tensor::from_vec(vec![m, total], data)?;
        let needs = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Stacks matrices with equal widths along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> CoreResult<Var> {
        if parts.is_empty() {
            return Err(CoreError::invalid("concat_rows: no parts"));
        }
        let (_, n) = self.value(parts[0]).dims2()?;
        let mut rows = 0usize;
        for p in parts {
            let (mp, np) = self.value(*p).dims2()?;
            if np != n {
                return Err(CoreError::shape("concat_rows: width mismatch"));
            }
            rows += mp;
        }
        let mut data = Vec::with_capacity(rows * n);
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let t = Tensor::from_vec(vec![rows, n], data)?;
        let needs = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), needs))
    }

    /// Mean over rows, producing a single row.
    pub fn mean_rows(&mut self, x: Var) -> CoreResult<Var> {
        let (m, n) = self.value(x).dims2()?;
        let inv_m = F::one() / F::from_f64(m as f64);
        let mut data = vec![F::zero(); n];
        for r in 0..m {
            for (j, v) in self.value(x).row(r).iter().enumerate() {
                data[j] = data[j] + *v;
            }
        }
        for v in data.iter_mut() {
            *v = *v * inv_m;
        }
        let t = Tensor::from_vec(vec![1, n], data)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::MeanRows(x), needs))
    }

    /// Mean of all elements, producing a scalar.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let mut s = F::zero();
        for v in self.value(x).data() {
            s = s + *v;
        }
        let t = Tensor::scalar(s / F::from_f64(n as f64));
        let needs = self.needs(x);
        self.push(t, Op::MeanAll(x), needs)
    }

    /// Sum of all elements, producing a scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut s = F::zero();
        for v in self.value(x).data() {
            s = s + *v;
        }
        let t = Tensor::scalar(s);
        let needs = self.needs(x);
        self.push(t, Op::SumAll(x), needs)
    }

    /// Mean cross-entropy of row logits against targets over unmasked rows.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
    ) -> CoreResult<Var> {
        let loss = cross_entropy(self.value(logits), targets, mask)?;
        let t = Tensor::scalar(loss);
        let needs = self.needs(logits);
        Ok(self.push(
            t,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            },
            needs,
        ))
    }

    /// Cosine similarity of two equal-size tensors viewed as flat vectors.
    pub fn cosine_sim(&mut self, u: Var, v: Var) -> CoreResult<Var> {
        let c = cosine_similarity(self.value(u).data(), self.value(v).data())?;
        let t = Tensor::scalar(c);
        let needs = self.needs(u) || self.needs(v);
        Ok(self.push(t, Op::CosineSim(u, v), needs))
    }

    /// Per-row dot products: (m,n) x (m,n) -> (m,1).
    pub fn row_dot(&mut self, a: Var, b: Var) -> CoreResult<Var> {
        let (m, n) = self.value(a).dims2()?;
        if self.value(b).shape() != self.value(a).shape() {
            return Err(CoreError::shape(alloc::format!(
                "row_dot: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let _ = n;
        let mut data = Vec::with_capacity(m);
        for r in 0..m {
            let mut s = F::zero();
            for (x, y) in self.value(a).row(r).iter().zip(self.value(b).row(r)) {
                s = s + *x * *y;
            }
            data.push(s);
        }
        let t = Tensor::from_vec(vec![m, 1], data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::RowDot(a, b), needs))
    }

    /// Scales row r of `x` by column vector entry `c[r]`.
    pub fn scale_rows(&mut self, x: Var, c: Var) -> CoreResult<Var> {
        let (m, n) = self.value(x).dims2()?;
        let (mc, one) = self.value(c).dims2()?;
        if mc != m || one != 1 {
            return Err(CoreError::shape(alloc::format!(
                "scale_rows: x ({m},{n}) with c {:?}",
                self.value(c).shape()
            )));
        }
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            let cv = self.value(c).data()[r];
            for v in self.value(x).row(r) {
                data.push(*v * cv);
            }
        }
        let t = Tensor::from_vec(vec![m, n], data)?;
        let needs = self.needs(x) || self.needs(c);
        Ok(self.push(t, Op::ScaleRows { x, c }, needs))
    }

    /// Mean of a list of scalars (used to average per-example losses).
    pub fn mean_of(&mut self, scalars: &[Var]) -> CoreResult<Var> {
        let stacked = self.concat_rows(scalars)?;
        Ok(self.mean_all(stacked))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Propagates gradients from a scalar loss to every node that requires
    /// them. Gradients accumulate, so leaves reached through several paths
    /// receive the sum.
    pub fn backward(&mut self, loss: Var) -> CoreResult<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(CoreError::invalid(alloc::format!(
                "backward: loss must be scalar, got {}",
                self.nodes[loss.0].value.describe()
            )));
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        for node in self.nodes.iter_mut() {
            if node.needs_grad {
                let n = node.value.numel();
                node.value.set_grad(Some(vec![F::zero(); n]));
            } else {
                node.value.set_grad(None);
            }
        }
        set_grad_elem(&mut self.nodes[loss.0], 0, F::one());

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &mut tail[0];
            step_backward(node, head);
        }
        Ok(())
    }
}

fn set_grad_elem<F: Real>(node: &mut Node<F>, i: usize, v: F) {
    let n = node.value.numel();
    let mut g = node.value.grad().map(|g| g.to_vec()).unwrap_or(vec![F::zero(); n]);
    g[i] = v;
    node.value.set_grad(Some(g));
}

/// Applies one node's backward rule, accumulating into parents (all of which
/// precede the node on the tape).
fn step_backward<F: Real>(node: &mut Node<F>, parents: &mut [Node<F>]) {
    let out_grad: Vec<F> = match node.value.grad() {
        Some(g) => g.to_vec(),
        None => return,
    };
    let out_val = node.value.clone();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(parents, *a, &out_grad, |g, _| g);
            accumulate(parents, *b, &out_grad, |g, _| g);
        }
        Op::Mul(a, b) => {
            let av = parents[a.0].value.data().to_vec();
            let bv = parents[b.0].value.data().to_vec();
            accumulate_idx(parents, *a, &out_grad, |g, i| g * bv[i]);
            accumulate_idx(parents, *b, &out_grad, |g, i| g * av[i]);
        }
        Op::Affine { x, k, .. } => {
            let k = *k;
            accumulate(parents, *x, &out_grad, |g, _| g * k);
        }
        Op::Matmul(a, b) => {
            let (m, k) = parents[a.0].value.dims2().expect("matmul dims");
            let (_, n) = parents[b.0].value.dims2().expect("matmul dims");
            if parents[a.0].needs_grad {
                let mut da = vec![F::zero(); m * k];
                // dA = dC @ B^T
                matmul_nt_acc(&out_grad, parents[b.0].value.data(), &mut da, m, n, k);
                add_into(&mut parents[a.0], &da);
            }
            if parents[b.0].needs_grad {
                let mut db = vec![F::zero(); k * n];
                // dB = A^T @ dC
                matmul_tn_acc(parents[a.0].value.data(), &out_grad, &mut db, m, k, n);
                add_into(&mut parents[b.0], &db);
            }
        }
        Op::MatmulNT(a, b) => {
            let (m, k) = parents[a.0].value.dims2().expect("matmul_nt dims");
            let (n, _) = parents[b.0].value.dims2().expect("matmul_nt dims");
            if parents[a.0].needs_grad {
                let mut da = vec![F::zero(); m * k];
                // dA = dC @ B
                matmul_acc(&out_grad, parents[b.0].value.data(), &mut da, m, n, k);
                add_into(&mut parents[a.0], &da);
            }
            if parents[b.0].needs_grad {
                let mut db = vec![F::zero(); n * k];
                // dB = dC^T @ A
                matmul_tn_acc(&out_grad, parents[a.0].value.data(), &mut db, m, n, k);
                add_into(&mut parents[b.0], &db);
            }
        }
        Op::AddBias(a, bias) => {
            let (m, n) = parents[a.0].value.dims2().expect("add_bias dims");
            accumulate(parents, *a, &out_grad, |g, _| g);
            if parents[bias.0].needs_grad {
                let mut db = vec![F::zero(); n];
                for r in 0..m {
                    for j in 0..n {
                        db[j] = db[j] + out_grad[r * n + j];
                    }
                }
                add_into(&mut parents[bias.0], &db);
            }
        }
        Op::Relu(x) => {
            let xv = parents[x.0].value.data().to_vec();
            accumulate_idx(parents, *x, &out_grad, |g, i| {
                if xv[i] > F::zero() {
                    g
                } else {
                    F::zero()
                }
            });
        }
        Op::Gelu(x) => {
            let xv = parents[x.0].value.data().to_vec();
            accumulate_idx(parents, *x, &out_grad, |g, i| g * gelu_bwd(xv[i]));
        }
        Op::Tanh(x) => {
            let yv = out_val.data().to_vec();
            accumulate_idx(parents, *x, &out_grad, |g, i| {
                g * (F::one() - yv[i] * yv[i])
            });
        }
        Op::SoftmaxRows(x) => {
            if parents[x.0].needs_grad {
                let (m, n) = out_val.dims2().expect("softmax dims");
                let mut dx = vec![F::zero(); m * n];
                for r in 0..m {
                    let y = out_val.row(r);
                    let g = &out_grad[r * n..(r + 1) * n];
                    let mut dot = F::zero();
                    for j in 0..n {
                        dot = dot + y[j] * g[j];
                    }
                    for j in 0..n {
                        dx[r * n + j] = y[j] * (g[j] - dot);
                    }
                }
                add_into(&mut parents[x.0], &dx);
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_sigma,
        } => {
            let (m, n) = parents[x.0].value.dims2().expect("layer_norm dims");
            let inv_n = F::one() / F::from_f64(n as f64);
            if parents[beta.0].needs_grad {
                let mut db = vec![F::zero(); n];
                for r in 0..m {
                    for j in 0..n {
                        db[j] = db[j] + out_grad[r * n + j];
                    }
                }
                add_into(&mut parents[beta.0], &db);
            }
            if parents[gamma.0].needs_grad {
                let mut dg = vec![F::zero(); n];
                for r in 0..m {
                    for j in 0..n {
                        dg[j] = dg[j] + out_grad[r * n + j] * xhat[r * n + j];
                    }
                }
                add_into(&mut parents[gamma.0], &dg);
            }
            if parents[x.0].needs_grad {
                let gamma_v = parents[gamma.0].value.data().to_vec();
                let mut dx = vec![F::zero(); m * n];
                for r in 0..m {
                    let mut mean_gy = F::zero();
                    let mut mean_gy_xhat = F::zero();
                    for j in 0..n {
                        let gy = out_grad[r * n + j] * gamma_v[j];
                        mean_gy = mean_gy + gy;
                        mean_gy_xhat = mean_gy_xhat + gy * xhat[r * n + j];
                    }
                    mean_gy = mean_gy * inv_n;
                    mean_gy_xhat = mean_gy_xhat * inv_n;
                    for j in 0..n {
                        let gy = out_grad[r * n + j] * gamma_v[j];
                        dx[r * n + j] =
                            inv_sigma[r] * (gy - mean_gy - xhat[r * n + j] * mean_gy_xhat);
                    }
                }
                add_into(&mut parents[x.0], &dx);
            }
        }
        Op::Embedding { table, ids } => {
            if parents[table.0].needs_grad {
                let (_, d) = parents[table.0].value.dims2().expect("embedding dims");
                let mut dt = vec![F::zero(); parents[table.0].value.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] = dt[id * d + j] + out_grad[r * d + j];
                    }
                }
                add_into(&mut parents[table.0], &dt);
            }
        }
        Op::SelectRows { x, idx } => {
            if parents[x.0].needs_grad {
                let (_, d) = parents[x.0].value.dims2().expect("select_rows dims");
                let mut dx = vec![F::zero(); parents[x.0].value.numel()];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        dx[i * d + j] = dx[i * d + j] + out_grad[r * d + j];
                    }
                }
                add_into(&mut parents[x.0], &dx);
            }
        }
        Op::SliceCols { x, start, len } => {
            if parents[x.0].needs_grad {
                let (m, n) = parents[x.0].value.dims2().expect("slice_cols dims");
                let mut dx = vec![F::zero(); m * n];
                for r in 0..m {
                    for j in 0..*len {
                        dx[r * n + start + j] = out_grad[r * len + j];
                    }
                }
                add_into(&mut parents[x.0], &dx);
            }
        }
        Op::ConcatCols(parts) => {
            let parts = parts.clone();
            let total: usize = parts
                .iter()
                .map(|p| parents[p.0].value.dims2().expect("concat dims").1)
                .sum();
            let m = out_val.dims2().expect("concat dims").0;
            let mut offset = 0usize;
            for p in &parts {
                let (_, w) = parents[p.0].value.dims2().expect("concat dims");
                if parents[p.0].needs_grad {
                    let mut dp = vec![F::zero(); m * w];
                    for r in 0..m {
                        for j in 0..w {
                            dp[r * w + j] = out_grad[r * total + offset + j];
                        }
                    }
                    add_into(&mut parents[p.0], &dp);
                }
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let parts = parts.clone();
            let mut offset = 0usize;
            for p in &parts {
                let numel = parents[p.0].value.numel();
                if parents[p.0].needs_grad {
                    let dp = out_grad[offset..offset + numel].to_vec();
                    add_into(&mut parents[p.0], &dp);
                }
                offset += numel;
            }
        }
        Op::MeanRows(x) => {
            if parents[x.0].needs_grad {
                let (m, n) = parents[x.0].value.dims2().expect("mean_rows dims");
                let inv_m = F::one() / F::from_f64(m as f64);
                let mut dx = vec![F::zero(); m * n];
                for r in 0..m {
                    for j in 0..n {
                        dx[r * n + j] = out_grad[j] * inv_m;
                    }
                }
                add_into(&mut parents[x.0], &dx);
            }
        }
        Op::MeanAll(x) => {
            if parents[x.0].needs_grad {
                let n = parents[x.0].value.numel();
                let g = out_grad[0] / F::from_f64(n as f64);
                let dx = vec![g; n];
                add_into(&mut parents[x.0], &dx);
            }
        }
        Op::SumAll(x) => {
            if parents[x.0].needs_grad {
                let n = parents[x.0].value.numel();
                let dx = vec![out_grad[0]; n];
                add_into(&mut parents[x.0], &dx);
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            mask,
        } => {
            if parents[logits.0].needs_grad {
                let (rows, vocab) = parents[logits.0].value.dims2().expect("ce dims");
                let active = mask.iter().filter(|m| **m).count();
                let scale = out_grad[0] / F::from_f64(active as f64);
                let mut dl = vec![F::zero(); rows * vocab];
                for r in 0..rows {
                    if !mask[r] {
                        continue;
                    }
                    let p = softmax(parents[logits.0].value.row(r)).expect("ce softmax");
                    for j in 0..vocab {
                        let onehot = if j == targets[r] { F::one() } else { F::zero() };
                        dl[r * vocab + j] = (p[j] - onehot) * scale;
                    }
                }
                add_into(&mut parents[logits.0], &dl);
            }
        }
        Op::RowDot(a, b) => {
            let (m, n) = parents[a.0].value.dims2().expect("row_dot dims");
            let av = parents[a.0].value.data().to_vec();
            let bv = parents[b.0].value.data().to_vec();
            if parents[a.0].needs_grad {
                let mut da = vec![F::zero(); m * n];
                for r in 0..m {
                    for j in 0..n {
                        da[r * n + j] = out_grad[r] * bv[r * n + j];
                    }
                }
                add_into(&mut parents[a.0], &da);
            }
            if parents[b.0].needs_grad {
                let mut db = vec![F::zero(); m * n];
                for r in 0..m {
                    for j in 0..n {
                        db[r * n + j] = out_grad[r] * av[r * n + j];
                    }
                }
                add_into(&mut parents[b.0], &db);
            }
        }
        Op::ScaleRows { x, c } => {
            let (m, n) = parents[x.0].value.dims2().expect("scale_rows dims");
            let xv = parents[x.0].value.data().to_vec();
            let cv = parents[c.0].value.data().to_vec();
            if parents[x.0].needs_grad {
                let mut dx = vec![F::zero(); m * n];
                for r in 0..m {
                    for j in 0..n {
                        dx[r * n + j] = out_grad[r * n + j] * cv[r];
                    }
                }
                add_into(&mut parents[x.0], &dx);
            }
            if parents[c.0].needs_grad {
                let mut dc = vec![F::zero(); m];
                for r in 0..m {
                    let mut s = F::zero();
                    for j in 0..n {
                        s = s + out_grad[r * n + j] * xv[r * n + j];
                    }
                    dc[r] = s;
                }
                add_into(&mut parents[c.0], &dc);
            }
        }
        Op::CosineSim(u, v) => {
            let uv = parents[u.0].value.data().to_vec();
            let vv = parents[v.0].value.data().to_vec();
            let mut dot = F::zero();
            let mut nu2 = F::zero();
            let mut nv2 = F::zero();
            for i in 0..uv.len() {
                dot = dot + uv[i] * vv[i];
                nu2 = nu2 + uv[i] * uv[i];
                nv2 = nv2 + vv[i] * vv[i];
            }
            let nu = nu2.sqrt();
            let nv = nv2.sqrt();
            let cos = dot / (nu * nv);
            let g = out_grad[0];
            if parents[u.0].needs_grad {
                let du: Vec<F> = (0..uv.len())
                    .map(|i| g * (vv[i] / (nu * nv) - cos * uv[i] / nu2))
                    .collect();
                add_into(&mut parents[u.0], &du);
            }
            if parents[v.0].needs_grad {
                let dv: Vec<F> = (0..vv.len())
                    .map(|i| g * (uv[i] / (nu * nv) - cos * vv[i] / nv2))
                    .collect();
                add_into(&mut parents[v.0], &dv);
            }
        }
    }
}

fn accumulate<F: Real>(parents: &mut [Node<F>], target: Var, g: &[F], f: impl Fn(F, usize) -> F) {
    accumulate_idx(parents, target, g, f)
}

fn accumulate_idx<F: Real>(
    parents: &mut [Node<F>],
    target: Var,
    g: &[F],
    f: impl Fn(F, usize) -> F,
) {
    if !parents[target.0].needs_grad {
        return;
    }
    let mapped: Vec<F> = g.iter().enumerate().map(|(i, v)| f(*v, i)).collect();
    add_into(&mut parents[target.0], &mapped);
}

fn add_into<F: Real>(node: &mut Node<F>, delta: &[F]) {
    let n = node.value.numel();
    let mut g = node
        .value
        .grad()
        .map(|g| g.to_vec())
        .unwrap_or(vec![F::zero(); n]);
    for (a, d) in g.iter_mut().zip(delta) {
        *a = *a + *d;
    }
    node.value.set_grad(Some(g));
}

// ── Raw matrix kernels ──────────────────────────────────────────────────

/// C += A @ B for A (m,k), B (k,n). Inner loop runs over contiguous rows of
/// B and C so it vectorizes.
pub(crate) fn matmul_acc<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] = crow[j] + av * brow[j];
            }
        }
    }
}

/// C += A @ B^T for A (m,k), B (n,k): row-by-row dot products.
pub(crate) fn matmul_nt_acc<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = c[i * n + j] + dot(arow, brow);
        }
    }
}

/// C += A^T @ B for A (m,k), B (m,n), C (k,n).
pub(crate) fn matmul_tn_acc<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] = crow[j] + av * brow[j];
            }
        }
    }
}

/// Dot product with four independent accumulators so the reduction can use
/// SIMD lanes without reassociating a single serial chain.
fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let n = a.len();
    let chunks = n / 4;
    let mut s0 = F::zero();
    let mut s1 = F::zero();
    let mut s2 = F::zero();
    let mut s3 = F::zero();
    for c in 0..chunks {
        let i = c * 4;
        s0 = s0 + a[i] * b[i];
        s1 = s1 + a[i + 1] * b[i + 1];
        s2 = s2 + a[i + 2] * b[i + 2];
        s3 = s3 + a[i + 3] * b[i + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for i in chunks * 4..n {
        s = s + a[i] * b[i];
    }
    s
}

fn gelu_fwd<F: Real>(x: F) -> F {
    // 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    let c = F::from_f64(0.7978845608028654);
    let k = F::from_f64(0.044715);
    let half = F::from_f64(0.5);
    let u = c * (x + k * x * x * x);
    half * x * (F::one() + u.tanh())
}

fn gelu_bwd<F: Real>(x: F) -> F {
    let c = F::from_f64(0.7978845608028654);
    let k = F::from_f64(0.044715);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let sech2 = F::one() - t * t;
    half * (F::one() + t) + half * x * sech2 * c * (F::one() + three * k * x * x)
}
