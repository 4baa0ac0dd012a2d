//! A small reverse-mode automatic differentiation tape over [`Matrix`] values.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards visits every node after
//! all of its consumers. Parameters live outside the tape in a [`ParamStore`]; the tape only
//! refers to them by index and [`Tape::backward`] returns one gradient per stored parameter.

use sha2::{Digest, Sha256};

use crate::tensor::{gemm_acc, Matrix};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Index of a parameter tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn zeros_like(&self) -> Vec<Matrix> {
        self.values
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    /// SHA-256 over names, shapes and little-endian contents, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, value) in self.names.iter().zip(&self.values) {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update(value.to_le_bytes());
        }
        h.finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Which entries of a score matrix may receive attention weight.
#[derive(Debug, Clone, PartialEq)]
pub enum AttnMask {
    None,
    /// Row `i` may see columns `0..=i`.
    Causal,
    /// Per-column visibility, shared by every row.
    Keys(Vec<bool>),
}

impl AttnMask {
    #[inline]
    fn visible(&self, row: usize, col: usize) -> bool {
        match self {
            AttnMask::None => true,
            AttnMask::Causal => col <= row,
            AttnMask::Keys(keys) => keys[col],
        }
    }
}

#[derive(Debug)]
enum Op {
    Const,
    Param(usize),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    Gather {
        table: Var,
        idx: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Matrix,
    },
    SumSq(Var),
    SumScalars(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Option<Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for a single forward pass.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(i)) => &self.params.values[*i],
            _ => unreachable!("node without value"),
        }
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data()[0]
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Const, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id.0),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let out = Matrix::matmul_t(self.value(a), ta, self.value(b), tb);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul { a, b, ta, tb }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Matrix::from_vec(va.rows(), va.cols(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Matrix::from_vec(va.rows(), va.cols(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut out = self.value(a).clone();
        let r = self.value(row);
        assert_eq!(r.shape(), (1, out.cols()), "bias shape mismatch");
        let bias = r.data().to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&bias) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::AddRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale(s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| {
            let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
            0.5 * x * (1.0 + t)
        });
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Row-wise layer normalization with learned `1 x c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let vx = self.value(x);
        let (rows, cols) = vx.shape();
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        assert_eq!(g.len(), cols);
        let mut xhat = Matrix::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(s);
            for c in 0..cols {
                let h = (row[c] - mean) * s;
                xhat.set(r, c, h);
                out.set(r, c, h * g[c] + b[c]);
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Row-wise softmax; masked entries get probability exactly zero. A row with no visible entry
    /// is all zeros.
    pub fn masked_softmax(&mut self, x: Var, mask: &AttnMask) -> Var {
        let vx = self.value(x);
        let (rows, cols) = vx.shape();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = vx.row(r);
            let mut max = f64::NEG_INFINITY;
            for (c, &v) in row.iter().enumerate() {
                if mask.visible(r, c) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            let orow = out.row_mut(r);
            for (c, &v) in row.iter().enumerate() {
                if mask.visible(r, c) {
                    let e = (v - max).exp();
                    orow[c] = e;
                    total += e;
                }
            }
            for o in orow.iter_mut() {
                *o /= total;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::Softmax(x), rg)
    }

    /// Selects rows `idx` of `table`.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros(idx.len(), t.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        let rg = self.rg(table);
        self.push(
            out,
            Op::Gather {
                table,
                idx: idx.to_vec(),
            },
            rg,
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let vx = self.value(x);
        assert!(start + width <= vx.cols(), "column slice out of range");
        let mut out = Matrix::zeros(vx.rows(), width);
        for r in 0..vx.rows() {
            out.row_mut(r)
                .copy_from_slice(&vx.row(r)[start..start + width]);
        }
        let rg = self.rg(x);
        self.push(out, Op::SliceCols { x, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let vp = self.value(p);
            assert_eq!(vp.rows(), rows, "concat row mismatch");
            let w = vp.cols();
            for r in 0..rows {
                out.row_mut(r)[offset..offset + w].copy_from_slice(vp.row(r));
            }
            offset += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Sum over rows with a target of `-log softmax(logits[row])[target]`, as a 1x1 node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let vl = self.value(logits);
        assert_eq!(vl.rows(), targets.len(), "one target per logits row");
        let mut probs = Matrix::zeros(vl.rows(), vl.cols());
        let mut total = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let row = vl.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + z.ln();
            total += log_z - row[t];
            for (p, v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
        }
        let rg = self.rg(logits);
        self.push(
            Matrix::from_vec(1, 1, vec![total]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Sum of squared entries, as a 1x1 node.
    pub fn sum_sq(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_sq();
        let rg = self.rg(x);
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::SumSq(x), rg)
    }

    pub fn sum_scalars(&mut self, xs: &[Var]) -> Var {
        let s = xs.iter().map(|&x| self.scalar(x)).sum();
        let rg = xs.iter().any(|&x| self.rg(x));
        self.push(
            Matrix::from_vec(1, 1, vec![s]),
            Op::SumScalars(xs.to_vec()),
            rg,
        )
    }

    /// Back-propagates from the 1x1 node `loss` and returns one gradient per parameter in the
    /// store (zeros for parameters not on the tape).
    pub fn backward(&self, loss: Var) -> Vec<Matrix> {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be scalar");
        let mut param_grads = self.params.zeros_like();
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Const => {}
                Op::Param(p) => param_grads[*p].add_assign(&g),
                Op::MatMul { a, b, ta, tb } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        let ga = self.grad_slot(&mut grads, *a);
                        match (ta, tb) {
                            (false, false) => gemm_acc(&g, false, vb, true, ga, 1.0),
                            (false, true) => gemm_acc(&g, false, vb, false, ga, 1.0),
                            (true, false) => gemm_acc(vb, false, &g, true, ga, 1.0),
                            (true, true) => gemm_acc(vb, true, &g, true, ga, 1.0),
                        }
                    }
                    if self.rg(*b) {
                        let gb = self.grad_slot(&mut grads, *b);
                        match (ta, tb) {
                            (false, false) => gemm_acc(va, true, &g, false, gb, 1.0),
                            (false, true) => gemm_acc(&g, true, va, false, gb, 1.0),
                            (true, false) => gemm_acc(va, false, &g, false, gb, 1.0),
                            (true, true) => gemm_acc(&g, true, va, true, gb, 1.0),
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, &g);
                    self.accumulate(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, &g);
                    if self.rg(*b) {
                        let gb = self.grad_slot(&mut grads, *b);
                        for (o, v) in gb.data_mut().iter_mut().zip(g.data()) {
                            *o -= v;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (src, other) in [(*a, *b), (*b, *a)] {
                        if self.rg(src) {
                            let vo = self.value(other).data().to_vec();
                            let gs = self.grad_slot(&mut grads, src);
                            for ((o, v), w) in gs.data_mut().iter_mut().zip(g.data()).zip(&vo) {
                                *o += v * w;
                            }
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    self.accumulate(&mut grads, *a, &g);
                    if self.rg(*row) {
                        let gr = self.grad_slot(&mut grads, *row);
                        for r in 0..g.rows() {
                            for (o, v) in gr.data_mut().iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::Scale(a, s) => {
                    if self.rg(*a) {
                        let ga = self.grad_slot(&mut grads, *a);
                        for (o, v) in ga.data_mut().iter_mut().zip(g.data()) {
                            *o += s * v;
                        }
                    }
                }
                Op::Gelu(a) => {
                    if self.rg(*a) {
                        let va = self.value(*a).data().to_vec();
                        let ga = self.grad_slot(&mut grads, *a);
                        for ((o, dy), &x) in ga.data_mut().iter_mut().zip(g.data()).zip(&va) {
                            let inner = GELU_C * (x + GELU_A * x * x * x);
                            let t = inner.tanh();
                            let d = 0.5 * (1.0 + t)
                                + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                            *o += dy * d;
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let (rows, cols) = xhat.shape();
                    let gv = self.value(*gain).data().to_vec();
                    if self.rg(*gain) {
                        let gg = self.grad_slot(&mut grads, *gain);
                        for r in 0..rows {
                            for c in 0..cols {
                                gg.data_mut()[c] += g.get(r, c) * xhat.get(r, c);
                            }
                        }
                    }
                    if self.rg(*bias) {
                        let gb = self.grad_slot(&mut grads, *bias);
                        for r in 0..rows {
                            for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                    }
                    if self.rg(*x) {
                        let gx = self.grad_slot(&mut grads, *x);
                        let n = cols as f64;
                        let mut dxhat = vec![0.0; cols];
                        for r in 0..rows {
                            let mut mean_d = 0.0;
                            let mut mean_dx = 0.0;
                            for c in 0..cols {
                                let d = g.get(r, c) * gv[c];
                                dxhat[c] = d;
                                mean_d += d;
                                mean_dx += d * xhat.get(r, c);
                            }
                            mean_d /= n;
                            mean_dx /= n;
                            let out = gx.row_mut(r);
                            for c in 0..cols {
                                out[c] += rstd[r] * (dxhat[c] - mean_d - xhat.get(r, c) * mean_dx);
                            }
                        }
                    }
                }
                Op::Softmax(x) => {
                    if self.rg(*x) {
                        let p = node.value.as_ref().expect("softmax value");
                        let gx = self.grad_slot(&mut grads, *x);
                        for r in 0..p.rows() {
                            let pr = p.row(r);
                            let gr = g.row(r);
                            let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for ((o, &pv), &gv) in gx.row_mut(r).iter_mut().zip(pr).zip(gr) {
                                *o += pv * (gv - dot);
                            }
                        }
                    }
                }
                Op::Gather { table, idx } => {
                    if self.rg(*table) {
                        let gt = self.grad_slot(&mut grads, *table);
                        for (r, &ix) in idx.iter().enumerate() {
                            for (o, v) in gt.row_mut(ix).iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    if self.rg(*x) {
                        let w = g.cols();
                        let gx = self.grad_slot(&mut grads, *x);
                        for r in 0..g.rows() {
                            for (o, v) in gx.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r))
                            {
                                *o += v;
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.rg(p) {
                            let gp = self.grad_slot(&mut grads, p);
                            for r in 0..g.rows() {
                                for (o, v) in
                                    gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w])
                                {
                                    *o += v;
                                }
                            }
                        }
                        offset += w;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    if self.rg(*logits) {
                        let scale = g.data()[0];
                        let gl = self.grad_slot(&mut grads, *logits);
                        for (r, t) in targets.iter().enumerate() {
                            let Some(t) = *t else { continue };
                            for (o, p) in gl.row_mut(r).iter_mut().zip(probs.row(r)) {
                                *o += scale * p;
                            }
                            gl.row_mut(r)[t] -= scale;
                        }
                    }
                }
                Op::SumSq(x) => {
                    if self.rg(*x) {
                        let scale = 2.0 * g.data()[0];
                        let vx = self.value(*x).data().to_vec();
                        let gx = self.grad_slot(&mut grads, *x);
                        for (o, v) in gx.data_mut().iter_mut().zip(&vx) {
                            *o += scale * v;
                        }
                    }
                }
                Op::SumScalars(xs) => {
                    for &x in xs {
                        self.accumulate(&mut grads, x, &g);
                    }
                }
            }
        }
        param_grads
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Matrix>], v: Var) -> &'g mut Matrix {
        let (r, c) = self.value(v).shape();
        grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c))
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: &Matrix) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }
}
