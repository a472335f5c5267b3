//! Reverse-mode computation tape.
//!
//! Every operation appends a node holding its forward value and enough saved
//! state to run its backward rule. `backward` walks the nodes in reverse
//! recording order and accumulates (never overwrites) gradients into every
//! input that requires them, so a value used twice receives both
//! contributions.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this module.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    fn inputs(&self) -> Vec<Var>;

    /// Accumulates input gradients given the output gradient.
    fn backward(&self, out_grad: &[f64], grads: &mut GradSink<'_>);
}

/// Mutable view of per-node gradient buffers handed to backward rules.
pub struct GradSink<'a> {
    grads: &'a mut [Option<Vec<f64>>],
    sizes: &'a [usize],
    needs: &'a [bool],
}

impl GradSink<'_> {
    /// Gradient buffer of `v`, or `None` when `v` does not require a gradient.
    pub fn get(&mut self, v: Var) -> Option<&mut [f64]> {
        if !self.needs[v.0] {
            return None;
        }
        let size = self.sizes[v.0];
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; size]))
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Embed {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
    Sum(Var),
    WeightedSum(Vec<(Var, f64)>),
    Custom(Box<dyn CustomOp>),
}

/// Ordered record of operations with their forward values.
#[derive(Default)]
pub struct Tape {
    values: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<f64>>>,
    needs: Vec<bool>,
    sizes: Vec<usize>,
    ops: Vec<Op>,
}

fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (shape[0], shape[1..].iter().product()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, needs: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.sizes.push(value.len());
        self.values.push(value);
        self.shapes.push(shape);
        self.grads.push(None);
        self.needs.push(needs);
        self.ops.push(op);
        Var(self.ops.len() - 1)
    }

    /// Records an externally implemented operation.
    pub fn push_custom(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Box<dyn CustomOp>) -> Var {
        let needs = op.inputs().iter().any(|v| self.needs[v.0]);
        self.push(shape, value, needs, Op::Custom(op))
    }

    /// Copies a tensor onto the tape as a leaf.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.values().to_vec(),
            t.requires_grad(),
            Op::Leaf,
        )
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::dim(format!(
                "constant of shape {:?} with {} values",
                shape,
                values.len()
            )));
        }
        Ok(self.push(shape, values, false, Op::Leaf))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.shapes[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Snapshot of a node as a tensor, gradient included when present.
    pub fn tensor(&self, v: Var) -> Tensor {
        let mut t = Tensor::new(self.shapes[v.0].clone(), self.values[v.0].clone())
            .expect("tape node shape is consistent")
            .with_requires_grad(self.needs[v.0]);
        if let Some(g) = &self.grads[v.0] {
            t.set_grad(g.clone()).expect("gradient length matches");
        }
        t
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(&self.shapes[a.0]);
        let (k2, n) = matrix_dims(&self.shapes[b.0]);
        if k != k2 || self.shapes[a.0].len() != 2 || self.shapes[b.0].len() != 2 {
            return Err(Error::dim(format!(
                "matmul of {:?} and {:?}",
                self.shapes[a.0], self.shapes[b.0]
            )));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, &self.values[a.0], false, &self.values[b.0], false, &mut out, false);
        let needs = self.needs[a.0] || self.needs[b.0];
        Ok(self.push(vec![m, n], out, needs, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shapes[a.0] != self.shapes[b.0] {
            return Err(Error::dim(format!(
                "add of {:?} and {:?}",
                self.shapes[a.0], self.shapes[b.0]
            )));
        }
        let out = self.values[a.0]
            .iter()
            .zip(&self.values[b.0])
            .map(|(x, y)| x + y)
            .collect();
        let needs = self.needs[a.0] || self.needs[b.0];
        Ok(self.push(self.shapes[a.0].clone(), out, needs, Op::Add(a, b)))
    }

    /// Adds a length-`n` row vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, n) = matrix_dims(&self.shapes[a.0]);
        if self.sizes[bias.0] != n {
            return Err(Error::dim(format!(
                "row bias {:?} for matrix {:?}",
                self.shapes[bias.0], self.shapes[a.0]
            )));
        }
        let mut out = self.values[a.0].clone();
        kernels::add_row_in_place(&mut out, &self.values[bias.0]);
        let needs = self.needs[a.0] || self.needs[bias.0];
        Ok(self.push(self.shapes[a.0].clone(), out, needs, Op::AddRow(a, bias)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shapes[a.0] != self.shapes[b.0] {
            return Err(Error::dim(format!(
                "elementwise mul of {:?} and {:?}",
                self.shapes[a.0], self.shapes[b.0]
            )));
        }
        let out = self.values[a.0]
            .iter()
            .zip(&self.values[b.0])
            .map(|(x, y)| x * y)
            .collect();
        let needs = self.needs[a.0] || self.needs[b.0];
        Ok(self.push(self.shapes[a.0].clone(), out, needs, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.values[a.0].iter().map(|x| x * c).collect();
        self.push(self.shapes[a.0].clone(), out, self.needs[a.0], Op::Scale(a, c))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.values[a.0].iter().map(|&x| kernels::gelu(x)).collect();
        self.push(self.shapes[a.0].clone(), out, self.needs[a.0], Op::Gelu(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = matrix_dims(&self.shapes[x.0]);
        if self.sizes[gain.0] != n || self.sizes[bias.0] != n {
            return Err(Error::dim(format!(
                "layer norm over {:?} with gain {:?} and bias {:?}",
                self.shapes[x.0], self.shapes[gain.0], self.shapes[bias.0]
            )));
        }
        let mut out = vec![0.0; m * n];
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        kernels::layer_norm_forward(
            &self.values[x.0],
            n,
            &self.values[gain.0],
            &self.values[bias.0],
            &mut out,
            &mut xhat,
            &mut inv_std,
        );
        let needs = self.needs[x.0] || self.needs[gain.0] || self.needs[bias.0];
        Ok(self.push(
            self.shapes[x.0].clone(),
            out,
            needs,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Gathers rows of `table` (`vocab×dim`) by id.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, dim) = matrix_dims(&self.shapes[table.0]);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::index(format!("embedding id {id} >= vocab {vocab}")));
            }
            out.extend_from_slice(&self.values[table.0][id * dim..(id + 1) * dim]);
        }
        let needs = self.needs[table.0];
        Ok(self.push(
            vec![ids.len(), dim],
            out,
            needs,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let (_, n) = matrix_dims(&self.shapes[first.0]);
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            let (m, n2) = matrix_dims(&self.shapes[p.0]);
            if n2 != n {
                return Err(Error::dim(format!(
                    "concat rows of width {n} and {n2}"
                )));
            }
            rows += m;
            out.extend_from_slice(&self.values[p.0]);
        }
        let needs = parts.iter().any(|p| self.needs[p.0]);
        Ok(self.push(vec![rows, n], out, needs, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let (m, n) = matrix_dims(&self.shapes[x.0]);
        if start + count > m {
            return Err(Error::dim(format!(
                "rows {start}..{} of a {m}-row matrix",
                start + count
            )));
        }
        let out = self.values[x.0][start * n..(start + count) * n].to_vec();
        let needs = self.needs[x.0];
        Ok(self.push(vec![count, n], out, needs, Op::SliceRows { x, start }))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (_, n) = matrix_dims(&self.shapes[x.0]);
        let mut out = self.values[x.0].clone();
        for row in out.chunks_exact_mut(n.max(1)) {
            kernels::softmax_in_place(row);
        }
        self.push(self.shapes[x.0].clone(), out, self.needs[x.0], Op::SoftmaxRows(x))
    }

    /// Mask-weighted mean negative log-likelihood over rows of `logits`.
    ///
    /// Rows whose weight is zero are never read, so they contribute nothing
    /// to the value or the gradient.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let (m, vocab) = matrix_dims(&self.shapes[logits.0]);
        if targets.len() != m || weights.len() != m {
            return Err(Error::dim(format!(
                "cross entropy over {m} rows with {} targets and {} weights",
                targets.len(),
                weights.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
            return Err(Error::index(format!("target id {bad} >= vocab {vocab}")));
        }
        let denom: f64 = weights.iter().filter(|&&w| w > 0.0).sum();
        let mut probs = vec![0.0; m * vocab];
        let mut total = 0.0;
        if denom > 0.0 {
            let lx = &self.values[logits.0];
            for i in 0..m {
                let w = weights[i];
                if w <= 0.0 {
                    continue;
                }
                let row = &lx[i * vocab..(i + 1) * vocab];
                let lse = kernels::log_sum_exp(row);
                total += w * (lse - row[targets[i]]);
                for (p, &l) in probs[i * vocab..(i + 1) * vocab].iter_mut().zip(row) {
                    *p = (l - lse).exp();
                }
            }
            total /= denom;
        }
        let needs = self.needs[logits.0];
        let norm: Vec<f64> = if denom > 0.0 {
            weights.iter().map(|&w| if w > 0.0 { w / denom } else { 0.0 }).collect()
        } else {
            vec![0.0; m]
        };
        Ok(self.push(
            vec![1],
            vec![total],
            needs,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: norm,
                probs,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.values[x.0].iter().sum();
        self.push(vec![1], vec![s], self.needs[x.0], Op::Sum(x))
    }

    /// `Σ cᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for &(v, c) in terms {
            if self.sizes[v.0] != 1 {
                return Err(Error::dim(format!(
                    "weighted sum term of shape {:?}",
                    self.shapes[v.0]
                )));
            }
            s += c * self.values[v.0][0];
        }
        let needs = terms.iter().any(|(v, _)| self.needs[v.0]);
        Ok(self.push(vec![1], vec![s], needs, Op::WeightedSum(terms.to_vec())))
    }

    /// Runs the backward pass from a scalar root.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.sizes[root.0] != 1 {
            return Err(Error::contract(format!(
                "backward from non-scalar node of shape {:?}",
                self.shapes[root.0]
            )));
        }
        if !self.needs[root.0] {
            return Ok(());
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.needs[i] {
                continue;
            }
            let Some(out_grad) = self.grads[i].take() else {
                continue;
            };
            self.backward_node(i, &out_grad);
            self.grads[i] = Some(out_grad);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: &[f64]) {
        let values = &self.values;
        let shapes = &self.shapes;
        let mut sink = GradSink {
            grads: &mut self.grads,
            sizes: &self.sizes,
            needs: &self.needs,
        };
        match &self.ops[i] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = matrix_dims(&shapes[a.0]);
                let (_, n) = matrix_dims(&shapes[b.0]);
                // a.grad += g·bᵀ ; b.grad += aᵀ·g
                if let Some(ga) = sink.get(*a) {
                    kernels::gemm(m, n, k, g, false, &values[b.0], true, ga, true);
                }
                if let Some(gb) = sink.get(*b) {
                    kernels::gemm(k, m, n, &values[a.0], true, g, false, gb, true);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = sink.get(v) {
                        axpy(gv, g, 1.0);
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(ga) = sink.get(*a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = sink.get(*bias) {
                    let n = gb.len();
                    for row in g.chunks_exact(n) {
                        axpy(gb, row, 1.0);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = sink.get(*a) {
                    for ((d, gi), y) in ga.iter_mut().zip(g).zip(&values[b.0]) {
                        *d += gi * y;
                    }
                }
                if let Some(gb) = sink.get(*b) {
                    for ((d, gi), x) in gb.iter_mut().zip(g).zip(&values[a.0]) {
                        *d += gi * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = sink.get(*a) {
                    axpy(ga, g, *c);
                }
            }
            Op::Gelu(a) => {
                if let Some(ga) = sink.get(*a) {
                    for ((d, gi), &x) in ga.iter_mut().zip(g).zip(&values[a.0]) {
                        *d += gi * kernels::gelu_grad(x);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = self.sizes[gain.0];
                let gw = &values[gain.0];
                if let Some(gg) = sink.get(*gain) {
                    for (grow, hrow) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for c in 0..n {
                            gg[c] += grow[c] * hrow[c];
                        }
                    }
                }
                if let Some(gb) = sink.get(*bias) {
                    for grow in g.chunks_exact(n) {
                        axpy(gb, grow, 1.0);
                    }
                }
                if let Some(gx) = sink.get(*x) {
                    let nf = n as f64;
                    for (r, (grow, hrow)) in g.chunks_exact(n).zip(xhat.chunks_exact(n)).enumerate() {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for c in 0..n {
                            let dh = grow[c] * gw[c];
                            mean_dh += dh;
                            mean_dh_h += dh * hrow[c];
                        }
                        mean_dh /= nf;
                        mean_dh_h /= nf;
                        let inv = inv_std[r];
                        let dst = &mut gx[r * n..(r + 1) * n];
                        for c in 0..n {
                            let dh = grow[c] * gw[c];
                            dst[c] += inv * (dh - mean_dh - hrow[c] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Embed { table, ids } => {
                if let Some(gt) = sink.get(*table) {
                    let (_, dim) = matrix_dims(&shapes[table.0]);
                    for (row, &id) in g.chunks_exact(dim).zip(ids) {
                        axpy(&mut gt[id * dim..(id + 1) * dim], row, 1.0);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = values[p.0].len();
                    if let Some(gp) = sink.get(*p) {
                        axpy(gp, &g[offset..offset + len], 1.0);
                    }
                    offset += len;
                }
            }
            Op::SliceRows { x, start } => {
                if let Some(gx) = sink.get(*x) {
                    let (_, n) = matrix_dims(&shapes[x.0]);
                    axpy(&mut gx[start * n..start * n + g.len()], g, 1.0);
                }
            }
            Op::SoftmaxRows(x) => {
                if let Some(gx) = sink.get(*x) {
                    let (_, n) = matrix_dims(&shapes[x.0]);
                    let y = &values[i];
                    for ((dst, yr), gr) in gx
                        .chunks_exact_mut(n)
                        .zip(y.chunks_exact(n))
                        .zip(g.chunks_exact(n))
                    {
                        let s = kernels::dot(yr, gr);
                        for c in 0..n {
                            dst[c] += yr[c] * (gr[c] - s);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                if let Some(gl) = sink.get(*logits) {
                    let vocab = matrix_dims(&shapes[logits.0]).1;
                    let scale = g[0];
                    for (r, (&w, &t)) in weights.iter().zip(targets).enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let dst = &mut gl[r * vocab..(r + 1) * vocab];
                        let p = &probs[r * vocab..(r + 1) * vocab];
                        let c = scale * w;
                        for (d, &pv) in dst.iter_mut().zip(p) {
                            *d += c * pv;
                        }
                        dst[t] -= c;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = sink.get(*x) {
                    let c = g[0];
                    for d in gx.iter_mut() {
                        *d += c;
                    }
                }
            }
            Op::WeightedSum(terms) => {
                for &(v, c) in terms {
                    if let Some(gv) = sink.get(v) {
                        gv[0] += c * g[0];
                    }
                }
            }
            Op::Custom(op) => op.backward(g, &mut sink),
        }
    }
}

fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i = tape.leaf(&Tensor::identity(2));
        let b = tape.leaf(&mat(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let c = tape.matmul(i, b).unwrap();
        assert_eq!(tape.value(c), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_row_by_column() {
        let mut tape = Tape::new();
        let a = tape.leaf(&mat(&[vec![1.0, 2.0]]));
        let b = tape.leaf(&mat(&[vec![3.0], vec![4.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &[11.0]);
        assert_eq!(tape.shape(c), &[1, 1]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::zeros(&[2, 3]));
        let b = tape.leaf(&Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(&mat(&[
            vec![0.0, 0.0],
            vec![1000.0, 1000.0],
            vec![0.0, 3f64.ln()],
        ]));
        let y = tape.softmax_rows(x);
        let v = tape.value(y);
        assert_eq!(&v[0..4], &[0.5, 0.5, 0.5, 0.5]);
        assert!((v[4] - 0.25).abs() < 1e-15);
        assert!((v[5] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_uniform_two_way() {
        let mut tape = Tape::new();
        let l = tape.leaf(&mat(&[vec![0.0, 0.0]]));
        let ce = tape.cross_entropy(l, &[0], &[1.0]).unwrap();
        assert!((tape.value(ce)[0] - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_fully_masked_is_zero_with_zero_grad() {
        let mut tape = Tape::new();
        let l = tape.leaf(&mat(&[vec![3.0, -1.0], vec![0.5, 2.0]]).with_requires_grad(true));
        let ce = tape.cross_entropy(l, &[0, 1], &[0.0, 0.0]).unwrap();
        assert_eq!(tape.value(ce)[0], 0.0);
        tape.backward(ce).unwrap();
        assert!(tape.grad(l).map_or(true, |g| g.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn cross_entropy_rejects_bad_target() {
        let mut tape = Tape::new();
        let l = tape.leaf(&mat(&[vec![0.0, 0.0]]));
        assert!(matches!(
            tape.cross_entropy(l, &[2], &[1.0]),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn reused_value_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap().with_requires_grad(true));
        let xx = tape.mul(x, x).unwrap();
        let s = tape.sum(xx);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(&[2]).with_requires_grad(true));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }
}
