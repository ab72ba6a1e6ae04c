//! Reverse-mode autodiff on a flat tape of array ops.
//!
//! Forward values are computed eagerly when an op is recorded; `backward`
//! walks the tape once in reverse accumulating vector-Jacobian products.
//! Tapes are throwaway: build one per forward pass, differentiate, drop it.

use super::array::{matmul, matmul_nt, matmul_tn, softmax_rows};
use super::{Array, NumError};
use serde::{Deserialize, Serialize};

/// Handle to a node on a [`Tape`]. Only valid for the tape that created it.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Handle to a parameter in a [`ParamStore`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named, ordered parameter set. Order is insertion order and is the
/// contract for optimizer state and checkpoints, so construction must be
/// deterministic.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamId {
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

    pub fn get(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array)> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (ParamId(i), self.names[i].as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a @ b^T`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `a + bias` broadcast across rows; bias is a vector of `a.cols()`.
    AddRowBias(Var, Var),
    Scale(Var, f64),
    /// `a + c` for a constant (no gradient into `c`); used for masks and
    /// positional encodings.
    AddConst(Var),
    /// `a ∘ c` elementwise for a constant; used for dropout masks.
    MulConst(Var, Array),
    LeakyRelu(Var, f64),
    SoftmaxRows(Var),
    /// Row-wise layer norm with learned gain/bias vectors.
    LayerNormRows { x: Var, gain: Var, bias: Var, eps: f64 },
    /// Select rows of a table by index; rows may repeat.
    EmbedRows { table: Var, ids: Vec<usize> },
    GatherRows { a: Var, idxs: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    CrossEntropy { logits: Var, targets: Vec<usize> },
    MseLoss { pred: Var, target: Var },
    MeanScalars(Vec<Var>),
}

struct Node {
    op: Op,
    value: Array,
}

/// Wengert list. Records ops eagerly and replays them in reverse for
/// gradients.
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(ParamId, Var)>,
}

/// Per-node gradients produced by [`Tape::backward`]. Nodes the loss does
/// not depend on have no entry.
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), bindings: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Array) -> Var {
        // -inf is legal (masked attention scores); NaN never is.
        debug_assert!(
            value.data().iter().all(|v| !v.is_nan()),
            "NaN forward value"
        );
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Record a constant/input leaf.
    pub fn input(&mut self, value: Array) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Bind a parameter as a leaf. Binding the same parameter twice returns
    /// the existing var so its gradient accumulates in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.bindings.iter().find(|(pid, _)| *pid == id) {
            return v;
        }
        let v = self.push(Op::Leaf, store.get(id).clone());
        self.bindings.push((id, v));
        v
    }

    /// Gradients for every bound parameter, in binding order. Parameters the
    /// loss does not reach get explicit zero gradients.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Array)> {
        self.bindings
            .iter()
            .map(|&(id, v)| {
                let g = grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Array::zeros(self.value(v).shape()));
                (id, g)
            })
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    /// `a @ b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMulNt(a, b), v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NumError::shape(
                "add",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let v = Array::new(va.shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NumError::shape(
                "sub",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let v = Array::new(va.shape().to_vec(), data)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var, NumError> {
        let (va, vb) = (self.value(a), self.value(bias));
        let cols = va.cols();
        if vb.shape() != [cols] {
            return Err(NumError::shape(
                "add_row_bias",
                format!("bias {:?} vs {} cols", vb.shape(), cols),
            ));
        }
        let rows = va.rows();
        let mut data = va.data().to_vec();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += vb.data()[c];
            }
        }
        let v = Array::new(va.shape().to_vec(), data)?;
        Ok(self.push(Op::AddRowBias(a, bias), v))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|x| x * k).collect::<Vec<_>>();
        let v = Array::new(va.shape().to_vec(), data).expect("same shape");
        self.push(Op::Scale(a, k), v)
    }

    /// Add a constant array (same shape). The constant may contain `-inf`
    /// for masking; no gradient flows into it.
    pub fn add_const(&mut self, a: Var, c: &Array) -> Result<Var, NumError> {
        let va = self.value(a);
        if va.shape() != c.shape() {
            return Err(NumError::shape(
                "add_const",
                format!("{:?} vs {:?}", va.shape(), c.shape()),
            ));
        }
        let data: Vec<f64> = va.data().iter().zip(c.data()).map(|(x, y)| x + y).collect();
        let v = Array::new(va.shape().to_vec(), data)?;
        Ok(self.push(Op::AddConst(a), v))
    }

    /// Elementwise multiply by a constant mask (dropout).
    pub fn mul_const(&mut self, a: Var, c: &Array) -> Result<Var, NumError> {
        let va = self.value(a);
        if va.shape() != c.shape() {
            return Err(NumError::shape(
                "mul_const",
                format!("{:?} vs {:?}", va.shape(), c.shape()),
            ));
        }
        let data = va.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let v = Array::new(va.shape().to_vec(), data)?;
        Ok(self.push(Op::MulConst(a, c.clone()), v))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect::<Vec<_>>();
        let v = Array::new(va.shape().to_vec(), data).expect("same shape");
        self.push(Op::LeakyRelu(a, slope), v)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumError> {
        let v = softmax_rows(self.value(a))?;
        Ok(self.push(Op::SoftmaxRows(a), v))
    }

    pub fn layer_norm_rows(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, NumError> {
        let vx = self.value(x);
        let cols = vx.cols();
        if self.value(gain).shape() != [cols] || self.value(bias).shape() != [cols] {
            return Err(NumError::shape(
                "layer_norm_rows",
                format!(
                    "gain {:?} / bias {:?} vs {} cols",
                    self.value(gain).shape(),
                    self.value(bias).shape(),
                    cols
                ),
            ));
        }
        let rows = vx.rows();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            for c in 0..cols {
                let xhat = (row[c] - mean) * rstd;
                data[r * cols + c] =
                    self.value(gain).data()[c] * xhat + self.value(bias).data()[c];
            }
        }
        let v = Array::new(vx.shape().to_vec(), data)?;
        Ok(self.push(Op::LayerNormRows { x, gain, bias, eps }, v))
    }

    /// Rows of `table` selected by `ids` (with repetition), stacked into a
    /// `[ids.len(), cols]` matrix. Gradient scatter-adds back into the table.
    pub fn embed_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumError> {
        let vt = self.value(table);
        let (rows, cols) = (vt.rows(), vt.cols());
        if ids.is_empty() {
            return Err(NumError::invalid("embed_rows", "no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(NumError::TargetOutOfRange { index: bad, classes: rows });
        }
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            data.extend_from_slice(vt.row(i));
        }
        let v = Array::new(vec![ids.len(), cols], data)?;
        Ok(self.push(Op::EmbedRows { table, ids: ids.to_vec() }, v))
    }

    pub fn gather_rows(&mut self, a: Var, idxs: &[usize]) -> Result<Var, NumError> {
        let va = self.value(a);
        let (rows, cols) = (va.rows(), va.cols());
        if idxs.is_empty() {
            return Err(NumError::invalid("gather_rows", "no indices"));
        }
        if let Some(&bad) = idxs.iter().find(|&&i| i >= rows) {
            return Err(NumError::TargetOutOfRange { index: bad, classes: rows });
        }
        let mut data = Vec::with_capacity(idxs.len() * cols);
        for &i in idxs {
            data.extend_from_slice(va.row(i));
        }
        let v = Array::new(vec![idxs.len(), cols], data)?;
        Ok(self.push(Op::GatherRows { a, idxs: idxs.to_vec() }, v))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        if parts.is_empty() {
            return Err(NumError::invalid("concat_rows", "no parts"));
        }
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let vp = self.value(p);
            if vp.cols() != cols {
                return Err(NumError::shape(
                    "concat_rows",
                    format!("{} cols vs {}", vp.cols(), cols),
                ));
            }
            rows += vp.rows();
            data.extend_from_slice(vp.data());
        }
        let v = Array::new(vec![rows, cols], data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), v))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        if parts.is_empty() {
            return Err(NumError::invalid("concat_cols", "no parts"));
        }
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(NumError::shape(
                    "concat_cols",
                    format!("{} rows vs {}", self.value(p).rows(), rows),
                ));
            }
        }
        let total_cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total_cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = Array::new(vec![rows, total_cols], data)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), v))
    }

    /// Mean negative log-likelihood over rows (scalar output).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NumError> {
        let v = super::array::cross_entropy(self.value(logits), targets)?;
        Ok(self.push(
            Op::CrossEntropy { logits, targets: targets.to_vec() },
            Array::scalar(v),
        ))
    }

    /// Mean squared error (scalar output). Gradients flow into both sides.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, NumError> {
        let v = super::array::mse(self.value(pred), self.value(target))?;
        Ok(self.push(Op::MseLoss { pred, target }, Array::scalar(v)))
    }

    pub fn mean_scalars(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        if parts.is_empty() {
            return Err(NumError::invalid("mean_scalars", "no parts"));
        }
        let mut total = 0.0;
        for &p in parts {
            total += self.value(p).scalar_value()?;
        }
        let v = Array::scalar(total / parts.len() as f64);
        Ok(self.push(Op::MeanScalars(parts.to_vec()), v))
    }

    /// Reverse sweep from a scalar loss. Returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        if !self.value(loss).is_scalar() {
            return Err(NumError::NotScalar {
                op: "backward",
                shape: self.value(loss).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.accumulate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(
        &self,
        i: usize,
        g: &Array,
        grads: &mut [Option<Array>],
    ) -> Result<(), NumError> {
        fn bump(grads: &mut [Option<Array>], v: Var, delta: Array) {
            match &mut grads[v.0] {
                Some(acc) => {
                    for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                        *a += d;
                    }
                }
                slot => *slot = Some(delta),
            }
        }

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                bump(grads, *a, matmul_nt(g, self.value(*b))?);
                bump(grads, *b, matmul_tn(self.value(*a), g)?);
            }
            Op::MatMulNt(a, b) => {
                bump(grads, *a, matmul(g, self.value(*b))?);
                bump(grads, *b, matmul_tn(g, self.value(*a))?);
            }
            Op::Add(a, b) => {
                bump(grads, *a, g.clone());
                bump(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                bump(grads, *a, g.clone());
                let neg = Array::new(
                    g.shape().to_vec(),
                    g.data().iter().map(|v| -v).collect(),
                )?;
                bump(grads, *b, neg);
            }
            Op::AddRowBias(a, bias) => {
                bump(grads, *a, g.clone());
                let cols = g.cols();
                let mut db = vec![0.0; cols];
                for r in 0..g.rows() {
                    for c in 0..cols {
                        db[c] += g.at(r, c);
                    }
                }
                bump(grads, *bias, Array::vector(db));
            }
            Op::Scale(a, k) => {
                let d = Array::new(
                    g.shape().to_vec(),
                    g.data().iter().map(|v| v * k).collect(),
                )?;
                bump(grads, *a, d);
            }
            Op::AddConst(a) => bump(grads, *a, g.clone()),
            Op::MulConst(a, c) => {
                let d = Array::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(c.data()).map(|(x, y)| x * y).collect(),
                )?;
                bump(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                let d = Array::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { gv * slope })
                        .collect(),
                )?;
                bump(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                // dX = y ∘ (dY - <dY, y>) per row.
                let y = &self.nodes[i].value;
                let (rows, cols) = (y.rows(), y.cols());
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        d[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                bump(grads, *a, Array::new(y.shape().to_vec(), d)?);
            }
            Op::LayerNormRows { x, gain, bias, eps } => {
                let vx = self.value(*x);
                let vgain = self.value(*gain);
                let (rows, cols) = (vx.rows(), vx.cols());
                let n = cols as f64;
                let mut dx = vec![0.0; rows * cols];
                let mut dgain = vec![0.0; cols];
                let mut dbias = vec![0.0; cols];
                for r in 0..rows {
                    let row = vx.row(r);
                    let gr = g.row(r);
                    let mean = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let rstd = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * rstd).collect();
                    let dxhat: Vec<f64> =
                        gr.iter().zip(vgain.data()).map(|(gv, w)| gv * w).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / n;
                    let mean_dxhat_xhat =
                        dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                    for c in 0..cols {
                        dgain[c] += gr[c] * xhat[c];
                        dbias[c] += gr[c];
                        dx[r * cols + c] =
                            rstd * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
                    }
                }
                bump(grads, *x, Array::new(vx.shape().to_vec(), dx)?);
                bump(grads, *gain, Array::vector(dgain));
                bump(grads, *bias, Array::vector(dbias));
            }
            Op::EmbedRows { table, ids } => {
                let vt = self.value(*table);
                let mut d = Array::zeros(vt.shape());
                let cols = vt.cols();
                for (r, &id) in ids.iter().enumerate() {
                    let grow = g.row(r);
                    let drow = &mut d.data_mut()[id * cols..(id + 1) * cols];
                    for c in 0..cols {
                        drow[c] += grow[c];
                    }
                }
                bump(grads, *table, d);
            }
            Op::GatherRows { a, idxs } => {
                let va = self.value(*a);
                let mut d = Array::zeros(va.shape());
                let cols = va.cols();
                for (r, &idx) in idxs.iter().enumerate() {
                    let grow = g.row(r);
                    let drow = &mut d.data_mut()[idx * cols..(idx + 1) * cols];
                    for c in 0..cols {
                        drow[c] += grow[c];
                    }
                }
                bump(grads, *a, d);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let vp = self.value(p);
                    let take = vp.rows() * vp.cols();
                    let d = Array::new(
                        vp.shape().to_vec(),
                        g.data()[offset..offset + take].to_vec(),
                    )?;
                    offset += take;
                    bump(grads, p, d);
                }
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut col_off = 0;
                for &p in parts {
                    let vp = self.value(p);
                    let pc = vp.cols();
                    let mut d = Vec::with_capacity(rows * pc);
                    for r in 0..rows {
                        let grow = g.row(r);
                        d.extend_from_slice(&grow[col_off..col_off + pc]);
                    }
                    col_off += pc;
                    bump(grads, p, Array::new(vp.shape().to_vec(), d)?);
                }
            }
            Op::CrossEntropy { logits, targets } => {
                // d logits = (softmax - onehot) * dL / rows
                let vl = self.value(*logits);
                let probs = softmax_rows(vl)?;
                let scale = g.scalar_value()? / vl.rows() as f64;
                let (rows, cols) = (vl.rows(), vl.cols());
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let one = if targets[r] == c { 1.0 } else { 0.0 };
                        d[r * cols + c] = (probs.at(r, c) - one) * scale;
                    }
                }
                bump(grads, *logits, Array::new(vl.shape().to_vec(), d)?);
            }
            Op::MseLoss { pred, target } => {
                let vp = self.value(*pred);
                let vt = self.value(*target);
                let scale = 2.0 * g.scalar_value()? / vp.len() as f64;
                let dp: Vec<f64> = vp
                    .data()
                    .iter()
                    .zip(vt.data())
                    .map(|(p, t)| (p - t) * scale)
                    .collect();
                let dt: Vec<f64> = dp.iter().map(|v| -v).collect();
                bump(grads, *pred, Array::new(vp.shape().to_vec(), dp)?);
                bump(grads, *target, Array::new(vt.shape().to_vec(), dt)?);
            }
            Op::MeanScalars(parts) => {
                let share = g.scalar_value()? / parts.len() as f64;
                for &p in parts {
                    bump(grads, p, Array::scalar(share));
                }
            }
        }
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(t: &mut Tape, rows: &[Vec<f64>]) -> Var {
        t.input(Array::from_rows(rows).unwrap())
    }

    #[test]
    fn matmul_gradients_match_hand_derivation() {
        // loss = sum(A @ B) via mse against zeros is messy; use a direct
        // check: loss = mean((A@B)^2 elements) has dA = 2/(n) (A@B) B^T.
        let mut t = Tape::new();
        let a = leaf(&mut t, &[vec![1.0, 2.0], vec![-0.5, 0.25]]);
        let b = leaf(&mut t, &[vec![0.3, -1.0], vec![2.0, 0.7]]);
        let c = t.matmul(a, b).unwrap();
        let zero = t.input(Array::zeros(&[2, 2]));
        let loss = t.mse(c, zero).unwrap();
        let grads = t.backward(loss).unwrap();

        let cv = matmul(t.value(a), t.value(b)).unwrap();
        let scale = 2.0 / 4.0;
        // dA = scale * C @ B^T
        let expect_da = matmul_nt(
            &Array::new(vec![2, 2], cv.data().iter().map(|v| v * scale).collect()).unwrap(),
            t.value(b),
        )
        .unwrap();
        assert!(grads.get(a).unwrap().max_abs_diff(&expect_da).unwrap() < 1e-12);
    }

    #[test]
    fn embed_rows_accumulates_repeated_ids() {
        let mut t = Tape::new();
        let table = leaf(&mut t, &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let picked = t.embed_rows(table, &[1, 1, 2]).unwrap();
        let target = t.input(Array::zeros(&[3, 2]));
        let loss = t.mse(picked, target).unwrap();
        let grads = t.backward(loss).unwrap();
        let dt = grads.get(table).unwrap();
        // Row 1 used twice -> gradient twice the single-use row 2 pattern.
        let scale = 2.0 / 6.0;
        assert!((dt.at(1, 1) - 2.0 * scale).abs() < 1e-12);
        assert!((dt.at(2, 0) - scale).abs() < 1e-12);
        assert_eq!(dt.at(0, 0), 0.0);
    }

    #[test]
    fn param_rebinding_returns_same_var() {
        let mut store = ParamStore::new();
        let id = store.add("w", Array::vector(vec![1.0, 2.0]));
        let mut t = Tape::new();
        let v1 = t.param(&store, id);
        let v2 = t.param(&store, id);
        assert_eq!(v1, v2);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn unreached_params_get_zero_grads() {
        let mut store = ParamStore::new();
        let used = store.add("used", Array::vector(vec![1.0, 2.0]));
        let unused = store.add("unused", Array::vector(vec![3.0]));
        let mut t = Tape::new();
        let u = t.param(&store, used);
        let _nu = t.param(&store, unused);
        let target = t.input(Array::vector(vec![0.0, 0.0]));
        let loss = t.mse(u, target).unwrap();
        let grads = t.backward(loss).unwrap();
        let pg = t.param_grads(&grads);
        assert_eq!(pg.len(), 2);
        assert_eq!(pg[1].1.data(), &[0.0]);
        assert!(pg[0].1.data()[0] != 0.0);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut t = Tape::new();
        let a = leaf(&mut t, &[vec![1.0, 2.0]]);
        assert!(matches!(t.backward(a), Err(NumError::NotScalar { .. })));
    }

    #[test]
    fn mse_sends_opposite_gradients_to_both_sides() {
        let mut t = Tape::new();
        let p = t.input(Array::vector(vec![1.0, 3.0]));
        let q = t.input(Array::vector(vec![0.0, 0.0]));
        let loss = t.mse(p, q).unwrap();
        let grads = t.backward(loss).unwrap();
        let dp = grads.get(p).unwrap();
        let dq = grads.get(q).unwrap();
        for (a, b) in dp.data().iter().zip(dq.data()) {
            assert_eq!(*a, -*b);
        }
        assert!((dp.data()[0] - 1.0).abs() < 1e-12); // 2*(1-0)/2
    }

    #[test]
    fn softmax_mask_blocks_gradient_to_masked_positions() {
        let mut t = Tape::new();
        let scores = leaf(&mut t, &[vec![0.5, 1.5, -0.5]]);
        let mask =
            Array::from_rows(&[vec![0.0, f64::NEG_INFINITY, 0.0]]).unwrap();
        let masked = t.add_const(scores, &mask).unwrap();
        let probs = t.softmax_rows(masked).unwrap();
        let target = leaf(&mut t, &[vec![1.0, 0.0, 0.0]]);
        let loss = t.mse(probs, target).unwrap();
        let grads = t.backward(loss).unwrap();
        let ds = grads.get(scores).unwrap();
        assert_eq!(ds.at(0, 1), 0.0);
        assert!(ds.at(0, 0) != 0.0);
    }

    #[test]
    fn cross_entropy_gradient_is_probs_minus_onehot() {
        let mut t = Tape::new();
        let logits = leaf(&mut t, &[vec![0.2, -0.1, 1.0]]);
        let loss = t.cross_entropy(logits, &[2]).unwrap();
        let grads = t.backward(loss).unwrap();
        let d = grads.get(logits).unwrap();
        let probs = softmax_rows(t.value(logits)).unwrap();
        for c in 0..3 {
            let one = if c == 2 { 1.0 } else { 0.0 };
            assert!((d.at(0, c) - (probs.at(0, c) - one)).abs() < 1e-12);
        }
    }
}
