//! Tape-based reverse-mode differentiation over 2-D f64 matrices.
//!
//! Every node holds its forward value eagerly; [`Graph::backward`] walks the
//! tape in reverse and returns gradients for the parameters that were read.

use std::collections::HashMap;

use super::tensor::{ParamId, ParameterStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MaxRows {
        x: Var,
        argmax: Vec<usize>,
    },
    ScatterCols {
        x: Var,
        index: Vec<usize>,
    },
    BceWithLogits {
        logits: Var,
        labels: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    NllProbs {
        probs: Var,
        targets: Vec<usize>,
        floor: f64,
    },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

/// Parameter gradients produced by one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.grads.iter().map(|(p, g)| (*p, g.as_slice()))
    }
}

pub struct Graph<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Self { store, nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { rows, cols, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn row(&self, v: Var, r: usize) -> &[f64] {
        let n = &self.nodes[v.0];
        &n.value[r * n.cols..(r + 1) * n.cols]
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<Var> {
        if rows * cols != value.len() {
            return Err(shape_err(format!("input {rows}x{cols} with {} values", value.len())));
        }
        Ok(self.push(rows, cols, value, Op::Input))
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = self.store.get(id);
        let (rows, cols) = t.matrix_dims();
        let v = self.push(rows, cols, t.data.clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(shape_err(format!("matmul {m}x{k} · {k2}x{n}")));
        }
        let out = matmul(&self.nodes[a.0].value, &self.nodes[b.0].value, m, k, n);
        Ok(self.push(m, n, out, Op::MatMul(a, b)))
    }

    /// a · bᵀ
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(shape_err(format!("matmul_bt {m}x{k} · ({n}x{k2})ᵀ")));
        }
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &av[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(ar, &bv[j * k..(j + 1) * k]);
            }
        }
        Ok(self.push(m, n, out, Op::MatMulBt(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = transpose(&self.nodes[a.0].value, r, c);
        self.push(c, r, out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = zip(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        let (r, c) = self.shape(a);
        Ok(self.push(r, c, out, Op::Add(a, b)))
    }

    /// Adds a 1×c row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(shape_err(format!("add_row {r}x{c} + {:?}", self.shape(row))));
        }
        let rv = &self.nodes[row.0].value;
        let out = self.nodes[a.0].value.iter().enumerate().map(|(i, x)| x + rv[i % c]).collect();
        Ok(self.push(r, c, out, Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = zip(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        let (r, c) = self.shape(a);
        Ok(self.push(r, c, out, Op::Mul(a, b)))
    }

    /// Scales row i of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(col) != (r, 1) {
            return Err(shape_err(format!("mul_col {r}x{c} * {:?}", self.shape(col))));
        }
        let cv = &self.nodes[col.0].value;
        let out = self.nodes[a.0].value.iter().enumerate().map(|(i, x)| x * cv[i / c]).collect();
        Ok(self.push(r, c, out, Op::MulCol(a, col)))
    }

    /// `scale * a + shift`
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.nodes[a.0].value.iter().map(|x| scale * x + shift).collect();
        let (r, c) = self.shape(a);
        self.push(r, c, out, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.iter().map(|&x| gelu(x)).collect();
        let (r, c) = self.shape(a);
        self.push(r, c, out, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.iter().map(|&x| sigmoid(x)).collect();
        let (r, c) = self.shape(a);
        self.push(r, c, out, Op::Sigmoid(a))
    }

    /// Row-wise softmax of `a + mask`; mask entries are 0 or -inf and every
    /// row must keep at least one finite entry.
    pub fn softmax(&mut self, a: Var, mask: Option<&[f64]>) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(shape_err(format!("softmax mask {} for {r}x{c}", m.len())));
            }
        }
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row: Vec<f64> = (0..c).map(|j| av[i * c + j] + mask.map_or(0.0, |m| m[i * c + j])).collect();
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::Numeric(format!("softmax row {i} has no finite entry")));
            }
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                out[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                out[i * c + j] /= sum;
            }
        }
        Ok(self.push(r, c, out, Op::Softmax(a)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(gain) != (1, c) || self.shape(bias) != (1, c) {
            return Err(shape_err(format!("layer_norm over {c} columns")));
        }
        let xv = &self.nodes[x.0].value;
        let g = &self.nodes[gain.0].value;
        let b = &self.nodes[bias.0].value;
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        Ok(self.push(r, c, out, Op::LayerNorm { x, gain, bias, xhat, rstd }))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.shape(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(shape_err(format!("id {bad} out of range for table with {v} rows")));
        }
        let tv = &self.nodes[table.0].value;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        Ok(self.push(ids.len(), d, out, Op::Gather { table, ids: ids.to_vec() }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if start + len > c {
            return Err(shape_err(format!("slice_cols {start}+{len} of {c}")));
        }
        let xv = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xv[i * c + start..i * c + start + len]);
        }
        Ok(self.push(r, len, out, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r =
            parts.first().map(|&p| self.shape(p).0).ok_or_else(|| shape_err("concat of nothing".into()))?;
        if parts.iter().any(|&p| self.shape(p).0 != r) {
            return Err(shape_err("concat_cols row mismatch".into()));
        }
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.row(p, i));
            }
        }
        Ok(self.push(r, total, out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c =
            parts.first().map(|&p| self.shape(p).1).ok_or_else(|| shape_err("concat of nothing".into()))?;
        if parts.iter().any(|&p| self.shape(p).1 != c) {
            return Err(shape_err("concat_rows column mismatch".into()));
        }
        let rows: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut out = Vec::with_capacity(rows * c);
        for &p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        Ok(self.push(rows, c, out, Op::ConcatRows(parts.to_vec())))
    }

    /// Column-wise max over rows: 1×c. Ties go to the first row.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if r == 0 {
            return Err(shape_err("max over zero rows".into()));
        }
        let xv = &self.nodes[x.0].value;
        let mut argmax = vec![0; c];
        let mut out = xv[..c].to_vec();
        for i in 1..r {
            for j in 0..c {
                if xv[i * c + j] > out[j] {
                    out[j] = xv[i * c + j];
                    argmax[j] = i;
                }
            }
        }
        Ok(self.push(1, c, out, Op::MaxRows { x, argmax }))
    }

    /// out[r, index[k]] += x[r, k], producing `width` columns.
    pub fn scatter_cols(&mut self, x: Var, index: &[usize], width: usize) -> Result<Var> {
        let (r, k) = self.shape(x);
        if index.len() != k || index.iter().any(|&i| i >= width) {
            return Err(shape_err(format!("scatter_cols of {k} columns into {width}")));
        }
        let xv = &self.nodes[x.0].value;
        let mut out = vec![0.0; r * width];
        for i in 0..r {
            for (j, &t) in index.iter().enumerate() {
                out[i * width + t] += xv[i * k + j];
            }
        }
        Ok(self.push(r, width, out, Op::ScatterCols { x, index: index.to_vec() }))
    }

    /// Mean binary cross-entropy between logits and 0/1 labels (log-sum-exp
    /// stable form).
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let xv = &self.nodes[logits.0].value;
        if xv.len() != labels.len() || xv.is_empty() {
            return Err(shape_err(format!("bce: {} logits, {} labels", xv.len(), labels.len())));
        }
        if xv.iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric("NaN logit in bce_with_logits".into()));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Validation("bce labels must be 0 or 1".into()));
        }
        let n = xv.len() as f64;
        let loss = xv.iter().zip(labels).map(|(&x, &y)| bce_term(x, y)).sum::<f64>() / n;
        Ok(self.push(1, 1, vec![loss], Op::BceWithLogits { logits, labels: labels.to_vec() }))
    }

    /// Mean over rows of `-log softmax(row)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if targets.len() != r || r == 0 || targets.iter().any(|&t| t >= c) {
            return Err(shape_err(format!("cross_entropy {r}x{c} with {} targets", targets.len())));
        }
        let xv = &self.nodes[logits.0].value;
        if xv.iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric("NaN logit in cross_entropy".into()));
        }
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let lse = log_sum_exp(row);
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
            loss += lse - row[targets[i]];
        }
        loss /= r as f64;
        Ok(self.push(1, 1, vec![loss], Op::CrossEntropy { logits, targets: targets.to_vec(), probs }))
    }

    /// Mean over rows of `-ln max(p[target], floor)` for probability rows.
    pub fn nll_probs(&mut self, probs: Var, targets: &[usize], floor: f64) -> Result<Var> {
        let (r, c) = self.shape(probs);
        if targets.len() != r || r == 0 || targets.iter().any(|&t| t >= c) {
            return Err(shape_err(format!("nll_probs {r}x{c} with {} targets", targets.len())));
        }
        let pv = &self.nodes[probs.0].value;
        if pv.iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric("NaN probability in nll".into()));
        }
        let loss = (0..r).map(|i| -pv[i * c + targets[i]].max(floor).ln()).sum::<f64>() / r as f64;
        Ok(self.push(1, 1, vec![loss], Op::NllProbs { probs, targets: targets.to_vec(), floor }))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("{what} {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(shape_err(format!("backward from non-scalar {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param => {
                    grads[i] = Some(dy);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = node.cols;
                    let bt = transpose(&self.nodes[b.0].value, k, n);
                    let da = matmul(&dy, &bt, m, n, k);
                    add_into(&mut grads, *a, &da);
                    let at = transpose(&self.nodes[a.0].value, m, k);
                    let db = matmul(&at, &dy, k, m, n);
                    add_into(&mut grads, *b, &db);
                }
                Op::MatMulBt(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = node.cols;
                    let da = matmul(&dy, &self.nodes[b.0].value, m, n, k);
                    add_into(&mut grads, *a, &da);
                    let dyt = transpose(&dy, m, n);
                    let db = matmul(&dyt, &self.nodes[a.0].value, n, m, k);
                    add_into(&mut grads, *b, &db);
                }
                Op::Transpose(a) => {
                    let dx = transpose(&dy, node.rows, node.cols);
                    add_into(&mut grads, *a, &dx);
                }
                Op::Add(a, b) => {
                    add_into(&mut grads, *a, &dy);
                    add_into(&mut grads, *b, &dy);
                }
                Op::AddRow(a, row) => {
                    add_into(&mut grads, *a, &dy);
                    let c = node.cols;
                    let mut dr = vec![0.0; c];
                    for (k, g) in dy.iter().enumerate() {
                        dr[k % c] += g;
                    }
                    add_into(&mut grads, *row, &dr);
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    add_into(&mut grads, *a, &zip(&dy, bv, |g, y| g * y));
                    add_into(&mut grads, *b, &zip(&dy, av, |g, x| g * x));
                }
                Op::MulCol(a, col) => {
                    let c = node.cols;
                    let av = &self.nodes[a.0].value;
                    let cv = &self.nodes[col.0].value;
                    let da: Vec<f64> = dy.iter().enumerate().map(|(k, g)| g * cv[k / c]).collect();
                    add_into(&mut grads, *a, &da);
                    let mut dc = vec![0.0; node.rows];
                    for (k, g) in dy.iter().enumerate() {
                        dc[k / c] += g * av[k];
                    }
                    add_into(&mut grads, *col, &dc);
                }
                Op::Affine(a, s) => {
                    let dx: Vec<f64> = dy.iter().map(|g| g * s).collect();
                    add_into(&mut grads, *a, &dx);
                }
                Op::Gelu(a) => {
                    let xv = &self.nodes[a.0].value;
                    add_into(&mut grads, *a, &zip(&dy, xv, |g, x| g * gelu_grad(x)));
                }
                Op::Sigmoid(a) => {
                    add_into(&mut grads, *a, &zip(&dy, &node.value, |g, y| g * y * (1.0 - y)));
                }
                Op::Softmax(a) => {
                    let c = node.cols;
                    let y = &node.value;
                    let mut dx = vec![0.0; y.len()];
                    for r in 0..node.rows {
                        let s: f64 = (0..c).map(|j| dy[r * c + j] * y[r * c + j]).sum();
                        for j in 0..c {
                            dx[r * c + j] = y[r * c + j] * (dy[r * c + j] - s);
                        }
                    }
                    add_into(&mut grads, *a, &dx);
                }
                Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                    let c = node.cols;
                    let g = &self.nodes[gain.0].value;
                    let mut dx = vec![0.0; xhat.len()];
                    let mut dg = vec![0.0; c];
                    let mut db = vec![0.0; c];
                    for (r, &rs) in rstd.iter().enumerate().take(node.rows) {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..c {
                            let k = r * c + j;
                            let dh = dy[k] * g[j];
                            sum_dh += dh;
                            sum_dh_h += dh * xhat[k];
                            dg[j] += dy[k] * xhat[k];
                            db[j] += dy[k];
                        }
                        let n = c as f64;
                        for (j, &gj) in g.iter().enumerate().take(c) {
                            let k = r * c + j;
                            dx[k] = rs / n * (n * dy[k] * gj - sum_dh - xhat[k] * sum_dh_h);
                        }
                    }
                    add_into(&mut grads, *x, &dx);
                    add_into(&mut grads, *gain, &dg);
                    add_into(&mut grads, *bias, &db);
                }
                Op::Gather { table, ids } => {
                    let (v, d) = self.shape(*table);
                    let mut dt = vec![0.0; v * d];
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[id * d + j] += dy[r * d + j];
                        }
                    }
                    add_into(&mut grads, *table, &dt);
                }
                Op::SliceCols { x, start } => {
                    let (r, c) = self.shape(*x);
                    let len = node.cols;
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        dx[i * c + start..i * c + start + len].copy_from_slice(&dy[i * len..(i + 1) * len]);
                    }
                    add_into(&mut grads, *x, &dx);
                }
                Op::ConcatCols(parts) => {
                    let total = node.cols;
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let mut dp = vec![0.0; r * c];
                        for i in 0..r {
                            dp[i * c..(i + 1) * c]
                                .copy_from_slice(&dy[i * total + offset..i * total + offset + c]);
                        }
                        add_into(&mut grads, p, &dp);
                        offset += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.nodes[p.0].value.len();
                        add_into(&mut grads, p, &dy[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::MaxRows { x, argmax } => {
                    let (r, c) = self.shape(*x);
                    let mut dx = vec![0.0; r * c];
                    for (j, &i) in argmax.iter().enumerate() {
                        dx[i * c + j] = dy[j];
                    }
                    add_into(&mut grads, *x, &dx);
                }
                Op::ScatterCols { x, index } => {
                    let (r, k) = self.shape(*x);
                    let w = node.cols;
                    let mut dx = vec![0.0; r * k];
                    for i in 0..r {
                        for (j, &t) in index.iter().enumerate() {
                            dx[i * k + j] = dy[i * w + t];
                        }
                    }
                    add_into(&mut grads, *x, &dx);
                }
                Op::BceWithLogits { logits, labels } => {
                    let xv = &self.nodes[logits.0].value;
                    let n = xv.len() as f64;
                    let dx: Vec<f64> =
                        xv.iter().zip(labels).map(|(&x, &y)| dy[0] * (sigmoid(x) - y) / n).collect();
                    add_into(&mut grads, *logits, &dx);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let (r, c) = self.shape(*logits);
                    let mut dx = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        dx[i * c + t] -= 1.0;
                    }
                    let s = dy[0] / r as f64;
                    dx.iter_mut().for_each(|v| *v *= s);
                    add_into(&mut grads, *logits, &dx);
                }
                Op::NllProbs { probs, targets, floor } => {
                    let (r, c) = self.shape(*probs);
                    let pv = &self.nodes[probs.0].value;
                    let mut dx = vec![0.0; r * c];
                    for (i, &t) in targets.iter().enumerate() {
                        let p = pv[i * c + t];
                        if p > *floor {
                            dx[i * c + t] = -dy[0] / (p * r as f64);
                        }
                    }
                    add_into(&mut grads, *probs, &dx);
                }
            }
        }
        let mut out: Vec<(ParamId, Vec<f64>)> =
            self.params.iter().filter_map(|(&id, &v)| grads[v.0].take().map(|g| (id, g))).collect();
        out.sort_by_key(|(id, _)| *id);
        Ok(Gradients { grads: out })
    }
}

fn add_into(grads: &mut [Option<Vec<f64>>], v: Var, d: &[f64]) {
    match &mut grads[v.0] {
        Some(g) => g.iter_mut().zip(d).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(d.to_vec()),
    }
}

fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `-[y ln σ(x) + (1-y) ln(1-σ(x))]` without overflow.
pub fn bce_term(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
