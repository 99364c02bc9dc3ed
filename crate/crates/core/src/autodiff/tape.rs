//! Define-by-run reverse-mode tape.
//!
//! Every forward pass records onto a fresh [`Tape`]. Nodes are appended in
//! evaluation order, so the node vector is already topologically sorted and
//! [`Tape::backward`] is a single reverse sweep.

use super::tensor::{Parameter, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise single-input operations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Relu,
    /// Tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    Gelu,
    Exp,
    Log,
    Scale(f64),
}

/// Pointwise two-input operations. The second operand may broadcast when it
/// is a scalar or its shape is a trailing suffix of the first's; the first
/// operand may broadcast against the second in the same way.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Stabilizer added to the per-row variance in [`Tape::layernorm`].
pub const LAYERNORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf {
        param: Option<usize>,
    },
    MatMul(Var, Var),
    Transpose(Var),
    Unary(Var, Unary),
    Binary {
        a: Var,
        b: Var,
        kind: Binary,
    },
    Sum(Var),
    Mean(Var),
    SoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    SelectRow {
        src: Var,
        row: usize,
    },
    ConcatRows(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Recorded computation for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Result of a backward sweep: one optional gradient buffer per node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    bindings: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` requires grad.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Stores gradients into the parameters bound with [`Tape::param`].
    /// Parameters the loss never touched receive an all-zero gradient.
    pub fn write_into(&self, params: &mut [Parameter]) -> Result<()> {
        let mut bufs: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        for &(node, idx) in &self.bindings {
            let buf = bufs
                .get_mut(idx)
                .ok_or_else(|| Error::Index(format!("parameter index {idx} out of range")))?;
            if let Some(g) = self.grads[node].as_deref() {
                if g.len() != buf.len() {
                    return Err(Error::Dimension {
                        op: "write_into",
                        left: vec![buf.len()],
                        right: vec![g.len()],
                    });
                }
                for (b, x) in buf.iter_mut().zip(g) {
                    *b += x;
                }
            }
        }
        for (p, buf) in params.iter_mut().zip(bufs) {
            p.tensor.set_grad(buf)?;
        }
        Ok(())
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

/// True when `small` broadcasts against `big`: scalar, or a trailing suffix.
fn broadcasts(big: &[usize], small: &[usize]) -> bool {
    numel(small) == 1 || (small.len() <= big.len() && big.ends_with(small))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let node = &self.nodes[v.0];
        if node.value.len() != 1 {
            return Err(Error::contract(format!(
                "expected a scalar, found shape {:?}",
                node.shape
            )));
        }
        Ok(node.value[0])
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a copy of `t`; differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.values().to_vec(),
            t.requires_grad(),
            Op::Leaf { param: None },
        )
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, values)?;
        Ok(self.leaf(&t))
    }

    /// Records parameter `index` of `params`; its gradient is routed back by
    /// [`Gradients::write_into`].
    pub fn param(&mut self, params: &[Parameter], index: usize) -> Var {
        let p = &params[index];
        self.push(
            p.tensor.shape().to_vec(),
            p.values().to_vec(),
            true,
            Op::Leaf { param: Some(index) },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let ((m, k), (k2, n)) = match (as_matrix(&sa), as_matrix(&sb)) {
            (Some(x), Some(y)) if x.1 == y.0 => (x, y),
            _ => {
                return Err(Error::Dimension {
                    op: "matmul",
                    left: sa,
                    right: sb,
                })
            }
        };
        debug_assert_eq!(k, k2);
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                let brow = &bv[p * n..(p + 1) * n];
                for (o, y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, rg, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let (r, c) = as_matrix(&sa).ok_or(Error::Dimension {
            op: "transpose",
            left: sa.clone(),
            right: vec![],
        })?;
        let av = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![c, r], out, rg, Op::Transpose(a)))
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Result<Var> {
        let av = self.value(a);
        let out: Vec<f64> = match kind {
            Unary::Relu => av.iter().map(|&x| x.max(0.0)).collect(),
            Unary::Gelu => av
                .iter()
                .map(|&x| 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()))
                .collect(),
            Unary::Exp => av.iter().map(|x| x.exp()).collect(),
            Unary::Log => {
                if let Some(bad) = av.iter().find(|&&x| !(x > 0.0)) {
                    return Err(Error::Domain(format!("log of non-positive value {bad}")));
                }
                av.iter().map(|x| x.ln()).collect()
            }
            Unary::Scale(s) => av.iter().map(|x| x * s).collect(),
        };
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape, out, rg, Op::Unary(a, kind)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Relu)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Gelu)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, Unary::Scale(s))
    }

    pub fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = if sa == sb || broadcasts(&sa, &sb) {
            sa.clone()
        } else if broadcasts(&sb, &sa) {
            sb.clone()
        } else {
            return Err(Error::Dimension {
                op: "elementwise",
                left: sa,
                right: sb,
            });
        };
        let n = numel(&out_shape);
        let av = self.value(a);
        let bv = self.value(b);
        let (la, lb) = (av.len(), bv.len());
        let f = match kind {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
        };
        let out: Vec<f64> = (0..n).map(|i| f(av[i % la], bv[i % lb])).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out_shape, out, rg, Op::Binary { a, b, kind }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(Vec::new(), vec![s], rg, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(a);
        self.push(Vec::new(), vec![s], rg, Op::Mean(a))
    }

    /// Row-wise softmax of a matrix, max-shifted.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let (r, c) = as_matrix(&sa).ok_or(Error::Dimension {
            op: "softmax_rows",
            left: sa.clone(),
            right: vec![],
        })?;
        let av = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &av[i * c..(i + 1) * c];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, x) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (x - mx).exp();
                z += *o;
            }
            for o in &mut out[i * c..(i + 1) * c] {
                *o /= z;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(sa, out, rg, Op::SoftmaxRows(a)))
    }

    /// Mean negative log-likelihood of `labels` under row-softmax of `logits`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let sl = self.shape(logits).to_vec();
        let (batch, classes) = as_matrix(&sl).ok_or(Error::Dimension {
            op: "softmax_cross_entropy",
            left: sl.clone(),
            right: vec![labels.len()],
        })?;
        if batch == 0 || batch != labels.len() {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                left: sl,
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Index(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; batch * classes];
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = &lv[i * classes..(i + 1) * classes];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, x) in probs[i * classes..(i + 1) * classes].iter_mut().zip(row) {
                *p = (x - mx).exp();
                z += *p;
            }
            for p in &mut probs[i * classes..(i + 1) * classes] {
                *p /= z;
            }
            total += z.ln() + mx - row[y];
        }
        let loss = total / batch as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Vec::new(),
            vec![loss],
            rg,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Per-row normalization followed by `gain * xhat + bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let (rows, d) = as_matrix(&sx).ok_or(Error::Dimension {
            op: "layernorm",
            left: sx.clone(),
            right: vec![],
        })?;
        if d == 0 || self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(Error::Dimension {
                op: "layernorm",
                left: sx,
                right: self.shape(gain).to_vec(),
            });
        }
        let xv = self.value(x);
        let gv = self.value(gain);
        let bv = self.value(bias);
        let mut out = vec![0.0; rows * d];
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        for i in 0..rows {
            let row = &xv[i * d..(i + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYERNORM_EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..d {
                let h = (row[j] - mu) * inv;
                xhat[i * d + j] = h;
                out[i * d + j] = gv[j] * h + bv[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            sx,
            out,
            rg,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Rows `ids` of a `[n x d]` table, stacked into `[ids.len() x d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        let (n, d) = as_matrix(&st).ok_or(Error::Dimension {
            op: "gather_rows",
            left: st.clone(),
            right: vec![],
        })?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(Error::Index(format!("row {bad} out of range for {n} rows")));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            vec![ids.len(), d],
            out,
            rg,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn select_row(&mut self, src: Var, row: usize) -> Result<Var> {
        let ss = self.shape(src).to_vec();
        let (n, d) = as_matrix(&ss).ok_or(Error::Dimension {
            op: "select_row",
            left: ss.clone(),
            right: vec![],
        })?;
        if row >= n {
            return Err(Error::Index(format!("row {row} out of range for {n} rows")));
        }
        let out = self.value(src)[row * d..(row + 1) * d].to_vec();
        let rg = self.rg(src);
        Ok(self.push(vec![1, d], out, rg, Op::SelectRow { src, row }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows needs at least one input"))?;
        let d = match as_matrix(self.shape(*first)) {
            Some((_, d)) => d,
            None => {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    left: self.shape(*first).to_vec(),
                    right: vec![],
                })
            }
        };
        let mut rows = 0;
        let mut out = Vec::new();
        let mut rg = false;
        for &p in parts {
            match as_matrix(self.shape(p)) {
                Some((r, c)) if c == d => rows += r,
                _ => {
                    return Err(Error::Dimension {
                        op: "concat_rows",
                        left: vec![0, d],
                        right: self.shape(p).to_vec(),
                    })
                }
            }
            out.extend_from_slice(self.value(p));
            rg |= self.rg(p);
        }
        Ok(self.push(vec![rows, d], out, rg, Op::ConcatRows(parts.to_vec())))
    }

    /// Reverse sweep from a scalar `loss`. A tape may be swept only once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::state("backward already ran on this tape"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, found shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let bindings = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Leaf { param: Some(p) } => Some((i, p)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, bindings })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let n = nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(buf);
        };

        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (m, k) = as_matrix(&nodes[a.0].shape).unwrap();
                let n = nodes[b.0].shape[1];
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                // dA = G B^T
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bv[p * n + j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                });
                // dB = A^T G
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        for p in 0..k {
                            let x = av[i * k + p];
                            for j in 0..n {
                                gb[p * n + j] += x * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = as_matrix(&nodes[a.0].shape).unwrap();
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Unary(a, kind) => {
                let x = &nodes[a.0].value;
                let y = &node.value;
                acc(*a, &mut |ga| match kind {
                    Unary::Relu => {
                        for i in 0..ga.len() {
                            if x[i] > 0.0 {
                                ga[i] += g[i];
                            }
                        }
                    }
                    Unary::Gelu => {
                        for i in 0..ga.len() {
                            let xi = x[i];
                            let t = (GELU_K * (xi + GELU_C * xi * xi * xi)).tanh();
                            let dt = GELU_K * (1.0 + 3.0 * GELU_C * xi * xi);
                            let d = 0.5 * (1.0 + t) + 0.5 * xi * (1.0 - t * t) * dt;
                            ga[i] += g[i] * d;
                        }
                    }
                    Unary::Exp => {
                        for i in 0..ga.len() {
                            ga[i] += g[i] * y[i];
                        }
                    }
                    Unary::Log => {
                        for i in 0..ga.len() {
                            ga[i] += g[i] / x[i];
                        }
                    }
                    Unary::Scale(s) => {
                        for i in 0..ga.len() {
                            ga[i] += g[i] * s;
                        }
                    }
                });
            }
            Op::Binary { a, b, kind } => {
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                let (la, lb) = (av.len(), bv.len());
                let n = g.len();
                acc(*a, &mut |ga| {
                    for i in 0..n {
                        let d = match kind {
                            Binary::Add | Binary::Sub => g[i],
                            Binary::Mul => g[i] * bv[i % lb],
                        };
                        ga[i % la] += d;
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..n {
                        let d = match kind {
                            Binary::Add => g[i],
                            Binary::Sub => -g[i],
                            Binary::Mul => g[i] * av[i % la],
                        };
                        gb[i % lb] += d;
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| {
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }),
            Op::Mean(a) => acc(*a, &mut |ga| {
                let s = g[0] / ga.len() as f64;
                for x in ga.iter_mut() {
                    *x += s;
                }
            }),
            Op::SoftmaxRows(a) => {
                let (r, c) = as_matrix(&node.shape).unwrap();
                let y = &node.value;
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        let row = i * c..(i + 1) * c;
                        let dot: f64 = g[row.clone()]
                            .iter()
                            .zip(&y[row.clone()])
                            .map(|(p, q)| p * q)
                            .sum();
                        for j in row {
                            ga[j] += y[j] * (g[j] - dot);
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let batch = labels.len();
                let classes = probs.len() / batch;
                let s = g[0] / batch as f64;
                acc(*logits, &mut |gl| {
                    for (i, &y) in labels.iter().enumerate() {
                        for j in 0..classes {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            gl[i * classes + j] += s * (probs[i * classes + j] - onehot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (rows, d) = as_matrix(&node.shape).unwrap();
                let gv = &nodes[gain.0].value;
                acc(*gain, &mut |gg| {
                    for i in 0..rows {
                        for j in 0..d {
                            gg[j] += g[i * d + j] * xhat[i * d + j];
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for i in 0..rows {
                        for j in 0..d {
                            gb[j] += g[i * d + j];
                        }
                    }
                });
                acc(*x, &mut |gx| {
                    let df = d as f64;
                    for i in 0..rows {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..d {
                            let dh = g[i * d + j] * gv[j];
                            s1 += dh;
                            s2 += dh * xhat[i * d + j];
                        }
                        for j in 0..d {
                            let dh = g[i * d + j] * gv[j];
                            gx[i * d + j] +=
                                inv_std[i] / df * (df * dh - s1 - xhat[i * d + j] * s2);
                        }
                    }
                });
            }
            Op::GatherRows { table, ids } => {
                let d = node.shape[1];
                acc(*table, &mut |gt| {
                    for (r, &i) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[i * d + j] += g[r * d + j];
                        }
                    }
                });
            }
            Op::SelectRow { src, row } => {
                let d = node.shape[1];
                acc(*src, &mut |gs| {
                    for j in 0..d {
                        gs[row * d + j] += g[j];
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    let slice = &g[offset..offset + len];
                    acc(*p, &mut |gp| {
                        for (a, b) in gp.iter_mut().zip(slice) {
                            *a += b;
                        }
                    });
                    offset += len;
                }
            }
        }
    }
}
