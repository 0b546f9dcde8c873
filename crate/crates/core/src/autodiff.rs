//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! value; [`Tape::backward`] walks the nodes in reverse and accumulates
//! adjoints. Operations that do not fit the built-in set (the inverse wavelet
//! transform, the masked losses) plug in through [`Function`].

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// A differentiable operation with a caller-supplied forward value.
pub trait Function {
    /// Adjoints of every input given the adjoint of the output. `None` means
    /// the input receives no gradient from this node.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    /// Output row `i` is row `picks[i].1` of input `picks[i].0`.
    GatherRows(Vec<NodeId>, Vec<(usize, usize)>),
    /// Output element `i` is input element `map[i]`.
    Permute(NodeId, Vec<usize>),
    Custom(Vec<NodeId>, Box<dyn Function>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

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

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let v = va.matmul(vb);
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(Error::Shape(format!(
                "matmul_nt {:?} x {:?}ᵀ",
                va.shape(),
                vb.shape()
            )));
        }
        let v = va.matmul_nt(vb);
        Ok(self.push(v, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!("add {:?} + {:?}", va.shape(), vb.shape())));
        }
        let mut v = va.clone();
        v.add_assign(vb);
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(Error::Shape(format!(
                "add_row {:?} + {:?}",
                va.shape(),
                vr.shape()
            )));
        }
        let mut v = va.clone();
        let r = vr.data().to_vec();
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let mut v = self.value(a).clone();
        v.data_mut().iter_mut().for_each(|x| *x *= s);
        self.push(v, Op::Scale(a, s))
    }

    /// `x W + b` with `W: in x out` and `b: 1 x out`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for x in v.data_mut() {
            let u = SQRT_2_OVER_PI * (*x + GELU_C * *x * *x * *x);
            *x = 0.5 * *x * (1.0 + u.tanh());
        }
        self.push(v, Op::Gelu(a))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Per-row layer normalization with affine `gamma`, `beta` (`1 x cols`).
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let vx = self.value(x);
        let (n, d) = vx.shape();
        let (vg, vb) = (self.value(gamma), self.value(beta));
        if vg.shape() != (1, d) || vb.shape() != (1, d) {
            return Err(Error::Shape(format!(
                "layer_norm over {d} features with gamma {:?}, beta {:?}",
                vg.shape(),
                vb.shape()
            )));
        }
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = Tensor::zeros(n, d);
        for i in 0..n {
            let row = vx.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[i * d + j] = h;
                out.row_mut(i)[j] = h * vg.data()[j] + vb.data()[j];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let va = self.value(a);
        if start + len > va.cols() {
            return Err(Error::Shape(format!(
                "column slice {start}..{} of {} columns",
                start + len,
                va.cols()
            )));
        }
        let mut out = Tensor::zeros(va.rows(), len);
        for i in 0..va.rows() {
            out.row_mut(i).copy_from_slice(&va.row(i)[start..start + len]);
        }
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concat_cols row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let r = self.value(p).row(i);
                out.row_mut(i)[off..off + r.len()].copy_from_slice(r);
                off += r.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, sources: &[NodeId], picks: Vec<(usize, usize)>) -> Result<NodeId> {
        let cols = self.value(sources[0]).cols();
        if sources.iter().any(|&s| self.value(s).cols() != cols) {
            return Err(Error::Shape("gather_rows column counts differ".into()));
        }
        let mut out = Tensor::zeros(picks.len(), cols);
        for (i, &(s, r)) in picks.iter().enumerate() {
            let src = self.value(*sources.get(s).ok_or_else(|| {
                Error::Shape(format!("gather_rows source {s} out of range"))
            })?);
            if r >= src.rows() {
                return Err(Error::Shape(format!(
                    "gather_rows row {r} of {} rows",
                    src.rows()
                )));
            }
            out.row_mut(i).copy_from_slice(src.row(r));
        }
        Ok(self.push(out, Op::GatherRows(sources.to_vec(), picks)))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.gather_rows(&[a], (start..start + len).map(|r| (0, r)).collect())
    }

    /// Reorders elements into a `rows x cols` output; `map[i]` is the flat
    /// source index of output element `i`.
    pub fn permute(&mut self, a: NodeId, rows: usize, cols: usize, map: Vec<usize>) -> Result<NodeId> {
        let va = self.value(a);
        if map.len() != rows * cols || map.iter().any(|&m| m >= va.data().len()) {
            return Err(Error::Shape("permute map does not fit".into()));
        }
        let data = map.iter().map(|&m| va.data()[m]).collect();
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::Permute(a, map)))
    }

    pub fn custom(&mut self, inputs: Vec<NodeId>, value: Tensor, f: Box<dyn Function>) -> NodeId {
        self.push(value, Op::Custom(inputs, f))
    }

    /// Adjoints of every node with respect to the scalar `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_val = self.value(root);
        if root_val.shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar root, got {:?}",
                root_val.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = g.matmul_nt(vb);
                    let gb = va.matmul_tn(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulNt(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = g.matmul(vb);
                    let gb = g.matmul_tn(va);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (s, v) in gr.data_mut().iter_mut().zip(g.row(i)) {
                            *s += v;
                        }
                    }
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *row, gr);
                }
                Op::Scale(a, s) => {
                    let mut ga = g;
                    ga.data_mut().iter_mut().for_each(|x| *x *= s);
                    acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let va = self.value(*a);
                    let mut ga = g;
                    for (gv, &x) in ga.data_mut().iter_mut().zip(va.data()) {
                        let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
                        let t = u.tanh();
                        let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
                        *gv *= 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let p = &node.value;
                    let mut ga = Tensor::zeros(p.rows(), p.cols());
                    for i in 0..p.rows() {
                        let (pr, gr) = (p.row(i), g.row(i));
                        let dot: f64 = pr.iter().zip(gr).map(|(x, y)| x * y).sum();
                        for ((o, &pv), &gv) in ga.row_mut(i).iter_mut().zip(pr).zip(gr) {
                            *o = pv * (gv - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (n, d) = g.shape();
                    let vg = self.value(*gamma).data();
                    let mut gx = Tensor::zeros(n, d);
                    let mut gg = Tensor::zeros(1, d);
                    let mut gb = Tensor::zeros(1, d);
                    let mut dxhat = vec![0.0; d];
                    for i in 0..n {
                        let gr = g.row(i);
                        let xh = &xhat[i * d..(i + 1) * d];
                        let (mut s1, mut s2) = (0.0, 0.0);
                        for j in 0..d {
                            gg.data_mut()[j] += gr[j] * xh[j];
                            gb.data_mut()[j] += gr[j];
                            dxhat[j] = gr[j] * vg[j];
                            s1 += dxhat[j];
                            s2 += dxhat[j] * xh[j];
                        }
                        let k = inv_std[i] / d as f64;
                        for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
                            *o = k * (d as f64 * dxhat[j] - s1 - xh[j] * s2);
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gamma, gg);
                    acc(&mut grads, *beta, gb);
                }
                Op::SliceCols(a, start) => {
                    let va = self.value(*a);
                    let mut ga = Tensor::zeros(va.rows(), va.cols());
                    let len = g.cols();
                    for i in 0..g.rows() {
                        ga.row_mut(i)[*start..*start + len].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        let mut gp = Tensor::zeros(g.rows(), c);
                        for i in 0..g.rows() {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        off += c;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::GatherRows(sources, picks) => {
                    let mut gs: Vec<Tensor> = sources
                        .iter()
                        .map(|&s| {
                            let v = self.value(s);
                            Tensor::zeros(v.rows(), v.cols())
                        })
                        .collect();
                    for (i, &(s, r)) in picks.iter().enumerate() {
                        for (o, v) in gs[s].row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    for (&s, gsrc) in sources.iter().zip(gs) {
                        acc(&mut grads, s, gsrc);
                    }
                }
                Op::Permute(a, map) => {
                    let va = self.value(*a);
                    let mut ga = Tensor::zeros(va.rows(), va.cols());
                    for (i, &m) in map.iter().enumerate() {
                        ga.data_mut()[m] += g.data()[i];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Custom(inputs, f) => {
                    let vals: Vec<&Tensor> = inputs.iter().map(|&i| self.value(i)).collect();
                    let gin = f.backward(&vals, &node.value, &g);
                    for (&i, gi) in inputs.iter().zip(gin) {
                        if let Some(gi) = gi {
                            acc(&mut grads, i, gi);
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}
