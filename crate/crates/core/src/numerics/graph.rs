//! Reverse-mode automatic differentiation over a per-pass tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so reverse index order is a valid topological order for
//! the backward sweep. Parameters enter through [`Graph::param`], which binds
//! each [`ParamId`] to exactly one leaf so shared weights accumulate gradients
//! from every use.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::conv::{self, ConvSpec, TransposedConvSpec};
use super::params::{Gradients, ParamId, ParamStore};
use super::spectral::Stft;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

type BackwardFn = Box<dyn Fn(&[f64], &[&Tensor], &Tensor) -> Vec<Option<Vec<f64>>> + Send>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            dropout_rng: None,
        }
    }

    /// Enables dropout sampling from the given stream. Without a stream,
    /// [`Graph::dropout`] is the identity.
    pub fn with_dropout_rng(mut self, rng: ChaCha8Rng) -> Self {
        self.dropout_rng = Some(rng);
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: &'static str, value: Tensor, parents: Vec<Var>, backward: BackwardFn) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let id = Var(self.nodes.len());
        self.nodes.push(Node {
            value,
            parents,
            backward: requires_grad.then_some(backward),
            requires_grad,
            grad: None,
        });
        Ok(id)
    }

    fn leaf_node(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let id = Var(self.nodes.len());
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
            grad: None,
        });
        id
    }

    /// A leaf that receives gradients.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.leaf_node(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf_node(value, false)
    }

    /// Binds a stored parameter; repeated calls return the same leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf_node(store.get(id).clone(), true);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Gradients of every bound parameter that received one.
    pub fn param_grads(&self) -> Gradients {
        let mut out = Gradients::default();
        for (&id, &v) in &self.params {
            if let Some(g) = &self.nodes[v.0].grad {
                out.insert(id, g.clone());
            }
        }
        out
    }

    /// Propagates d(loss)/d(node) to every gradient-requiring leaf. Leaf
    /// gradients accumulate across calls until [`Graph::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape_in(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.backward {
                None => {
                    let node = &mut self.nodes[i];
                    match &mut node.grad {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => node.grad = Some(g),
                    }
                }
                Some(f) => {
                    let inputs: Vec<&Tensor> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
                    let grads = f(&g, &inputs, &node.value);
                    for (p, pg) in node.parents.iter().zip(grads) {
                        let Some(pg) = pg else { continue };
                        if !self.nodes[p.0].requires_grad {
                            continue;
                        }
                        match &mut adj[p.0] {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            slot @ None => *slot = Some(pg),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape_in(
                op,
                format!("operands {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    // ---- elementwise -------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("add", out, vec![a, b], Box::new(|g, _, _| vec![Some(g.to_vec()), Some(g.to_vec())]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(
            "sub",
            out,
            vec![a, b],
            Box::new(|g, _, _| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(
            "mul",
            out,
            vec![a, b],
            Box::new(|g, ins, _| {
                let ga = g.iter().zip(ins[1].data()).map(|(g, y)| g * y).collect();
                let gb = g.iter().zip(ins[0].data()).map(|(g, x)| g * x).collect();
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    pub fn add_n(&mut self, vars: &[Var]) -> Result<Var> {
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = self.add(acc, v)?;
        }
        Ok(acc)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * s);
        self.push("scale", out, vec![a], Box::new(move |g, _, _| vec![Some(g.iter().map(|v| v * s).collect())]))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v + s);
        self.push("add_scalar", out, vec![a], Box::new(|g, _, _| vec![Some(g.to_vec())]))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| 1.0 - v);
        self.push("one_minus", out, vec![a], Box::new(|g, _, _| vec![Some(g.iter().map(|v| -v).collect())]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(
            "relu",
            out,
            vec![a],
            Box::new(|g, ins, _| {
                vec![Some(
                    g.iter()
                        .zip(ins[0].data())
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(
            "leaky_relu",
            out,
            vec![a],
            Box::new(move |g, ins, _| {
                vec![Some(
                    g.iter()
                        .zip(ins[0].data())
                        .map(|(g, &x)| if x > 0.0 { *g } else { slope * g })
                        .collect(),
                )]
            }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(
            "sigmoid",
            out,
            vec![a],
            Box::new(|g, _, y| vec![Some(g.iter().zip(y.data()).map(|(g, y)| g * y * (1.0 - y)).collect())]),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push(
            "tanh",
            out,
            vec![a],
            Box::new(|g, _, y| vec![Some(g.iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y)).collect())]),
        )
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        self.push(
            "exp",
            out,
            vec![a],
            Box::new(|g, _, y| vec![Some(g.iter().zip(y.data()).map(|(g, y)| g * y).collect())]),
        )
    }

    /// Natural log of `max(a, floor)`; the gradient is zero below the floor.
    pub fn ln_clamped(&mut self, a: Var, floor: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(floor).ln());
        self.push(
            "ln",
            out,
            vec![a],
            Box::new(move |g, ins, _| {
                vec![Some(
                    g.iter()
                        .zip(ins[0].data())
                        .map(|(g, &x)| if x > floor { g / x } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::abs);
        self.push(
            "abs",
            out,
            vec![a],
            Box::new(|g, ins, _| vec![Some(g.iter().zip(ins[0].data()).map(|(g, &x)| g * sign(x)).collect())]),
        )
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v * v);
        self.push(
            "square",
            out,
            vec![a],
            Box::new(|g, ins, _| vec![Some(g.iter().zip(ins[0].data()).map(|(g, &x)| 2.0 * g * x).collect())]),
        )
    }

    /// Inverted dropout. Identity when no dropout stream is attached or `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(a);
        };
        if p <= 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.nodes[a.0].value.len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let x = self.value(a);
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(
            "dropout",
            out,
            vec![a],
            Box::new(move |g, _, _| vec![Some(g.iter().zip(&mask).map(|(g, m)| g * m).collect())]),
        )
    }

    // ---- reductions and losses ---------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push("sum", out, vec![a], Box::new(|g, ins, _| vec![Some(vec![g[0]; ins[0].len()])]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let out = Tensor::scalar(self.value(a).sum() / n);
        self.push("mean", out, vec![a], Box::new(move |g, ins, _| vec![Some(vec![g[0] / n; ins[0].len()])]))
    }

    /// Frobenius norm. The subgradient at the origin is taken as zero.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let norm = self.value(a).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        self.push(
            "l2_norm",
            Tensor::scalar(norm),
            vec![a],
            Box::new(move |g, ins, _| {
                if norm == 0.0 {
                    return vec![Some(vec![0.0; ins[0].len()])];
                }
                vec![Some(ins[0].data().iter().map(|v| g[0] * v / norm).collect())]
            }),
        )
    }

    /// Mean squared error between equally shaped tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let d = self.sub(a, b)?;
        let s = self.square(d)?;
        self.mean(s)
    }

    /// Mean absolute error between equally shaped tensors.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("l1", a, b)?;
        let d = self.sub(a, b)?;
        let s = self.abs(d)?;
        self.mean(s)
    }

    /// Row-wise log-softmax of a 2-D tensor.
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = (x.rows(), x.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = x.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for j in 0..c {
                data[i * c + j] = row[j] - lse;
            }
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(
            "log_softmax",
            out,
            vec![a],
            Box::new(move |g, _, y| {
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let gs: f64 = g[i * c..(i + 1) * c].iter().sum();
                    for j in 0..c {
                        gx[i * c + j] = g[i * c + j] - y.data()[i * c + j].exp() * gs;
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Picks `a[i, idx[i]]` for every row into a vector.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = (x.rows(), x.cols());
        if idx.len() != r || idx.iter().any(|&j| j >= c) {
            return Err(Error::shape_in("pick", format!("{} indices into [{r}×{c}]", idx.len())));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| x.at2(i, j)).collect();
        let idx = idx.to_vec();
        self.push(
            "pick",
            Tensor::vector(data),
            vec![a],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; r * c];
                for (i, &j) in idx.iter().enumerate() {
                    gx[i * c + j] = g[i];
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Mean cross-entropy of row logits against class targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let ls = self.log_softmax_rows(logits)?;
        let picked = self.pick(ls, targets)?;
        let m = self.mean(picked)?;
        self.scale(m, -1.0)
    }

    // ---- linear algebra and layout -----------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rank() != 2 || y.rank() != 2 || x.cols() != y.rows() {
            return Err(Error::shape_in(
                "matmul",
                format!("inner dimension: {:?} x {:?}", x.shape(), y.shape()),
            ));
        }
        let (n, k, m) = (x.rows(), x.cols(), y.cols());
        let out = Tensor::new(vec![n, m], matmul_kernel(x.data(), y.data(), n, k, m))?;
        self.push(
            "matmul",
            out,
            vec![a, b],
            Box::new(move |g, ins, _| {
                let (x, y) = (ins[0].data(), ins[1].data());
                // dA = G Bᵀ, dB = Aᵀ G
                let mut ga = vec![0.0; n * k];
                for i in 0..n {
                    for j in 0..m {
                        let gv = g[i * m + j];
                        if gv == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            ga[i * k + p] += gv * y[p * m + j];
                        }
                    }
                }
                let mut gb = vec![0.0; k * m];
                for i in 0..n {
                    for p in 0..k {
                        let xv = x[i * k + p];
                        if xv == 0.0 {
                            continue;
                        }
                        for j in 0..m {
                            gb[p * m + j] += xv * g[i * m + j];
                        }
                    }
                }
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    /// Adds a length-`cols` bias to every row.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        let (r, c) = (x.rows(), x.cols());
        if b.len() != c {
            return Err(Error::shape_in("add_row_bias", format!("bias {} vs cols {c}", b.len())));
        }
        let mut data = x.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += b.data()[j];
            }
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(
            "add_row_bias",
            out,
            vec![a, bias],
            Box::new(move |g, _, _| {
                let mut gb = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        gb[j] += g[i * c + j];
                    }
                }
                vec![Some(g.to_vec()), Some(gb)]
            }),
        )
    }

    /// Multiplies every row by a per-row scalar held in a `[rows × 1]` tensor.
    pub fn mul_row_scalar(&mut self, a: Var, w: Var) -> Result<Var> {
        let (x, s) = (self.value(a), self.value(w));
        let (r, c) = (x.rows(), x.cols());
        if s.len() != r {
            return Err(Error::shape_in("mul_row_scalar", format!("{} scalars for {r} rows", s.len())));
        }
        let mut data = x.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] *= s.data()[i];
            }
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(
            "mul_row_scalar",
            out,
            vec![a, w],
            Box::new(move |g, ins, _| {
                let (x, s) = (ins[0].data(), ins[1].data());
                let mut gx = vec![0.0; r * c];
                let mut gs = vec![0.0; r];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = g[i * c + j] * s[i];
                        gs[i] += g[i * c + j] * x[i * c + j];
                    }
                }
                vec![Some(gx), Some(gs)]
            }),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rank() != 2 {
            return Err(Error::shape_in("transpose", format!("rank {} != 2", x.rank())));
        }
        let (r, c) = (x.rows(), x.cols());
        let out = x.transpose2();
        self.push(
            "transpose",
            out,
            vec![a],
            Box::new(move |g, _, _| {
                let gt = Tensor::new(vec![c, r], g.to_vec()).expect("shape").transpose2();
                vec![Some(gt.into_data())]
            }),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        self.push("reshape", out, vec![a], Box::new(|g, _, _| vec![Some(g.to_vec())]))
    }

    /// Columns `[start, start+len)` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = (x.rows(), x.cols());
        if start + len > c || len == 0 {
            return Err(Error::shape_in("slice_cols", format!("[{start}, {}) of {c} columns", start + len)));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&x.row(i)[start..start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        self.push(
            "slice_cols",
            out,
            vec![a],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    gx[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        if parts.iter().any(|&p| self.value(p).rows() != r) {
            return Err(Error::shape_in("concat_cols", "row counts differ"));
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![r, total], data)?;
        self.push(
            "concat_cols",
            out,
            parts.to_vec(),
            Box::new(move |g, _, _| {
                let mut offset = 0;
                widths
                    .iter()
                    .map(|&w| {
                        let mut gp = Vec::with_capacity(r * w);
                        for i in 0..r {
                            gp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        offset += w;
                        Some(gp)
                    })
                    .collect()
            }),
        )
    }

    /// Builds a `[indices.len() × cols]` tensor whose row `i` is row
    /// `indices[i]` of `a`, or zeros for `None`. Gradients of repeated rows sum.
    pub fn gather_rows(&mut self, a: Var, indices: &[Option<usize>]) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = (x.rows(), x.cols());
        if indices.is_empty() {
            return Err(Error::shape_in("gather_rows", "empty index list"));
        }
        if let Some(bad) = indices.iter().flatten().find(|&&i| i >= r) {
            return Err(Error::shape_in("gather_rows", format!("row {bad} out of {r}")));
        }
        let mut data = Vec::with_capacity(indices.len() * c);
        for idx in indices {
            match idx {
                Some(i) => data.extend_from_slice(x.row(*i)),
                None => data.extend(std::iter::repeat_n(0.0, c)),
            }
        }
        let out = Tensor::new(vec![indices.len(), c], data)?;
        let indices = indices.to_vec();
        self.push(
            "gather_rows",
            out,
            vec![a],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; r * c];
                for (o, idx) in indices.iter().enumerate() {
                    if let Some(i) = idx {
                        for j in 0..c {
                            gx[i * c + j] += g[o * c + j];
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    // ---- normalization and attention ---------------------------------------

    /// Normalizes every row to zero mean and unit variance, then applies a
    /// per-column gain and bias.
    pub fn layer_norm_rows(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = (x.rows(), x.cols());
        let (gm, bt) = (self.value(gain), self.value(bias));
        if gm.len() != c || bt.len() != c {
            return Err(Error::shape_in("layer_norm", format!("gain/bias {} / {} vs {c}", gm.len(), bt.len())));
        }
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = x.row(i);
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mu) * is;
                xhat[i * c + j] = h;
                data[i * c + j] = h * gm.data()[j] + bt.data()[j];
            }
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(
            "layer_norm",
            out,
            vec![a, gain, bias],
            Box::new(move |g, ins, _| {
                let gm = ins[1].data();
                let mut gx = vec![0.0; r * c];
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                for i in 0..r {
                    let mut sum_d = 0.0;
                    let mut sum_dh = 0.0;
                    for j in 0..c {
                        let k = i * c + j;
                        gg[j] += g[k] * xhat[k];
                        gb[j] += g[k];
                        let d = g[k] * gm[j];
                        sum_d += d;
                        sum_dh += d * xhat[k];
                    }
                    for j in 0..c {
                        let k = i * c + j;
                        let d = g[k] * gm[j];
                        gx[k] = inv_std[i] / c as f64 * (c as f64 * d - sum_d - xhat[k] * sum_dh);
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            }),
        )
    }

    /// Softmax over each row of a square score matrix restricted to columns
    /// `<= row`; masked entries are exactly zero.
    pub fn causal_softmax(&mut self, scores: Var) -> Result<Var> {
        let x = self.value(scores);
        let (t, c) = (x.rows(), x.cols());
        if t != c {
            return Err(Error::shape_in("causal_softmax", format!("scores must be square, got [{t}×{c}]")));
        }
        let mut data = vec![0.0; t * t];
        for i in 0..t {
            let row = &x.row(i)[..=i];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for j in 0..=i {
                data[i * t + j] = (row[j] - m).exp() / z;
            }
        }
        let out = Tensor::new(vec![t, t], data)?;
        self.push(
            "causal_softmax",
            out,
            vec![scores],
            Box::new(move |g, _, y| {
                let y = y.data();
                let mut gx = vec![0.0; t * t];
                for i in 0..t {
                    let dot: f64 = (0..=i).map(|j| g[i * t + j] * y[i * t + j]).sum();
                    for j in 0..=i {
                        gx[i * t + j] = y[i * t + j] * (g[i * t + j] - dot);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    // ---- convolution -------------------------------------------------------

    /// Convolution over a `[C_in × T]` input; see [`ConvSpec`].
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let out = conv::conv1d_forward(&spec, xv.data(), &shape, self.value(w).data(), self.value(b).data())?;
        let t_len = shape[1];
        let out = Tensor::new(vec![spec.out_channels, t_len], out)?;
        self.push(
            "conv1d",
            out,
            vec![x, w, b],
            Box::new(move |g, ins, _| {
                let (gx, gw, gb) = conv::conv1d_backward(&spec, ins[0].data(), t_len, ins[1].data(), g);
                vec![Some(gx), Some(gw), Some(gb)]
            }),
        )
    }

    /// Upsampling convolution over a `[C_in × T]` input producing
    /// `[C_out × stride·T]`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Var, spec: TransposedConvSpec) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let out = conv::conv_transpose1d_forward(&spec, xv.data(), &shape, self.value(w).data(), self.value(b).data())?;
        let t_len = shape[1];
        let out = Tensor::new(vec![spec.out_channels, t_len * spec.stride], out)?;
        self.push(
            "conv_transpose1d",
            out,
            vec![x, w, b],
            Box::new(move |g, ins, _| {
                let (gx, gw, gb) = conv::conv_transpose1d_backward(&spec, ins[0].data(), t_len, ins[1].data(), g);
                vec![Some(gx), Some(gw), Some(gb)]
            }),
        )
    }

    // ---- spectral ----------------------------------------------------------

    /// STFT magnitudes `[frames × bins]` of a 1-D signal (any shape, read flat).
    pub fn stft_magnitude(&mut self, x: Var, n_fft: usize, hop: usize) -> Result<Var> {
        let xv = self.value(x);
        let stft = Stft::new(xv.len(), n_fft, hop);
        let layout = stft.layout();
        let out = Tensor::new(vec![layout.frames, layout.bins()], stft.magnitudes(xv.data()))?;
        self.push(
            "stft_magnitude",
            out,
            vec![x],
            Box::new(move |g, ins, _| vec![Some(stft.magnitude_backward(ins[0].data(), g))]),
        )
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn matmul_kernel(x: &[f64], y: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let xv = x[i * k + p];
            if xv == 0.0 {
                continue;
            }
            let yrow = &y[p * m..(p + 1) * m];
            for (o, yv) in orow.iter_mut().zip(yrow) {
                *o += xv * yv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let l = g.sum(x).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let xx = g.mul(x, x).unwrap();
        let l = g.sum(xx).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let l = g.sum(x).unwrap();
        g.backward(l).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
        g.zero_grads();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1000.0]));
        assert!(matches!(g.exp(x), Err(Error::NonFinite("exp"))));
    }

    #[test]
    fn shared_param_binds_once() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::vector(vec![3.0]));
        let mut g = Graph::new();
        let a = g.param(&store, id);
        let b = g.param(&store, id);
        assert_eq!(a, b);
        let s = g.add(a, b).unwrap();
        let l = g.sum(s).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.param_grads().get(id).unwrap(), &[2.0]);
    }

    #[test]
    fn uniform_logits_cross_entropy() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 256]));
        let ce = g.cross_entropy(x, &[3, 200]).unwrap();
        assert!((g.value(ce).data()[0] - 256f64.ln()).abs() < 1e-12);
    }
}
