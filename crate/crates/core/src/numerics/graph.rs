//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` simply walks it in reverse.

use std::collections::HashMap;

use super::error::{NumericsError, Result};
use super::kernels::{axis_split, gemm_nn, gemm_nt, gemm_tn, swap_axes_map};
use super::tensor::{ParamStore, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_rhs: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: f64,
    },
    Softmax {
        a: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu {
        a: Var,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        outer: usize,
        lens: Vec<usize>,
        inner: usize,
    },
    Slice {
        a: Var,
        outer: usize,
        in_len: usize,
        start: usize,
        inner: usize,
    },
    Gather {
        a: Var,
        map: Vec<usize>,
    },
    Reshape {
        a: Var,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        counted: Vec<bool>,
        probs: Vec<f64>,
        count: usize,
    },
    Sum {
        a: Var,
    },
    SelectRows {
        x: Var,
        pad: Var,
        keep: Vec<bool>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Single-threaded computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
    grads: Vec<Option<Vec<f64>>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn is_suffix(shape: &[usize], suffix: &[usize]) -> bool {
    suffix.len() <= shape.len() && shape[shape.len() - suffix.len()..] == *suffix
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite { op: name });
        }
        Ok(self.push(shape, data, op, requires_grad))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("node shapes are consistent")
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    /// Leaf that receives a gradient, readable through [`Graph::grad`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, true)
    }

    /// Binds a stored parameter. A parameter whose tensor does not require
    /// gradients is bound as a constant (frozen).
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| NumericsError::Contract(format!("unknown parameter `{name}`")))?;
        if let Some(&v) = self.params.get(&idx) {
            return Ok(v);
        }
        let t = &store.by_index(idx).tensor;
        let v = self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Param,
            t.requires_grad(),
        );
        self.params.insert(idx, v);
        Ok(v)
    }

    /// `a[..., m, k] · b[k, n]` (shared right operand) or
    /// `a[..., m, k] · b[..., k, n]` (matching batch dims).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || NumericsError::Shape {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(mismatch());
        }
        let batch_dims = &sa[..sa.len() - 2];
        let batch: usize = batch_dims.iter().product();
        let shared_rhs = sb.len() == 2;
        if !shared_rhs && sb[..sb.len() - 2] != *batch_dims {
            return Err(mismatch());
        }
        let mut out = vec![0.0; batch * m * n];
        {
            let ad = self.value(a);
            let bd = self.value(b);
            if shared_rhs {
                gemm_nn(batch * m, k, n, ad, bd, &mut out);
            } else {
                for t in 0..batch {
                    gemm_nn(
                        m,
                        k,
                        n,
                        &ad[t * m * k..(t + 1) * m * k],
                        &bd[t * k * n..(t + 1) * k * n],
                        &mut out[t * m * n..(t + 1) * m * n],
                    );
                }
            }
        }
        let mut shape = batch_dims.to_vec();
        shape.extend([m, n]);
        let rg = self.rg(a) || self.rg(b);
        self.push_checked(
            "matmul",
            shape,
            out,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_rhs,
            },
            rg,
        )
    }

    /// Elementwise sum; `b` may be a trailing-suffix shape of `a` (bias add).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if !is_suffix(&sa, &sb) {
            return Err(NumericsError::Shape {
                op: "add",
                lhs: sa,
                rhs: sb,
            });
        }
        let bd = self.value(b);
        let nb = bd.len();
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % nb])
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push_checked("add", sa, out, Op::Add { a, b }, rg)
    }

    /// Elementwise product; `b` may be a trailing-suffix shape of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if !is_suffix(&sa, &sb) {
            return Err(NumericsError::Shape {
                op: "mul",
                lhs: sa,
                rhs: sb,
            });
        }
        let bd = self.value(b);
        let nb = bd.len();
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x * bd[i % nb])
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push_checked("mul", sa, out, Op::Mul { a, b }, rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(a).iter().map(|&x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push_checked("scale", shape, out, Op::Scale { a, factor }, rg)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(NumericsError::Contract(format!(
                "softmax: axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let x = self.value(a);
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (x[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[at(j)] /= sum;
                }
            }
        }
        let rg = self.rg(a);
        self.push_checked(
            "softmax",
            shape,
            out,
            Op::Softmax {
                a,
                outer,
                len,
                inner,
            },
            rg,
        )
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta` of that width.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&0);
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(NumericsError::Shape {
                    op: "layer_norm",
                    lhs: shape,
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let xd = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let rows = xd.len() / d;
        let mut xhat = vec![0.0; xd.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push_checked(
            "layer_norm",
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push_checked("gelu", shape, out, Op::Gelu { a }, rg)
    }

    /// Row lookup into `table[V, E]`; output shape is `ids_shape ++ [E]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 || ids_shape.iter().product::<usize>() != ids.len() {
            return Err(NumericsError::Shape {
                op: "embedding_lookup",
                lhs: ts,
                rhs: ids_shape.to_vec(),
            });
        }
        let (vocab, dim) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(NumericsError::IndexOutOfRange {
                op: "embedding_lookup",
                index: bad,
                bound: vocab,
            });
        }
        let td = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&td[i * dim..(i + 1) * dim]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(dim);
        let rg = self.rg(table);
        self.push_checked(
            "embedding_lookup",
            shape,
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*inputs.first().ok_or_else(|| {
            NumericsError::Contract("concat: no inputs".into())
        })?)
        .to_vec();
        if axis >= first.len() {
            return Err(NumericsError::Contract(format!(
                "concat: axis {axis} out of range for shape {first:?}"
            )));
        }
        let mut lens = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(ax, (x, y))| ax == axis || x == y);
            if !compatible {
                return Err(NumericsError::Shape {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            lens.push(s[axis]);
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &len) in inputs.iter().zip(&lens) {
                let d = self.value(v);
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push_checked(
            "concat",
            shape,
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                outer,
                lens,
                inner,
            },
            rg,
        )
    }

    pub fn slice(&mut self, a: Var, axis: usize, range: std::ops::Range<usize>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || range.start >= range.end || range.end > shape[axis] {
            return Err(NumericsError::Contract(format!(
                "slice: range {range:?} on axis {axis} invalid for shape {shape:?}"
            )));
        }
        let (outer, in_len, inner) = axis_split(&shape, axis);
        let len = range.end - range.start;
        let d = self.value(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * in_len * inner;
            out.extend_from_slice(&d[base + range.start * inner..base + range.end * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(a);
        self.push_checked(
            "slice",
            out_shape,
            out,
            Op::Slice {
                a,
                outer,
                in_len,
                start: range.start,
                inner,
            },
            rg,
        )
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, a: Var, d0: usize, d1: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if d0 >= shape.len() || d1 >= shape.len() {
            return Err(NumericsError::Contract(format!(
                "transpose: axes ({d0}, {d1}) out of range for shape {shape:?}"
            )));
        }
        let (out_shape, map) = swap_axes_map(&shape, d0, d1);
        let d = self.value(a);
        let out: Vec<f64> = map.iter().map(|&i| d[i]).collect();
        let rg = self.rg(a);
        self.push_checked("transpose", out_shape, out, Op::Gather { a, map }, rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let cur = self.shape(a).to_vec();
        if shape.iter().product::<usize>() != cur.iter().product::<usize>() {
            return Err(NumericsError::Shape {
                op: "reshape",
                lhs: cur,
                rhs: shape.to_vec(),
            });
        }
        let data = self.value(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape.to_vec(), data, Op::Reshape { a }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push_checked("sum", vec![1], vec![s], Op::Sum { a }, rg)
    }

    /// Mean negative log-likelihood of `targets` under `logits[..., V]`.
    ///
    /// With `ignore_id = Some(p)`, positions whose target is `p` are left out of
    /// both the sum and the count.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore_id: Option<usize>,
    ) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let vocab = *shape.last().unwrap_or(&0);
        let rows = shape.iter().product::<usize>() / vocab.max(1);
        if rows != targets.len() {
            return Err(NumericsError::Shape {
                op: "cross_entropy",
                lhs: shape,
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
            return Err(NumericsError::IndexOutOfRange {
                op: "cross_entropy",
                index: bad,
                bound: vocab,
            });
        }
        let counted: Vec<bool> = targets.iter().map(|&t| Some(t) != ignore_id).collect();
        let count = counted.iter().filter(|&&c| c).count();
        if count == 0 {
            return Err(NumericsError::DegenerateBatch);
        }
        let x = self.value(logits);
        let mut probs = vec![0.0; x.len()];
        let mut total = 0.0;
        for r in 0..rows {
            let row = &x[r * vocab..(r + 1) * vocab];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[r * vocab + j] = e;
                sum += e;
            }
            for p in &mut probs[r * vocab..(r + 1) * vocab] {
                *p /= sum;
            }
            if counted[r] {
                total += max + sum.ln() - row[targets[r]];
            }
        }
        let loss = total / count as f64;
        let rg = self.rg(logits);
        self.push_checked(
            "cross_entropy",
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                counted,
                probs,
                count,
            },
            rg,
        )
    }

    /// Row-wise select over the last axis: row `i` of the output is row `i` of
    /// `x` where `keep[i]`, otherwise a copy of `pad`.
    pub fn select_rows(&mut self, x: Var, pad: Var, keep: &[bool]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let dim = *shape.last().unwrap_or(&0);
        if self.shape(pad) != [dim] || shape.iter().product::<usize>() != keep.len() * dim {
            return Err(NumericsError::Shape {
                op: "select_rows",
                lhs: shape,
                rhs: self.shape(pad).to_vec(),
            });
        }
        let (xd, pd) = (self.value(x), self.value(pad));
        let mut out = Vec::with_capacity(xd.len());
        for (r, &k) in keep.iter().enumerate() {
            if k {
                out.extend_from_slice(&xd[r * dim..(r + 1) * dim]);
            } else {
                out.extend_from_slice(pd);
            }
        }
        let rg = self.rg(x) || self.rg(pad);
        self.push_checked(
            "select_rows",
            shape,
            out,
            Op::SelectRows {
                x,
                pad,
                keep: keep.to_vec(),
            },
            rg,
        )
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn acc<'a>(
        grads: &'a mut [Option<Vec<f64>>],
        nodes: &[Node],
        v: Var,
    ) -> Option<&'a mut Vec<f64>> {
        if !nodes[v.0].requires_grad {
            return None;
        }
        let n = nodes[v.0].data.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    /// Computes d`loss`/d`node` for every node that requires gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward: root must be scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(vec![1.0]);
        let nodes = &self.nodes;
        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf | Op::Param => {}
                &Op::MatMul {
                    a,
                    b,
                    batch,
                    m,
                    k,
                    n,
                    shared_rhs,
                } => {
                    let (ad, bd) = (&nodes[a.0].data, &nodes[b.0].data);
                    if let Some(ga) = Self::acc(&mut grads, nodes, a) {
                        if shared_rhs {
                            gemm_nt(batch * m, n, k, &gout, bd, ga);
                        } else {
                            for t in 0..batch {
                                gemm_nt(
                                    m,
                                    n,
                                    k,
                                    &gout[t * m * n..(t + 1) * m * n],
                                    &bd[t * k * n..(t + 1) * k * n],
                                    &mut ga[t * m * k..(t + 1) * m * k],
                                );
                            }
                        }
                    }
                    if let Some(gb) = Self::acc(&mut grads, nodes, b) {
                        if shared_rhs {
                            gemm_tn(batch * m, k, n, ad, &gout, gb);
                        } else {
                            for t in 0..batch {
                                gemm_tn(
                                    m,
                                    k,
                                    n,
                                    &ad[t * m * k..(t + 1) * m * k],
                                    &gout[t * m * n..(t + 1) * m * n],
                                    &mut gb[t * k * n..(t + 1) * k * n],
                                );
                            }
                        }
                    }
                }
                &Op::Add { a, b } => {
                    if let Some(ga) = Self::acc(&mut grads, nodes, a) {
                        for (g, d) in ga.iter_mut().zip(&gout) {
                            *g += d;
                        }
                    }
                    if let Some(gb) = Self::acc(&mut grads, nodes, b) {
                        let nb = gb.len();
                        for (i, d) in gout.iter().enumerate() {
                            gb[i % nb] += d;
                        }
                    }
                }
                &Op::Mul { a, b } => {
                    let (ad, bd) = (&nodes[a.0].data, &nodes[b.0].data);
                    let nb = bd.len();
                    if let Some(ga) = Self::acc(&mut grads, nodes, a) {
                        for (i, d) in gout.iter().enumerate() {
                            ga[i] += d * bd[i % nb];
                        }
                    }
                    if let Some(gb) = Self::acc(&mut grads, nodes, b) {
                        for (i, d) in gout.iter().enumerate() {
                            gb[i % nb] += d * ad[i];
                        }
                    }
                }
                &Op::Scale { a, factor } => {
                    if let Some(ga) = Self::acc(&mut grads, nodes, a) {
                        for (g, d) in ga.iter_mut().zip(&gout) {
                            *g += d * factor;
                        }
                    }
                }
                &Op::Softmax {
                    a,
                    outer,
                    len,
                    inner,
                } => {
                    let y = &node.data;
                    if let Some(ga) = Self::acc(&mut grads, nodes, a) {
                        for o in 0..outer {
                            for i in 0..inner {
                                let at = |j: usize| o * len * inner + j * inner + i;
                                let dot: f64 = (0..len).map(|j| gout[at(j)] * y[at(j)]).sum();
                                for j in 0..len {
                                    ga[at(j)] += y[at(j)] * (gout[at(j)] - dot);
                                }
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let d = nodes[gamma.0].data.len();
                    let rows = rstd.len();
                    if let Some(gg) = Self::acc(&mut grads, nodes, *gamma) {
                        for r in 0..rows {
                            for j in 0..d {
                                gg[j] += gout[r * d + j] * xhat[r * d + j];
                            }
                        }
                    }
                    if let Some(gb) = Self::acc(&mut grads, nodes, *beta) {
                        for r in 0..rows {
                            for j in 0..d {
                                gb[j] += gout[r * d + j];
                            }
                        }
                    }
                    let g = &nodes[gamma.0].data;
                    if let Some(gx) = Self::acc(&mut grads, nodes, *x) {
                        let mut dxhat = vec![0.0; d];
                        for r in 0..rows {
                            let mut mean_d = 0.0;
                            let mut mean_dx = 0.0;
                            for j in 0..d {
                                let v = gout[r * d + j] * g[j];
                                dxhat[j] = v;
                                mean_d += v;
                                mean_dx += v * xhat[r * d + j];
                            }
                            mean_d /= d as f64;
                            mean_dx /= d as f64;
                            for j in 0..d {
                                gx[r * d + j] +=
                                    rstd[r] * (dxhat[j] - mean_d - xhat[r * d + j] * mean_dx);
                            }
                        }
                    }
                }
                &Op::Gelu { a } => {
                    let xd = &nodes[a.0].data;
                    if let Some(ga) = Self::acc(&mut grads, nodes, a) {
                        for (i, &x) in xd.iter().enumerate() {
                            let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                            let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                            ga[i] += gout[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    let dim = nodes[table.0].shape[1];
                    if let Some(gt) = Self::acc(&mut grads, nodes, *table) {
                        for (r, &id) in ids.iter().enumerate() {
                            for j in 0..dim {
                                gt[id * dim + j] += gout[r * dim + j];
                            }
                        }
                    }
                }
                Op::Concat {
                    inputs,
                    outer,
                    lens,
                    inner,
                } => {
                    let total: usize = lens.iter().sum();
                    let mut offset = 0;
                    for (&v, &len) in inputs.iter().zip(lens) {
                        if let Some(gv) = Self::acc(&mut grads, nodes, v) {
                            for o in 0..*outer {
                                let src = o * total * inner + offset * inner;
                                let dst = o * len * inner;
                                for j in 0..len * inner {
                                    gv[dst + j] += gout[src + j];
                                }
                            }
                        }
                        offset += len;
                    }
                }
                &Op::Slice {
                    a,
                    outer,
                    in_len,
                    start,
                    inner,
                } => {
                    if let Some(ga) = Self::acc(&mut grads, nodes, a) {
                        let len = gout.len() / (outer * inner);
                        for o in 0..outer {
                            let dst = o * in_len * inner + start * inner;
                            let src = o * len * inner;
                            for j in 0..len * inner {
                                ga[dst + j] += gout[src + j];
                            }
                        }
                    }
                }
                Op::Gather { a, map } => {
                    if let Some(ga) = Self::acc(&mut grads, nodes, *a) {
                        for (i, &src) in map.iter().enumerate() {
                            ga[src] += gout[i];
                        }
                    }
                }
                &Op::Reshape { a } => {
                    if let Some(ga) = Self::acc(&mut grads, nodes, a) {
                        for (g, d) in ga.iter_mut().zip(&gout) {
                            *g += d;
                        }
                    }
                }
                &Op::Sum { a } => {
                    if let Some(ga) = Self::acc(&mut grads, nodes, a) {
                        for g in ga.iter_mut() {
                            *g += gout[0];
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    counted,
                    probs,
                    count,
                } => {
                    let vocab = *nodes[logits.0].shape.last().unwrap();
                    let scale = gout[0] / *count as f64;
                    if let Some(gl) = Self::acc(&mut grads, nodes, *logits) {
                        for (r, &t) in targets.iter().enumerate() {
                            if !counted[r] {
                                continue;
                            }
                            for j in 0..vocab {
                                let onehot = if j == t { 1.0 } else { 0.0 };
                                gl[r * vocab + j] += scale * (probs[r * vocab + j] - onehot);
                            }
                        }
                    }
                }
                Op::SelectRows { x, pad, keep } => {
                    let dim = nodes[pad.0].data.len();
                    if let Some(gx) = Self::acc(&mut grads, nodes, *x) {
                        for (r, &k) in keep.iter().enumerate() {
                            if k {
                                for j in 0..dim {
                                    gx[r * dim + j] += gout[r * dim + j];
                                }
                            }
                        }
                    }
                    if let Some(gp) = Self::acc(&mut grads, nodes, *pad) {
                        for (r, &k) in keep.iter().enumerate() {
                            if !k {
                                for j in 0..dim {
                                    gp[j] += gout[r * dim + j];
                                }
                            }
                        }
                    }
                }
            }
            // Leaves keep their gradients for inspection; interior buffers are
            // released as soon as they have been propagated.
            if matches!(node.op, Op::Leaf | Op::Param) {
                grads[idx] = Some(gout);
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Adds the gradients of every bound parameter into the store's grad slots.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (&idx, &v) in &self.params {
            let Some(g) = self.grad(v) else { continue };
            if let Some(dst) = store.by_index_mut(idx).tensor.grad_mut() {
                for (d, s) in dst.iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(t(&[2, 1], &[3.0, 4.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 1]);
        assert_eq!(g.value(c), &[3.0, 4.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[3]));
        let s = g.softmax(a, 0).unwrap();
        for &v in g.value(s) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn concat_shape_arithmetic() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 4]));
        let b = g.constant(Tensor::zeros(&[3, 4]));
        let c = g.concat(&[a, b], 0).unwrap();
        assert_eq!(g.shape(c), &[5, 4]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
        assert!(err.contains("matmul"), "{err}");
        let c = g.constant(Tensor::zeros(&[4]));
        let err = g.add(a, c).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4]"), "{err}");
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.variable(t(&[3], &[1.0, 2.0, 3.0]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn disconnected_parameter_grad_stays_zero() {
        let mut store = ParamStore::new();
        store.insert("used", t(&[2], &[1.0, 2.0])).unwrap();
        store.insert("unused", t(&[2], &[3.0, 4.0])).unwrap();
        let mut g = Graph::new();
        let u = g.param(&store, "used").unwrap();
        let _ = g.param(&store, "unused").unwrap();
        let loss = g.sum(u).unwrap();
        g.backward(loss).unwrap();
        g.accumulate_param_grads(&mut store);
        assert_eq!(store.get("used").unwrap().grad().unwrap(), &[1.0, 1.0]);
        assert_eq!(store.get("unused").unwrap().grad().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn grads_accumulate_until_zeroed() {
        let mut store = ParamStore::new();
        store.insert("w", t(&[1], &[2.0])).unwrap();
        for _ in 0..2 {
            let mut g = Graph::new();
            let w = g.param(&store, "w").unwrap();
            let loss = g.sum(w).unwrap();
            g.backward(loss).unwrap();
            g.accumulate_param_grads(&mut store);
        }
        assert_eq!(store.get("w").unwrap().grad().unwrap(), &[2.0]);
        store.zero_grads();
        assert_eq!(store.get("w").unwrap().grad().unwrap(), &[0.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(NumericsError::Contract(_))));
    }

    #[test]
    fn overflow_raises_instead_of_propagating() {
        let mut g = Graph::new();
        let x = g.variable(t(&[2], &[1e200, 1.0]));
        let err = g.mul(x, x).unwrap_err();
        assert!(matches!(err, NumericsError::NonFinite { op: "mul" }));
    }

    #[test]
    fn cross_entropy_uniform_is_ln_v() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::zeros(&[2, 3, 4]));
        let loss = g.cross_entropy(logits, &[0, 1, 2, 3, 1, 2], None).unwrap();
        assert!((g.value(loss)[0] - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_confident_correct_is_near_zero() {
        let mut g = Graph::new();
        let mut data = vec![0.0; 4];
        data[2] = 60.0;
        let logits = g.constant(t(&[1, 4], &data));
        let loss = g.cross_entropy(logits, &[2], None).unwrap();
        assert!(g.value(loss)[0] < 1e-20);
    }

    #[test]
    fn cross_entropy_all_ignored_is_degenerate() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::zeros(&[2, 4]));
        assert!(matches!(
            g.cross_entropy(logits, &[0, 0], Some(0)),
            Err(NumericsError::DegenerateBatch)
        ));
    }

    #[test]
    fn embedding_rejects_out_of_range_id() {
        let mut g = Graph::new();
        let table = g.constant(Tensor::zeros(&[4, 2]));
        assert!(matches!(
            g.embedding(table, &[1, 4], &[2]),
            Err(NumericsError::IndexOutOfRange { index: 4, .. })
        ));
    }

    #[test]
    fn select_rows_all_kept_is_bit_identity() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2, 2], &[-0.0, 1.5, f64::MIN_POSITIVE, -3.0]));
        let pad = g.constant(t(&[2], &[7.0, 8.0]));
        let y = g.select_rows(x, pad, &[true, true]).unwrap();
        let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(g.value(y)), bits(g.value(x)));
        let z = g.select_rows(x, pad, &[false, true]).unwrap();
        assert_eq!(&g.value(z)[..2], &[7.0, 8.0]);
    }
}
