use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::kernels::{self, broadcast_shape, for_each_broadcast, gemm};
use crate::Tensor;

/// A differentiable operation defined outside this crate.
///
/// `backward` receives the forward inputs, the forward output and the
/// gradient of the output, and returns one gradient per input (`None`
/// for inputs that do not need one).
pub trait CustomOp {
    fn name(&self) -> &str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul { a: usize, b: usize, tb: bool },
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm { x: usize, rstd: Vec<f64> },
    Gelu(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Abs(usize),
    Softplus(usize),
    SumAll(usize),
    SumLast(usize),
    GatherRows { table: usize, ids: Vec<usize> },
    Pick { x: usize, idx: Vec<usize> },
    Narrow { x: usize, axis: usize, start: usize },
    Concat { parts: Vec<usize>, axis: usize },
    Conv1d { x: usize, w: usize, stride: usize, pad: (usize, usize), kernel: usize },
    Custom { inputs: Vec<usize>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Recording tape. Every operation on a [`Var`] appends a node.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

/// Gradients produced by [`Var::backward`], keyed by node.
pub struct Gradients {
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(&v.id)
    }

    pub fn take(&mut self, v: Var<'_>) -> Option<Tensor> {
        self.grads.remove(&v.id)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Record a [`CustomOp`] whose forward value was computed by the caller.
    pub fn custom<'g>(&'g self, inputs: &[Var<'g>], output: Tensor, op: Box<dyn CustomOp>) -> Var<'g> {
        let needs = inputs.iter().any(|v| self.needs(v.id));
        let ids = inputs.iter().map(|v| v.id).collect();
        self.push(output, Op::Custom { inputs: ids, op }, needs)
    }

    pub fn concat<'g>(&'g self, parts: &[Var<'g>], axis: usize) -> Var<'g> {
        assert!(!parts.is_empty(), "concat of nothing");
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let first = values[0].shape().to_vec();
        assert!(axis < first.len());
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            assert_eq!(s.len(), first.len(), "concat rank mismatch");
            for (d, (&x, &y)) in s.iter().zip(&first).enumerate() {
                assert!(d == axis || x == y, "concat shape mismatch {s:?} vs {first:?}");
            }
            total += s[axis];
        }
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let needs = parts.iter().any(|p| self.needs(p.id));
        self.push(
            Tensor::new(shape, data),
            Op::Concat {
                parts: parts.iter().map(|p| p.id).collect(),
                axis,
            },
            needs,
        )
    }

    /// Rows of `table` (`[rows, dim]`) selected by `ids`, shaped `[ids.len(), dim]`.
    pub fn gather_rows<'g>(&'g self, table: Var<'g>, ids: &[usize]) -> Var<'g> {
        let t = table.value();
        assert_eq!(t.ndim(), 2, "gather_rows needs a 2-D table");
        let dim = t.shape()[1];
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            assert!(i < t.shape()[0], "row {i} out of range {}", t.shape()[0]);
            data.extend_from_slice(t.row(i));
        }
        self.push(
            Tensor::new(vec![ids.len(), dim], data),
            Op::GatherRows {
                table: table.id,
                ids: ids.to_vec(),
            },
            self.needs(table.id),
        )
    }
}

fn unary<'g>(x: Var<'g>, f: impl Fn(f64) -> f64, op: Op) -> Var<'g> {
    let v = x.value().map(f);
    let needs = x.graph.needs(x.id);
    x.graph.push(v, op, needs)
}

fn binary_value(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let shape = broadcast_shape(a.shape(), b.shape())
        .unwrap_or_else(|| panic!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()));
    let mut out = vec![0.0; shape.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&shape, a.shape(), b.shape(), |o, i, j| out[o] = f(ad[i], bd[j]));
    Tensor::new(shape, out)
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(x: &Tensor, log: bool) -> Tensor {
    let d = x.last_dim();
    let mut out = x.data().to_vec();
    if d == 0 {
        return Tensor::new(x.shape().to_vec(), out);
    }
    for row in out.chunks_mut(d) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let m = if m.is_finite() { m } else { 0.0 };
        if log {
            let lse = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
            for v in row.iter_mut() {
                *v -= lse;
            }
        } else {
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.needs(self.id)
    }

    /// Same value, cut off from the tape.
    pub fn detach(&self) -> Var<'g> {
        self.graph.constant((*self.value()).clone())
    }

    fn binary(self, other: Var<'g>, f: impl Fn(f64, f64) -> f64, op: Op) -> Var<'g> {
        let v = binary_value(&self.value(), &other.value(), f);
        let needs = self.requires_grad() || other.requires_grad();
        self.graph.push(v, op, needs)
    }

    pub fn add(self, other: Var<'g>) -> Var<'g> {
        self.binary(other, |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'g>) -> Var<'g> {
        self.binary(other, |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'g>) -> Var<'g> {
        self.binary(other, |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Var<'g>) -> Var<'g> {
        self.binary(other, |a, b| a / b, Op::Div(self.id, other.id))
    }

    pub fn scale(self, s: f64) -> Var<'g> {
        unary(self, |x| x * s, Op::Scale(self.id, s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'g> {
        unary(self, |x| x + s, Op::AddScalar(self.id))
    }

    pub fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn gelu(self) -> Var<'g> {
        unary(self, gelu, Op::Gelu(self.id))
    }

    pub fn relu(self) -> Var<'g> {
        unary(self, |x| x.max(0.0), Op::Relu(self.id))
    }

    pub fn tanh(self) -> Var<'g> {
        unary(self, f64::tanh, Op::Tanh(self.id))
    }

    pub fn sigmoid(self) -> Var<'g> {
        unary(self, sigmoid, Op::Sigmoid(self.id))
    }

    pub fn exp(self) -> Var<'g> {
        unary(self, f64::exp, Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'g> {
        unary(self, f64::ln, Op::Log(self.id))
    }

    pub fn abs(self) -> Var<'g> {
        unary(self, f64::abs, Op::Abs(self.id))
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(self) -> Var<'g> {
        unary(self, softplus, Op::Softplus(self.id))
    }

    pub fn sqr(self) -> Var<'g> {
        self.mul(self)
    }

    /// Batched matrix product. `self` is `[.., m, k]`; `other` is `[k, n]`
    /// or carries the same leading axes as `self`.
    pub fn matmul(self, other: Var<'g>) -> Var<'g> {
        self.matmul_impl(other, false)
    }

    /// Like [`Var::matmul`] with the last two axes of `other` swapped.
    pub fn matmul_t(self, other: Var<'g>) -> Var<'g> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(self, other: Var<'g>, tb: bool) -> Var<'g> {
        let a = self.value();
        let b = other.value();
        let v = matmul_forward(&a, &b, tb);
        let needs = self.requires_grad() || other.requires_grad();
        self.graph.push(
            v,
            Op::MatMul {
                a: self.id,
                b: other.id,
                tb,
            },
            needs,
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let v = (*self.value()).clone().reshape(shape);
        let needs = self.requires_grad();
        self.graph.push(v, Op::Reshape(self.id), needs)
    }

    pub fn permute(self, perm: &[usize]) -> Var<'g> {
        let x = self.value();
        assert_eq!(perm.len(), x.ndim());
        let (shape, data) = kernels::permute(x.data(), x.shape(), perm);
        let needs = self.requires_grad();
        self.graph
            .push(Tensor::new(shape, data), Op::Permute(self.id, perm.to_vec()), needs)
    }

    pub fn softmax(self) -> Var<'g> {
        let v = softmax_rows(&self.value(), false);
        let needs = self.requires_grad();
        self.graph.push(v, Op::Softmax(self.id), needs)
    }

    pub fn log_softmax(self) -> Var<'g> {
        let v = softmax_rows(&self.value(), true);
        let needs = self.requires_grad();
        self.graph.push(v, Op::LogSoftmax(self.id), needs)
    }

    /// Normalize over the last axis to zero mean and unit variance.
    pub fn layer_norm(self, eps: f64) -> Var<'g> {
        let x = self.value();
        let d = x.last_dim();
        let mut out = x.data().to_vec();
        let mut rstds = Vec::with_capacity(out.len() / d.max(1));
        for row in out.chunks_mut(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * rstd;
            }
            rstds.push(rstd);
        }
        let needs = self.requires_grad();
        self.graph.push(
            Tensor::new(x.shape().to_vec(), out),
            Op::LayerNorm {
                x: self.id,
                rstd: rstds,
            },
            needs,
        )
    }

    pub fn sum(self) -> Var<'g> {
        let v = Tensor::scalar(self.value().sum());
        let needs = self.requires_grad();
        self.graph.push(v, Op::SumAll(self.id), needs)
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().len().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Sum over the last axis, dropping it.
    pub fn sum_last(self) -> Var<'g> {
        let x = self.value();
        let d = x.last_dim();
        let data: Vec<f64> = if d == 0 {
            vec![0.0; x.shape()[..x.ndim() - 1].iter().product()]
        } else {
            x.data().chunks(d).map(|r| r.iter().sum()).collect()
        };
        let shape = x.shape()[..x.ndim().saturating_sub(1)].to_vec();
        let needs = self.requires_grad();
        self.graph
            .push(Tensor::new(shape, data), Op::SumLast(self.id), needs)
    }

    /// For `self` viewed as `[n, c]`, the entry `idx[i]` of every row `i`.
    pub fn pick(self, idx: &[usize]) -> Var<'g> {
        let x = self.value();
        let c = x.last_dim();
        assert_eq!(x.len(), idx.len() * c, "pick: {} rows vs {} indices", x.len() / c.max(1), idx.len());
        let data = idx
            .iter()
            .enumerate()
            .map(|(r, &i)| {
                assert!(i < c, "pick index {i} >= {c}");
                x.data()[r * c + i]
            })
            .collect();
        let needs = self.requires_grad();
        self.graph.push(
            Tensor::new(vec![idx.len()], data),
            Op::Pick {
                x: self.id,
                idx: idx.to_vec(),
            },
            needs,
        )
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'g> {
        let x = self.value();
        let shape = x.shape();
        assert!(start + len <= shape[axis], "narrow out of range");
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis] * inner;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&x.data()[o * full + start * inner..o * full + (start + len) * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let needs = self.requires_grad();
        self.graph.push(
            Tensor::new(out_shape, data),
            Op::Narrow {
                x: self.id,
                axis,
                start,
            },
            needs,
        )
    }

    /// Channels-last 1-D convolution. `self` is `[batch, len, cin]`, `weight`
    /// is `[kernel·cin, cout]` with kernel-major rows.
    pub fn conv1d(self, weight: Var<'g>, kernel: usize, stride: usize, pad: (usize, usize)) -> Var<'g> {
        let x = self.value();
        let w = weight.value();
        assert_eq!(x.ndim(), 3, "conv1d input must be [batch, len, channels]");
        let (b, l, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        assert_eq!(w.shape()[0], kernel * cin, "conv1d weight rows");
        let cout = w.shape()[1];
        let out_len = kernels::conv_out_len(l, kernel, stride, pad);
        let cols = kernels::im2col(x.data(), (b, l, cin), kernel, stride, pad.0, out_len);
        let mut out = vec![0.0; b * out_len * cout];
        gemm(
            b * out_len,
            kernel * cin,
            cout,
            &cols,
            (kernel * cin, 1),
            w.data(),
            (cout, 1),
            0.0,
            &mut out,
            (cout, 1),
        );
        let needs = self.requires_grad() || weight.requires_grad();
        self.graph.push(
            Tensor::new(vec![b, out_len, cout], out),
            Op::Conv1d {
                x: self.id,
                w: weight.id,
                stride,
                pad,
                kernel,
            },
            needs,
        )
    }

    /// Reverse-mode sweep from this scalar.
    pub fn backward(&self) -> Gradients {
        let nodes = self.graph.nodes.borrow();
        assert_eq!(nodes[self.id].value.len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..=self.id).map(|_| None).collect();
        grads[self.id] = Some(Tensor::full(nodes[self.id].value.shape(), 1.0));
        for id in (0..=self.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            for (input, gi) in backward_op(&nodes, node, &g) {
                if !nodes[input].needs_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&gi),
                    slot => *slot = Some(gi),
                }
            }
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| match (&nodes[i].op, g) {
                (Op::Leaf, Some(g)) => Some((i, g)),
                _ => None,
            })
            .collect();
        Gradients { grads }
    }
}

fn matmul_dims(a: &Tensor, b: &Tensor, tb: bool) -> (usize, usize, usize, usize, bool) {
    assert!(a.ndim() >= 2 && b.ndim() >= 2, "matmul needs rank >= 2");
    let m = a.shape()[a.ndim() - 2];
    let k = a.shape()[a.ndim() - 1];
    let (bk, n) = {
        let r = b.shape()[b.ndim() - 2];
        let c = b.shape()[b.ndim() - 1];
        if tb {
            (c, r)
        } else {
            (r, c)
        }
    };
    assert_eq!(k, bk, "matmul inner dims {:?} x {:?}", a.shape(), b.shape());
    let batch: usize = a.shape()[..a.ndim() - 2].iter().product();
    let shared = b.ndim() == 2;
    if !shared {
        assert_eq!(
            &a.shape()[..a.ndim() - 2],
            &b.shape()[..b.ndim() - 2],
            "matmul batch dims"
        );
    }
    (batch, m, k, n, shared)
}

fn matmul_forward(a: &Tensor, b: &Tensor, tb: bool) -> Tensor {
    let (batch, m, k, n, shared) = matmul_dims(a, b, tb);
    let bs = if tb { (1, k) } else { (n, 1) };
    let mut out = vec![0.0; batch * m * n];
    if shared {
        gemm(batch * m, k, n, a.data(), (k, 1), b.data(), bs, 0.0, &mut out, (n, 1));
    } else {
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &a.data()[i * m * k..],
                (k, 1),
                &b.data()[i * k * n..],
                bs,
                0.0,
                &mut out[i * m * n..],
                (n, 1),
            );
        }
    }
    let mut shape = a.shape()[..a.ndim() - 2].to_vec();
    shape.extend([m, n]);
    Tensor::new(shape, out)
}

fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = vec![0.0; shape.iter().product()];
    let gd = g.data();
    for_each_broadcast(g.shape(), shape, g.shape(), |o, i, _| out[i] += gd[o]);
    Tensor::new(shape.to_vec(), out)
}

fn backward_op(nodes: &[Node], node: &Node, g: &Tensor) -> Vec<(usize, Tensor)> {
    let val = |id: usize| nodes[id].value.as_ref();
    let out = node.value.as_ref();
    let elementwise = |x: usize, f: &dyn Fn(f64, f64, f64) -> f64| {
        let xv = val(x);
        let data = xv
            .data()
            .iter()
            .zip(out.data())
            .zip(g.data())
            .map(|((&xi, &yi), &gi)| f(xi, yi, gi))
            .collect();
        vec![(x, Tensor::new(xv.shape().to_vec(), data))]
    };
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add(a, b) => vec![(*a, reduce_to(g, val(*a).shape())), (*b, reduce_to(g, val(*b).shape()))],
        Op::Sub(a, b) => {
            let gb = reduce_to(g, val(*b).shape()).map(|x| -x);
            vec![(*a, reduce_to(g, val(*a).shape())), (*b, gb)]
        }
        Op::Mul(a, b) | Op::Div(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let mut ga = vec![0.0; av.len()];
            let mut gb = vec![0.0; bv.len()];
            let (ad, bd, gd) = (av.data(), bv.data(), g.data());
            let div = matches!(node.op, Op::Div(..));
            for_each_broadcast(g.shape(), av.shape(), bv.shape(), |o, i, j| {
                if div {
                    ga[i] += gd[o] / bd[j];
                    gb[j] -= gd[o] * ad[i] / (bd[j] * bd[j]);
                } else {
                    ga[i] += gd[o] * bd[j];
                    gb[j] += gd[o] * ad[i];
                }
            });
            vec![
                (*a, Tensor::new(av.shape().to_vec(), ga)),
                (*b, Tensor::new(bv.shape().to_vec(), gb)),
            ]
        }
        Op::Scale(x, s) => vec![(*x, g.map(|v| v * s))],
        Op::AddScalar(x) => vec![(*x, g.clone())],
        Op::MatMul { a, b, tb } => {
            let (av, bv) = (val(*a), val(*b));
            let (batch, m, k, n, shared) = matmul_dims(av, bv, *tb);
            let gd = g.data();
            let mut ga = vec![0.0; av.len()];
            let mut gb = vec![0.0; bv.len()];
            // dA = dC · op(B)^T
            let bt_strides = if *tb { (k, 1) } else { (1, n) };
            if shared {
                gemm(batch * m, n, k, gd, (n, 1), bv.data(), bt_strides, 0.0, &mut ga, (k, 1));
                // dB (or dB^T) accumulated over all rows
                if *tb {
                    gemm(n, batch * m, k, gd, (1, n), av.data(), (k, 1), 0.0, &mut gb, (k, 1));
                } else {
                    gemm(k, batch * m, n, av.data(), (1, k), gd, (n, 1), 0.0, &mut gb, (n, 1));
                }
            } else {
                for i in 0..batch {
                    let (ao, bo, co) = (i * m * k, i * k * n, i * m * n);
                    gemm(m, n, k, &gd[co..], (n, 1), &bv.data()[bo..], bt_strides, 0.0, &mut ga[ao..], (k, 1));
                    if *tb {
                        gemm(n, m, k, &gd[co..], (1, n), &av.data()[ao..], (k, 1), 0.0, &mut gb[bo..], (k, 1));
                    } else {
                        gemm(k, m, n, &av.data()[ao..], (1, k), &gd[co..], (n, 1), 0.0, &mut gb[bo..], (n, 1));
                    }
                }
            }
            vec![
                (*a, Tensor::new(av.shape().to_vec(), ga)),
                (*b, Tensor::new(bv.shape().to_vec(), gb)),
            ]
        }
        Op::Reshape(x) => vec![(*x, g.clone().reshape(val(*x).shape()))],
        Op::Permute(x, perm) => {
            let inv = kernels::inverse_permutation(perm);
            let (shape, data) = kernels::permute(g.data(), g.shape(), &inv);
            vec![(*x, Tensor::new(shape, data))]
        }
        Op::Softmax(x) => {
            let d = out.last_dim();
            let mut gx = vec![0.0; out.len()];
            for ((gr, yr), dst) in g.data().chunks(d).zip(out.data().chunks(d)).zip(gx.chunks_mut(d)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for ((o, &gi), &yi) in dst.iter_mut().zip(gr).zip(yr) {
                    *o = yi * (gi - dot);
                }
            }
            vec![(*x, Tensor::new(out.shape().to_vec(), gx))]
        }
        Op::LogSoftmax(x) => {
            let d = out.last_dim();
            let mut gx = vec![0.0; out.len()];
            for ((gr, yr), dst) in g.data().chunks(d).zip(out.data().chunks(d)).zip(gx.chunks_mut(d)) {
                let s: f64 = gr.iter().sum();
                for ((o, &gi), &yi) in dst.iter_mut().zip(gr).zip(yr) {
                    *o = gi - yi.exp() * s;
                }
            }
            vec![(*x, Tensor::new(out.shape().to_vec(), gx))]
        }
        Op::LayerNorm { x, rstd } => {
            let d = out.last_dim();
            let mut gx = vec![0.0; out.len()];
            for (((gr, yr), dst), &r) in g
                .data()
                .chunks(d)
                .zip(out.data().chunks(d))
                .zip(gx.chunks_mut(d))
                .zip(rstd)
            {
                let mg = gr.iter().sum::<f64>() / d as f64;
                let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                for ((o, &gi), &yi) in dst.iter_mut().zip(gr).zip(yr) {
                    *o = r * (gi - mg - yi * mgy);
                }
            }
            vec![(*x, Tensor::new(out.shape().to_vec(), gx))]
        }
        Op::Gelu(x) => elementwise(*x, &|xi, _, gi| gi * gelu_grad(xi)),
        Op::Relu(x) => elementwise(*x, &|xi, _, gi| if xi > 0.0 { gi } else { 0.0 }),
        Op::Tanh(x) => elementwise(*x, &|_, yi, gi| gi * (1.0 - yi * yi)),
        Op::Sigmoid(x) => elementwise(*x, &|_, yi, gi| gi * yi * (1.0 - yi)),
        Op::Exp(x) => elementwise(*x, &|_, yi, gi| gi * yi),
        Op::Log(x) => elementwise(*x, &|xi, _, gi| gi / xi),
        Op::Abs(x) => elementwise(*x, &|xi, _, gi| gi * xi.signum() * f64::from(u8::from(xi != 0.0))),
        Op::Softplus(x) => elementwise(*x, &|xi, _, gi| gi * sigmoid(xi)),
        Op::SumAll(x) => vec![(*x, Tensor::full(val(*x).shape(), g.item()))],
        Op::SumLast(x) => {
            let xv = val(*x);
            let d = xv.last_dim();
            let mut gx = Vec::with_capacity(xv.len());
            for &gi in g.data() {
                gx.extend(std::iter::repeat(gi).take(d));
            }
            vec![(*x, Tensor::new(xv.shape().to_vec(), gx))]
        }
        Op::GatherRows { table, ids } => {
            let t = val(*table);
            let dim = t.shape()[1];
            let mut gt = vec![0.0; t.len()];
            for (r, &i) in ids.iter().enumerate() {
                for (d, s) in gt[i * dim..(i + 1) * dim].iter_mut().zip(g.row(r)) {
                    *d += s;
                }
            }
            vec![(*table, Tensor::new(t.shape().to_vec(), gt))]
        }
        Op::Pick { x, idx } => {
            let xv = val(*x);
            let c = xv.last_dim();
            let mut gx = vec![0.0; xv.len()];
            for (r, (&i, &gi)) in idx.iter().zip(g.data()).enumerate() {
                gx[r * c + i] += gi;
            }
            vec![(*x, Tensor::new(xv.shape().to_vec(), gx))]
        }
        Op::Narrow { x, axis, start } => {
            let xv = val(*x);
            let shape = xv.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let len = g.shape()[*axis];
            let full = shape[*axis] * inner;
            let mut gx = vec![0.0; xv.len()];
            for o in 0..outer {
                gx[o * full + start * inner..o * full + (start + len) * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![(*x, Tensor::new(shape.to_vec(), gx))]
        }
        Op::Concat { parts, axis } => {
            let shape = out.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let total = shape[*axis];
            let mut res = Vec::with_capacity(parts.len());
            let mut offset = 0;
            for &p in parts {
                let pv = val(p);
                let len = pv.shape()[*axis];
                let mut gp = Vec::with_capacity(pv.len());
                for o in 0..outer {
                    let base = o * total * inner + offset * inner;
                    gp.extend_from_slice(&g.data()[base..base + len * inner]);
                }
                res.push((p, Tensor::new(pv.shape().to_vec(), gp)));
                offset += len;
            }
            res
        }
        Op::Conv1d {
            x,
            w,
            stride,
            pad,
            kernel,
        } => {
            let (xv, wv) = (val(*x), val(*w));
            let (b, l, cin) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
            let cout = wv.shape()[1];
            let out_len = g.shape()[1];
            let width = kernel * cin;
            let cols = kernels::im2col(xv.data(), (b, l, cin), *kernel, *stride, pad.0, out_len);
            let mut gw = vec![0.0; wv.len()];
            gemm(width, b * out_len, cout, &cols, (1, width), g.data(), (cout, 1), 0.0, &mut gw, (cout, 1));
            let mut gcols = vec![0.0; cols.len()];
            gemm(b * out_len, cout, width, g.data(), (cout, 1), wv.data(), (1, cout), 0.0, &mut gcols, (width, 1));
            let gx = kernels::col2im(&gcols, (b, l, cin), *kernel, *stride, pad.0, out_len);
            vec![
                (*x, Tensor::new(xv.shape().to_vec(), gx)),
                (*w, Tensor::new(wv.shape().to_vec(), gw)),
            ]
        }
        Op::Custom { inputs, op } => {
            let vals: Vec<&Tensor> = inputs.iter().map(|&i| val(i)).collect();
            op.backward(&vals, out, g)
                .into_iter()
                .zip(inputs)
                .filter_map(|(g, &i)| g.map(|g| (i, g)))
                .collect()
        }
    }
}

macro_rules! impl_binop {
    ($tr:ident, $m:ident, $f:ident) => {
        impl<'g> std::ops::$tr for Var<'g> {
            type Output = Var<'g>;
            fn $m(self, rhs: Var<'g>) -> Var<'g> {
                Var::$f(self, rhs)
            }
        }
    };
}

impl_binop!(Add, add, add);
impl_binop!(Sub, sub, sub);
impl_binop!(Mul, mul, mul);
impl_binop!(Div, div, div);

impl<'g> std::ops::Mul<f64> for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, rhs: f64) -> Var<'g> {
        self.scale(rhs)
    }
}

impl<'g> std::ops::Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }
}
