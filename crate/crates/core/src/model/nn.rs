//! Parameter binding and the generic layers every network is built from.

use std::cell::{RefCell, RefMut};
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sawt_tensor::{Graph, Tensor, Var};

use super::ParamStore;

const NEG_INF: f64 = -1e9;
const LN_EPS: f64 = 1e-5;

/// One forward pass: a tape, the parameters bound onto it lazily, the
/// train/eval switch and the dropout stream.
pub struct Ctx<'g> {
    pub graph: &'g Graph,
    store: &'g ParamStore,
    bound: RefCell<BTreeMap<String, Var<'g>>>,
    frozen: Vec<String>,
    train: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl<'g> Ctx<'g> {
    pub fn new(graph: &'g Graph, store: &'g ParamStore, train: bool, seed: u64) -> Self {
        Self {
            graph,
            store,
            bound: RefCell::new(BTreeMap::new()),
            frozen: Vec::new(),
            train,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    /// Eval mode; no dropout.
    pub fn eval(graph: &'g Graph, store: &'g ParamStore) -> Self {
        Self::new(graph, store, false, 0)
    }

    /// Parameters whose names start with any of `prefixes` are bound as constants.
    pub fn with_frozen<S: AsRef<str>>(mut self, prefixes: &[S]) -> Self {
        self.frozen = prefixes.iter().map(|p| p.as_ref().to_string()).collect();
        self
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn rng(&self) -> RefMut<'_, ChaCha8Rng> {
        self.rng.borrow_mut()
    }

    pub fn store(&self) -> &'g ParamStore {
        self.store
    }

    fn is_frozen(&self, name: &str) -> bool {
        self.frozen.iter().any(|p| name.starts_with(p.as_str()))
    }

    /// The parameter `name` on this tape.
    pub fn p(&self, name: &str) -> Var<'g> {
        if let Some(v) = self.bound.borrow().get(name) {
            return *v;
        }
        let t = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
            .clone();
        let v = if self.is_frozen(name) {
            self.graph.constant(t)
        } else {
            self.graph.param(t)
        };
        self.bound.borrow_mut().insert(name.to_string(), v);
        v
    }

    pub fn constant(&self, t: Tensor) -> Var<'g> {
        self.graph.constant(t)
    }

    /// Names bound during this pass, in order.
    pub fn bound_names(&self) -> Vec<String> {
        self.bound.borrow().keys().cloned().collect()
    }

    /// Backpropagate `loss` and collect gradients of every trainable bound
    /// parameter by name. Parameters that did not influence the loss get zeros.
    pub fn gradients(&self, loss: Var<'g>) -> BTreeMap<String, Tensor> {
        let grads = loss.backward();
        let mut out = BTreeMap::new();
        for (name, v) in self.bound.borrow().iter() {
            if !v.requires_grad() {
                continue;
            }
            let g = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(&v.shape()));
            out.insert(name.clone(), g);
        }
        out
    }
}

pub fn linear<'g>(ctx: &Ctx<'g>, x: Var<'g>, prefix: &str) -> Var<'g> {
    x.matmul(ctx.p(&format!("{prefix}.w"))) + ctx.p(&format!("{prefix}.b"))
}

pub fn norm<'g>(ctx: &Ctx<'g>, x: Var<'g>, prefix: &str) -> Var<'g> {
    x.layer_norm(LN_EPS) * ctx.p(&format!("{prefix}.g")) + ctx.p(&format!("{prefix}.b"))
}

/// Inverted dropout; identity in eval mode.
pub fn dropout<'g>(ctx: &Ctx<'g>, x: Var<'g>, p: f64) -> Var<'g> {
    if !ctx.is_train() || p <= 0.0 {
        return x;
    }
    let keep = 1.0 / (1.0 - p);
    let mask = {
        let mut rng = ctx.rng();
        Tensor::from_fn(&x.shape(), |_| if rng.gen::<f64>() < p { 0.0 } else { keep })
    };
    x * ctx.constant(mask)
}

/// Sinusoidal position table, `[len, d]`.
pub fn sinusoid(len: usize, d: usize) -> Tensor {
    Tensor::from_fn(&[len, d], |i| {
        let (t, j) = (i / d, i % d);
        let freq = 10000f64.powf(-((j / 2 * 2) as f64) / d as f64);
        let a = t as f64 * freq;
        if j % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    })
}

/// Additive bias hiding keys at or beyond each row's length, `[b, 1, 1, width]`.
pub fn key_padding_bias(lengths: &[usize], width: usize) -> Tensor {
    let b = lengths.len();
    Tensor::from_fn(&[b, 1, 1, width], |i| if i % width < lengths[i / width] { 0.0 } else { NEG_INF })
}

/// Additive bias hiding future positions, `[1, 1, len, len]`.
pub fn causal_bias(len: usize) -> Tensor {
    Tensor::from_fn(&[1, 1, len, len], |i| if i % len <= i / len { 0.0 } else { NEG_INF })
}

/// `[b, t, 1]` with ones at valid positions.
pub fn valid_mask(lengths: &[usize], width: usize) -> Tensor {
    Tensor::from_fn(&[lengths.len(), width, 1], |i| f64::from(u8::from(i % width < lengths[i / width])))
}

/// Multi-head scaled dot-product attention of `query` over `memory`.
pub fn attention<'g>(
    ctx: &Ctx<'g>,
    query: Var<'g>,
    memory: Var<'g>,
    bias: Option<Var<'g>>,
    prefix: &str,
    heads: usize,
) -> Var<'g> {
    let qs = query.shape();
    let (b, t, d) = (qs[0], qs[1], qs[2]);
    let s = memory.shape()[1];
    let dh = d / heads;
    let split = |x: Var<'g>, len: usize| x.reshape(&[b, len, heads, dh]).permute(&[0, 2, 1, 3]);
    let q = split(linear(ctx, query, &format!("{prefix}.q")), t);
    let k = split(linear(ctx, memory, &format!("{prefix}.k")), s);
    let v = split(linear(ctx, memory, &format!("{prefix}.v")), s);
    let mut scores = q.matmul_t(k).scale(1.0 / (dh as f64).sqrt());
    if let Some(bias) = bias {
        scores = scores + bias;
    }
    let mixed = scores.softmax().matmul(v).permute(&[0, 2, 1, 3]).reshape(&[b, t, d]);
    linear(ctx, mixed, &format!("{prefix}.o"))
}

pub fn feed_forward<'g>(ctx: &Ctx<'g>, x: Var<'g>, prefix: &str, p_drop: f64) -> Var<'g> {
    let h = linear(ctx, x, &format!("{prefix}.fc1")).gelu();
    linear(ctx, dropout(ctx, h, p_drop), &format!("{prefix}.fc2"))
}

/// Pre-norm transformer block with optional cross-attention over `memory`.
pub fn block<'g>(
    ctx: &Ctx<'g>,
    x: Var<'g>,
    self_bias: Option<Var<'g>>,
    memory: Option<(Var<'g>, Option<Var<'g>>)>,
    prefix: &str,
    heads: usize,
    p_drop: f64,
) -> Var<'g> {
    let h = norm(ctx, x, &format!("{prefix}.ln1"));
    let a = attention(ctx, h, h, self_bias, &format!("{prefix}.self_attn"), heads);
    let mut x = x + dropout(ctx, a, p_drop);
    if let Some((mem, mem_bias)) = memory {
        let h = norm(ctx, x, &format!("{prefix}.ln2"));
        let a = attention(ctx, h, mem, mem_bias, &format!("{prefix}.cross_attn"), heads);
        x = x + dropout(ctx, a, p_drop);
    }
    let h = norm(ctx, x, &format!("{prefix}.ln3"));
    x + dropout(ctx, feed_forward(ctx, h, &format!("{prefix}.ffn"), p_drop), p_drop)
}
