use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sawt_tensor::{CustomOp, Graph, Tensor, Var};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.5..1.5))
}

/// Compare analytic gradients of `f` against central differences for every input element.
fn check(inputs: Vec<Tensor>, f: impl for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>) {
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&g, &vars);
    let grads = loss.backward();
    let h = 1e-6;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        for j in 0..t.len() {
            let eval = |delta: f64| {
                let g = Graph::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        let mut t = t.clone();
                        if k == i {
                            t.data_mut()[j] += delta;
                        }
                        g.constant(t)
                    })
                    .collect();
                f(&g, &vs).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / (a.abs().max(numeric.abs()).max(1.0));
            assert!(err < 1e-6, "input {i} elem {j}: analytic {a} numeric {numeric}");
        }
    }
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn probe<'g>(g: &'g Graph, v: Var<'g>) -> Var<'g> {
    let shape = v.shape();
    let w = Tensor::from_fn(&shape, |i| ((i * 7919) % 13) as f64 / 13.0 - 0.4);
    (v * g.constant(w)).sum()
}

#[test]
fn elementwise_and_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[2, 3, 4], &mut rng);
    let b = random(&[3, 1], &mut rng);
    check(vec![a.clone(), b.clone()], |g, v| probe(g, v[0] + v[1]));
    check(vec![a.clone(), b.clone()], |g, v| probe(g, v[0] - v[1]));
    check(vec![a.clone(), b.clone()], |g, v| probe(g, v[0] * v[1]));
    let pos = b.map(|x| x.abs() + 0.5);
    check(vec![a.clone(), pos.clone()], |g, v| probe(g, v[0] / v[1]));
    check(vec![a.clone()], |g, v| probe(g, v[0].gelu()));
    check(vec![a.clone()], |g, v| probe(g, v[0].tanh()));
    check(vec![a.clone()], |g, v| probe(g, v[0].sigmoid()));
    check(vec![a.clone()], |g, v| probe(g, v[0].exp()));
    check(vec![a.clone()], |g, v| probe(g, v[0].softplus()));
    check(vec![a.clone()], |g, v| probe(g, v[0].scale(-2.5).add_scalar(1.0)));
    check(vec![pos.clone()], |g, v| probe(g, v[0].ln()));
    check(vec![a.clone()], |g, v| probe(g, v[0].abs()));
}

#[test]
fn reductions_and_normalizers() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random(&[3, 5], &mut rng);
    check(vec![a.clone()], |g, v| probe(g, v[0].softmax()));
    check(vec![a.clone()], |g, v| probe(g, v[0].log_softmax()));
    check(vec![a.clone()], |g, v| probe(g, v[0].layer_norm(1e-5)));
    check(vec![a.clone()], |g, v| probe(g, v[0].sum_last()));
    check(vec![a.clone()], |_, v| v[0].mean());
    check(vec![a.clone()], |g, v| probe(g, v[0].pick(&[4, 0, 2])));
}

#[test]
fn matmul_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&[2, 3, 4], &mut rng);
    let w = random(&[4, 5], &mut rng);
    let wt = random(&[5, 4], &mut rng);
    let b = random(&[2, 4, 2], &mut rng);
    let bt = random(&[2, 2, 4], &mut rng);
    check(vec![a.clone(), w], |g, v| probe(g, v[0].matmul(v[1])));
    check(vec![a.clone(), wt], |g, v| probe(g, v[0].matmul_t(v[1])));
    check(vec![a.clone(), b], |g, v| probe(g, v[0].matmul(v[1])));
    check(vec![a, bt], |g, v| probe(g, v[0].matmul_t(v[1])));
}

#[test]
fn shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random(&[2, 3, 4], &mut rng);
    let b = random(&[2, 2, 4], &mut rng);
    check(vec![a.clone()], |g, v| probe(g, v[0].permute(&[1, 2, 0])));
    check(vec![a.clone()], |g, v| probe(g, v[0].reshape(&[6, 4])));
    check(vec![a.clone()], |g, v| probe(g, v[0].narrow(1, 1, 2)));
    check(vec![a.clone(), b], |g, v| probe(g, g.concat(&[v[0], v[1]], 1)));
    let table = random(&[5, 3], &mut rng);
    check(vec![table], |g, v| probe(g, g.gather_rows(v[0], &[4, 1, 1, 0])));
}

#[test]
fn conv1d_strided_and_padded() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[2, 11, 3], &mut rng);
    let w = random(&[4 * 3, 2], &mut rng);
    check(vec![x.clone(), w.clone()], |g, v| probe(g, v[0].conv1d(v[1], 4, 2, (2, 0))));
    check(vec![x, w], |g, v| probe(g, v[0].conv1d(v[1], 4, 1, (2, 1))));
}

#[test]
fn conv1d_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (b, l, cin, cout, k, s, pl) = (1, 9, 2, 3, 3, 2, 1);
    let x = random(&[b, l, cin], &mut rng);
    let w = random(&[k * cin, cout], &mut rng);
    let g = Graph::new();
    let y = g.constant(x.clone()).conv1d(g.constant(w.clone()), k, s, (pl, 0)).value();
    let out_len = (l + pl - k) / s + 1;
    assert_eq!(y.shape(), &[b, out_len, cout]);
    for t in 0..out_len {
        for o in 0..cout {
            let mut acc = 0.0;
            for kk in 0..k {
                let pos = (t * s + kk) as isize - pl as isize;
                if pos < 0 || pos as usize >= l {
                    continue;
                }
                for c in 0..cin {
                    acc += x.data()[pos as usize * cin + c] * w.data()[(kk * cin + c) * cout + o];
                }
            }
            assert!((y.data()[t * cout + o] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn reused_nodes_accumulate() {
    let g = Graph::new();
    let x = g.param(Tensor::new(vec![2], vec![1.5, -2.0]));
    let y = (x * x + x).sum();
    let grads = y.backward();
    assert_eq!(grads.get(x).unwrap().data(), &[4.0, -3.0]);
}

struct Square;

impl CustomOp for Square {
    fn name(&self) -> &str {
        "square"
    }
    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(inputs[0].zip_map(grad, |x, g| 2.0 * x * g))]
    }
}

#[test]
fn custom_op_participates() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&[4], &mut rng);
    check(vec![a], |g, v| {
        let out = v[0].value().map(|x| x * x);
        probe(g, g.custom(&[v[0]], out, Box::new(Square)))
    });
}

#[test]
fn constants_get_no_gradient() {
    let g = Graph::new();
    let c = g.constant(Tensor::scalar(3.0));
    let p = g.param(Tensor::scalar(2.0));
    let grads = (c * p).backward();
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(p).unwrap().item(), 3.0);
}
