//! Connectionist temporal classification in log space.

use sawt_tensor::{CustomOp, Tensor, Var};

use crate::model::Ctx;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Fewest frames that can emit `target`: one per symbol plus a blank
/// between each repeated pair.
pub fn min_frames(target: &[u32]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Negative log-likelihood of `target` under per-frame log-probabilities
/// `log_probs` (`frames × symbols`, row-major), and its gradient with
/// respect to every log-probability. Infeasible targets yield `+∞` and a
/// zero gradient.
pub fn ctc_forward_backward(log_probs: &[f64], symbols: usize, target: &[u32], blank: u32) -> (f64, Vec<f64>) {
    let frames = log_probs.len() / symbols;
    let mut grad = vec![0.0; log_probs.len()];
    if min_frames(target) > frames {
        log::warn!(
            "infeasible CTC target: {} symbols need {} frames, have {frames}",
            target.len(),
            min_frames(target)
        );
        return (f64::INFINITY, grad);
    }
    if frames == 0 {
        return (0.0, grad);
    }
    // blank-interleaved label sequence
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &c in target {
        ext.push(c);
        ext.push(blank);
    }
    let s = ext.len();
    let lp = |t: usize, c: u32| log_probs[t * symbols + c as usize];
    let skip_ok = |i: usize| i >= 2 && ext[i] != blank && ext[i] != ext[i - 2];
    let ninf = f64::NEG_INFINITY;

    let mut alpha = vec![ninf; frames * s];
    alpha[0] = lp(0, ext[0]);
    if s > 1 {
        alpha[1] = lp(0, ext[1]);
    }
    for t in 1..frames {
        for i in 0..s {
            let mut a = alpha[(t - 1) * s + i];
            if i >= 1 {
                a = log_add(a, alpha[(t - 1) * s + i - 1]);
            }
            if skip_ok(i) {
                a = log_add(a, alpha[(t - 1) * s + i - 2]);
            }
            alpha[t * s + i] = a + lp(t, ext[i]);
        }
    }
    let last = (frames - 1) * s;
    let log_p = if s > 1 { log_add(alpha[last + s - 1], alpha[last + s - 2]) } else { alpha[last] };

    let mut beta = vec![ninf; frames * s];
    beta[last + s - 1] = lp(frames - 1, ext[s - 1]);
    if s > 1 {
        beta[last + s - 2] = lp(frames - 1, ext[s - 2]);
    }
    for t in (0..frames - 1).rev() {
        for i in 0..s {
            let mut b = beta[(t + 1) * s + i];
            if i + 1 < s {
                b = log_add(b, beta[(t + 1) * s + i + 1]);
            }
            if i + 2 < s && skip_ok(i + 2) {
                b = log_add(b, beta[(t + 1) * s + i + 2]);
            }
            beta[t * s + i] = b + lp(t, ext[i]);
        }
    }

    // d(−ln P)/d lp[t, c] = −Σ_{i: ext_i = c} exp(α + β − lp − ln P)
    for t in 0..frames {
        let mut occ = vec![ninf; symbols];
        for i in 0..s {
            let c = ext[i] as usize;
            occ[c] = log_add(occ[c], alpha[t * s + i] + beta[t * s + i]);
        }
        for c in 0..symbols {
            if occ[c] > ninf {
                grad[t * symbols + c] = -(occ[c] - log_probs[t * symbols + c] - log_p).exp();
            }
        }
    }
    (-log_p, grad)
}

/// [`ctc_forward_backward`] without the gradient.
pub fn ctc_loss(log_probs: &[f64], symbols: usize, target: &[u32], blank: u32) -> f64 {
    ctc_forward_backward(log_probs, symbols, target, blank).0
}

struct CtcOp {
    grad: Tensor,
}

impl CustomOp for CtcOp {
    fn name(&self) -> &str {
        "ctc"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let g = grad.item();
        vec![Some(self.grad.map(|x| x * g))]
    }
}

/// Mean CTC loss over a batch. `log_probs` is `[batch, frames, symbols]`
/// (already log-normalized); only the first `input_lengths[b]` frames of
/// row `b` are scored.
pub fn ctc_loss_var<'g>(
    ctx: &Ctx<'g>,
    log_probs: Var<'g>,
    input_lengths: &[usize],
    targets: &[&[u32]],
    blank: u32,
) -> Var<'g> {
    let shape = log_probs.shape();
    let (b, t, c) = (shape[0], shape[1], shape[2]);
    assert_eq!(input_lengths.len(), b);
    assert_eq!(targets.len(), b);
    let value = log_probs.value();
    let mut grad = Tensor::zeros(&shape);
    let mut total = 0.0;
    for r in 0..b {
        let len = input_lengths[r].min(t);
        let rows = &value.data()[r * t * c..(r * t + len) * c];
        let (loss, g) = ctc_forward_backward(rows, c, targets[r], blank);
        total += loss;
        for (dst, src) in grad.data_mut()[r * t * c..(r * t + len) * c].iter_mut().zip(&g) {
            *dst = src / b as f64;
        }
    }
    let out = Tensor::scalar(total / b.max(1) as f64);
    ctx.graph.custom(&[log_probs], out, Box::new(CtcOp { grad }))
}
