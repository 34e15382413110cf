use sawt_tensor::{CustomOp, Tensor, Var};

use super::PretrainError;
use crate::model::net::MelOutput;
use crate::model::Ctx;

/// Mean cross-entropy of `logits` (`[batch, frames, K]`) against `labels`
/// over the frames flagged in `masked`, plus the number of such frames.
/// Unmasked frames get exactly zero gradient; no masked frames gives 0.
pub fn speech_mlm_loss<'g>(ctx: &Ctx<'g>, logits: Var<'g>, labels: &[u32], masked: &[bool]) -> (Var<'g>, usize) {
    let s = logits.shape();
    let k = s[2];
    let n = s[0] * s[1];
    assert_eq!(labels.len(), n, "one label per frame");
    assert_eq!(masked.len(), n);
    let count = masked.iter().filter(|&&m| m).count();
    if count == 0 {
        return (ctx.graph.scalar(0.0), 0);
    }
    let idx: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let logp = logits.reshape(&[n, k]).log_softmax().pick(&idx);
    let w = Tensor::new(vec![n], masked.iter().map(|&m| if m { -1.0 / count as f64 } else { 0.0 }).collect());
    ((logp * ctx.constant(w)).sum(), count)
}

/// Mean token cross-entropy over the first `lengths[b]` positions of each row.
/// `logits` is `[batch, len, vocab]`; `targets` is row-major `batch × len`.
pub fn text_dae_loss<'g>(ctx: &Ctx<'g>, logits: Var<'g>, targets: &[u32], lengths: &[usize]) -> Result<Var<'g>, PretrainError> {
    let s = logits.shape();
    let (b, t, v) = (s[0], s[1], s[2]);
    if targets.len() != b * t || lengths.len() != b {
        return Err(PretrainError::ShapeMismatch(format!(
            "logits {s:?} with {} targets and {} lengths",
            targets.len(),
            lengths.len()
        )));
    }
    let valid: usize = lengths.iter().sum();
    if valid == 0 {
        return Ok(ctx.graph.scalar(0.0));
    }
    let idx: Vec<usize> = targets.iter().map(|&i| i as usize).collect();
    let logp = logits.reshape(&[b * t, v]).log_softmax().pick(&idx);
    let w = Tensor::from_fn(&[b * t], |i| if i % t < lengths[i / t] { -1.0 / valid as f64 } else { 0.0 });
    Ok((logp * ctx.constant(w)).sum())
}

/// Terms of the mel reconstruction loss.
pub struct MelLoss<'g> {
    pub l1_before: Var<'g>,
    pub l1_after: Var<'g>,
    pub stop: Var<'g>,
}

impl<'g> MelLoss<'g> {
    pub fn total(&self, stop_weight: f64) -> Var<'g> {
        self.l1_before + self.l1_after + self.stop.scale(stop_weight)
    }
}

/// Mean absolute error of both mel outputs against `target`
/// (`[batch, frames, bins]`) over valid frames, and the stop-token binary
/// cross-entropy whose positive class is each row's final frame.
pub fn mel_loss<'g>(
    ctx: &Ctx<'g>,
    out: &MelOutput<'g>,
    target: &Tensor,
    lengths: &[usize],
    stop_pos_weight: f64,
) -> Result<MelLoss<'g>, PretrainError> {
    let s = out.before.shape();
    if target.shape() != s.as_slice() || lengths.len() != s[0] || lengths.iter().any(|&l| l > s[1]) {
        return Err(PretrainError::ShapeMismatch(format!(
            "mel output {s:?} vs target {:?} with lengths {lengths:?}",
            target.shape()
        )));
    }
    let (b, t, m) = (s[0], s[1], s[2]);
    let valid: usize = lengths.iter().sum();
    let denom = (valid * m).max(1) as f64;
    let frame_w = Tensor::from_fn(&[b, t, 1], |i| if i % t < lengths[i / t] { 1.0 / denom } else { 0.0 });
    let fw = ctx.constant(frame_w);
    let tgt = ctx.constant(target.clone());
    let l1 = |y: Var<'g>| ((y - tgt).abs() * fw).sum();

    // pos_weight·y·softplus(−z) + (1 − y)·softplus(z), averaged over valid frames
    let mut pos = Tensor::zeros(&[b, t]);
    let mut neg = Tensor::zeros(&[b, t]);
    let nv = valid.max(1) as f64;
    for (r, &len) in lengths.iter().enumerate() {
        for f in 0..len {
            if f + 1 == len {
                pos.data_mut()[r * t + f] = stop_pos_weight / nv;
            } else {
                neg.data_mut()[r * t + f] = 1.0 / nv;
            }
        }
    }
    let stop = (out.stop.neg().softplus() * ctx.constant(pos)).sum() + (out.stop.softplus() * ctx.constant(neg)).sum();
    Ok(MelLoss {
        l1_before: l1(out.before),
        l1_after: l1(out.after),
        stop,
    })
}

/// Codebook perplexity of one usage distribution.
///
/// Computed as `exp(H)` for concentrated usage and as `V·exp(−KL(p‖u))`
/// for spread usage; the two agree mathematically and each is exact at its
/// extreme (one-hot and uniform respectively).
fn perplexity(p: &[f64]) -> f64 {
    let v = p.len() as f64;
    let h: f64 = -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>();
    if h <= 0.5 * v.ln() {
        h.exp()
    } else {
        let kl: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| x * (x * v).ln()).sum();
        v * (-kl).exp()
    }
}

/// `Σ_g (V − exp H(p̄_g)) / (G·V)` for per-group average code usage.
pub fn diversity_loss(usage: &[Vec<f64>]) -> Result<f64, PretrainError> {
    if usage.is_empty() {
        return Err(PretrainError::NonDistribution("no groups".into()));
    }
    let g = usage.len() as f64;
    let mut total = 0.0;
    for (gi, p) in usage.iter().enumerate() {
        let sum: f64 = p.iter().sum();
        if p.is_empty() || (sum - 1.0).abs() > 1e-6 || p.iter().any(|&x| !(x >= 0.0)) {
            return Err(PretrainError::NonDistribution(format!("group {gi} sums to {sum}")));
        }
        let v = p.len() as f64;
        total += (v - perplexity(p)) / (g * v);
    }
    Ok(total)
}

struct Diversity;

impl CustomOp for Diversity {
    fn name(&self) -> &str {
        "diversity"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let p = inputs[0];
        let (g, v) = (p.shape()[0], p.shape()[1]);
        let scale = grad.item() / (g * v) as f64;
        let mut out = Tensor::zeros(p.shape());
        for gi in 0..g {
            let row = p.row(gi);
            let ppl = perplexity(row);
            for (j, &x) in row.iter().enumerate() {
                // d(−exp H)/dp = exp H · (ln p + 1)
                out.data_mut()[gi * v + j] = scale * ppl * (x.max(1e-300).ln() + 1.0);
            }
        }
        vec![Some(out)]
    }
}

/// Differentiable [`diversity_loss`] over `[groups, entries]` usage.
pub fn diversity_loss_var<'g>(ctx: &Ctx<'g>, usage: Var<'g>) -> Var<'g> {
    let p = usage.value();
    let rows: Vec<Vec<f64>> = (0..p.shape()[0]).map(|g| p.row(g).to_vec()).collect();
    let value = diversity_loss(&rows).unwrap_or(f64::NAN);
    ctx.graph.custom(&[usage], Tensor::scalar(value), Box::new(Diversity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamStore;
    use sawt_tensor::Graph;

    #[test]
    fn uniform_logits_give_ln_k() {
        let store = ParamStore::new();
        let g = Graph::new();
        let ctx = Ctx::eval(&g, &store);
        let logits = g.constant(Tensor::zeros(&[1, 5, 4]));
        let (l, n) = speech_mlm_loss(&ctx, logits, &[0, 1, 2, 3, 0], &[true, false, true, true, false]);
        assert_eq!(n, 3);
        assert!((l.item() - 4f64.ln()).abs() < 1e-12);
        let (l, n) = speech_mlm_loss(&ctx, logits, &[0; 5], &[false; 5]);
        assert_eq!((l.item(), n), (0.0, 0));
    }

    #[test]
    fn hand_computed_cross_entropy() {
        let store = ParamStore::new();
        let g = Graph::new();
        let ctx = Ctx::eval(&g, &store);
        let raw = vec![2.0, 0.0, -1.0, 0.5, 0.5, 3.0, 1.0, -2.0, 0.0, 9.0, 9.0, 9.0];
        let logits = g.param(Tensor::new(vec![1, 4, 3], raw.clone()));
        let labels = [0, 2, 1, 0];
        let masked = [true, true, true, false];
        let (l, _) = speech_mlm_loss(&ctx, logits, &labels, &masked);
        let mut expect = 0.0;
        for f in 0..3 {
            let row = &raw[f * 3..f * 3 + 3];
            let lse = row.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
            expect += lse - row[labels[f] as usize];
        }
        assert!((l.item() - expect / 3.0).abs() < 1e-12);
        let grad = l.backward().get(logits).unwrap().clone();
        assert!(grad.data()[9..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn text_loss_cases() {
        let store = ParamStore::new();
        let g = Graph::new();
        let ctx = Ctx::eval(&g, &store);
        let uniform = g.constant(Tensor::zeros(&[2, 3, 7]));
        let l = text_dae_loss(&ctx, uniform, &[1, 2, 3, 4, 0, 0], &[3, 1]).unwrap();
        assert!((l.item() - 7f64.ln()).abs() < 1e-12);
        let sharp = g.constant(Tensor::from_fn(&[1, 2, 3], |i| if i == 1 || i == 5 { 50.0 } else { 0.0 }));
        assert!(text_dae_loss(&ctx, sharp, &[1, 2], &[2]).unwrap().item() < 1e-20);
        // two tokens by hand
        let z = [0.3, -0.2, 1.1, 0.0, 2.0, -1.0];
        let t = g.constant(Tensor::new(vec![1, 2, 3], z.to_vec()));
        let got = text_dae_loss(&ctx, t, &[2, 1], &[2]).unwrap().item();
        let ce = |row: &[f64], k: usize| row.iter().map(|x| x.exp()).sum::<f64>().ln() - row[k];
        assert!((got - 0.5 * (ce(&z[..3], 2) + ce(&z[3..], 1))).abs() < 1e-12);
        assert!(text_dae_loss(&ctx, t, &[2], &[2]).is_err());
    }

    #[test]
    fn mel_l1_and_padding() {
        let store = ParamStore::new();
        let g = Graph::new();
        let ctx = Ctx::eval(&g, &store);
        let target = Tensor::from_fn(&[2, 3, 2], |i| i as f64 * 0.1);
        let out = |delta: f64, pad: f64| {
            let shifted = Tensor::from_fn(&[2, 3, 2], |i| {
                let pad_frame = i / 2 % 3 == 2 && i / 6 == 1;
                target.data()[i] + delta + if pad_frame { pad } else { 0.0 }
            });
            MelOutput {
                before: g.constant(shifted.clone()),
                after: g.constant(shifted),
                stop: g.constant(Tensor::zeros(&[2, 3])),
            }
        };
        let exact = mel_loss(&ctx, &out(0.0, 0.0), &target, &[3, 2], 5.0).unwrap();
        assert_eq!(exact.l1_before.item(), 0.0);
        let off = mel_loss(&ctx, &out(-0.25, 0.0), &target, &[3, 2], 5.0).unwrap();
        assert!((off.l1_before.item() - 0.25).abs() < 1e-12);
        assert!((off.l1_after.item() - 0.25).abs() < 1e-12);
        let padded = mel_loss(&ctx, &out(-0.25, 100.0), &target, &[3, 2], 5.0).unwrap();
        assert_eq!(padded.total(1.0).item(), off.total(1.0).item());
        // perfect stop logits
        let stop = Tensor::new(vec![2, 3], vec![-40.0, -40.0, 40.0, -40.0, 40.0, 0.0]);
        let o = MelOutput {
            stop: g.constant(stop),
            ..out(0.0, 0.0)
        };
        assert!(mel_loss(&ctx, &o, &target, &[3, 2], 5.0).unwrap().stop.item() < 1e-15);
    }

    #[test]
    fn diversity_extremes() {
        let v = 100;
        let uniform = vec![vec![1.0 / v as f64; v]; 2];
        assert_eq!(diversity_loss(&uniform).unwrap(), 0.0);
        let mut one_hot = vec![vec![0.0; v]; 2];
        one_hot[0][3] = 1.0;
        one_hot[1][7] = 1.0;
        assert_eq!(diversity_loss(&one_hot).unwrap(), (v as f64 - 1.0) / v as f64);
        let half = vec![vec![0.5, 0.5, 0.0, 0.0]];
        assert!((diversity_loss(&half).unwrap() - 0.5).abs() < 1e-15);
        assert!(diversity_loss(&[vec![0.5, 0.6]]).is_err());
    }
}
