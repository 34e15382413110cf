use rand::Rng;
use sawt_tensor::{Tensor, Var};

use crate::model::net::quantize;
use crate::model::{Ctx, ModelConfig, ModelError};

/// Encoder states with some positions swapped for their quantized vectors.
pub struct Mixed<'g> {
    pub states: Var<'g>,
    /// Number of valid positions replaced.
    pub replaced: usize,
    /// Per group, soft code probabilities summed over valid positions (`[1, entries]`).
    pub usage_sum: Vec<Var<'g>>,
    pub valid: usize,
}

/// Replace each valid position of `x` (`[batch, len, d]`) by its quantized
/// vector with probability `mix_prob`.
pub fn mix_quantized<'g>(
    ctx: &Ctx<'g>,
    cfg: &ModelConfig,
    x: Var<'g>,
    lengths: &[usize],
    mix_prob: f64,
    tau: f64,
    rng: &mut impl Rng,
) -> Result<Mixed<'g>, ModelError> {
    let s = x.shape();
    let (b, t) = (s[0], s[1]);
    let q = quantize(ctx, cfg, x, tau)?;
    let valid_w = Tensor::from_fn(&[1, b * t], |i| f64::from(u8::from(i % t < lengths[i / t])));
    let vw = ctx.constant(valid_w);
    let usage_sum = q.soft.iter().map(|p| vw.matmul(*p)).collect();
    let valid = lengths.iter().sum();
    let mut replace = vec![false; b * t];
    if mix_prob > 0.0 {
        for (i, r) in replace.iter_mut().enumerate() {
            *r = i % t < lengths[i / t] && rng.gen::<f64>() < mix_prob;
        }
    }
    let replaced = replace.iter().filter(|&&r| r).count();
    let states = if replaced == 0 {
        x
    } else {
        let r = Tensor::new(vec![b, t, 1], replace.iter().map(|&r| f64::from(u8::from(r))).collect());
        let keep = ctx.constant(r.map(|v| 1.0 - v));
        x * keep + q.vectors * ctx.constant(r)
    };
    Ok(Mixed {
        states,
        replaced,
        usage_sum,
        valid,
    })
}
