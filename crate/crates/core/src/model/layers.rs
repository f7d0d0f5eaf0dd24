//! Transformer building blocks over a [`Graph`], parameterized by name prefix.

use rand::RngExt;

use crate::numerics::{Graph, ParamStore, Result, Tensor, Var};
use crate::seeding;

pub const LN_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;
const MASKED_SCORE: f64 = -1e30;

/// Truncated normal (±2σ) keyed by the parameter name.
pub fn trunc_normal(seed: u64, name: &str, shape: &[usize], std: f64) -> Tensor {
    let mut rng = seeding::rng(seeding::derive(seed, name));
    Tensor::from_fn(shape, |_| loop {
        // Box-Muller keeps the draw sequence independent of rand_distr internals.
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        if z.abs() <= 2.0 {
            break z * std;
        }
    })
}

pub fn init_linear(store: &mut ParamStore, seed: u64, prefix: &str, fan_in: usize, fan_out: usize) -> Result<()> {
    let w = format!("{prefix}.w");
    store.insert(&w, trunc_normal(seed, &w, &[fan_in, fan_out], INIT_STD))?;
    store.insert(&format!("{prefix}.b"), Tensor::zeros(&[fan_out]))?;
    Ok(())
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<()> {
    store.insert(&format!("{prefix}.g"), Tensor::from_fn(&[dim], |_| 1.0))?;
    store.insert(&format!("{prefix}.b"), Tensor::zeros(&[dim]))?;
    Ok(())
}

pub fn init_attention(store: &mut ParamStore, seed: u64, prefix: &str, dim: usize) -> Result<()> {
    for proj in ["q", "k", "v", "o"] {
        init_linear(store, seed, &format!("{prefix}.{proj}"), dim, dim)?;
    }
    Ok(())
}

pub fn init_mlp(store: &mut ParamStore, seed: u64, prefix: &str, dim: usize, ratio: usize) -> Result<()> {
    init_linear(store, seed, &format!("{prefix}.fc1"), dim, dim * ratio)?;
    init_linear(store, seed, &format!("{prefix}.fc2"), dim * ratio, dim)
}

pub fn linear(g: &mut Graph, s: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(s, &format!("{prefix}.w"))?;
    let b = g.param(s, &format!("{prefix}.b"))?;
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

pub fn layer_norm(g: &mut Graph, s: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let gamma = g.param(s, &format!("{prefix}.g"))?;
    let beta = g.param(s, &format!("{prefix}.b"))?;
    g.layer_norm(x, gamma, beta, LN_EPS)
}

pub fn mlp(g: &mut Graph, s: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(g, s, &format!("{prefix}.fc1"), x)?;
    let h = g.gelu(h)?;
    linear(g, s, &format!("{prefix}.fc2"), h)
}

/// `[B, L, E]` → `[B, heads, L, E/heads]`
fn split_heads(g: &mut Graph, x: Var, heads: usize) -> Result<Var> {
    let (b, l, e) = {
        let s = g.shape(x);
        (s[0], s[1], s[2])
    };
    let x = g.reshape(x, &[b, l, heads, e / heads])?;
    g.transpose(x, 1, 2)
}

/// Multi-head scaled dot-product attention of `query` over `memory`.
pub fn attention(
    g: &mut Graph,
    s: &ParamStore,
    prefix: &str,
    query: Var,
    memory: Var,
    heads: usize,
    causal: bool,
) -> Result<Var> {
    let (b, lq, e) = {
        let sh = g.shape(query);
        (sh[0], sh[1], sh[2])
    };
    let lk = g.shape(memory)[1];
    let q = linear(g, s, &format!("{prefix}.q"), query)?;
    let k = linear(g, s, &format!("{prefix}.k"), memory)?;
    let v = linear(g, s, &format!("{prefix}.v"), memory)?;
    let q = split_heads(g, q, heads)?;
    let k = split_heads(g, k, heads)?;
    let v = split_heads(g, v, heads)?;
    let kt = g.transpose(k, 2, 3)?;
    let scores = g.matmul(q, kt)?;
    let mut scores = g.scale(scores, 1.0 / ((e / heads) as f64).sqrt())?;
    if causal {
        let mask = Tensor::from_fn(&[lq, lk], |i| {
            if i % lk > i / lk {
                MASKED_SCORE
            } else {
                0.0
            }
        });
        let mask = g.constant(mask);
        scores = g.add(scores, mask)?;
    }
    let attn = g.softmax(scores, 3)?;
    let ctx = g.matmul(attn, v)?;
    let ctx = g.transpose(ctx, 1, 2)?;
    let ctx = g.reshape(ctx, &[b, lq, e])?;
    linear(g, s, &format!("{prefix}.o"), ctx)
}

/// Pre-norm self-attention block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
pub fn encoder_block(
    g: &mut Graph,
    s: &ParamStore,
    prefix: &str,
    x: Var,
    heads: usize,
) -> Result<Var> {
    let h = layer_norm(g, s, &format!("{prefix}.ln1"), x)?;
    let a = attention(g, s, &format!("{prefix}.attn"), h, h, heads, false)?;
    let x = g.add(x, a)?;
    let h = layer_norm(g, s, &format!("{prefix}.ln2"), x)?;
    let m = mlp(g, s, &format!("{prefix}.mlp"), h)?;
    g.add(x, m)
}

pub fn init_encoder_block(store: &mut ParamStore, seed: u64, prefix: &str, dim: usize, ratio: usize) -> Result<()> {
    init_layer_norm(store, &format!("{prefix}.ln1"), dim)?;
    init_attention(store, seed, &format!("{prefix}.attn"), dim)?;
    init_layer_norm(store, &format!("{prefix}.ln2"), dim)?;
    init_mlp(store, seed, &format!("{prefix}.mlp"), dim, ratio)
}

/// Pre-norm decoder block: causal self-attention, cross-attention, MLP.
pub fn decoder_block(
    g: &mut Graph,
    s: &ParamStore,
    prefix: &str,
    x: Var,
    memory: Var,
    heads: usize,
) -> Result<Var> {
    let h = layer_norm(g, s, &format!("{prefix}.ln1"), x)?;
    let a = attention(g, s, &format!("{prefix}.self_attn"), h, h, heads, true)?;
    let x = g.add(x, a)?;
    let h = layer_norm(g, s, &format!("{prefix}.ln2"), x)?;
    let c = attention(g, s, &format!("{prefix}.cross_attn"), h, memory, heads, false)?;
    let x = g.add(x, c)?;
    let h = layer_norm(g, s, &format!("{prefix}.ln3"), x)?;
    let m = mlp(g, s, &format!("{prefix}.mlp"), h)?;
    g.add(x, m)
}

pub fn init_decoder_block(store: &mut ParamStore, seed: u64, prefix: &str, dim: usize, ratio: usize) -> Result<()> {
    init_layer_norm(store, &format!("{prefix}.ln1"), dim)?;
    init_attention(store, seed, &format!("{prefix}.self_attn"), dim)?;
    init_layer_norm(store, &format!("{prefix}.ln2"), dim)?;
    init_attention(store, seed, &format!("{prefix}.cross_attn"), dim)?;
    init_layer_norm(store, &format!("{prefix}.ln3"), dim)?;
    init_mlp(store, seed, &format!("{prefix}.mlp"), dim, ratio)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trunc_normal_is_bounded_and_keyed_by_name() {
        let a = trunc_normal(3, "x.w", &[64, 64], 0.02);
        assert!(a.data().iter().all(|v| v.abs() <= 0.04));
        let mean = a.data().iter().sum::<f64>() / 4096.0;
        let var = a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4096.0;
        // Truncation at 2σ shrinks the std to ~0.88σ.
        assert!((var.sqrt() - 0.0176).abs() < 0.001, "{}", var.sqrt());
        assert_eq!(a, trunc_normal(3, "x.w", &[64, 64], 0.02));
        assert_ne!(a, trunc_normal(3, "y.w", &[64, 64], 0.02));
    }
}
