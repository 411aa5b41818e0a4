//! Layer building blocks shared by the encoders, fusion and translation
//! models. Every block reads its weights from a [`ParamStore`] under a name
//! prefix, so the same function serves training, evaluation and transfer.

use crate::error::Result;
use crate::substrate::{Array, Graph, Init, ParamStore, Var};

pub fn init_linear(p: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, seed: u64) -> Result<()> {
    p.init(&format!("{prefix}.w"), &[d_in, d_out], Init::Xavier { fan_in: d_in, fan_out: d_out }, seed)?;
    p.init(&format!("{prefix}.b"), &[d_out], Init::Zeros, seed)
}

/// `x [r, d_in] -> [r, d_out]`.
pub fn linear(g: &mut Graph, p: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(p, &format!("{prefix}.w"))?;
    let b = g.param(p, &format!("{prefix}.b"))?;
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

pub fn init_layer_norm(p: &mut ParamStore, prefix: &str, d: usize, seed: u64) -> Result<()> {
    p.init(&format!("{prefix}.gamma"), &[d], Init::Ones, seed)?;
    p.init(&format!("{prefix}.beta"), &[d], Init::Zeros, seed)
}

pub fn layer_norm(g: &mut Graph, p: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let gamma = g.param(p, &format!("{prefix}.gamma"))?;
    let beta = g.param(p, &format!("{prefix}.beta"))?;
    g.layer_norm(x, gamma, beta)
}

pub fn init_batch_norm(p: &mut ParamStore, prefix: &str, d: usize, seed: u64) -> Result<()> {
    init_layer_norm(p, prefix, d, seed)?;
    p.set_buffer(&format!("{prefix}.running_mean"), Array::zeros(&[d]));
    p.set_buffer(&format!("{prefix}.running_var"), Array::full(&[d], 1.0));
    Ok(())
}

/// Batch statistics in train mode, running statistics in eval mode.
pub fn batch_norm(g: &mut Graph, p: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let gamma = g.param(p, &format!("{prefix}.gamma"))?;
    let beta = g.param(p, &format!("{prefix}.beta"))?;
    let rm = p.buffer(&format!("{prefix}.running_mean"));
    let rv = p.buffer(&format!("{prefix}.running_var"));
    g.batch_norm(x, gamma, beta, prefix, rm.zip(rv))
}

pub fn init_mha(p: &mut ParamStore, prefix: &str, d: usize, seed: u64) -> Result<()> {
    for part in ["q", "k", "v", "o"] {
        init_linear(p, &format!("{prefix}.{part}"), d, d, seed)?;
    }
    Ok(())
}

/// Multi-head attention of `q_in` over `kv_in`. Returns the projected output
/// and the raw attention node, whose probabilities stay readable through
/// [`Graph::attention_probs`].
pub fn mha(
    g: &mut Graph,
    p: &ParamStore,
    prefix: &str,
    q_in: Var,
    kv_in: Var,
    heads: usize,
    causal: bool,
) -> Result<(Var, Var)> {
    let q = linear(g, p, &format!("{prefix}.q"), q_in)?;
    let k = linear(g, p, &format!("{prefix}.k"), kv_in)?;
    let v = linear(g, p, &format!("{prefix}.v"), kv_in)?;
    let a = g.attention(q, k, v, heads, causal)?;
    Ok((linear(g, p, &format!("{prefix}.o"), a)?, a))
}

pub fn init_ffn(p: &mut ParamStore, prefix: &str, d: usize, d_ff: usize, seed: u64) -> Result<()> {
    init_linear(p, &format!("{prefix}.ff1"), d, d_ff, seed)?;
    init_linear(p, &format!("{prefix}.ff2"), d_ff, d, seed)
}

pub fn ffn(g: &mut Graph, p: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(g, p, &format!("{prefix}.ff1"), x)?;
    let h = g.relu(h)?;
    linear(g, p, &format!("{prefix}.ff2"), h)
}

/// Fixed sinusoidal position table `[len, d]`.
pub fn sinusoidal_positions(len: usize, d: usize) -> Array {
    let mut data = vec![0.0; len * d];
    for t in 0..len {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = t as f64 * rate;
            data[t * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Array::new(vec![len, d], data).expect("shape matches data")
}

pub fn add_positions(g: &mut Graph, x: Var) -> Result<Var> {
    let (len, d) = (g.shape(x)[0], g.shape(x)[1]);
    let pe = g.input(sinusoidal_positions(len, d))?;
    g.add(x, pe)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackDims {
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub layers: usize,
}

/// Pre-norm transformer encoder stack with a final layer norm.
pub fn init_encoder(p: &mut ParamStore, prefix: &str, dims: StackDims, seed: u64) -> Result<()> {
    for l in 0..dims.layers {
        let lp = format!("{prefix}.layer{l}");
        init_layer_norm(p, &format!("{lp}.ln1"), dims.d_model, seed)?;
        init_mha(p, &format!("{lp}.attn"), dims.d_model, seed)?;
        init_layer_norm(p, &format!("{lp}.ln2"), dims.d_model, seed)?;
        init_ffn(p, &format!("{lp}.ffn"), dims.d_model, dims.d_ff, seed)?;
    }
    init_layer_norm(p, &format!("{prefix}.ln_f"), dims.d_model, seed)
}

/// Adds positions and runs the stack; `[L, d] -> [L, d]`.
pub fn encoder(g: &mut Graph, p: &ParamStore, prefix: &str, dims: StackDims, x: Var) -> Result<Var> {
    let mut x = add_positions(g, x)?;
    for l in 0..dims.layers {
        let lp = format!("{prefix}.layer{l}");
        let h = layer_norm(g, p, &format!("{lp}.ln1"), x)?;
        let (a, _) = mha(g, p, &format!("{lp}.attn"), h, h, dims.heads, false)?;
        x = g.add(x, a)?;
        let h = layer_norm(g, p, &format!("{lp}.ln2"), x)?;
        let f = ffn(g, p, &format!("{lp}.ffn"), h)?;
        x = g.add(x, f)?;
    }
    layer_norm(g, p, &format!("{prefix}.ln_f"), x)
}

pub fn init_decoder(p: &mut ParamStore, prefix: &str, dims: StackDims, seed: u64) -> Result<()> {
    for l in 0..dims.layers {
        let lp = format!("{prefix}.layer{l}");
        init_layer_norm(p, &format!("{lp}.ln1"), dims.d_model, seed)?;
        init_mha(p, &format!("{lp}.self_attn"), dims.d_model, seed)?;
        init_layer_norm(p, &format!("{lp}.ln2"), dims.d_model, seed)?;
        init_mha(p, &format!("{lp}.cross_attn"), dims.d_model, seed)?;
        init_layer_norm(p, &format!("{lp}.ln3"), dims.d_model, seed)?;
        init_ffn(p, &format!("{lp}.ffn"), dims.d_model, dims.d_ff, seed)?;
    }
    init_layer_norm(p, &format!("{prefix}.ln_f"), dims.d_model, seed)
}

/// Causal pre-norm decoder over target embeddings `x [U, d]` attending to
/// `memory [L, d]`. Also returns the cross-attention node of every layer.
pub fn decoder(
    g: &mut Graph,
    p: &ParamStore,
    prefix: &str,
    dims: StackDims,
    x: Var,
    memory: Var,
) -> Result<(Var, Vec<Var>)> {
    let mut x = add_positions(g, x)?;
    let mut cross = Vec::with_capacity(dims.layers);
    for l in 0..dims.layers {
        let lp = format!("{prefix}.layer{l}");
        let h = layer_norm(g, p, &format!("{lp}.ln1"), x)?;
        let (a, _) = mha(g, p, &format!("{lp}.self_attn"), h, h, dims.heads, true)?;
        x = g.add(x, a)?;
        let h = layer_norm(g, p, &format!("{lp}.ln2"), x)?;
        let (c, attn) = mha(g, p, &format!("{lp}.cross_attn"), h, memory, dims.heads, false)?;
        cross.push(attn);
        x = g.add(x, c)?;
        let h = layer_norm(g, p, &format!("{lp}.ln3"), x)?;
        let f = ffn(g, p, &format!("{lp}.ffn"), h)?;
        x = g.add(x, f)?;
    }
    Ok((layer_norm(g, p, &format!("{prefix}.ln_f"), x)?, cross))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::Mode;

    #[test]
    fn positions_start_with_sin_zero_cos_one() {
        let pe = sinusoidal_positions(3, 4);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.get2(1, 0) - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn encoder_preserves_shape() {
        let dims = StackDims { d_model: 8, d_ff: 16, heads: 2, layers: 2 };
        let mut p = ParamStore::new();
        init_encoder(&mut p, "e", dims, 1).unwrap();
        let mut g = Graph::new(Mode::Eval);
        let x = g.input(Array::full(&[5, 8], 0.3)).unwrap();
        let y = encoder(&mut g, &p, "e", dims, x).unwrap();
        assert_eq!(g.shape(y), &[5, 8]);
    }
}
