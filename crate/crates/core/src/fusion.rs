//! Aggregation of the two visual streams and the visual-language adapter.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoders::Branch;
use crate::error::{Error, Result};
use crate::nn;
use crate::substrate::{Graph, ParamStore, Var};

pub const FUSION: &str = "fusion";
pub const ADAPTER: &str = "adapter";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Sum,
    Concat,
    Xattn,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Sum, FusionMode::Concat, FusionMode::Xattn];

    pub fn fused_dim(self, d_model: usize) -> usize {
        match self {
            FusionMode::Concat => 2 * d_model,
            _ => d_model,
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Sum => "sum",
            FusionMode::Concat => "concat",
            FusionMode::Xattn => "xattn",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(FusionMode::Sum),
            "concat" => Ok(FusionMode::Concat),
            "xattn" => Ok(FusionMode::Xattn),
            other => Err(Error::ConfigValue(format!("unknown fusion mode {other:?}"))),
        }
    }
}

pub fn fuse_sum(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    g.add(a, b)
}

/// Channel concatenation, `a` first.
pub fn fuse_concat(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    g.concat_cols(a, b)
}

pub fn init_xattn(p: &mut ParamStore, d_model: usize, seed: u64) -> Result<()> {
    nn::init_mha(p, &format!("{FUSION}.attn"), d_model, seed)?;
    nn::init_layer_norm(p, &format!("{FUSION}.ln"), d_model, seed)
}

/// `LN(a + MHA(q = a, kv = b))`. Also returns the attention node.
pub fn fuse_xattn(g: &mut Graph, p: &ParamStore, a: Var, b: Var, heads: usize) -> Result<(Var, Var)> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape("fuse_xattn", g.shape(a), g.shape(b)));
    }
    let (att, probs) = nn::mha(g, p, &format!("{FUSION}.attn"), a, b, heads, false)?;
    let r = g.add(a, att)?;
    Ok((nn::layer_norm(g, p, &format!("{FUSION}.ln"), r)?, probs))
}

pub fn init_adapter(p: &mut ParamStore, d_in: usize, d_model: usize, seed: u64) -> Result<()> {
    nn::init_linear(p, &format!("{ADAPTER}.fc"), d_in, d_model, seed)?;
    nn::init_layer_norm(p, &format!("{ADAPTER}.ln"), d_model, seed)
}

/// Linear, layer norm, ReLU.
pub fn vl_adapter(g: &mut Graph, p: &ParamStore, x: Var) -> Result<Var> {
    let h = nn::linear(g, p, &format!("{ADAPTER}.fc"), x)?;
    let h = nn::layer_norm(g, p, &format!("{ADAPTER}.ln"), h)?;
    g.relu(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// Stream that supplies the cross-attention queries.
    pub query: Branch,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::Concat,
            query: Branch::Spatial,
        }
    }
}

pub fn init_fusion(p: &mut ParamStore, cfg: &FusionConfig, d_model: usize, seed: u64) -> Result<()> {
    if cfg.mode == FusionMode::Xattn {
        init_xattn(p, d_model, seed)?;
    }
    Ok(())
}

/// Fuses the spatial and spatio-temporal streams of one sample.
pub fn fuse(g: &mut Graph, p: &ParamStore, cfg: &FusionConfig, heads: usize, spatial: Var, st: Var) -> Result<Var> {
    if g.shape(spatial)[0] != g.shape(st)[0] {
        return Err(Error::shape("fuse", g.shape(spatial), g.shape(st)));
    }
    match cfg.mode {
        FusionMode::Sum => fuse_sum(g, spatial, st),
        FusionMode::Concat => fuse_concat(g, spatial, st),
        FusionMode::Xattn => {
            let (q, kv) = match cfg.query {
                Branch::Spatial => (spatial, st),
                Branch::Spatiotemporal => (st, spatial),
            };
            Ok(fuse_xattn(g, p, q, kv, heads)?.0)
        }
    }
}
