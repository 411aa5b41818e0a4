//! Contrastive pretraining objectives: pooled embeddings, symmetric InfoNCE
//! over video/text and video/video pairs, and masked-text reconstruction.

use rand::seq::index::sample;

use crate::encoders::{self, EncoderConfig};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::substrate::{Array, Graph, Mode, ParamStore, Var};
use crate::translation::{self, is_special, TextConfig, MASK};

pub const LOGIT_SCALE: &str = "logit_scale";
pub const INIT_TEMPERATURE: f64 = 0.07;
pub const MIN_TEMPERATURE: f64 = 0.01;
pub const MASK_RATIO: f64 = 0.15;

/// Mean over time then unit L2 norm per sample: `N x [L, d] -> [N, d]`.
pub fn pool_and_normalize(g: &mut Graph, seqs: &[Var]) -> Result<Var> {
    if seqs.is_empty() {
        return Err(Error::InvalidArgument("empty embedding batch".into()));
    }
    let pooled = seqs.iter().map(|&s| g.mean_rows(s)).collect::<Result<Vec<_>>>()?;
    let m = g.concat_rows(&pooled)?;
    g.l2_normalize_rows(m)
}

/// `M[i][j] = <a_i, b_j>`.
pub fn similarity(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape("similarity", g.shape(a), g.shape(b)));
    }
    g.matmul_nt(a, b)
}

/// Symmetric InfoNCE over `m * inv_tau`, diagonal pairs positive.
pub fn infonce_symmetric(g: &mut Graph, m: Var, inv_tau: Var) -> Result<Var> {
    let shape = g.shape(m).to_vec();
    if shape.len() != 2 || shape[0] != shape[1] || shape[0] == 0 {
        return Err(Error::shape("infonce_symmetric", &shape, &[shape[0], shape[0]]));
    }
    let n = shape[0];
    let targets: Vec<Option<usize>> = (0..n).map(Some).collect();
    let logits = g.scale_by(m, inv_tau)?;
    let rows = g.cross_entropy(logits, &targets)?;
    let lt = g.transpose(logits)?;
    let cols = g.cross_entropy(lt, &targets)?;
    let both = g.add(rows, cols)?;
    g.scale(both, 0.5)
}

/// Plain evaluation of the loss at temperature `tau`.
pub fn infonce_value(m: &Array, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let mut g = Graph::new(Mode::Eval);
    let mv = g.input(m.clone())?;
    let s = g.input(Array::scalar(1.0 / tau))?;
    let l = infonce_symmetric(&mut g, mv, s)?;
    Ok(g.value(l).item())
}

pub fn cross_modal_loss(g: &mut Graph, z_video: Var, z_text: Var, inv_tau: Var) -> Result<Var> {
    let m = similarity(g, z_video, z_text)?;
    infonce_symmetric(g, m, inv_tau)
}

/// Rows index the spatial view, columns the spatio-temporal view.
pub fn inter_modal_loss(g: &mut Graph, z_res: Var, z_st: Var, inv_tau: Var) -> Result<Var> {
    let m = similarity(g, z_res, z_st)?;
    infonce_symmetric(g, m, inv_tau)
}

pub fn init_logit_scale(p: &mut ParamStore, tau: f64) -> Result<()> {
    if !(tau >= MIN_TEMPERATURE) {
        return Err(Error::InvalidArgument(format!("initial temperature {tau} below {MIN_TEMPERATURE}")));
    }
    p.insert(LOGIT_SCALE, Array::new(vec![1], vec![(1.0 / tau).ln()])?)
}

/// `1 / tau = exp(s)`.
pub fn inverse_temperature(g: &mut Graph, p: &ParamStore) -> Result<Var> {
    let s = g.param(p, LOGIT_SCALE)?;
    g.exp(s)
}

pub fn temperature(p: &ParamStore) -> Result<f64> {
    Ok((-p.value(LOGIT_SCALE)?.item()).exp())
}

/// Keeps `tau >= MIN_TEMPERATURE`.
pub fn clamp_logit_scale(p: &mut ParamStore) {
    if let Some(s) = p.value_mut(LOGIT_SCALE) {
        let max = (1.0 / MIN_TEMPERATURE).ln();
        for v in s.data_mut() {
            *v = v.min(max);
        }
    }
}

/// Replaces `round(ratio * U)` of the non-special tokens with MASK.
pub fn mask_tokens(ids: &[usize], ratio: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("mask ratio {ratio} outside [0, 1]")));
    }
    let candidates: Vec<usize> = (0..ids.len()).filter(|&i| !is_special(ids[i])).collect();
    let k = (ratio * candidates.len() as f64).round() as usize;
    let mut rng = rng_for(seed, "mask", 0);
    let mut out = ids.to_vec();
    for j in sample(&mut rng, candidates.len(), k) {
        out[candidates[j]] = MASK;
    }
    Ok(out)
}

/// Text encoder on `masked`, decoder teacher-forced against `original`.
pub fn reconstruction_loss(
    g: &mut Graph,
    p: &ParamStore,
    cfg: &TextConfig,
    masked: &[Vec<usize>],
    original: &[Vec<usize>],
) -> Result<Var> {
    if masked.is_empty() || masked.len() != original.len() {
        return Err(Error::InvalidArgument("masked and original batches differ in size".into()));
    }
    let mut logits = Vec::with_capacity(masked.len());
    let mut targets = Vec::new();
    for (m, o) in masked.iter().zip(original) {
        let mem = translation::text_encode(g, p, cfg, m)?;
        let (l, t) = translation::teacher_forced(g, p, cfg, mem, o)?;
        logits.push(l);
        targets.extend(t);
    }
    let all = g.concat_rows(&logits)?;
    g.cross_entropy(all, &targets)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub encoder: EncoderConfig,
    pub text: TextConfig,
    pub mask_ratio: f64,
    pub lambda_rec: f64,
    pub tau_init: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            text: TextConfig::default(),
            mask_ratio: MASK_RATIO,
            lambda_rec: 1.0,
            tau_init: INIT_TEMPERATURE,
        }
    }
}

pub fn init_pretraining(cfg: &PretrainConfig, vocab: usize, seed: u64) -> Result<ParamStore> {
    if cfg.text.d_model != cfg.encoder.d_model {
        return Err(Error::ConfigValue("text and visual d_model differ".into()));
    }
    let mut p = ParamStore::new();
    encoders::init_visual(&mut p, &cfg.encoder, seed)?;
    translation::init_text_model(&mut p, &cfg.text, vocab, seed)?;
    init_logit_scale(&mut p, cfg.tau_init)?;
    Ok(p)
}

/// `L_cross(res) + L_cross(st) + L_inter + lambda_rec * recon`.
pub fn pretraining_loss(g: &mut Graph, terms: [Var; 3], recon: Option<(Var, f64)>) -> Result<Var> {
    let mut total = g.add(terms[0], terms[1])?;
    total = g.add(total, terms[2])?;
    if let Some((r, lambda)) = recon {
        if lambda != 0.0 {
            let w = g.scale(r, lambda)?;
            total = g.add(total, w)?;
        }
    }
    Ok(total)
}

/// Loss nodes of one pretraining batch.
pub struct PretrainTerms {
    pub cross_res: Var,
    pub cross_st: Var,
    pub inter: Var,
    pub recon: Option<Var>,
    pub total: Var,
}

/// Pooled shared-encoder outputs of both branches, `[N, d]` each.
pub fn video_embeddings(g: &mut Graph, p: &ParamStore, cfg: &EncoderConfig, videos: &[Array]) -> Result<(Var, Var)> {
    let feats = encoders::encode_videos(g, p, cfg, videos)?;
    let res = feats
        .spatial
        .iter()
        .map(|&s| encoders::shared_encode(g, p, cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let st = feats
        .spatiotemporal
        .iter()
        .map(|&s| encoders::shared_encode(g, p, cfg, s))
        .collect::<Result<Vec<_>>>()?;
    Ok((pool_and_normalize(g, &res)?, pool_and_normalize(g, &st)?))
}

pub fn text_embeddings(g: &mut Graph, p: &ParamStore, cfg: &TextConfig, ids: &[Vec<usize>]) -> Result<Var> {
    let seqs = ids
        .iter()
        .map(|s| translation::text_encode(g, p, cfg, s))
        .collect::<Result<Vec<_>>>()?;
    pool_and_normalize(g, &seqs)
}

pub fn pretraining_terms(
    g: &mut Graph,
    p: &ParamStore,
    cfg: &PretrainConfig,
    videos: &[Array],
    ids: &[Vec<usize>],
    mask_seed: u64,
) -> Result<PretrainTerms> {
    if videos.len() != ids.len() || videos.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "batch of {} videos and {} sentences",
            videos.len(),
            ids.len()
        )));
    }
    let (z_res, z_st) = video_embeddings(g, p, &cfg.encoder, videos)?;
    let z_text = text_embeddings(g, p, &cfg.text, ids)?;
    let inv_tau = inverse_temperature(g, p)?;
    let cross_res = cross_modal_loss(g, z_res, z_text, inv_tau)?;
    let cross_st = cross_modal_loss(g, z_st, z_text, inv_tau)?;
    let inter = inter_modal_loss(g, z_res, z_st, inv_tau)?;
    let recon = if cfg.lambda_rec != 0.0 {
        let masked = ids
            .iter()
            .enumerate()
            .map(|(i, s)| mask_tokens(s, cfg.mask_ratio, crate::seed::derive_seed(mask_seed, "mask", i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Some(reconstruction_loss(g, p, &cfg.text, &masked, ids)?)
    } else {
        None
    };
    let total = pretraining_loss(g, [cross_res, cross_st, inter], recon.map(|r| (r, cfg.lambda_rec)))?;
    Ok(PretrainTerms { cross_res, cross_st, inter, recon, total })
}

/// Video embeddings for retrieval: the renormalized sum of both branches.
pub fn retrieval_embeddings(
    p: &ParamStore,
    cfg: &PretrainConfig,
    videos: &[Array],
    ids: &[Vec<usize>],
) -> Result<(Array, Array)> {
    let mut g = Graph::new(Mode::Eval);
    let (res, st) = video_embeddings(&mut g, p, &cfg.encoder, videos)?;
    let both = g.add(res, st)?;
    let v = g.l2_normalize_rows(both)?;
    let t = text_embeddings(&mut g, p, &cfg.text, ids)?;
    Ok((g.value(v).clone(), g.value(t).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_identity() {
        let m = Array::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let want = (1.0 + (-1f64).exp()).ln();
        assert!((infonce_value(&m, 1.0).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_temperature_rejected() {
        let m = Array::from_rows(&[vec![1.0]]).unwrap();
        assert!(infonce_value(&m, 0.0).is_err());
        assert!(infonce_value(&m, -1.0).is_err());
    }

    #[test]
    fn mask_extremes() {
        let ids = vec![1, 7, 8, 9, 2];
        assert_eq!(mask_tokens(&ids, 0.0, 3).unwrap(), ids);
        assert_eq!(mask_tokens(&ids, 1.0, 3).unwrap(), vec![1, MASK, MASK, MASK, 2]);
        assert_eq!(mask_tokens(&ids, 0.5, 9).unwrap(), mask_tokens(&ids, 0.5, 9).unwrap());
    }

    #[test]
    fn logit_scale_clamp() {
        let mut p = ParamStore::new();
        init_logit_scale(&mut p, INIT_TEMPERATURE).unwrap();
        assert!((temperature(&p).unwrap() - INIT_TEMPERATURE).abs() < 1e-15);
        *p.value_mut(LOGIT_SCALE).unwrap() = Array::new(vec![1], vec![10.0]).unwrap();
        clamp_logit_scale(&mut p);
        assert!((temperature(&p).unwrap() - MIN_TEMPERATURE).abs() < 1e-15);
    }
}
