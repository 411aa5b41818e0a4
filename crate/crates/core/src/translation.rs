//! Tokenizer, text encoder/decoder and the video-to-text translation model.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoders::{self, EncoderConfig, SHARED, SPATIAL, SPATIOTEMPORAL, TEMPORAL_RES, TEMPORAL_ST};
use crate::error::{Error, Result};
use crate::fusion::{self, FusionConfig};
use crate::nn::{self, StackDims};
use crate::substrate::{Array, Checkpoint, Graph, Init, Mode, ParamStore, Var};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const MASK: usize = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<mask>"];

pub const TOK_EMB: &str = "tok_emb";
pub const TEXT_ENCODER: &str = "txt";
pub const DECODER: &str = "dec";
pub const OUT_PROJ: &str = "out_proj";
pub const ENCODER: &str = "enc";

pub fn is_special(id: usize) -> bool {
    id < SPECIAL_TOKENS.len()
}

/// Word-level vocabulary: the special tokens followed by the training words
/// in order of decreasing frequency, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Tokenizer {
    pub fn build<S: AsRef<[String]>>(sentences: &[S]) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::InvalidArgument("tokenizer needs at least one sentence".into()));
        }
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for s in sentences {
            for w in s.as_ref() {
                *freq.entry(w.as_str()).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(&str, usize)> = freq.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w.to_string()))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len() || tokens[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS {
            return Err(Error::Parse("vocabulary must start with the special tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Parse(format!("invalid token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Parse(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    /// `BOS w_1 .. w_U EOS`.
    pub fn encode(&self, words: &[String]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(words.len() + 2);
        ids.push(BOS);
        ids.extend(words.iter().map(|w| self.id(w)));
        ids.push(EOS);
        ids
    }

    /// Drops BOS and PAD and stops at the first EOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .copied()
            .take_while(|&i| i != EOS)
            .filter(|&i| i != BOS && i != PAD)
            .map(|i| self.tokens.get(i).cloned().unwrap_or_else(|| SPECIAL_TOKENS[UNK].to_string()))
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.split(' ').map(str::to_string).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub text_layers: usize,
    pub decoder_layers: usize,
    /// Longest sentence in words, excluding BOS and EOS.
    pub max_len: usize,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            d_ff: 128,
            heads: 4,
            text_layers: 2,
            decoder_layers: 3,
            max_len: 24,
        }
    }
}

impl TextConfig {
    pub fn text_dims(&self) -> StackDims {
        StackDims {
            d_model: self.d_model,
            d_ff: self.d_ff,
            heads: self.heads,
            layers: self.text_layers,
        }
    }

    pub fn decoder_dims(&self) -> StackDims {
        StackDims {
            d_model: self.d_model,
            d_ff: self.d_ff,
            heads: self.heads,
            layers: self.decoder_layers,
        }
    }

    pub fn check_len(&self, ids: &[usize]) -> Result<()> {
        if ids.len() > self.max_len + 2 {
            return Err(Error::InvalidArgument(format!(
                "sentence of {} tokens exceeds max_len {}",
                ids.len().saturating_sub(2),
                self.max_len
            )));
        }
        Ok(())
    }
}

/// Token embeddings, text encoder, decoder and output projection.
pub fn init_text_model(p: &mut ParamStore, cfg: &TextConfig, vocab: usize, seed: u64) -> Result<()> {
    let d = cfg.d_model;
    p.init(TOK_EMB, &[vocab, d], Init::Normal(1.0 / (d as f64).sqrt()), seed)?;
    nn::init_encoder(p, TEXT_ENCODER, cfg.text_dims(), seed)?;
    nn::init_decoder(p, DECODER, cfg.decoder_dims(), seed)?;
    nn::init_linear(p, OUT_PROJ, d, vocab, seed)
}

pub fn embed(g: &mut Graph, p: &ParamStore, ids: &[usize]) -> Result<Var> {
    let table = g.param(p, TOK_EMB)?;
    let d = g.shape(table)[1];
    let rows = g.gather_rows(table, ids)?;
    g.scale(rows, (d as f64).sqrt())
}

pub fn text_encode(g: &mut Graph, p: &ParamStore, cfg: &TextConfig, ids: &[usize]) -> Result<Var> {
    cfg.check_len(ids)?;
    let x = embed(g, p, ids)?;
    nn::encoder(g, p, TEXT_ENCODER, cfg.text_dims(), x)
}

/// Next-token logits `[U, vocab]` for decoder inputs `ids`, plus each layer's
/// cross-attention node.
pub fn decoder_logits(
    g: &mut Graph,
    p: &ParamStore,
    cfg: &TextConfig,
    memory: Var,
    ids: &[usize],
) -> Result<(Var, Vec<Var>)> {
    let x = embed(g, p, ids)?;
    let (h, cross) = nn::decoder(g, p, DECODER, cfg.decoder_dims(), x, memory)?;
    Ok((nn::linear(g, p, OUT_PROJ, h)?, cross))
}

/// Teacher-forced logits for an encoded sentence `BOS .. EOS` and the
/// matching next-token targets (PAD positions excluded).
pub fn teacher_forced(
    g: &mut Graph,
    p: &ParamStore,
    cfg: &TextConfig,
    memory: Var,
    ids: &[usize],
) -> Result<(Var, Vec<Option<usize>>)> {
    if ids.len() < 2 {
        return Err(Error::SequenceTooShort { op: "teacher_forced", len: ids.len(), min: 2 });
    }
    cfg.check_len(ids)?;
    let (logits, _) = decoder_logits(g, p, cfg, memory, &ids[..ids.len() - 1])?;
    let targets = ids[1..].iter().map(|&t| (t != PAD).then_some(t)).collect();
    Ok((logits, targets))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branches {
    Dual,
    Spatial,
    Spatiotemporal,
}

impl fmt::Display for Branches {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branches::Dual => "dual",
            Branches::Spatial => "spatial",
            Branches::Spatiotemporal => "spatiotemporal",
        })
    }
}

impl FromStr for Branches {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(Branches::Dual),
            "spatial" => Ok(Branches::Spatial),
            "spatiotemporal" => Ok(Branches::Spatiotemporal),
            other => Err(Error::ConfigValue(format!("unknown encoder branch selection {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationConfig {
    pub encoder: EncoderConfig,
    pub text: TextConfig,
    pub fusion: FusionConfig,
    pub branches: Branches,
}

impl TranslationConfig {
    fn adapter_in(&self) -> usize {
        match self.branches {
            Branches::Dual => self.fusion.mode.fused_dim(self.encoder.d_model),
            _ => self.encoder.d_model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.text.d_model != self.encoder.d_model || self.text.heads == 0 || self.text.d_model % self.text.heads != 0 {
            return Err(Error::ConfigValue(format!(
                "text d_model {} / heads {} incompatible with encoder d_model {}",
                self.text.d_model, self.text.heads, self.encoder.d_model
            )));
        }
        if self.text.decoder_layers == 0 || self.text.text_layers == 0 || self.text.max_len == 0 {
            return Err(Error::ConfigValue("text layer counts and max_len must be positive".into()));
        }
        Ok(())
    }
}

/// Whether a translation parameter or buffer is copied from pretraining, and
/// under which pretraining name.
pub fn pretrained_source(name: &str) -> Option<String> {
    if let Some(rest) = name.strip_prefix(&format!("{ENCODER}.")) {
        return Some(format!("{SHARED}.{rest}"));
    }
    let transferred = [SPATIAL, SPATIOTEMPORAL, TEMPORAL_RES, TEMPORAL_ST, DECODER];
    let hit = transferred.iter().any(|p| name.starts_with(&format!("{p}.")))
        || name == TOK_EMB
        || name.starts_with(&format!("{OUT_PROJ}."));
    hit.then(|| name.to_string())
}

/// Fresh translation parameters: visual branches, translation encoder
/// (shaped like the shared encoder), decoder, fusion and adapter.
pub fn init_translation(cfg: &TranslationConfig, vocab: usize, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut p = ParamStore::new();
    encoders::init_spatial(&mut p, &cfg.encoder, seed)?;
    encoders::init_spatiotemporal(&mut p, &cfg.encoder, seed)?;
    encoders::init_temporal(&mut p, TEMPORAL_RES, cfg.encoder.d_spatial, cfg.encoder.d_model, seed)?;
    encoders::init_temporal(&mut p, TEMPORAL_ST, cfg.encoder.d_spatiotemporal, cfg.encoder.d_model, seed)?;
    nn::init_encoder(&mut p, ENCODER, cfg.encoder.shared_dims(), seed)?;
    let d = cfg.text.d_model;
    p.init(TOK_EMB, &[vocab, d], Init::Normal(1.0 / (d as f64).sqrt()), seed)?;
    nn::init_decoder(&mut p, DECODER, cfg.text.decoder_dims(), seed)?;
    nn::init_linear(&mut p, OUT_PROJ, d, vocab, seed)?;
    if cfg.branches == Branches::Dual {
        fusion::init_fusion(&mut p, &cfg.fusion, d, seed)?;
    }
    fusion::init_adapter(&mut p, cfg.adapter_in(), d, seed)?;
    Ok(p)
}

/// Fresh translation parameters with every transferable entry overwritten
/// from the pretraining store.
pub fn init_from_pretraining(pre: &ParamStore, cfg: &TranslationConfig, vocab: usize, seed: u64) -> Result<ParamStore> {
    let mut p = init_translation(cfg, vocab, seed)?;
    let names: Vec<String> = p.names().map(str::to_string).collect();
    for name in names {
        let Some(src) = pretrained_source(&name) else { continue };
        let value = pre.value(&src).map_err(|_| Error::Checkpoint {
            name: src.clone(),
            reason: "missing from pretraining checkpoint".into(),
        })?;
        let dst = p.value_mut(&name).expect("listed");
        if value.shape() != dst.shape() {
            return Err(Error::Checkpoint {
                name: src,
                reason: format!("shape {:?}, expected {:?}", value.shape(), dst.shape()),
            });
        }
        *dst = value.clone();
    }
    let buffers: Vec<(String, Array)> = p.buffers().map(|(k, v)| (k.to_string(), v.clone())).collect();
    for (name, cur) in buffers {
        let Some(src) = pretrained_source(&name) else { continue };
        let value = pre.buffer(&src).ok_or_else(|| Error::Checkpoint {
            name: src.clone(),
            reason: "missing from pretraining checkpoint".into(),
        })?;
        if value.shape() != cur.shape() {
            return Err(Error::Checkpoint {
                name: src,
                reason: format!("shape {:?}, expected {:?}", value.shape(), cur.shape()),
            });
        }
        p.set_buffer(&name, value.clone());
    }
    Ok(p)
}

/// Branch features after the temporal encoders, computed only for the
/// branches the configuration uses.
pub struct BatchFeatures {
    pub spatial: Option<Vec<Var>>,
    pub spatiotemporal: Option<Vec<Var>>,
}

pub fn encode_batch(g: &mut Graph, p: &ParamStore, cfg: &TranslationConfig, videos: &[Array]) -> Result<BatchFeatures> {
    let enc = &cfg.encoder;
    let spatial = if cfg.branches != Branches::Spatiotemporal {
        let seqs = videos
            .iter()
            .map(|v| encoders::spatial_encode(g, p, enc, v))
            .collect::<Result<Vec<_>>>()?;
        Some(encoders::temporal_encode(g, p, TEMPORAL_RES, &seqs)?)
    } else {
        None
    };
    let spatiotemporal = if cfg.branches != Branches::Spatial {
        let seqs = videos
            .iter()
            .map(|v| encoders::spatiotemporal_encode(g, p, enc, v))
            .collect::<Result<Vec<_>>>()?;
        Some(encoders::temporal_encode(g, p, TEMPORAL_ST, &seqs)?)
    } else {
        None
    };
    Ok(BatchFeatures { spatial, spatiotemporal })
}

/// Fusion, adapter and translation encoder for sample `i` of a batch.
pub fn memory(g: &mut Graph, p: &ParamStore, cfg: &TranslationConfig, feats: &BatchFeatures, i: usize) -> Result<Var> {
    let pick = |v: &Option<Vec<Var>>| v.as_ref().map(|xs| xs[i]);
    let x = match (cfg.branches, pick(&feats.spatial), pick(&feats.spatiotemporal)) {
        (Branches::Dual, Some(a), Some(b)) => fusion::fuse(g, p, &cfg.fusion, cfg.encoder.heads, a, b)?,
        (Branches::Spatial, Some(a), _) => a,
        (Branches::Spatiotemporal, _, Some(b)) => b,
        _ => return Err(Error::InvalidArgument("features missing for the selected branches".into())),
    };
    let x = fusion::vl_adapter(g, p, x)?;
    nn::encoder(g, p, ENCODER, cfg.encoder.shared_dims(), x)
}

/// Mean next-token cross-entropy over all non-PAD target positions of the
/// batch.
pub fn translation_loss(
    g: &mut Graph,
    p: &ParamStore,
    cfg: &TranslationConfig,
    videos: &[Array],
    targets: &[Vec<usize>],
) -> Result<Var> {
    if videos.is_empty() || videos.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "batch of {} videos and {} targets",
            videos.len(),
            targets.len()
        )));
    }
    let feats = encode_batch(g, p, cfg, videos)?;
    let mut all_logits = Vec::with_capacity(videos.len());
    let mut all_targets = Vec::new();
    for (i, ids) in targets.iter().enumerate() {
        let mem = memory(g, p, cfg, &feats, i)?;
        let (logits, t) = teacher_forced(g, p, &cfg.text, mem, ids)?;
        all_logits.push(logits);
        all_targets.extend(t);
    }
    let logits = g.concat_rows(&all_logits)?;
    g.cross_entropy(logits, &all_targets)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|v| v - lse).collect()
}

fn eval_memory(g: &mut Graph, p: &ParamStore, cfg: &TranslationConfig, video: &Array) -> Result<Var> {
    let feats = encode_batch(g, p, cfg, std::slice::from_ref(video))?;
    memory(g, p, cfg, &feats, 0)
}

/// Argmax decoding from BOS until EOS or `max_len` tokens. The result
/// excludes BOS and EOS.
pub fn greedy_decode(p: &ParamStore, cfg: &TranslationConfig, video: &Array, max_len: usize) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let mut g = Graph::new(Mode::Eval);
    let mem = eval_memory(&mut g, p, cfg, video)?;
    let mut ids = vec![BOS];
    let mut out = Vec::new();
    while out.len() < max_len.min(cfg.text.max_len) {
        let (logits, _) = decoder_logits(&mut g, p, &cfg.text, mem, &ids)?;
        let l = g.value(logits);
        let next = argmax(l.row(l.rows() - 1));
        if next == EOS {
            break;
        }
        ids.push(next);
        out.push(next);
    }
    Ok(out)
}

/// Beam search over summed log-probabilities; finished hypotheses compete
/// with the live beam at every step.
pub fn beam_decode(
    p: &ParamStore,
    cfg: &TranslationConfig,
    video: &Array,
    max_len: usize,
    width: usize,
) -> Result<Vec<usize>> {
    if max_len == 0 || width == 0 {
        return Err(Error::InvalidArgument("beam search needs max_len and width of at least 1".into()));
    }
    let mut g = Graph::new(Mode::Eval);
    let mem = eval_memory(&mut g, p, cfg, video)?;
    let limit = max_len.min(cfg.text.max_len);
    let mut beam: Vec<(f64, Vec<usize>)> = vec![(0.0, vec![BOS])];
    let mut finished: Vec<(f64, Vec<usize>)> = Vec::new();
    for _ in 0..limit {
        let mut cands: Vec<(f64, Vec<usize>)> = Vec::new();
        for (score, ids) in &beam {
            let (logits, _) = decoder_logits(&mut g, p, &cfg.text, mem, ids)?;
            let l = g.value(logits);
            let lp = log_softmax(l.row(l.rows() - 1));
            for (tok, &v) in lp.iter().enumerate() {
                let mut next = ids.clone();
                next.push(tok);
                cands.push((score + v, next));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        beam.clear();
        for (s, ids) in cands {
            if beam.len() >= width {
                break;
            }
            if *ids.last().expect("non-empty") == EOS {
                finished.push((s, ids));
            } else {
                beam.push((s, ids));
            }
        }
        let best_live = beam.first().map(|b| b.0).unwrap_or(f64::NEG_INFINITY);
        if finished.iter().any(|f| f.0 >= best_live) {
            break;
        }
    }
    finished.extend(beam);
    finished.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let best = &finished[0].1;
    Ok(best[1..].iter().copied().take_while(|&t| t != EOS).collect())
}

/// Final-decoder-layer cross-attention `[L', U]` for already generated
/// `tokens`, averaged over heads. Column k is the attention of the step that
/// produced token k.
pub fn export_attention(p: &ParamStore, cfg: &TranslationConfig, video: &Array, tokens: &[usize]) -> Result<Array> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("no generated tokens to explain".into()));
    }
    let mut g = Graph::new(Mode::Eval);
    let mem = eval_memory(&mut g, p, cfg, video)?;
    let mut ids = vec![BOS];
    ids.extend_from_slice(&tokens[..tokens.len() - 1]);
    let (_, cross) = decoder_logits(&mut g, p, &cfg.text, mem, &ids)?;
    let last = *cross.last().ok_or_else(|| Error::InvalidArgument("decoder has no layers".into()))?;
    let probs = g.attention_probs(last).expect("attention node");
    let (h, u, l) = (probs.shape()[0], probs.shape()[1], probs.shape()[2]);
    let mut out = vec![0.0; l * u];
    for head in 0..h {
        for k in 0..u {
            for f in 0..l {
                out[f * u + k] += probs.data()[(head * u + k) * l + f] / h as f64;
            }
        }
    }
    Array::new(vec![l, u], out)
}

pub fn save_tokenizer(ck: &mut Checkpoint, tok: &Tokenizer) {
    ck.set_meta("tokenizer", tok.to_text());
}

pub fn load_tokenizer(ck: &Checkpoint) -> Result<Tokenizer> {
    let text = ck.meta("tokenizer").ok_or_else(|| Error::Checkpoint {
        name: "tokenizer".into(),
        reason: "missing".into(),
    })?;
    Tokenizer::from_text(text)
}
