//! Visual pathway: a per-frame 2-D CNN branch, a sliding-window 3-D CNN
//! branch, the temporal encoder that shortens each branch by four, and the
//! transformer encoder shared by both branches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, StackDims};
use crate::substrate::{Array, Graph, Init, ParamStore, Var};

pub const SPATIAL: &str = "spatial";
pub const SPATIOTEMPORAL: &str = "st";
pub const TEMPORAL_RES: &str = "temporal_res";
pub const TEMPORAL_ST: &str = "temporal_st";
pub const SHARED: &str = "shared";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Spatial,
    Spatiotemporal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub frame_size: usize,
    pub d_spatial: usize,
    pub d_spatiotemporal: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub window: usize,
    pub stride: usize,
    pub shared_layers: usize,
    pub heads: usize,
    pub spatial_channels: [usize; 3],
    pub st_channels: [usize; 2],
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            frame_size: 32,
            d_spatial: 32,
            d_spatiotemporal: 48,
            d_model: 64,
            d_ff: 128,
            window: 16,
            stride: 6,
            shared_layers: 2,
            heads: 4,
            spatial_channels: [4, 8, 16],
            st_channels: [4, 8],
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigValue(m));
        if !(self.window > self.stride && self.stride >= 1) {
            return bad(format!("window {} must exceed stride {} >= 1", self.window, self.stride));
        }
        if self.window < 13 {
            return bad(format!("window {} too short for the 3-D branch (need >= 13)", self.window));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        if self.frame_size < 18 {
            return bad(format!("frame_size {} too small (need >= 18)", self.frame_size));
        }
        let dims = [self.d_spatial, self.d_spatiotemporal, self.d_model, self.d_ff, self.shared_layers];
        if dims.contains(&0) || self.spatial_channels.contains(&0) || self.st_channels.contains(&0) {
            return bad("encoder dimensions must be positive".into());
        }
        Ok(())
    }

    pub fn shared_dims(&self) -> StackDims {
        StackDims {
            d_model: self.d_model,
            d_ff: self.d_ff,
            heads: self.heads,
            layers: self.shared_layers,
        }
    }

    fn spatial_flat(&self) -> usize {
        let s = (self.frame_size - 1) / 2 + 1;
        let s = s / 2 / 2 / 2;
        self.spatial_channels[2] * s * s
    }

    /// `[depth, side]` after the 3-D stack.
    fn st_grid(&self) -> [usize; 2] {
        let conv1 = |n: usize| (n - 3) / 2 + 1;
        let (d, s) = (conv1(self.window) / 2, conv1(self.frame_size) / 2);
        [d - 2, (s - 2) / 2]
    }

    fn st_flat(&self) -> usize {
        let [d, s] = self.st_grid();
        self.st_channels[1] * d * s * s
    }

    pub fn branch_dim(&self, b: Branch) -> usize {
        match b {
            Branch::Spatial => self.d_spatial,
            Branch::Spatiotemporal => self.d_spatiotemporal,
        }
    }
}

fn init_conv(p: &mut ParamStore, prefix: &str, shape: &[usize], seed: u64) -> Result<()> {
    let fan_in: usize = shape[1..].iter().product();
    p.init(&format!("{prefix}.w"), shape, Init::Normal((2.0 / fan_in as f64).sqrt()), seed)?;
    p.init(&format!("{prefix}.b"), &[shape[0]], Init::Zeros, seed)
}

pub fn init_spatial(p: &mut ParamStore, cfg: &EncoderConfig, seed: u64) -> Result<()> {
    let c = cfg.spatial_channels;
    init_conv(p, &format!("{SPATIAL}.conv1"), &[c[0], 1, 3, 3], seed)?;
    init_conv(p, &format!("{SPATIAL}.conv2"), &[c[1], c[0], 3, 3], seed)?;
    init_conv(p, &format!("{SPATIAL}.conv3"), &[c[2], c[1], 3, 3], seed)?;
    nn::init_linear(p, &format!("{SPATIAL}.head"), cfg.spatial_flat(), cfg.d_spatial, seed)
}

pub fn init_spatiotemporal(p: &mut ParamStore, cfg: &EncoderConfig, seed: u64) -> Result<()> {
    let c = cfg.st_channels;
    init_conv(p, &format!("{SPATIOTEMPORAL}.conv1"), &[c[0], 1, 3, 3, 3], seed)?;
    init_conv(p, &format!("{SPATIOTEMPORAL}.conv2"), &[c[1], c[0], 3, 3, 3], seed)?;
    nn::init_linear(p, &format!("{SPATIOTEMPORAL}.head"), cfg.st_flat(), cfg.d_spatiotemporal, seed)
}

pub fn init_temporal(p: &mut ParamStore, prefix: &str, d_in: usize, d_model: usize, seed: u64) -> Result<()> {
    init_conv(p, &format!("{prefix}.conv1"), &[d_model, d_in, 3], seed)?;
    nn::init_batch_norm(p, &format!("{prefix}.bn1"), d_model, seed)?;
    init_conv(p, &format!("{prefix}.conv2"), &[d_model, d_model, 3], seed)?;
    nn::init_batch_norm(p, &format!("{prefix}.bn2"), d_model, seed)
}

pub fn init_shared(p: &mut ParamStore, cfg: &EncoderConfig, seed: u64) -> Result<()> {
    nn::init_encoder(p, SHARED, cfg.shared_dims(), seed)
}

/// Every visual parameter: both branches, both temporal encoders and the
/// shared encoder.
pub fn init_visual(p: &mut ParamStore, cfg: &EncoderConfig, seed: u64) -> Result<()> {
    cfg.validate()?;
    init_spatial(p, cfg, seed)?;
    init_spatiotemporal(p, cfg, seed)?;
    init_temporal(p, TEMPORAL_RES, cfg.d_spatial, cfg.d_model, seed)?;
    init_temporal(p, TEMPORAL_ST, cfg.d_spatiotemporal, cfg.d_model, seed)?;
    init_shared(p, cfg, seed)
}

fn video_dims(video: &Array, cfg: &EncoderConfig) -> Result<usize> {
    match video.shape() {
        &[t, h, w] if t >= 1 && h == cfg.frame_size && w == cfg.frame_size => Ok(t),
        s => Err(Error::shape("video", s, &[0, cfg.frame_size, cfg.frame_size])),
    }
}

fn conv_block2(g: &mut Graph, p: &ParamStore, prefix: &str, x: Var, stride: usize) -> Result<Var> {
    let w = g.param(p, &format!("{prefix}.w"))?;
    let b = g.param(p, &format!("{prefix}.b"))?;
    let y = g.conv2d(x, w, b, stride, 1)?;
    let y = g.relu(y)?;
    g.maxpool2d(y)
}

/// Per-frame features `[T, d_spatial]`; row t depends on frame t only.
pub fn spatial_encode(g: &mut Graph, p: &ParamStore, cfg: &EncoderConfig, video: &Array) -> Result<Var> {
    let t = video_dims(video, cfg)?;
    let f = cfg.frame_size;
    let x = g.input(video.clone().reshape(vec![t, 1, f, f])?)?;
    let x = conv_block2(g, p, &format!("{SPATIAL}.conv1"), x, 2)?;
    let x = conv_block2(g, p, &format!("{SPATIAL}.conv2"), x, 1)?;
    let x = conv_block2(g, p, &format!("{SPATIAL}.conv3"), x, 1)?;
    let x = g.reshape(x, &[t, cfg.spatial_flat()])?;
    nn::linear(g, p, &format!("{SPATIAL}.head"), x)
}

/// Number of full windows: `floor((T - window) / stride) + 1`, and 1 for
/// clips shorter than a window.
pub fn window_count(t: usize, window: usize, stride: usize) -> usize {
    if t <= window {
        1
    } else {
        (t - window) / stride + 1
    }
}

/// Window whose features fill output frame `t`.
pub fn window_for_frame(t: usize, stride: usize, windows: usize) -> usize {
    (t / stride).min(windows - 1)
}

/// Features `[T, d_spatiotemporal]` from sliding windows. Each window vector
/// is repeated `stride` times and the last one fills the tail. Clips shorter
/// than a window are padded by repeating their final frame.
pub fn spatiotemporal_encode(g: &mut Graph, p: &ParamStore, cfg: &EncoderConfig, video: &Array) -> Result<Var> {
    let t = video_dims(video, cfg)?;
    let (win, f) = (cfg.window, cfg.frame_size);
    let plane = f * f;
    let nw = window_count(t, win, cfg.stride);
    let mut data = Vec::with_capacity(nw * win * plane);
    for w in 0..nw {
        for k in 0..win {
            let src = (w * cfg.stride + k).min(t - 1);
            data.extend_from_slice(&video.data()[src * plane..(src + 1) * plane]);
        }
    }
    let x = g.input(Array::new(vec![nw, 1, win, f, f], data)?)?;
    let w1 = g.param(p, &format!("{SPATIOTEMPORAL}.conv1.w"))?;
    let b1 = g.param(p, &format!("{SPATIOTEMPORAL}.conv1.b"))?;
    let x = g.conv3d(x, w1, b1, [2, 2, 2], [0, 0, 0])?;
    let x = g.relu(x)?;
    let x = g.maxpool3d(x, [2, 2, 2])?;
    let w2 = g.param(p, &format!("{SPATIOTEMPORAL}.conv2.w"))?;
    let b2 = g.param(p, &format!("{SPATIOTEMPORAL}.conv2.b"))?;
    let x = g.conv3d(x, w2, b2, [1, 1, 1], [0, 0, 0])?;
    let x = g.relu(x)?;
    let x = g.maxpool3d(x, [1, 2, 2])?;
    let x = g.reshape(x, &[nw, cfg.st_flat()])?;
    let v = nn::linear(g, p, &format!("{SPATIOTEMPORAL}.head"), x)?;
    let idx: Vec<usize> = (0..t).map(|i| window_for_frame(i, cfg.stride, nw)).collect();
    g.gather_rows(v, &idx)
}

/// Output length of the temporal encoder.
pub fn temporal_len(len: usize) -> usize {
    len / 2 / 2
}

/// Two conv1d -> batch norm -> ReLU -> max-pool blocks applied to every
/// sequence of a batch. Batch statistics are taken over all rows of the
/// batch together.
pub fn temporal_encode(g: &mut Graph, p: &ParamStore, prefix: &str, seqs: &[Var]) -> Result<Vec<Var>> {
    if seqs.is_empty() {
        return Err(Error::InvalidArgument("temporal_encode on an empty batch".into()));
    }
    for &s in seqs {
        let len = g.shape(s)[0];
        if len < 4 {
            return Err(Error::SequenceTooShort { op: "temporal_encode", len, min: 4 });
        }
    }
    let mut cur = seqs.to_vec();
    for block in 1..=2 {
        let w = g.param(p, &format!("{prefix}.conv{block}.w"))?;
        let b = g.param(p, &format!("{prefix}.conv{block}.b"))?;
        let convs = cur.iter().map(|&s| g.conv1d(s, w, b)).collect::<Result<Vec<_>>>()?;
        let lens: Vec<usize> = convs.iter().map(|&c| g.shape(c)[0]).collect();
        let all = g.concat_rows(&convs)?;
        let normed = nn::batch_norm(g, p, &format!("{prefix}.bn{block}"), all)?;
        let act = g.relu(normed)?;
        let mut start = 0;
        cur.clear();
        for len in lens {
            let part = g.slice_rows(act, start, start + len)?;
            cur.push(g.maxpool1d(part)?);
            start += len;
        }
    }
    Ok(cur)
}

/// The shared transformer encoder; identical parameters for both branches.
pub fn shared_encode(g: &mut Graph, p: &ParamStore, cfg: &EncoderConfig, seq: Var) -> Result<Var> {
    nn::encoder(g, p, SHARED, cfg.shared_dims(), seq)
}

/// Both branches after their temporal encoders, `[floor(floor(T/2)/2), d_model]`
/// per video.
pub struct VisualFeatures {
    pub spatial: Vec<Var>,
    pub spatiotemporal: Vec<Var>,
}

pub fn encode_videos(g: &mut Graph, p: &ParamStore, cfg: &EncoderConfig, videos: &[Array]) -> Result<VisualFeatures> {
    let mut res = Vec::with_capacity(videos.len());
    let mut st = Vec::with_capacity(videos.len());
    for v in videos {
        res.push(spatial_encode(g, p, cfg, v)?);
        st.push(spatiotemporal_encode(g, p, cfg, v)?);
    }
    Ok(VisualFeatures {
        spatial: temporal_encode(g, p, TEMPORAL_RES, &res)?,
        spatiotemporal: temporal_encode(g, p, TEMPORAL_ST, &st)?,
    })
}
