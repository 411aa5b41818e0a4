use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::alignment::{PretrainConfig, MASK_RATIO, MIN_TEMPERATURE};
use crate::datagen::{AugmentConfig, DataConfig};
use crate::encoders::{Branch, EncoderConfig};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::optim::Scheduler;
use crate::translation::{Branches, TextConfig, TranslationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerKind {
    Constant,
    Cosine,
    Exponential,
    OneCycle,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 4] = [
        SchedulerKind::Constant,
        SchedulerKind::Cosine,
        SchedulerKind::Exponential,
        SchedulerKind::OneCycle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Constant => "constant",
            SchedulerKind::Cosine => "cosine",
            SchedulerKind::Exponential => "exponential",
            SchedulerKind::OneCycle => "one_cycle",
        }
    }
}

impl FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::ConfigValue(format!("unknown scheduler {s:?}")))
    }
}

/// Optimizer and schedule of one training phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub scheduler: SchedulerKind,
    /// Horizon of the schedule; epochs past it keep the final rate.
    pub scheduler_epochs: usize,
    pub lr_min: f64,
    pub gamma: f64,
    pub pct_start: f64,
}

impl PhaseConfig {
    fn reference(epochs: usize) -> Self {
        Self {
            epochs,
            batch_size: 8,
            lr: 0.02,
            momentum: 0.9,
            scheduler: SchedulerKind::Cosine,
            scheduler_epochs: epochs,
            lr_min: 0.0,
            gamma: 0.96,
            pct_start: 0.35,
        }
    }

    pub fn schedule(&self) -> Scheduler {
        match self.scheduler {
            SchedulerKind::Constant => Scheduler::Constant,
            SchedulerKind::Cosine => Scheduler::Cosine { lr_min: self.lr_min },
            SchedulerKind::Exponential => Scheduler::Exponential { gamma: self.gamma },
            SchedulerKind::OneCycle => Scheduler::OneCycle { pct_start: self.pct_start },
        }
    }

    pub fn steps_per_epoch(&self, train_size: usize) -> usize {
        train_size.div_ceil(self.batch_size)
    }

    /// Learning rate of global step `step` (zero based) inside `epoch` (zero
    /// based).
    pub fn lr_at(&self, epoch: usize, step: usize, train_size: usize) -> Result<f64> {
        let horizon = self.scheduler_epochs;
        let total = horizon * self.steps_per_epoch(train_size);
        self.schedule()
            .lr(self.lr, epoch.min(horizon), horizon, step.min(total), total)
    }

    fn validate(&self, phase: &str) -> Result<()> {
        let bad = |what: String| Err(Error::ConfigValue(format!("{phase}: {what}")));
        if !(1..=100_000).contains(&self.epochs) {
            return bad(format!("epochs {} outside 1..=100000", self.epochs));
        }
        if !(1..=4096).contains(&self.batch_size) {
            return bad(format!("batch_size {} outside 1..=4096", self.batch_size));
        }
        if !(self.lr > 0.0 && self.lr <= 10.0) {
            return bad(format!("optimizer.lr {} outside (0, 10]", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("optimizer.momentum {} outside [0, 1)", self.momentum));
        }
        if !(1..=100_000).contains(&self.scheduler_epochs) {
            return bad(format!("scheduler.epochs {} outside 1..=100000", self.scheduler_epochs));
        }
        if !(0.0..=self.lr).contains(&self.lr_min) {
            return bad(format!("scheduler.lr_min {} outside [0, lr]", self.lr_min));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("scheduler.gamma {} outside (0, 1]", self.gamma));
        }
        if !(self.pct_start > 0.0 && self.pct_start < 1.0) {
            return bad(format!("scheduler.pct_start {} outside (0, 1)", self.pct_start));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainSection {
    pub phase: PhaseConfig,
    pub tau_init: f64,
    pub mask_ratio: f64,
    pub lambda_rec: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneSection {
    pub phase: PhaseConfig,
    /// Pretraining checkpoint to start from; `None` means random init.
    pub init: Option<String>,
    pub branches: Branches,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub encoder: EncoderConfig,
    pub text: TextConfig,
    pub fusion: FusionConfig,
}

/// Everything a run depends on. `data.seed` is the root of every random
/// stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub data: DataConfig,
    pub augment: AugmentConfig,
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl TrainConfig {
    /// The desk-scale experiment.
    pub fn reference() -> Self {
        let data = DataConfig::default();
        let encoder = EncoderConfig {
            frame_size: data.frame_size,
            ..EncoderConfig::default()
        };
        Self {
            data,
            augment: AugmentConfig::default(),
            model: ModelSection {
                encoder,
                text: TextConfig::default(),
                fusion: FusionConfig::default(),
            },
            pretrain: PretrainSection {
                phase: PhaseConfig::reference(30),
                tau_init: 0.07,
                mask_ratio: MASK_RATIO,
                lambda_rec: 1.0,
            },
            finetune: FinetuneSection {
                phase: PhaseConfig::reference(40),
                init: None,
                branches: Branches::Dual,
            },
        }
    }

    /// Reference model and data with the long training schedule.
    pub fn full() -> Self {
        let mut c = Self::reference();
        c.pretrain.phase = PhaseConfig::reference(150);
        c.finetune.phase = PhaseConfig::reference(200);
        c
    }

    pub fn root_seed(&self) -> u64 {
        self.data.seed
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            encoder: self.model.encoder.clone(),
            text: self.model.text.clone(),
            mask_ratio: self.pretrain.mask_ratio,
            lambda_rec: self.pretrain.lambda_rec,
            tau_init: self.pretrain.tau_init,
        }
    }

    pub fn translation_config(&self) -> TranslationConfig {
        TranslationConfig {
            encoder: self.model.encoder.clone(),
            text: self.model.text.clone(),
            fusion: self.model.fusion,
            branches: self.finetune.branches,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        let a = &self.augment;
        if !(0.0..=1.0).contains(&a.p)
            || !(0.0..=180.0).contains(&a.max_rot_deg)
            || !(0.0..=0.9).contains(&a.max_scale)
            || !(0.0..=0.5).contains(&a.max_shift)
        {
            return Err(Error::ConfigValue(format!(
                "augmentation out of bounds: p in [0,1], rot in [0,180], scale in [0,0.9], shift in [0,0.5]; got {a:?}"
            )));
        }
        if self.model.encoder.frame_size != self.data.frame_size {
            return Err(Error::ConfigValue("model frame size differs from data.frame_size".into()));
        }
        self.translation_config().validate()?;
        if self.model.text.max_len < 2 * self.data.max_len {
            return Err(Error::ConfigValue(format!(
                "model.max_tokens {} cannot hold a {}-word sentence with articles",
                self.model.text.max_len, self.data.max_len
            )));
        }
        self.pretrain.phase.validate("pretrain")?;
        self.finetune.phase.validate("finetune")?;
        let p = &self.pretrain;
        if !(MIN_TEMPERATURE..=1.0).contains(&p.tau_init) {
            return Err(Error::ConfigValue(format!("pretrain.tau_init {} outside [{MIN_TEMPERATURE}, 1]", p.tau_init)));
        }
        if !(0.0..=1.0).contains(&p.mask_ratio) {
            return Err(Error::ConfigValue(format!("pretrain.mask_ratio {} outside [0, 1]", p.mask_ratio)));
        }
        if !(0.0..=100.0).contains(&p.lambda_rec) {
            return Err(Error::ConfigValue(format!("pretrain.lambda_rec {} outside [0, 100]", p.lambda_rec)));
        }
        if let Some(init) = &self.finetune.init {
            if init.is_empty() || init.contains(char::is_whitespace) {
                return Err(Error::ConfigValue(format!("finetune.init {init:?} is not a usable path")));
            }
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, Vec<(&'static str, String)>)> {
        let d = &self.data;
        let a = &self.augment;
        let e = &self.model.encoder;
        let t = &self.model.text;
        let list = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let phase = |p: &PhaseConfig| {
            vec![
                ("epochs", p.epochs.to_string()),
                ("batch_size", p.batch_size.to_string()),
                ("optimizer.lr", float(p.lr)),
                ("optimizer.momentum", float(p.momentum)),
                ("scheduler.kind", p.scheduler.name().to_string()),
                ("scheduler.epochs", p.scheduler_epochs.to_string()),
                ("scheduler.lr_min", float(p.lr_min)),
                ("scheduler.gamma", float(p.gamma)),
                ("scheduler.pct_start", float(p.pct_start)),
            ]
        };
        let mut pre = phase(&self.pretrain.phase);
        pre.extend([
            ("tau_init", float(self.pretrain.tau_init)),
            ("mask_ratio", float(self.pretrain.mask_ratio)),
            ("lambda_rec", float(self.pretrain.lambda_rec)),
        ]);
        let mut fine = phase(&self.finetune.phase);
        fine.extend([
            ("init", self.finetune.init.clone().unwrap_or_else(|| "none".into())),
            ("branches", self.finetune.branches.to_string()),
        ]);
        vec![
            (
                "data",
                vec![
                    ("seed", d.seed.to_string()),
                    ("vocab_size", d.vocab_size.to_string()),
                    ("min_len", d.min_len.to_string()),
                    ("max_len", d.max_len.to_string()),
                    ("train_size", d.train_size.to_string()),
                    ("dev_size", d.dev_size.to_string()),
                    ("test_size", d.test_size.to_string()),
                    ("frame_size", d.frame_size.to_string()),
                    ("crop_margin", d.crop_margin.to_string()),
                    ("jitter", float(d.jitter)),
                    ("aug_p", float(a.p)),
                    ("aug_rot_deg", float(a.max_rot_deg)),
                    ("aug_scale", float(a.max_scale)),
                    ("aug_shift", float(a.max_shift)),
                ],
            ),
            (
                "model",
                vec![
                    ("spatial_channels", list(&e.spatial_channels)),
                    ("st_channels", list(&e.st_channels)),
                    ("d_spatial", e.d_spatial.to_string()),
                    ("d_spatiotemporal", e.d_spatiotemporal.to_string()),
                    ("d_model", e.d_model.to_string()),
                    ("d_ff", e.d_ff.to_string()),
                    ("heads", e.heads.to_string()),
                    ("window", e.window.to_string()),
                    ("stride", e.stride.to_string()),
                    ("shared_layers", e.shared_layers.to_string()),
                    ("text_layers", t.text_layers.to_string()),
                    ("decoder_layers", t.decoder_layers.to_string()),
                    ("max_tokens", t.max_len.to_string()),
                    ("fusion", self.model.fusion.mode.to_string()),
                    ("fusion_query", branch_name(self.model.fusion.query).to_string()),
                ],
            ),
            ("pretrain", pre),
            ("finetune", fine),
        ]
    }

    /// Every key in a fixed order; the input to [`TrainConfig::fingerprint`].
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (i, (section, kvs)) in self.entries().into_iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{section}]");
            for (k, v) in kvs {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    /// Hex SHA-256 of the canonical text.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Parses sectioned `key = value` text over the reference defaults and
    /// validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::reference();
        let mut section: Option<String> = None;
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |reason: String| Error::Config { line: line_no, reason };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err("unterminated section header".into()))?
                    .trim();
                if !["data", "model", "pretrain", "finetune"].contains(&name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.as_deref().ok_or_else(|| err(format!("key {key:?} outside any section")))?;
            if !seen.insert(format!("{sec}.{key}")) {
                return Err(err(format!("duplicate key {sec}.{key}")));
            }
            cfg.set(sec, key, value).map_err(|e| match e {
                Error::ConfigValue(reason) | Error::Parse(reason) => err(reason),
                other => err(other.to_string()),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one `section.key` from its text form.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        match section {
            "data" => {
                let d = &mut self.data;
                let a = &mut self.augment;
                match key {
                    "seed" => d.seed = num(key, value)?,
                    "vocab_size" => d.vocab_size = num(key, value)?,
                    "min_len" => d.min_len = num(key, value)?,
                    "max_len" => d.max_len = num(key, value)?,
                    "train_size" => d.train_size = num(key, value)?,
                    "dev_size" => d.dev_size = num(key, value)?,
                    "test_size" => d.test_size = num(key, value)?,
                    "frame_size" => {
                        d.frame_size = num(key, value)?;
                        self.model.encoder.frame_size = d.frame_size;
                    }
                    "crop_margin" => d.crop_margin = num(key, value)?,
                    "jitter" => d.jitter = real(key, value)?,
                    "aug_p" => a.p = real(key, value)?,
                    "aug_rot_deg" => a.max_rot_deg = real(key, value)?,
                    "aug_scale" => a.max_scale = real(key, value)?,
                    "aug_shift" => a.max_shift = real(key, value)?,
                    _ => return unknown(section, key),
                }
            }
            "model" => {
                let e = &mut self.model.encoder;
                let t = &mut self.model.text;
                match key {
                    "spatial_channels" => e.spatial_channels = nums(key, value)?,
                    "st_channels" => e.st_channels = nums(key, value)?,
                    "d_spatial" => e.d_spatial = num(key, value)?,
                    "d_spatiotemporal" => e.d_spatiotemporal = num(key, value)?,
                    "d_model" => {
                        e.d_model = num(key, value)?;
                        t.d_model = e.d_model;
                    }
                    "d_ff" => {
                        e.d_ff = num(key, value)?;
                        t.d_ff = e.d_ff;
                    }
                    "heads" => {
                        e.heads = num(key, value)?;
                        t.heads = e.heads;
                    }
                    "window" => e.window = num(key, value)?,
                    "stride" => e.stride = num(key, value)?,
                    "shared_layers" => e.shared_layers = num(key, value)?,
                    "text_layers" => t.text_layers = num(key, value)?,
                    "decoder_layers" => t.decoder_layers = num(key, value)?,
                    "max_tokens" => t.max_len = num(key, value)?,
                    "fusion" => self.model.fusion.mode = value.parse()?,
                    "fusion_query" => self.model.fusion.query = parse_branch(value)?,
                    _ => return unknown(section, key),
                }
            }
            "pretrain" => match key {
                "tau_init" => self.pretrain.tau_init = real(key, value)?,
                "mask_ratio" => self.pretrain.mask_ratio = real(key, value)?,
                "lambda_rec" => self.pretrain.lambda_rec = real(key, value)?,
                _ => set_phase(&mut self.pretrain.phase, section, key, value)?,
            },
            "finetune" => match key {
                "init" => self.finetune.init = (value != "none").then(|| value.to_string()),
                "branches" => self.finetune.branches = value.parse()?,
                _ => set_phase(&mut self.finetune.phase, section, key, value)?,
            },
            _ => return Err(Error::ConfigValue(format!("unknown section [{section}]"))),
        }
        Ok(())
    }
}

fn set_phase(p: &mut PhaseConfig, section: &str, key: &str, value: &str) -> Result<()> {
    match key {
        "epochs" => p.epochs = num(key, value)?,
        "batch_size" => p.batch_size = num(key, value)?,
        "optimizer.lr" => p.lr = real(key, value)?,
        "optimizer.momentum" => p.momentum = real(key, value)?,
        "scheduler.kind" => p.scheduler = value.parse()?,
        "scheduler.epochs" => p.scheduler_epochs = num(key, value)?,
        "scheduler.lr_min" => p.lr_min = real(key, value)?,
        "scheduler.gamma" => p.gamma = real(key, value)?,
        "scheduler.pct_start" => p.pct_start = real(key, value)?,
        _ => return unknown(section, key),
    }
    Ok(())
}

fn unknown(section: &str, key: &str) -> Result<()> {
    Err(Error::ConfigValue(format!("unknown key {section}.{key}")))
}

fn float(x: f64) -> String {
    format!("{x:?}")
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::ConfigValue(format!("{key}: expected a non-negative integer, got {value:?}")))
}

fn real(key: &str, value: &str) -> Result<f64> {
    match value.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(Error::ConfigValue(format!("{key}: expected a finite number, got {value:?}"))),
    }
}

fn nums<const N: usize>(key: &str, value: &str) -> Result<[usize; N]> {
    let xs = value
        .split(',')
        .map(|s| num::<usize>(key, s.trim()))
        .collect::<Result<Vec<_>>>()?;
    match <[usize; N]>::try_from(xs) {
        Ok(a) if !a.contains(&0) => Ok(a),
        _ => Err(Error::ConfigValue(format!("{key}: expected {N} positive channel counts, got {value:?}"))),
    }
}

fn branch_name(b: Branch) -> &'static str {
    match b {
        Branch::Spatial => "spatial",
        Branch::Spatiotemporal => "spatiotemporal",
    }
}

fn parse_branch(s: &str) -> Result<Branch> {
    match s {
        "spatial" => Ok(Branch::Spatial),
        "spatiotemporal" => Ok(Branch::Spatiotemporal),
        other => Err(Error::ConfigValue(format!("unknown branch {other:?}"))),
    }
}
