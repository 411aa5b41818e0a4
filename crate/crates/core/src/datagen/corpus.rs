use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::{build_lexicon, Lexicon, ARTICLE};
use super::render::{render_sentence, VideoSample};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for};
use crate::substrate::Checkpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    /// Side of the model-facing frame after cropping.
    pub frame_size: usize,
    /// Extra pixels rendered around the crop window.
    pub crop_margin: usize,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            vocab_size: 20,
            min_len: 3,
            max_len: 6,
            train_size: 400,
            dev_size: 50,
            test_size: 50,
            frame_size: 32,
            crop_margin: 4,
            jitter: 0.15,
            seed: 1,
        }
    }
}

impl DataConfig {
    pub fn render_size(&self) -> usize {
        self.frame_size + self.crop_margin
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigValue(msg));
        if self.vocab_size < 2 {
            return bad(format!("data.vocab_size = {} (need >= 2)", self.vocab_size));
        }
        if self.min_len < 1 || self.min_len > self.max_len {
            return bad(format!("data sentence lengths [{}, {}] invalid", self.min_len, self.max_len));
        }
        if self.train_size == 0 {
            return bad("data.train_size must be positive".into());
        }
        if self.frame_size < 16 {
            return bad(format!("data.frame_size = {} (need >= 16)", self.frame_size));
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return bad(format!("data.jitter = {} outside [0, 0.5)", self.jitter));
        }
        Ok(())
    }

    pub fn split_size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_size,
            Split::Dev => self.dev_size,
            Split::Test => self.test_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: DataConfig,
    pub lexicon: Lexicon,
    pub train: Vec<VideoSample>,
    pub dev: Vec<VideoSample>,
    pub test: Vec<VideoSample>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[VideoSample] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn find(&self, id: &str) -> Option<&VideoSample> {
        Split::ALL.iter().flat_map(|&s| self.split(s)).find(|v| v.id == id)
    }

    pub fn target(&self, sample: &VideoSample) -> Result<Vec<String>> {
        self.lexicon.target_sentence(&sample.sentence)
    }
}

pub fn sample_sentence(lexicon: &Lexicon, cfg: &DataConfig, rng: &mut impl Rng) -> Vec<String> {
    let len = rng.gen_range(cfg.min_len..=cfg.max_len);
    (0..len)
        .map(|_| lexicon.words[rng.gen_range(0..lexicon.len())].clone())
        .collect()
}

pub fn generate_corpus(cfg: &DataConfig) -> Result<Corpus> {
    cfg.validate()?;
    let lexicon = build_lexicon(cfg.vocab_size, cfg.seed)?;
    let mut out = Corpus {
        config: cfg.clone(),
        lexicon,
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for split in Split::ALL {
        let label = format!("sample/{}", split.name());
        let samples = (0..cfg.split_size(split))
            .map(|i| {
                let seed = derive_seed(cfg.seed, &label, i as u64);
                let sentence = sample_sentence(&out.lexicon, cfg, &mut rng_for(seed, "sentence", 0));
                let mut v = render_sentence(&out.lexicon, &sentence, seed, cfg.jitter, cfg.render_size())?;
                v.id = format!("{}-{i:04}", split.name());
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        match split {
            Split::Train => out.train = samples,
            Split::Dev => out.dev = samples,
            Split::Test => out.test = samples,
        }
    }
    Ok(out)
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const FRAMES_DIR: &str = "frames";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ManifestLine {
    Header {
        config: DataConfig,
        lexicon: Lexicon,
        target_rule: String,
    },
    Sample {
        id: String,
        split: Split,
        sentence: Vec<String>,
        target: Vec<String>,
        frames: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub config: DataConfig,
    pub lexicon: Lexicon,
    pub samples: Vec<(Split, String, Vec<String>, String)>,
}

fn target_rule() -> String {
    format!("insert {ARTICLE:?} before every word at an even lexicon index")
}

/// Parses manifest text: one header line followed by one line per sample.
pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (config, lexicon) = match lines.next() {
        Some((_, l)) => match serde_json::from_str(l)? {
            ManifestLine::Header { config, lexicon, .. } => (config, lexicon),
            ManifestLine::Sample { .. } => return Err(Error::Parse("manifest must start with a header".into())),
        },
        None => return Err(Error::Parse("empty manifest".into())),
    };
    config.validate()?;
    if lexicon.words.len() != lexicon.primitives.len() || lexicon.words.len() != config.vocab_size {
        return Err(Error::Parse("lexicon does not match the data config".into()));
    }
    let mut ids = BTreeSet::new();
    let mut samples = Vec::new();
    for (n, l) in lines {
        match serde_json::from_str(l)? {
            ManifestLine::Sample { id, split, sentence, frames, .. } => {
                if !ids.insert(id.clone()) {
                    return Err(Error::Parse(format!("line {}: duplicate sample id {id:?}", n + 1)));
                }
                if sentence.is_empty() || sentence.len() > config.max_len {
                    return Err(Error::Parse(format!("line {}: sentence length {}", n + 1, sentence.len())));
                }
                for w in &sentence {
                    lexicon.index_of(w)?;
                }
                if frames.contains("..") || frames.starts_with('/') {
                    return Err(Error::Parse(format!("line {}: frame path {frames:?} escapes the corpus", n + 1)));
                }
                samples.push((split, id, sentence, frames));
            }
            ManifestLine::Header { .. } => {
                return Err(Error::Parse(format!("line {}: second header", n + 1)));
            }
        }
    }
    Ok(Manifest { config, lexicon, samples })
}

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    let frames_dir = dir.join(FRAMES_DIR);
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let header = ManifestLine::Header {
        config: corpus.config.clone(),
        lexicon: corpus.lexicon.clone(),
        target_rule: target_rule(),
    };
    let mut text = serde_json::to_string(&header)?;
    text.push('\n');
    for split in Split::ALL {
        for v in corpus.split(split) {
            let rel = format!("{FRAMES_DIR}/{}.ckpt", v.id);
            let mut ck = Checkpoint::new();
            ck.set_meta("id", v.id.clone());
            ck.insert("frames", v.frames.clone());
            ck.save(dir.join(&rel))?;
            let line = ManifestLine::Sample {
                id: v.id.clone(),
                split,
                sentence: v.sentence.clone(),
                target: corpus.target(v)?,
                frames: rel,
            };
            text.push_str(&serde_json::to_string(&line)?);
            text.push('\n');
        }
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m = parse_manifest(&text)?;
    let mut corpus = Corpus {
        config: m.config,
        lexicon: m.lexicon,
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for (split, id, sentence, rel) in m.samples {
        let ck = Checkpoint::load(dir.join(&rel))?;
        let frames = ck
            .get("frames")
            .cloned()
            .ok_or_else(|| Error::Checkpoint { name: "frames".into(), reason: format!("missing in {rel}") })?;
        let v = VideoSample { id, frames, sentence };
        match split {
            Split::Train => corpus.train.push(v),
            Split::Dev => corpus.dev.push(v),
            Split::Test => corpus.test.push(v),
        }
    }
    Ok(corpus)
}
