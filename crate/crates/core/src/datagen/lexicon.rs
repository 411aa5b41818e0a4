use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

const BASE_WORDS: [&str; 32] = [
    "sun", "rain", "snow", "wind", "cloud", "storm", "fog", "frost", "north", "south", "east", "west",
    "morning", "evening", "night", "today", "tomorrow", "warm", "cold", "mild", "strong", "weak", "sea",
    "coast", "mountain", "river", "valley", "sky", "thunder", "hail", "shower", "breeze",
];

/// Article inserted before every noun-class word in translation targets.
pub const ARTICLE: &str = "the";

pub const MIN_DURATION: usize = 8;
pub const MAX_DURATION: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Glyph {
    Disk,
    Square,
    Ring,
    Bar,
}

impl Glyph {
    const ALL: [Glyph; 4] = [Glyph::Disk, Glyph::Square, Glyph::Ring, Glyph::Bar];
}

/// Motion primitive for one sign: a glyph swept along a quadratic Bezier
/// path while spinning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub glyph: Glyph,
    /// Bezier control points in the unit square.
    pub control: [[f64; 2]; 3],
    /// Total rotation over the sign, in turns.
    pub spin: f64,
    pub duration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub words: Vec<String>,
    pub primitives: Vec<Primitive>,
}

impl Lexicon {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Result<usize> {
        self.words
            .iter()
            .position(|w| w == word)
            .ok_or_else(|| Error::UnknownToken(word.to_string()))
    }

    pub fn primitive(&self, word: &str) -> Result<&Primitive> {
        Ok(&self.primitives[self.index_of(word)?])
    }

    /// Even lexicon positions are nouns and take an article in the target.
    pub fn is_noun(&self, word: &str) -> Result<bool> {
        Ok(self.index_of(word)? % 2 == 0)
    }

    /// The spoken-language target for a signed sentence: the same words
    /// with an article before each noun.
    pub fn target_sentence(&self, signs: &[String]) -> Result<Vec<String>> {
        let mut out = Vec::with_capacity(signs.len() * 2);
        for w in signs {
            if self.is_noun(w)? {
                out.push(ARTICLE.to_string());
            }
            out.push(w.clone());
        }
        Ok(out)
    }
}

fn word_name(i: usize) -> String {
    BASE_WORDS
        .get(i)
        .map(|w| w.to_string())
        .unwrap_or_else(|| format!("word{i}"))
}

pub fn build_lexicon(vocab_size: usize, seed: u64) -> Result<Lexicon> {
    if vocab_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "lexicon needs at least 2 words, got {vocab_size}"
        )));
    }
    let mut rng = rng_for(seed, "lexicon", 0);
    let mut primitives: Vec<Primitive> = Vec::with_capacity(vocab_size);
    while primitives.len() < vocab_size {
        let i = primitives.len();
        // Cycle glyphs so small lexicons still use every shape.
        let glyph = Glyph::ALL[(i + rng.gen_range(0..4)) % 4];
        let mut control = [[0.0; 2]; 3];
        for p in control.iter_mut() {
            *p = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        }
        let spin = rng.gen_range(-1.0..1.0);
        let duration = rng.gen_range(MIN_DURATION..=MAX_DURATION);
        let cand = Primitive {
            glyph,
            control,
            spin,
            duration,
        };
        // Reject paths that barely move or sit too close to an existing sign.
        let travel = dist(control[0], control[2]) + dist(control[0], control[1]);
        let clash = primitives.iter().any(|p| p.glyph == cand.glyph && path_gap(p, &cand) < 0.25);
        if travel > 0.4 && !clash {
            primitives.push(cand);
        }
    }
    Ok(Lexicon {
        words: (0..vocab_size).map(word_name).collect(),
        primitives,
    })
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn path_gap(a: &Primitive, b: &Primitive) -> f64 {
    (0..3).map(|i| dist(a.control[i], b.control[i])).sum::<f64>() / 3.0
}
