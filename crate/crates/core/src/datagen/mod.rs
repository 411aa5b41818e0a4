//! Synthetic sign-video corpus: a lexicon of glyph motions, sentence
//! rendering, train-time augmentation and on-disk persistence.

mod augment;
mod corpus;
mod lexicon;
mod render;

pub use augment::{augment, augment_with, center_crop, random_crop, AugmentConfig, Transform};
pub use corpus::{
    generate_corpus, load_corpus, parse_manifest, sample_sentence, save_corpus, Corpus, DataConfig, Manifest,
    ManifestLine, Split, FRAMES_DIR, MANIFEST_FILE,
};
pub use lexicon::{build_lexicon, Glyph, Lexicon, Primitive, ARTICLE, MAX_DURATION, MIN_DURATION};
pub use render::{realized_duration, render_sentence, VideoSample, MIN_REALIZED};
