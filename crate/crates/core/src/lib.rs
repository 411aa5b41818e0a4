//! Dual visual encoder contrastive pretraining and gloss-free sign language
//! translation, trained end to end on a procedurally generated sign-video
//! corpus.

pub mod alignment;
pub mod datagen;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod seed;
pub mod substrate;
pub mod translation;

pub use error::{Error, Result};
