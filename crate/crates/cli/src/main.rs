use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use slt_core::datagen::{generate_corpus, load_corpus, save_corpus, Corpus, Split};
use slt_core::harness::{self, Grid, RunOptions, TrainConfig};
use slt_core::translation::Branches;

#[derive(Parser)]
#[command(name = "slt", about = "Dual-encoder pretraining and sign-video translation on a synthetic corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Configuration file; the reference experiment when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the long training schedule as the base instead of the reference one.
    #[arg(long)]
    full: bool,
    /// Corpus directory written by `gen-data`; generated in memory when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Overrides `data.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the corpus to a directory.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Contrastive pretraining of the visual and text encoders.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        resume: bool,
    },
    /// Translation training, optionally from a pretraining checkpoint.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run: PathBuf,
        /// Pretraining checkpoint, or `none`.
        #[arg(long)]
        init: Option<String>,
        /// dual, spatial or spatiotemporal.
        #[arg(long)]
        branches: Option<Branches>,
        #[arg(long)]
        resume: bool,
    },
    /// Translate one sample.
    Translate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        sample: String,
    },
    /// Decode a split and write predictions and a report.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export decoder cross-attention for one sample as CSV and PGM.
    Attn {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        sample: String,
        /// Output path without extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an ablation grid over several seeds and print the table.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// encoders, fusion, schedulers or init.
        #[arg(long)]
        grid: String,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            TrainConfig::parse(&text)?
        }
        None if common.full => TrainConfig::full(),
        None => TrainConfig::reference(),
    };
    if let Some(seed) = common.seed {
        cfg.data.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn corpus_for(cfg: &TrainConfig, data: Option<&Path>) -> Result<Corpus> {
    match data {
        Some(dir) => {
            let corpus = load_corpus(dir)?;
            if corpus.config != cfg.data {
                bail!("corpus in {} does not match the configuration's data section", dir.display());
            }
            Ok(corpus)
        }
        None => Ok(generate_corpus(&cfg.data)?),
    }
}

/// The corpus a checkpoint was trained on.
fn corpus_for_ckpt(ckpt: &Path, data: Option<&Path>) -> Result<Corpus> {
    let model = harness::load_model(ckpt)?;
    corpus_for(&model.config, data)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenData { common, out } => {
            let cfg = load_config(&common)?;
            let corpus = generate_corpus(&cfg.data)?;
            save_corpus(&corpus, &out)?;
            println!(
                "wrote {} train / {} dev / {} test samples to {}",
                corpus.train.len(),
                corpus.dev.len(),
                corpus.test.len(),
                out.display()
            );
        }
        Command::Pretrain { common, run, resume } => {
            let cfg = load_config(&common)?;
            let corpus = corpus_for(&cfg, common.data.as_deref())?;
            let out = harness::pretrain(&cfg, &corpus, &run, RunOptions { resume, stop_after: None })?;
            let best = out.record.best_metric.unwrap_or(f64::NAN);
            println!("best dev R@1 {best:.3} at epoch {}", out.record.best_epoch.unwrap_or(0));
        }
        Command::Finetune { common, run, init, branches, resume } => {
            let mut cfg = load_config(&common)?;
            if let Some(init) = init {
                cfg.finetune.init = (init != "none").then_some(init);
            }
            if let Some(b) = branches {
                cfg.finetune.branches = b;
            }
            cfg.validate()?;
            let corpus = corpus_for(&cfg, common.data.as_deref())?;
            let out = harness::finetune(&cfg, &corpus, &run, RunOptions { resume, stop_after: None })?;
            let best = out.record.best_metric.unwrap_or(f64::NAN);
            println!("best dev BLEU-4 {best:.2} at epoch {}", out.record.best_epoch.unwrap_or(0));
        }
        Command::Translate { ckpt, data, sample } => {
            let model = harness::load_model(&ckpt)?;
            let corpus = corpus_for(&model.config, data.as_deref())?;
            let s = corpus.find(&sample).with_context(|| format!("unknown sample {sample}"))?;
            let hyps = harness::train::decode_split(&model.config, &model.params, &model.tokenizer, std::slice::from_ref(s))?;
            println!("{}", hyps[0].join(" "));
        }
        Command::Evaluate { ckpt, data, split, out } => {
            let corpus = corpus_for_ckpt(&ckpt, data.as_deref())?;
            let report = harness::evaluate(&ckpt, &corpus, Split::parse(&split)?, &out)?;
            let b = report.bleu;
            println!(
                "BLEU-1..4 {:.2} {:.2} {:.2} {:.2}  ROUGE-L {:.4}  ({} samples)",
                b[0], b[1], b[2], b[3], report.rouge_l, report.samples
            );
        }
        Command::Attn { ckpt, data, sample, out } => {
            let corpus = corpus_for_ckpt(&ckpt, data.as_deref())?;
            let e = harness::export_attention_files(&ckpt, &corpus, &sample, &out)?;
            println!(
                "{} frames x {} tokens ({}) -> {} {}",
                e.matrix.rows(),
                e.matrix.row_len(),
                e.tokens.join(" "),
                e.csv.display(),
                e.pgm.display()
            );
        }
        Command::Ablate { common, grid, seeds, out } => {
            let cfg = load_config(&common)?;
            let grid: Grid = grid.parse()?;
            let table = harness::ablate(&cfg, grid, &seeds, &out)?;
            print!("{}", table.to_text());
        }
    }
    Ok(())
}
