use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::config::{SchedulerKind, TrainConfig};
use super::train::{finetune, pretrain, RunOptions, BEST_CKPT};
use crate::datagen::generate_corpus;
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::translation::Branches;

/// A fixed family of finetuning variants compared at equal budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grid {
    /// Dual encoder against each single branch.
    Encoders,
    /// Sum, concatenation and cross-attention fusion.
    Fusion,
    /// Cosine, exponential and one-cycle schedules.
    Schedulers,
    /// Contrastively pretrained against random initialization.
    Init,
}

impl Grid {
    pub const ALL: [Grid; 4] = [Grid::Encoders, Grid::Fusion, Grid::Schedulers, Grid::Init];

    pub fn name(self) -> &'static str {
        match self {
            Grid::Encoders => "encoders",
            Grid::Fusion => "fusion",
            Grid::Schedulers => "schedulers",
            Grid::Init => "init",
        }
    }

    /// Variant names and the config each one runs, given the base config
    /// and its seed's pretraining checkpoint.
    pub fn variants(self, base: &TrainConfig, pretrained: &str) -> Vec<(String, TrainConfig)> {
        let with = |f: &dyn Fn(&mut TrainConfig)| {
            let mut c = base.clone();
            c.finetune.init = Some(pretrained.to_string());
            f(&mut c);
            c
        };
        match self {
            Grid::Encoders => [Branches::Dual, Branches::Spatial, Branches::Spatiotemporal]
                .into_iter()
                .map(|b| (b.to_string(), with(&|c| c.finetune.branches = b)))
                .collect(),
            Grid::Fusion => FusionMode::ALL
                .into_iter()
                .map(|m| {
                    (m.to_string(), with(&|c| {
                        c.finetune.branches = Branches::Dual;
                        c.model.fusion.mode = m;
                    }))
                })
                .collect(),
            Grid::Schedulers => [SchedulerKind::Cosine, SchedulerKind::Exponential, SchedulerKind::OneCycle]
                .into_iter()
                .map(|k| (k.name().to_string(), with(&|c| c.finetune.phase.scheduler = k)))
                .collect(),
            Grid::Init => vec![
                ("pretrained".to_string(), with(&|_| {})),
                ("random".to_string(), with(&|c| c.finetune.init = None)),
            ],
        }
    }
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::ConfigValue(format!("unknown ablation grid {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub variant: String,
    pub seed: u64,
    /// Best dev BLEU-4 over the finetuning epochs.
    pub bleu4: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub grid: Grid,
    pub seeds: Vec<u64>,
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn variants(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.variant) {
                out.push(c.variant.clone());
            }
        }
        out
    }

    pub fn mean(&self, variant: &str) -> Option<f64> {
        let xs: Vec<f64> = self.cells.iter().filter(|c| c.variant == variant).map(|c| c.bleu4).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# {} (dev BLEU-4)\nvariant", self.grid.name());
        for s in &self.seeds {
            let _ = write!(out, "\tseed{s}");
        }
        out.push_str("\tmean\n");
        for v in self.variants() {
            out.push_str(&v);
            for s in &self.seeds {
                match self.cells.iter().find(|c| &c.variant == &v && c.seed == *s) {
                    Some(c) => {
                        let _ = write!(out, "\t{:.2}", c.bleu4);
                    }
                    None => out.push_str("\t-"),
                }
            }
            let _ = writeln!(out, "\t{:.2}", self.mean(&v).unwrap_or(f64::NAN));
        }
        out
    }
}

/// Runs one grid over `seeds`. Every seed gets its own corpus and its own
/// pretraining run under `out/pretrain/seed<k>`; finished runs are reused,
/// so an interrupted sweep picks up where it stopped.
pub fn ablate(base: &TrainConfig, grid: Grid, seeds: &[u64], out: &Path) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one seed".into()));
    }
    let resume = RunOptions { resume: true, stop_after: None };
    let mut cells = Vec::new();
    for &seed in seeds {
        let mut cfg = base.clone();
        cfg.data.seed = seed;
        let corpus = generate_corpus(&cfg.data)?;
        let pre_dir = out.join("pretrain").join(format!("seed{seed}"));
        pretrain(&cfg, &corpus, &pre_dir, resume)?;
        let ckpt = pre_dir.join(BEST_CKPT);
        let ckpt = ckpt.to_str().ok_or_else(|| Error::InvalidArgument("non UTF-8 output path".into()))?;
        for (variant, vcfg) in grid.variants(&cfg, ckpt) {
            let dir = out.join(grid.name()).join(&variant).join(format!("seed{seed}"));
            let outcome = finetune(&vcfg, &corpus, &dir, resume)?;
            let bleu4 = outcome
                .record
                .best_metric
                .ok_or_else(|| Error::InvalidArgument(format!("{} did not finish", dir.display())))?;
            log::info!("ablate {} {variant} seed {seed}: BLEU-4 {bleu4:.2}", grid.name());
            cells.push(AblationCell { variant, seed, bleu4 });
        }
    }
    let table = AblationTable { grid, seeds: seeds.to_vec(), cells };
    let path = out.join(format!("{}.txt", grid.name()));
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    std::fs::write(&path, table.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(table)
}
