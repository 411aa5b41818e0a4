use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvalReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        }
    }
}

/// Dev-set retrieval accuracy, videos against sentences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub v2t_r1: f64,
    pub v2t_r5: f64,
    pub t2v_r1: f64,
    pub t2v_r5: f64,
}

/// One epoch. Epoch 0 is the untrained model: it has dev metrics but no
/// losses or learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    /// Batch means of each loss term. The pretraining `total` is the sum of
    /// the other terms, `recon` already carrying its weight.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub losses: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<Retrieval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<EvalReport>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RecordLine {
    Header {
        phase: Phase,
        fingerprint: String,
        scheduler: String,
        granularity: String,
    },
    Epoch(EpochRecord),
    Final {
        best_epoch: usize,
        /// Dev R@1 (video to text) for pretraining, dev BLEU-4 for finetuning.
        best_metric: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        report: Option<EvalReport>,
    },
}

impl RecordLine {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record lines always serialize")
    }
}

/// Parsed `record.log`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub phase: Phase,
    pub fingerprint: String,
    pub scheduler: String,
    pub granularity: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
    pub report: Option<EvalReport>,
}

impl RunRecord {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let bad = |n: usize, why: String| Error::Parse(format!("record line {}: {why}", n + 1));
        let (n, first) = lines.next().ok_or_else(|| Error::Parse("empty record".into()))?;
        let RecordLine::Header { phase, fingerprint, scheduler, granularity } =
            serde_json::from_str(first).map_err(|e| bad(n, e.to_string()))?
        else {
            return Err(bad(n, "first line is not a header".into()));
        };
        let mut rec = RunRecord {
            phase,
            fingerprint,
            scheduler,
            granularity,
            epochs: Vec::new(),
            best_epoch: None,
            best_metric: None,
            report: None,
        };
        for (n, line) in lines {
            if rec.best_epoch.is_some() {
                return Err(bad(n, "line after the final summary".into()));
            }
            match serde_json::from_str(line).map_err(|e| bad(n, e.to_string()))? {
                RecordLine::Header { .. } => return Err(bad(n, "second header".into())),
                RecordLine::Epoch(e) => {
                    if e.epoch != rec.epochs.len() {
                        return Err(bad(n, format!("epoch {} out of sequence", e.epoch)));
                    }
                    rec.epochs.push(e);
                }
                RecordLine::Final { best_epoch, best_metric, report } => {
                    rec.best_epoch = Some(best_epoch);
                    rec.best_metric = Some(best_metric);
                    rec.report = report;
                }
            }
        }
        Ok(rec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Equality ignoring wall-clock times.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        let strip = |r: &RunRecord| {
            let mut r = r.clone();
            r.epochs.iter_mut().for_each(|e| e.wall_ms = 0);
            r
        };
        strip(self) == strip(other)
    }
}

/// Appends one line with a single write and flushes it to disk.
pub fn append_line(path: &Path, line: &RecordLine) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = line.to_line();
    text.push('\n');
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}
