use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::train::{eval_view, evaluate_split, load_model, PREDICTIONS_FILE, REPORT_FILE};
use super::record::Phase;
use crate::datagen::{Corpus, Split, VideoSample};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::substrate::Array;
use crate::translation::{export_attention, greedy_decode};

/// One line of `predictions.txt`: `id \t hypothesis \t reference`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub id: String,
    pub hypothesis: Vec<String>,
    pub reference: Vec<String>,
}

pub fn format_predictions(preds: &[Prediction]) -> String {
    let mut out = String::new();
    for p in preds {
        let _ = writeln!(out, "{}\t{}\t{}", p.id, p.hypothesis.join(" "), p.reference.join(" "));
    }
    out
}

pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, hyp, reference] = fields[..] else {
                return Err(Error::Parse(format!("predictions line {}: expected 3 tab-separated fields", n + 1)));
            };
            if id.is_empty() || id.contains(char::is_whitespace) {
                return Err(Error::Parse(format!("predictions line {}: bad sample id {id:?}", n + 1)));
            }
            let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
            Ok(Prediction {
                id: id.to_string(),
                hypothesis: words(hyp),
                reference: words(reference),
            })
        })
        .collect()
}

pub fn format_report(fingerprint: &str, split: &str, report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "fingerprint = {fingerprint}");
    let _ = writeln!(out, "split = {split}");
    let _ = writeln!(out, "samples = {}", report.samples);
    for (n, b) in report.bleu.iter().enumerate() {
        let _ = writeln!(out, "bleu{} = {b:.4}", n + 1);
    }
    let _ = writeln!(out, "rouge_l = {:.4}", report.rouge_l);
    out
}

pub(crate) fn write_evaluation(
    dir: &Path,
    fingerprint: &str,
    split: &str,
    samples: &[VideoSample],
    hyps: &[Vec<String>],
    corpus: &Corpus,
    report: &EvalReport,
) -> Result<()> {
    let preds = samples
        .iter()
        .zip(hyps)
        .map(|(s, h)| {
            Ok(Prediction {
                id: s.id.clone(),
                hypothesis: h.clone(),
                reference: corpus.target(s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(PREDICTIONS_FILE);
    std::fs::write(&p, format_predictions(&preds)).map_err(|e| Error::io(&p, e))?;
    let r = dir.join(REPORT_FILE);
    std::fs::write(&r, format_report(fingerprint, split, report)).map_err(|e| Error::io(&r, e))
}

/// Decodes a split with a finetuned checkpoint and writes the predictions
/// and report into `out_dir`.
pub fn evaluate(ckpt: &Path, corpus: &Corpus, split: Split, out_dir: &Path) -> Result<EvalReport> {
    let model = load_model(ckpt)?;
    if model.phase != Phase::Finetune {
        return Err(Error::InvalidArgument(format!("{} is not a translation checkpoint", ckpt.display())));
    }
    let samples = corpus.split(split);
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("split {} is empty", split.name())));
    }
    let (report, hyps) = evaluate_split(&model.config, corpus, &model.params, &model.tokenizer, samples)?;
    write_evaluation(out_dir, &model.config.fingerprint(), split.name(), samples, &hyps, corpus, &report)?;
    Ok(report)
}

/// Comma-separated rows, one per frame, one column per token, written with
/// round-trip precision.
pub fn format_matrix_csv(m: &Array) -> String {
    let mut out = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_matrix_csv(text: &str) -> Result<Array> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse(format!("matrix line {}: bad value {f:?}", n + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("empty matrix".into()));
    }
    Array::from_rows(&rows).map_err(|_| Error::Parse("ragged matrix rows".into()))
}

/// Binary greymap, width = columns, height = rows, min to 0 and max to 255.
pub fn encode_pgm(m: &Array) -> Vec<u8> {
    let (h, w) = (m.rows(), m.row_len());
    let lo = m.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(m.data().iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

/// Width, height and pixels of a binary greymap with maxval 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |why: &str| Error::Format(format!("pgm: {why}"));
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(bad("not a binary greymap"));
    }
    let mut dim = || -> Result<usize> { token()?.parse().map_err(|_| bad("bad dimension")) };
    let (w, h, max) = (dim()?, dim()?, dim()?);
    if max != 255 {
        return Err(bad("maxval must be 255"));
    }
    let n = w.checked_mul(h).ok_or_else(|| bad("dimensions overflow"))?;
    let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
    if data.len() != n {
        return Err(bad("raster size mismatch"));
    }
    Ok((w, h, data.to_vec()))
}

/// Paths written by [`export_attention_files`].
pub struct AttentionExport {
    pub matrix: Array,
    pub tokens: Vec<String>,
    pub csv: PathBuf,
    pub pgm: PathBuf,
}

/// Decodes `sample_id`, then writes the final decoder layer's cross-attention
/// (frames by tokens) as `<out>.csv` and `<out>.pgm`.
pub fn export_attention_files(ckpt: &Path, corpus: &Corpus, sample_id: &str, out: &Path) -> Result<AttentionExport> {
    let model = load_model(ckpt)?;
    if model.phase != Phase::Finetune {
        return Err(Error::InvalidArgument(format!("{} is not a translation checkpoint", ckpt.display())));
    }
    let sample = corpus
        .find(sample_id)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown sample id {sample_id:?}")))?;
    let cfg = model.config.translation_config();
    let video = eval_view(sample, model.config.data.frame_size)?;
    let ids = greedy_decode(&model.params, &cfg, &video, cfg.text.max_len)?;
    if ids.is_empty() {
        return Err(Error::InvalidArgument(format!("model produced no tokens for {sample_id}")));
    }
    let matrix = export_attention(&model.params, &cfg, &video, &ids)?;
    let csv = out.with_extension("csv");
    let pgm = out.with_extension("pgm");
    if let Some(parent) = csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&csv, format_matrix_csv(&matrix)).map_err(|e| Error::io(&csv, e))?;
    std::fs::write(&pgm, encode_pgm(&matrix)).map_err(|e| Error::io(&pgm, e))?;
    Ok(AttentionExport {
        matrix,
        tokens: model.tokenizer.decode(&ids),
        csv,
        pgm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions_round_trip() {
        let preds = vec![Prediction {
            id: "dev-0001".into(),
            hypothesis: vec!["the".into(), "rain".into()],
            reference: vec![],
        }];
        assert_eq!(parse_predictions(&format_predictions(&preds)).unwrap(), preds);
        assert!(parse_predictions("a\tb\n").is_err());
    }

    #[test]
    fn matrix_and_image_round_trip() {
        let m = Array::from_rows(&[vec![0.1, 0.7], vec![0.9, 0.3], vec![0.0, 0.0]]).unwrap();
        let back = parse_matrix_csv(&format_matrix_csv(&m)).unwrap();
        assert_eq!(back, m);
        let (w, h, px) = decode_pgm(&encode_pgm(&m)).unwrap();
        assert_eq!((w, h), (2, 3));
        assert_eq!(px[2], 255);
        assert_eq!(px[4], 0);
    }
}
