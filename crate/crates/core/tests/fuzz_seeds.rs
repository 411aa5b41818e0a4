//! Replays the checked-in fuzz corpora, plus truncated and bit-flipped
//! variants of every seed, through the same checks the fuzz targets make.

use std::path::Path;

use slt_core::harness::{
    decode_pgm, encode_pgm, format_matrix_csv, format_predictions, parse_matrix_csv, parse_predictions, RunRecord,
    TrainConfig,
};
use slt_core::substrate::{Checkpoint, ParamStore};
use slt_core::translation::Tokenizer;

fn checkpoint_decode(data: &[u8]) -> bool {
    let Ok(ck) = Checkpoint::decode(data) else { return false };
    let again = Checkpoint::decode(&ck.encode()).expect("re-encoded checkpoint decodes");
    assert_eq!(again.encode(), ck.encode());
    let _ = ParamStore::from_checkpoint(&ck);
    let _ = slt_core::translation::load_tokenizer(&ck);
    true
}

fn config_parse(text: &str) -> bool {
    let Ok(cfg) = TrainConfig::parse(text) else { return false };
    let canon = cfg.canonical_text();
    assert_eq!(TrainConfig::parse(&canon).expect("canonical text parses").canonical_text(), canon);
    let _ = cfg.validate();
    true
}

fn predictions_parse(text: &str) -> bool {
    let Ok(preds) = parse_predictions(text) else { return false };
    assert_eq!(parse_predictions(&format_predictions(&preds)).expect("formatted predictions parse"), preds);
    true
}

fn matrix_csv_parse(text: &str) -> bool {
    let Ok(m) = parse_matrix_csv(text) else { return false };
    assert_eq!(parse_matrix_csv(&format_matrix_csv(&m)).expect("formatted matrix parses").shape(), m.shape());
    let _ = encode_pgm(&m);
    true
}

fn pgm_decode(data: &[u8]) -> bool {
    let Ok((w, h, raster)) = decode_pgm(data) else { return false };
    assert_eq!(raster.len(), w * h);
    true
}

fn tokenizer_from_text(text: &str) -> bool {
    let Ok(tok) = Tokenizer::from_text(text) else { return false };
    assert_eq!(Tokenizer::from_text(&tok.to_text()).expect("round trip"), tok);
    true
}

fn text(f: fn(&str) -> bool) -> impl Fn(&[u8]) -> bool {
    move |d| std::str::from_utf8(d).map(f).unwrap_or(false)
}

fn variants(seed: &[u8]) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let n = seed.len();
    for cut in [1, 2, 7, n / 3, n / 2, n.saturating_sub(1)] {
        out.push(seed[..cut.min(n)].to_vec());
    }
    let step = (n / 64).max(1);
    for i in (0..n).step_by(step) {
        for bit in [0, 3, 7] {
            let mut v = seed.to_vec();
            v[i] ^= 1 << bit;
            out.push(v);
        }
    }
    out
}

fn replay(target: &str, check: impl Fn(&[u8]) -> bool) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut seeds = 0;
    for entry in std::fs::read_dir(&dir).unwrap_or_else(|e| panic!("{}: {e}", dir.display())) {
        let path = entry.unwrap().path();
        let bytes = std::fs::read(&path).unwrap();
        assert!(check(&bytes), "seed {} is rejected", path.display());
        for v in variants(&bytes) {
            check(&v);
        }
        seeds += 1;
    }
    assert!(seeds > 0, "no seeds for {target}");
}

#[test]
fn checkpoint_seeds() {
    replay("checkpoint_decode", checkpoint_decode);
}

#[test]
fn config_seeds() {
    replay("config_parse", text(config_parse));
}

#[test]
fn manifest_seeds() {
    replay("manifest_parse", text(|t| slt_core::datagen::parse_manifest(t).is_ok()));
}

#[test]
fn predictions_seeds() {
    replay("predictions_parse", text(predictions_parse));
}

#[test]
fn record_seeds() {
    replay("record_parse", text(|t| RunRecord::parse(t).is_ok()));
}

#[test]
fn matrix_csv_seeds() {
    replay("matrix_csv_parse", text(matrix_csv_parse));
}

#[test]
fn pgm_seeds() {
    replay("pgm_decode", pgm_decode);
}

#[test]
fn tokenizer_seeds() {
    replay("tokenizer_from_text", text(tokenizer_from_text));
}
