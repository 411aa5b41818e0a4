//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so the criteria execute in order and
//! their verdicts are printed even when everything passes. Criteria 5 and 6
//! train the reference experiment on three seeds; set `SLT_ACCEPTANCE_DIR`
//! to keep (and reuse) those runs, and `SLT_ACCEPTANCE_ONLY=5,6` to run a
//! subset.

mod common;

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slt_core::alignment::infonce_value;
use slt_core::datagen::generate_corpus;
use slt_core::encoders::{
    init_visual, shared_encode, spatiotemporal_encode, temporal_encode, temporal_len, window_count, EncoderConfig,
    TEMPORAL_RES,
};
use slt_core::fusion::{fuse, init_adapter, init_fusion, vl_adapter, FusionConfig, FusionMode};
use slt_core::harness::{self, finetune, pretrain, RunOptions, TrainConfig, BEST_CKPT, LAST_CKPT};
use slt_core::metrics::{bleu, recall_at_k, rouge_l, tokenize};
use slt_core::optim::{cosine_annealing, exponential, one_cycle, one_cycle_peak};
use slt_core::substrate::{grad_check, Array, GradCheckOptions, Graph, Mode, ParamStore};
use slt_core::translation::{Branches, ENCODER};
use slt_core::{encoders::Branch, nn};

use common::{loss_catalogue, op_catalogue, overfit_config, rand_array, random_video, tiny_train_config};

const GRAD_H: f64 = 1e-5;
/// Step used to re-probe an entry whose stencil straddles a ReLU or
/// max-pool switch.
const GRAD_H_FINE: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 5;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const SHAPE_BUDGET: Duration = Duration::from_secs(60);
const ORACLE_TOL: f64 = 1e-9;
const SEEDS: [u64; 3] = [1, 2, 3];
const MIN_DEV_R1: f64 = 0.60;
const MIN_DEV_BLEU4: f64 = 50.0;
const SEED_BUDGET: Duration = Duration::from_secs(30 * 60);
const ABLATION_SLACK: f64 = 1.0;
const BLEU_CASE: f64 = 77.88;
const BLEU_CASE_TOL: f64 = 0.01;
const ROUGE_CASE: f64 = 0.857;
const ROUGE_CASE_TOL: f64 = 0.001;
const COLUMN_TOL: f64 = 1e-9;
const MIN_MONOTONE: f64 = 0.70;
const OVERFIT_EPOCHS: usize = 150;
const OVERFIT_LR: f64 = 0.02;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn c1_gradients() -> Check {
    let start = Instant::now();
    let (mut entries, mut refined) = (0usize, 0usize);
    let mut worst: f64 = 0.0;
    for seed in 0..GRAD_SEEDS {
        for mut case in op_catalogue(seed).into_iter().chain(loss_catalogue(seed)) {
            let run = |p: &mut ParamStore, h: f64, max: Option<usize>| {
                let opts = GradCheckOptions { h, tol: GRAD_TOL, max_per_entry: max, seed };
                grad_check(&case.f, p, opts)
            };
            let max = case.params.iter().map(|(_, p)| p.value.len()).sum::<usize>().gt(&64).then_some(3);
            let coarse = run(&mut case.params, GRAD_H, max).map_err(e2s)?;
            let fine = if coarse.passed() { None } else { Some(run(&mut case.params, GRAD_H_FINE, max).map_err(e2s)?) };
            for (i, e) in coarse.entries.iter().enumerate() {
                entries += 1;
                let err = if e.passed {
                    e.max_rel_err
                } else {
                    refined += 1;
                    let f = &fine.as_ref().expect("rechecked").entries[i];
                    ensure(f.passed, format!("{} seed {seed} {}: rel err {:.2e} / {:.2e}", case.name, e.name, e.max_rel_err, f.max_rel_err))?;
                    f.max_rel_err
                };
                worst = worst.max(err);
            }
        }
    }
    let took = start.elapsed();
    ensure(took < GRAD_BUDGET, format!("took {took:.1?}"))?;
    Ok(format!(
        "{entries} entries over {GRAD_SEEDS} seeds, worst rel err {worst:.2e}, {refined} re-probed at h={GRAD_H_FINE:e}"
    ))
}

fn c2_infonce() -> Check {
    let one = infonce_value(&Array::from_rows(&[vec![0.7]]).map_err(e2s)?, 0.07).map_err(e2s)?;
    ensure(one == 0.0, format!("N=1 gave {one}"))?;
    let mut worst: f64 = 0.0;
    for n in 2..=16 {
        let v = infonce_value(&Array::full(&[n, n], 0.3), 0.07).map_err(e2s)?;
        worst = worst.max((v - (n as f64).ln()).abs());
    }
    ensure(worst < ORACLE_TOL, format!("uniform off by {worst:e}"))?;
    let eye = Array::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).map_err(e2s)?;
    let v = infonce_value(&eye, 1.0).map_err(e2s)?;
    let want = (1.0 + (-1f64).exp()).ln();
    ensure((v - want).abs() < ORACLE_TOL, format!("identity gave {v}, want {want}"))?;
    Ok(format!("N=1 -> 0, uniform within {worst:.1e} of ln N, identity {v:.12}"))
}

fn c3_shapes() -> Check {
    let start = Instant::now();
    let cfg = EncoderConfig::default();
    let mut p = ParamStore::new();
    init_visual(&mut p, &cfg, 3).map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in 4..=200 {
        let mut g = Graph::new(Mode::Train);
        let x = g.input(rand_array(&mut rng, &[t, cfg.d_spatial], 1.0)).map_err(e2s)?;
        let out = temporal_encode(&mut g, &p, TEMPORAL_RES, &[x]).map_err(e2s)?;
        ensure(g.shape(out[0]) == [t / 2 / 2, cfg.d_model], format!("temporal T={t}: {:?}", g.shape(out[0])))?;
        ensure(temporal_len(t) == t / 2 / 2, format!("temporal_len({t})"))?;
    }
    for t in 16..=200 {
        ensure(window_count(t, 16, 6) == (t - 16) / 6 + 1, format!("W at T={t}"))?;
    }
    for t in 1..=200 {
        let video = random_video(&mut rng, t, cfg.frame_size);
        let mut g = Graph::new(Mode::Eval);
        let out = spatiotemporal_encode(&mut g, &p, &cfg, &video).map_err(e2s)?;
        ensure(g.shape(out) == [t, cfg.d_spatiotemporal], format!("spatio-temporal T={t}: {:?}", g.shape(out)))?;
    }
    let d = cfg.d_model;
    for mode in FusionMode::ALL {
        for query in [Branch::Spatial, Branch::Spatiotemporal] {
            let fc = FusionConfig { mode, query };
            let mut fp = ParamStore::new();
            init_fusion(&mut fp, &fc, d, 1).map_err(e2s)?;
            init_adapter(&mut fp, mode.fused_dim(d), d, 1).map_err(e2s)?;
            for l in [1, 7, 50] {
                let mut g = Graph::new(Mode::Eval);
                let a = g.input(rand_array(&mut rng, &[l, d], 1.0)).map_err(e2s)?;
                let b = g.input(rand_array(&mut rng, &[l, d], 1.0)).map_err(e2s)?;
                let z = fuse(&mut g, &fp, &fc, cfg.heads, a, b).map_err(e2s)?;
                ensure(g.shape(z) == [l, mode.fused_dim(d)], format!("{mode} fused {:?}", g.shape(z)))?;
                let y = vl_adapter(&mut g, &fp, z).map_err(e2s)?;
                ensure(g.shape(y) == [l, d], format!("{mode} adapter {:?}", g.shape(y)))?;
            }
        }
    }
    let took = start.elapsed();
    ensure(took < SHAPE_BUDGET, format!("took {took:.1?}"))?;
    Ok(format!("temporal T in [4,200], W for T in [16,200], spatio-temporal T in [1,200], 3 fusion modes"))
}

fn c4_transfer() -> Check {
    let cfg = tiny_train_config();
    let corpus = generate_corpus(&cfg.data).map_err(e2s)?;
    let dir = tempfile::tempdir().map_err(e2s)?;
    let pre_opts = RunOptions { resume: false, stop_after: None };
    let mut pc = cfg.clone();
    pc.pretrain.phase.epochs = 1;
    pc.pretrain.phase.scheduler_epochs = 1;
    pretrain(&pc, &corpus, dir.path(), pre_opts).map_err(e2s)?;
    let ckpt = dir.path().join(BEST_CKPT);
    let pre = harness::load_model(&ckpt).map_err(e2s)?;

    let mut ft = cfg.clone();
    ft.finetune.init = Some(ckpt.to_str().ok_or("path")?.to_string());
    let tok = harness::tokenizer_for(&corpus).map_err(e2s)?;
    let p = harness::train::finetune_init(&ft, &tok).map_err(e2s)?;
    let enc = &cfg.model.encoder;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..10 {
        let x = rand_array(&mut rng, &[3 + i, enc.d_model], 2.0);
        let mut g = Graph::new(Mode::Eval);
        let xa = g.input(x.clone()).map_err(e2s)?;
        let a = shared_encode(&mut g, &pre.params, enc, xa).map_err(e2s)?;
        let xb = g.input(x).map_err(e2s)?;
        let b = nn::encoder(&mut g, &p, ENCODER, enc.shared_dims(), xb).map_err(e2s)?;
        let same = g.value(a).data().iter().zip(g.value(b).data()).all(|(u, v)| u.to_bits() == v.to_bits());
        ensure(same, format!("input {i} differs"))?;
    }
    Ok("translation encoder equals the pretrained shared encoder bit for bit on 10 inputs".into())
}

/// Best dev metrics of every reference run, keyed by (seed, variant).
struct Experiments {
    r1_untrained: BTreeMap<u64, f64>,
    r1_best: BTreeMap<u64, f64>,
    bleu: BTreeMap<(u64, &'static str), f64>,
    seed_time: BTreeMap<u64, Duration>,
}

const VARIANTS: [&str; 4] = ["dual", "spatial", "spatiotemporal", "random"];

fn run_experiments(root: &Path) -> slt_core::Result<Experiments> {
    let resume = RunOptions { resume: true, stop_after: None };
    let mut ex = Experiments {
        r1_untrained: BTreeMap::new(),
        r1_best: BTreeMap::new(),
        bleu: BTreeMap::new(),
        seed_time: BTreeMap::new(),
    };
    for seed in SEEDS {
        let mut cfg = TrainConfig::reference();
        cfg.data.seed = seed;
        let corpus = generate_corpus(&cfg.data)?;
        let seed_dir = root.join(format!("seed{seed}"));
        let pre = pretrain(&cfg, &corpus, &seed_dir.join("pretrain"), resume)?;
        let r1 = |e: &harness::EpochRecord| e.retrieval.map(|r| r.v2t_r1).unwrap_or(f64::NAN);
        ex.r1_untrained.insert(seed, r1(&pre.record.epochs[0]));
        ex.r1_best.insert(seed, pre.record.best_metric.unwrap_or(f64::NAN));
        let mut wall: u64 = pre.record.epochs.iter().map(|e| e.wall_ms).sum();
        let ckpt = seed_dir.join("pretrain").join(BEST_CKPT);
        for variant in VARIANTS {
            let mut vc = cfg.clone();
            match variant {
                "random" => vc.finetune.init = None,
                b => {
                    vc.finetune.init = Some(ckpt.to_string_lossy().into_owned());
                    vc.finetune.branches = b.parse::<Branches>()?;
                }
            }
            let out = finetune(&vc, &corpus, &seed_dir.join(variant), resume)?;
            ex.bleu.insert((seed, variant), out.record.best_metric.unwrap_or(f64::NAN));
            if variant == "dual" {
                wall += out.record.epochs.iter().map(|e| e.wall_ms).sum::<u64>();
            }
        }
        ex.seed_time.insert(seed, Duration::from_millis(wall));
    }
    Ok(ex)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn c5_learnability(ex: &Experiments) -> Check {
    let mut parts = Vec::new();
    for seed in SEEDS {
        let (r0, r1) = (ex.r1_untrained[&seed], ex.r1_best[&seed]);
        let b = ex.bleu[&(seed, "dual")];
        let t = ex.seed_time[&seed];
        parts.push(format!("seed {seed}: R@1 {r0:.2}->{r1:.2}, BLEU-4 {b:.1}, {:.1} min", t.as_secs_f64() / 60.0));
        ensure(r1 > r0 && r1 >= MIN_DEV_R1, format!("seed {seed}: dev R@1 {r0:.3} -> {r1:.3}"))?;
        ensure(b >= MIN_DEV_BLEU4, format!("seed {seed}: dev BLEU-4 {b:.2}"))?;
        ensure(t < SEED_BUDGET, format!("seed {seed}: {t:.0?}"))?;
    }
    Ok(parts.join("; "))
}

fn c6_ablation(ex: &Experiments) -> Check {
    let m = |v: &str| mean(SEEDS.iter().map(|s| ex.bleu[&(*s, v)]));
    let (dual, spatial, st, random) = (m("dual"), m("spatial"), m("spatiotemporal"), m("random"));
    let detail = format!("mean dev BLEU-4 dual {dual:.2}, spatial {spatial:.2}, spatio-temporal {st:.2}, random init {random:.2}");
    ensure(dual >= spatial - ABLATION_SLACK && dual >= st - ABLATION_SLACK, detail.clone())?;
    ensure(dual >= random - ABLATION_SLACK, detail.clone())?;
    Ok(detail)
}

fn c7_metrics() -> Check {
    let s = vec![tokenize("the red bird flies home")];
    let exact = bleu(&s, &s, 4).map_err(e2s)?;
    ensure((exact - 100.0).abs() < ORACLE_TOL, format!("exact match {exact}"))?;
    let b = bleu(&[tokenize("a b c d")], &[tokenize("a b c d e")], 4).map_err(e2s)?;
    ensure((b - BLEU_CASE).abs() <= BLEU_CASE_TOL, format!("BLEU case {b}"))?;
    let r = rouge_l(&tokenize("a b d"), &tokenize("a c b d")).map_err(e2s)?;
    ensure((r - ROUGE_CASE).abs() <= ROUGE_CASE_TOL, format!("ROUGE case {r}"))?;
    let n = 6;
    let eye = Array::from_rows(&(0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect::<Vec<_>>()).map_err(e2s)?;
    let rec = recall_at_k(&eye, 1).map_err(e2s)?;
    ensure(rec.video_to_text == 1.0 && rec.text_to_video == 1.0, format!("{rec:?}"))?;
    Ok(format!("exact 100, BLEU-4 case {b:.4}, ROUGE-L case {r:.4}, identity R@1 1.0"))
}

fn c8_schedulers() -> Check {
    let (lr0, lr_min, total) = (0.02, 0.0005, 40);
    ensure(cosine_annealing(lr0, 0, total, lr_min).map_err(e2s)? == lr0, "cosine start")?;
    let end = cosine_annealing(lr0, total, total, lr_min).map_err(e2s)?;
    ensure((end - lr_min).abs() < ORACLE_TOL, format!("cosine end {end}"))?;
    for steps in [10, 50, 200, 2000] {
        let peak = one_cycle_peak(0.35, steps);
        ensure(peak == (0.35 * steps as f64).round() as usize, "peak index")?;
        let lrs: Vec<f64> = (0..=steps).map(|s| one_cycle(lr0, 0.35, s, steps)).collect::<slt_core::Result<_>>().map_err(e2s)?;
        ensure(lrs[peak] == lr0, format!("one-cycle peak {} at {peak}", lrs[peak]))?;
        ensure(lrs.iter().all(|&l| l <= lr0), "one-cycle above max")?;
        ensure(lrs[..=peak].windows(2).all(|w| w[1] >= w[0]), "one-cycle rise")?;
        ensure(lrs[peak..].windows(2).all(|w| w[1] <= w[0]), "one-cycle fall")?;
    }
    let e = exponential(lr0, 0.96, 10).map_err(e2s)?;
    ensure((e - 0.02 * 0.96f64.powi(10)).abs() < ORACLE_TOL, format!("exponential {e}"))?;
    Ok(format!("cosine {lr0} -> {lr_min}, one-cycle peak at round(0.35 N) and unimodal, exponential(10) = {e:.7}"))
}

fn c9_determinism() -> Check {
    let mut cfg = tiny_train_config();
    cfg.finetune.phase.scheduler = harness::SchedulerKind::OneCycle;
    let corpus = generate_corpus(&cfg.data).map_err(e2s)?;
    let fresh = RunOptions { resume: false, stop_after: None };
    let dirs: Vec<tempfile::TempDir> = (0..6).map(|_| tempfile::tempdir()).collect::<Result<_, _>>().map_err(e2s)?;
    let a = pretrain(&cfg, &corpus, dirs[0].path(), fresh).map_err(e2s)?;
    let b = pretrain(&cfg, &corpus, dirs[1].path(), fresh).map_err(e2s)?;
    ensure(a.record.same_outcome(&b.record), "pretraining records differ")?;
    pretrain(&cfg, &corpus, dirs[2].path(), RunOptions { resume: false, stop_after: Some(1) }).map_err(e2s)?;
    let c = pretrain(&cfg, &corpus, dirs[2].path(), RunOptions { resume: true, stop_after: None }).map_err(e2s)?;
    ensure(a.record.same_outcome(&c.record), "resumed pretraining differs")?;

    cfg.finetune.init = Some(dirs[0].path().join(BEST_CKPT).to_string_lossy().into_owned());
    let d = finetune(&cfg, &corpus, dirs[3].path(), fresh).map_err(e2s)?;
    let e = finetune(&cfg, &corpus, dirs[4].path(), fresh).map_err(e2s)?;
    ensure(d.record.same_outcome(&e.record), "finetuning records differ")?;
    finetune(&cfg, &corpus, dirs[5].path(), RunOptions { resume: false, stop_after: Some(2) }).map_err(e2s)?;
    let f = finetune(&cfg, &corpus, dirs[5].path(), RunOptions { resume: true, stop_after: None }).map_err(e2s)?;
    ensure(d.record.same_outcome(&f.record), "resumed finetuning differs")?;
    Ok(format!(
        "identical records for repeated and resumed runs ({} pretrain + {} finetune epochs)",
        a.record.epochs.len() - 1,
        d.record.epochs.len() - 1
    ))
}

fn argmax_frames(m: &Array) -> std::result::Result<Vec<usize>, String> {
    let (rows, cols) = (m.rows(), m.row_len());
    (0..cols)
        .map(|k| {
            let col: Vec<f64> = (0..rows).map(|f| m.get2(f, k)).collect();
            let s: f64 = col.iter().sum();
            ensure((s - 1.0).abs() <= COLUMN_TOL, format!("column {k} sums to {s}"))?;
            Ok((0..rows).fold(0, |b, f| if col[f] > col[b] { f } else { b }))
        })
        .collect()
}

/// (non-decreasing adjacent pairs, all adjacent pairs)
fn monotone_pairs(argmax: &[usize]) -> (usize, usize) {
    (argmax.windows(2).filter(|w| w[1] >= w[0]).count(), argmax.len().saturating_sub(1))
}

/// Column sums on the overfit-one-sample checkpoint; monotone alignment on
/// the dev sets of the trained reference models. The overfit figure is
/// reported but not gated: a decoder that memorises one sentence has no
/// reason to align with the video.
fn c10_attention(root: &Path) -> Check {
    let cfg = overfit_config(TrainConfig::reference(), OVERFIT_EPOCHS, OVERFIT_LR);
    let corpus = generate_corpus(&cfg.data).map_err(e2s)?;
    let dir = tempfile::tempdir().map_err(e2s)?;
    finetune(&cfg, &corpus, dir.path(), RunOptions { resume: false, stop_after: None }).map_err(e2s)?;
    let sample = &corpus.train[0];
    let e = harness::export_attention_files(&dir.path().join(LAST_CKPT), &corpus, &sample.id, &dir.path().join("attn"))
        .map_err(e2s)?;
    let target = corpus.target(sample).map_err(e2s)?;
    ensure(e.tokens == target, format!("overfit model decoded {:?}, want {:?}", e.tokens, target))?;
    let (m, n) = monotone_pairs(&argmax_frames(&e.matrix)?);
    let overfit = m as f64 / n.max(1) as f64;

    let (mut good, mut total, mut columns) = (0, 0, 0);
    for seed in SEEDS {
        let ckpt = root.join(format!("seed{seed}")).join("dual").join(BEST_CKPT);
        let model = harness::load_model(&ckpt).map_err(e2s)?;
        let corpus = generate_corpus(&model.config.data).map_err(e2s)?;
        for s in &corpus.dev {
            let e = harness::export_attention_files(&ckpt, &corpus, &s.id, &dir.path().join("dev")).map_err(e2s)?;
            let am = argmax_frames(&e.matrix)?;
            columns += am.len();
            let (m, n) = monotone_pairs(&am);
            good += m;
            total += n;
        }
    }
    let trained = good as f64 / total.max(1) as f64;
    ensure(trained >= MIN_MONOTONE, format!("trained models: {:.1}% of {total} pairs non-decreasing", trained * 100.0))?;
    Ok(format!(
        "{columns} columns sum to 1; {:.1}% of {total} adjacent pairs non-decreasing on dev; overfit sample {:.0}% (not gated)",
        trained * 100.0,
        overfit * 100.0
    ))
}

fn runs_dir() -> (PathBuf, Option<tempfile::TempDir>) {
    match std::env::var_os("SLT_ACCEPTANCE_DIR") {
        Some(d) => (PathBuf::from(d), None),
        None => {
            let t = tempfile::tempdir().expect("temporary directory");
            (t.path().to_path_buf(), Some(t))
        }
    }
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("SLT_ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().map_or(true, |o| o.contains(&n));
    if std::env::args().any(|a| a == "--list") {
        return;
    }

    let (root, _guard) = runs_dir();
    let experiments: OnceCell<std::result::Result<Experiments, String>> = OnceCell::new();
    let experiments_for = || experiments.get_or_init(|| run_experiments(&root).map_err(e2s)).as_ref().map_err(Clone::clone);

    let names = [
        "gradient correctness",
        "InfoNCE oracle values",
        "shape and length contracts",
        "transfer soundness",
        "end-to-end learnability",
        "ablation direction",
        "metric oracles",
        "scheduler curves",
        "determinism and resume",
        "attention export",
    ];
    let mut failed = 0;
    let mut out = std::io::stdout();
    for (i, name) in names.iter().enumerate() {
        let n = i + 1;
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(|| match n {
            1 => c1_gradients(),
            2 => c2_infonce(),
            3 => c3_shapes(),
            4 => c4_transfer(),
            5 => experiments_for().and_then(c5_learnability),
            6 => experiments_for().and_then(c6_ablation),
            7 => c7_metrics(),
            8 => c8_schedulers(),
            9 => c9_determinism(),
            _ => experiments_for().and_then(|_| c10_attention(&root)),
        }))
        .unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match verdict {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        let _ = writeln!(out, "[{tag}] criterion {n:>2} {name}: {detail} ({:.1?})", start.elapsed());
        let _ = out.flush();
    }
    if failed > 0 {
        let _ = writeln!(out, "{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
