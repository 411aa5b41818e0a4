use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;

use super::config::{PhaseConfig, TrainConfig};
use super::record::{append_line, EpochRecord, Phase, RecordLine, Retrieval, RunRecord};
use crate::alignment::{self, clamp_logit_scale, pretraining_terms};
use crate::datagen::{augment, center_crop, random_crop, Corpus, VideoSample};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_corpus, recall_at_k, EvalReport};
use crate::optim::Sgd;
use crate::seed::{derive_seed, rng_for};
use crate::substrate::{apply_batch_norm_updates, Array, Checkpoint, Graph, Mode, ParamStore};
use crate::translation::{self, greedy_decode, load_tokenizer, save_tokenizer, Tokenizer};

pub const CONFIG_FILE: &str = "config.txt";
pub const RECORD_FILE: &str = "record.log";
pub const BEST_CKPT: &str = "ckpt-best";
pub const LAST_CKPT: &str = "ckpt-last";
pub const REPORT_FILE: &str = "report.txt";
pub const PREDICTIONS_FILE: &str = "predictions.txt";

/// Controls for one invocation of a training phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Continue from `ckpt-last` when the run directory already has one.
    pub resume: bool,
    /// Return after this many completed epochs, as if interrupted.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub record: RunRecord,
    /// False when `stop_after` cut the run short.
    pub finished: bool,
}

pub fn tokenizer_for(corpus: &Corpus) -> Result<Tokenizer> {
    let targets = corpus
        .train
        .iter()
        .map(|s| corpus.target(s))
        .collect::<Result<Vec<_>>>()?;
    Tokenizer::build(&targets)
}

pub fn encode_targets(corpus: &Corpus, tok: &Tokenizer, samples: &[VideoSample]) -> Result<Vec<Vec<usize>>> {
    samples.iter().map(|s| Ok(tok.encode(&corpus.target(s)?))).collect()
}

/// Evaluation view: center crop to the model frame size.
pub fn eval_view(sample: &VideoSample, frame_size: usize) -> Result<Array> {
    center_crop(&sample.frames, frame_size)
}

/// Training view of sample `index` in `epoch`: augmentation, then a random
/// crop, both from streams keyed by (epoch, index).
pub fn train_view(cfg: &TrainConfig, sample: &VideoSample, epoch: usize, index: usize) -> Result<Array> {
    let key = (epoch as u64) << 32 | index as u64;
    let root = cfg.root_seed();
    let warped = augment(&sample.frames, derive_seed(root, "augment", key), &cfg.augment)?;
    random_crop(&warped, cfg.data.frame_size, &mut rng_for(root, "crop", key))
}

fn shuffled(cfg: &TrainConfig, phase: Phase, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(cfg.root_seed(), &format!("shuffle/{}", phase.name()), epoch as u64));
    order
}

fn ckpt_meta<'a>(ck: &'a Checkpoint, key: &str) -> Result<&'a str> {
    ck.meta(key).ok_or_else(|| Error::Checkpoint {
        name: key.into(),
        reason: "missing".into(),
    })
}

fn ckpt_num<T: std::str::FromStr>(ck: &Checkpoint, key: &str) -> Result<T> {
    ckpt_meta(ck, key)?.parse().map_err(|_| Error::Checkpoint {
        name: key.into(),
        reason: "not a number".into(),
    })
}

/// Model checkpoint: parameters plus everything needed to rebuild the model.
fn model_checkpoint(cfg: &TrainConfig, phase: Phase, tok: &Tokenizer, p: &ParamStore, epoch: usize) -> Checkpoint {
    let mut ck = Checkpoint::new();
    p.save_into(&mut ck);
    save_tokenizer(&mut ck, tok);
    ck.set_meta("phase", phase.name());
    ck.set_meta("config", cfg.canonical_text());
    ck.set_meta("fingerprint", cfg.fingerprint());
    ck.set_meta("epoch", epoch.to_string());
    ck
}

/// A saved model with its configuration and vocabulary.
pub struct LoadedModel {
    pub phase: Phase,
    pub config: TrainConfig,
    pub tokenizer: Tokenizer,
    pub params: ParamStore,
    pub epoch: usize,
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let ck = Checkpoint::load(path)?;
    let phase = match ckpt_meta(&ck, "phase")? {
        "pretrain" => Phase::Pretrain,
        "finetune" => Phase::Finetune,
        other => {
            return Err(Error::Checkpoint {
                name: "phase".into(),
                reason: format!("unknown phase {other:?}"),
            })
        }
    };
    Ok(LoadedModel {
        phase,
        config: TrainConfig::parse(ckpt_meta(&ck, "config")?)?,
        tokenizer: load_tokenizer(&ck)?,
        params: ParamStore::from_checkpoint(&ck)?,
        epoch: ckpt_num(&ck, "epoch")?,
    })
}

struct Progress {
    params: ParamStore,
    opt: Sgd,
    /// Last completed epoch; 0 means only the baseline evaluation ran.
    epoch: usize,
    best_epoch: usize,
    best_metric: f64,
}

struct Run<'a> {
    cfg: &'a TrainConfig,
    phase: Phase,
    dir: PathBuf,
    tok: Tokenizer,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn phase_cfg(&self) -> &PhaseConfig {
        match self.phase {
            Phase::Pretrain => &self.cfg.pretrain.phase,
            Phase::Finetune => &self.cfg.finetune.phase,
        }
    }

    /// Loads `ckpt-last` and repairs a record that lost its final epoch line.
    fn resume(&self) -> Result<Option<(Progress, RunRecord)>> {
        let last = self.path(LAST_CKPT);
        if !last.exists() {
            return Ok(None);
        }
        let ck = Checkpoint::load(&last)?;
        if ckpt_meta(&ck, "fingerprint")? != self.cfg.fingerprint() {
            return Err(Error::Checkpoint {
                name: LAST_CKPT.into(),
                reason: "written under a different configuration".into(),
            });
        }
        if load_tokenizer(&ck)? != self.tok {
            return Err(Error::Checkpoint {
                name: "tokenizer".into(),
                reason: "differs from the corpus vocabulary".into(),
            });
        }
        let progress = Progress {
            params: ParamStore::from_checkpoint(&ck)?,
            opt: Sgd::load_from(&ck)?,
            epoch: ckpt_num(&ck, "epoch")?,
            best_epoch: ckpt_num(&ck, "best_epoch")?,
            best_metric: ckpt_num(&ck, "best_metric")?,
        };
        let record_path = self.path(RECORD_FILE);
        let mut record = RunRecord::load(&record_path)?;
        if record.epochs.len() == progress.epoch {
            let line: RecordLine = serde_json::from_str(ckpt_meta(&ck, "record.last")?)?;
            append_line(&record_path, &line)?;
            record = RunRecord::load(&record_path)?;
        }
        if record.epochs.len() != progress.epoch + 1 {
            return Err(Error::Checkpoint {
                name: RECORD_FILE.into(),
                reason: format!(
                    "holds {} epochs but the checkpoint is at epoch {}",
                    record.epochs.len(),
                    progress.epoch
                ),
            });
        }
        Ok(Some((progress, record)))
    }

    fn start(&self, params: ParamStore) -> Result<Progress> {
        let record_path = self.path(RECORD_FILE);
        if record_path.exists() {
            return Err(Error::InvalidArgument(format!(
                "{} already holds a run; resume it or pick a new directory",
                self.dir.display()
            )));
        }
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let cfg_path = self.path(CONFIG_FILE);
        std::fs::write(&cfg_path, self.cfg.canonical_text()).map_err(|e| Error::io(&cfg_path, e))?;
        let sched = self.phase_cfg().schedule();
        append_line(
            &record_path,
            &RecordLine::Header {
                phase: self.phase,
                fingerprint: self.cfg.fingerprint(),
                scheduler: sched.name().into(),
                granularity: sched.granularity().into(),
            },
        )?;
        Ok(Progress {
            params,
            opt: Sgd::new(self.phase_cfg().momentum)?,
            epoch: 0,
            best_epoch: 0,
            best_metric: f64::NEG_INFINITY,
        })
    }

    /// Best checkpoint (if improved), then last checkpoint, then the record
    /// line, so a crash at any point leaves a resumable directory.
    fn commit(&self, prog: &mut Progress, rec: EpochRecord, metric: f64) -> Result<()> {
        prog.epoch = rec.epoch;
        if metric > prog.best_metric {
            prog.best_metric = metric;
            prog.best_epoch = rec.epoch;
            model_checkpoint(self.cfg, self.phase, &self.tok, &prog.params, rec.epoch).save(self.path(BEST_CKPT))?;
        }
        let line = RecordLine::Epoch(rec);
        let mut ck = model_checkpoint(self.cfg, self.phase, &self.tok, &prog.params, prog.epoch);
        prog.opt.save_into(&mut ck);
        ck.set_meta("best_epoch", prog.best_epoch.to_string());
        ck.set_meta("best_metric", format!("{:?}", prog.best_metric));
        ck.set_meta("record.last", line.to_line());
        ck.save(self.path(LAST_CKPT))?;
        append_line(&self.path(RECORD_FILE), &line)
    }

    fn finish(&self, prog: &Progress, report: Option<EvalReport>) -> Result<RunRecord> {
        append_line(
            &self.path(RECORD_FILE),
            &RecordLine::Final {
                best_epoch: prog.best_epoch,
                best_metric: prog.best_metric,
                report,
            },
        )?;
        RunRecord::load(&self.path(RECORD_FILE))
    }
}

/// Runs a phase's epochs. `train_epoch` returns the epoch's mean losses and
/// first-step learning rate; `evaluate` returns the epoch record's metric
/// fields and the selection metric.
fn drive(
    run: &Run<'_>,
    opts: RunOptions,
    fresh: impl FnOnce() -> Result<ParamStore>,
    mut train_epoch: impl FnMut(&mut Progress, usize) -> Result<(BTreeMap<String, f64>, f64)>,
    mut evaluate: impl FnMut(&ParamStore, &mut EpochRecord) -> Result<f64>,
) -> Result<(Progress, Option<RunRecord>)> {
    let resumed = if opts.resume { run.resume()? } else { None };
    let mut prog = match resumed {
        Some((prog, record)) => {
            if record.best_epoch.is_some() {
                return Ok((prog, Some(record)));
            }
            prog
        }
        None => {
            let mut prog = run.start(fresh()?)?;
            let t0 = Instant::now();
            let mut rec = EpochRecord {
                epoch: 0,
                lr: None,
                losses: BTreeMap::new(),
                retrieval: None,
                dev: None,
                wall_ms: 0,
            };
            let metric = evaluate(&prog.params, &mut rec)?;
            rec.wall_ms = t0.elapsed().as_millis() as u64;
            run.commit(&mut prog, rec, metric)?;
            prog
        }
    };
    let epochs = run.phase_cfg().epochs;
    while prog.epoch < epochs {
        if opts.stop_after.is_some_and(|k| prog.epoch >= k) {
            return Ok((prog, None));
        }
        let epoch = prog.epoch + 1;
        let t0 = Instant::now();
        let (losses, lr) = train_epoch(&mut prog, epoch)?;
        let mut rec = EpochRecord {
            epoch,
            lr: Some(lr),
            losses,
            retrieval: None,
            dev: None,
            wall_ms: 0,
        };
        let metric = evaluate(&prog.params, &mut rec)?;
        rec.wall_ms = t0.elapsed().as_millis() as u64;
        info!("{} epoch {epoch}: {:?} metric {metric:.4}", run.phase.name(), rec.losses);
        run.commit(&mut prog, rec, metric)?;
    }
    Ok((prog, None))
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            op: if name == "total" { "pretraining loss" } else { "translation loss" },
        })
    }
}

/// One optimizer step: backward, SGD, batch-norm statistics, zeroed grads.
fn step(g: &Graph, loss: crate::substrate::Var, prog: &mut Progress, lr: f64) -> Result<()> {
    g.backward(loss, &mut prog.params)?;
    prog.opt.step(&mut prog.params, lr)?;
    apply_batch_norm_updates(&mut prog.params, g.batch_norm_updates());
    prog.params.zero_grad();
    Ok(())
}

/// Dev retrieval of sentences from videos and back.
pub fn dev_retrieval(
    cfg: &TrainConfig,
    p: &ParamStore,
    videos: &[Array],
    ids: &[Vec<usize>],
) -> Result<Retrieval> {
    let (v, t) = alignment::retrieval_embeddings(p, &cfg.pretrain_config(), videos, ids)?;
    let mut g = Graph::new(Mode::Eval);
    let (vv, tv) = (g.input(v)?, g.input(t)?);
    let m = g.matmul_nt(vv, tv)?;
    let m = g.value(m).clone();
    let k5 = 5.min(videos.len());
    let (r1, r5) = (recall_at_k(&m, 1)?, recall_at_k(&m, k5)?);
    Ok(Retrieval {
        v2t_r1: r1.video_to_text,
        v2t_r5: r5.video_to_text,
        t2v_r1: r1.text_to_video,
        t2v_r5: r5.text_to_video,
    })
}

/// Contrastive pretraining; keeps the checkpoint with the best dev
/// video-to-text R@1.
pub fn pretrain(cfg: &TrainConfig, corpus: &Corpus, dir: &Path, opts: RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    check_corpus(cfg, corpus)?;
    let tok = tokenizer_for(corpus)?;
    let run = Run { cfg, phase: Phase::Pretrain, dir: dir.to_path_buf(), tok };
    let pcfg = cfg.pretrain_config();
    let phase = cfg.pretrain.phase.clone();
    let train_ids = encode_targets(corpus, &run.tok, &corpus.train)?;
    let dev_ids = encode_targets(corpus, &run.tok, &corpus.dev)?;
    let dev_videos = corpus
        .dev
        .iter()
        .map(|s| eval_view(s, cfg.data.frame_size))
        .collect::<Result<Vec<_>>>()?;
    let n = corpus.train.len();
    let per_epoch = phase.steps_per_epoch(n);
    let root = cfg.root_seed();
    let vocab = run.tok.len();

    let (prog, done) = drive(
        &run,
        opts,
        || alignment::init_pretraining(&pcfg, vocab, derive_seed(root, "init/pretrain", 0)),
        |prog, epoch| {
            let order = shuffled(cfg, Phase::Pretrain, epoch, n);
            let mut sums: BTreeMap<String, f64> = BTreeMap::new();
            let mut first_lr = None;
            for (b, chunk) in order.chunks(phase.batch_size).enumerate() {
                let global = (epoch - 1) * per_epoch + b;
                let lr = phase.lr_at(epoch - 1, global, n)?;
                first_lr.get_or_insert(lr);
                let videos = chunk
                    .iter()
                    .map(|&i| train_view(cfg, &corpus.train[i], epoch, i))
                    .collect::<Result<Vec<_>>>()?;
                let ids: Vec<Vec<usize>> = chunk.iter().map(|&i| train_ids[i].clone()).collect();
                let mut g = Graph::new(Mode::Train);
                let terms = pretraining_terms(&mut g, &prog.params, &pcfg, &videos, &ids, derive_seed(root, "mask", global as u64))?;
                let mut vals = vec![
                    ("cross_res", g.value(terms.cross_res).item()),
                    ("cross_st", g.value(terms.cross_st).item()),
                    ("inter", g.value(terms.inter).item()),
                ];
                if let Some(r) = terms.recon {
                    vals.push(("recon", pcfg.lambda_rec * g.value(r).item()));
                }
                let total = vals.iter().map(|(_, v)| v).sum::<f64>();
                check_finite("total", total)?;
                check_finite("total", g.value(terms.total).item())?;
                for (k, v) in vals {
                    *sums.entry(k.to_string()).or_insert(0.0) += v;
                }
                step(&g, terms.total, prog, lr)?;
                clamp_logit_scale(&mut prog.params);
            }
            let batches = per_epoch as f64;
            let mut means: BTreeMap<String, f64> = sums.into_iter().map(|(k, v)| (k, v / batches)).collect();
            let total = means.values().sum();
            means.insert("total".into(), total);
            Ok((means, first_lr.expect("at least one batch")))
        },
        |p, rec| {
            let r = dev_retrieval(cfg, p, &dev_videos, &dev_ids)?;
            rec.retrieval = Some(r);
            Ok(r.v2t_r1)
        },
    )?;
    finish(&run, prog, done, opts, |_| Ok(None))
}

fn finish(
    run: &Run<'_>,
    prog: Progress,
    done: Option<RunRecord>,
    opts: RunOptions,
    report: impl FnOnce(&Progress) -> Result<Option<EvalReport>>,
) -> Result<RunOutcome> {
    if let Some(record) = done {
        return Ok(RunOutcome { record, finished: true });
    }
    if prog.epoch < run.phase_cfg().epochs {
        debug_assert!(opts.stop_after.is_some());
        return Ok(RunOutcome {
            record: RunRecord::load(&run.path(RECORD_FILE))?,
            finished: false,
        });
    }
    let r = report(&prog)?;
    Ok(RunOutcome {
        record: run.finish(&prog, r)?,
        finished: true,
    })
}

fn check_corpus(cfg: &TrainConfig, corpus: &Corpus) -> Result<()> {
    if corpus.config != cfg.data {
        return Err(Error::ConfigValue("corpus was generated from a different data section".into()));
    }
    Ok(())
}

/// Greedy-decodes every sample.
pub fn decode_split(
    cfg: &TrainConfig,
    p: &ParamStore,
    tok: &Tokenizer,
    samples: &[VideoSample],
) -> Result<Vec<Vec<String>>> {
    let tcfg = cfg.translation_config();
    samples
        .iter()
        .map(|s| {
            let video = eval_view(s, cfg.data.frame_size)?;
            let ids = greedy_decode(p, &tcfg, &video, tcfg.text.max_len)?;
            Ok(tok.decode(&ids))
        })
        .collect()
}

pub fn evaluate_split(
    cfg: &TrainConfig,
    corpus: &Corpus,
    p: &ParamStore,
    tok: &Tokenizer,
    samples: &[VideoSample],
) -> Result<(EvalReport, Vec<Vec<String>>)> {
    let hyps = decode_split(cfg, p, tok, samples)?;
    let refs = samples.iter().map(|s| corpus.target(s)).collect::<Result<Vec<_>>>()?;
    Ok((evaluate_corpus(&hyps, &refs)?, hyps))
}

/// Translation parameters for a finetuning run: transferred from the
/// pretraining checkpoint named by `finetune.init`, or fresh.
pub fn finetune_init(cfg: &TrainConfig, tok: &Tokenizer) -> Result<ParamStore> {
    let tcfg = cfg.translation_config();
    let seed = derive_seed(cfg.root_seed(), "init/finetune", 0);
    match &cfg.finetune.init {
        None => translation::init_translation(&tcfg, tok.len(), seed),
        Some(path) => {
            let pre = load_model(Path::new(path))?;
            if pre.phase != Phase::Pretrain {
                return Err(Error::Checkpoint {
                    name: path.clone(),
                    reason: "not a pretraining checkpoint".into(),
                });
            }
            if &pre.tokenizer != tok {
                return Err(Error::Checkpoint {
                    name: "tokenizer".into(),
                    reason: "pretraining vocabulary differs from this corpus".into(),
                });
            }
            translation::init_from_pretraining(&pre.params, &tcfg, tok.len(), seed)
        }
    }
}

/// Translation training; keeps the checkpoint with the best dev BLEU-4 and
/// writes its dev predictions and report.
pub fn finetune(cfg: &TrainConfig, corpus: &Corpus, dir: &Path, opts: RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    check_corpus(cfg, corpus)?;
    let tok = tokenizer_for(corpus)?;
    let run = Run { cfg, phase: Phase::Finetune, dir: dir.to_path_buf(), tok };
    let tcfg = cfg.translation_config();
    let phase = cfg.finetune.phase.clone();
    let train_ids = encode_targets(corpus, &run.tok, &corpus.train)?;
    let n = corpus.train.len();
    let per_epoch = phase.steps_per_epoch(n);

    let (prog, done) = drive(
        &run,
        opts,
        || finetune_init(cfg, &run.tok),
        |prog, epoch| {
            let order = shuffled(cfg, Phase::Finetune, epoch, n);
            let mut sum = 0.0;
            let mut first_lr = None;
            for (b, chunk) in order.chunks(phase.batch_size).enumerate() {
                let global = (epoch - 1) * per_epoch + b;
                let lr = phase.lr_at(epoch - 1, global, n)?;
                first_lr.get_or_insert(lr);
                let videos = chunk
                    .iter()
                    .map(|&i| train_view(cfg, &corpus.train[i], epoch, i))
                    .collect::<Result<Vec<_>>>()?;
                let ids: Vec<Vec<usize>> = chunk.iter().map(|&i| train_ids[i].clone()).collect();
                let mut g = Graph::new(Mode::Train);
                let loss = translation::translation_loss(&mut g, &prog.params, &tcfg, &videos, &ids)?;
                let v = g.value(loss).item();
                check_finite("translation", v)?;
                sum += v;
                step(&g, loss, prog, lr)?;
            }
            let losses = BTreeMap::from([("translation".to_string(), sum / per_epoch as f64)]);
            Ok((losses, first_lr.expect("at least one batch")))
        },
        |p, rec| {
            let (report, _) = evaluate_split(cfg, corpus, p, &run.tok, &corpus.dev)?;
            let bleu4 = report.bleu[3];
            rec.dev = Some(report);
            Ok(bleu4)
        },
    )?;
    finish(&run, prog, done, opts, |_| {
        let best = load_model(&run.path(BEST_CKPT))?;
        let (report, hyps) = evaluate_split(cfg, corpus, &best.params, &run.tok, &corpus.dev)?;
        super::artifacts::write_evaluation(dir, &cfg.fingerprint(), "dev", &corpus.dev, &hyps, corpus, &report)?;
        Ok(Some(report))
    })
}
