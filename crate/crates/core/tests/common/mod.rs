#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slt_core::substrate::{Array, Graph, Mode, ParamStore, Var};
use slt_core::Result;

pub type Objective = Box<dyn Fn(&ParamStore) -> Result<(Graph, Var)>>;

pub struct OpCase {
    pub name: &'static str,
    pub params: ParamStore,
    pub f: Objective,
}

pub fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Array {
    let n: usize = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Values bounded away from zero, so ReLU kinks sit outside the FD stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    Array::new(shape.to_vec(), data).unwrap()
}

/// Distinct values spaced ≥ 1e-3 apart, so max-pool argmax is stable under
/// ±h perturbation.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 1e-2).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        vals.swap(i, j);
    }
    Array::new(shape.to_vec(), vals).unwrap()
}

/// Reduces an op output to a scalar through a fixed random projection.
pub fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = rand_array(&mut rng, g.shape(out), 1.0);
    let r = g.input(r)?;
    let m = g.mul(out, r)?;
    g.sum(m)
}

fn store(entries: Vec<(&str, Array)>) -> ParamStore {
    let mut s = ParamStore::new();
    for (k, v) in entries {
        s.insert(k, v).unwrap();
    }
    s
}

macro_rules! case {
    ($name:expr, $params:expr, $seed:expr, |$g:ident, $p:ident| $body:block) => {{
        let seed = $seed;
        OpCase {
            name: $name,
            params: $params,
            f: Box::new(move |$p: &ParamStore| {
                let mut $g = Graph::new(Mode::Train);
                let out: Var = $body;
                let loss = project(&mut $g, out, seed)?;
                Ok(($g, loss))
            }),
        }
    }};
}

/// One grad-check case per registered op, with shapes drawn from `seed`.
pub fn op_catalogue(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(2..5);
    let k = rng.gen_range(2..5);
    let n = rng.gen_range(2..5);
    let mut cases = Vec::new();

    cases.push(case!("matmul", store(vec![("a", rand_array(&mut rng, &[m, k], 1.0)), ("b", rand_array(&mut rng, &[k, n], 1.0))]), seed, |g, p| {
        let a = g.param(p, "a")?;
        let b = g.param(p, "b")?;
        g.matmul(a, b)?
    }));
    cases.push(case!("matmul_nt", store(vec![("a", rand_array(&mut rng, &[m, k], 1.0)), ("b", rand_array(&mut rng, &[n, k], 1.0))]), seed, |g, p| {
        let a = g.param(p, "a")?;
        let b = g.param(p, "b")?;
        g.matmul_nt(a, b)?
    }));
    cases.push(case!("transpose", store(vec![("a", rand_array(&mut rng, &[m, k], 1.0))]), seed, |g, p| {
        let a = g.param(p, "a")?;
        g.transpose(a)?
    }));
    for name in ["add", "sub", "mul"] {
        cases.push(case!(name, store(vec![("a", rand_array(&mut rng, &[m, n], 1.0)), ("b", rand_array(&mut rng, &[m, n], 1.0))]), seed, |g, p| {
            let a = g.param(p, "a")?;
            let b = g.param(p, "b")?;
            match name {
                "add" => g.add(a, b)?,
                "sub" => g.sub(a, b)?,
                _ => g.mul(a, b)?,
            }
        }));
    }
    cases.push(case!("add_row", store(vec![("x", rand_array(&mut rng, &[m, n], 1.0)), ("b", rand_array(&mut rng, &[n], 1.0))]), seed, |g, p| {
        let x = g.param(p, "x")?;
        let b = g.param(p, "b")?;
        g.add_row(x, b)?
    }));
    cases.push(case!("scale", store(vec![("x", rand_array(&mut rng, &[m, n], 1.0))]), seed, |g, p| {
        let x = g.param(p, "x")?;
        g.scale(x, -1.7)?
    }));
    cases.push(case!("scale_by", store(vec![("x", rand_array(&mut rng, &[m, n], 1.0)), ("s", rand_array(&mut rng, &[1], 2.0))]), seed, |g, p| {
        let x = g.param(p, "x")?;
        let s = g.param(p, "s")?;
        g.scale_by(x, s)?
    }));
    cases.push(case!("exp", store(vec![("x", rand_array(&mut rng, &[m, n], 1.0))]), seed, |g, p| {
        let x = g.param(p, "x")?;
        g.exp(x)?
    }));
    cases.push(case!("relu", store(vec![("x", away_from_zero(&mut rng, &[m, n]))]), seed, |g, p| {
        let x = g.param(p, "x")?;
        g.relu(x)?
    }));
    cases.push(case!("sum", store(vec![("x", rand_array(&mut rng, &[m, n], 1.0))]), seed, |g, p| {
        let x = g.param(p, "x")?;
        g.sum(x)?
    }));
    cases.push(case!("mean_rows", store(vec![("x", rand_array(&mut rng, &[m, n], 1.0))]), seed, |g, p| {
        let x = g.param(p, "x")?;
        g.mean_rows(x)?
    }));
    cases.push(case!("softmax_rows", store(vec![("x", rand_array(&mut rng, &[m, n], 2.0))]), seed, |g, p| {
        let x = g.param(p, "x")?;
        g.softmax_rows(x)?
    }));
    cases.push(case!("layer_norm", store(vec![
        ("x", rand_array(&mut rng, &[m, n + 1], 1.0)),
        ("gamma", rand_array(&mut rng, &[n + 1], 1.0)),
        ("beta", rand_array(&mut rng, &[n + 1], 1.0)),
    ]), seed, |g, p| {
        let x = g.param(p, "x")?;
        let ga = g.param(p, "gamma")?;
        let be = g.param(p, "beta")?;
        g.layer_norm(x, ga, be)?
    }));
    cases.push(case!("batch_norm_train", store(vec![
        ("x", rand_array(&mut rng, &[m + 2, n], 1.0)),
        ("gamma", rand_array(&mut rng, &[n], 1.0)),
        ("beta", rand_array(&mut rng, &[n], 1.0)),
    ]), seed, |g, p| {
        let x = g.param(p, "x")?;
        let ga = g.param(p, "gamma")?;
        let be = g.param(p, "beta")?;
        g.batch_norm(x, ga, be, "bn", None)?
    }));
    {
        let rm = rand_array(&mut rng, &[n], 1.0);
        let rv = rand_array(&mut rng, &[n], 0.5).map(|v| v.abs() + 0.5);
        cases.push(case!("batch_norm_eval", store(vec![
            ("x", rand_array(&mut rng, &[m, n], 1.0)),
            ("gamma", rand_array(&mut rng, &[n], 1.0)),
            ("beta", rand_array(&mut rng, &[n], 1.0)),
        ]), seed, |g, p| {
            let mut eg = Graph::new(Mode::Eval);
            std::mem::swap(&mut g, &mut eg);
            let x = g.param(p, "x")?;
            let ga = g.param(p, "gamma")?;
            let be = g.param(p, "beta")?;
            g.batch_norm(x, ga, be, "bn", Some((&rm, &rv)))?
        }));
    }
    cases.push(case!("l2_normalize_rows", store(vec![("x", away_from_zero(&mut rng, &[m, n]))]), seed, |g, p| {
        let x = g.param(p, "x")?;
        g.l2_normalize_rows(x)?
    }));
    cases.push(case!("concat_cols", store(vec![("a", rand_array(&mut rng, &[m, k], 1.0)), ("b", rand_array(&mut rng, &[m, n], 1.0))]), seed, |g, p| {
        let a = g.param(p, "a")?;
        let b = g.param(p, "b")?;
        g.concat_cols(a, b)?
    }));
    cases.push(case!("concat_rows", store(vec![("a", rand_array(&mut rng, &[m, n], 1.0)), ("b", rand_array(&mut rng, &[k, n], 1.0))]), seed, |g, p| {
        let a = g.param(p, "a")?;
        let b = g.param(p, "b")?;
        g.concat_rows(&[a, b, a])?
    }));
    cases.push(case!("slice_rows", store(vec![("x", rand_array(&mut rng, &[m + 2, n], 1.0))]), seed, |g, p| {
        let x = g.param(p, "x")?;
        g.slice_rows(x, 1, m + 1)?
    }));
    cases.push(case!("gather_rows", store(vec![("x", rand_array(&mut rng, &[m, n], 1.0))]), seed, |g, p| {
        let x = g.param(p, "x")?;
        g.gather_rows(x, &[0, m - 1, 0, 1, 1])?
    }));
    cases.push(case!("embedding", store(vec![("table", rand_array(&mut rng, &[6, n], 1.0))]), seed, |g, p| {
        let t = g.param(p, "table")?;
        g.gather_rows(t, &[5, 0, 3, 3])?
    }));
    cases.push(case!("reshape", store(vec![("x", rand_array(&mut rng, &[m, n], 1.0))]), seed, |g, p| {
        let x = g.param(p, "x")?;
        g.reshape(x, &[n, m])?
    }));
    cases.push(case!("conv1d", store(vec![
        ("x", rand_array(&mut rng, &[m + 3, k], 1.0)),
        ("w", rand_array(&mut rng, &[n, k, 3], 1.0)),
        ("b", rand_array(&mut rng, &[n], 1.0)),
    ]), seed, |g, p| {
        let x = g.param(p, "x")?;
        let w = g.param(p, "w")?;
        let b = g.param(p, "b")?;
        g.conv1d(x, w, b)?
    }));
    for (stride, pad) in [(1, 1), (2, 0)] {
        cases.push(case!(if stride == 1 { "conv2d" } else { "conv2d_strided" }, store(vec![
            ("x", rand_array(&mut rng, &[2, 2, 6, 5], 1.0)),
            ("w", rand_array(&mut rng, &[3, 2, 3, 3], 1.0)),
            ("b", rand_array(&mut rng, &[3], 1.0)),
        ]), seed, |g, p| {
            let x = g.param(p, "x")?;
            let w = g.param(p, "w")?;
            let b = g.param(p, "b")?;
            g.conv2d(x, w, b, stride, pad)?
        }));
    }
    cases.push(case!("conv3d", store(vec![
        ("x", rand_array(&mut rng, &[2, 2, 5, 5, 6], 1.0)),
        ("w", rand_array(&mut rng, &[2, 2, 3, 3, 3], 1.0)),
        ("b", rand_array(&mut rng, &[2], 1.0)),
    ]), seed, |g, p| {
        let x = g.param(p, "x")?;
        let w = g.param(p, "w")?;
        let b = g.param(p, "b")?;
        g.conv3d(x, w, b, [1, 2, 2], [0, 1, 0])?
    }));
    cases.push(case!("maxpool1d", store(vec![("x", distinct(&mut rng, &[2 * m + 1, n]))]), seed, |g, p| {
        let x = g.param(p, "x")?;
        g.maxpool1d(x)?
    }));
    cases.push(case!("maxpool2d", store(vec![("x", distinct(&mut rng, &[2, 2, 5, 4]))]), seed, |g, p| {
        let x = g.param(p, "x")?;
        g.maxpool2d(x)?
    }));
    cases.push(case!("maxpool3d", store(vec![("x", distinct(&mut rng, &[1, 2, 4, 5, 4]))]), seed, |g, p| {
        let x = g.param(p, "x")?;
        g.maxpool3d(x, [2, 2, 2])?
    }));
    for causal in [false, true] {
        let lq = if causal { 4 } else { 3 };
        cases.push(case!(if causal { "attention_causal" } else { "attention" }, store(vec![
            ("q", rand_array(&mut rng, &[lq, 4], 1.0)),
            ("k", rand_array(&mut rng, &[4, 4], 1.0)),
            ("v", rand_array(&mut rng, &[4, 4], 1.0)),
        ]), seed, |g, p| {
            let q = g.param(p, "q")?;
            let k = g.param(p, "k")?;
            let v = g.param(p, "v")?;
            g.attention(q, k, v, 2, causal)?
        }));
    }
    {
        let targets: Vec<Option<usize>> = (0..m + 1).map(|i| if i == 1 { None } else { Some((i * 3) % n) }).collect();
        cases.push(case!("cross_entropy", store(vec![("x", rand_array(&mut rng, &[m + 1, n], 2.0))]), seed, |g, p| {
            let x = g.param(p, "x")?;
            g.cross_entropy(x, &targets)?
        }));
    }
    cases
}

pub fn tiny_encoder() -> slt_core::encoders::EncoderConfig {
    slt_core::encoders::EncoderConfig {
        frame_size: 18,
        d_spatial: 4,
        d_spatiotemporal: 4,
        d_model: 8,
        d_ff: 16,
        window: 13,
        stride: 6,
        shared_layers: 1,
        heads: 2,
        spatial_channels: [2, 2, 2],
        st_channels: [2, 2],
    }
}

pub fn tiny_text() -> slt_core::translation::TextConfig {
    slt_core::translation::TextConfig {
        d_model: 8,
        d_ff: 16,
        heads: 2,
        text_layers: 1,
        decoder_layers: 1,
        max_len: 8,
    }
}

pub fn random_video(rng: &mut ChaCha8Rng, frames: usize, size: usize) -> Array {
    let n = frames * size * size;
    Array::new(vec![frames, size, size], (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn pooled_pair_case(name: &'static str, seed: u64, inter: bool) -> OpCase {
    use slt_core::alignment::{cross_modal_loss, init_logit_scale, inter_modal_loss, inverse_temperature, pool_and_normalize};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..5);
    let d = rng.gen_range(3..6);
    let mut params = ParamStore::new();
    for i in 0..n {
        let la = rng.gen_range(1..4);
        let lb = rng.gen_range(1..4);
        params.insert(&format!("a.{i}"), rand_array(&mut rng, &[la, d], 1.0)).unwrap();
        params.insert(&format!("b.{i}"), rand_array(&mut rng, &[lb, d], 1.0)).unwrap();
    }
    init_logit_scale(&mut params, rng.gen_range(0.2..1.0)).unwrap();
    let f = move |p: &ParamStore| {
        let mut g = Graph::new(Mode::Train);
        let a = (0..n).map(|i| g.param(p, &format!("a.{i}"))).collect::<Result<Vec<_>>>()?;
        let b = (0..n).map(|i| g.param(p, &format!("b.{i}"))).collect::<Result<Vec<_>>>()?;
        let za = pool_and_normalize(&mut g, &a)?;
        let zb = pool_and_normalize(&mut g, &b)?;
        let s = inverse_temperature(&mut g, p)?;
        let l = if inter { inter_modal_loss(&mut g, za, zb, s)? } else { cross_modal_loss(&mut g, za, zb, s)? };
        Ok((g, l))
    };
    OpCase { name, params, f: Box::new(f) }
}

/// The four training objectives as gradient-check cases: cross-modal and
/// inter-modal InfoNCE on pooled sequences, the full pretraining loss and
/// the translation loss on tiny models.
pub fn loss_catalogue(seed: u64) -> Vec<OpCase> {
    use slt_core::alignment::{init_pretraining, pretraining_terms, PretrainConfig};
    use slt_core::fusion::{FusionConfig, FusionMode};
    use slt_core::translation::{init_translation, translation_loss, Branches, TranslationConfig};

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1055);
    let enc = tiny_encoder();
    let vocab = 9;
    let videos = vec![random_video(&mut rng, 14, enc.frame_size), random_video(&mut rng, 17, enc.frame_size)];
    let ids = vec![vec![1, 5, 6, 7, 2], vec![1, 8, 5, 2]];

    let pcfg = PretrainConfig {
        encoder: enc.clone(),
        text: tiny_text(),
        ..PretrainConfig::default()
    };
    let pre = init_pretraining(&pcfg, vocab, seed).unwrap();
    let (pv, pi) = (videos.clone(), ids.clone());
    let pretrain = move |p: &ParamStore| {
        let mut g = Graph::new(Mode::Train);
        let t = pretraining_terms(&mut g, p, &pcfg, &pv, &pi, 3)?;
        Ok((g, t.total))
    };

    let modes = FusionMode::ALL;
    let tcfg = TranslationConfig {
        encoder: enc,
        text: tiny_text(),
        fusion: FusionConfig { mode: modes[seed as usize % 3], ..FusionConfig::default() },
        branches: Branches::Dual,
    };
    let tr = init_translation(&tcfg, vocab, seed).unwrap();
    let translation = move |p: &ParamStore| {
        let mut g = Graph::new(Mode::Train);
        let l = translation_loss(&mut g, p, &tcfg, &videos, &ids)?;
        Ok((g, l))
    };

    vec![
        pooled_pair_case("cross_modal", seed, false),
        pooled_pair_case("inter_modal", seed + 100, true),
        OpCase { name: "pretraining", params: pre, f: Box::new(pretrain) },
        OpCase { name: "translation", params: tr, f: Box::new(translation) },
    ]
}

/// A complete run configuration small enough for several end-to-end runs
/// per test.
pub fn tiny_train_config() -> slt_core::harness::TrainConfig {
    let mut c = slt_core::harness::TrainConfig::reference();
    c.data.vocab_size = 6;
    c.data.min_len = 2;
    c.data.max_len = 3;
    c.data.train_size = 6;
    c.data.dev_size = 3;
    c.data.test_size = 3;
    c.data.frame_size = 18;
    c.data.crop_margin = 2;
    c.data.seed = 7;
    c.model.encoder = tiny_encoder();
    c.model.text = tiny_text();
    for phase in [&mut c.pretrain.phase, &mut c.finetune.phase] {
        phase.epochs = 3;
        phase.scheduler_epochs = 3;
        phase.batch_size = 4;
    }
    c
}

/// One training sample, no augmentation and no crop jitter: the
/// configuration behind every overfit-one-sample check.
pub fn overfit_config(mut c: slt_core::harness::TrainConfig, epochs: usize, lr: f64) -> slt_core::harness::TrainConfig {
    c.data.train_size = 1;
    c.data.dev_size = 1;
    c.data.test_size = 1;
    c.data.crop_margin = 0;
    c.augment.p = 0.0;
    c.finetune.init = None;
    let ph = &mut c.finetune.phase;
    ph.epochs = epochs;
    ph.scheduler_epochs = epochs;
    ph.batch_size = 1;
    ph.lr = lr;
    ph.scheduler = slt_core::harness::SchedulerKind::Constant;
    c
}
