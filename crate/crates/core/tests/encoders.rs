mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slt_core::encoders::*;
use slt_core::substrate::{Array, Graph, Mode, ParamStore};

use common::{rand_array, random_video, tiny_encoder};

fn visual(seed: u64) -> (EncoderConfig, ParamStore) {
    let cfg = tiny_encoder();
    let mut p = ParamStore::new();
    init_visual(&mut p, &cfg, seed).unwrap();
    (cfg, p)
}

fn eval<F: FnOnce(&mut Graph) -> slt_core::substrate::Var>(f: F) -> Array {
    let mut g = Graph::new(Mode::Eval);
    let v = f(&mut g);
    g.value(v).clone()
}

fn with_frame(video: &Array, frame: usize, value: f64) -> Array {
    let plane = video.shape()[1] * video.shape()[2];
    let mut out = video.clone();
    out.data_mut()[frame * plane..(frame + 1) * plane].iter_mut().for_each(|v| *v = value);
    out
}

#[test]
fn reference_window_count_examples() {
    assert_eq!(window_count(16, 16, 6), 1);
    assert_eq!(window_count(22, 16, 6), 2);
    assert_eq!(window_count(27, 16, 6), 2);
    assert_eq!(window_count(28, 16, 6), 3);
    assert_eq!(window_count(9, 16, 6), 1);
}

#[test]
fn spatial_rows_depend_on_their_own_frame() {
    let (cfg, p) = visual(1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let video = random_video(&mut rng, 9, cfg.frame_size);
    let base = eval(|g| spatial_encode(g, &p, &cfg, &video).unwrap());
    assert_eq!(base.shape(), &[9, cfg.d_spatial]);
    let changed = eval(|g| spatial_encode(g, &p, &cfg, &with_frame(&video, 4, 0.9)).unwrap());
    for t in 0..9 {
        let same = base.row(t) == changed.row(t);
        assert_eq!(same, t != 4, "frame {t}");
    }
}

#[test]
fn spatiotemporal_rows_follow_their_window() {
    let (cfg, p) = visual(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = 30;
    let video = random_video(&mut rng, t, cfg.frame_size);
    let nw = window_count(t, cfg.window, cfg.stride);
    let base = eval(|g| spatiotemporal_encode(g, &p, &cfg, &video).unwrap());
    assert_eq!(base.shape(), &[t, cfg.d_spatiotemporal]);
    for i in 0..t {
        let w = window_for_frame(i, cfg.stride, nw);
        let first = w * cfg.stride;
        assert_eq!(base.row(i), base.row(first.min(t - 1)));
    }
    let last = t - 1;
    let changed = eval(|g| spatiotemporal_encode(g, &p, &cfg, &with_frame(&video, last, 0.5)).unwrap());
    for i in 0..t {
        let w = window_for_frame(i, cfg.stride, nw);
        let covers = w * cfg.stride + cfg.window > last;
        assert_eq!(base.row(i) != changed.row(i), covers, "row {i}");
    }
}

#[test]
fn short_clips_are_padded_to_one_window() {
    let (cfg, p) = visual(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let video = random_video(&mut rng, 5, cfg.frame_size);
    let out = eval(|g| spatiotemporal_encode(g, &p, &cfg, &video).unwrap());
    assert_eq!(out.shape(), &[5, cfg.d_spatiotemporal]);
    assert!((1..5).all(|i| out.row(i) == out.row(0)));
}

#[test]
fn temporal_encoder_rejects_short_sequences() {
    let (cfg, p) = visual(4);
    let mut g = Graph::new(Mode::Train);
    let x = g.input(Array::zeros(&[3, cfg.d_spatial])).unwrap();
    assert!(temporal_encode(&mut g, &p, TEMPORAL_RES, &[x]).is_err());
    assert!(temporal_encode(&mut g, &p, TEMPORAL_RES, &[]).is_err());
}

#[test]
fn shared_encoder_keeps_shape_and_both_branches_use_it() {
    let (cfg, p) = visual(5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let videos = [random_video(&mut rng, 14, cfg.frame_size), random_video(&mut rng, 19, cfg.frame_size)];
    let mut g = Graph::new(Mode::Train);
    let f = encode_videos(&mut g, &p, &cfg, &videos).unwrap();
    for (i, v) in videos.iter().enumerate() {
        let l = temporal_len(v.shape()[0]);
        assert_eq!(g.shape(f.spatial[i]), &[l, cfg.d_model]);
        assert_eq!(g.shape(f.spatiotemporal[i]), &[l, cfg.d_model]);
        let s = shared_encode(&mut g, &p, &cfg, f.spatial[i]).unwrap();
        assert_eq!(g.shape(s), &[l, cfg.d_model]);
    }
    assert!(p.names().filter(|n| n.starts_with("shared.")).count() > 0);
}

#[test]
fn wrong_frame_size_is_rejected() {
    let (cfg, p) = visual(6);
    let mut g = Graph::new(Mode::Eval);
    let v = Array::zeros(&[6, cfg.frame_size + 1, cfg.frame_size + 1]);
    assert!(spatial_encode(&mut g, &p, &cfg, &v).is_err());
    assert!(spatiotemporal_encode(&mut g, &p, &cfg, &v).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn temporal_length_is_two_halvings(t in 4usize..=200, seed in any::<u64>()) {
        let (cfg, p) = visual(7);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new(Mode::Train);
        let x = g.input(rand_array(&mut rng, &[t, cfg.d_spatiotemporal], 1.0)).unwrap();
        let out = temporal_encode(&mut g, &p, TEMPORAL_ST, &[x]).unwrap();
        prop_assert_eq!(g.shape(out[0]), &[t / 2 / 2, cfg.d_model]);
        prop_assert_eq!(temporal_len(t), t / 2 / 2);
    }

    #[test]
    fn window_count_formula(t in 16usize..=200) {
        prop_assert_eq!(window_count(t, 16, 6), (t - 16) / 6 + 1);
        let nw = window_count(t, 16, 6);
        prop_assert!((nw - 1) * 6 + 16 <= t);
        prop_assert!(nw * 6 + 16 > t);
    }

    #[test]
    fn every_frame_maps_to_a_window(t in 1usize..=200, stride in 1usize..8, extra in 1usize..12) {
        let window = stride + extra;
        let nw = window_count(t, window, stride);
        for i in 0..t {
            prop_assert!(window_for_frame(i, stride, nw) < nw);
        }
    }

    #[test]
    fn spatiotemporal_output_has_one_row_per_frame(t in 1usize..40, seed in any::<u64>()) {
        let (cfg, p) = visual(8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let video = random_video(&mut rng, t, cfg.frame_size);
        let out = eval(|g| spatiotemporal_encode(g, &p, &cfg, &video).unwrap());
        prop_assert_eq!(out.shape(), &[t, cfg.d_spatiotemporal]);
    }
}
