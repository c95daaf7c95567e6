mod common;

use common::{randomize, random_image};
use proptest::prelude::*;
use pwave::codec::{analytic_invocations, CodecModel, EncodeOptions, Header, ModelConfig, Preset};
use pwave::mctf::*;
use pwave::synthetic::synthetic_sequence;
use pwave::wavelet::NUM_SUBBANDS;
use pwave::{ContextMode, Plane};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lossless_model() -> CodecModel {
    CodecModel::new(ModelConfig::preset(Preset::Compact, ContextMode::FourStep).lossless(), 1)
}

fn random_field(w: usize, h: usize, cfg: &MctfConfig, rng: &mut impl Rng) -> MotionField {
    let mut mf = MotionField::zeros(w, h, cfg.block, cfg.range);
    for v in mf.vectors.iter_mut() {
        *v = (rng.gen_range(-cfg.range..=cfg.range), rng.gen_range(-cfg.range..=cfg.range));
    }
    mf
}

fn random_gop(w: usize, h: usize, rng: &mut impl Rng) -> Vec<Plane> {
    (0..GOP_SIZE).map(|_| random_image(w, h, rng)).collect()
}

/// Straightforward full search: every candidate's SAD over the whole block,
/// zero vector preferred, then the first strict minimum in raster order.
fn oracle_search(reference: &Plane, current: &Plane, block: usize, range: i32) -> Vec<(i32, i32)> {
    let px = |y: i64, x: i64| {
        let y = y.clamp(0, reference.height as i64 - 1) as usize;
        let x = x.clamp(0, reference.width as i64 - 1) as usize;
        reference.get(y, x)
    };
    let mut out = Vec::new();
    for by in (0..current.height).step_by(block) {
        for bx in (0..current.width).step_by(block) {
            let sad = |dy: i32, dx: i32| -> f64 {
                let mut s = 0.0;
                for y in by..(by + block).min(current.height) {
                    for x in bx..(bx + block).min(current.width) {
                        s += (current.get(y, x) - px(y as i64 - dy as i64, x as i64 - dx as i64)).abs();
                    }
                }
                s
            };
            let mut best = ((0, 0), sad(0, 0));
            for dy in -range..=range {
                for dx in -range..=range {
                    let s = sad(dy, dx);
                    if s < best.1 {
                        best = ((dy, dx), s);
                    }
                }
            }
            out.push(best.0);
        }
    }
    out
}

#[test]
fn identical_frames_give_zero_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = random_image(40, 24, &mut rng);
    let mf = motion_estimate(&f, &f, &MctfConfig::default()).unwrap();
    assert_eq!((mf.blocks_x, mf.blocks_y), (5, 3));
    assert!(mf.vectors.iter().all(|&v| v == (0, 0)));
    // flat frames tie everywhere and still pick zero
    let flat = Plane::filled(32, 32, 90.0);
    assert!(motion_estimate(&flat, &flat, &MctfConfig::default()).unwrap().vectors.iter().all(|&v| v == (0, 0)));
}

#[test]
fn global_shift_is_found_in_the_interior() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let reference = random_image(48, 40, &mut rng);
    let mut current = Plane::zeros(48, 40);
    for y in 0..40 {
        for x in 0..48 {
            current.set(y, x, reference.get(y, x.saturating_sub(3)));
        }
    }
    let cfg = MctfConfig::default();
    let mf = motion_estimate(&reference, &current, &cfg).unwrap();
    assert_eq!(mf.vectors, oracle_search(&reference, &current, cfg.block, cfg.range));
    for by in 0..mf.blocks_y {
        for bx in 1..mf.blocks_x {
            assert_eq!(mf.vectors[by * mf.blocks_x + bx], (0, 3), "block ({by}, {bx})");
        }
    }
    let pred = motion_compensate(&reference, &mf);
    assert_eq!(pred, current);
}

#[test]
fn search_matches_the_oracle_on_moving_content() {
    let frames = synthetic_sequence(40, 32, 2, (2, -5), 7);
    let cfg = MctfConfig { block: 8, range: 6, update: true };
    let mf = motion_estimate(&frames[0], &frames[1], &cfg).unwrap();
    assert_eq!(mf.vectors, oracle_search(&frames[0], &frames[1], 8, 6));
    assert!(mf.vectors.iter().all(|&(dy, dx)| dy.abs() <= 6 && dx.abs() <= 6));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn vectors_stay_within_range(seed in any::<u64>(), range in 1i32..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_image(24, 16, &mut rng);
        let b = random_image(24, 16, &mut rng);
        let cfg = MctfConfig { block: 8, range, update: true };
        let mf = motion_estimate(&a, &b, &cfg).unwrap();
        prop_assert!(mf.vectors.iter().all(|&(dy, dx)| dy.abs() <= range && dx.abs() <= range));
    }

    #[test]
    fn lifting_inverts_for_any_field(seed in any::<u64>(), update in any::<bool>(), block in 3usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = MctfConfig { block, range: 8, update };
        let (w, h) = (rng.gen_range(5..30), rng.gen_range(5..30));
        let even = random_image(w, h, &mut rng);
        let odd = random_image(w, h, &mut rng);
        let mf = random_field(w, h, &cfg, &mut rng);
        let (l, hp) = temporal_lift(&even, &odd, &mf, update).unwrap();
        prop_assert!(l.data.iter().chain(&hp.data).all(|v| v.fract() == 0.0));
        let (e, o) = temporal_unlift(&l, &hp, &mf, update).unwrap();
        prop_assert_eq!(e, even);
        prop_assert_eq!(o, odd);
    }
}

#[test]
fn lifting_matches_the_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = MctfConfig::default();
    let even = random_image(16, 16, &mut rng);
    let odd = random_image(16, 16, &mut rng);
    let mf = random_field(16, 16, &cfg, &mut rng);
    let (l, h) = temporal_lift(&even, &odd, &mf, true).unwrap();
    let mc = motion_compensate(&even, &mf);
    for i in 0..h.len() {
        assert_eq!(h.data[i], odd.data[i] - mc.data[i]);
    }
    let imc = inverse_motion_compensate(&h, &mf);
    for i in 0..l.len() {
        assert_eq!(l.data[i], even.data[i] + (0.5 * imc.data[i]).round());
    }
    let (l0, _) = temporal_lift(&even, &odd, &mf, false).unwrap();
    assert_eq!(l0, even);
}

#[test]
fn static_pair_has_zero_highpass() {
    let f = random_image(24, 24, &mut ChaCha8Rng::seed_from_u64(4));
    let mf = MotionField::zeros(24, 24, 8, 8);
    let (l, h) = temporal_lift(&f, &f, &mf, true).unwrap();
    assert!(h.data.iter().all(|&v| v == 0.0));
    assert_eq!(l, f);
}

#[test]
fn out_of_range_or_misfit_fields_are_rejected() {
    let f = Plane::zeros(16, 16);
    let mut mf = MotionField::zeros(16, 16, 8, 4);
    mf.vectors[0] = (5, 0);
    assert!(temporal_lift(&f, &f, &mf, true).is_err());
    let small = MotionField::zeros(8, 8, 8, 4);
    assert!(temporal_lift(&f, &f, &small, true).is_err());
}

#[test]
fn gop_transform_inverts_exactly_with_arbitrary_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for update in [true, false] {
        let cfg = MctfConfig { update, ..Default::default() };
        for _ in 0..4 {
            let gop = random_gop(24, 16, &mut rng);
            let mut field_rng = ChaCha8Rng::seed_from_u64(rng.gen());
            let bands = mctf_forward_with(&gop, &cfg, |_, c| Ok(random_field(c.width, c.height, &cfg, &mut field_rng))).unwrap();
            assert_eq!(mctf_inverse(&bands, &cfg).unwrap(), gop);
            let est = mctf_forward(&gop, &cfg).unwrap();
            assert_eq!(mctf_inverse(&est, &cfg).unwrap(), gop);
        }
    }
}

#[test]
fn gop_has_one_lowpass_and_seven_highpass_frames() {
    let gop = random_gop(16, 16, &mut ChaCha8Rng::seed_from_u64(6));
    let cfg = MctfConfig::default();
    let mut calls = 0;
    let bands = mctf_forward_with(&gop, &cfg, |r, c| {
        calls += 1;
        motion_estimate(r, c, &cfg)
    })
    .unwrap();
    assert_eq!(calls, 7);
    assert_eq!(bands.highpass.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 2, 1]);
    assert_eq!(bands.motion.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 2, 1]);
    assert_eq!(bands.frames().len(), GOP_SIZE);
    assert!(mctf_forward(&gop[..7], &cfg).is_err());
}

#[test]
fn static_gop_has_zero_highpass_everywhere() {
    let f = random_image(32, 16, &mut ChaCha8Rng::seed_from_u64(7));
    let gop = vec![f.clone(); GOP_SIZE];
    let bands = mctf_forward(&gop, &MctfConfig::default()).unwrap();
    for level in &bands.highpass {
        for h in level {
            assert!(h.data.iter().all(|&v| v == 0.0));
        }
    }
    assert_eq!(bands.lowpass, f);
}

#[test]
fn lossless_gop_round_trip() {
    let model = lossless_model();
    let gop = synthetic_sequence(32, 32, GOP_SIZE, (1, 2), 8);
    let cfg = MctfConfig::default();
    let enc = encode_gop(&gop, &model, &model, &cfg, &EncodeOptions::default()).unwrap();
    assert_eq!(enc.reconstruction, gop);
    let (frames, stats, used) = decode_gop(&enc.bytes, 32, 32, &model, &model, &cfg).unwrap();
    assert_eq!(used, enc.bytes.len());
    assert_eq!(frames, gop);
    // 7 fields of 16 blocks, 10 bits per vector
    assert_eq!(enc.motion_bits, 7 * 16 * 10);
    let expect = analytic_invocations(ContextMode::FourStep, 32, 32).1;
    // constant subbands are skipped, so only the textured lowpass frame hits the full count
    assert_eq!(stats[0].network_invocations, expect);
    assert!(stats.iter().all(|s| s.network_invocations <= expect));
}

#[test]
fn lossy_gop_decodes_to_the_encoder_reconstruction() {
    let mut low = CodecModel::new(ModelConfig::preset(Preset::Compact, ContextMode::FourStep), 2);
    randomize(&mut low.params, 2, 0.05);
    let mut high = CodecModel::new(ModelConfig::preset(Preset::Compact, ContextMode::FourStepLl), 3);
    randomize(&mut high.params, 3, 0.05);
    let gop = synthetic_sequence(32, 16, GOP_SIZE, (0, 3), 9);
    let cfg = MctfConfig::default();
    let enc = encode_gop(&gop, &low, &high, &cfg, &EncodeOptions::default()).unwrap();
    let again = encode_gop(&gop, &low, &high, &cfg, &EncodeOptions::default()).unwrap();
    assert_eq!(enc.bytes, again.bytes);
    let (frames, _, _) = decode_gop(&enc.bytes, 32, 16, &low, &high, &cfg).unwrap();
    assert_eq!(frames, enc.reconstruction);
    // swapping the two models is caught by the per-frame fingerprint
    assert!(decode_gop(&enc.bytes, 32, 16, &high, &low, &cfg).is_err());
}

#[test]
fn static_gop_costs_about_one_frame() {
    let model = lossless_model();
    let f = random_image(32, 32, &mut ChaCha8Rng::seed_from_u64(10));
    let gop = vec![f.clone(); GOP_SIZE];
    let enc = encode_gop(&gop, &model, &model, &MctfConfig::default(), &EncodeOptions::default()).unwrap();
    let single = pwave::codec::encode_plane(&f, &model, &EncodeOptions::default()).unwrap().bitstream.total_bytes();
    let zero_frame = Header::SIZE + NUM_SUBBANDS * 8;
    let motion = (7 * 16 * 10usize).div_ceil(8);
    // lowpass frame + seven all-zero highpass frames + motion + length prefixes
    assert_eq!(enc.bytes.len(), single + 7 * zero_frame + motion + 4 * 9);
}

#[test]
fn video_container_round_trips_partial_gops() {
    let model = lossless_model();
    let frames = synthetic_sequence(16, 16, 11, (1, -1), 11);
    let cfg = MctfConfig { block: 4, range: 3, update: true };
    let enc = encode_video(&frames, &model, &model, &cfg, &EncodeOptions::default()).unwrap();
    assert_eq!(enc.reconstruction, frames);
    assert_eq!(enc.stats.len(), 2);
    let dec = decode_video(&enc.bytes, &model, &model).unwrap();
    assert_eq!(dec.frames, frames);
    let mut bad = enc.bytes.clone();
    bad.push(0);
    assert!(decode_video(&bad, &model, &model).is_err());
    assert!(decode_video(&enc.bytes[..enc.bytes.len() - 3], &model, &model).is_err());
    assert!(decode_video(&enc.bytes[..VideoHeader::SIZE - 1], &model, &model).is_err());
}

#[test]
fn video_rejects_bad_motion_settings() {
    let model = lossless_model();
    let frames = vec![Plane::zeros(16, 16); 3];
    let cfg = MctfConfig { block: 8, range: 16, update: true };
    assert!(encode_video(&frames, &model, &model, &cfg, &EncodeOptions::default()).is_err());
    assert!(encode_video(&[], &model, &model, &MctfConfig::default(), &EncodeOptions::default()).is_err());
}
