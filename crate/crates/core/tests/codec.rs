mod common;

use common::{randomize, random_image};
use proptest::prelude::*;
use pwave::codec::*;
use pwave::nn::{Eval, Tensor};
use pwave::wavelet::{BaseWavelet, LiftMode, BLOCK, NUM_SUBBANDS};
use pwave::{ContextMode, Error, Plane};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODES: [ContextMode; 3] = [ContextMode::Autoregressive, ContextMode::FourStep, ContextMode::FourStepLl];

/// Compact model with every weight drawn at random, so contexts actually matter.
fn random_model(mode: ContextMode, seed: u64) -> CodecModel {
    let mut m = CodecModel::new(ModelConfig::preset(Preset::Compact, mode), seed);
    randomize(&mut m.params, seed, 0.05);
    m
}

fn set_log_deltas(m: &mut CodecModel, low: f64, high: f64) {
    let (l, h) = (m.log_delta_low, m.log_delta_high);
    m.params.get_mut(l).data_mut()[0] = low;
    m.params.get_mut(h).data_mut()[0] = high;
}

fn round_trip(plane: &Plane, model: &CodecModel) -> (Encoded, Decoded) {
    let enc = encode_plane(plane, model, &EncodeOptions::default()).unwrap();
    let bytes = enc.bitstream.to_bytes();
    assert_eq!(bytes.len(), enc.bitstream.total_bytes());
    let parsed = Bitstream::from_bytes(&bytes).unwrap();
    assert_eq!(parsed, enc.bitstream);
    let dec = decode_plane(&parsed, model).unwrap();
    (enc, dec)
}

#[test]
fn quantizer_examples() {
    let p = Plane::new(2, 1, vec![3.4, -2.5]).unwrap();
    assert_eq!(quantize(&p, 2.0), vec![7, -5]);
    // ties go away from zero
    let t = Plane::new(4, 1, vec![0.5, -0.5, 1.5, -1.5]).unwrap();
    assert_eq!(quantize(&t, 1.0), vec![1, -1, 2, -2]);
    let ints = Plane::new(3, 1, vec![-12.0, 0.0, 250.0]).unwrap();
    assert_eq!(quantize(&ints, 1.0), vec![-12, 0, 250]);
    assert_eq!(dequantize(&[7], 1, 1, 2.0).data, vec![3.5]);
    // out-of-alphabet values clamp
    let big = Plane::new(2, 1, vec![1e9, -1e9]).unwrap();
    let q = quantize(&big, 1.0);
    assert!(q[0] > 0 && q[1] < 0);
    assert_eq!(q[0], pwave::rangecoder::SYMBOL_MAX);
    assert_eq!(q[1], pwave::rangecoder::SYMBOL_MIN);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dequantized_error_is_within_half_a_step(y in -500.0f64..500.0, delta_index in 1500u16..2600) {
        let delta = delta_from_index(delta_index);
        let q = quantize(&Plane::new(1, 1, vec![y]).unwrap(), delta);
        let back = dequantize(&q, 1, 1, delta).data[0];
        prop_assert!((back - y).abs() <= 0.5 / delta + 1e-12);
    }

    #[test]
    fn delta_grid_indices_round_trip(index in 0u16..4096) {
        prop_assert_eq!(delta_index(delta_from_index(index)), index);
    }
}

#[test]
fn delta_grid_unit_and_octaves() {
    assert_eq!(delta_index(1.0), DELTA_INDEX_UNIT);
    assert_eq!(delta_from_index(DELTA_INDEX_UNIT), 1.0);
    assert_eq!(delta_from_index(DELTA_INDEX_UNIT + 256), 2.0);
    assert_eq!(delta_from_index(DELTA_INDEX_UNIT - 512), 0.25);
}

#[test]
fn lowpass_step_applies_to_the_lowpass_band_only() {
    let mut model = CodecModel::new(ModelConfig::preset(Preset::Compact, ContextMode::FourStep), 4);
    set_log_deltas(&mut model, 2f64.ln(), 0.5f64.ln());
    assert_eq!(model.delta_indices(), (DELTA_INDEX_UNIT + 256, DELTA_INDEX_UNIT - 256));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let plane = random_image(32, 32, &mut rng);
    let enc = encode_plane(&plane, &model, &EncodeOptions::default()).unwrap();
    let mut o = Eval::new(&model.params);
    let bands = model.transform.forward(&mut o, &plane.to_tensor(), LiftMode::Real).unwrap();
    for (i, b) in bands.iter().enumerate() {
        let bp = Plane::from_tensor(b).unwrap();
        let delta = if i == 0 { 2.0 } else { 0.5 };
        assert_eq!(enc.symbols[i], quantize(&bp, delta), "subband {i}");
    }
    assert_eq!(enc.bitstream.header.delta_low, DELTA_INDEX_UNIT + 256);
    assert_eq!(enc.bitstream.header.delta_high, DELTA_INDEX_UNIT - 256);
}

#[test]
fn round_trips_are_bit_exact_in_every_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for (k, mode) in MODES.into_iter().enumerate() {
        let model = random_model(mode, 10 + k as u64);
        for _ in 0..6 {
            let plane = random_image(32, 32, &mut rng);
            let (enc, dec) = round_trip(&plane, &model);
            assert_eq!(dec.symbols, enc.symbols, "{mode:?}");
            assert_eq!(dec.reconstruction, enc.reconstruction, "{mode:?}");
            assert_eq!(dec.stats.payload_bytes, enc.stats.payload_bytes);
        }
    }
}

#[test]
fn unaligned_planes_are_padded_and_cropped() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = random_model(ContextMode::FourStepLl, 3);
    let plane = random_image(37, 29, &mut rng);
    let (enc, dec) = round_trip(&plane, &model);
    let h = &enc.bitstream.header;
    assert_eq!((h.width, h.height, h.padded_width, h.padded_height), (37, 29, 48, 32));
    assert_eq!((dec.reconstruction.width, dec.reconstruction.height), (37, 29));
    assert_eq!(dec.reconstruction, enc.reconstruction);
}

#[test]
fn all_zero_plane_costs_almost_nothing() {
    for mode in MODES {
        let model = CodecModel::new(ModelConfig::preset(Preset::Compact, mode), 0);
        let plane = Plane::zeros(64, 64);
        let (enc, dec) = round_trip(&plane, &model);
        // every subband is constant: only the alphabet bounds are written
        assert!(enc.bitstream.payloads.iter().all(|p| p.len() == 4));
        assert_eq!(enc.bitstream.total_bytes(), Header::SIZE + NUM_SUBBANDS * 8);
        assert_eq!(dec.reconstruction, plane);
    }
}

#[test]
fn header_round_trips_every_field() {
    let mut model = random_model(ContextMode::FourStep, 8);
    set_log_deltas(&mut model, 0.3, 0.0);
    let plane = random_image(16, 48, &mut ChaCha8Rng::seed_from_u64(2));
    let enc = encode_plane(&plane, &model, &EncodeOptions { lambda_id: 3 }).unwrap();
    let h = Bitstream::from_bytes(&enc.bitstream.to_bytes()).unwrap().header;
    assert_eq!(h, enc.bitstream.header);
    assert_eq!(h.levels, 4);
    assert_eq!(h.context, ContextMode::FourStep.id());
    assert_eq!(h.lambda_id, 3);
    assert_eq!((h.delta_low, h.delta_high), model.delta_indices());
    assert_eq!(h.fingerprint, model.fingerprint());
}

#[test]
fn malformed_streams_are_rejected() {
    let model = random_model(ContextMode::FourStep, 5);
    let plane = random_image(32, 32, &mut ChaCha8Rng::seed_from_u64(6));
    let bytes = encode_plane(&plane, &model, &EncodeOptions::default()).unwrap().bitstream.to_bytes();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Bitstream::from_bytes(&bad), Err(Error::Bitstream(_))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(Bitstream::from_bytes(&bad), Err(Error::Bitstream(_))));
    // padded width not a multiple of 16
    let mut bad = bytes.clone();
    bad[13] = 33;
    assert!(matches!(Bitstream::from_bytes(&bad), Err(Error::Bitstream(_))));
    for cut in [0, 3, Header::SIZE - 1, Header::SIZE + 2, bytes.len() - 1] {
        assert!(matches!(Bitstream::from_bytes(&bytes[..cut]), Err(Error::Truncated)), "cut {cut}");
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(Bitstream::from_bytes(&long).is_err());
    let (bs, used) = Bitstream::read_prefix(&long).unwrap();
    assert_eq!(used, bytes.len());
    assert!(decode_plane(&bs, &model).is_ok());
}

#[test]
fn truncated_subband_payload_fails_to_decode() {
    let model = random_model(ContextMode::FourStep, 5);
    let plane = random_image(32, 32, &mut ChaCha8Rng::seed_from_u64(6));
    let mut bs = encode_plane(&plane, &model, &EncodeOptions::default()).unwrap().bitstream;
    let last = bs.payloads.iter().rposition(|p| p.len() > 8).unwrap();
    bs.payloads[last].truncate(6);
    assert!(decode_plane(&bs, &model).is_err());
}

#[test]
fn context_model_id_mismatch_is_detected() {
    let plane = random_image(32, 32, &mut ChaCha8Rng::seed_from_u64(11));
    let model = random_model(ContextMode::FourStep, 12);
    let mut bs = encode_plane(&plane, &model, &EncodeOptions::default()).unwrap().bitstream;
    bs.header.context = ContextMode::Autoregressive.id();
    assert!(matches!(decode_plane(&bs, &model), Err(Error::ModelMismatch(_))));
    bs.header.context = ContextMode::FourStep.id();
    let other = random_model(ContextMode::Autoregressive, 12);
    assert!(matches!(decode_plane(&bs, &other), Err(Error::ModelMismatch(_))));
}

#[test]
fn weight_mismatch_is_detected() {
    let plane = random_image(32, 32, &mut ChaCha8Rng::seed_from_u64(13));
    let model = random_model(ContextMode::FourStepLl, 14);
    let bs = encode_plane(&plane, &model, &EncodeOptions::default()).unwrap().bitstream;
    let mut tweaked = model.clone();
    let id = tweaked.params.ids().nth(3).unwrap();
    tweaked.params.get_mut(id).data_mut()[0] += 1e-9;
    assert_ne!(tweaked.fingerprint(), model.fingerprint());
    assert!(matches!(decode_plane(&bs, &tweaked), Err(Error::ModelMismatch(_))));
    let mut integer = model.clone();
    integer.config = integer.config.lossless();
    assert!(decode_plane(&bs, &integer).is_err());
}

#[test]
fn weights_survive_save_and_load() {
    let model = random_model(ContextMode::Autoregressive, 21);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pwm");
    model.save(&path).unwrap();
    let back = CodecModel::load(&path).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.params, model.params);
    assert_eq!(back.fingerprint(), model.fingerprint());
}

#[test]
fn post_filter_with_zero_weights_is_identity() {
    let model = CodecModel::new(ModelConfig::preset(Preset::Compact, ContextMode::FourStep), 0);
    let mut zeroed = model.params.clone();
    for id in model.post.params() {
        zeroed.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let plane = random_image(24, 40, &mut ChaCha8Rng::seed_from_u64(4));
    assert_eq!(postprocess(&plane, &model.post, &zeroed), plane);

    let mut random = model.params.clone();
    randomize(&mut random, 4, 0.2);
    let out = postprocess(&plane, &model.post, &random);
    assert_eq!((out.width, out.height), (24, 40));
    assert_ne!(out, plane);
}

#[test]
fn integer_configuration_is_lossless() {
    let model = CodecModel::new(ModelConfig::preset(Preset::Compact, ContextMode::FourStep).lossless(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (w, h) in [(32, 32), (48, 16), (21, 35)] {
        let plane = random_image(w, h, &mut rng);
        let (enc, dec) = round_trip(&plane, &model);
        assert_eq!(enc.reconstruction, plane);
        assert_eq!(dec.reconstruction, plane);
    }
}

#[test]
fn invocation_counts_match_the_analytic_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let plane = random_image(64, 32, &mut rng);
    for mode in MODES {
        let model = random_model(mode, 1);
        let (enc, dec) = round_trip(&plane, &model);
        let (e, d) = analytic_invocations(mode, 64, 32);
        assert_eq!(enc.stats.network_invocations, e, "{mode:?}");
        assert_eq!(dec.stats.network_invocations, d, "{mode:?}");
    }
    // 256x256: LL4 is 16x16
    assert_eq!(analytic_invocations(ContextMode::Autoregressive, 256, 256).1, 65_536);
    assert_eq!(analytic_invocations(ContextMode::FourStepLl, 256, 256).1, 52);
    assert_eq!(analytic_invocations(ContextMode::FourStep, 256, 256).1, 4 * 12 + 256);
    assert_eq!(analytic_invocations(ContextMode::FourStep, 256, 256).0, 1 + 4 * 12);
}

#[test]
fn payload_stays_within_one_percent_of_ideal_rate() {
    use pwave::rangecoder::ParamGrid;
    let mut model = CodecModel::new(ModelConfig::preset(Preset::Compact, ContextMode::FourStep), 0);
    set_log_deltas(&mut model, (1.0f64 / 16.0).ln(), 0.25f64.ln());
    // every head predicts the same on-grid scale, so the only gap left is table quantization
    let scale = ParamGrid::sigma_value(ParamGrid::sigma_index(3.0));
    let heads: Vec<_> = model.params.iter().filter(|(_, n, t)| n.starts_with("entropy") && n.ends_with("head.bias") && t.len() == 2).map(|(id, _, _)| id).collect();
    assert!(!heads.is_empty());
    for id in heads {
        model.params.get_mut(id).data_mut()[1] = scale.ln();
    }
    let plane = pwave::synthetic::synthetic_image(256, 256, 5);
    let enc = encode_plane(&plane, &model, &EncodeOptions::default()).unwrap();
    let payload_bits = 8.0 * enc.bitstream.payloads.iter().map(|p| p.len()).sum::<usize>() as f64;
    let framing_bits = 8.0 * (NUM_SUBBANDS * 8) as f64;
    assert!(enc.stats.ideal_bits > 10_000.0);
    assert!(
        payload_bits <= 1.01 * enc.stats.ideal_bits + framing_bits,
        "{payload_bits} payload bits vs ideal {}",
        enc.stats.ideal_bits
    );
    let dec = decode_plane(&enc.bitstream, &model).unwrap();
    assert_eq!(dec.symbols, enc.symbols);
    assert_eq!(enc.stats.payload_bytes, enc.bitstream.to_bytes().len());
}

#[test]
fn impulse_responses_have_the_expected_shape() {
    let model = CodecModel::new(ModelConfig::preset(Preset::Compact, ContextMode::FourStep).with_base(BaseWavelet::Haar), 0);
    let plane = pwave::synthetic::synthetic_image(64, 64, 1);
    let out = subband_impulse_response(&model, &plane).unwrap();
    assert_eq!(out.len(), NUM_SUBBANDS);
    for p in &out {
        assert_eq!((p.width, p.height), (BLOCK, BLOCK));
    }
    // Haar synthesis of a single LL4 coefficient is flat over the block
    let ll = &out[0];
    assert!(ll.data[0] != 0.0);
    assert!(ll.data.iter().all(|&v| v == ll.data[0]));
    // a finest diagonal coefficient touches exactly one 2x2 cell
    let hh1 = out.last().unwrap();
    assert_eq!(hh1.data.iter().filter(|v| **v != 0.0).count(), 4);

    let zero = subband_impulse_response(&model, &Plane::zeros(32, 32)).unwrap();
    assert!(zero.iter().all(|p| p.data.iter().all(|&v| v == 0.0)));
}

#[test]
fn impulse_uses_first_maximum_location() {
    let model = CodecModel::new(ModelConfig::preset(Preset::Compact, ContextMode::FourStep).with_base(BaseWavelet::Haar), 0);
    let bands: Vec<Tensor> = subband_sizes(32, 32).into_iter().map(|(w, h)| Tensor::zeros([1, 1, h, w])).collect();
    let mut bands = bands;
    // two equal peaks in HH1 (16x16); the earlier one wins and maps to the left half
    bands[NUM_SUBBANDS - 1].set(0, 0, 2, 3, 40.0);
    bands[NUM_SUBBANDS - 1].set(0, 0, 9, 12, -40.0);
    let mut o = Eval::new(&model.params);
    let x = model.transform.inverse(&mut o, &bands, LiftMode::Real).unwrap();
    let plane = Plane::from_tensor(&x).unwrap();
    let out = subband_impulse_response(&model, &plane).unwrap();
    let hh1 = out.last().unwrap();
    let nz: Vec<usize> = (0..hh1.len()).filter(|&i| hh1.data[i] != 0.0).collect();
    assert_eq!(nz.len(), 4);
    // HH1 of the 16x16 grid is 8x8; (2, 3) in 16x16 scales to (1, 1), covering pixels 2..4
    assert!(nz.iter().all(|&i| (2..4).contains(&(i / 16)) && (2..4).contains(&(i % 16))));
    assert!(hh1.data[nz[0]].abs() > 0.0);
}
