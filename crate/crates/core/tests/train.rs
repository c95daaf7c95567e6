mod common;

use common::randomize;
use pwave::codec::{encode_plane, CodecModel, EncodeOptions, ModelConfig, Preset};
use pwave::nn::gradcheck::{check, CheckConfig, ScalarFn};
use pwave::nn::{AdamWConfig, Ops, Tensor};
use pwave::synthetic::synthetic_image;
use pwave::train::*;
use pwave::{ContextMode, Error, Plane};

fn toy_data(n: usize, size: usize, seed: u64) -> Dataset {
    let patches = (0..n)
        .map(|i| synthetic_image(size, size, seed + i as u64).map(|v| v / SAMPLE_SCALE))
        .collect();
    Dataset::from_planes(patches).unwrap()
}

fn compact(mode: ContextMode, seed: u64) -> CodecModel {
    CodecModel::new(ModelConfig::preset(Preset::Compact, mode), seed)
}

fn config(lambda: f64, lr: f64, batch: usize, epochs: usize) -> TrainConfig {
    TrainConfig {
        lambda,
        batch,
        epochs,
        optimizer: AdamWConfig { lr, ..Default::default() },
        seed: 17,
        ..Default::default()
    }
}

#[test]
fn rd_loss_is_rate_plus_weighted_distortion() {
    assert_eq!(rd_loss(800.0, 0.0, 100, 0.08), 8.0);
    assert_eq!(rd_loss(800.0, 50.0, 100, 0.0), 8.0);
    assert_eq!(rd_loss(0.0, 0.0, 100, 0.5), 0.0);
    let d1 = rd_loss(800.0, 50.0, 100, 0.1) - 8.0;
    let d2 = rd_loss(800.0, 50.0, 100, 0.2) - 8.0;
    assert!((d2 - 2.0 * d1).abs() < 1e-12);
}

#[test]
fn lambda_ids() {
    assert_eq!(lambda_id(0.08), 4);
    assert_eq!(lambda_id(0.007), 0);
    assert_eq!(lambda_id(0.02), CUSTOM_LAMBDA_ID);
    assert_eq!(lambda_for_id(2).unwrap(), 0.03);
    assert!(lambda_for_id(5).is_err());
}

#[test]
fn training_loss_matches_its_parts() {
    let model = compact(ContextMode::FourStep, 1);
    let data = toy_data(2, 32, 3);
    let x = data.tensor(&[0, 1]);
    let (loss, bits, sq, _) = loss_and_grads(&model, &x, 0.05, Quantization::Rounded).unwrap();
    assert!((loss - rd_loss(bits, sq, 2 * 32 * 32, 0.05)).abs() < 1e-9 * loss.abs());
    let (loss0, bits0, _, _) = loss_and_grads(&model, &x, 0.0, Quantization::Rounded).unwrap();
    assert_eq!(bits0, bits);
    assert!((loss0 - bits / 2048.0).abs() < 1e-12);
}

#[test]
fn training_rate_agrees_with_coding_time_rate() {
    // Same (μ, σ) at train and code time: the teacher-forced rate equals the
    // encoder's ideal code length, up to the tail mass folded into the alphabet ends.
    for mode in [ContextMode::Autoregressive, ContextMode::FourStep, ContextMode::FourStepLl] {
        let mut model = compact(mode, 2);
        randomize(&mut model.params, 5, 0.05);
        let (l, h) = (model.log_delta_low, model.log_delta_high);
        model.params.get_mut(l).data_mut()[0] = 0.0;
        model.params.get_mut(h).data_mut()[0] = 0.0;
        let data = toy_data(1, 32, 9);
        let mut o = pwave::nn::Eval::new(&model.params);
        let t = forward_loss(&mut o, &model, &data.tensor(&[0]), 0.08, Quantization::Rounded).unwrap();
        let train_bits = t.rate_bits.data()[0];
        let plane = data.patches[0].map(|v| v * SAMPLE_SCALE);
        let enc = encode_plane(&plane, &model, &EncodeOptions::default()).unwrap();
        let code_bits = enc.stats.ideal_bits;
        assert!(code_bits <= train_bits + 1e-6, "{mode:?}: {code_bits} vs {train_bits}");
        assert!((train_bits - code_bits) / train_bits < 0.01, "{mode:?}: {code_bits} vs {train_bits}");
    }
}

struct WholeLoss<'a> {
    model: &'a CodecModel,
}

impl ScalarFn for WholeLoss<'_> {
    fn eval<O: Ops>(&self, o: &mut O, inputs: &[O::T]) -> O::T {
        forward_loss(o, self.model, &inputs[0], 0.05, Quantization::Identity).unwrap().loss
    }
}

#[test]
fn whole_loss_passes_finite_differences() {
    for mode in [ContextMode::FourStep, ContextMode::Autoregressive] {
        let mut model = compact(mode, 4);
        randomize(&mut model.params, 8, 0.1);
        let data = toy_data(1, 16, 11);
        let cfg = CheckConfig {
            max_per_tensor: 6,
            // the loss is tens of bits, so differences carry ~1e-9 of rounding noise
            floor: 1e-4,
            kink_tolerance: Some(1e-3),
            ..Default::default()
        };
        let r = check(&WholeLoss { model: &model }, &model.params, &[data.tensor(&[0])], None, &cfg);
        assert!(r.checked > 100);
        // activation and rate kinks within one step of the sample point are rare
        assert!(r.kinks * 20 <= r.checked, "{mode:?}: {} kinks of {}", r.kinks, r.checked);
        assert!(r.max_rel_err <= 1e-4, "{mode:?}: {} at {}", r.max_rel_err, r.worst);
        eprintln!("{mode:?}: {} checked, {} kinks, max rel err {:e}", r.checked, r.kinks, r.max_rel_err);
    }
}

#[test]
fn gradients_reach_every_parameter_group() {
    for mode in [ContextMode::Autoregressive, ContextMode::FourStep] {
        let data = toy_data(2, 32, 20);
        let mut ckpt = Checkpoint::new(compact(mode, 6), config(0.08, 1e-3, 2, 1));
        // zero-initialized heads block upstream gradients until the first update
        train_epoch(&data, &mut ckpt).unwrap();
        let (_, _, _, grads) = loss_and_grads(&ckpt.model, &data.tensor(&[0, 1]), 0.08, Quantization::Rounded).unwrap();
        for (group, ids) in ckpt.model.groups() {
            let reached = ids.iter().any(|&id| grads.get(id).is_some_and(|g| g.data().iter().any(|v| *v != 0.0 && v.is_finite())));
            assert!(reached, "{mode:?}: no gradient reaches {group}");
            for &id in &ids {
                if let Some(g) = grads.get(id) {
                    assert!(g.data().iter().all(|v| v.is_finite()));
                }
            }
        }
    }
}

#[test]
fn rounding_passes_gradients_straight_through() {
    let mut model = compact(ContextMode::FourStep, 7);
    randomize(&mut model.params, 3, 0.05);
    let x = toy_data(1, 16, 30).tensor(&[0]);
    let (_, _, _, rounded) = loss_and_grads(&model, &x, 0.05, Quantization::Rounded).unwrap();
    let (_, _, _, identity) = loss_and_grads(&model, &x, 0.05, Quantization::Identity).unwrap();
    // both paths back-propagate through every group; values differ only through the rounded forward values
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let (a, b) = (rounded.get(id), identity.get(id));
        assert_eq!(a.is_some(), b.is_some(), "{}", model.params.name(id));
        if let Some(a) = a {
            assert!(a.data().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn identical_seeds_train_identically() {
    let data = toy_data(6, 32, 40);
    let run = || {
        let mut ckpt = Checkpoint::new(compact(ContextMode::FourStep, 8), config(0.08, 1e-3, 4, 2));
        let m = train(&data, &mut ckpt, None).unwrap();
        (m, ckpt.model.params)
    };
    let (m1, p1) = run();
    let (m2, p2) = run();
    assert_eq!(m1, m2);
    assert_eq!(p1, p2);
}

#[test]
fn frozen_weights_repeat_their_metrics() {
    let data = toy_data(4, 32, 50);
    let mut ckpt = Checkpoint::new(compact(ContextMode::FourStepLl, 9), config(0.08, 0.0, 2, 3));
    randomize(&mut ckpt.model.params, 2, 0.05);
    let before = ckpt.model.params.clone();
    let m = train(&data, &mut ckpt, None).unwrap();
    assert_eq!(ckpt.model.params, before);
    for e in &m[1..] {
        assert_eq!((e.loss, e.bpp, e.mse), (m[0].loss, m[0].bpp, m[0].mse));
    }
    let eval = evaluate(&ckpt.model, &data, 0.08, 2).unwrap();
    assert_eq!((eval.loss, eval.bpp, eval.mse), (m[0].loss, m[0].bpp, m[0].mse));
}

#[test]
fn reloaded_checkpoint_continues_bit_identically() {
    let data = toy_data(4, 32, 60);
    let mut straight = Checkpoint::new(compact(ContextMode::FourStep, 10), config(0.05, 1e-3, 2, 2));
    train(&data, &mut straight, None).unwrap();

    let mut first = Checkpoint::new(compact(ContextMode::FourStep, 10), config(0.05, 1e-3, 2, 1));
    train(&data, &mut first, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.pwm");
    first.save(&path).unwrap();
    let mut resumed = Checkpoint::load(&path).unwrap();
    assert_eq!(resumed.epoch, 1);
    assert_eq!(resumed.optimizer, first.optimizer);
    assert_eq!(resumed.model.params, first.model.params);
    assert_eq!(resumed.lambda_id(), 3);
    train_epoch(&data, &mut resumed).unwrap();
    assert_eq!(resumed.model.params, straight.model.params);
    assert_eq!(resumed.optimizer, straight.optimizer);

    // a checkpoint also loads as a plain model
    assert_eq!(CodecModel::load(&path).unwrap().params, first.model.params);
}

#[test]
fn csv_log_has_one_row_per_epoch() {
    let data = toy_data(2, 16, 70);
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    let mut ckpt = Checkpoint::new(compact(ContextMode::FourStep, 11), config(0.08, 1e-4, 2, 3));
    train(&data, &mut ckpt, Some(&log)).unwrap();
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,loss,bpp,mse,psnr");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("3,"));
}

#[test]
fn finetune_for_zero_epochs_keeps_weights() {
    let data = toy_data(2, 16, 80);
    let mut src = Checkpoint::new(compact(ContextMode::FourStep, 12), config(0.08, 1e-3, 2, 1));
    train(&data, &mut src, None).unwrap();
    let ft = finetune_from(&src, 0.08, 0, &data).unwrap();
    assert_eq!(ft.model.params, src.model.params);
    assert_eq!(ft.optimizer.step, 0);
    assert!(ft.optimizer.m.iter().all(|t| t.data().iter().all(|v| *v == 0.0)));
    let low = finetune_from(&src, 0.01, 0, &data).unwrap();
    assert_eq!(low.lambda_id(), 1);
    let enc = encode_plane(
        &Plane::zeros(16, 16),
        &low.model,
        &EncodeOptions {
            lambda_id: low.lambda_id(),
        },
    )
    .unwrap();
    assert_eq!(enc.bitstream.header.lambda_id, 1);
    assert!(finetune_from(&src, 0.0, 1, &data).is_err());
}

#[test]
fn finetune_rejects_other_architectures() {
    let data = toy_data(2, 16, 90);
    let src = Checkpoint::new(compact(ContextMode::FourStep, 13), config(0.08, 1e-3, 2, 1));
    let other = CodecModel::new(ModelConfig::preset(Preset::Desk, ContextMode::FourStep), 0);
    assert!(matches!(finetune_checked(&src, &other, 0.01, 1, &data), Err(Error::ModelMismatch(_))));
    let ar = compact(ContextMode::Autoregressive, 0);
    assert!(finetune_checked(&src, &ar, 0.01, 1, &data).is_err());
    let same = compact(ContextMode::FourStep, 99);
    assert!(finetune_checked(&src, &same, 0.01, 0, &data).is_ok());
}

#[test]
fn lower_lambda_finetune_spends_fewer_bits() {
    let data = toy_data(20, 32, 100);
    let (train_set, held) = data.split(4).unwrap();
    let mut src = Checkpoint::new(compact(ContextMode::FourStep, 14), config(0.08, 1e-3, 4, 3));
    train(&train_set, &mut src, None).unwrap();
    let ft = finetune_from(&src, 0.007, 3, &train_set).unwrap();
    let before = evaluate(&src.model, &held, 0.08, 4).unwrap();
    let after = evaluate(&ft.model, &held, 0.007, 4).unwrap();
    assert!(after.bpp < before.bpp, "{} vs {}", after.bpp, before.bpp);
}

#[test]
fn toy_set_loss_drops_a_fifth_in_fifty_steps() {
    let data = toy_data(8, 32, 110);
    let mut ckpt = Checkpoint::new(compact(ContextMode::FourStep, 15), config(0.08, 1e-3, 8, 50));
    let start = evaluate(&ckpt.model, &data, 0.08, 8).unwrap();
    train(&data, &mut ckpt, None).unwrap();
    let end = evaluate(&ckpt.model, &data, 0.08, 8).unwrap();
    assert_eq!(ckpt.optimizer.step, 50);
    assert!(end.loss <= 0.8 * start.loss, "{} -> {}", start.loss, end.loss);
}

#[test]
fn ingestion_is_seeded_and_normalized() {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..3 {
        pwave::io::write_pgm(dir.path().join(format!("img{i}.pgm")), &synthetic_image(80, 72, i)).unwrap();
    }
    std::fs::write(dir.path().join("broken.png"), b"not an image").unwrap();
    let a = ingest_dataset(dir.path(), 32, 4, 7).unwrap();
    let b = ingest_dataset(dir.path(), 32, 4, 7).unwrap();
    let c = ingest_dataset(dir.path(), 32, 4, 8).unwrap();
    assert_eq!(a.len(), 12);
    assert_eq!(a.patches, b.patches);
    assert_ne!(a.patches, c.patches);
    assert!(a.patches.iter().all(|p| p.data.iter().all(|v| (0.0..=1.0).contains(v))));
    let x = a.tensor(&[0]);
    assert_eq!(x.shape(), [1, 1, 32, 32]);
    assert!(x.data().iter().all(|v| (0.0..=255.0).contains(v)));
}

#[test]
fn full_size_patch_is_the_whole_image() {
    let dir = tempfile::tempdir().unwrap();
    let img = synthetic_image(64, 64, 3);
    pwave::io::write_pgm(dir.path().join("a.pgm"), &img).unwrap();
    let d = ingest_dataset(dir.path(), 64, 2, 1).unwrap();
    for p in &d.patches {
        assert_eq!(*p, img.map(|v| v / SAMPLE_SCALE));
    }
    // smaller images are replicate-padded
    let small = ingest_dataset(dir.path(), 96, 1, 1).unwrap();
    assert_eq!(small.patches[0].get(95, 95), img.get(63, 63) / SAMPLE_SCALE);
}

#[test]
fn empty_or_unreadable_folders_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(ingest_dataset(dir.path(), 32, 1, 0), Err(Error::Dataset(_))));
    std::fs::write(dir.path().join("x.pgm"), b"P5 garbage").unwrap();
    assert!(matches!(ingest_dataset(dir.path(), 32, 1, 0), Err(Error::Dataset(_))));
    assert!(Dataset::from_planes(vec![]).is_err());
    assert!(Dataset::from_planes(vec![Plane::zeros(16, 16), Plane::zeros(32, 32)]).is_err());
}

#[test]
fn batch_tensor_layout() {
    let data = toy_data(3, 16, 120);
    assert_eq!(data.batches(2), vec![vec![0, 1], vec![2]]);
    let t: Tensor = data.tensor(&[2, 0]);
    assert_eq!(t.shape(), [2, 1, 16, 16]);
    assert_eq!(t.data()[0], data.patches[2].data[0] * SAMPLE_SCALE);
    assert_eq!(t.data()[256], data.patches[0].data[0] * SAMPLE_SCALE);
}
