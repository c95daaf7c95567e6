use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use pwave::bench::run_bench;
use pwave::codec::{subband_impulse_response, Bitstream, CodecModel, EncodeOptions, ModelConfig, Preset};
use pwave::io::{list_images, read_luma, read_video, write_pgm, write_pgm_dir, write_y4m};
use pwave::mctf::{decode_video, encode_video, MctfConfig, VideoHeader};
use pwave::nn::{AdamWConfig, WeightFile};
use pwave::synthetic::synthetic_image;
use pwave::train::{evaluate, ingest_dataset, lambda_for_id, lambda_id, train, Checkpoint, Dataset, TrainConfig, LAMBDAS};
use pwave::wavelet::{coding_order, BaseWavelet};
use pwave::{decode_plane, encode_plane, psnr, ContextMode, Plane};

use crate::settings::Settings;
use crate::{BenchArgs, Cli, Command, ModelArgs, TrainArgs, VideoModelArgs};

pub fn run(cli: Cli) -> Result<()> {
    let section = match &cli.command {
        Command::Init { .. } => "init",
        Command::Train(_) => "train",
        Command::Encode { .. } => "encode",
        Command::Decode { .. } => "decode",
        Command::EncodeVideo { .. } => "encode-video",
        Command::DecodeVideo { .. } => "decode-video",
        Command::Bench(_) => "bench",
        Command::Impulse { .. } => "impulse",
    };
    let s = Settings::load(cli.config.as_deref(), section)?;
    match cli.command {
        Command::Init { output, model } => {
            let (m, _) = resolve_model(&s, &model, None)?;
            m.save(&output)?;
            println!("wrote {} ({} context, {} parameters)", output.display(), m.config.mode().name(), param_count(&m));
            Ok(())
        }
        Command::Train(a) => cmd_train(&s, a),
        Command::Encode {
            input,
            output,
            model,
            lambda_id,
            recon,
        } => cmd_encode(&s, &input, &output, &model, lambda_id, recon.as_deref()),
        Command::Decode {
            input,
            output,
            model,
            reference,
        } => cmd_decode(&s, &input, &output, &model, reference.as_deref()),
        Command::EncodeVideo {
            input,
            output,
            model,
            lambda_id,
            block,
            range,
            no_update,
            recon,
        } => {
            let defaults = MctfConfig::default();
            let cfg = MctfConfig {
                block: s.pick_or(block, "block", defaults.block)?,
                range: s.pick_or(range, "range", defaults.range)?,
                update: !s.switch(no_update, "no-update")?,
            };
            cmd_encode_video(&s, &input, &output, &model, lambda_id, cfg, recon.as_deref())
        }
        Command::DecodeVideo { input, output, model } => cmd_decode_video(&s, &input, &output, &model),
        Command::Bench(a) => cmd_bench(&s, a),
        Command::Impulse { image, out, model } => {
            let out = s.pick(out, "out")?.unwrap_or_else(|| PathBuf::from("impulse"));
            cmd_impulse(&s, &image, &out, &model)
        }
    }
}

fn param_count(m: &CodecModel) -> usize {
    m.params.iter().map(|(_, _, t)| t.len()).sum()
}

fn parse_preset(name: &str) -> Result<Preset> {
    match name {
        "reference" => Ok(Preset::Reference),
        "desk" => Ok(Preset::Desk),
        "compact" => Ok(Preset::Compact),
        _ => bail!("unknown preset {name}; expected reference, desk or compact"),
    }
}

fn parse_base(name: &str) -> Result<BaseWavelet> {
    match name {
        "cdf53" => Ok(BaseWavelet::Cdf53),
        "haar" => Ok(BaseWavelet::Haar),
        _ => bail!("unknown base wavelet {name}; expected cdf53 or haar"),
    }
}

/// Loads weights or builds an untrained model. `fallback` supplies the context
/// model when neither a weight file nor a context flag is given. Also returns
/// the rate point stored in a training checkpoint.
fn resolve_model(s: &Settings, a: &ModelArgs, fallback: Option<ContextMode>) -> Result<(CodecModel, Option<u8>)> {
    let context: Option<String> = s.pick(a.context.clone(), "context")?;
    let ll_context: Option<String> = s.pick(a.ll_context.clone(), "ll-context")?;
    let wanted = context
        .as_deref()
        .map(|c| ContextMode::from_flags(c, ll_context.as_deref()))
        .transpose()?;
    if let Some(path) = s.pick(a.model.clone(), "model")? {
        return load_model(&path, wanted);
    }
    let mode = wanted
        .or(fallback)
        .ok_or_else(|| anyhow!("give --model or --context"))?;
    let preset = parse_preset(&s.pick_or(a.preset.clone(), "preset", "desk".to_string())?)?;
    let mut config = ModelConfig::preset(preset, mode);
    if let Some(b) = s.pick(a.base.clone(), "base")? {
        config = config.with_base(parse_base(&b)?);
    }
    if s.switch(a.lossless, "lossless")? {
        config = config.lossless();
    }
    Ok((CodecModel::new(config, s.pick_or(a.seed, "seed", 0)?), None))
}

fn load_model(path: &Path, wanted: Option<ContextMode>) -> Result<(CodecModel, Option<u8>)> {
    let wf = WeightFile::load(path).with_context(|| format!("loading {}", path.display()))?;
    let model = CodecModel::from_weight_file(&wf)?;
    if let Some(w) = wanted {
        if w != model.config.mode() {
            bail!("{} holds a {} model, not {}", path.display(), model.config.mode().name(), w.name());
        }
    }
    let lambda = wf.meta.get("lambda_id").and_then(|v| v.as_u64()).map(|v| v as u8);
    Ok((model, lambda))
}

fn report(what: &str, width: usize, height: usize, bytes: usize, seconds: f64, distortion: Option<f64>) {
    let bpp = 8.0 * bytes as f64 / (width * height) as f64;
    match distortion {
        Some(mse) => println!("{what} {width}x{height}: {bytes} bytes, {bpp:.4} bpp, PSNR {:.2} dB, {seconds:.2} s", psnr(mse)),
        None => println!("{what} {width}x{height}: {bytes} bytes, {bpp:.4} bpp, {seconds:.2} s"),
    }
}

fn cmd_encode(s: &Settings, input: &Path, output: &Path, m: &ModelArgs, lambda: Option<u8>, recon: Option<&Path>) -> Result<()> {
    let (model, stored) = resolve_model(s, m, None)?;
    let plane = read_luma(input)?;
    let lambda_id = s.pick(lambda, "lambda-id")?.or(stored).unwrap_or(pwave::train::CUSTOM_LAMBDA_ID);
    let start = Instant::now();
    let enc = encode_plane(&plane, &model, &EncodeOptions { lambda_id })?;
    let bytes = enc.bitstream.to_bytes();
    std::fs::write(output, &bytes).with_context(|| format!("writing {}", output.display()))?;
    if let Some(r) = recon {
        write_pgm(r, &enc.reconstruction)?;
    }
    report("encoded", plane.width, plane.height, bytes.len(), start.elapsed().as_secs_f64(), Some(plane.mse(&enc.reconstruction)));
    log::info!("{} network calls, {:.1} ideal bits", enc.stats.network_invocations, enc.stats.ideal_bits);
    Ok(())
}

fn cmd_decode(s: &Settings, input: &Path, output: &Path, m: &ModelArgs, reference: Option<&Path>) -> Result<()> {
    let bytes = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let bs = Bitstream::from_bytes(&bytes)?;
    let (model, _) = resolve_model(s, m, Some(ContextMode::from_id(bs.header.context)?))?;
    let start = Instant::now();
    let dec = decode_plane(&bs, &model)?;
    let seconds = start.elapsed().as_secs_f64();
    write_pgm(output, &dec.reconstruction)?;
    let mse = match reference {
        Some(r) => Some(read_luma(r)?.mse(&dec.reconstruction)),
        None => None,
    };
    let (w, h) = (dec.reconstruction.width, dec.reconstruction.height);
    report("decoded", w, h, bytes.len(), seconds, mse);
    Ok(())
}

fn video_models(s: &Settings, a: &VideoModelArgs, fallback: Option<ContextMode>) -> Result<(CodecModel, CodecModel, Option<u8>)> {
    let (base, stored) = resolve_model(s, &a.model, fallback)?;
    let low = match s.pick(a.model_low.clone(), "model-low")? {
        Some(p) => load_model(&p, None)?.0,
        None => base.clone(),
    };
    let high = match s.pick(a.model_high.clone(), "model-high")? {
        Some(p) => load_model(&p, None)?.0,
        None => base,
    };
    Ok((low, high, stored))
}

fn write_frames(path: &Path, frames: &[Plane]) -> Result<()> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("y4m")) {
        write_y4m(path, frames)?;
    } else {
        write_pgm_dir(path, frames)?;
    }
    Ok(())
}

fn cmd_encode_video(
    s: &Settings,
    input: &Path,
    output: &Path,
    m: &VideoModelArgs,
    lambda: Option<u8>,
    cfg: MctfConfig,
    recon: Option<&Path>,
) -> Result<()> {
    let (low, high, stored) = video_models(s, m, None)?;
    let frames = read_video(input)?;
    let lambda_id = s.pick(lambda, "lambda-id")?.or(stored).unwrap_or(pwave::train::CUSTOM_LAMBDA_ID);
    let start = Instant::now();
    let enc = encode_video(&frames, &low, &high, &cfg, &EncodeOptions { lambda_id })?;
    std::fs::write(output, &enc.bytes).with_context(|| format!("writing {}", output.display()))?;
    if let Some(r) = recon {
        write_frames(r, &enc.reconstruction)?;
    }
    let mse = frames.iter().zip(&enc.reconstruction).map(|(a, b)| a.mse(b)).sum::<f64>() / frames.len() as f64;
    let (w, h) = (frames[0].width, frames[0].height);
    report(
        &format!("encoded {} frames", frames.len()),
        w,
        h * frames.len(),
        enc.bytes.len(),
        start.elapsed().as_secs_f64(),
        Some(mse),
    );
    Ok(())
}

fn cmd_decode_video(s: &Settings, input: &Path, output: &Path, m: &VideoModelArgs) -> Result<()> {
    let bytes = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let header = VideoHeader::read(&bytes)?;
    // every frame header records the context model; read it from the first
    let first = peek_context(&bytes[VideoHeader::SIZE..]);
    let fallback = first.map(ContextMode::from_id).transpose()?;
    let (low, high, _) = video_models(s, m, fallback)?;
    let start = Instant::now();
    let dec = decode_video(&bytes, &low, &high)?;
    let seconds = start.elapsed().as_secs_f64();
    write_frames(output, &dec.frames)?;
    report(
        &format!("decoded {} frames", dec.frames.len()),
        header.width as usize,
        header.height as usize * dec.frames.len(),
        bytes.len(),
        seconds,
        None,
    );
    Ok(())
}

/// Context id of the first frame of a GOP: skip the motion block and the length prefix.
fn peek_context(gop: &[u8]) -> Option<u8> {
    let n = u32::from_le_bytes(gop.get(..4)?.try_into().ok()?) as usize;
    let frame = gop.get(4 + n + 4..)?;
    Bitstream::read_prefix(frame).ok().map(|(b, _)| b.header.context)
}

fn cmd_train(s: &Settings, a: TrainArgs) -> Result<()> {
    let data_dir: PathBuf = s.pick(a.data.clone(), "data")?.ok_or_else(|| anyhow!("give --data"))?;
    let out: PathBuf = s.pick_or(a.out.clone(), "out", PathBuf::from("checkpoints"))?;
    std::fs::create_dir_all(&out)?;
    let defaults = TrainConfig::default();
    let seed = s.pick_or(a.train_seed, "train-seed", defaults.seed)?;
    let patch = s.pick_or(a.patch, "patch", defaults.patch)?;
    let per_image = s.pick_or(a.per_image, "per-image", 8)?;
    let epochs = s.pick_or(a.epochs, "epochs", defaults.epochs)?;
    let config = TrainConfig {
        lambda: defaults.lambda,
        patch,
        batch: s.pick_or(a.batch, "batch", defaults.batch)?,
        epochs,
        optimizer: AdamWConfig {
            lr: s.pick_or(a.lr, "lr", defaults.optimizer.lr)?,
            ..defaults.optimizer
        },
        seed,
    };
    let lambdas: Vec<f64> = if s.switch(a.sweep, "sweep")? {
        // largest λ first; the others start from its checkpoint
        LAMBDAS.iter().rev().copied().collect()
    } else if let Some(id) = s.pick(a.lambda_id, "lambda-id")? {
        vec![lambda_for_id(id)?]
    } else {
        vec![s.pick_or(a.lambda, "lambda", defaults.lambda)?]
    };

    let data = ingest_dataset(&data_dir, patch, per_image, seed)?;
    let held = s.pick_or(a.held_out, "held-out", 0)?;
    let (data, held): (Dataset, Option<Dataset>) = if held > 0 {
        let (t, h) = data.split(held)?;
        (t, Some(h))
    } else {
        (data, None)
    };
    println!("{} training patches of {patch}x{patch}", data.len());

    let resume = s.pick(a.resume.clone(), "resume")?;
    let finetune = s.pick(a.finetune.clone(), "finetune")?;
    let mut source: Option<Checkpoint> = match &finetune {
        Some(p) => {
            let c = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
            if c.lambda_id() != lambda_id(0.08) {
                log::warn!("finetuning from a checkpoint trained at λ = {}", c.config.lambda);
            }
            Some(c)
        }
        None => None,
    };
    let finetune_epochs = s.pick_or(a.finetune_epochs, "finetune-epochs", epochs)?;
    for (k, &lambda) in lambdas.iter().enumerate() {
        let mut ckpt = match (&source, &resume) {
            (Some(src), _) => {
                let mut c = Checkpoint::new(
                    src.model.clone(),
                    TrainConfig {
                        lambda,
                        epochs: finetune_epochs,
                        ..config
                    },
                );
                c.epoch = src.epoch;
                c
            }
            (None, Some(p)) => {
                let mut c = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
                c.config.epochs = epochs;
                c
            }
            (None, None) => {
                let (model, _) = resolve_model(s, &a.model, Some(ContextMode::FourStep))?;
                Checkpoint::new(model, TrainConfig { lambda, ..config })
            }
        };
        let id = ckpt.lambda_id();
        let stem = if id == pwave::train::CUSTOM_LAMBDA_ID { format!("lambda-{lambda}") } else { format!("lambda{id}") };
        let log = out.join(format!("{stem}.csv"));
        let metrics = train(&data, &mut ckpt, Some(&log))?;
        let path = out.join(format!("{stem}.pwnn"));
        ckpt.save(&path)?;
        if let Some(m) = metrics.last() {
            println!("λ = {lambda}: epoch {} loss {:.4} bpp {:.4} PSNR {:.2} dB -> {}", m.epoch, m.loss, m.bpp, m.psnr, path.display());
        }
        if let Some(h) = &held {
            let m = evaluate(&ckpt.model, h, lambda, config.batch)?;
            println!("  held-out: loss {:.4} bpp {:.4} PSNR {:.2} dB", m.loss, m.bpp, m.psnr);
        }
        if k == 0 && source.is_none() && lambdas.len() > 1 {
            source = Some(ckpt);
        }
    }
    Ok(())
}

fn cmd_bench(s: &Settings, a: BenchArgs) -> Result<()> {
    let images: Vec<(String, Plane)> = match (s.pick(a.corpus.clone(), "corpus")?, s.pick(a.synthetic, "synthetic")?) {
        (Some(dir), _) => list_images(&dir)?
            .into_iter()
            .map(|p| {
                let name = p.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                Ok((name, read_luma(&p)?))
            })
            .collect::<Result<_>>()?,
        (None, Some(n)) => (0..n)
            .map(|i| {
                // alternate landscape and portrait, as in common photo corpora
                let (w, h) = if i % 2 == 0 { (768, 512) } else { (512, 768) };
                (format!("synthetic{i:02}"), synthetic_image(w, h, i as u64))
            })
            .collect(),
        (None, None) => bail!("give --corpus or --synthetic"),
    };
    if images.is_empty() {
        bail!("no images to benchmark");
    }
    let preset = parse_preset(&s.pick_or(a.preset.clone(), "preset", "desk".to_string())?)?;
    let pick_model = |path: Option<PathBuf>, mode: ContextMode| -> Result<CodecModel> {
        match path {
            Some(p) => Ok(load_model(&p, Some(mode))?.0),
            None => Ok(CodecModel::new(ModelConfig::preset(preset, mode), 0)),
        }
    };
    let ar = pick_model(s.pick(a.ar_model.clone(), "ar-model")?, ContextMode::Autoregressive)?;
    let fs = pick_model(s.pick(a.four_step_model.clone(), "four-step-model")?, ContextMode::FourStep)?;
    let ll = CodecModel::new(ModelConfig::preset(preset, ContextMode::FourStepLl), 0);
    let mut models = vec![("ar".to_string(), &ar), ("four-step".to_string(), &fs)];
    if s.switch(a.ablation, "ablation")? {
        models.push(("four-step-ll".to_string(), &ll));
    }
    let reps = s.pick_or(a.repetitions, "repetitions", 1)?.max(1);
    let report = run_bench(&images, &models, reps)?;
    for r in &report.rows {
        println!(
            "{:<16} {:<13} rep {} encode {:>9.3} s decode {:>9.3} s calls {}/{} {:.4} bpp {:.2} dB{}",
            r.image,
            r.model,
            r.repetition,
            r.encode_seconds,
            r.decode_seconds,
            r.encoder_invocations,
            r.decoder_invocations,
            r.bpp,
            r.psnr,
            if r.counts_match() { "" } else { " (count differs from analytic formula)" }
        );
    }
    for (image, ratio) in report.decode_speedups("ar", "four-step") {
        println!("decode speedup {image}: {ratio:.1}x");
    }
    if let Some(p) = s.pick(a.csv.clone(), "csv")? {
        report.write_csv(&p)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

/// Rescales all responses by one symmetric range, so zero maps to mid-grey.
pub fn to_display(planes: &[Plane]) -> Vec<Plane> {
    let peak = planes
        .iter()
        .flat_map(|p| p.data.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    planes
        .iter()
        .map(|p| p.map(|v| if peak > 0.0 { (127.5 + 127.5 * v / peak).round() } else { 128.0 }))
        .collect()
}

fn cmd_impulse(s: &Settings, image: &Path, out: &Path, m: &ModelArgs) -> Result<()> {
    let (model, _) = resolve_model(s, m, Some(ContextMode::FourStep))?;
    let plane = read_luma(image)?;
    let responses = subband_impulse_response(&model, &plane)?;
    std::fs::create_dir_all(out)?;
    for (id, p) in coding_order().iter().zip(to_display(&responses)) {
        write_pgm(out.join(format!("{}.pgm", id.label())), &p)?;
    }
    println!("wrote {} impulse responses to {}", responses.len(), out.display());
    Ok(())
}
