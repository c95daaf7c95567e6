//! Rate-distortion training of every model parameter on luma patches.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{postprocess_op, subband_sizes, CodecModel};
use crate::error::{Error, Result};
use crate::nn::{adamw_step, AdamWConfig, Eval, Grads, Graph, Ops, OptimizerState, ParamStore, Tensor, WeightFile};
use crate::plane::{psnr, Plane};
use crate::wavelet::NUM_SUBBANDS;

/// Rate-distortion trade-offs of the reference models, indexed by λ id.
pub const LAMBDAS: [f64; 5] = [0.007, 0.01, 0.03, 0.05, 0.08];
/// λ id written for values outside [`LAMBDAS`].
pub const CUSTOM_LAMBDA_ID: u8 = 255;
/// Patches are stored in `[0, 1]`; the codec sees 8-bit sample values.
pub const SAMPLE_SCALE: f64 = 255.0;

pub fn lambda_id(lambda: f64) -> u8 {
    LAMBDAS
        .iter()
        .position(|&l| (l - lambda).abs() < 1e-12)
        .map_or(CUSTOM_LAMBDA_ID, |i| i as u8)
}

pub fn lambda_for_id(id: u8) -> Result<f64> {
    LAMBDAS
        .get(id as usize)
        .copied()
        .ok_or_else(|| Error::Config(format!("unknown lambda id {id}")))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub patch: usize,
    pub batch: usize,
    pub epochs: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.08,
            patch: 64,
            batch: 8,
            epochs: 1,
            optimizer: AdamWConfig::default(),
            seed: 0,
        }
    }
}

/// Loss terms of one batch, as graph values.
pub struct LossTerms<T> {
    pub loss: T,
    /// Total ideal code length in bits.
    pub rate_bits: T,
    /// Sum of squared reconstruction errors on the 8-bit scale.
    pub squared_error: T,
    pub pixels: usize,
}

/// `R + λ·D` with `R` in bits per pixel and `D` the MSE on the 8-bit scale.
pub fn rd_loss(rate_bits: f64, squared_error: f64, pixels: usize, lambda: f64) -> f64 {
    rate_bits / pixels as f64 + lambda * squared_error / pixels as f64
}

/// Quantizer behaviour on the training path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantization {
    /// Straight-through rounding.
    Rounded,
    /// No rounding; used for finite-difference checks of the whole loss.
    Identity,
}

/// Full training forward pass on a batch `[n, 1, h, w]` of 8-bit-scale samples.
pub fn forward_loss<O: Ops>(
    o: &mut O,
    model: &CodecModel,
    x: &O::T,
    lambda: f64,
    quantization: Quantization,
) -> Result<LossTerms<O::T>> {
    let shape = o.value(x).shape();
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    let pixels = n * h * w;
    let mode = model.config.lift_mode;
    let bands = model.transform.forward(o, x, mode)?;
    let log_low = o.param(model.log_delta_low);
    let log_high = o.param(model.log_delta_high);
    let steps = [o.exp(&log_low), o.exp(&log_high)];
    let neg_low = o.scale(&log_low, -1.0);
    let neg_high = o.scale(&log_high, -1.0);
    let inv_steps = [o.exp(&neg_low), o.exp(&neg_high)];

    let sizes = subband_sizes(w, h);
    let entropy = &model.entropy;
    let mut state = entropy.long_context.initial(o, n, sizes[0].0, sizes[0].1);
    let mut rate: Option<O::T> = None;
    let mut rec = Vec::with_capacity(NUM_SUBBANDS);
    for (i, band) in bands.iter().enumerate() {
        let k = usize::from(i > 0);
        let scaled = o.mul_scalar(band, &steps[k]);
        let symbols = match quantization {
            Quantization::Rounded => o.round(&scaled),
            Quantization::Identity => scaled,
        };
        let (mu, sigma) = entropy.subband_params(o, i, &symbols, &state.hidden);
        let bits = o.laplace_bits(&symbols, &mu, &sigma);
        let bits = o.sum(&bits);
        rate = Some(match rate {
            None => bits,
            Some(r) => o.add(&r, &bits),
        });
        if i + 1 < NUM_SUBBANDS {
            state = entropy.long_context.advance(o, &symbols, &state, sizes[i + 1])?;
        }
        rec.push(o.mul_scalar(&symbols, &inv_steps[k]));
    }
    let x_hat = model.transform.inverse(o, &rec, mode)?;
    let x_post = postprocess_op(o, &model.post, &x_hat);
    let err = o.sub(&x_post, x);
    let sq = o.mul(&err, &err);
    let squared_error = o.sum(&sq);
    let rate_bits = rate.expect("thirteen subbands");
    let bpp = o.scale(&rate_bits, 1.0 / pixels as f64);
    let mse = o.scale(&squared_error, lambda / pixels as f64);
    let loss = o.add(&bpp, &mse);
    Ok(LossTerms {
        loss,
        rate_bits,
        squared_error,
        pixels,
    })
}

/// Patches in `[0, 1]` and a fixed seeded ordering.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub patch: usize,
    pub patches: Vec<Plane>,
}

impl Dataset {
    pub fn from_planes(patches: Vec<Plane>) -> Result<Self> {
        let first = patches.first().ok_or_else(|| Error::Dataset("empty dataset".into()))?;
        let patch = first.width;
        if patches.iter().any(|p| p.width != patch || p.height != patch) {
            return Err(Error::Dataset("patches must be square and equally sized".into()));
        }
        Ok(Self { patch, patches })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Fixed batches of consecutive patches; the last one may be short.
    pub fn batches(&self, batch: usize) -> Vec<Vec<usize>> {
        (0..self.len()).collect::<Vec<_>>().chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
    }

    /// `[n, 1, p, p]` tensor of the selected patches on the 8-bit scale.
    pub fn tensor(&self, indices: &[usize]) -> Tensor {
        let p = self.patch;
        let mut data = Vec::with_capacity(indices.len() * p * p);
        for &i in indices {
            data.extend(self.patches[i].data.iter().map(|v| v * SAMPLE_SCALE));
        }
        Tensor::from_vec([indices.len(), 1, p, p], data).expect("patch shape")
    }

    pub fn split(mut self, held_out: usize) -> Result<(Dataset, Dataset)> {
        if held_out >= self.len() {
            return Err(Error::Dataset("held-out split leaves no training patches".into()));
        }
        let rest = self.patches.split_off(self.len() - held_out);
        Ok((
            Dataset {
                patch: self.patch,
                patches: self.patches,
            },
            Dataset {
                patch: self.patch,
                patches: rest,
            },
        ))
    }
}

/// Random crop of a plane (replicate-padded up to the patch size) scaled to `[0, 1]`.
pub fn random_patch(plane: &Plane, patch: usize, rng: &mut impl Rng) -> Plane {
    let padded = if plane.width < patch || plane.height < patch {
        let mut p = Plane::zeros(plane.width.max(patch), plane.height.max(patch));
        for y in 0..p.height {
            for x in 0..p.width {
                p.set(y, x, plane.get(y.min(plane.height - 1), x.min(plane.width - 1)));
            }
        }
        p
    } else {
        plane.clone()
    };
    let y0 = rng.gen_range(0..=padded.height - patch);
    let x0 = rng.gen_range(0..=padded.width - patch);
    let mut out = Plane::zeros(patch, patch);
    for y in 0..patch {
        for x in 0..patch {
            out.set(y, x, padded.get(y0 + y, x0 + x) / SAMPLE_SCALE);
        }
    }
    out
}

/// Luma patches from every PGM/PNG image of `dir`, `per_image` random crops
/// each, shuffled with `seed`. Unreadable files are skipped.
pub fn ingest_dataset(dir: impl AsRef<Path>, patch: usize, per_image: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut patches = Vec::new();
    for path in crate::io::list_images(dir)? {
        match crate::io::read_luma(&path) {
            Ok(img) => {
                for _ in 0..per_image {
                    patches.push(random_patch(&img, patch, &mut rng));
                }
            }
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if patches.is_empty() {
        return Err(Error::Dataset("no readable images".into()));
    }
    patches.shuffle(&mut rng);
    Dataset::from_planes(patches)
}

/// Averages over an epoch: loss, bits per pixel, MSE on the 8-bit scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub bpp: f64,
    pub mse: f64,
    pub psnr: f64,
}

impl EpochMetrics {
    fn from_sums(epoch: usize, bits: f64, sq: f64, pixels: usize, lambda: f64) -> Self {
        let mse = sq / pixels as f64;
        Self {
            epoch,
            loss: rd_loss(bits, sq, pixels, lambda),
            bpp: bits / pixels as f64,
            mse,
            psnr: psnr(mse),
        }
    }
}

fn check_finite(v: f64, what: &str, batch: &[usize]) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} = {v} on batch {batch:?}")))
    }
}

/// Metrics of a frozen model over a dataset, batches summed in dataset order.
pub fn evaluate(model: &CodecModel, data: &Dataset, lambda: f64, batch: usize) -> Result<EpochMetrics> {
    let (mut bits, mut sq, mut pixels) = (0.0, 0.0, 0);
    for b in data.batches(batch) {
        let mut o = Eval::new(&model.params);
        let x = data.tensor(&b);
        let t = forward_loss(&mut o, model, &x, lambda, Quantization::Rounded)?;
        bits += t.rate_bits.data()[0];
        sq += t.squared_error.data()[0];
        pixels += t.pixels;
    }
    Ok(EpochMetrics::from_sums(0, bits, sq, pixels, lambda))
}

/// Loss value and parameter gradients of one batch.
pub fn loss_and_grads(model: &CodecModel, x: &Tensor, lambda: f64, quantization: Quantization) -> Result<(f64, f64, f64, Grads)> {
    let mut g = Graph::new(&model.params);
    let xv = g.constant(x.clone());
    let t = forward_loss(&mut g, model, &xv, lambda, quantization)?;
    let loss = g.value(&t.loss).data()[0];
    let bits = g.value(&t.rate_bits).data()[0];
    let sq = g.value(&t.squared_error).data()[0];
    let grads = g.backward(t.loss).into_params();
    Ok((loss, bits, sq, grads))
}

/// Trainer state that survives across epochs.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: CodecModel,
    pub optimizer: OptimizerState,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
}

impl Checkpoint {
    pub fn new(model: CodecModel, config: TrainConfig) -> Self {
        let optimizer = OptimizerState::new(&model.params);
        Self {
            model,
            optimizer,
            config,
            epoch: 0,
        }
    }

    pub fn lambda_id(&self) -> u8 {
        lambda_id(self.config.lambda)
    }

    pub fn to_weight_file(&self) -> WeightFile {
        let mut wf = self.model.to_weight_file(serde_json::json!({
            "train": self.config,
            "epoch": self.epoch,
            "optimizer_step": self.optimizer.step,
            "lambda_id": self.lambda_id(),
        }));
        for (id, name, _) in self.model.params.iter() {
            wf.tensors.push((format!("adam.m/{name}"), self.optimizer.m[id.0].clone()));
            wf.tensors.push((format!("adam.v/{name}"), self.optimizer.v[id.0].clone()));
        }
        wf
    }

    pub fn from_weight_file(wf: &WeightFile) -> Result<Self> {
        let model = CodecModel::from_weight_file(wf)?;
        let missing = |k: &str| Error::ModelMismatch(format!("checkpoint lacks {k}"));
        let config: TrainConfig = serde_json::from_value(wf.meta.get("train").cloned().ok_or_else(|| missing("train"))?)?;
        let epoch = wf.meta.get("epoch").and_then(|v| v.as_u64()).ok_or_else(|| missing("epoch"))? as usize;
        let step = wf.meta.get("optimizer_step").and_then(|v| v.as_u64()).ok_or_else(|| missing("optimizer_step"))?;
        let mut optimizer = OptimizerState::new(&model.params);
        optimizer.step = step;
        for (id, name, _) in model.params.iter() {
            let m = wf.get(&format!("adam.m/{name}")).ok_or_else(|| missing(&format!("adam.m/{name}")))?;
            let v = wf.get(&format!("adam.v/{name}")).ok_or_else(|| missing(&format!("adam.v/{name}")))?;
            optimizer.m[id.0] = m.clone();
            optimizer.v[id.0] = v.clone();
        }
        if !optimizer.matches(&model.params) {
            return Err(Error::ModelMismatch("optimizer state shapes differ from the model".into()));
        }
        Ok(Self {
            model,
            optimizer,
            config,
            epoch,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_weight_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_file(&WeightFile::load(path)?)
    }
}

/// One pass over the dataset in a seeded batch order. Metrics are taken before
/// each batch's update and summed in dataset order.
pub fn train_epoch(data: &Dataset, ckpt: &mut Checkpoint) -> Result<EpochMetrics> {
    let cfg = ckpt.config;
    let batches = data.batches(cfg.batch);
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (ckpt.epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    let mut sums = vec![(0.0, 0.0, 0usize); batches.len()];
    for &bi in &order {
        let b = &batches[bi];
        let x = data.tensor(b);
        let (loss, bits, sq, grads) = loss_and_grads(&ckpt.model, &x, cfg.lambda, Quantization::Rounded)?;
        check_finite(loss, "loss", b)?;
        let report = adamw_step(&mut ckpt.model.params, &grads, &mut ckpt.optimizer, &cfg.optimizer);
        if !report.skipped_non_finite.is_empty() {
            log::warn!("non-finite gradients on batch {b:?}: {:?}", report.skipped_non_finite);
        }
        sums[bi] = (bits, sq, x.n() * data.patch * data.patch);
    }
    ckpt.epoch += 1;
    let (bits, sq, pixels) = sums
        .iter()
        .fold((0.0, 0.0, 0), |a, s| (a.0 + s.0, a.1 + s.1, a.2 + s.2));
    Ok(EpochMetrics::from_sums(ckpt.epoch, bits, sq, pixels, cfg.lambda))
}

/// Run `ckpt.config.epochs` epochs, appending one CSV row per epoch when a log path is given.
pub fn train(data: &Dataset, ckpt: &mut Checkpoint, log_csv: Option<&Path>) -> Result<Vec<EpochMetrics>> {
    let mut writer = match log_csv {
        Some(p) => Some(csv::Writer::from_path(p).map_err(|e| Error::Config(e.to_string()))?),
        None => None,
    };
    let mut all = Vec::with_capacity(ckpt.config.epochs);
    for _ in 0..ckpt.config.epochs {
        let m = train_epoch(data, ckpt)?;
        log::info!("epoch {} loss {:.4} bpp {:.4} mse {:.3} psnr {:.2}", m.epoch, m.loss, m.bpp, m.mse, m.psnr);
        if let Some(w) = writer.as_mut() {
            w.serialize(m).map_err(|e| Error::Config(e.to_string()))?;
            w.flush()?;
        }
        all.push(m);
    }
    Ok(all)
}

/// Continue from `source` at a new λ with a fresh optimizer state.
pub fn finetune_from(source: &Checkpoint, lambda: f64, epochs: usize, data: &Dataset) -> Result<Checkpoint> {
    if !(lambda > 0.0) {
        return Err(Error::Config("lambda must be positive".into()));
    }
    let mut ckpt = Checkpoint::new(source.model.clone(), TrainConfig {
        lambda,
        epochs,
        ..source.config
    });
    ckpt.epoch = source.epoch;
    train(data, &mut ckpt, None)?;
    Ok(ckpt)
}

/// Like [`finetune_from`] but checks the source architecture against `expected` first.
pub fn finetune_checked(source: &Checkpoint, expected: &CodecModel, lambda: f64, epochs: usize, data: &Dataset) -> Result<Checkpoint> {
    if source.model.config != expected.config || !same_layout(&source.model.params, &expected.params) {
        return Err(Error::ModelMismatch("checkpoint architecture differs from the requested model".into()));
    }
    finetune_from(source, lambda, epochs, data)
}

fn same_layout(a: &ParamStore, b: &ParamStore) -> bool {
    a.len() == b.len() && a.iter().zip(b.iter()).all(|((_, na, ta), (_, nb, tb))| na == nb && ta.shape() == tb.shape())
}
