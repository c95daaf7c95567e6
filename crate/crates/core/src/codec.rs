//! Image plane codec: transform, quantization, context-model coding of the
//! thirteen subbands, bitstream container, post-processing.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::entropy::{
    ar_params, fuse_step, step_mask, ContextMode, EntropyConfig, EntropyModel, EntropyParams, LongContext,
};
use crate::error::{Error, Result};
use crate::nn::{Eval, Init, Ops, Padding, ParamId, ParamStore, ResidualCnn, Tensor, WeightFile};
use crate::plane::Plane;
use crate::rangecoder::{ideal_rate_bits, CdfCache, RangeDecoder, RangeEncoder, SYMBOL_MAX, SYMBOL_MIN};
use crate::wavelet::{coding_order, BaseWavelet, LiftMode, LiftingConfig, WaveletTransform, BLOCK, LEVELS, NUM_SUBBANDS};

pub const MAGIC: &[u8; 4] = b"PWVC";
pub const VERSION: u8 = 1;
/// Grid index of a unit quantizer step.
pub const DELTA_INDEX_UNIT: u16 = 2048;
const DELTA_STEPS_PER_OCTAVE: f64 = 256.0;
/// Post-processing works on `[0, 1]`-range data.
const POST_NET_SCALE: f64 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Full-size networks (fusion width 128).
    Reference,
    /// Desk-scale networks.
    Desk,
    /// Small networks for tests and single-core benchmarking.
    Compact,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lifting: LiftingConfig,
    pub entropy: EntropyConfig,
    pub post_width: usize,
    pub post_blocks: usize,
    pub lift_mode: LiftMode,
}

impl ModelConfig {
    pub fn preset(preset: Preset, mode: ContextMode) -> Self {
        let (lift, fusion, ar, ctx, post) = match preset {
            Preset::Reference => (32, 128, 128, 32, 32),
            Preset::Desk => (16, 32, 32, 16, 16),
            Preset::Compact => (8, 8, 4, 4, 8),
        };
        Self {
            lifting: LiftingConfig {
                base: BaseWavelet::Cdf53,
                width: lift,
                blocks: 2,
            },
            entropy: EntropyConfig {
                mode,
                fusion_width: fusion,
                ar_width: ar,
                context_width: ctx,
            },
            post_width: post,
            post_blocks: 2,
            lift_mode: LiftMode::Real,
        }
    }

    /// Integer lifting with a unit quantizer: integer planes are coded losslessly
    /// while the post filter is zero.
    pub fn lossless(mut self) -> Self {
        self.lift_mode = LiftMode::Integer;
        self
    }

    pub fn with_base(mut self, base: BaseWavelet) -> Self {
        self.lifting.base = base;
        self
    }

    pub fn mode(&self) -> ContextMode {
        self.entropy.mode
    }
}

/// Networks, quantizer steps and their parameters.
#[derive(Clone, Debug)]
pub struct CodecModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub transform: WaveletTransform,
    pub entropy: EntropyModel,
    pub post: ResidualCnn,
    /// log of the lowpass step multiplier.
    pub log_delta_low: ParamId,
    /// log of the step multiplier of the other subbands.
    pub log_delta_high: ParamId,
}

impl CodecModel {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let transform = WaveletTransform::new(&mut params, "transform", &config.lifting, &mut rng);
        let entropy = EntropyModel::new(&mut params, "entropy", config.entropy, &mut rng);
        let post = ResidualCnn::new(&mut params, "post", 1, config.post_width, config.post_blocks, Padding::Symmetric, &mut rng);
        let log_delta_low = params.add("quant.log_delta_low", crate::nn::init_tensor([1, 1, 1, 1], Init::Zeros, &mut rng));
        let log_delta_high = params.add("quant.log_delta_high", crate::nn::init_tensor([1, 1, 1, 1], Init::Zeros, &mut rng));
        Self {
            config,
            params,
            transform,
            entropy,
            post,
            log_delta_low,
            log_delta_high,
        }
    }

    /// Parameter groups by role, for diagnostics.
    pub fn groups(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        let mut g = vec![("lifting", self.transform.params()), ("long_context", self.entropy.long_context.params())];
        if let Some(n) = &self.entropy.ar_lowpass {
            g.push(("ar_lowpass", n.params()));
        }
        if let Some(n) = &self.entropy.ar_detail {
            g.push(("ar_detail", n.params()));
        }
        if let Some(n) = &self.entropy.four_step {
            g.push(("four_step", n.params()));
        }
        g.push(("post", self.post.params()));
        g.push(("delta_low", vec![self.log_delta_low]));
        g.push(("delta_high", vec![self.log_delta_high]));
        g
    }

    pub fn delta_low(&self) -> f64 {
        self.params.get(self.log_delta_low).data()[0].exp()
    }

    pub fn delta_high(&self) -> f64 {
        self.params.get(self.log_delta_high).data()[0].exp()
    }

    /// Grid indices of the two quantizer steps as written to bitstreams.
    pub fn delta_indices(&self) -> (u16, u16) {
        (delta_index(self.delta_low()), delta_index(self.delta_high()))
    }

    /// First 8 bytes of a SHA-256 over the configuration and every parameter.
    pub fn fingerprint(&self) -> [u8; 8] {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for (_, name, t) in self.params.iter() {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((d as u32).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        let d = h.finalize();
        d[..8].try_into().unwrap()
    }

    pub fn to_weight_file(&self, extra_meta: serde_json::Value) -> WeightFile {
        let mut meta = serde_json::json!({ "model": self.config });
        if let (Some(m), serde_json::Value::Object(extra)) = (meta.as_object_mut(), extra_meta) {
            m.extend(extra);
        }
        WeightFile {
            meta,
            tensors: self.params.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    pub fn from_weight_file(wf: &WeightFile) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(
            wf.meta
                .get("model")
                .cloned()
                .ok_or_else(|| Error::ModelMismatch("weight file has no model configuration".into()))?,
        )?;
        let mut model = Self::new(config, 0);
        let mut loaded = ParamStore::new();
        for (n, t) in &wf.tensors {
            if !n.starts_with("adam.") {
                loaded.add(n.clone(), t.clone());
            }
        }
        model.params.load_from(&loaded)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_weight_file(serde_json::json!({})).save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_weight_file(&WeightFile::load(path)?)
    }
}

pub fn delta_index(delta: f64) -> u16 {
    let x = delta.log2() * DELTA_STEPS_PER_OCTAVE + DELTA_INDEX_UNIT as f64;
    if x.is_nan() {
        return DELTA_INDEX_UNIT;
    }
    let f = x.floor();
    let r = if x - f > 0.5 { f + 1.0 } else { f };
    r.clamp(0.0, u16::MAX as f64) as u16
}

pub fn delta_from_index(index: u16) -> f64 {
    ((index as f64 - DELTA_INDEX_UNIT as f64) / DELTA_STEPS_PER_OCTAVE).exp2()
}

/// `round(y * delta)` with ties away from zero, clamped to the symbol range.
pub fn quantize(subband: &Plane, delta: f64) -> Vec<i32> {
    subband
        .data
        .iter()
        .map(|&v| ((v * delta).round()).clamp(SYMBOL_MIN as f64, SYMBOL_MAX as f64) as i32)
        .collect()
}

pub fn dequantize(symbols: &[i32], width: usize, height: usize, delta: f64) -> Plane {
    Plane {
        width,
        height,
        data: symbols.iter().map(|&s| s as f64 / delta).collect(),
    }
}

/// `plane + net(plane)`, with the network seeing `[0, 1]`-range samples.
pub fn postprocess(plane: &Plane, net: &ResidualCnn, params: &ParamStore) -> Plane {
    let mut o = Eval::new(params);
    let out = postprocess_op(&mut o, net, &plane.to_tensor());
    Plane::from_tensor(&out).expect("single plane")
}

pub fn postprocess_op<O: Ops>(o: &mut O, net: &ResidualCnn, x: &O::T) -> O::T {
    let xs = o.scale(x, 1.0 / POST_NET_SCALE);
    let r = net.forward(o, &xs);
    let r = o.scale(&r, POST_NET_SCALE);
    o.add(x, &r)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Header {
    pub width: u32,
    pub height: u32,
    pub padded_width: u32,
    pub padded_height: u32,
    pub levels: u8,
    pub context: u8,
    pub lambda_id: u8,
    pub delta_low: u16,
    pub delta_high: u16,
    pub lift_mode: u8,
    pub fingerprint: [u8; 8],
}

impl Header {
    pub const SIZE: usize = 4 + 1 + 16 + 1 + 1 + 1 + 2 + 2 + 1 + 8;
}

/// Header plus one payload per subband in coding order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitstream {
    pub header: Header,
    pub payloads: Vec<Vec<u8>>,
}

impl Bitstream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(Header::SIZE + self.payloads.iter().map(|p| p.len() + 4).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        for v in [h.width, h.height, h.padded_width, h.padded_height] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&[h.levels, h.context, h.lambda_id]);
        out.extend_from_slice(&h.delta_low.to_le_bytes());
        out.extend_from_slice(&h.delta_high.to_le_bytes());
        out.push(h.lift_mode);
        out.extend_from_slice(&h.fingerprint);
        for p in &self.payloads {
            out.extend_from_slice(&(p.len() as u32).to_le_bytes());
            out.extend_from_slice(p);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let (h, payloads) = Self::read(&mut r)?;
        if r.pos != bytes.len() {
            return Err(Error::Bitstream(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { header: h, payloads })
    }

    /// Parse one bitstream from the front of `bytes`; returns it and the bytes used.
    pub fn read_prefix(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let (header, payloads) = Self::read(&mut r)?;
        Ok((Self { header, payloads }, r.pos))
    }

    fn read(r: &mut Reader) -> Result<(Header, Vec<Vec<u8>>)> {
        if r.take(4)? != MAGIC {
            return Err(Error::Bitstream("bad magic".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::Bitstream(format!("unsupported version {version}")));
        }
        let h = Header {
            width: r.u32()?,
            height: r.u32()?,
            padded_width: r.u32()?,
            padded_height: r.u32()?,
            levels: r.u8()?,
            context: r.u8()?,
            lambda_id: r.u8()?,
            delta_low: r.u16()?,
            delta_high: r.u16()?,
            lift_mode: r.u8()?,
            fingerprint: r.take(8)?.try_into().unwrap(),
        };
        if h.levels as usize != LEVELS {
            return Err(Error::Bitstream(format!("unsupported level count {}", h.levels)));
        }
        let block = BLOCK as u32;
        if h.padded_width == 0
            || h.padded_height == 0
            || h.padded_width % block != 0
            || h.padded_height % block != 0
            || h.width > h.padded_width
            || h.height > h.padded_height
            || h.width == 0
            || h.height == 0
        {
            return Err(Error::Bitstream("inconsistent plane dimensions".into()));
        }
        let mut payloads = Vec::with_capacity(NUM_SUBBANDS);
        for _ in 0..NUM_SUBBANDS {
            let n = r.u32()? as usize;
            payloads.push(r.take(n)?.to_vec());
        }
        Ok((h, payloads))
    }

    pub fn total_bytes(&self) -> usize {
        Header::SIZE + self.payloads.iter().map(|p| p.len() + 4).sum::<usize>()
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Work counters of one encode or decode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CodingStats {
    /// Context-network evaluations (a full-grid pass or a single cursor crop each count once).
    /// Constant subbands are sent as their value alone and cost none.
    pub network_invocations: usize,
    pub payload_bytes: usize,
    /// Sum of `-log2` Laplace probabilities of the coded symbols (encoder only).
    pub ideal_bits: f64,
    /// Seconds spent in entropy coding, parameter estimation and the transform.
    pub core_seconds: f64,
    pub post_seconds: f64,
}

pub struct Encoded {
    pub bitstream: Bitstream,
    /// Quantized subbands in coding order.
    pub symbols: Vec<Vec<i32>>,
    /// Post-processed reconstruction at the original size.
    pub reconstruction: Plane,
    pub stats: CodingStats,
}

pub struct Decoded {
    pub symbols: Vec<Vec<i32>>,
    pub reconstruction: Plane,
    pub stats: CodingStats,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EncodeOptions {
    pub lambda_id: u8,
}

fn lift_mode_id(m: LiftMode) -> u8 {
    match m {
        LiftMode::Real => 0,
        LiftMode::Integer => 1,
    }
}

/// Subband sizes `(width, height)` in coding order.
pub fn subband_sizes(width: usize, height: usize) -> Vec<(usize, usize)> {
    coding_order().iter().map(|id| id.size(width, height)).collect()
}

fn as_plane(symbols: &[i32], width: usize, height: usize) -> Plane {
    Plane {
        width,
        height,
        data: symbols.iter().map(|&s| s as f64).collect(),
    }
}

fn advance_context(
    model: &CodecModel,
    index: usize,
    symbols: &Plane,
    state: LongContext<Tensor>,
    sizes: &[(usize, usize)],
) -> Result<LongContext<Tensor>> {
    if index + 1 == NUM_SUBBANDS {
        return Ok(state);
    }
    let mut o = Eval::new(&model.params);
    model
        .entropy
        .long_context
        .advance(&mut o, &symbols.to_tensor(), &state, sizes[index + 1])
}

fn encode_subband(
    model: &CodecModel,
    index: usize,
    symbols: &Plane,
    context: &Tensor,
    stats: &mut CodingStats,
) -> Result<Vec<u8>> {
    let lo = symbols.data.iter().fold(f64::INFINITY, |a, &b| a.min(b)) as i32;
    let hi = symbols.data.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) as i32;
    let mut out = Vec::new();
    out.extend_from_slice(&(lo as i16).to_le_bytes());
    out.extend_from_slice(&(hi as i16).to_le_bytes());
    if lo == hi {
        return Ok(out);
    }
    let mut cache = CdfCache::new(lo, hi);
    let mut enc = RangeEncoder::new();
    let (w, h) = (symbols.width, symbols.height);
    if let Some(ar) = model.entropy.ar_net(index) {
        let ctx = (index > 0).then_some(context);
        let p = ar_params(ar, &model.params, symbols, ctx);
        stats.network_invocations += 1;
        for i in 0..w * h {
            let s = symbols.data[i] as i32;
            enc.encode(s, &cache.get(p.mu.data[i], p.sigma.data[i]));
            stats.ideal_bits += ideal_rate_bits(&[s], &[p.mu.data[i]], &[p.sigma.data[i]]);
        }
    } else {
        let net = model.entropy.four_step_net()?;
        let mut visible = Plane::zeros(w, h);
        for phase in 0..4u8 {
            let p: EntropyParams = fuse_step(phase, &visible, context, net, &model.params)?;
            stats.network_invocations += 1;
            let m = step_mask(phase, h, w);
            for (y, x) in m.positions() {
                let i = y * w + x;
                let s = symbols.data[i] as i32;
                enc.encode(s, &cache.get(p.mu.data[i], p.sigma.data[i]));
                stats.ideal_bits += ideal_rate_bits(&[s], &[p.mu.data[i]], &[p.sigma.data[i]]);
            }
            for (y, x) in m.positions() {
                visible.set(y, x, symbols.get(y, x));
            }
        }
    }
    out.extend(enc.finish());
    Ok(out)
}

fn decode_subband(
    model: &CodecModel,
    index: usize,
    payload: &[u8],
    (w, h): (usize, usize),
    context: &Tensor,
    stats: &mut CodingStats,
) -> Result<Plane> {
    if payload.len() < 4 {
        return Err(Error::Truncated);
    }
    let lo = i16::from_le_bytes([payload[0], payload[1]]) as i32;
    let hi = i16::from_le_bytes([payload[2], payload[3]]) as i32;
    if lo > hi || lo < SYMBOL_MIN || hi > SYMBOL_MAX {
        return Err(Error::Bitstream(format!("bad alphabet [{lo}, {hi}] in subband {index}")));
    }
    if lo == hi {
        return Ok(Plane::filled(w, h, lo as f64));
    }
    let mut cache = CdfCache::new(lo, hi);
    let mut dec = RangeDecoder::new(&payload[4..])?;
    let mut out = Plane::zeros(w, h);
    if let Some(ar) = model.entropy.ar_net(index) {
        let ctx = (index > 0).then_some(context);
        for y in 0..h {
            for x in 0..w {
                let (mu, sigma) = ar.at(&model.params, &out, ctx, y, x);
                stats.network_invocations += 1;
                let s = dec.decode(&cache.get(mu, sigma))?;
                out.set(y, x, s as f64);
            }
        }
    } else {
        let net = model.entropy.four_step_net()?;
        for phase in 0..4u8 {
            let p = fuse_step(phase, &out, context, net, &model.params)?;
            stats.network_invocations += 1;
            let m = step_mask(phase, h, w);
            let mut decoded = Vec::with_capacity(m.count());
            for (y, x) in m.positions() {
                let i = y * w + x;
                decoded.push((y, x, dec.decode(&cache.get(p.mu.data[i], p.sigma.data[i]))?));
            }
            for (y, x, s) in decoded {
                out.set(y, x, s as f64);
            }
        }
    }
    Ok(out)
}

/// Dequantize, inverse-transform and crop; post-processing is timed separately.
fn reconstruct(model: &CodecModel, header: &Header, symbols: &[Vec<i32>], stats: &mut CodingStats, start: Instant) -> Result<Plane> {
    let (pw, ph) = (header.padded_width as usize, header.padded_height as usize);
    let sizes = subband_sizes(pw, ph);
    let (dl, dh) = (delta_from_index(header.delta_low), delta_from_index(header.delta_high));
    let bands: Vec<Tensor> = symbols
        .iter()
        .zip(&sizes)
        .enumerate()
        .map(|(i, (s, &(w, h)))| dequantize(s, w, h, if i == 0 { dl } else { dh }).to_tensor())
        .collect();
    let mode = if header.lift_mode == 1 { LiftMode::Integer } else { LiftMode::Real };
    let mut o = Eval::new(&model.params);
    let x = model.transform.inverse(&mut o, &bands, mode)?;
    stats.core_seconds += start.elapsed().as_secs_f64();
    let t = Instant::now();
    let post = postprocess_op(&mut o, &model.post, &x);
    stats.post_seconds += t.elapsed().as_secs_f64();
    Ok(Plane::from_tensor(&post)?.crop(header.width as usize, header.height as usize))
}

pub fn encode_plane(plane: &Plane, model: &CodecModel, opts: &EncodeOptions) -> Result<Encoded> {
    if plane.width == 0 || plane.height == 0 {
        return Err(Error::Shape("empty plane".into()));
    }
    let start = Instant::now();
    let padded = plane.pad_replicate(BLOCK);
    let (pw, ph) = (padded.width, padded.height);
    let (il, ih) = model.delta_indices();
    let header = Header {
        width: plane.width as u32,
        height: plane.height as u32,
        padded_width: pw as u32,
        padded_height: ph as u32,
        levels: LEVELS as u8,
        context: model.config.mode().id(),
        lambda_id: opts.lambda_id,
        delta_low: il,
        delta_high: ih,
        lift_mode: lift_mode_id(model.config.lift_mode),
        fingerprint: model.fingerprint(),
    };
    let mut o = Eval::new(&model.params);
    let bands = model.transform.forward(&mut o, &padded.to_tensor(), model.config.lift_mode)?;
    let (dl, dh) = (delta_from_index(il), delta_from_index(ih));
    let symbols: Vec<Vec<i32>> = bands
        .iter()
        .enumerate()
        .map(|(i, b)| quantize(&Plane::from_tensor(b).expect("plane"), if i == 0 { dl } else { dh }))
        .collect();

    let sizes = subband_sizes(pw, ph);
    let mut stats = CodingStats::default();
    let mut state = model.entropy.long_context.initial(&mut o, 1, sizes[0].0, sizes[0].1);
    let mut payloads = Vec::with_capacity(NUM_SUBBANDS);
    for (i, s) in symbols.iter().enumerate() {
        let (w, h) = sizes[i];
        let sp = as_plane(s, w, h);
        payloads.push(encode_subband(model, i, &sp, &state.hidden, &mut stats)?);
        state = advance_context(model, i, &sp, state, &sizes)?;
    }
    let bitstream = Bitstream { header, payloads };
    stats.payload_bytes = bitstream.total_bytes();
    let reconstruction = reconstruct(model, &bitstream.header, &symbols, &mut stats, start)?;
    Ok(Encoded {
        bitstream,
        symbols,
        reconstruction,
        stats,
    })
}

pub fn decode_plane(bitstream: &Bitstream, model: &CodecModel) -> Result<Decoded> {
    let start = Instant::now();
    let h = &bitstream.header;
    if h.context != model.config.mode().id() {
        return Err(Error::ModelMismatch(format!(
            "stream uses context model {}, model provides {}",
            h.context,
            model.config.mode().id()
        )));
    }
    if h.fingerprint != model.fingerprint() {
        return Err(Error::ModelMismatch("weights differ from the encoding model".into()));
    }
    if h.lift_mode != lift_mode_id(model.config.lift_mode) {
        return Err(Error::ModelMismatch("lifting mode differs from the model".into()));
    }
    if bitstream.payloads.len() != NUM_SUBBANDS {
        return Err(Error::Bitstream(format!("expected {NUM_SUBBANDS} payloads")));
    }
    let sizes = subband_sizes(h.padded_width as usize, h.padded_height as usize);
    let mut stats = CodingStats::default();
    let mut o = Eval::new(&model.params);
    let mut state = model.entropy.long_context.initial(&mut o, 1, sizes[0].0, sizes[0].1);
    let mut symbols = Vec::with_capacity(NUM_SUBBANDS);
    for i in 0..NUM_SUBBANDS {
        let sp = decode_subband(model, i, &bitstream.payloads[i], sizes[i], &state.hidden, &mut stats)?;
        symbols.push(sp.data.iter().map(|&v| v as i32).collect::<Vec<i32>>());
        state = advance_context(model, i, &sp, state, &sizes)?;
    }
    stats.payload_bytes = bitstream.total_bytes();
    let reconstruction = reconstruct(model, h, &symbols, &mut stats, start)?;
    Ok(Decoded {
        symbols,
        reconstruction,
        stats,
    })
}

/// Analytic context-network invocation counts `(encoder, decoder)` for a
/// padded `width x height` plane.
pub fn analytic_invocations(mode: ContextMode, width: usize, height: usize) -> (usize, usize) {
    let mut enc = 0;
    let mut dec = 0;
    for (i, (w, h)) in subband_sizes(width, height).into_iter().enumerate() {
        if mode.is_autoregressive(i) {
            enc += 1;
            dec += w * h;
        } else {
            enc += 4;
            dec += 4;
        }
    }
    (enc, dec)
}

/// Basis image of each subband around its strongest quantized coefficient,
/// synthesized on a 16x16 grid where level-4 subbands are 1x1.
pub fn subband_impulse_response(model: &CodecModel, plane: &Plane) -> Result<Vec<Plane>> {
    let padded = plane.pad_replicate(BLOCK);
    let mut o = Eval::new(&model.params);
    let bands = model.transform.forward(&mut o, &padded.to_tensor(), model.config.lift_mode)?;
    let (il, ih) = model.delta_indices();
    let (dl, dh) = (delta_from_index(il), delta_from_index(ih));
    let order = coding_order();
    let mut out = Vec::with_capacity(NUM_SUBBANDS);
    for (i, b) in bands.iter().enumerate() {
        let bp = Plane::from_tensor(b)?;
        let delta = if i == 0 { dl } else { dh };
        let q = quantize(&bp, delta);
        let mut best = 0usize;
        for (k, v) in q.iter().enumerate() {
            if v.abs() > q[best].abs() {
                best = k;
            }
        }
        let (by, bx) = (best / bp.width, best % bp.width);
        let mut pyramid: Vec<Tensor> = subband_sizes(BLOCK, BLOCK)
            .into_iter()
            .map(|(w, h)| Tensor::zeros([1, 1, h, w]))
            .collect();
        let (sw, sh) = order[i].size(BLOCK, BLOCK);
        let (ty, tx) = (by * sh / bp.height, bx * sw / bp.width);
        pyramid[i].set(0, 0, ty, tx, q[best] as f64 / delta);
        let x = model.transform.inverse(&mut o, &pyramid, LiftMode::Real)?;
        out.push(Plane::from_tensor(&x)?);
    }
    Ok(out)
}
