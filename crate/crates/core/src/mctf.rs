//! Motion-compensated temporal lifting over groups of 8 frames and the video
//! container built on top of the image codec.

use rayon::prelude::*;

use crate::codec::{decode_plane, encode_plane, Bitstream, CodecModel, CodingStats, EncodeOptions};
use crate::error::{Error, Result};
use crate::plane::Plane;

pub const GOP_SIZE: usize = 8;
pub const TEMPORAL_LEVELS: usize = 3;
pub const VIDEO_MAGIC: &[u8; 4] = b"PWVV";
pub const VIDEO_VERSION: u8 = 1;
/// Bits per motion vector component.
pub const MV_COMPONENT_BITS: u32 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MctfConfig {
    pub block: usize,
    pub range: i32,
    /// Apply the update step; without it the lowpass frame is the even frame.
    pub update: bool,
}

impl Default for MctfConfig {
    fn default() -> Self {
        Self {
            block: 8,
            range: 8,
            update: true,
        }
    }
}

/// One displacement `(dy, dx)` per block: block content moved by that amount
/// from the reference to the current frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MotionField {
    pub block: usize,
    pub range: i32,
    pub blocks_x: usize,
    pub blocks_y: usize,
    pub vectors: Vec<(i32, i32)>,
}

impl MotionField {
    pub fn zeros(width: usize, height: usize, block: usize, range: i32) -> Self {
        let (bx, by) = (width.div_ceil(block), height.div_ceil(block));
        Self {
            block,
            range,
            blocks_x: bx,
            blocks_y: by,
            vectors: vec![(0, 0); bx * by],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> (i32, i32) {
        self.vectors[(y / self.block) * self.blocks_x + x / self.block]
    }

    fn check(&self, width: usize, height: usize) -> Result<()> {
        if self.blocks_x != width.div_ceil(self.block) || self.blocks_y != height.div_ceil(self.block) {
            return Err(Error::Shape("motion field grid does not cover the frame".into()));
        }
        if self.vectors.iter().any(|&(dy, dx)| dy.abs() > self.range || dx.abs() > self.range) {
            return Err(Error::Config("motion vector outside the search range".into()));
        }
        Ok(())
    }
}

#[inline]
fn sample(p: &Plane, y: i64, x: i64) -> f64 {
    let yy = y.clamp(0, p.height as i64 - 1) as usize;
    let xx = x.clamp(0, p.width as i64 - 1) as usize;
    p.data[yy * p.width + xx]
}

fn block_sad(reference: &Plane, current: &Plane, y0: usize, x0: usize, block: usize, dy: i32, dx: i32, bound: f64) -> f64 {
    let mut sad = 0.0;
    for y in y0..(y0 + block).min(current.height) {
        for x in x0..(x0 + block).min(current.width) {
            let r = sample(reference, y as i64 - dy as i64, x as i64 - dx as i64);
            sad += (current.data[y * current.width + x] - r).abs();
        }
        if sad >= bound {
            return sad;
        }
    }
    sad
}

/// Full-search block matching with the SAD criterion. The zero vector is
/// tried first; later candidates in raster order replace it only when strictly better.
pub fn motion_estimate(reference: &Plane, current: &Plane, cfg: &MctfConfig) -> Result<MotionField> {
    if (reference.width, reference.height) != (current.width, current.height) {
        return Err(Error::Shape("motion estimation needs equal frame sizes".into()));
    }
    let mut mf = MotionField::zeros(current.width, current.height, cfg.block, cfg.range);
    let bx = mf.blocks_x;
    mf.vectors.par_iter_mut().enumerate().for_each(|(i, v)| {
        let (y0, x0) = ((i / bx) * cfg.block, (i % bx) * cfg.block);
        let mut best = block_sad(reference, current, y0, x0, cfg.block, 0, 0, f64::INFINITY);
        let mut arg = (0, 0);
        for dy in -cfg.range..=cfg.range {
            for dx in -cfg.range..=cfg.range {
                if (dy, dx) == (0, 0) {
                    continue;
                }
                let s = block_sad(reference, current, y0, x0, cfg.block, dy, dx, best);
                if s < best {
                    best = s;
                    arg = (dy, dx);
                }
            }
        }
        *v = arg;
    });
    Ok(mf)
}

/// Motion-compensated prediction of the current frame from `reference`.
pub fn motion_compensate(reference: &Plane, mf: &MotionField) -> Plane {
    let mut out = Plane::zeros(reference.width, reference.height);
    for y in 0..reference.height {
        for x in 0..reference.width {
            let (dy, dx) = mf.at(y, x);
            out.data[y * reference.width + x] = sample(reference, y as i64 - dy as i64, x as i64 - dx as i64);
        }
    }
    out
}

/// Inverse compensation: the negated vectors applied on the same block grid.
pub fn inverse_motion_compensate(frame: &Plane, mf: &MotionField) -> Plane {
    let mut out = Plane::zeros(frame.width, frame.height);
    for y in 0..frame.height {
        for x in 0..frame.width {
            let (dy, dx) = mf.at(y, x);
            out.data[y * frame.width + x] = sample(frame, y as i64 + dy as i64, x as i64 + dx as i64);
        }
    }
    out
}

fn update_term(high: &Plane, mf: &MotionField) -> Plane {
    inverse_motion_compensate(high, mf).map(|v| (0.5 * v).round())
}

/// Haar predict/update pair: `(lowpass, highpass)`.
pub fn temporal_lift(even: &Plane, odd: &Plane, mf: &MotionField, update: bool) -> Result<(Plane, Plane)> {
    mf.check(even.width, even.height)?;
    if (even.width, even.height) != (odd.width, odd.height) {
        return Err(Error::Shape("temporal pair differs in size".into()));
    }
    let pred = motion_compensate(even, mf);
    let high = Plane {
        data: odd.data.iter().zip(&pred.data).map(|(a, b)| a - b).collect(),
        ..odd.clone()
    };
    let low = if update {
        let u = update_term(&high, mf);
        Plane {
            data: even.data.iter().zip(&u.data).map(|(a, b)| a + b).collect(),
            ..even.clone()
        }
    } else {
        even.clone()
    };
    Ok((low, high))
}

/// Inverse of [`temporal_lift`]: `(even, odd)`.
pub fn temporal_unlift(low: &Plane, high: &Plane, mf: &MotionField, update: bool) -> Result<(Plane, Plane)> {
    mf.check(low.width, low.height)?;
    let even = if update {
        let u = update_term(high, mf);
        Plane {
            data: low.data.iter().zip(&u.data).map(|(a, b)| a - b).collect(),
            ..low.clone()
        }
    } else {
        low.clone()
    };
    let pred = motion_compensate(&even, mf);
    let odd = Plane {
        data: high.data.iter().zip(&pred.data).map(|(a, b)| a + b).collect(),
        ..high.clone()
    };
    Ok((even, odd))
}

/// Temporal decomposition of one GOP.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalSubbands {
    pub lowpass: Plane,
    /// Highpass frames per temporal level, finest level first (4, 2, 1 frames).
    pub highpass: Vec<Vec<Plane>>,
    /// Motion fields per level, aligned with `highpass`.
    pub motion: Vec<Vec<MotionField>>,
}

impl TemporalSubbands {
    /// Subband frames in coding order: lowpass, then highpass from the coarsest level.
    pub fn frames(&self) -> Vec<&Plane> {
        let mut v = vec![&self.lowpass];
        for level in self.highpass.iter().rev() {
            v.extend(level.iter());
        }
        v
    }

    pub fn motion_fields(&self) -> impl Iterator<Item = &MotionField> {
        self.motion.iter().rev().flatten()
    }
}

fn check_gop(gop: &[Plane]) -> Result<()> {
    if gop.len() != GOP_SIZE {
        return Err(Error::Config(format!("GOP must hold {GOP_SIZE} frames, got {}", gop.len())));
    }
    if gop.iter().any(|f| (f.width, f.height) != (gop[0].width, gop[0].height)) {
        return Err(Error::Shape("GOP frames differ in size".into()));
    }
    Ok(())
}

/// Forward transform with a caller-supplied motion estimator.
pub fn mctf_forward_with(
    gop: &[Plane],
    cfg: &MctfConfig,
    mut estimate: impl FnMut(&Plane, &Plane) -> Result<MotionField>,
) -> Result<TemporalSubbands> {
    check_gop(gop)?;
    let mut frames: Vec<Plane> = gop.to_vec();
    let mut highpass = Vec::with_capacity(TEMPORAL_LEVELS);
    let mut motion = Vec::with_capacity(TEMPORAL_LEVELS);
    for _ in 0..TEMPORAL_LEVELS {
        let mut lows = Vec::new();
        let mut highs = Vec::new();
        let mut fields = Vec::new();
        for pair in frames.chunks(2) {
            let mf = estimate(&pair[0], &pair[1])?;
            let (l, h) = temporal_lift(&pair[0], &pair[1], &mf, cfg.update)?;
            lows.push(l);
            highs.push(h);
            fields.push(mf);
        }
        highpass.push(highs);
        motion.push(fields);
        frames = lows;
    }
    Ok(TemporalSubbands {
        lowpass: frames.pop().expect("one lowpass frame"),
        highpass,
        motion,
    })
}

pub fn mctf_forward(gop: &[Plane], cfg: &MctfConfig) -> Result<TemporalSubbands> {
    mctf_forward_with(gop, cfg, |r, c| motion_estimate(r, c, cfg))
}

pub fn mctf_inverse(bands: &TemporalSubbands, cfg: &MctfConfig) -> Result<Vec<Plane>> {
    if bands.highpass.len() != TEMPORAL_LEVELS || bands.motion.len() != TEMPORAL_LEVELS {
        return Err(Error::Shape("temporal subbands need three levels".into()));
    }
    let mut lows = vec![bands.lowpass.clone()];
    for level in (0..TEMPORAL_LEVELS).rev() {
        let (highs, fields) = (&bands.highpass[level], &bands.motion[level]);
        if highs.len() != lows.len() || fields.len() != lows.len() {
            return Err(Error::Shape(format!("temporal level {level} has inconsistent frame counts")));
        }
        let mut next = Vec::with_capacity(2 * lows.len());
        for ((l, h), mf) in lows.iter().zip(highs).zip(fields) {
            let (e, o) = temporal_unlift(l, h, mf, cfg.update)?;
            next.push(e);
            next.push(o);
        }
        lows = next;
    }
    Ok(lows)
}

fn pack_motion(fields: &[&MotionField]) -> Vec<u8> {
    let mut out = Vec::new();
    let (mut acc, mut nbits) = (0u32, 0u32);
    for mf in fields {
        for &(dy, dx) in &mf.vectors {
            for c in [dy, dx] {
                acc = (acc << MV_COMPONENT_BITS) | (c + mf.range) as u32;
                nbits += MV_COMPONENT_BITS;
                while nbits >= 8 {
                    nbits -= 8;
                    out.push((acc >> nbits) as u8);
                    acc &= (1 << nbits) - 1;
                }
            }
        }
    }
    if nbits > 0 {
        out.push((acc << (8 - nbits)) as u8);
    }
    out
}

fn unpack_motion(bytes: &[u8], width: usize, height: usize, cfg: &MctfConfig) -> Result<Vec<Vec<MotionField>>> {
    let mut bits = bytes.iter().flat_map(|b| (0..8).rev().map(move |i| (b >> i) & 1));
    let mut next = || -> Result<i32> {
        let mut v = 0i32;
        for _ in 0..MV_COMPONENT_BITS {
            v = (v << 1) | bits.next().ok_or(Error::Truncated)? as i32;
        }
        Ok(v - cfg.range)
    };
    // Stored coarsest level first, matching `motion_fields`.
    let mut levels = vec![Vec::new(); TEMPORAL_LEVELS];
    for level in (0..TEMPORAL_LEVELS).rev() {
        for _ in 0..(GOP_SIZE >> (level + 1)) {
            let mut mf = MotionField::zeros(width, height, cfg.block, cfg.range);
            for v in mf.vectors.iter_mut() {
                *v = (next()?, next()?);
            }
            mf.check(width, height)?;
            levels[level].push(mf);
        }
    }
    Ok(levels)
}

/// Per-subband-frame coding statistics of one GOP in coding order.
pub type GopStats = Vec<CodingStats>;

pub struct EncodedGop {
    pub bytes: Vec<u8>,
    pub reconstruction: Vec<Plane>,
    pub stats: GopStats,
    pub motion_bits: usize,
}

/// Decoded subband frames are rounded before the temporal inverse.
fn rebuild(frames: Vec<Plane>, motion: Vec<Vec<MotionField>>, cfg: &MctfConfig) -> Result<Vec<Plane>> {
    let mut it = frames.into_iter().map(|p| p.map(f64::round));
    let lowpass = it.next().ok_or(Error::Truncated)?;
    let mut highpass: Vec<Vec<Plane>> = vec![Vec::new(); TEMPORAL_LEVELS];
    for level in (0..TEMPORAL_LEVELS).rev() {
        for _ in 0..(GOP_SIZE >> (level + 1)) {
            highpass[level].push(it.next().ok_or(Error::Truncated)?);
        }
    }
    mctf_inverse(
        &TemporalSubbands {
            lowpass,
            highpass,
            motion,
        },
        cfg,
    )
}

/// Code one GOP: motion fields at a fixed length per vector, the lowpass frame
/// with `model_low` and the seven highpass frames with `model_high`.
pub fn encode_gop(
    gop: &[Plane],
    model_low: &CodecModel,
    model_high: &CodecModel,
    cfg: &MctfConfig,
    opts: &EncodeOptions,
) -> Result<EncodedGop> {
    let bands = mctf_forward(gop, cfg)?;
    let fields: Vec<&MotionField> = bands.motion_fields().collect();
    let motion = pack_motion(&fields);
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&(motion.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&motion);
    let mut stats = Vec::with_capacity(GOP_SIZE);
    let mut decoded = Vec::with_capacity(GOP_SIZE);
    for (i, f) in bands.frames().into_iter().enumerate() {
        let model = if i == 0 { model_low } else { model_high };
        let enc = encode_plane(f, model, opts)?;
        let b = enc.bitstream.to_bytes();
        bytes.extend_from_slice(&(b.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&b);
        stats.push(enc.stats);
        decoded.push(enc.reconstruction);
    }
    let reconstruction = rebuild(decoded, bands.motion.clone(), cfg)?;
    Ok(EncodedGop {
        bytes,
        reconstruction,
        stats,
        motion_bits: fields.iter().map(|f| f.vectors.len()).sum::<usize>() * 2 * MV_COMPONENT_BITS as usize,
    })
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).ok_or(Error::Truncated)?;
    let s = bytes.get(*pos..end).ok_or(Error::Truncated)?;
    *pos = end;
    Ok(s)
}

fn take_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, pos, 4)?.try_into().unwrap()))
}

/// Decode one GOP from the front of `bytes`; returns frames, stats and bytes consumed.
pub fn decode_gop(
    bytes: &[u8],
    width: usize,
    height: usize,
    model_low: &CodecModel,
    model_high: &CodecModel,
    cfg: &MctfConfig,
) -> Result<(Vec<Plane>, GopStats, usize)> {
    let mut pos = 0;
    let n = take_u32(bytes, &mut pos)? as usize;
    let motion = unpack_motion(take(bytes, &mut pos, n)?, width, height, cfg)?;
    let mut frames = Vec::with_capacity(GOP_SIZE);
    let mut stats = Vec::with_capacity(GOP_SIZE);
    for i in 0..GOP_SIZE {
        let n = take_u32(bytes, &mut pos)? as usize;
        let bs = Bitstream::from_bytes(take(bytes, &mut pos, n)?)?;
        if (bs.header.width as usize, bs.header.height as usize) != (width, height) {
            return Err(Error::Bitstream("subband frame size differs from the video".into()));
        }
        let d = decode_plane(&bs, if i == 0 { model_low } else { model_high })?;
        frames.push(d.reconstruction);
        stats.push(d.stats);
    }
    Ok((rebuild(frames, motion, cfg)?, stats, pos))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VideoHeader {
    pub frames: u32,
    pub width: u32,
    pub height: u32,
    pub gop: u8,
    pub levels: u8,
    pub block: u8,
    pub range: u8,
    pub update: bool,
}

impl VideoHeader {
    pub const SIZE: usize = 4 + 1 + 12 + 5;

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(VIDEO_MAGIC);
        out.push(VIDEO_VERSION);
        for v in [self.frames, self.width, self.height] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&[self.gop, self.levels, self.block, self.range, self.update as u8]);
    }

    pub fn read(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        if take(bytes, &mut pos, 4)? != VIDEO_MAGIC {
            return Err(Error::Bitstream("bad video magic".into()));
        }
        let version = take(bytes, &mut pos, 1)?[0];
        if version != VIDEO_VERSION {
            return Err(Error::Bitstream(format!("unsupported video version {version}")));
        }
        let frames = take_u32(bytes, &mut pos)?;
        let width = take_u32(bytes, &mut pos)?;
        let height = take_u32(bytes, &mut pos)?;
        let t = take(bytes, &mut pos, 5)?;
        let h = Self {
            frames,
            width,
            height,
            gop: t[0],
            levels: t[1],
            block: t[2],
            range: t[3],
            update: t[4] != 0,
        };
        if h.gop as usize != GOP_SIZE || h.levels as usize != TEMPORAL_LEVELS {
            return Err(Error::Bitstream("unsupported GOP structure".into()));
        }
        if h.block == 0 || h.range == 0 || h.range > 15 || h.width == 0 || h.height == 0 {
            return Err(Error::Bitstream("bad motion or frame parameters".into()));
        }
        Ok(h)
    }

    pub fn mctf(&self) -> MctfConfig {
        MctfConfig {
            block: self.block as usize,
            range: self.range as i32,
            update: self.update,
        }
    }
}

pub struct EncodedVideo {
    pub bytes: Vec<u8>,
    pub reconstruction: Vec<Plane>,
    pub stats: Vec<GopStats>,
}

pub struct DecodedVideo {
    pub frames: Vec<Plane>,
    pub stats: Vec<GopStats>,
}

/// Code a sequence GOP by GOP. A short final GOP is completed by repeating its
/// last frame; the repeats are dropped again on decode.
pub fn encode_video(
    frames: &[Plane],
    model_low: &CodecModel,
    model_high: &CodecModel,
    cfg: &MctfConfig,
    opts: &EncodeOptions,
) -> Result<EncodedVideo> {
    let first = frames.first().ok_or_else(|| Error::Config("no frames to encode".into()))?;
    if cfg.range < 1 || cfg.range > 15 || cfg.block == 0 || cfg.block > 255 {
        return Err(Error::Config("motion range must be 1..=15 and block 1..=255".into()));
    }
    let header = VideoHeader {
        frames: frames.len() as u32,
        width: first.width as u32,
        height: first.height as u32,
        gop: GOP_SIZE as u8,
        levels: TEMPORAL_LEVELS as u8,
        block: cfg.block as u8,
        range: cfg.range as u8,
        update: cfg.update,
    };
    let mut bytes = Vec::new();
    header.write(&mut bytes);
    let mut reconstruction = Vec::with_capacity(frames.len());
    let mut stats = Vec::new();
    for chunk in frames.chunks(GOP_SIZE) {
        let mut gop = chunk.to_vec();
        while gop.len() < GOP_SIZE {
            gop.push(chunk[chunk.len() - 1].clone());
        }
        let enc = encode_gop(&gop, model_low, model_high, cfg, opts)?;
        bytes.extend_from_slice(&enc.bytes);
        reconstruction.extend(enc.reconstruction.into_iter().take(chunk.len()));
        stats.push(enc.stats);
    }
    Ok(EncodedVideo {
        bytes,
        reconstruction,
        stats,
    })
}

pub fn decode_video(bytes: &[u8], model_low: &CodecModel, model_high: &CodecModel) -> Result<DecodedVideo> {
    let h = VideoHeader::read(bytes)?;
    let cfg = h.mctf();
    let mut pos = VideoHeader::SIZE;
    let total = h.frames as usize;
    let mut frames = Vec::with_capacity(total);
    let mut stats = Vec::new();
    while frames.len() < total {
        let (f, s, used) = decode_gop(&bytes[pos..], h.width as usize, h.height as usize, model_low, model_high, &cfg)?;
        pos += used;
        let keep = (total - frames.len()).min(GOP_SIZE);
        frames.extend(f.into_iter().take(keep));
        stats.push(s);
    }
    if pos != bytes.len() {
        return Err(Error::Bitstream(format!("{} trailing bytes in video stream", bytes.len() - pos)));
    }
    Ok(DecodedVideo { frames, stats })
}
