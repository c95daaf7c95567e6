//! Context models estimating per-coefficient Laplace parameters: the
//! raster-causal autoregressive model, the four-step parallel model, and the
//! ConvLSTM long-term context carried from subband to subband.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    CausalMask, Conv2d, ConvLstm, ConvSpec, DepthConvBlock, Eval, Init, LstmState, Ops, Padding, ParamId, ParamStore,
    ResBlock, Tensor, LEAKY_SLOPE,
};
use crate::plane::Plane;

pub use crate::rangecoder::laplace_pmf;

pub const SIGMA_FLOOR: f64 = 1e-6;
/// Bound on the raw log-scale output before exponentiation.
pub const LOG_SIGMA_LIMIT: f64 = 10.0;
/// Coefficients enter the networks divided by this and means leave multiplied by it.
pub const COEF_SCALE: f64 = 64.0;
/// Half-width of the autoregressive model's receptive field.
pub const AR_RADIUS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContextMode {
    /// Every subband coded position by position.
    Autoregressive,
    /// Autoregressive lowpass, four-step for the twelve detail subbands.
    FourStep,
    /// Four-step for all thirteen subbands (lowpass gets a zero long context).
    FourStepLl,
}

impl ContextMode {
    pub fn id(self) -> u8 {
        match self {
            ContextMode::Autoregressive => 0,
            ContextMode::FourStep => 1,
            ContextMode::FourStepLl => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(ContextMode::Autoregressive),
            1 => Ok(ContextMode::FourStep),
            2 => Ok(ContextMode::FourStepLl),
            _ => Err(Error::Bitstream(format!("unknown context model id {id}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ContextMode::Autoregressive => "ar",
            ContextMode::FourStep => "four-step",
            ContextMode::FourStepLl => "four-step-ll",
        }
    }

    /// Mode from the context flags: `context` is `ar` or `four-step`, and
    /// `ll_context` picks the lowpass model (`ar` by default).
    pub fn from_flags(context: &str, ll_context: Option<&str>) -> Result<Self> {
        match (context, ll_context) {
            ("ar", None | Some("ar")) => Ok(ContextMode::Autoregressive),
            ("four-step", None | Some("ar")) => Ok(ContextMode::FourStep),
            ("four-step", Some("four-step")) => Ok(ContextMode::FourStepLl),
            ("four-step-ll", None) => Ok(ContextMode::FourStepLl),
            (c, l) => Err(Error::Config(format!(
                "unsupported context combination: context={c}, ll-context={}",
                l.unwrap_or("default")
            ))),
        }
    }

    /// Whether subband `index` (coding order) is coded autoregressively.
    pub fn is_autoregressive(self, index: usize) -> bool {
        match self {
            ContextMode::Autoregressive => true,
            ContextMode::FourStep => index == 0,
            ContextMode::FourStepLl => false,
        }
    }
}

/// Coding phase of a position: even/even, even row odd column, odd row even
/// column, odd/odd.
#[inline]
pub fn phase_of(y: usize, x: usize) -> u8 {
    ((y % 2) * 2 + (x % 2)) as u8
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepMask {
    pub phase: u8,
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
}

impl StepMask {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height)
            .flat_map(move |y| (0..self.width).map(move |x| (y, x)))
            .filter(move |&(y, x)| self.get(y, x))
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    fn as_tensor(&self) -> Tensor {
        Tensor::from_vec(
            [1, 1, self.height, self.width],
            self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask size")
    }
}

pub fn step_mask(phase: u8, height: usize, width: usize) -> StepMask {
    assert!(phase < 4, "phase must be 0..3");
    let mut mask = vec![false; height * width];
    for y in 0..height {
        for x in 0..width {
            mask[y * width + x] = phase_of(y, x) == phase;
        }
    }
    StepMask {
        phase,
        width,
        height,
        mask,
    }
}

/// Positions coded before `phase` begins, as a 0/1 tensor.
fn coded_before(phase: u8, height: usize, width: usize) -> Tensor {
    let mut t = Tensor::zeros([1, 1, height, width]);
    for y in 0..height {
        for x in 0..width {
            if phase_of(y, x) < phase {
                t.set(0, 0, y, x, 1.0);
            }
        }
    }
    t
}

/// Laplace mean and scale for every position of a subband.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyParams {
    pub mu: Plane,
    pub sigma: Plane,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntropyConfig {
    pub mode: ContextMode,
    /// Channel width of the four-step fusion networks.
    pub fusion_width: usize,
    /// Channel width of the autoregressive networks.
    pub ar_width: usize,
    /// Channel width of the long-term context (embedding and ConvLSTM state).
    pub context_width: usize,
}

/// Maps a 2-channel raw network output to `(mu, sigma)`.
pub fn raw_to_params<O: Ops>(o: &mut O, raw: &O::T) -> (O::T, O::T) {
    let m = o.slice_channels(raw, 0, 1);
    let mu = o.scale(&m, COEF_SCALE);
    let r = o.slice_channels(raw, 1, 1);
    let r = o.clamp(&r, -LOG_SIGMA_LIMIT, LOG_SIGMA_LIMIT);
    (mu, o.exp(&r))
}

fn raw_pair(raw: f64, log_sigma: f64) -> (f64, f64) {
    (raw * COEF_SCALE, log_sigma.clamp(-LOG_SIGMA_LIMIT, LOG_SIGMA_LIMIT).exp())
}

/// Embedding plus ConvLSTM that summarizes the subbands coded so far.
#[derive(Clone, Debug)]
pub struct LongContextNet {
    pub embed: Conv2d,
    pub lstm: ConvLstm,
}

/// Long-term context at the resolution of the subband about to be coded.
pub type LongContext<T> = LstmState<T>;

impl LongContextNet {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut impl Rng) -> Self {
        Self {
            embed: Conv2d::new(store, &format!("{prefix}.embed"), ConvSpec::same(1, width, 3), Init::FanIn(0), rng),
            lstm: ConvLstm::new(store, &format!("{prefix}.lstm"), width, width, rng),
        }
    }

    pub fn width(&self) -> usize {
        self.lstm.hidden_channels
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.embed.params(), self.lstm.params()].concat()
    }

    pub fn initial<O: Ops>(&self, o: &mut O, n: usize, width: usize, height: usize) -> LongContext<O::T> {
        self.lstm.zero_state(o, n, height, width)
    }

    /// Fold a fully coded subband (in symbol units) into the state and move it
    /// to the resolution of the next subband.
    pub fn advance<O: Ops>(
        &self,
        o: &mut O,
        coded: &O::T,
        state: &LongContext<O::T>,
        next_size: (usize, usize),
    ) -> Result<LongContext<O::T>> {
        let (cw, ch) = {
            let v = o.value(&state.hidden);
            (v.w(), v.h())
        };
        {
            let c = o.value(coded);
            if (c.w(), c.h()) != (cw, ch) {
                return Err(Error::Shape(format!(
                    "coded subband {}x{} does not match context {cw}x{ch}",
                    c.w(),
                    c.h()
                )));
            }
        }
        let scaled = o.scale(coded, 1.0 / COEF_SCALE);
        let e = o.conv(&scaled, &self.embed);
        let e = o.leaky_relu(&e, LEAKY_SLOPE);
        let next = self.lstm.step(o, &e, state);
        if next_size == (cw, ch) {
            Ok(next)
        } else if next_size == (2 * cw, 2 * ch) {
            Ok(LstmState {
                hidden: o.upsample2x(&next.hidden),
                cell: o.upsample2x(&next.cell),
            })
        } else {
            Err(Error::Shape(format!(
                "context can move from {cw}x{ch} only to the same size or double, not {}x{}",
                next_size.0, next_size.1
            )))
        }
    }
}

/// Plane-level wrapper over [`LongContextNet::advance`].
pub fn long_context_advance(
    net: &LongContextNet,
    params: &ParamStore,
    decoded: &Plane,
    state: &LongContext<Tensor>,
    next_size: (usize, usize),
) -> Result<LongContext<Tensor>> {
    let mut o = Eval::new(params);
    net.advance(&mut o, &decoded.to_tensor(), state, next_size)
}

/// Phase-0 branch: long context only.
#[derive(Clone, Debug)]
pub struct FirstStepNet {
    pub proj: Conv2d,
    pub blocks: Vec<DepthConvBlock>,
    pub head: Conv2d,
}

/// Phase 1..3 branch: visible coefficients, coded mask and long context.
#[derive(Clone, Debug)]
pub struct LaterStepNet {
    pub stem: Conv2d,
    pub blocks: Vec<ResBlock>,
    pub head: Conv2d,
}

#[derive(Clone, Debug)]
pub struct FourStepFusionNet {
    pub first: FirstStepNet,
    pub later: Vec<LaterStepNet>,
}

impl FourStepFusionNet {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize, context_width: usize, rng: &mut impl Rng) -> Self {
        let first = FirstStepNet {
            proj: Conv2d::new(store, &format!("{prefix}.step0.proj"), ConvSpec::same(context_width, width, 1), Init::FanIn(0), rng),
            blocks: (0..2)
                .map(|i| DepthConvBlock::new(store, &format!("{prefix}.step0.block{i}"), width, rng))
                .collect(),
            head: Conv2d::new(store, &format!("{prefix}.step0.head"), ConvSpec::same(width, 2, 3), Init::Zeros, rng),
        };
        let later = (1..4)
            .map(|k| LaterStepNet {
                stem: Conv2d::new(
                    store,
                    &format!("{prefix}.step{k}.stem"),
                    ConvSpec::same(context_width + 2, width, 3),
                    Init::FanIn(0),
                    rng,
                ),
                blocks: (0..2)
                    .map(|i| ResBlock::new(store, &format!("{prefix}.step{k}.block{i}"), width, Padding::Zero, rng))
                    .collect(),
                head: Conv2d::new(store, &format!("{prefix}.step{k}.head"), ConvSpec::same(width, 2, 3), Init::Zeros, rng),
            })
            .collect();
        Self { first, later }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.first.proj.params();
        for b in &self.first.blocks {
            p.extend(b.params());
        }
        p.extend(self.first.head.params());
        for s in &self.later {
            p.extend(s.stem.params());
            for b in &s.blocks {
                p.extend(b.params());
            }
            p.extend(s.head.params());
        }
        p
    }

    /// Raw 2-channel output of the phase network over the whole subband.
    /// `visible` holds coded coefficients in symbol units and zeros elsewhere.
    pub fn raw<O: Ops>(&self, o: &mut O, phase: u8, visible: &O::T, context: &O::T) -> O::T {
        if phase == 0 {
            let mut h = o.conv(context, &self.first.proj);
            for b in &self.first.blocks {
                h = b.forward(o, &h);
            }
            return o.conv(&h, &self.first.head);
        }
        let net = &self.later[phase as usize - 1];
        let (n, h, w) = {
            let v = o.value(visible);
            (v.n(), v.h(), v.w())
        };
        let mut coded = coded_before(phase, h, w);
        if n > 1 {
            coded = crate::nn::kernels::concat_channels(&vec![&coded; n])
                .reshape([n, 1, h, w])
                .expect("batch mask");
        }
        let coded = o.constant(coded);
        let scaled = o.scale(visible, 1.0 / COEF_SCALE);
        let x = o.concat(&[&scaled, &coded, context]);
        let x = o.conv(&x, &net.stem);
        let mut x = o.leaky_relu(&x, LEAKY_SLOPE);
        for b in &net.blocks {
            x = b.forward(o, &x);
        }
        o.conv(&x, &net.head)
    }

    /// Teacher-forced parameters for a whole subband: each position gets the
    /// output of its own phase network, computed from the true coefficients of
    /// earlier phases.
    pub fn teacher_forced<O: Ops>(&self, o: &mut O, symbols: &O::T, context: &O::T) -> (O::T, O::T) {
        let (n, h, w) = {
            let v = o.value(symbols);
            (v.n(), v.h(), v.w())
        };
        let batch = |t: Tensor| -> Tensor {
            if n == 1 {
                t
            } else {
                let parts = vec![&t; n];
                crate::nn::kernels::concat_channels(&parts).reshape([n, 1, h, w]).expect("batch mask")
            }
        };
        let mut mu_acc: Option<O::T> = None;
        let mut sigma_acc: Option<O::T> = None;
        for phase in 0..4u8 {
            let visible = {
                let before = batch(coded_before(phase, h, w));
                o.mul_const(symbols, &before)
            };
            let raw = self.raw(o, phase, &visible, context);
            let (mu, sigma) = raw_to_params(o, &raw);
            let sel = batch(step_mask(phase, h, w).as_tensor());
            let mu = o.mul_const(&mu, &sel);
            let sigma = o.mul_const(&sigma, &sel);
            mu_acc = Some(match mu_acc {
                None => mu,
                Some(a) => o.add(&a, &mu),
            });
            sigma_acc = Some(match sigma_acc {
                None => sigma,
                Some(a) => o.add(&a, &sigma),
            });
        }
        (mu_acc.unwrap(), sigma_acc.unwrap())
    }
}

/// Check that `visible` is zero at every position not coded before `phase`.
pub fn check_visibility(phase: u8, visible: &Plane) -> Result<()> {
    for y in 0..visible.height {
        for x in 0..visible.width {
            if phase_of(y, x) >= phase && visible.get(y, x) != 0.0 {
                return Err(Error::VisibilityLeak { phase, y, x });
            }
        }
    }
    Ok(())
}

/// Parameters of one phase from the coefficients coded so far. The returned
/// maps cover the whole subband; only the positions of `phase` are meaningful.
pub fn fuse_step(
    phase: u8,
    visible: &Plane,
    context: &Tensor,
    net: &FourStepFusionNet,
    params: &ParamStore,
) -> Result<EntropyParams> {
    check_visibility(phase, visible)?;
    if (context.w(), context.h()) != (visible.width, visible.height) {
        return Err(Error::Shape("long context and subband differ in size".into()));
    }
    let mut o = Eval::new(params);
    let raw = net.raw(&mut o, phase, &visible.to_tensor(), context);
    Ok(split_raw(&raw))
}

fn split_raw(raw: &Tensor) -> EntropyParams {
    let (w, h) = (raw.w(), raw.h());
    let m = raw.plane(0, 0);
    let s = raw.plane(0, 1);
    let mut mu = Plane::zeros(w, h);
    let mut sigma = Plane::zeros(w, h);
    for i in 0..w * h {
        let (a, b) = raw_pair(m[i], s[i]);
        mu.data[i] = a;
        sigma.data[i] = b;
    }
    EntropyParams { mu, sigma }
}

/// Raster-causal model: a type-A masked 5x5 convolution, optional pointwise
/// long-context branch, two masked residual blocks and a pointwise head.
#[derive(Clone, Debug)]
pub struct ArFusionNet {
    pub input: Conv2d,
    pub context: Option<Conv2d>,
    pub blocks: Vec<ResBlock>,
    pub head: Conv2d,
}

impl ArFusionNet {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize, context_width: Option<usize>, rng: &mut impl Rng) -> Self {
        Self {
            input: Conv2d::masked(store, &format!("{prefix}.input"), ConvSpec::same(1, width, 5), CausalMask::A, Init::FanIn(0), rng),
            context: context_width.map(|cw| {
                Conv2d::new(store, &format!("{prefix}.context"), ConvSpec::same(cw, width, 1), Init::FanIn(0), rng)
            }),
            blocks: (0..2)
                .map(|i| ResBlock::causal(store, &format!("{prefix}.block{i}"), width, 3, rng))
                .collect(),
            head: Conv2d::new(store, &format!("{prefix}.head"), ConvSpec::same(width, 2, 1), Init::Zeros, rng),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.input.params();
        if let Some(c) = &self.context {
            p.extend(c.params());
        }
        for b in &self.blocks {
            p.extend(b.params());
        }
        p.extend(self.head.params());
        p
    }

    /// Raw output for every position; position `p` only depends on inputs
    /// strictly before `p` in raster order.
    pub fn raw<O: Ops>(&self, o: &mut O, symbols: &O::T, context: Option<&O::T>) -> O::T {
        let scaled = o.scale(symbols, 1.0 / COEF_SCALE);
        let mut h = o.conv(&scaled, &self.input);
        if let (Some(conv), Some(ctx)) = (&self.context, context) {
            let c = o.conv(ctx, conv);
            h = o.add(&h, &c);
        }
        let mut h = o.leaky_relu(&h, LEAKY_SLOPE);
        for b in &self.blocks {
            h = b.forward(o, &h);
        }
        o.conv(&h, &self.head)
    }

    /// Parameters at `(y, x)` computed on the causal window around the cursor;
    /// identical to the full-grid output at that position.
    pub fn at(
        &self,
        params: &ParamStore,
        symbols: &Plane,
        context: Option<&Tensor>,
        y: usize,
        x: usize,
    ) -> (f64, f64) {
        let y0 = y.saturating_sub(AR_RADIUS);
        let x0 = x.saturating_sub(AR_RADIUS);
        let x1 = (x + AR_RADIUS).min(symbols.width - 1);
        let (cw, ch) = (x1 - x0 + 1, y - y0 + 1);
        let mut crop = Tensor::zeros([1, 1, ch, cw]);
        for yy in 0..ch {
            for xx in 0..cw {
                crop.set(0, 0, yy, xx, symbols.get(y0 + yy, x0 + xx));
            }
        }
        let ctx_crop = context.map(|c| {
            let mut t = Tensor::zeros([1, c.c(), ch, cw]);
            for k in 0..c.c() {
                for yy in 0..ch {
                    for xx in 0..cw {
                        t.set(0, k, yy, xx, c.get(0, k, y0 + yy, x0 + xx));
                    }
                }
            }
            t
        });
        let mut o = Eval::new(params);
        let raw = self.raw(&mut o, &crop, ctx_crop.as_ref());
        raw_pair(raw.get(0, 0, y - y0, x - x0), raw.get(0, 1, y - y0, x - x0))
    }
}

/// Parameters for the raster cursor `(y, x)`; `so_far` holds decoded values
/// before the cursor (later positions are ignored).
pub fn ar_fuse(
    so_far: &Plane,
    context: Option<&Tensor>,
    y: usize,
    x: usize,
    net: &ArFusionNet,
    params: &ParamStore,
) -> (f64, f64) {
    net.at(params, so_far, context, y, x)
}

/// Full-grid autoregressive parameters (encoder side).
pub fn ar_params(net: &ArFusionNet, params: &ParamStore, symbols: &Plane, context: Option<&Tensor>) -> EntropyParams {
    let mut o = Eval::new(params);
    let raw = net.raw(&mut o, &symbols.to_tensor(), context);
    split_raw(&raw)
}

/// All context networks of a codec model.
#[derive(Clone, Debug)]
pub struct EntropyModel {
    pub config: EntropyConfig,
    pub long_context: LongContextNet,
    /// Lowpass autoregressive model (absent in the all-four-step ablation).
    pub ar_lowpass: Option<ArFusionNet>,
    /// Detail-subband autoregressive model (autoregressive mode only).
    pub ar_detail: Option<ArFusionNet>,
    pub four_step: Option<FourStepFusionNet>,
}

impl EntropyModel {
    pub fn new(store: &mut ParamStore, prefix: &str, config: EntropyConfig, rng: &mut impl Rng) -> Self {
        let cw = config.context_width;
        let long_context = LongContextNet::new(store, &format!("{prefix}.long_context"), cw, rng);
        let ar_lowpass = (config.mode != ContextMode::FourStepLl)
            .then(|| ArFusionNet::new(store, &format!("{prefix}.ar_lowpass"), config.ar_width, None, rng));
        let ar_detail = (config.mode == ContextMode::Autoregressive)
            .then(|| ArFusionNet::new(store, &format!("{prefix}.ar_detail"), config.ar_width, Some(cw), rng));
        let four_step = (config.mode != ContextMode::Autoregressive)
            .then(|| FourStepFusionNet::new(store, &format!("{prefix}.four_step"), config.fusion_width, cw, rng));
        Self {
            config,
            long_context,
            ar_lowpass,
            ar_detail,
            four_step,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.long_context.params();
        for n in [&self.ar_lowpass, &self.ar_detail].into_iter().flatten() {
            p.extend(n.params());
        }
        if let Some(f) = &self.four_step {
            p.extend(f.params());
        }
        p
    }

    /// Autoregressive network for subband `index`, if that subband is coded autoregressively.
    pub fn ar_net(&self, index: usize) -> Option<&ArFusionNet> {
        if !self.config.mode.is_autoregressive(index) {
            return None;
        }
        if index == 0 {
            self.ar_lowpass.as_ref()
        } else {
            self.ar_detail.as_ref()
        }
    }

    pub fn four_step_net(&self) -> Result<&FourStepFusionNet> {
        self.four_step
            .as_ref()
            .ok_or_else(|| Error::Config("model has no four-step network".into()))
    }

    /// Training-path parameters of subband `index` given its true symbols and
    /// the long context (unused for the autoregressive lowpass).
    pub fn subband_params<O: Ops>(&self, o: &mut O, index: usize, symbols: &O::T, context: &O::T) -> (O::T, O::T) {
        if let Some(ar) = self.ar_net(index) {
            let ctx = if index == 0 { None } else { Some(context) };
            let raw = ar.raw(o, symbols, ctx);
            raw_to_params(o, &raw)
        } else {
            self.four_step
                .as_ref()
                .expect("four-step network present")
                .teacher_forced(o, symbols, context)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_zero_is_the_wide_checkerboard() {
        let m = step_mask(0, 4, 4);
        let pos: Vec<_> = m.positions().collect();
        assert_eq!(pos, vec![(0, 0), (0, 2), (2, 0), (2, 2)]);
    }

    #[test]
    fn pmf_at_mode() {
        let p = laplace_pmf(0, 0.0, 1.0, -4096, 4095);
        assert!((p - (1.0 - (-0.5f64).exp())).abs() < 1e-12);
        assert!((p - 0.393469).abs() < 1e-6);
    }
}
