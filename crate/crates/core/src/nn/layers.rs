//! Network building blocks shared by the transform, the context models and
//! the post-processing filter.

use std::sync::Arc;

use rand::Rng;

use super::conv::{CausalMask, ConvSpec};
use super::ops::Ops;
use super::params::{init_tensor, Init, ParamId, ParamStore};
use super::tensor::Tensor;

/// Slope of every hidden leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub mask: Option<Arc<Vec<bool>>>,
}

impl Conv2d {
    pub fn new(store: &mut ParamStore, name: &str, spec: ConvSpec, init: Init, rng: &mut impl Rng) -> Self {
        spec.validate().expect("layer spec");
        let init = match init {
            Init::FanIn(_) => Init::FanIn(spec.fan_in()),
            other => other,
        };
        let weight = store.add(format!("{name}.weight"), init_tensor(spec.weight_shape(), init, rng));
        let bias_init = match init {
            Init::FanIn(f) => Init::FanIn(f),
            _ => Init::Zeros,
        };
        let bias = store.add(
            format!("{name}.bias"),
            init_tensor([spec.out_channels, 1, 1, 1], bias_init, rng),
        );
        Self {
            spec,
            weight,
            bias: Some(bias),
            mask: None,
        }
    }

    pub fn masked(
        store: &mut ParamStore,
        name: &str,
        spec: ConvSpec,
        mask: CausalMask,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let mut conv = Self::new(store, name, spec, init, rng);
        let taps = mask.taps(spec.kernel);
        // masked taps hold zeros so the stored weights match what is applied
        let w = store.get_mut(conv.weight);
        let kk = spec.kernel * spec.kernel;
        for (i, v) in w.data_mut().iter_mut().enumerate() {
            if !taps[i % kk] {
                *v = 0.0;
            }
        }
        conv.mask = Some(Arc::new(taps));
        conv
    }

    pub fn forward<O: Ops>(&self, o: &mut O, x: &O::T) -> O::T {
        o.conv(x, self)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Zero,
    /// Half-sample symmetric extension, applied explicitly before each conv.
    Symmetric,
}

fn padded_spec(spec: ConvSpec, padding: Padding) -> ConvSpec {
    match padding {
        Padding::Zero => spec,
        Padding::Symmetric => ConvSpec { padding: 0, ..spec },
    }
}

fn apply<O: Ops>(o: &mut O, conv: &Conv2d, x: &O::T, padding: Padding) -> O::T {
    match padding {
        Padding::Zero => o.conv(x, conv),
        Padding::Symmetric => {
            let p = conv.spec.kernel / 2;
            if p == 0 {
                return o.conv(x, conv);
            }
            let xp = o.pad_sym(x, p);
            o.conv(&xp, conv)
        }
    }
}

/// Two 3x3 convolutions with a skip connection: `x + conv2(act(conv1(x)))`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub padding: Padding,
}

impl ResBlock {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, padding: Padding, rng: &mut impl Rng) -> Self {
        let spec = padded_spec(ConvSpec::same(channels, channels, 3), padding);
        Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), spec, Init::FanIn(0), rng),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), spec, Init::FanIn(0), rng),
            padding,
        }
    }

    /// Residual block whose convolutions only see raster-preceding positions
    /// and the center (mask B), so stacking keeps the network causal.
    pub fn causal(store: &mut ParamStore, name: &str, channels: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let spec = ConvSpec::same(channels, channels, kernel);
        Self {
            conv1: Conv2d::masked(store, &format!("{name}.conv1"), spec, CausalMask::B, Init::FanIn(0), rng),
            conv2: Conv2d::masked(store, &format!("{name}.conv2"), spec, CausalMask::B, Init::FanIn(0), rng),
            padding: Padding::Zero,
        }
    }

    pub fn forward<O: Ops>(&self, o: &mut O, x: &O::T) -> O::T {
        let h = apply(o, &self.conv1, x, self.padding);
        let h = o.leaky_relu(&h, LEAKY_SLOPE);
        let h = apply(o, &self.conv2, &h, self.padding);
        o.add(x, &h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.conv1.params(), self.conv2.params()].concat()
    }
}

/// Depthwise-separable residual block followed by a pointwise feed-forward
/// residual part.
///
/// ```text
/// x1  = x  + pw_out(dw3x3(act(pw_in(x))))     dw3x3: groups = channels
/// out = x1 + ffn2(act(ffn1(x1)))              ffn hidden width 2*channels
/// ```
#[derive(Clone, Debug)]
pub struct DepthConvBlock {
    pub pw_in: Conv2d,
    pub depthwise: Conv2d,
    pub pw_out: Conv2d,
    pub ffn1: Conv2d,
    pub ffn2: Conv2d,
}

impl DepthConvBlock {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let c = channels;
        Self {
            pw_in: Conv2d::new(store, &format!("{name}.pw_in"), ConvSpec::same(c, c, 1), Init::FanIn(0), rng),
            depthwise: Conv2d::new(
                store,
                &format!("{name}.depthwise"),
                ConvSpec::same(c, c, 3).with_groups(c),
                Init::FanIn(0),
                rng,
            ),
            pw_out: Conv2d::new(store, &format!("{name}.pw_out"), ConvSpec::same(c, c, 1), Init::FanIn(0), rng),
            ffn1: Conv2d::new(store, &format!("{name}.ffn1"), ConvSpec::same(c, 2 * c, 1), Init::FanIn(0), rng),
            ffn2: Conv2d::new(store, &format!("{name}.ffn2"), ConvSpec::same(2 * c, c, 1), Init::FanIn(0), rng),
        }
    }

    pub fn forward<O: Ops>(&self, o: &mut O, x: &O::T) -> O::T {
        let h = o.conv(x, &self.pw_in);
        let h = o.leaky_relu(&h, LEAKY_SLOPE);
        let h = o.conv(&h, &self.depthwise);
        let h = o.conv(&h, &self.pw_out);
        let x1 = o.add(x, &h);
        let f = o.conv(&x1, &self.ffn1);
        let f = o.leaky_relu(&f, LEAKY_SLOPE);
        let f = o.conv(&f, &self.ffn2);
        o.add(&x1, &f)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.pw_in, &self.depthwise, &self.pw_out, &self.ffn1, &self.ffn2]
            .iter()
            .flat_map(|c| c.params())
            .collect()
    }
}

/// Convolutional LSTM cell; gates come from one 3x3 convolution over `[x, h]`
/// in the order input, forget, output, candidate.
#[derive(Clone, Debug)]
pub struct ConvLstm {
    pub gates: Conv2d,
    pub input_channels: usize,
    pub hidden_channels: usize,
}

/// Hidden and cell state of a [`ConvLstm`]; both share one shape.
pub struct LstmState<T> {
    pub hidden: T,
    pub cell: T,
}

impl ConvLstm {
    pub fn new(store: &mut ParamStore, name: &str, input_channels: usize, hidden_channels: usize, rng: &mut impl Rng) -> Self {
        let spec = ConvSpec::same(input_channels + hidden_channels, 4 * hidden_channels, 3);
        Self {
            gates: Conv2d::new(store, &format!("{name}.gates"), spec, Init::FanIn(0), rng),
            input_channels,
            hidden_channels,
        }
    }

    pub fn zero_state<O: Ops>(&self, o: &mut O, n: usize, h: usize, w: usize) -> LstmState<O::T> {
        let shape = [n, self.hidden_channels, h, w];
        LstmState {
            hidden: o.constant(Tensor::zeros(shape)),
            cell: o.constant(Tensor::zeros(shape)),
        }
    }

    /// One step; the returned hidden state is also the cell's output.
    pub fn step<O: Ops>(&self, o: &mut O, x: &O::T, state: &LstmState<O::T>) -> LstmState<O::T> {
        {
            let (xv, hv) = (o.value(x), o.value(&state.hidden));
            assert_eq!(
                (xv.h(), xv.w()),
                (hv.h(), hv.w()),
                "ConvLSTM input and state must share spatial size"
            );
        }
        let hc = self.hidden_channels;
        let z = o.concat(&[x, &state.hidden]);
        let z = o.conv(&z, &self.gates);
        let zi = o.slice_channels(&z, 0, hc);
        let zf = o.slice_channels(&z, hc, hc);
        let zo = o.slice_channels(&z, 2 * hc, hc);
        let zg = o.slice_channels(&z, 3 * hc, hc);
        let i = o.sigmoid(&zi);
        let f = o.sigmoid(&zf);
        let og = o.sigmoid(&zo);
        let g = o.tanh(&zg);
        let fc = o.mul(&f, &state.cell);
        let ig = o.mul(&i, &g);
        let cell = o.add(&fc, &ig);
        let tc = o.tanh(&cell);
        let hidden = o.mul(&og, &tc);
        LstmState { hidden, cell }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.gates.params()
    }
}

/// `out(x) = head(blocks(act(stem(x))))` where the head is zero-initialised,
/// so a fresh network outputs exactly zero.
#[derive(Clone, Debug)]
pub struct ResidualCnn {
    pub stem: Conv2d,
    pub blocks: Vec<ResBlock>,
    pub head: Conv2d,
    pub padding: Padding,
}

impl ResidualCnn {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        width: usize,
        blocks: usize,
        padding: Padding,
        rng: &mut impl Rng,
    ) -> Self {
        let stem_spec = padded_spec(ConvSpec::same(channels, width, 3), padding);
        let head_spec = padded_spec(ConvSpec::same(width, channels, 3), padding);
        Self {
            stem: Conv2d::new(store, &format!("{name}.stem"), stem_spec, Init::FanIn(0), rng),
            blocks: (0..blocks)
                .map(|i| ResBlock::new(store, &format!("{name}.block{i}"), width, padding, rng))
                .collect(),
            head: Conv2d::new(store, &format!("{name}.head"), head_spec, Init::Zeros, rng),
            padding,
        }
    }

    pub fn forward<O: Ops>(&self, o: &mut O, x: &O::T) -> O::T {
        let h = apply(o, &self.stem, x, self.padding);
        let mut h = o.leaky_relu(&h, LEAKY_SLOPE);
        for b in &self.blocks {
            h = b.forward(o, &h);
        }
        apply(o, &self.head, &h, self.padding)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.stem.params();
        for b in &self.blocks {
            p.extend(b.params());
        }
        p.extend(self.head.params());
        p
    }
}
