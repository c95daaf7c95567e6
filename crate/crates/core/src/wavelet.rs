//! Trainable lifting wavelet transform with four dyadic levels.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Eval, Ops, Padding, ParamId, ParamStore, ResidualCnn, Tensor};
use crate::plane::Plane;

pub const LEVELS: usize = 4;
pub const NUM_SUBBANDS: usize = 3 * LEVELS + 1;
/// Plane sides must be multiples of this.
pub const BLOCK: usize = 1 << LEVELS;

/// Sample scale seen by the lifting networks: they work on `[0, 1]`-range
/// data while the transform runs on 8-bit sample values.
const LIFT_NET_SCALE: f64 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    LL,
    HL,
    LH,
    HH,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SubbandId {
    pub orientation: Orientation,
    pub level: usize,
}

impl SubbandId {
    pub const fn new(orientation: Orientation, level: usize) -> Self {
        Self { orientation, level }
    }

    pub fn is_lowpass(&self) -> bool {
        self.orientation == Orientation::LL
    }

    /// `(width, height)` of this subband for a `width x height` plane.
    pub fn size(&self, width: usize, height: usize) -> (usize, usize) {
        (width >> self.level, height >> self.level)
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for SubbandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}{}", self.orientation, self.level)
    }
}

/// LL4, then HL/LH/HH from the coarsest level to the finest.
pub fn coding_order() -> [SubbandId; NUM_SUBBANDS] {
    let mut out = [SubbandId::new(Orientation::LL, LEVELS); NUM_SUBBANDS];
    let mut i = 1;
    for level in (1..=LEVELS).rev() {
        for o in [Orientation::HL, Orientation::LH, Orientation::HH] {
            out[i] = SubbandId::new(o, level);
            i += 1;
        }
    }
    out
}

/// Gain that maps each subband of the unnormalized Haar lifting (mean /
/// difference) onto the orthonormal Haar basis, in coding order.
pub fn orthonormal_haar_gains() -> [f64; NUM_SUBBANDS] {
    let mut g = [0.0; NUM_SUBBANDS];
    for (i, id) in coding_order().iter().enumerate() {
        let l = id.level as i32;
        g[i] = match id.orientation {
            Orientation::LL => 2f64.powi(l),
            Orientation::HL | Orientation::LH => 2f64.powi(l - 1),
            Orientation::HH => 2f64.powi(l - 2),
        };
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaseWavelet {
    Haar,
    Cdf53,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LiftMode {
    /// Unrounded filters; used in training and lossy coding.
    Real,
    /// Predict and update outputs rounded; integer planes round-trip exactly.
    Integer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiftingConfig {
    pub base: BaseWavelet,
    pub width: usize,
    pub blocks: usize,
}

/// Predict and update filters of one decomposition level.
#[derive(Clone, Debug)]
pub struct LiftingFilterPair {
    pub predict: ResidualCnn,
    pub update: ResidualCnn,
}

#[derive(Clone, Debug)]
pub struct WaveletTransform {
    pub base: BaseWavelet,
    pub pairs: Vec<LiftingFilterPair>,
}

/// The 13 subbands of one plane, in coding order.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandPyramid {
    pub width: usize,
    pub height: usize,
    pub bands: Vec<Plane>,
}

impl SubbandPyramid {
    pub fn zeros(width: usize, height: usize) -> Self {
        let bands = coding_order()
            .iter()
            .map(|id| {
                let (w, h) = id.size(width, height);
                Plane::zeros(w, h)
            })
            .collect();
        Self { width, height, bands }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands.len() != NUM_SUBBANDS {
            return Err(Error::Shape(format!("pyramid needs {NUM_SUBBANDS} subbands, got {}", self.bands.len())));
        }
        for (id, b) in coding_order().iter().zip(&self.bands) {
            let (w, h) = id.size(self.width, self.height);
            if (b.width, b.height) != (w, h) || w == 0 || h == 0 {
                return Err(Error::Shape(format!(
                    "subband {id} is {}x{}, expected {w}x{h}",
                    b.width, b.height
                )));
            }
        }
        Ok(())
    }

    pub fn coefficient_count(&self) -> usize {
        self.bands.iter().map(Plane::len).sum()
    }
}

impl WaveletTransform {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &LiftingConfig, rng: &mut impl Rng) -> Self {
        let pairs = (0..LEVELS)
            .map(|l| LiftingFilterPair {
                predict: ResidualCnn::new(store, &format!("{prefix}.level{l}.predict"), 1, cfg.width, cfg.blocks, Padding::Symmetric, rng),
                update: ResidualCnn::new(store, &format!("{prefix}.level{l}.update"), 1, cfg.width, cfg.blocks, Padding::Symmetric, rng),
            })
            .collect();
        Self { base: cfg.base, pairs }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.pairs
            .iter()
            .flat_map(|p| p.predict.params().into_iter().chain(p.update.params()))
            .collect()
    }

    fn residual<O: Ops>(o: &mut O, net: &ResidualCnn, x: &O::T) -> O::T {
        let xs = o.scale(x, 1.0 / LIFT_NET_SCALE);
        let r = net.forward(o, &xs);
        o.scale(&r, LIFT_NET_SCALE)
    }

    fn predict<O: Ops>(&self, o: &mut O, level: usize, even: &O::T) -> O::T {
        let base = match self.base {
            BaseWavelet::Haar => even.clone(),
            BaseWavelet::Cdf53 => {
                let next = o.shift_cols(even, 1);
                let s = o.add(even, &next);
                o.scale(&s, 0.5)
            }
        };
        let r = Self::residual(o, &self.pairs[level].predict, even);
        o.add(&base, &r)
    }

    fn update<O: Ops>(&self, o: &mut O, level: usize, high: &O::T) -> O::T {
        let base = match self.base {
            BaseWavelet::Haar => o.scale(high, 0.5),
            BaseWavelet::Cdf53 => {
                let prev = o.shift_cols(high, -1);
                let s = o.add(&prev, high);
                o.scale(&s, 0.25)
            }
        };
        let r = Self::residual(o, &self.pairs[level].update, high);
        o.add(&base, &r)
    }

    /// One lifting step along the width axis: `(lowpass, highpass)`.
    pub fn lift<O: Ops>(&self, o: &mut O, level: usize, x: &O::T, mode: LiftMode) -> (O::T, O::T) {
        let even = o.split_cols(x, 0);
        let odd = o.split_cols(x, 1);
        let mut p = self.predict(o, level, &even);
        if mode == LiftMode::Integer {
            p = o.round(&p);
        }
        let high = o.sub(&odd, &p);
        let mut u = self.update(o, level, &high);
        if mode == LiftMode::Integer {
            u = o.round(&u);
        }
        let low = o.add(&even, &u);
        (low, high)
    }

    pub fn unlift<O: Ops>(&self, o: &mut O, level: usize, low: &O::T, high: &O::T, mode: LiftMode) -> O::T {
        let mut u = self.update(o, level, high);
        if mode == LiftMode::Integer {
            u = o.round(&u);
        }
        let even = o.sub(low, &u);
        let mut p = self.predict(o, level, &even);
        if mode == LiftMode::Integer {
            p = o.round(&p);
        }
        let odd = o.add(high, &p);
        o.interleave_cols(&even, &odd)
    }

    /// Analysis of an `[n, 1, h, w]` batch into 13 subbands in coding order.
    pub fn forward<O: Ops>(&self, o: &mut O, x: &O::T, mode: LiftMode) -> Result<Vec<O::T>> {
        {
            let v = o.value(x);
            if v.c() != 1 || v.h() % BLOCK != 0 || v.w() % BLOCK != 0 {
                return Err(Error::Dimensions {
                    width: v.w(),
                    height: v.h(),
                    multiple: BLOCK,
                });
            }
        }
        let mut ll = x.clone();
        let mut details = Vec::with_capacity(LEVELS);
        for level in 0..LEVELS {
            let (l, h) = self.lift(o, level, &ll, mode);
            let (new_ll, lh) = self.lift_columns(o, level, &l, mode);
            let (hl, hh) = self.lift_columns(o, level, &h, mode);
            details.push([hl, lh, hh]);
            ll = new_ll;
        }
        let mut out = vec![ll];
        for d in details.into_iter().rev() {
            out.extend(d);
        }
        Ok(out)
    }

    fn lift_columns<O: Ops>(&self, o: &mut O, level: usize, x: &O::T, mode: LiftMode) -> (O::T, O::T) {
        let t = o.transpose(x);
        let (lo, hi) = self.lift(o, level, &t, mode);
        (o.transpose(&lo), o.transpose(&hi))
    }

    fn unlift_columns<O: Ops>(&self, o: &mut O, level: usize, lo: &O::T, hi: &O::T, mode: LiftMode) -> O::T {
        let lt = o.transpose(lo);
        let ht = o.transpose(hi);
        let x = self.unlift(o, level, &lt, &ht, mode);
        o.transpose(&x)
    }

    /// Synthesis from 13 subbands in coding order.
    pub fn inverse<O: Ops>(&self, o: &mut O, bands: &[O::T], mode: LiftMode) -> Result<O::T> {
        if bands.len() != NUM_SUBBANDS {
            return Err(Error::Shape(format!("need {NUM_SUBBANDS} subbands, got {}", bands.len())));
        }
        let mut ll = bands[0].clone();
        for (k, level) in (0..LEVELS).rev().enumerate() {
            let [hl, lh, hh] = [&bands[1 + 3 * k], &bands[2 + 3 * k], &bands[3 + 3 * k]];
            {
                let (a, b) = (o.value(&ll).shape(), o.value(hl).shape());
                if a != b || a != o.value(lh).shape() || a != o.value(hh).shape() {
                    return Err(Error::Shape(format!("level {} subbands disagree in shape", level + 1)));
                }
            }
            let l = self.unlift_columns(o, level, &ll, lh, mode);
            let h = self.unlift_columns(o, level, hl, hh, mode);
            ll = self.unlift(o, level, &l, &h, mode);
        }
        Ok(ll)
    }
}

fn row(signal: &[f64]) -> Tensor {
    Tensor::from_vec([1, 1, 1, signal.len()], signal.to_vec()).expect("row length")
}

/// One-dimensional lifting of an even-length signal with the filters of `level`.
pub fn lift_forward_1d(
    t: &WaveletTransform,
    params: &ParamStore,
    level: usize,
    signal: &[f64],
    mode: LiftMode,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if signal.len() < 2 || signal.len() % 2 != 0 {
        return Err(Error::Shape(format!("lifting needs an even length >= 2, got {}", signal.len())));
    }
    let mut o = Eval::new(params);
    let (l, h) = t.lift(&mut o, level, &row(signal), mode);
    Ok((l.into_vec(), h.into_vec()))
}

pub fn lift_inverse_1d(
    t: &WaveletTransform,
    params: &ParamStore,
    level: usize,
    low: &[f64],
    high: &[f64],
    mode: LiftMode,
) -> Result<Vec<f64>> {
    if low.len() != high.len() || low.is_empty() {
        return Err(Error::Shape(format!(
            "lowpass and highpass lengths differ: {} vs {}",
            low.len(),
            high.len()
        )));
    }
    let mut o = Eval::new(params);
    Ok(t.unlift(&mut o, level, &row(low), &row(high), mode).into_vec())
}

pub fn dwt2d_forward(t: &WaveletTransform, params: &ParamStore, plane: &Plane, mode: LiftMode) -> Result<SubbandPyramid> {
    plane.require_multiple(BLOCK)?;
    let mut o = Eval::new(params);
    let bands = t.forward(&mut o, &plane.to_tensor(), mode)?;
    Ok(SubbandPyramid {
        width: plane.width,
        height: plane.height,
        bands: bands.iter().map(|b| Plane::from_tensor(b).expect("single plane")).collect(),
    })
}

pub fn dwt2d_inverse(t: &WaveletTransform, params: &ParamStore, pyramid: &SubbandPyramid, mode: LiftMode) -> Result<Plane> {
    pyramid.validate()?;
    let mut o = Eval::new(params);
    let bands: Vec<Tensor> = pyramid.bands.iter().map(Plane::to_tensor).collect();
    Plane::from_tensor(&t.inverse(&mut o, &bands, mode)?)
}
