//! Carry-propagating 32-bit range coder over 16-bit frequency tables, and the
//! parameter grid that makes encoder and decoder tables identical.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};

pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;
pub const SYMBOL_MIN: i32 = -(1 << 12);
pub const SYMBOL_MAX: i32 = (1 << 12) - 1;

const TOP: u32 = 1 << 24;

/// Probability of integer `v` under a Laplace `(mu, sigma)` discretized to unit
/// bins, with the tails beyond `[v_min, v_max]` folded into the edge bins.
pub fn laplace_pmf(v: i32, mu: f64, sigma: f64, v_min: i32, v_max: i32) -> f64 {
    debug_assert!(v_min <= v && v <= v_max);
    let b = sigma.max(crate::entropy::SIGMA_FLOOR);
    let t = v as f64 - mu;
    let lo = if v == v_min { f64::NEG_INFINITY } else { t - 0.5 };
    let hi = if v == v_max { f64::INFINITY } else { t + 0.5 };
    // mass of (lo, hi), evaluated on the side that keeps precision
    let p = if lo >= 0.0 {
        0.5 * ((-lo / b).exp() - (-hi / b).exp())
    } else if hi <= 0.0 {
        0.5 * ((hi / b).exp() - (lo / b).exp())
    } else {
        1.0 - 0.5 * (lo / b).exp() - 0.5 * (-hi / b).exp()
    };
    p.max(0.0)
}

/// Cumulative frequencies over a contiguous symbol range; totals `2^16`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedCdf {
    min: i32,
    cum: Vec<u32>,
}

impl QuantizedCdf {
    /// Table from explicit frequencies (each at least 1, summing to `2^16`).
    pub fn from_frequencies(min: i32, freqs: &[u32]) -> Result<Self> {
        if freqs.is_empty() || freqs.iter().any(|&f| f == 0) {
            return Err(Error::Config("every symbol needs a nonzero frequency".into()));
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        cum.push(0u32);
        let mut acc = 0u32;
        for &f in freqs {
            acc = acc.checked_add(f).ok_or_else(|| Error::Config("frequency overflow".into()))?;
            cum.push(acc);
        }
        if acc != PROB_TOTAL {
            return Err(Error::Config(format!("frequencies sum to {acc}, need {PROB_TOTAL}")));
        }
        Ok(Self { min, cum })
    }

    /// Equal frequencies over `n` symbols; `n` must divide `2^16`.
    pub fn uniform(min: i32, n: usize) -> Result<Self> {
        if n == 0 || PROB_TOTAL as usize % n != 0 {
            return Err(Error::Config(format!("{n} does not divide {PROB_TOTAL}")));
        }
        Self::from_frequencies(min, &vec![PROB_TOTAL / n as u32; n])
    }

    pub fn min_symbol(&self) -> i32 {
        self.min
    }

    pub fn max_symbol(&self) -> i32 {
        self.min + self.len() as i32 - 1
    }

    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cum
    }

    fn index(&self, symbol: i32) -> usize {
        let i = symbol - self.min;
        assert!(i >= 0 && (i as usize) < self.len(), "symbol {symbol} outside table");
        i as usize
    }

    pub fn frequency(&self, symbol: i32) -> u32 {
        let i = self.index(symbol);
        self.cum[i + 1] - self.cum[i]
    }

    /// `-log2` of the table probability of `symbol`.
    pub fn bits(&self, symbol: i32) -> f64 {
        -(self.frequency(symbol) as f64 / PROB_TOTAL as f64).log2()
    }

    fn lookup(&self, target: u32) -> usize {
        // last index with cum[i] <= target
        self.cum.partition_point(|&c| c <= target) - 1
    }
}

/// Fixed grids for the Laplace parameters.
///
/// Means are rounded to multiples of 1/32; scales snap to 64 log-spaced values
/// between 0.01 and 256, nearest in the log domain. Ties go to the smaller index.
#[derive(Clone, Copy, Debug, Default)]
pub struct ParamGrid;

impl ParamGrid {
    pub const MU_STEPS_PER_UNIT: f64 = 32.0;
    pub const SIGMA_COUNT: usize = 64;
    pub const SIGMA_MIN: f64 = 1e-2;
    pub const SIGMA_MAX: f64 = 256.0;

    fn nearest_tie_low(x: f64) -> f64 {
        let f = x.floor();
        if x - f > 0.5 {
            f + 1.0
        } else {
            f
        }
    }

    pub fn mu_index(mu: f64) -> i32 {
        let limit = (SYMBOL_MAX as f64 + 1.0) * Self::MU_STEPS_PER_UNIT * 2.0;
        let x = (mu * Self::MU_STEPS_PER_UNIT).clamp(-limit, limit);
        if x.is_nan() {
            return 0;
        }
        Self::nearest_tie_low(x) as i32
    }

    pub fn mu_value(index: i32) -> f64 {
        index as f64 / Self::MU_STEPS_PER_UNIT
    }

    fn log_span() -> f64 {
        (Self::SIGMA_MAX / Self::SIGMA_MIN).ln()
    }

    pub fn sigma_index(sigma: f64) -> u8 {
        if sigma.is_nan() || sigma <= Self::SIGMA_MIN {
            return 0;
        }
        let pos = (sigma / Self::SIGMA_MIN).ln() / Self::log_span() * (Self::SIGMA_COUNT - 1) as f64;
        Self::nearest_tie_low(pos).clamp(0.0, (Self::SIGMA_COUNT - 1) as f64) as u8
    }

    pub fn sigma_value(index: u8) -> f64 {
        let i = (index as usize).min(Self::SIGMA_COUNT - 1);
        Self::SIGMA_MIN * (Self::log_span() * i as f64 / (Self::SIGMA_COUNT - 1) as f64).exp()
    }
}

/// Table for grid-snapped `(mu, sigma)` over `[v_min, v_max]`.
pub fn build_cdf(mu: f64, sigma: f64, v_min: i32, v_max: i32) -> QuantizedCdf {
    build_cdf_indexed(ParamGrid::mu_index(mu), ParamGrid::sigma_index(sigma), v_min, v_max)
}

pub fn build_cdf_indexed(mu_index: i32, sigma_index: u8, v_min: i32, v_max: i32) -> QuantizedCdf {
    assert!(v_min < v_max, "alphabet needs at least two symbols");
    let n = (v_max - v_min + 1) as usize;
    assert!(n <= PROB_TOTAL as usize, "alphabet larger than the frequency total");
    let mu = ParamGrid::mu_value(mu_index);
    let sigma = ParamGrid::sigma_value(sigma_index);
    let pmf: Vec<f64> = (v_min..=v_max).map(|v| laplace_pmf(v, mu, sigma, v_min, v_max)).collect();
    let total: f64 = pmf.iter().sum();
    let spare = (PROB_TOTAL as usize - n) as f64;
    let mut freqs = vec![1u32; n];
    let mut rem = Vec::with_capacity(n);
    let mut given = 0u64;
    for (i, p) in pmf.iter().enumerate() {
        let share = p / total * spare;
        let whole = share.floor();
        freqs[i] += whole as u32;
        given += whole as u64;
        rem.push((share - whole, i));
    }
    let left = (spare as u64 - given) as usize;
    rem.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rem.iter().take(left) {
        freqs[i] += 1;
    }
    QuantizedCdf::from_frequencies(v_min, &freqs).expect("apportioned table is valid")
}

/// Tables memoized by grid indices for one alphabet.
#[derive(Debug)]
pub struct CdfCache {
    v_min: i32,
    v_max: i32,
    tables: HashMap<(i32, u8), Arc<QuantizedCdf>>,
}

impl CdfCache {
    pub fn new(v_min: i32, v_max: i32) -> Self {
        Self {
            v_min,
            v_max,
            tables: HashMap::new(),
        }
    }

    pub fn get(&mut self, mu: f64, sigma: f64) -> Arc<QuantizedCdf> {
        let key = (ParamGrid::mu_index(mu), ParamGrid::sigma_index(sigma));
        let (lo, hi) = (self.v_min, self.v_max);
        self.tables
            .entry(key)
            .or_insert_with(|| Arc::new(build_cdf_indexed(key.0, key.1, lo, hi)))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn encode(&mut self, symbol: i32, cdf: &QuantizedCdf) {
        let i = cdf.index(symbol);
        let start = cdf.cum[i];
        let size = cdf.cum[i + 1] - start;
        let r = self.range >> PROB_BITS;
        self.low += r as u64 * start as u64;
        self.range = r * size;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        // the first byte is the initial empty cache and always zero
        debug_assert_eq!(self.out[0], 0);
        self.out.remove(0);
        self.out
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = Self {
            data,
            pos: 0,
            code: 0,
            range: u32::MAX,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self.data.get(self.pos).ok_or(Error::Truncated)?;
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, cdf: &QuantizedCdf) -> Result<i32> {
        let r = self.range >> PROB_BITS;
        let target = self.code / r;
        if target >= PROB_TOTAL {
            return Err(Error::Bitstream("range decoder state out of bounds".into()));
        }
        let i = cdf.lookup(target);
        let start = cdf.cum[i];
        let size = cdf.cum[i + 1] - start;
        self.code -= r * start;
        self.range = r * size;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(cdf.min + i as i32)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }
}

pub fn encode_symbols(symbols: &[i32], mut cdf: impl FnMut(usize) -> Arc<QuantizedCdf>) -> Vec<u8> {
    let mut enc = RangeEncoder::new();
    for (i, &s) in symbols.iter().enumerate() {
        enc.encode(s, &cdf(i));
    }
    enc.finish()
}

pub fn decode_symbols(payload: &[u8], count: usize, mut cdf: impl FnMut(usize) -> Arc<QuantizedCdf>) -> Result<Vec<i32>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut dec = RangeDecoder::new(payload)?;
    (0..count).map(|i| dec.decode(&cdf(i))).collect()
}

/// `sum -log2 P(symbol)` under the folded Laplace over the full symbol range.
pub fn ideal_rate_bits(symbols: &[i32], mu: &[f64], sigma: &[f64]) -> f64 {
    assert!(symbols.len() == mu.len() && mu.len() == sigma.len(), "rate inputs differ in length");
    symbols
        .iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&s, &m), &b)| -laplace_pmf(s, m, b, SYMBOL_MIN, SYMBOL_MAX).max(f64::MIN_POSITIVE).log2())
        .sum()
}

/// `sum -log2` of the table probabilities actually used by the coder.
pub fn table_rate_bits(symbols: &[i32], tables: &[Arc<QuantizedCdf>]) -> f64 {
    symbols.iter().zip(tables).map(|(&s, t)| t.bits(s)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_ties_go_low() {
        assert_eq!(ParamGrid::mu_index(1.0 / 64.0), 0);
        assert_eq!(ParamGrid::mu_index(-1.0 / 64.0), -1);
        assert_eq!(ParamGrid::mu_index(0.02), 1);
        assert_eq!(ParamGrid::sigma_index(1e-9), 0);
        assert_eq!(ParamGrid::sigma_index(1e9), 63);
        for i in 0..64u8 {
            assert_eq!(ParamGrid::sigma_index(ParamGrid::sigma_value(i)), i);
        }
        assert!((ParamGrid::sigma_value(63) - 256.0).abs() < 1e-9);
    }

    #[test]
    fn empty_stream_is_flush_only() {
        let out = encode_symbols(&[], |_| unreachable!());
        assert_eq!(out.len(), 4);
        assert!(decode_symbols(&out, 0, |_| unreachable!()).unwrap().is_empty());
    }

    #[test]
    fn truncation_is_detected() {
        let t = Arc::new(QuantizedCdf::uniform(0, 256).unwrap());
        let syms: Vec<i32> = (0..100).map(|i| (i * 37) % 256).collect();
        let out = encode_symbols(&syms, |_| t.clone());
        assert_eq!(decode_symbols(&out, 100, |_| t.clone()).unwrap(), syms);
        let cut = &out[..out.len() - 2];
        assert!(matches!(decode_symbols(cut, 100, |_| t.clone()), Err(Error::Truncated)));
    }
}
