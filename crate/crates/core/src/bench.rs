//! Encode/decode timing and network-invocation counting across context models.

use std::path::Path;

use serde::Serialize;

use crate::codec::{analytic_invocations, decode_plane, encode_plane, CodecModel, EncodeOptions};
use crate::error::{Error, Result};
use crate::plane::{psnr, Plane};
use crate::wavelet::BLOCK;

/// Scope of the timed region, written at the top of CSV reports.
pub const TIMING_SCOPE: &str =
    "timed region: transform, entropy parameter estimation and range coding; excludes file I/O, model loading and post-processing";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub image: String,
    pub model: String,
    pub context: String,
    pub repetition: usize,
    pub width: usize,
    pub height: usize,
    pub encode_seconds: f64,
    pub decode_seconds: f64,
    pub encoder_invocations: usize,
    pub decoder_invocations: usize,
    pub expected_encoder_invocations: usize,
    pub expected_decoder_invocations: usize,
    pub bpp: f64,
    pub psnr: f64,
    pub bit_exact: bool,
}

impl BenchRow {
    pub fn counts_match(&self) -> bool {
        self.encoder_invocations == self.expected_encoder_invocations
            && self.decoder_invocations == self.expected_decoder_invocations
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl BenchReport {
    pub fn images(&self) -> Vec<String> {
        let mut v: Vec<String> = Vec::new();
        for r in &self.rows {
            if !v.contains(&r.image) {
                v.push(r.image.clone());
            }
        }
        v
    }

    pub fn median_decode(&self, image: &str, model: &str) -> Option<f64> {
        let t: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.image == image && r.model == model)
            .map(|r| r.decode_seconds)
            .collect();
        (!t.is_empty()).then(|| median(t))
    }

    pub fn median_encode(&self, image: &str, model: &str) -> Option<f64> {
        let t: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.image == image && r.model == model)
            .map(|r| r.encode_seconds)
            .collect();
        (!t.is_empty()).then(|| median(t))
    }

    /// Median decode time of `baseline` over `candidate`, per image.
    pub fn decode_speedups(&self, baseline: &str, candidate: &str) -> Vec<(String, f64)> {
        self.images()
            .into_iter()
            .filter_map(|im| {
                let b = self.median_decode(&im, baseline)?;
                let c = self.median_decode(&im, candidate)?;
                Some((im, b / c))
            })
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        std::io::Write::write_all(&mut f, format!("# {TIMING_SCOPE}\n").as_bytes())?;
        let mut w = csv::Writer::from_writer(f);
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Encode and decode every image with every model `repetitions` times.
/// Models run one after another.
pub fn run_bench(images: &[(String, Plane)], models: &[(String, &CodecModel)], repetitions: usize) -> Result<BenchReport> {
    let mut report = BenchReport::default();
    let opts = EncodeOptions::default();
    for (name, model) in models {
        for (image, plane) in images {
            let (pw, ph) = (plane.width.div_ceil(BLOCK) * BLOCK, plane.height.div_ceil(BLOCK) * BLOCK);
            let (ee, ed) = analytic_invocations(model.config.mode(), pw, ph);
            for rep in 0..repetitions {
                let enc = encode_plane(plane, model, &opts)?;
                let dec = decode_plane(&enc.bitstream, model)?;
                let bits = 8 * enc.bitstream.total_bytes();
                report.rows.push(BenchRow {
                    image: image.clone(),
                    model: name.clone(),
                    context: model.config.mode().name().to_string(),
                    repetition: rep,
                    width: plane.width,
                    height: plane.height,
                    encode_seconds: enc.stats.core_seconds,
                    decode_seconds: dec.stats.core_seconds,
                    encoder_invocations: enc.stats.network_invocations,
                    decoder_invocations: dec.stats.network_invocations,
                    expected_encoder_invocations: ee,
                    expected_decoder_invocations: ed,
                    bpp: bits as f64 / (plane.width * plane.height) as f64,
                    psnr: psnr(plane.mse(&dec.reconstruction)),
                    bit_exact: dec.symbols == enc.symbols && dec.reconstruction == enc.reconstruction,
                });
            }
        }
    }
    Ok(report)
}
