//! Shared fixtures for the criterion benchmarks.

use pwave::codec::{encode_plane, Bitstream, CodecModel, EncodeOptions, ModelConfig, Preset};
use pwave::synthetic::synthetic_image;
use pwave::{ContextMode, Plane};

/// A plane coded once with one context model, ready for repeated decoding.
pub struct DecodeFixture {
    pub model: CodecModel,
    pub plane: Plane,
    pub bitstream: Bitstream,
}

impl DecodeFixture {
    pub fn new(preset: Preset, mode: ContextMode, width: usize, height: usize) -> Self {
        let model = CodecModel::new(ModelConfig::preset(preset, mode), 0);
        let plane = synthetic_image(width, height, 7);
        let bitstream = encode_plane(&plane, &model, &EncodeOptions::default())
            .expect("fixture encodes")
            .bitstream;
        Self { model, plane, bitstream }
    }
}
