pub mod bench;
pub mod codec;
pub mod entropy;
pub mod error;
pub mod io;
pub mod mctf;
pub mod nn;
pub mod plane;
pub mod rangecoder;
pub mod synthetic;
pub mod train;
pub mod wavelet;

pub use codec::{
    decode_plane, encode_plane, Bitstream, CodecModel, CodingStats, Decoded, EncodeOptions, Encoded, ModelConfig, Preset,
};
pub use entropy::{ContextMode, EntropyConfig, EntropyModel, EntropyParams};
pub use error::{Error, Result};
pub use plane::{psnr, Plane};
pub use rangecoder::{CdfCache, ParamGrid, QuantizedCdf, RangeDecoder, RangeEncoder};
pub use wavelet::{
    coding_order, dwt2d_forward, dwt2d_inverse, lift_forward_1d, lift_inverse_1d, BaseWavelet, LiftMode, LiftingConfig,
    Orientation, SubbandId, SubbandPyramid, WaveletTransform,
};
