//! Quantization, discretized Gaussian models, range coding and the layered
//! stream container.

pub mod bitstream;
pub mod geometry;
pub mod prob;
pub mod quantize;
pub mod range_coder;

pub use bitstream::{LayeredBitstream, LevelChunk, StreamHeader, HEADER_BYTES};
pub use geometry::{decode_geometry, encode_geometry};
pub use prob::{
    bits_with_grad, build_cdf_table, estimate_bits, gaussian_bin_prob, Cdf, PROB_FLOOR, SIGMA_MAX, SIGMA_MIN,
    SYMBOL_MAX, SYMBOL_MIN,
};
pub use quantize::{quantize, quantize_all};
pub use range_coder::{decode_gaussian, encode_gaussian, range_decode, range_encode, table_bits, RangeDecoder, RangeEncoder};
