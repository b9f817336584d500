//! Polar codes for compressing memoryless sources with side information.
//!
//! The crate covers code construction by degraded (binned) density tracking,
//! `O(N log N)` encoding and successive-cancellation decoding, bit-layered
//! coding of `2^m`-ary sources, Slepian-Wolf coding of several users, secret-key
//! agreement from correlated observations, and the equiprobable Gaussian
//! quantizer used to feed continuous sources into the discrete machinery.

pub mod codec;
pub mod construct;
pub mod dist;
pub mod error;
pub mod gauss;
pub mod keygen;
pub mod layered;
pub mod sim;
pub mod sw;

pub use codec::{
    compress, decompress, llr_from_side_info, polar_transform, sc_decode, CompressedBlock,
    LlrVector, ScDecoder,
};
pub use construct::{
    construct_degraded, degrade, exact_construct, propagate_z_bounds, select_indices, BinParams,
    CodeSpec, IndexMetric, Selection,
};
pub use dist::{JointSource, SideMass, Step, TransformPath};
pub use error::{Error, Result};
