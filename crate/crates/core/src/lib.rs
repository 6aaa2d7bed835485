//! Packed-tensor CNN inference over an emulated SIMD slot-vector ciphertext.
//!
//! Images are packed row-major into fixed-size slot vectors ("shards") and
//! processed with the only primitives a CKKS-style ciphertext offers:
//! slotwise add/multiply and cyclic rotation. Every operator keeps a cost
//! ledger (rotations, multiplies, bootstraps, depth) and is checked against
//! the plaintext references in [`oracle`].
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! and `*32` aliases below fix the slot type.

pub mod act;
pub mod conv;
pub mod dense;
pub mod emu;
mod error;
pub mod fixture;
pub mod net;
pub mod oracle;
pub mod pack;
pub mod pool;
pub mod reg;
pub mod rot;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use act::ChebPoly;
pub use conv::FilterTensor;
pub use emu::{CostLedger, Evaluator, LedgerSnapshot, NoiseModel, SlotVector};
pub use pack::{ImageTensor, PackedImage, ShardMode};

pub type SlotVector64 = SlotVector<f64>;
pub type SlotVector32 = SlotVector<f32>;
pub type PackedImage64 = PackedImage<f64>;
pub type PackedImage32 = PackedImage<f32>;
pub type ImageTensor64 = ImageTensor<f64>;
pub type ImageTensor32 = ImageTensor<f32>;
pub type FilterTensor64 = FilterTensor<f64>;
pub type FilterTensor32 = FilterTensor<f32>;
pub type ChebPoly64 = ChebPoly<f64>;
pub type ChebPoly32 = ChebPoly<f32>;
