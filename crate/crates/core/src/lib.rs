//! Desk-scale single-stream vision-and-language transformer.
//!
//! The crate covers the full workflow: a WordPiece text pipeline with
//! whole-word masking, an image pipeline with patch projection inputs and a
//! RandAugment subset, a pre-norm transformer encoder with reverse-mode
//! autodiff, ITM/MLM/WPA/MPP pre-training objectives (word-patch alignment
//! uses an IPOT optimal-transport solver), downstream heads, an AdamW
//! trainer with bit-exact checkpointing, parameter/FLOPs accounting, and a
//! deterministic synthetic shapes corpus for end-to-end runs on a CPU.

pub mod complexity;
pub mod corpus;
pub mod downstream;
pub mod error;
pub mod image;
pub mod model;
pub mod objectives;
pub mod ot;
pub mod seeds;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
