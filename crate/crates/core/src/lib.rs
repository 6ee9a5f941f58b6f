//! Mixed-scheme, multi-precision (MSP) weight quantization.
//!
//! The crate covers the whole path from a float network to an FPGA estimate:
//!
//! * [`quant`]: fixed-point, PoT and SPoT level sets, projection and codecs
//! * [`assign`]: per-row SPoT / Fixed-4 / Fixed-8 assignment inside each layer
//! * [`train`]: ADMM quantization-aware training with STE activations
//! * [`shift`]: bit-exact integer inference with shift-add SPoT rows
//! * [`fpga`]: DSP/LUT core planning, throughput and latency model
//!
//! plus the substrate they share ([`tensor`], [`network`], [`data`], [`model_io`])
//! and the [`cli`] front end behind the `msp` binary.

pub mod assign;
pub mod cli;
pub mod data;
pub mod error;
pub mod fpga;
pub mod model_io;
pub mod network;
pub mod ops;
pub mod quant;
pub mod shift;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
