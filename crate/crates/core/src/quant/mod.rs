//! Fixed-point, power-of-two (PoT) and sum-of-power-of-two (SPoT) quantizers.
//!
//! Weights are normalized by a positive scaling factor `alpha`, clipped to
//! `[-1, 1]`, and mapped onto a [`LevelSet`] of unit levels. Every level has an
//! m-bit code; shift-path schemes (PoT, SPoT) additionally expose the
//! power-of-two terms each code stands for.

mod alpha;
mod levels;
mod pack;
mod project;
mod scheme;

pub use alpha::{fit_alpha, fit_alpha_groups, max_abs_alpha, AlphaGranularity, AlphaMode, AlphaPolicy};
pub use levels::{LevelSet, ShiftTerms};
pub use pack::{pack_rows, packed_row_bytes, unpack_rows};
pub use project::{clip, project_nearest, project_pot_log, QuantValue};
pub use scheme::QuantScheme;
