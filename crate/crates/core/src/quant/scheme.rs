use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A weight quantization scheme at a given bit width.
///
/// SPoT splits the non-sign bits into two power-of-two sub-tables of widths
/// `m1 >= m2 >= 1` with `1 + m1 + m2 == bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum QuantScheme {
    Fixed { bits: u32 },
    Pot { bits: u32 },
    Spot { bits: u32, m1: u32, m2: u32 },
}

pub const MAX_FIXED_BITS: u32 = 16;
pub const MAX_POT_BITS: u32 = 11;
pub const MAX_SPOT_M1: u32 = 7;

impl QuantScheme {
    pub fn fixed(bits: u32) -> Result<Self> {
        Self::Fixed { bits }.validated()
    }

    pub fn pot(bits: u32) -> Result<Self> {
        Self::Pot { bits }.validated()
    }

    pub fn spot(bits: u32, m1: u32, m2: u32) -> Result<Self> {
        Self::Spot { bits, m1, m2 }.validated()
    }

    /// SPoT with the default split: `m2 = (bits - 1) / 2`, `m1 = bits - 1 - m2`.
    pub fn spot_default(bits: u32) -> Result<Self> {
        if bits < 3 {
            return Err(Error::InvalidScheme(format!("SPoT needs at least 3 bits, got {bits}")));
        }
        let m2 = (bits - 1) / 2;
        Self::spot(bits, bits - 1 - m2, m2)
    }

    pub fn bits(&self) -> u32 {
        match *self {
            Self::Fixed { bits } | Self::Pot { bits } | Self::Spot { bits, .. } => bits,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Fixed { .. } => "fixed",
            Self::Pot { .. } => "pot",
            Self::Spot { .. } => "spot",
        }
    }

    /// Whether weights of this scheme multiply by shifting.
    pub fn is_shift(&self) -> bool {
        !matches!(self, Self::Fixed { .. })
    }

    pub fn validated(self) -> Result<Self> {
        let bits = self.bits();
        if bits < 2 {
            return Err(Error::InvalidScheme(format!("bit width must be >= 2, got {bits}")));
        }
        match self {
            Self::Fixed { bits } if bits > MAX_FIXED_BITS => Err(Error::InvalidScheme(format!(
                "fixed-point supports at most {MAX_FIXED_BITS} bits"
            ))),
            Self::Pot { bits } if bits > MAX_POT_BITS => Err(Error::InvalidScheme(format!(
                "PoT supports at most {MAX_POT_BITS} bits"
            ))),
            Self::Spot { bits, m1, m2 } => {
                if 1 + m1 + m2 != bits {
                    Err(Error::InvalidScheme(format!(
                        "SPoT needs 1 + m1 + m2 == bits, got 1 + {m1} + {m2} != {bits}"
                    )))
                } else if m2 < 1 || m1 < m2 {
                    Err(Error::InvalidScheme(format!("SPoT needs m1 >= m2 >= 1, got m1={m1} m2={m2}")))
                } else if m1 > MAX_SPOT_M1 {
                    Err(Error::InvalidScheme(format!("SPoT supports m1 <= {MAX_SPOT_M1}")))
                } else {
                    Ok(self)
                }
            }
            _ => Ok(self),
        }
    }

    /// All valid `(m1, m2)` splits for a SPoT width.
    pub fn spot_splits(bits: u32) -> Vec<(u32, u32)> {
        (1..bits)
            .filter_map(|m2| {
                let m1 = bits.checked_sub(1 + m2)?;
                Self::spot(bits, m1, m2).ok().map(|_| (m1, m2))
            })
            .collect()
    }
}

impl fmt::Display for QuantScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed { bits } => write!(f, "fixed{bits}"),
            Self::Pot { bits } => write!(f, "pot{bits}"),
            Self::Spot { bits, m1, m2 } => write!(f, "spot{bits}:{m1}:{m2}"),
        }
    }
}

impl FromStr for QuantScheme {
    type Err = Error;

    /// `fixed4`, `pot4`, `spot4` (default split) or `spot6:3:2`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidScheme(format!("cannot parse scheme {s:?}"));
        let num = |t: &str| t.parse::<u32>().map_err(|_| bad());
        if let Some(rest) = s.strip_prefix("fixed") {
            Self::fixed(num(rest)?)
        } else if let Some(rest) = s.strip_prefix("pot") {
            Self::pot(num(rest)?)
        } else if let Some(rest) = s.strip_prefix("spot") {
            let parts: Vec<&str> = rest.split(':').collect();
            match parts.as_slice() {
                [b] => Self::spot_default(num(b)?),
                [b, m1, m2] => Self::spot(num(b)?, num(m1)?, num(m2)?),
                _ => Err(bad()),
            }
        } else {
            Err(bad())
        }
    }
}
