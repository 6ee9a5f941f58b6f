use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assign::SchemeRatio;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub name: String,
    pub dsp_total: u32,
    pub lut_total: u32,
    pub bram36_total: f64,
    pub ff_total: u32,
    pub frequency_mhz: f64,
    /// The SPoT/Fixed-4/Fixed-8 ratio this device's MSP design uses.
    pub msp_ratio: SchemeRatio,
}

impl DeviceProfile {
    /// Zynq XC7Z020. The BRAM36 total is the capacity implied by the reference
    /// utilization percentages (39 blocks = 56%).
    pub fn xc7z020() -> Self {
        Self {
            name: "xc7z020".into(),
            dsp_total: 220,
            lut_total: 53_200,
            bram36_total: 70.0,
            ff_total: 106_400,
            frequency_mhz: 100.0,
            msp_ratio: SchemeRatio::new(0.60, 0.35, 0.05).expect("valid ratio"),
        }
    }

    /// Zynq XC7Z045.
    pub fn xc7z045() -> Self {
        Self {
            name: "xc7z045".into(),
            dsp_total: 900,
            lut_total: 218_600,
            bram36_total: 545.0,
            ff_total: 437_200,
            frequency_mhz: 100.0,
            msp_ratio: SchemeRatio::MSP,
        }
    }

    pub fn presets() -> Vec<Self> {
        vec![Self::xc7z020(), Self::xc7z045()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.lut_total == 0 || self.ff_total == 0 || !(self.bram36_total > 0.0) {
            return Err(Error::Config(format!("device {} needs positive resource totals", self.name)));
        }
        if !(self.frequency_mhz > 0.0 && self.frequency_mhz.is_finite()) {
            return Err(Error::Config(format!("device {} needs a positive frequency", self.name)));
        }
        self.msp_ratio.validate()
    }

    pub fn frequency_hz(&self) -> f64 {
        self.frequency_mhz * 1e6
    }
}

impl FromStr for DeviceProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xc7z020" | "z020" => Ok(Self::xc7z020()),
            "xc7z045" | "z045" => Ok(Self::xc7z045()),
            other => Err(Error::Config(format!("unknown device {other:?} (xc7z020, xc7z045)"))),
        }
    }
}
