//! Per-layer MAC profiles: the two reference ImageNet networks and any [`NetworkIR`].

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{count_ops, NetworkIR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOps {
    pub name: String,
    pub macs: u64,
}

/// MACs of the compute layers in execution order. The first and last entries
/// are the network's first and last layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpProfile {
    pub name: String,
    pub layers: Vec<LayerOps>,
}

fn conv(name: impl Into<String>, out_hw: u64, out_ch: u64, in_ch: u64, k: u64) -> LayerOps {
    LayerOps {
        name: name.into(),
        macs: out_hw * out_hw * out_ch * in_ch * k * k,
    }
}

impl OpProfile {
    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }

    /// ResNet-18 at 224x224 (conv, downsample and FC layers).
    pub fn resnet18() -> Self {
        let mut layers = vec![conv("conv1", 112, 64, 3, 7)];
        for b in 0..4 {
            layers.push(conv(format!("layer1.{}.conv{}", b / 2, b % 2 + 1), 56, 64, 64, 3));
        }
        for (stage, hw, ch) in [(2u32, 28u64, 128u64), (3, 14, 256), (4, 7, 512)] {
            layers.push(conv(format!("layer{stage}.0.conv1"), hw, ch, ch / 2, 3));
            layers.push(conv(format!("layer{stage}.0.conv2"), hw, ch, ch, 3));
            layers.push(conv(format!("layer{stage}.0.downsample"), hw, ch, ch / 2, 1));
            layers.push(conv(format!("layer{stage}.1.conv1"), hw, ch, ch, 3));
            layers.push(conv(format!("layer{stage}.1.conv2"), hw, ch, ch, 3));
        }
        layers.push(LayerOps {
            name: "fc".into(),
            macs: 512 * 1000,
        });
        Self {
            name: "resnet18".into(),
            layers,
        }
    }

    /// MobileNet-v2 (width 1.0) at 224x224.
    pub fn mobilenet_v2() -> Self {
        let mut layers = vec![conv("conv_stem", 112, 32, 3, 3)];
        let blocks: [(u64, u64, u64, u64); 7] = [
            (1, 16, 1, 1),
            (6, 24, 2, 2),
            (6, 32, 3, 2),
            (6, 64, 4, 2),
            (6, 96, 3, 1),
            (6, 160, 3, 2),
            (6, 320, 1, 1),
        ];
        let (mut hw, mut cin) = (112u64, 32u64);
        let mut idx = 0;
        for (t, c, n, s) in blocks {
            for i in 0..n {
                let stride = if i == 0 { s } else { 1 };
                let hidden = cin * t;
                if t != 1 {
                    layers.push(conv(format!("block{idx}.expand"), hw, hidden, cin, 1));
                }
                let out_hw = hw / stride;
                layers.push(LayerOps {
                    name: format!("block{idx}.depthwise"),
                    macs: out_hw * out_hw * hidden * 9,
                });
                layers.push(conv(format!("block{idx}.project"), out_hw, c, hidden, 1));
                hw = out_hw;
                cin = c;
                idx += 1;
            }
        }
        layers.push(conv("conv_head", hw, 1280, cin, 1));
        layers.push(LayerOps {
            name: "classifier".into(),
            macs: 1280 * 1000,
        });
        Self {
            name: "mobilenet_v2".into(),
            layers,
        }
    }

    /// Dense and conv layers of a network, named `{kind}{index}`.
    pub fn from_network(name: &str, net: &NetworkIR) -> Result<Self> {
        let ops = count_ops(net, net.input_dims())?;
        let layers: Vec<LayerOps> = net
            .layers()
            .iter()
            .zip(&ops.per_layer)
            .enumerate()
            .filter(|(_, (l, _))| l.is_quantizable())
            .map(|(i, (l, &macs))| LayerOps {
                name: format!("{}{i}", l.kind()),
                macs,
            })
            .collect();
        if layers.is_empty() {
            return Err(Error::NotQuantizable("network has no dense or conv layers".into()));
        }
        Ok(Self {
            name: name.into(),
            layers,
        })
    }
}

impl FromStr for OpProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resnet18" | "resnet-18" => Ok(Self::resnet18()),
            "mobilenet_v2" | "mobilenet-v2" => Ok(Self::mobilenet_v2()),
            other => Err(Error::Config(format!("unknown op profile {other:?} (resnet18, mobilenet_v2)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resnet18_mac_count() {
        let p = OpProfile::resnet18();
        assert_eq!(p.layers.len(), 21);
        assert_eq!(p.layers[0].macs, 118_013_952);
        assert_eq!(p.layers.last().unwrap().macs, 512_000);
        let total = p.total_macs();
        assert!((1_810_000_000..1_820_000_000).contains(&total), "{total}");
    }

    #[test]
    fn mobilenet_v2_mac_count() {
        let total = OpProfile::mobilenet_v2().total_macs();
        assert!((295_000_000..310_000_000).contains(&total), "{total}");
    }
}
