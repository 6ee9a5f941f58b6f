//! Run configuration, dataset and architecture specs shared by the commands.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assign::{SchemeConfig, SchemeRatio};
use crate::data::{gen_synthetic, load_idx_dataset, Dataset, Split, SyntheticKind};
use crate::error::{Error, Result};
use crate::fpga::DeviceProfile;
use crate::network::{mlp, NetworkBuilder, NetworkIR};
use crate::quant::{AlphaMode, AlphaPolicy, QuantScheme};
use crate::train::{LrSchedule, TrainConfig};

/// Named quantization setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SchemePreset {
    /// SPoT + Fixed-4 + Fixed-8 rows (default 65:30:5).
    Msp,
    /// SPoT + Fixed-4 rows (default 50:50:0).
    Ms,
    /// Fixed-4 + Fixed-8 rows (default 0:95:5).
    Mp,
    /// Fixed-point rows only.
    Fixed,
    /// SPoT rows only.
    Spot,
    /// PoT rows only.
    Pot,
}

impl SchemePreset {
    pub fn default_ratio(self) -> SchemeRatio {
        let (s, f, e) = match self {
            Self::Msp => (65, 30, 5),
            Self::Ms => (50, 50, 0),
            Self::Mp => (0, 95, 5),
            Self::Fixed => (0, 100, 0),
            Self::Spot | Self::Pot => (100, 0, 0),
        };
        SchemeRatio::from_percent(s, f, e).expect("preset ratio")
    }

    /// Checks that `ratio` only uses the row groups this preset allows.
    pub fn check_ratio(self, ratio: &SchemeRatio) -> Result<()> {
        let ok = match self {
            Self::Msp => true,
            Self::Ms => ratio.eight == 0.0,
            Self::Mp => ratio.spot == 0.0,
            Self::Fixed => ratio.fixed == 1.0,
            Self::Spot | Self::Pot => ratio.spot == 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidRatio(format!("ratio {ratio} does not fit scheme {self:?}")))
        }
    }

    pub fn scheme_config(self, bits: u32, split: Option<(u32, u32)>, alpha: AlphaMode) -> Result<SchemeConfig> {
        let lut = match (self, split) {
            (Self::Pot, _) => QuantScheme::pot(bits)?,
            (_, Some((m1, m2))) => QuantScheme::spot(bits, m1, m2)?,
            (_, None) => QuantScheme::spot_default(bits)?,
        };
        let cfg = SchemeConfig {
            lut,
            low_bits: bits,
            high_bits: 8,
            alpha: AlphaPolicy {
                mode: alpha,
                ..AlphaPolicy::MAX_ABS
            },
        };
        cfg.levels()?;
        Ok(cfg)
    }
}

/// `m1`/`m2` given together or not at all.
pub fn spot_split(m1: Option<u32>, m2: Option<u32>) -> Result<Option<(u32, u32)>> {
    match (m1, m2) {
        (Some(a), Some(b)) => Ok(Some((a, b))),
        (None, None) => Ok(None),
        _ => Err(Error::Config("m1 and m2 must be given together".into())),
    }
}

/// `moons:N[:SEED]`, `gaussians:N[:SEED]` or `idx:DIR`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSpec {
    Synthetic {
        kind: SyntheticKind,
        count: usize,
        seed: Option<u64>,
    },
    Idx(PathBuf),
}

impl FromStr for DatasetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad dataset spec {s:?}; expected moons:N[:SEED], gaussians:N[:SEED] or idx:DIR"));
        let (head, rest) = s.split_once(':').ok_or_else(bad)?;
        if head == "idx" {
            return Ok(Self::Idx(PathBuf::from(rest)));
        }
        let kind: SyntheticKind = head.parse().map_err(|_| bad())?;
        let mut parts = rest.split(':');
        let count = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let seed = match parts.next() {
            Some(v) => Some(v.parse().map_err(|_| bad())?),
            None => None,
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(Self::Synthetic { kind, count, seed })
    }
}

impl DatasetSpec {
    pub fn resolve_relative_to(self, base: &Path) -> Self {
        match self {
            Self::Idx(p) if p.is_relative() => Self::Idx(base.join(p)),
            other => other,
        }
    }

    /// Fails with a configuration error when an IDX directory is missing.
    pub fn check(&self) -> Result<()> {
        if let Self::Idx(dir) = self {
            if !dir.is_dir() {
                return Err(Error::Config(format!("dataset directory {} does not exist", dir.display())));
            }
        }
        Ok(())
    }

    /// The whole synthetic set, or the IDX `t10k` files.
    pub fn load_eval(&self, seed: u64) -> Result<Dataset> {
        self.check()?;
        match self {
            Self::Synthetic { kind, count, seed: s } => gen_synthetic(*kind, *count, s.unwrap_or(seed)),
            Self::Idx(dir) => load_idx_dataset(dir, Split::Test),
        }
    }

    /// Train/test pair: synthetic sets keep the last `test_fraction` as test;
    /// IDX directories use their `train` and `t10k` files.
    pub fn load_split(&self, seed: u64, test_fraction: f64) -> Result<(Dataset, Dataset)> {
        self.check()?;
        match self {
            Self::Synthetic { kind, count, seed: s } => {
                let all = gen_synthetic(*kind, *count, s.unwrap_or(seed))?;
                let n_test = ((*count as f64) * test_fraction).round() as usize;
                if n_test == 0 || n_test >= *count {
                    return Err(Error::Config(format!("test_fraction {test_fraction} leaves an empty split")));
                }
                let cut = count - n_test;
                let train: Vec<usize> = (0..cut).collect();
                let test: Vec<usize> = (cut..*count).collect();
                Ok((all.subset(&train)?, all.subset(&test)?))
            }
            Self::Idx(dir) => Ok((load_idx_dataset(dir, Split::Train)?, load_idx_dataset(dir, Split::Test)?)),
        }
    }
}

/// `mlp:W1,W2,...` (hidden and output widths; input from the data) or
/// `cnn:C1,C2` (two 3x3 conv + pool stages, then a dense classifier).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArchSpec {
    Mlp(Vec<usize>),
    Cnn(usize, usize),
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad architecture {s:?}; expected mlp:W,... or cnn:C1,C2"));
        let (head, rest) = s.split_once(':').ok_or_else(bad)?;
        let widths: Vec<usize> = rest
            .split(',')
            .map(|w| w.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if widths.contains(&0) {
            return Err(bad());
        }
        match (head, widths.as_slice()) {
            ("mlp", [_, ..]) => Ok(Self::Mlp(widths)),
            ("cnn", [a, b]) => Ok(Self::Cnn(*a, *b)),
            _ => Err(bad()),
        }
    }
}

impl ArchSpec {
    /// For `mlp` the last width must equal `classes`.
    pub fn build(&self, input_dims: &[usize], classes: usize, seed: u64) -> Result<NetworkIR> {
        match self {
            Self::Mlp(widths) => {
                let out = widths.last().copied().unwrap_or(0);
                if out != classes {
                    return Err(Error::Config(format!("mlp output width {out} does not match {classes} classes")));
                }
                if let [features] = input_dims {
                    let mut all = vec![*features];
                    all.extend_from_slice(widths);
                    return mlp(&all, seed);
                }
                let mut b = NetworkBuilder::new(input_dims, seed).flatten();
                for (i, &w) in widths.iter().enumerate() {
                    b = b.dense(w);
                    if i + 1 < widths.len() {
                        b = b.relu();
                    }
                }
                b.build()
            }
            Self::Cnn(c1, c2) => NetworkBuilder::new(input_dims, seed)
                .conv(*c1, 3, 1, 1)
                .relu()
                .maxpool()
                .conv(*c2, 3, 1, 1)
                .relu()
                .maxpool()
                .flatten()
                .dense(classes)
                .build(),
        }
    }
}

fn default_arch() -> String {
    "mlp:16,16,2".into()
}
fn default_float_epochs() -> usize {
    150
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_dataset() -> String {
    "moons:1000".into()
}
fn default_out() -> PathBuf {
    PathBuf::from("runs/run")
}
fn default_scheme() -> SchemePreset {
    SchemePreset::Msp
}
fn default_bits() -> u32 {
    4
}
fn default_device() -> String {
    "xc7z045".into()
}
fn default_seed() -> u64 {
    7
}

/// Training hyperparameters. Missing keys take the library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub arch: String,
    pub float_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub l2: f64,
    pub rho: f64,
    pub rho_growth: f64,
    pub rho_max: f64,
    pub update_period: usize,
    /// `null` keeps activations in float.
    pub activation_bits: Option<u32>,
    pub alpha: AlphaMode,
    pub reassign: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            arch: default_arch(),
            float_epochs: default_float_epochs(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            schedule: t.schedule,
            momentum: t.momentum,
            l2: t.l2,
            rho: t.rho,
            rho_growth: t.rho_growth,
            rho_max: t.rho_max,
            update_period: t.update_period,
            activation_bits: t.activation_bits,
            alpha: t.scheme.alpha.mode,
            reassign: t.reassign,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    #[serde(default = "default_dataset")]
    pub dataset: String,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            dataset: default_dataset(),
            test_fraction: default_test_fraction(),
            out: default_out(),
        }
    }
}

/// A device preset name or an inline device description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeviceChoice {
    Preset(String),
    Custom(DeviceProfile),
}

impl Default for DeviceChoice {
    fn default() -> Self {
        Self::Preset(default_device())
    }
}

impl DeviceChoice {
    pub fn profile(&self) -> Result<DeviceProfile> {
        let d = match self {
            Self::Preset(name) => name.parse()?,
            Self::Custom(d) => d.clone(),
        };
        d.validate()?;
        Ok(d)
    }
}

/// Document read by `msp train`. Schema: `schema/run_config.schema.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_scheme")]
    pub scheme: SchemePreset,
    /// `spot:fixed:eight` percentages; the scheme's default when absent.
    #[serde(default)]
    pub ratio: Option<String>,
    #[serde(default = "default_bits")]
    pub bits: u32,
    #[serde(default)]
    pub m1: Option<u32>,
    #[serde(default)]
    pub m2: Option<u32>,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub device: DeviceChoice,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scheme: default_scheme(),
            ratio: None,
            bits: default_bits(),
            m1: None,
            m2: None,
            training: TrainingSection::default(),
            device: DeviceChoice::default(),
            seed: default_seed(),
            paths: PathsSection::default(),
        }
    }
}

/// Everything a training run needs, validated.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub ratio: SchemeRatio,
    pub scheme: SchemeConfig,
    pub arch: ArchSpec,
    pub dataset: DatasetSpec,
    pub device: DeviceProfile,
    pub float_cfg: TrainConfig,
    pub admm_cfg: TrainConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    /// Validates every section; relative dataset paths resolve against `base`.
    pub fn resolve(&self, base: &Path) -> Result<ResolvedRun> {
        let ratio = match &self.ratio {
            Some(r) => r.parse()?,
            None => self.scheme.default_ratio(),
        };
        self.scheme.check_ratio(&ratio)?;
        let scheme = self
            .scheme
            .scheme_config(self.bits, spot_split(self.m1, self.m2)?, self.training.alpha)?;
        let t = &self.training;
        let f = self.paths.test_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("test_fraction {f} must be in (0, 1)")));
        }
        let admm_cfg = TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            schedule: t.schedule,
            momentum: t.momentum,
            l2: t.l2,
            rho: t.rho,
            rho_growth: t.rho_growth,
            rho_max: t.rho_max,
            update_period: t.update_period,
            seed: self.seed,
            activation_bits: t.activation_bits,
            ratio,
            scheme,
            reassign: t.reassign,
        };
        admm_cfg.validate()?;
        let float_cfg = TrainConfig {
            epochs: t.float_epochs,
            activation_bits: None,
            ..admm_cfg.clone()
        };
        float_cfg.validate()?;
        let dataset = self.paths.dataset.parse::<DatasetSpec>()?.resolve_relative_to(base);
        dataset.check()?;
        Ok(ResolvedRun {
            ratio,
            scheme,
            arch: t.arch.parse()?,
            dataset,
            device: self.device.profile()?,
            float_cfg,
            admm_cfg,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_specs() {
        assert_eq!(
            "moons:500:3".parse::<DatasetSpec>().unwrap(),
            DatasetSpec::Synthetic {
                kind: SyntheticKind::Moons,
                count: 500,
                seed: Some(3)
            }
        );
        assert_eq!("idx:./data".parse::<DatasetSpec>().unwrap(), DatasetSpec::Idx("./data".into()));
        assert!("moons".parse::<DatasetSpec>().is_err());
        assert!("cifar:10".parse::<DatasetSpec>().is_err());
    }

    #[test]
    fn arch_specs() {
        let net = "mlp:16,16,2".parse::<ArchSpec>().unwrap().build(&[2], 2, 1).unwrap();
        assert_eq!(net.quantizable_indices().len(), 3);
        let cnn = "cnn:4,8".parse::<ArchSpec>().unwrap().build(&[1, 28, 28], 10, 1).unwrap();
        assert_eq!(cnn.output_dims(), vec![10]);
        assert!("mlp:16,3".parse::<ArchSpec>().unwrap().build(&[2], 2, 1).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"scheme": "msp", "colour": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"training": {"epochz": 3}}"#).is_err());
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn missing_idx_dir_is_a_config_error() {
        let cfg = RunConfig {
            paths: PathsSection {
                dataset: "idx:/definitely/not/here".into(),
                ..PathsSection::default()
            },
            ..RunConfig::default()
        };
        assert!(matches!(cfg.resolve(Path::new(".")), Err(Error::Config(_))));
    }

    #[test]
    fn preset_ratio_checks() {
        let r: SchemeRatio = "65:30:5".parse().unwrap();
        assert!(SchemePreset::Ms.check_ratio(&r).is_err());
        assert!(SchemePreset::Msp.check_ratio(&r).is_ok());
        assert!(SchemePreset::Fixed.check_ratio(&SchemePreset::Fixed.default_ratio()).is_ok());
    }

    #[test]
    fn schema_lists_exactly_the_config_keys() {
        let schema: serde_json::Value =
            serde_json::from_str(include_str!("../../schema/run_config.schema.json")).unwrap();
        let keys = |v: &serde_json::Value| {
            let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
            k.sort();
            k
        };
        let config = serde_json::to_value(RunConfig::default()).unwrap();
        let props = &schema["properties"];
        assert_eq!(keys(props), keys(&config));
        assert_eq!(keys(&props["training"]["properties"]), keys(&config["training"]));
        assert_eq!(keys(&props["paths"]["properties"]), keys(&config["paths"]));
        assert_eq!(schema["additionalProperties"], false);
    }
}
