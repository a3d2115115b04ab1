//! Run configuration: built-in defaults, overridden by a TOML file,
//! overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use voltvar::feeder::{build_ieee33, FeederModel, DEFAULT_QG_MAX, DEFAULT_QG_MIN};
use voltvar::neural::PfTrainConfig;
use voltvar::vvc::{CapScope, StabilityConfig, DEFAULT_EPSILON};

use crate::error::{CliError, Stage, StageExt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub feeder: FeederSection,
    pub data: DataSection,
    pub pf: PfSection,
    pub vvo: VvoSection,
    pub vvc: VvcSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("run"),
            feeder: FeederSection::default(),
            data: DataSection::default(),
            pf: PfSection::default(),
            vvo: VvoSection::default(),
            vvc: VvcSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeederSection {
    /// `"ieee33"` or a path to a feeder table.
    pub source: String,
    /// DER buses; empty means every load bus.
    pub der_nodes: Vec<usize>,
    pub qg_min: f64,
    pub qg_max: f64,
}

impl Default for FeederSection {
    fn default() -> Self {
        Self {
            source: "ieee33".into(),
            der_nodes: Vec::new(),
            qg_min: DEFAULT_QG_MIN,
            qg_max: DEFAULT_QG_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub pf_samples: usize,
    pub pf_relative_range: f64,
    pub q_offset_min: f64,
    pub q_offset_max: f64,
    pub scenario_samples: usize,
    pub scenario_relative_range: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            pf_samples: 20_000,
            pf_relative_range: 0.1,
            q_offset_min: -0.8,
            q_offset_max: 0.2,
            scenario_samples: 100,
            scenario_relative_range: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PfSection {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for PfSection {
    fn default() -> Self {
        let d = PfTrainConfig::default();
        Self {
            hidden: d.hidden,
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
        }
    }
}

impl PfSection {
    pub fn train_config(&self, hidden: usize, seed: u64) -> PfTrainConfig {
        PfTrainConfig {
            hidden,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            ..PfTrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    Nn,
    Ls,
    Lindistflow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VvoSection {
    pub surrogates: Vec<SurrogateKind>,
    /// Width of the reduced network solved to certified optimality.
    pub hidden: usize,
    pub gap_tolerance: f64,
    pub node_limit: usize,
    /// Also solve with the full-width network under `full_node_limit`.
    pub full_width: bool,
    pub full_node_limit: usize,
    /// Wall-clock cap for the full-width runs; 0 disables it.
    pub full_time_limit_secs: u64,
}

impl Default for VvoSection {
    fn default() -> Self {
        Self {
            surrogates: vec![SurrogateKind::Nn, SurrogateKind::Ls, SurrogateKind::Lindistflow],
            hidden: 16,
            gap_tolerance: 1e-6,
            node_limit: 100_000,
            full_width: true,
            full_node_limit: 400,
            full_time_limit_secs: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CapScopeName {
    All,
    Neighbors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VvcSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub stability_caps: bool,
    pub epsilon: f64,
    pub cap_scope: CapScopeName,
    pub max_drop_fraction: f64,
}

impl Default for VvcSection {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 16,
            learning_rate: 1e-3,
            stability_caps: true,
            epsilon: DEFAULT_EPSILON,
            cap_scope: CapScopeName::All,
            max_drop_fraction: 0.1,
        }
    }
}

impl VvcSection {
    pub fn stability(&self) -> StabilityConfig {
        StabilityConfig {
            epsilon: self.epsilon,
            scope: match self.cap_scope {
                CapScopeName::All => CapScope::AllDers,
                CapScopeName::Neighbors => CapScope::Neighbors,
            },
        }
    }
}

impl RunConfig {
    /// Defaults overridden by `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_stage(Stage::Config, || format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_stage(Stage::Config, || format!("invalid config {}", path.display()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |msg: String| Err(CliError::new(Stage::Config, anyhow::anyhow!(msg)));
        if self.data.pf_samples < 5 || self.data.scenario_samples < 5 {
            return fail("datasets need at least 5 samples for an 80/20 split".into());
        }
        if self.pf.hidden == 0 || self.vvo.hidden == 0 {
            return fail("hidden widths must be positive".into());
        }
        if self.pf.batch_size == 0 || self.vvc.batch_size == 0 {
            return fail("batch sizes must be positive".into());
        }
        if !(self.pf.learning_rate > 0.0) || !(self.vvc.learning_rate > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if !(self.vvc.epsilon > 0.0 && self.vvc.epsilon < 1.0) {
            return fail(format!("epsilon must lie in (0, 1), got {}", self.vvc.epsilon));
        }
        if self.feeder.qg_min > self.feeder.qg_max {
            return fail("qg_min exceeds qg_max".into());
        }
        if self.data.q_offset_min > self.data.q_offset_max {
            return fail("q_offset_min exceeds q_offset_max".into());
        }
        Ok(())
    }

    /// Canonical serialization; the basis of the config hash.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of everything except the output directory, so that reruns
    /// elsewhere share it.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn feeder_model(&self) -> Result<FeederModel, CliError> {
        let base = if self.feeder.source == "ieee33" {
            build_ieee33()
        } else {
            let path = Path::new(&self.feeder.source);
            FeederModel::load(path).with_stage(Stage::Config, || format!("cannot load feeder {}", path.display()))?
        };
        let nodes = if self.feeder.der_nodes.is_empty() {
            (1..=base.n_buses).collect()
        } else {
            let mut nodes = self.feeder.der_nodes.clone();
            nodes.sort_unstable();
            nodes.dedup();
            if nodes.iter().any(|&b| b == 0 || b > base.n_buses) {
                return Err(CliError::new(
                    Stage::Config,
                    anyhow::anyhow!("DER buses must lie in 1..={}", base.n_buses),
                ));
            }
            nodes
        };
        Ok(base.with_ders(nodes, self.feeder.qg_min, self.feeder.qg_max))
    }

    pub fn pf_seed(&self) -> u64 {
        self.seed
    }

    pub fn scenario_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }
}
