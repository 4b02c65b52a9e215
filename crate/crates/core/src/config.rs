//! TOML run configuration. Every section is optional; command-line flags
//! override whatever the file sets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ablation::AblationSpec;
use crate::dataset::SynthConfig;
use crate::error::{Error, Result};
use crate::holonomy::HolonomyConfig;
use crate::pca::ClusterConfig;
use crate::pipeline::{CouplingAverage, CouplingTarget, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingSection {
    pub target: CouplingTarget,
    pub average: CouplingAverage,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub holonomy: HolonomyConfig,
    pub clusters: ClusterConfig,
    pub coupling: CouplingSection,
    pub ablation: Option<AblationSpec>,
    pub synth: SynthConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            holonomy: self.holonomy,
            ablation: self.ablation,
            clusters: self.clusters,
            target: self.coupling.target,
            average: self.coupling.average,
            threads: self.threads,
        }
    }
}
