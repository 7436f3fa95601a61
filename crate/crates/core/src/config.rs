//! Run configuration: every tunable default, grouped per module, loadable from
//! TOML. Unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::claysim::SimConfig;
use crate::encoder::{EncoderConfig, PretrainConfig};
use crate::error::{Error, Result};
use crate::metrics::EmdConfig;
use crate::policy::{PolicyConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub size: usize,
    pub heldout: usize,
    pub points: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            size: 256,
            heldout: 32,
            points: 256,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub count: usize,
    pub seed: u64,
    pub augment_step_deg: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            count: 20,
            seed: 0,
            augment_step_deg: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub max_actions: usize,
    pub project_collisions: bool,
    pub initial_height: f64,
    pub seed: u64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            max_actions: 80,
            project_collisions: false,
            initial_height: 0.065,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub demos: DemoConfig,
    pub encoder: EncoderConfig,
    pub corpus: CorpusConfig,
    pub pretrain: PretrainConfig,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub rollout: RolloutConfig,
    pub metrics: EmdConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.policy.validate()?;
        if self.policy.embedding_dim != self.encoder.embedding_dim() {
            return Err(Error::Config(format!(
                "policy.embedding_dim {} differs from the encoder output {}",
                self.policy.embedding_dim,
                self.encoder.embedding_dim()
            )));
        }
        if self.sim.n_points == 0 {
            return Err(Error::Config("sim.n_points must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_toml("[policy]\nvariant = \"progress\"\n[sim]\nk_up = 0.4\n").unwrap();
        assert_eq!(cfg.policy.variant, crate::policy::Variant::Progress);
        assert_eq!(cfg.sim.k_up, 0.4);
        assert_eq!(cfg.sim.n_points, 2048);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("[sim]\nbogus = 1\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("nonsense = true\n"), Err(Error::Config(_))));
        let bad = RunConfig::from_toml("[policy]\nembedding_dim = 256\n").unwrap();
        assert!(bad.validate().is_err());
    }
}
