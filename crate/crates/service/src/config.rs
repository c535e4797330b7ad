//! Pipeline configuration, loaded from TOML. Every field has a default so
//! a config file only needs the values it changes.

use std::path::Path;

use anyhow::Context;
use foley_core::audio_io::SegmentSpec;
use foley_core::dataset::DEFAULT_TEST_FRACTION;
use foley_core::latent::{DEFAULT_FIDELITY, DEFAULT_PRUNE_THRESHOLD};
use foley_core::trainer::TrainConfig;
use foley_core::vae::Profile;
use serde::{Deserialize, Serialize};

use crate::server::ServerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub profile: Profile,
    pub seed: u64,
    pub ingest: IngestSettings,
    pub train: TrainConfig,
    pub latent: LatentSettings,
    pub service: ServiceSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSettings {
    pub segment: SegmentSpec,
    pub test_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentSettings {
    pub prune_threshold: f64,
    pub fidelity: f64,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceSettings {
    pub host: String,
    pub port: u16,
    #[serde(flatten)]
    pub server: ServerConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Tiny,
            seed: 0,
            ingest: IngestSettings::default(),
            train: TrainConfig::default(),
            latent: LatentSettings::default(),
            service: ServiceSettings::default(),
        }
    }
}

impl Default for IngestSettings {
    fn default() -> Self {
        Self {
            segment: SegmentSpec::default(),
            test_fraction: DEFAULT_TEST_FRACTION,
        }
    }
}

impl Default for LatentSettings {
    fn default() -> Self {
        Self {
            prune_threshold: DEFAULT_PRUNE_THRESHOLD,
            fidelity: DEFAULT_FIDELITY,
            perplexity: 30.0,
        }
    }
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            server: ServerConfig::default(),
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
