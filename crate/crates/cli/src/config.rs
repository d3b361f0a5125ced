//! TOML run configuration. Every section is optional and falls back to the
//! library defaults.

use std::path::Path;

use anyhow::Context;
use seavae::pipeline::{DetectConfig, IngestOptions, SynthConfig};
use seavae::vae::VaeConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub ingest: IngestOptions,
    pub train: VaeConfig,
    pub detect: DetectConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Sets every seed in the configuration.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.ingest.seed = seed;
        self.train.seed = seed;
        self.detect.seed = seed;
        self.detect.tsne.seed = seed;
        self
    }
}
