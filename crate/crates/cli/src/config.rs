//! The resolved tool configuration: defaults, then the config file, then
//! command-line overrides. Unknown keys in the file are errors.

use rfdeblur_core::blursynth::SynthConfig;
use rfdeblur_core::eval::MetricSpace;
use rfdeblur_core::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub metric_space: MetricSpace,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; overrides the per-section seeds when set.
    pub seed: Option<u64>,
    /// Scene description file for `synth`.
    pub scene: Option<PathBuf>,
    /// Dataset directory for `run`.
    pub dataset: Option<PathBuf>,
    /// Output directory for `synth`.
    pub out: Option<PathBuf>,
    /// Pipeline working directory for `run`/`report`.
    pub workdir: Option<PathBuf>,
    pub synth: SynthConfig,
    pub pipeline: PipelineConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("cannot parse {}: {e}", path.display()))?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, toml::to_string_pretty(self)?)?;
        Ok(())
    }
}
