use std::path::Path;

use serde::Deserialize;

use echodoa::dataset::SweepSpec;
use echodoa::music::MusicOptions;
use echodoa::nn::{AdamHyper, GradCheckOptions, NetworkSpec, TrainConfig};

/// Contents of a `--config` file. Every section and key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub sweep: SweepSpec,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub adam: AdamHyper,
    pub music: MusicOptions,
    pub gradcheck: GradCheckOptions,
}

impl FileConfig {
    pub fn parse(text: &str) -> echodoa::Result<Self> {
        let cfg: FileConfig = toml::from_str(text).map_err(|e| echodoa::Error::Parse(e.to_string()))?;
        cfg.sweep.sim.validate()?;
        cfg.adam.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> echodoa::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| echodoa::Error::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}
