//! Optional `--config` file for `train`.
//!
//! ```toml
//! [sgd]
//! learning_rate = 0.01
//! epochs = 20
//!
//! [network]
//! preset = "custom"
//! input_dims = [8, 32, 32]
//! layers = [
//!     { type = "conv", filter_height = 5, filter_width = 5, filters = 4 },
//!     { type = "relu" },
//!     ...
//! ]
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

use wxcnn::network::{NetworkConfig, SgdParams};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub network: Option<NetworkConfig>,
    #[serde(default)]
    pub sgd: SgdOverrides,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdOverrides {
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub momentum: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn sgd_params(&self, base: SgdParams) -> SgdParams {
        let s = &self.sgd;
        SgdParams {
            learning_rate: s.learning_rate.unwrap_or(base.learning_rate),
            weight_decay: s.weight_decay.unwrap_or(base.weight_decay),
            momentum: s.momentum.unwrap_or(base.momentum),
            batch_size: s.batch_size.unwrap_or(base.batch_size),
            epochs: s.epochs.unwrap_or(base.epochs),
            seed: base.seed,
        }
    }
}
