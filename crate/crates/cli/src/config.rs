//! Optional TOML run configuration. Every field mirrors a flag.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use speechbreath::model::{DEFAULT_CONV_WIDTH, DEFAULT_EMBED_UNITS, DEFAULT_LSTM_LAYERS, DEFAULT_LSTM_UNITS};
use speechbreath::segment::DEFAULT_SEGMENT_S;
use speechbreath::synth::SynthConfig;
use speechbreath::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub manifest: Option<PathBuf>,
    pub synth: SynthConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub data: DataSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub lstm_layers: usize,
    pub lstm_units: usize,
    pub embed_units: usize,
    pub conv_width: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            lstm_layers: DEFAULT_LSTM_LAYERS,
            lstm_units: DEFAULT_LSTM_UNITS,
            embed_units: DEFAULT_EMBED_UNITS,
            conv_width: DEFAULT_CONV_WIDTH,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub features: String,
    pub selection: Option<PathBuf>,
    pub segment_s: f64,
    pub speed_factors: Vec<f64>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            features: "mfb".into(),
            selection: None,
            segment_s: DEFAULT_SEGMENT_S,
            speed_factors: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Flag, then top-level `seed`, then the section's own value.
    pub fn seed(&self, flag: Option<u64>, section: u64) -> u64 {
        flag.or(self.seed).unwrap_or(section)
    }

    pub fn manifest(&self, flag: Option<&Path>) -> Result<PathBuf, CliError> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.manifest.clone())
            .ok_or_else(|| CliError::Usage("--manifest is required".into()))
    }
}

/// Overwrites `slot` when the flag was given.
pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str("seed = 4\n[train]\nlr = 0.01\n[model]\nlstm_layers = 1\n").unwrap();
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.model.lstm_layers, 1);
        assert_eq!(c.model.lstm_units, DEFAULT_LSTM_UNITS);
        assert_eq!(c.seed(None, 0), 4);
        assert_eq!(c.seed(Some(9), 0), 9);
        assert_eq!(c.data.features, "mfb");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[model]\nlayers = 3\n").is_err());
    }
}
