use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Temporal kernel width in frames (50 ms at 100 Hz).
pub const DEFAULT_CONV_WIDTH: usize = 5;
pub const DEFAULT_LSTM_LAYERS: usize = 2;
pub const DEFAULT_LSTM_UNITS: usize = 128;
pub const DEFAULT_EMBED_UNITS: usize = 128;

/// One input stream: a time convolution with one filter per input dimension,
/// each filter spanning every input dimension over `conv_width` frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub input_dims: usize,
    pub conv_filters: usize,
    pub conv_width: usize,
}

impl BranchConfig {
    pub fn new(input_dims: usize) -> Self {
        Self::with_width(input_dims, DEFAULT_CONV_WIDTH)
    }

    pub fn with_width(input_dims: usize, conv_width: usize) -> Self {
        Self {
            input_dims,
            conv_filters: input_dims,
            conv_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub branches: Vec<BranchConfig>,
    pub lstm_layers: usize,
    pub lstm_units: usize,
    pub embed_units: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Default architecture over the given branch input sizes.
    pub fn new(branch_dims: &[usize], seed: u64) -> Self {
        Self {
            branches: branch_dims.iter().map(|&d| BranchConfig::new(d)).collect(),
            lstm_layers: DEFAULT_LSTM_LAYERS,
            lstm_units: DEFAULT_LSTM_UNITS,
            embed_units: DEFAULT_EMBED_UNITS,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches.is_empty() || self.branches.len() > 2 {
            return Err(Error::Parameter(format!(
                "{} branches, expected 1 or 2",
                self.branches.len()
            )));
        }
        for (i, b) in self.branches.iter().enumerate() {
            if b.input_dims == 0 || b.conv_width == 0 {
                return Err(Error::Parameter(format!("branch {i} has a zero size")));
            }
            if b.conv_filters != b.input_dims {
                return Err(Error::Parameter(format!(
                    "branch {i}: {} filters for {} input dims; they must match",
                    b.conv_filters, b.input_dims
                )));
            }
        }
        if self.lstm_layers == 0 || self.lstm_units == 0 || self.embed_units == 0 {
            return Err(Error::Parameter("layer sizes must be at least 1".into()));
        }
        Ok(())
    }

    /// Width of the concatenated convolution output fed to the first LSTM layer.
    pub fn lstm_input_dims(&self) -> usize {
        self.branches.iter().map(|b| b.conv_filters).sum()
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }
}

/// Exact number of scalar parameters for `config`.
pub fn param_count(config: &ModelConfig) -> usize {
    let conv: usize = config
        .branches
        .iter()
        .map(|b| b.conv_width * b.input_dims * b.conv_filters + b.conv_filters)
        .sum();
    let h = config.lstm_units;
    let lstm: usize = (0..config.lstm_layers)
        .map(|l| {
            let input = if l == 0 { config.lstm_input_dims() } else { h };
            input * 4 * h + h * 4 * h + 4 * h
        })
        .sum();
    let embed = h * config.embed_units + config.embed_units;
    let head = config.embed_units + 1;
    conv + lstm + embed + head
}
