//! Dataset schema: which CSV columns are features, which are outputs, and
//! how each output is quantized.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Task kind per output dimension. Regression outputs carry their quantizer
/// parameters so real values can be mapped onto discrete bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification {
        classes: usize,
    },
    Regression {
        /// Multiplier applied to the raw value before binning.
        #[serde(default = "default_factor")]
        factor: f64,
        #[serde(default = "default_bins")]
        bins: usize,
        /// Range of the enlarged value, [lo, hi).
        lo: f64,
        hi: f64,
    },
}

fn default_factor() -> f64 {
    10.0
}

fn default_bins() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub name: String,
    pub task: TaskKind,
}

/// Names the feature and output columns of a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<String>,
    pub outputs: Vec<OutputSpec>,
}

impl Schema {
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_file(path: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("schema has no feature columns".into()));
        }
        if self.outputs.is_empty() {
            return Err(Error::Schema("schema has no output columns".into()));
        }
        for out in &self.outputs {
            match &out.task {
                TaskKind::Classification { classes } => {
                    if *classes == 0 {
                        return Err(Error::Schema(format!(
                            "output '{}' has zero classes",
                            out.name
                        )));
                    }
                }
                TaskKind::Regression { factor, bins, lo, hi } => {
                    if !(*factor > 0.0) || !factor.is_finite() {
                        return Err(Error::Schema(format!(
                            "output '{}' has non-positive enlargement factor",
                            out.name
                        )));
                    }
                    if *bins == 0 {
                        return Err(Error::Schema(format!(
                            "output '{}' has zero bins",
                            out.name
                        )));
                    }
                    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                        return Err(Error::Schema(format!(
                            "output '{}' has invalid range [{lo}, {hi}]",
                            out.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    pub fn output_count(&self) -> usize {
        self.outputs.len()
    }

    /// Number of classes / quantization bins for output `j`.
    pub fn class_count(&self, j: usize) -> usize {
        match &self.outputs[j].task {
            TaskKind::Classification { classes } => *classes,
            TaskKind::Regression { bins, .. } => *bins,
        }
    }

    /// Stable content hash, stored in fitted artifacts so a validator is
    /// never applied to data with a different layout.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("schema serializes");
        let digest = Sha256::digest(canon.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            use std::fmt::Write;
            write!(hex, "{byte:02x}").unwrap();
        }
        hex
    }
}
