//! Seeded synthetic datasets: Gaussian clusters per class, used as a
//! desk-scale harness for the validators.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureVector, OutputVector};
use crate::error::{Error, Result};
use crate::schema::{OutputSpec, Schema, TaskKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub mean: Vec<f64>,
    /// Per-feature standard deviation (diagonal covariance).
    pub std: Vec<f64>,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub features: usize,
    /// One or more clusters per class; the class label is the index.
    pub classes: Vec<Vec<ClusterSpec>>,
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SynthSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features == 0 {
            return Err(Error::Data("synth spec needs at least one feature".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::Data("synth spec needs at least one class".into()));
        }
        for (label, clusters) in self.classes.iter().enumerate() {
            if clusters.is_empty() {
                return Err(Error::Data(format!("class {label} has no clusters")));
            }
            for c in clusters {
                if c.mean.len() != self.features || c.std.len() != self.features {
                    return Err(Error::Data(format!(
                        "class {label} cluster dimensions do not match feature count"
                    )));
                }
                if c.size == 0 {
                    return Err(Error::Data(format!("class {label} has a zero-size cluster")));
                }
                if c.std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
                    return Err(Error::Data(format!(
                        "class {label} has a degenerate covariance"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Schema {
        Schema {
            features: (0..self.features).map(|i| format!("f{i}")).collect(),
            outputs: vec![OutputSpec {
                name: "label".into(),
                task: TaskKind::Classification {
                    classes: self.classes.len(),
                },
            }],
        }
    }
}

/// Draws the dataset described by `spec`; identical seed, identical rows.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rows = Vec::new();
    for (label, clusters) in spec.classes.iter().enumerate() {
        for cluster in clusters {
            for _ in 0..cluster.size {
                let values: Vec<f64> = cluster
                    .mean
                    .iter()
                    .zip(&cluster.std)
                    .map(|(&m, &s)| m + s * unit.sample(&mut rng))
                    .collect();
                rows.push((FeatureVector(values), OutputVector(vec![label as f64])));
            }
        }
    }
    Ok(Dataset {
        schema: spec.schema(),
        rows,
        source: None,
        dropped_rows: 0,
    })
}

/// Writes a dataset as CSV in the ingestion format.
pub fn write_csv(ds: &Dataset, mut w: impl Write) -> Result<()> {
    let mut header: Vec<String> = ds.schema.features.clone();
    header.extend(ds.schema.outputs.iter().map(|o| o.name.clone()));
    writeln!(w, "{}", header.join(","))?;
    for (fv, ov) in &ds.rows {
        let mut cells: Vec<String> = fv.values().iter().map(|v| format!("{v}")).collect();
        cells.extend(ov.values().iter().map(|v| format!("{v}")));
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Two Gaussian classes `separation` standard deviations apart, a common
/// fixture in the tests.
pub fn two_class_spec(n_features: usize, separation: f64, size: usize) -> SynthSpec {
    SynthSpec {
        features: n_features,
        classes: vec![
            vec![ClusterSpec {
                mean: vec![0.0; n_features],
                std: vec![1.0; n_features],
                size,
            }],
            vec![ClusterSpec {
                mean: vec![separation; n_features],
                std: vec![1.0; n_features],
                size,
            }],
        ],
    }
}
