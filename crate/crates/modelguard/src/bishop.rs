//! Unconditional per-feature input-density baseline. Same histogram
//! machinery and validity normalization as the conditional bank, but with
//! no output conditioning, so comparisons against it isolate the value of
//! conditioning on the model's answer.

use serde::{Deserialize, Serialize};

use crate::bank::feature_ranges;
use crate::data::{Dataset, FeatureVector};
use crate::error::{Error, Result};
use crate::hist::{Histogram, DEFAULT_BINS, DEFAULT_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityBank {
    pub kind: String,
    pub schema_hash: String,
    pub bins: usize,
    pub eps: f64,
    pub threshold: f64,
    pub feature_ranges: Vec<(f64, f64)>,
    pub hists: Vec<Histogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub validity: f64,
    pub accepted: bool,
    /// Mass at the query per feature, for explainability.
    pub masses: Vec<f64>,
    pub overall: Option<f64>,
}

impl DensityBank {
    pub fn fit(train: &Dataset, bins: usize, threshold: f64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let ranges = feature_ranges(&train.rows, train.schema.feature_count());
        let mut hists: Vec<Histogram> = ranges
            .iter()
            .map(|&(lo, hi)| Histogram::new(lo, hi, bins))
            .collect();
        for (fv, _) in &train.rows {
            for (hist, &x) in hists.iter_mut().zip(fv.values()) {
                hist.update(x)?;
            }
        }
        Ok(Self {
            kind: "unconditional".into(),
            schema_hash: train.schema.hash(),
            bins,
            eps: DEFAULT_EPS,
            threshold,
            feature_ranges: ranges,
            hists,
        })
    }

    pub fn fit_default(train: &Dataset) -> Result<Self> {
        Self::fit(train, DEFAULT_BINS, 0.6)
    }

    pub fn validity(&self, x: &FeatureVector) -> Result<DensityReport> {
        if x.len() != self.hists.len() {
            return Err(Error::LengthMismatch {
                expected: self.hists.len(),
                got: x.len(),
            });
        }
        let masses: Vec<f64> = self
            .hists
            .iter()
            .zip(x.values())
            .map(|(h, &xi)| h.eval_at(xi))
            .collect();
        let num: f64 = masses.iter().sum();
        let den: f64 = self.hists.iter().map(Histogram::max_mass).sum::<f64>() + self.eps;
        let validity = num / den;
        Ok(DensityReport {
            validity,
            accepted: validity >= self.threshold,
            masses,
            overall: Some(validity),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
