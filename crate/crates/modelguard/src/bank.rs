//! Conditional histogram banks and the validity score.
//!
//! A bank holds one histogram per (output j, class/bin k, feature i). The
//! ground-truth bank is fitted once against training data; the online bank
//! accumulates the live stream. Validity per output is the quality-weighted
//! sum of ground-truth masses at the query features, normalized by the sum
//! of the per-feature maximum masses.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureVector, OutputVector};
use crate::error::{Error, Result};
use crate::hist::{jaccard_smoothed, Histogram, DEFAULT_BINS, DEFAULT_EPS};
use crate::quantizer::Quantizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityMode {
    /// Distribution quality fixed to 1; validity depends only on the
    /// ground-truth bank.
    Simplified,
    /// Quality from the Jaccard similarity between the online and
    /// ground-truth cell histograms.
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Normalized sum over features (the default formulation).
    Sum,
    /// Median of the per-feature ratios.
    Median,
    /// Normalized sum restricted to features whose quality passes `q_min`.
    MinQualityGate { q_min: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionOn {
    /// Bank cells are selected by the quantized model prediction.
    Prediction,
    /// Bank cells are selected by the quantized ground-truth output.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub bins: usize,
    /// Minimum training samples per cell before it may emit a validity.
    pub min_count: u64,
    pub mode: QualityMode,
    pub aggregation: Aggregation,
    pub condition_on: ConditionOn,
    /// Add-alpha smoothing of histogram masses; 0 disables it.
    pub smoothing_alpha: f64,
    pub eps: f64,
    /// Sliding-window length for the online bank; None = cumulative.
    pub window: Option<usize>,
    /// Per-output decision threshold on validity.
    pub threshold: f64,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            min_count: 5,
            mode: QualityMode::Simplified,
            aggregation: Aggregation::Sum,
            condition_on: ConditionOn::Prediction,
            smoothing_alpha: 0.0,
            eps: DEFAULT_EPS,
            window: None,
            threshold: 0.6,
        }
    }
}

/// One (output, class/bin) cell: a histogram per feature plus the number of
/// samples that landed in the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub count: u64,
    pub hists: Vec<Histogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalBank {
    pub kind: String,
    pub schema_hash: String,
    pub quantizer: Quantizer,
    pub config: BankConfig,
    /// Shared per-feature histogram range, identical across all cells.
    pub feature_ranges: Vec<(f64, f64)>,
    /// Start of output j's cells within `cells`.
    pub offsets: Vec<usize>,
    pub cells: Vec<Cell>,
    /// Ring of (cell indices, features) backing the sliding window.
    #[serde(skip)]
    window_buf: VecDeque<(Vec<usize>, Vec<f64>)>,
}

/// Per-feature range from training data: [min, max] padded by 1% of the
/// span on each side; a zero-span feature gets a half-unit pad.
pub fn feature_ranges(rows: &[(FeatureVector, OutputVector)], n_features: usize) -> Vec<(f64, f64)> {
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); n_features];
    for (fv, _) in rows {
        for (i, &v) in fv.values().iter().enumerate() {
            ranges[i].0 = ranges[i].0.min(v);
            ranges[i].1 = ranges[i].1.max(v);
        }
    }
    ranges
        .into_iter()
        .map(|(lo, hi)| {
            let span = hi - lo;
            let pad = if span > 0.0 { 0.01 * span } else { 0.5 };
            (lo - pad, hi + pad)
        })
        .collect()
}

impl ConditionalBank {
    fn empty(
        schema_hash: String,
        quantizer: Quantizer,
        config: BankConfig,
        ranges: Vec<(f64, f64)>,
    ) -> Self {
        let mut offsets = Vec::with_capacity(quantizer.output_count());
        let mut cells = Vec::new();
        for q in &quantizer.outputs {
            offsets.push(cells.len());
            for _ in 0..q.bin_count() {
                cells.push(Cell {
                    count: 0,
                    hists: ranges
                        .iter()
                        .map(|&(lo, hi)| Histogram::new(lo, hi, config.bins))
                        .collect(),
                });
            }
        }
        Self {
            kind: "conditional".into(),
            schema_hash,
            quantizer,
            config,
            feature_ranges: ranges,
            offsets,
            cells,
            window_buf: VecDeque::new(),
        }
    }

    /// An empty bank with the same binning, used as the online counterpart
    /// of a fitted ground-truth bank.
    pub fn empty_like(other: &ConditionalBank) -> Self {
        Self::empty(
            other.schema_hash.clone(),
            other.quantizer.clone(),
            other.config.clone(),
            other.feature_ranges.clone(),
        )
    }

    pub fn cell_index(&self, j: usize, k: usize) -> usize {
        self.offsets[j] + k
    }

    pub fn cell(&self, j: usize, k: usize) -> &Cell {
        &self.cells[self.cell_index(j, k)]
    }

    pub fn feature_count(&self) -> usize {
        self.feature_ranges.len()
    }

    pub fn output_count(&self) -> usize {
        self.quantizer.output_count()
    }

    fn same_binning(&self, other: &ConditionalBank) -> bool {
        self.feature_ranges == other.feature_ranges
            && self.config.bins == other.config.bins
            && self.offsets == other.offsets
    }

    /// Fits the ground-truth bank. Feature ranges come from the full
    /// training set before any cell is filled; each row's features then go
    /// into the cell selected by its (configurable) quantized target.
    pub fn fit(
        train: &Dataset,
        predictions: &[OutputVector],
        quantizer: &Quantizer,
        config: BankConfig,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if predictions.len() != train.len() {
            return Err(Error::LengthMismatch {
                expected: train.len(),
                got: predictions.len(),
            });
        }
        let ranges = feature_ranges(&train.rows, train.schema.feature_count());
        let mut bank = Self::empty(
            train.schema.hash(),
            quantizer.clone(),
            config,
            ranges,
        );
        for (t, (fv, truth)) in train.rows.iter().enumerate() {
            let target = match bank.config.condition_on {
                ConditionOn::Prediction => &predictions[t],
                ConditionOn::GroundTruth => truth,
            };
            let (ks, _) = quantizer.quantize(target);
            bank.add_row(&ks, fv.values())?;
        }
        Ok(bank)
    }

    fn add_row(&mut self, ks: &[usize], features: &[f64]) -> Result<()> {
        for (j, &k) in ks.iter().enumerate() {
            let idx = self.cell_index(j, k);
            let cell = &mut self.cells[idx];
            cell.count += 1;
            for (hist, &x) in cell.hists.iter_mut().zip(features) {
                hist.update(x)?;
            }
        }
        Ok(())
    }

    fn remove_row(&mut self, ks: &[usize], features: &[f64]) {
        for (j, &k) in ks.iter().enumerate() {
            let idx = self.cell_index(j, k);
            let cell = &mut self.cells[idx];
            cell.count = cell.count.saturating_sub(1);
            for (hist, &x) in cell.hists.iter_mut().zip(features) {
                hist.remove(x);
            }
        }
    }

    /// Records one live sample in the online bank. With a configured
    /// sliding window, the oldest sample is retired once the window is full.
    pub fn observe(&mut self, x: &FeatureVector, y_hat: &OutputVector, q: &Quantizer) -> Result<()> {
        if x.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value in observe".into()));
        }
        let (ks, _) = q.quantize(y_hat);
        self.add_row(&ks, x.values())?;
        if let Some(window) = self.config.window {
            self.window_buf.push_back((ks, x.values().to_vec()));
            while self.window_buf.len() > window {
                let (old_ks, old_x) = self.window_buf.pop_front().unwrap();
                self.remove_row(&old_ks, &old_x);
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Quality of cell (j, k, i): Jaccard of the online and ground-truth
/// histograms, or exactly 1 in simplified mode.
pub fn quality(
    gt: &ConditionalBank,
    net: &ConditionalBank,
    j: usize,
    k: usize,
    i: usize,
) -> Result<f64> {
    if gt.config.mode == QualityMode::Simplified {
        return Ok(1.0);
    }
    if !gt.same_binning(net) {
        return Err(Error::BinningMismatch);
    }
    jaccard_smoothed(
        &net.cell(j, k).hists[i],
        &gt.cell(j, k).hists[i],
        gt.config.eps,
        gt.config.smoothing_alpha,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTerm {
    pub feature: usize,
    /// Distribution quality Q for this (output, cell, feature).
    pub quality: f64,
    /// Ground-truth mass at the query value.
    pub gt_mass: f64,
    /// Maximum ground-truth mass of the cell histogram.
    pub max_mass: f64,
    /// Numerator contribution quality * gt_mass.
    pub term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum OutputValidity {
    Valid {
        validity: f64,
        /// validity >= threshold
        accepted: bool,
        cell: usize,
        denominator: f64,
        terms: Vec<FeatureTerm>,
    },
    InsufficientData {
        cell: usize,
        count: u64,
    },
}

impl OutputValidity {
    pub fn value(&self) -> Option<f64> {
        match self {
            Self::Valid { validity, .. } => Some(*validity),
            Self::InsufficientData { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub outputs: Vec<OutputValidity>,
    /// Mean (optionally weighted) over the outputs that produced a value.
    pub overall: Option<f64>,
    /// Some output value fell outside its quantizer range.
    pub clamped: bool,
}

/// Overall validity: plain or weighted mean over per-output values,
/// skipping insufficient outputs. None when nothing can be said.
pub fn validity_all(outputs: &[OutputValidity], weights: Option<&[f64]>) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, out) in outputs.iter().enumerate() {
        if let Some(v) = out.value() {
            let w = weights.map_or(1.0, |w| w[j]);
            num += w * v;
            den += w;
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Scores one sample against the fitted bank. `net` supplies the online
/// distributions in online mode and is ignored in simplified mode.
pub fn validity(
    gt: &ConditionalBank,
    net: Option<&ConditionalBank>,
    x: &FeatureVector,
    y_hat: &OutputVector,
    weights: Option<&[f64]>,
) -> Result<ValidityReport> {
    if x.len() != gt.feature_count() {
        return Err(Error::LengthMismatch {
            expected: gt.feature_count(),
            got: x.len(),
        });
    }
    let cfg = &gt.config;
    let (ks, clamped) = gt.quantizer.quantize(y_hat);
    let mut outputs = Vec::with_capacity(ks.len());
    for (j, &k) in ks.iter().enumerate() {
        let cell = gt.cell(j, k);
        let cell_idx = gt.cell_index(j, k);
        if cell.count < cfg.min_count {
            outputs.push(OutputValidity::InsufficientData {
                cell: cell_idx,
                count: cell.count,
            });
            continue;
        }
        let mut terms = Vec::with_capacity(x.len());
        for (i, &xi) in x.values().iter().enumerate() {
            let q = match cfg.mode {
                QualityMode::Simplified => 1.0,
                QualityMode::Online => {
                    let net = net.ok_or_else(|| {
                        Error::Data("online mode requires an online bank".into())
                    })?;
                    quality(gt, net, j, k, i)?
                }
            };
            let hist = &cell.hists[i];
            let gt_mass = hist.eval_at_smoothed(xi, cfg.smoothing_alpha);
            let max_mass = hist.max_mass_smoothed(cfg.smoothing_alpha);
            terms.push(FeatureTerm {
                feature: i,
                quality: q,
                gt_mass,
                max_mass,
                term: q * gt_mass,
            });
        }
        let kept: Vec<&FeatureTerm> = match cfg.aggregation {
            Aggregation::MinQualityGate { q_min } => {
                terms.iter().filter(|t| t.quality >= q_min).collect()
            }
            _ => terms.iter().collect(),
        };
        if kept.is_empty() {
            outputs.push(OutputValidity::InsufficientData {
                cell: cell_idx,
                count: cell.count,
            });
            continue;
        }
        let (value, denominator) = match cfg.aggregation {
            Aggregation::Sum | Aggregation::MinQualityGate { .. } => {
                let num: f64 = kept.iter().map(|t| t.term).sum();
                let den: f64 = kept.iter().map(|t| t.max_mass).sum::<f64>() + cfg.eps;
                (num / den, den)
            }
            Aggregation::Median => {
                let mut ratios: Vec<f64> = kept
                    .iter()
                    .map(|t| t.term / (t.max_mass + cfg.eps))
                    .collect();
                ratios.sort_by(|a, b| a.total_cmp(b));
                let mid = ratios.len() / 2;
                let v = if ratios.len() % 2 == 1 {
                    ratios[mid]
                } else {
                    0.5 * (ratios[mid - 1] + ratios[mid])
                };
                (v, f64::NAN)
            }
        };
        outputs.push(OutputValidity::Valid {
            validity: value,
            accepted: value >= cfg.threshold,
            cell: cell_idx,
            denominator,
            terms,
        });
    }
    let overall = validity_all(&outputs, weights);
    Ok(ValidityReport {
        outputs,
        overall,
        clamped,
    })
}
