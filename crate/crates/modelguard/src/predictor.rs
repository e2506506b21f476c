//! Prediction sources for the validators: a built-in 1-nearest-neighbor
//! predictor for end-to-end runs, and a CSV adapter for predictions made
//! by any external model.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, OutputVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Builtin,
    External { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub rows: Vec<OutputVector>,
    pub provenance: Provenance,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn standardization(train: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let n = train.len() as f64;
    let n_features = train.schema.feature_count();
    let mut means = vec![0.0; n_features];
    for (fv, _) in &train.rows {
        for (i, &v) in fv.values().iter().enumerate() {
            means[i] += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut stds = vec![0.0; n_features];
    for (fv, _) in &train.rows {
        for (i, &v) in fv.values().iter().enumerate() {
            stds[i] += (v - means[i]).powi(2);
        }
    }
    for s in &mut stds {
        *s = (*s / n).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    (means, stds)
}

/// 1-NN in standardized Euclidean space: each test row receives the output
/// of its nearest training row, ties broken by lowest training index.
pub fn fit_predict_builtin(train: &Dataset, test: &Dataset) -> Result<PredictionSet> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.schema != test.schema {
        return Err(Error::Schema(
            "train and test schemas do not match".into(),
        ));
    }
    let (means, stds) = standardization(train);
    let standardize = |values: &[f64]| -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - means[i]) / stds[i])
            .collect()
    };
    let train_std: Vec<Vec<f64>> = train
        .rows
        .iter()
        .map(|(fv, _)| standardize(fv.values()))
        .collect();
    let mut rows = Vec::with_capacity(test.len());
    for (fv, _) in &test.rows {
        let q = standardize(fv.values());
        let mut best = (0usize, f64::INFINITY);
        for (r, row) in train_std.iter().enumerate() {
            let d2: f64 = q.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.1 {
                best = (r, d2);
            }
        }
        rows.push(train.rows[best.0].1.clone());
    }
    Ok(PredictionSet {
        rows,
        provenance: Provenance::Builtin,
    })
}

/// Loads externally produced predictions, joined to the dataset by row
/// order. Header must be `out_0..out_{M-1}`.
pub fn load_external(path: impl AsRef<Path>, ds: &Dataset) -> Result<PredictionSet> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let m = ds.schema.output_count();
    let header = reader.headers()?.clone();
    for j in 0..m {
        let expected = format!("out_{j}");
        if header.get(j).map(str::trim) != Some(expected.as_str()) {
            return Err(Error::Schema(format!(
                "predictions header must be out_0..out_{}, got {:?}",
                m - 1,
                header
            )));
        }
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut values = Vec::with_capacity(m);
        for j in 0..m {
            let raw = record.get(j).ok_or_else(|| {
                Error::Data(format!("prediction row {} too short", rows.len()))
            })?;
            let v: f64 = raw.trim().parse().map_err(|_| {
                Error::Data(format!("unparseable prediction '{raw}' at row {}", rows.len()))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite prediction at row {}",
                    rows.len()
                )));
            }
            values.push(v);
        }
        rows.push(OutputVector(values));
    }
    if rows.len() != ds.len() {
        return Err(Error::LengthMismatch {
            expected: ds.len(),
            got: rows.len(),
        });
    }
    Ok(PredictionSet {
        rows,
        provenance: Provenance::External {
            path: path.display().to_string(),
        },
    })
}

/// Writes predictions in the external CSV format.
pub fn save_csv(preds: &PredictionSet, mut w: impl Write) -> Result<()> {
    let m = preds.rows.first().map_or(0, OutputVector::len);
    let header: Vec<String> = (0..m).map(|j| format!("out_{j}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in &preds.rows {
        let line: Vec<String> = row.values().iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}
