//! Evaluation summaries: accuracy, confusion matrix, the invalid/valid
//! rates at a validity threshold, and the validity-versus-error relation
//! for regression outputs.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::OutputVector;
use crate::error::{Error, Result};
use crate::schema::{Schema, TaskKind};

/// Spearman rank correlation with tie-averaged ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let ra = ranks(a);
    let rb = ranks(b);
    pearson(&ra, &rb)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut pos = 0;
    while pos < order.len() {
        let mut end = pos + 1;
        while end < order.len() && values[order[end]] == values[order[pos]] {
            end += 1;
        }
        let avg = (pos + end - 1) as f64 / 2.0 + 1.0;
        for &idx in &order[pos..end] {
            ranks[idx] = avg;
        }
        pos = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// One scored sample for the per-output tables.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub row: usize,
    /// None when the validator reported insufficient data.
    pub validity: Option<f64>,
    pub correct: bool,
    /// Absolute error in enlarged units; 0/1 mismatch for classification.
    pub error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputEval {
    pub name: String,
    pub task: String,
    /// Fraction of predictions that are correct (classification) or within
    /// the error threshold (regression).
    pub accuracy: f64,
    pub confusion: Option<Vec<Vec<u64>>>,
    /// Fraction of correct predictions flagged invalid (V < tau_v).
    pub fir: Option<f64>,
    /// Fraction of incorrect predictions accepted as valid (V >= tau_v).
    pub fvr: Option<f64>,
    pub spearman_validity_vs_error: Option<f64>,
    pub insufficient: usize,
    pub samples: Vec<SampleOutcome>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub tau_validity: f64,
    /// Error acceptance threshold for regression, in enlarged units.
    pub tau_error: f64,
    pub outputs: Vec<OutputEval>,
}

/// Builds the evaluation summary from aligned rows of ground truth,
/// predictions, and per-output validity values.
pub fn evaluate(
    schema: &Schema,
    truth: &[OutputVector],
    predictions: &[OutputVector],
    validities: &[Vec<Option<f64>>],
    tau_validity: f64,
    tau_error: f64,
) -> Result<EvalSummary> {
    let n = truth.len();
    if predictions.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: predictions.len(),
        });
    }
    if validities.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: validities.len(),
        });
    }
    let mut outputs = Vec::with_capacity(schema.output_count());
    for (j, out) in schema.outputs.iter().enumerate() {
        let mut samples = Vec::with_capacity(n);
        let mut confusion = match out.task {
            TaskKind::Classification { classes } => Some(vec![vec![0u64; classes]; classes]),
            TaskKind::Regression { .. } => None,
        };
        for row in 0..n {
            let y = truth[row].values()[j];
            let y_hat = predictions[row].values()[j];
            let (correct, error) = match out.task {
                TaskKind::Classification { classes } => {
                    let t = (y.max(0.0) as usize).min(classes - 1);
                    let p = (y_hat.max(0.0) as usize).min(classes - 1);
                    if let Some(m) = confusion.as_mut() {
                        m[t][p] += 1;
                    }
                    (t == p, if t == p { 0.0 } else { 1.0 })
                }
                TaskKind::Regression { factor, .. } => {
                    let err = (y_hat - y).abs() * factor;
                    (err <= tau_error, err)
                }
            };
            samples.push(SampleOutcome {
                row,
                validity: validities[row][j],
                correct,
                error,
            });
        }
        let accuracy =
            samples.iter().filter(|s| s.correct).count() as f64 / n.max(1) as f64;
        let insufficient = samples.iter().filter(|s| s.validity.is_none()).count();
        let rate = |want_correct: bool, flag_invalid: bool| -> Option<f64> {
            let pool: Vec<&SampleOutcome> = samples
                .iter()
                .filter(|s| s.correct == want_correct && s.validity.is_some())
                .collect();
            if pool.is_empty() {
                return None;
            }
            let hits = pool
                .iter()
                .filter(|s| {
                    let v = s.validity.unwrap();
                    if flag_invalid {
                        v < tau_validity
                    } else {
                        v >= tau_validity
                    }
                })
                .count();
            Some(hits as f64 / pool.len() as f64)
        };
        let fir = rate(true, true);
        let fvr = rate(false, false);
        let spearman_validity_vs_error = match out.task {
            TaskKind::Regression { .. } => {
                let pairs: Vec<(f64, f64)> = samples
                    .iter()
                    .filter_map(|s| s.validity.map(|v| (v, s.error)))
                    .collect();
                let (vs, es): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
                spearman(&vs, &es)
            }
            TaskKind::Classification { .. } => None,
        };
        outputs.push(OutputEval {
            name: out.name.clone(),
            task: match out.task {
                TaskKind::Classification { .. } => "classification".into(),
                TaskKind::Regression { .. } => "regression".into(),
            },
            accuracy,
            confusion,
            fir,
            fvr,
            spearman_validity_vs_error,
            insufficient,
            samples,
        });
    }
    Ok(EvalSummary {
        n,
        tau_validity,
        tau_error,
        outputs,
    })
}

fn fmt_rate(r: Option<f64>) -> String {
    match r {
        Some(v) => format!("{:.1}%", v * 100.0),
        None => "n/a".into(),
    }
}

impl fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "samples: {}  tau_v: {}  tau_err: {}",
            self.n, self.tau_validity, self.tau_error
        )?;
        for out in &self.outputs {
            writeln!(f, "output '{}' ({})", out.name, out.task)?;
            writeln!(f, "  accuracy: {:.3}", out.accuracy)?;
            if let Some(m) = &out.confusion {
                writeln!(f, "  confusion (rows = truth):")?;
                for row in m {
                    let cells: Vec<String> = row.iter().map(|c| format!("{c:6}")).collect();
                    writeln!(f, "    {}", cells.join(" "))?;
                }
            }
            writeln!(
                f,
                "  FIR (correct flagged invalid): {}",
                fmt_rate(out.fir)
            )?;
            writeln!(f, "  FVR (incorrect accepted): {}", fmt_rate(out.fvr))?;
            if let Some(s) = out.spearman_validity_vs_error {
                writeln!(f, "  spearman(V, |err|): {s:.3}")?;
            }
            if out.insufficient > 0 {
                writeln!(f, "  insufficient-data samples: {}", out.insufficient)?;
            }
        }
        Ok(())
    }
}
