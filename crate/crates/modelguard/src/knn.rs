//! Exact brute-force kNN backprojection validator. Training features are
//! z-scored, queries search the cell selected by the quantized prediction,
//! and the mean neighbor distance maps onto [0,1] against a per-cell
//! reference distance computed at fit time.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureVector, OutputVector};
use crate::error::{Error, Result};
use crate::hist::DEFAULT_EPS;
use crate::quantizer::Quantizer;

/// Cells larger than this use an evenly strided row subsample when the
/// reference distance is computed; the full scan would be quadratic.
const D_REF_SAMPLE_CAP: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborScope {
    /// Neighbors restricted to the predicted cell; validity from distance.
    Cell,
    /// Neighbors over the whole training set; validity is the fraction of
    /// neighbors whose cell matches the prediction.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    /// Neighbor count; None means "use the feature count".
    pub k: Option<usize>,
    pub scope: NeighborScope,
    pub eps: f64,
    pub threshold: f64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: None,
            scope: NeighborScope::Cell,
            eps: DEFAULT_EPS,
            threshold: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnIndex {
    pub kind: String,
    pub schema_hash: String,
    pub quantizer: Quantizer,
    pub k: usize,
    pub scope: NeighborScope,
    pub eps: f64,
    pub threshold: f64,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Row-major standardized training features.
    pub features: Vec<f64>,
    pub n_rows: usize,
    pub n_features: usize,
    /// Quantized training output per row per output dimension.
    pub assignments: Vec<Vec<usize>>,
    /// Reference distance per output per cell; None when the cell is too
    /// small to support queries.
    pub d_ref: Vec<Vec<Option<f64>>>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn median(sorted: &mut [f64]) -> f64 {
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

/// k nearest rows to `query` among `candidates`, ties broken by lowest row
/// index. Returns (row, distance) pairs sorted nearest-first.
fn k_nearest(
    query: &[f64],
    candidates: &[usize],
    features: &[f64],
    n_features: usize,
    k: usize,
) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = candidates
        .iter()
        .map(|&r| {
            let row = &features[r * n_features..(r + 1) * n_features];
            (r, distance(query, row))
        })
        .collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

impl KnnIndex {
    pub fn fit(
        train: &Dataset,
        predictions: &[OutputVector],
        quantizer: &Quantizer,
        config: KnnConfig,
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
        let n_features = train.schema.feature_count();
        let n_rows = train.len();
        let k = config.k.unwrap_or(n_features).max(1);
        if k > n_rows {
            return Err(Error::Data(format!(
                "k = {k} exceeds training size {n_rows}"
            )));
        }

        let mut means = vec![0.0; n_features];
        for (fv, _) in &train.rows {
            for (i, &v) in fv.values().iter().enumerate() {
                means[i] += v;
            }
        }
        for m in &mut means {
            *m /= n_rows as f64;
        }
        let mut stds = vec![0.0; n_features];
        for (fv, _) in &train.rows {
            for (i, &v) in fv.values().iter().enumerate() {
                stds[i] += (v - means[i]).powi(2);
            }
        }
        for s in &mut stds {
            *s = (*s / n_rows as f64).sqrt();
            // zero-variance features pass through untransformed
            if *s == 0.0 {
                *s = 1.0;
            }
        }

        let mut features = Vec::with_capacity(n_rows * n_features);
        for (fv, _) in &train.rows {
            for (i, &v) in fv.values().iter().enumerate() {
                features.push((v - means[i]) / stds[i]);
            }
        }

        let assignments: Vec<Vec<usize>> = predictions
            .iter()
            .map(|y| quantizer.quantize(y).0)
            .collect();

        // reference distance per cell: median over cell rows of the mean
        // distance to their own k nearest same-cell neighbors
        let mut d_ref = Vec::with_capacity(quantizer.output_count());
        for (j, oq) in quantizer.outputs.iter().enumerate() {
            let mut per_cell = Vec::with_capacity(oq.bin_count());
            for cell in 0..oq.bin_count() {
                let members: Vec<usize> = (0..n_rows)
                    .filter(|&r| assignments[r][j] == cell)
                    .collect();
                if members.len() < 2 || members.len() < k {
                    per_cell.push(None);
                    continue;
                }
                let kk = k.min(members.len() - 1);
                let stride = (members.len() / D_REF_SAMPLE_CAP).max(1);
                let mut row_means = Vec::new();
                for probe in members.iter().step_by(stride) {
                    let query = &features[probe * n_features..(probe + 1) * n_features];
                    let others: Vec<usize> =
                        members.iter().copied().filter(|r| r != probe).collect();
                    let nearest = k_nearest(query, &others, &features, n_features, kk);
                    let mean_d =
                        nearest.iter().map(|(_, d)| d).sum::<f64>() / nearest.len() as f64;
                    row_means.push(mean_d);
                }
                per_cell.push(Some(median(&mut row_means)));
            }
            d_ref.push(per_cell);
        }

        Ok(Self {
            kind: "knn".into(),
            schema_hash: train.schema.hash(),
            quantizer: quantizer.clone(),
            k,
            scope: config.scope,
            eps: config.eps,
            threshold: config.threshold,
            means,
            stds,
            features,
            n_rows,
            n_features,
            assignments,
            d_ref,
        })
    }

    pub fn standardize(&self, x: &FeatureVector) -> Vec<f64> {
        x.values()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - self.means[i]) / self.stds[i])
            .collect()
    }

    pub fn validity(&self, x: &FeatureVector, y_hat: &OutputVector) -> Result<KnnReport> {
        if x.len() != self.n_features {
            return Err(Error::LengthMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let query = self.standardize(x);
        let (ks, clamped) = self.quantizer.quantize(y_hat);
        let mut outputs = Vec::with_capacity(ks.len());
        for (j, &cell) in ks.iter().enumerate() {
            outputs.push(match self.scope {
                NeighborScope::Cell => self.validity_in_cell(&query, j, cell),
                NeighborScope::Global => self.validity_global(&query, j, cell),
            });
        }
        let values: Vec<Option<f64>> = outputs.iter().map(|o| o.value()).collect();
        let present: Vec<f64> = values.iter().flatten().copied().collect();
        let overall = if present.is_empty() {
            None
        } else {
            Some(present.iter().sum::<f64>() / present.len() as f64)
        };
        Ok(KnnReport {
            outputs,
            overall,
            clamped,
        })
    }

    fn validity_in_cell(&self, query: &[f64], j: usize, cell: usize) -> KnnOutputReport {
        let members: Vec<usize> = (0..self.n_rows)
            .filter(|&r| self.assignments[r][j] == cell)
            .collect();
        let d_ref = self.d_ref[j][cell];
        if members.len() < self.k || d_ref.is_none() {
            return KnnOutputReport::InsufficientData {
                cell,
                cell_size: members.len(),
            };
        }
        let d_ref = d_ref.unwrap();
        let nearest = k_nearest(query, &members, &self.features, self.n_features, self.k);
        let mean_distance =
            nearest.iter().map(|(_, d)| d).sum::<f64>() / nearest.len() as f64;
        let validity = 1.0 / (1.0 + mean_distance / d_ref.max(self.eps));
        let mut feature_sq_contrib = vec![0.0; self.n_features];
        for (r, _) in &nearest {
            let row = &self.features[r * self.n_features..(r + 1) * self.n_features];
            for (i, (&qv, &rv)) in query.iter().zip(row).enumerate() {
                feature_sq_contrib[i] += (qv - rv) * (qv - rv) / nearest.len() as f64;
            }
        }
        KnnOutputReport::Valid {
            validity,
            accepted: validity >= self.threshold,
            cell,
            mean_distance,
            d_ref,
            neighbors: nearest.iter().map(|(r, _)| *r).collect(),
            feature_sq_contrib,
        }
    }

    fn validity_global(&self, query: &[f64], j: usize, cell: usize) -> KnnOutputReport {
        if self.n_rows < self.k {
            return KnnOutputReport::InsufficientData {
                cell,
                cell_size: self.n_rows,
            };
        }
        let all: Vec<usize> = (0..self.n_rows).collect();
        let nearest = k_nearest(query, &all, &self.features, self.n_features, self.k);
        let agree = nearest
            .iter()
            .filter(|(r, _)| self.assignments[*r][j] == cell)
            .count();
        let validity = agree as f64 / nearest.len() as f64;
        let mean_distance =
            nearest.iter().map(|(_, d)| d).sum::<f64>() / nearest.len() as f64;
        let mut feature_sq_contrib = vec![0.0; self.n_features];
        for (r, _) in &nearest {
            let row = &self.features[r * self.n_features..(r + 1) * self.n_features];
            for (i, (&qv, &rv)) in query.iter().zip(row).enumerate() {
                feature_sq_contrib[i] += (qv - rv) * (qv - rv) / nearest.len() as f64;
            }
        }
        KnnOutputReport::Valid {
            validity,
            accepted: validity >= self.threshold,
            cell,
            mean_distance,
            d_ref: f64::NAN,
            neighbors: nearest.iter().map(|(r, _)| *r).collect(),
            feature_sq_contrib,
        }
    }

    /// Serialized size is dominated by the stored training matrix, which is
    /// the memory cost the probabilistic bank avoids.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum KnnOutputReport {
    Valid {
        validity: f64,
        accepted: bool,
        cell: usize,
        mean_distance: f64,
        d_ref: f64,
        /// Training row identifiers of the selected neighbors.
        neighbors: Vec<usize>,
        /// Mean squared per-feature distance to the neighbors, standardized.
        feature_sq_contrib: Vec<f64>,
    },
    InsufficientData {
        cell: usize,
        cell_size: usize,
    },
}

impl KnnOutputReport {
    pub fn value(&self) -> Option<f64> {
        match self {
            Self::Valid { validity, .. } => Some(*validity),
            Self::InsufficientData { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnReport {
    pub outputs: Vec<KnnOutputReport>,
    pub overall: Option<f64>,
    pub clamped: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{OutputSpec, Schema, TaskKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn schema(n_features: usize, classes: usize) -> Schema {
        Schema {
            features: (0..n_features).map(|i| format!("f{i}")).collect(),
            outputs: vec![OutputSpec {
                name: "y".into(),
                task: TaskKind::Classification { classes },
            }],
        }
    }

    fn dataset(rows: Vec<(Vec<f64>, f64)>, n_features: usize, classes: usize) -> Dataset {
        Dataset {
            schema: schema(n_features, classes),
            rows: rows
                .into_iter()
                .map(|(f, y)| (FeatureVector(f), OutputVector(vec![y])))
                .collect(),
            source: None,
            dropped_rows: 0,
        }
    }

    fn self_predictions(ds: &Dataset) -> Vec<OutputVector> {
        ds.rows.iter().map(|(_, y)| y.clone()).collect()
    }

    #[test]
    fn identical_rows_have_zero_reference_distance() {
        let ds = dataset(
            vec![
                (vec![1.0, 2.0], 0.0),
                (vec![1.0, 2.0], 0.0),
                (vec![1.0, 2.0], 0.0),
            ],
            2,
            1,
        );
        let q = Quantizer::from_schema(&ds.schema);
        let idx = KnnIndex::fit(
            &ds,
            &self_predictions(&ds),
            &q,
            KnnConfig {
                k: Some(2),
                ..KnnConfig::default()
            },
        )
        .unwrap();
        assert_eq!(idx.d_ref[0][0], Some(0.0));
        // query at the training point: mean distance 0 -> validity 1
        let rep = idx
            .validity(&FeatureVector(vec![1.0, 2.0]), &OutputVector(vec![0.0]))
            .unwrap();
        assert_eq!(rep.outputs[0].value(), Some(1.0));
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<(Vec<f64>, f64)> = (0..40)
            .map(|i| (vec![rng.gen::<f64>(), rng.gen::<f64>()], (i % 2) as f64))
            .collect();
        let ds = dataset(rows, 2, 2);
        let q = Quantizer::from_schema(&ds.schema);
        let a = KnnIndex::fit(&ds, &self_predictions(&ds), &q, KnnConfig::default()).unwrap();
        let b = KnnIndex::fit(&ds, &self_predictions(&ds), &q, KnnConfig::default()).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn reference_distance_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<(Vec<f64>, f64)> = (0..100)
            .map(|_| {
                (
                    vec![rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0],
                    (rng.gen::<f64>() * 2.0).floor(),
                )
            })
            .collect();
        let ds = dataset(rows, 2, 2);
        let q = Quantizer::from_schema(&ds.schema);
        let idx = KnnIndex::fit(&ds, &self_predictions(&ds), &q, KnnConfig::default()).unwrap();

        // independent recomputation from the standardized matrix
        for cell in 0..2 {
            let members: Vec<usize> = (0..idx.n_rows)
                .filter(|&r| idx.assignments[r][0] == cell)
                .collect();
            let mut row_means: Vec<f64> = members
                .iter()
                .map(|&probe| {
                    let pq = &idx.features[probe * 2..probe * 2 + 2];
                    let mut ds: Vec<f64> = members
                        .iter()
                        .filter(|&&r| r != probe)
                        .map(|&r| distance(pq, &idx.features[r * 2..r * 2 + 2]))
                        .collect();
                    ds.sort_by(|a, b| a.total_cmp(b));
                    ds[..idx.k].iter().sum::<f64>() / idx.k as f64
                })
                .collect();
            let expected = median(&mut row_means);
            assert_eq!(idx.d_ref[0][cell], Some(expected));
        }
    }

    #[test]
    fn mean_distance_equal_to_reference_gives_half() {
        // two rows at 0 and 2: standardized to -1 and 1, mutual distance 2,
        // d_ref = 2; a query standardized at 3 has nearest distance 2
        let ds = dataset(vec![(vec![0.0], 0.0), (vec![2.0], 0.0)], 1, 1);
        let q = Quantizer::from_schema(&ds.schema);
        let idx = KnnIndex::fit(&ds, &self_predictions(&ds), &q, KnnConfig::default()).unwrap();
        assert_eq!(idx.k, 1);
        assert_eq!(idx.d_ref[0][0], Some(2.0));
        let raw = idx.means[0] + 3.0 * idx.stds[0];
        let rep = idx
            .validity(&FeatureVector(vec![raw]), &OutputVector(vec![0.0]))
            .unwrap();
        assert!((rep.outputs[0].value().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn insufficient_cell_population() {
        let ds = dataset(
            vec![(vec![0.0, 0.0], 0.0), (vec![1.0, 1.0], 0.0), (vec![0.5, 0.5], 1.0)],
            2,
            2,
        );
        let q = Quantizer::from_schema(&ds.schema);
        // k defaults to 2 features; cell 1 holds a single row
        let idx = KnnIndex::fit(&ds, &self_predictions(&ds), &q, KnnConfig::default()).unwrap();
        let rep = idx
            .validity(&FeatureVector(vec![0.5, 0.5]), &OutputVector(vec![1.0]))
            .unwrap();
        assert!(matches!(
            rep.outputs[0],
            KnnOutputReport::InsufficientData { .. }
        ));
        assert_eq!(rep.overall, None);
    }

    #[test]
    fn validity_decreases_with_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<(Vec<f64>, f64)> =
            (0..50).map(|_| (vec![rng.gen(), rng.gen()], 0.0)).collect();
        let ds = dataset(rows, 2, 1);
        let q = Quantizer::from_schema(&ds.schema);
        let idx = KnnIndex::fit(&ds, &self_predictions(&ds), &q, KnnConfig::default()).unwrap();
        let mut prev = f64::INFINITY;
        for step in 0..6 {
            let offset = 0.5 + step as f64 * 2.0;
            let rep = idx
                .validity(
                    &FeatureVector(vec![offset, offset]),
                    &OutputVector(vec![0.0]),
                )
                .unwrap();
            let v = rep.outputs[0].value().unwrap();
            assert!(v > 0.0 && v <= 1.0);
            assert!(v < prev, "validity not decreasing at step {step}");
            prev = v;
        }
    }

    #[test]
    fn scale_invariance_of_one_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base: Vec<(Vec<f64>, f64)> =
            (0..30).map(|_| (vec![rng.gen(), rng.gen()], 0.0)).collect();
        let scaled: Vec<(Vec<f64>, f64)> = base
            .iter()
            .map(|(f, y)| (vec![f[0] * 1000.0, f[1]], *y))
            .collect();
        let ds_a = dataset(base, 2, 1);
        let ds_b = dataset(scaled, 2, 1);
        let qa = Quantizer::from_schema(&ds_a.schema);
        let a = KnnIndex::fit(&ds_a, &self_predictions(&ds_a), &qa, KnnConfig::default()).unwrap();
        let b = KnnIndex::fit(&ds_b, &self_predictions(&ds_b), &qa, KnnConfig::default()).unwrap();
        let ra = a
            .validity(&FeatureVector(vec![0.3, 0.7]), &OutputVector(vec![0.0]))
            .unwrap();
        let rb = b
            .validity(&FeatureVector(vec![300.0, 0.7]), &OutputVector(vec![0.0]))
            .unwrap();
        let va = ra.outputs[0].value().unwrap();
        let vb = rb.outputs[0].value().unwrap();
        assert!((va - vb).abs() < 1e-9, "{va} vs {vb}");
    }

    #[test]
    fn global_scope_reports_label_agreement() {
        // two tight clusters with distinct labels
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push((vec![0.0 + i as f64 * 0.01], 0.0));
            rows.push((vec![10.0 + i as f64 * 0.01], 1.0));
        }
        let ds = dataset(rows, 1, 2);
        let q = Quantizer::from_schema(&ds.schema);
        let idx = KnnIndex::fit(
            &ds,
            &self_predictions(&ds),
            &q,
            KnnConfig {
                k: Some(5),
                scope: NeighborScope::Global,
                ..KnnConfig::default()
            },
        )
        .unwrap();
        let near_zero = idx
            .validity(&FeatureVector(vec![0.05]), &OutputVector(vec![0.0]))
            .unwrap();
        assert_eq!(near_zero.outputs[0].value(), Some(1.0));
        let wrong_label = idx
            .validity(&FeatureVector(vec![0.05]), &OutputVector(vec![1.0]))
            .unwrap();
        assert_eq!(wrong_label.outputs[0].value(), Some(0.0));
    }

    #[test]
    fn serialization_round_trip() {
        let ds = dataset(
            vec![(vec![0.0, 1.0], 0.0), (vec![2.0, 3.0], 0.0), (vec![4.0, 5.0], 0.0)],
            2,
            1,
        );
        let q = Quantizer::from_schema(&ds.schema);
        let idx = KnnIndex::fit(&ds, &self_predictions(&ds), &q, KnnConfig::default()).unwrap();
        let text = idx.to_json().unwrap();
        let back = KnnIndex::from_json(&text).unwrap();
        assert_eq!(idx, back);
        assert!(text.contains("\"kind\":\"knn\""));
    }

    #[test]
    fn k_larger_than_training_size_errors() {
        let ds = dataset(vec![(vec![0.0], 0.0), (vec![1.0], 0.0)], 1, 1);
        let q = Quantizer::from_schema(&ds.schema);
        assert!(KnnIndex::fit(
            &ds,
            &self_predictions(&ds),
            &q,
            KnnConfig {
                k: Some(5),
                ..KnnConfig::default()
            }
        )
        .is_err());
    }
}
