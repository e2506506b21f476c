//! Dataset ingestion and splitting. Rows with any missing or unparseable
//! cell in a schema column are dropped whole and counted.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Schema, TaskKind};

/// One sensor frame: a fixed-length vector of finite feature values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Model outputs for one row: real values for regression, integer class
/// indices (stored as f64) for classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputVector(pub Vec<f64>);

impl OutputVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: Schema,
    pub rows: Vec<(FeatureVector, OutputVector)>,
    /// Where the rows came from and how many were dropped during ingestion.
    pub source: Option<String>,
    pub dropped_rows: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Column positions of the schema's features and outputs within a CSV header.
#[derive(Debug, Clone)]
pub struct ColumnMap {
    pub feature_cols: Vec<usize>,
    pub output_cols: Vec<usize>,
}

impl ColumnMap {
    pub fn from_header(schema: &Schema, header: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| -> Result<usize> {
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
        };
        let feature_cols = schema
            .features
            .iter()
            .map(|n| find(n))
            .collect::<Result<Vec<_>>>()?;
        let output_cols = schema
            .outputs
            .iter()
            .map(|o| find(&o.name))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            feature_cols,
            output_cols,
        })
    }
}

fn parse_cell(raw: &str) -> Option<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return None;
    }
    let v: f64 = trimmed.parse().ok()?;
    v.is_finite().then_some(v)
}

/// Parses one CSV record against the schema. `None` means the row is
/// dropped (missing cell, non-numeric token, non-finite value, or a
/// classification label outside [0, classes)).
pub fn parse_row(
    schema: &Schema,
    cols: &ColumnMap,
    record: &csv::StringRecord,
) -> Option<(FeatureVector, OutputVector)> {
    let mut features = Vec::with_capacity(cols.feature_cols.len());
    for &c in &cols.feature_cols {
        features.push(parse_cell(record.get(c)?)?);
    }
    let mut outputs = Vec::with_capacity(cols.output_cols.len());
    for (j, &c) in cols.output_cols.iter().enumerate() {
        let v = parse_cell(record.get(c)?)?;
        if let TaskKind::Classification { classes } = schema.outputs[j].task {
            if v.fract() != 0.0 || v < 0.0 || v >= classes as f64 {
                return None;
            }
        }
        outputs.push(v);
    }
    Some((FeatureVector(features), OutputVector(outputs)))
}

/// Streaming row source over a CSV reader. Yields retained rows one at a
/// time; memory use is independent of file length.
pub struct RowReader<R: Read> {
    reader: csv::Reader<R>,
    schema: Schema,
    cols: ColumnMap,
    dropped: usize,
}

impl<R: Read> RowReader<R> {
    pub fn new(inner: R, schema: Schema) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(inner);
        let header = reader.headers()?.clone();
        let cols = ColumnMap::from_header(&schema, &header)?;
        Ok(Self {
            reader,
            schema,
            cols,
            dropped: 0,
        })
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }
}

impl RowReader<std::fs::File> {
    pub fn open(path: impl AsRef<Path>, schema: Schema) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::new(file, schema)
    }
}

impl<R: Read> Iterator for RowReader<R> {
    type Item = Result<(FeatureVector, OutputVector)>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Err(e) => return Some(Err(e.into())),
                Ok(false) => return None,
                Ok(true) => match parse_row(&self.schema, &self.cols, &record) {
                    Some(row) => return Some(Ok(row)),
                    None => self.dropped += 1,
                },
            }
        }
    }
}

/// Loads a whole CSV file into memory, dropping and counting bad rows.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = RowReader::open(path, schema.clone())?;
    let mut rows = Vec::new();
    for row in &mut reader {
        rows.push(row?);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!(
            "no rows retained from {}",
            path.display()
        )));
    }
    Ok(Dataset {
        schema: schema.clone(),
        rows,
        source: Some(path.display().to_string()),
        dropped_rows: reader.dropped(),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.5,
            seed: 0,
        }
    }
}

/// Seeded shuffle then cut: |train| = round(fraction * |ds|).
pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    if ds.rows.len() < 2 {
        return Err(Error::Data("split needs at least 2 rows".into()));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Data("train fraction must be in (0, 1)".into()));
    }
    let mut indices: Vec<usize> = (0..ds.rows.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    indices.shuffle(&mut rng);
    let n_train = (spec.train_fraction * ds.rows.len() as f64).round() as usize;
    let n_train = n_train.clamp(1, ds.rows.len() - 1);
    let take = |idx: &[usize]| Dataset {
        schema: ds.schema.clone(),
        rows: idx.iter().map(|&i| ds.rows[i].clone()).collect(),
        source: ds.source.clone(),
        dropped_rows: 0,
    };
    Ok((take(&indices[..n_train]), take(&indices[n_train..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::OutputSpec;
    use std::io::Write;

    fn schema_2f_1c() -> Schema {
        Schema {
            features: vec!["a".into(), "b".into()],
            outputs: vec![OutputSpec {
                name: "y".into(),
                task: TaskKind::Classification { classes: 4 },
            }],
        }
    }

    fn write_csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_clean_file() {
        let f = write_csv("a,b,y\n1,2,0\n3,4,1\n5,6,2\n");
        let ds = ingest_csv(f.path(), &schema_2f_1c()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dropped_rows, 0);
        assert_eq!(ds.rows[0].0.values(), &[1.0, 2.0]);
        assert_eq!(ds.rows[2].1.values(), &[2.0]);
    }

    #[test]
    fn ingest_drops_rows_with_missing_cells() {
        let f = write_csv("a,b,y\n1,2,0\n,2,1\n3,4,2\n5,,3\n7,8,0\n");
        let ds = ingest_csv(f.path(), &schema_2f_1c()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dropped_rows, 2);
    }

    #[test]
    fn ingest_drops_non_numeric_and_non_finite() {
        let f = write_csv("a,b,y\n1,2,0\nxyz,2,0\nNaN,3,0\ninf,4,0\n2,2,1\n");
        let ds = ingest_csv(f.path(), &schema_2f_1c()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dropped_rows, 3);
        for (fv, _) in &ds.rows {
            assert!(fv.values().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn ingest_drops_out_of_range_class_labels() {
        let f = write_csv("a,b,y\n1,2,0\n1,2,4\n1,2,-1\n1,2,1.5\n");
        let ds = ingest_csv(f.path(), &schema_2f_1c()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.dropped_rows, 3);
    }

    #[test]
    fn ingest_missing_file_errors() {
        assert!(ingest_csv("/nonexistent/nope.csv", &schema_2f_1c()).is_err());
    }

    #[test]
    fn ingest_header_mismatch_errors() {
        let f = write_csv("a,wrong,y\n1,2,0\n");
        assert!(ingest_csv(f.path(), &schema_2f_1c()).is_err());
    }

    #[test]
    fn ingest_extra_columns_ignored() {
        let f = write_csv("junk,a,b,y,more\nq,1,2,0,w\n");
        let ds = ingest_csv(f.path(), &schema_2f_1c()).unwrap();
        assert_eq!(ds.len(), 1);
    }

    fn toy_dataset(n: usize) -> Dataset {
        Dataset {
            schema: schema_2f_1c(),
            rows: (0..n)
                .map(|i| {
                    (
                        FeatureVector(vec![i as f64, -(i as f64)]),
                        OutputVector(vec![(i % 4) as f64]),
                    )
                })
                .collect(),
            source: None,
            dropped_rows: 0,
        }
    }

    #[test]
    fn split_sizes_round() {
        let ds = toy_dataset(54);
        let (train, test) = split(&ds, SplitSpec::default()).unwrap();
        assert_eq!(train.len(), 27);
        assert_eq!(test.len(), 27);
    }

    #[test]
    fn split_two_rows() {
        let ds = toy_dataset(2);
        let (train, test) = split(
            &ds,
            SplitSpec {
                train_fraction: 0.5,
                seed: 99,
            },
        )
        .unwrap();
        assert_eq!(train.len(), 1);
        assert_eq!(test.len(), 1);
    }

    #[test]
    fn split_deterministic_per_seed() {
        let ds = toy_dataset(100);
        let spec = SplitSpec {
            train_fraction: 0.5,
            seed: 7,
        };
        let (a1, b1) = split(&ds, spec).unwrap();
        let (a2, b2) = split(&ds, spec).unwrap();
        assert_eq!(a1.rows, a2.rows);
        assert_eq!(b1.rows, b2.rows);
        let (a3, _) = split(
            &ds,
            SplitSpec {
                train_fraction: 0.5,
                seed: 8,
            },
        )
        .unwrap();
        assert_ne!(a1.rows, a3.rows);
    }

    #[test]
    fn split_rejects_tiny_or_bad_fraction() {
        assert!(split(&toy_dataset(1), SplitSpec::default()).is_err());
        let ds = toy_dataset(10);
        assert!(split(
            &ds,
            SplitSpec {
                train_fraction: 1.0,
                seed: 0
            }
        )
        .is_err());
    }
}
