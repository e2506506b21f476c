//! Online, explainable validation of machine-learning model outputs.
//!
//! Given a trained predictor and its training data, every prediction is
//! scored with a validity value in [0,1]. The main validator conditions
//! per-feature histograms on the quantized model output; alternatives are
//! an exact kNN backprojection over the training set and an unconditional
//! input-density baseline. All three expose per-feature terms so a
//! rejection can be traced to the input features that caused it.

pub mod bank;
pub mod bishop;
pub mod data;
pub mod error;
pub mod hist;
pub mod knn;
pub mod predictor;
pub mod quantizer;
pub mod report;
pub mod schema;
pub mod synth;

pub use bank::{
    validity, validity_all, Aggregation, BankConfig, ConditionOn, ConditionalBank, QualityMode,
    ValidityReport,
};
pub use bishop::DensityBank;
pub use data::{ingest_csv, split, Dataset, FeatureVector, OutputVector, RowReader, SplitSpec};
pub use error::{Error, Result};
pub use hist::{jaccard, Histogram};
pub use knn::{KnnConfig, KnnIndex, KnnReport};
pub use predictor::{fit_predict_builtin, load_external, PredictionSet};
pub use quantizer::Quantizer;
pub use report::{evaluate, EvalSummary};
pub use schema::{Schema, TaskKind};
