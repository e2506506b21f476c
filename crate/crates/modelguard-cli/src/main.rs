//! Command line surface: fit validators, stream-validate predictions, and
//! emit evaluation reports and synthetic fixtures.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 schema mismatch.

use std::io::{BufRead, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use modelguard::bank::{BankConfig, ConditionalBank, QualityMode};
use modelguard::bishop::DensityBank;
use modelguard::data::{ingest_csv, split, RowReader, SplitSpec};
use modelguard::error::Error;
use modelguard::knn::{KnnConfig, KnnIndex};
use modelguard::predictor::{fit_predict_builtin, load_external, save_csv, PredictionSet};
use modelguard::quantizer::Quantizer;
use modelguard::report::evaluate;
use modelguard::schema::Schema;
use modelguard::synth::{generate, write_csv, SynthSpec};
use modelguard::OutputVector;

#[derive(Parser)]
#[command(name = "modelguard", version, about = "Online validation of ML model outputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Schema JSON file naming feature/output columns and quantizer setup.
    #[arg(long, global = true)]
    schema: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Quality mode for the probabilistic validator.
    #[arg(long, global = true)]
    mode: Option<Mode>,

    /// Decision threshold on validity.
    #[arg(long = "threshold-validity", global = true, default_value_t = 0.6)]
    threshold_validity: f64,

    /// Accepted absolute error for regression outputs, in enlarged units.
    #[arg(long = "threshold-error", global = true, default_value_t = 0.1)]
    threshold_error: f64,

    /// Interior histogram bins per feature.
    #[arg(long, global = true, default_value_t = 32)]
    bins: usize,

    /// Neighbor count for the kNN validator (default: feature count).
    #[arg(long, global = true)]
    k: Option<usize>,

    /// Minimum training samples per cell before it emits a validity.
    #[arg(long = "min-count", global = true, default_value_t = 5)]
    min_count: u64,

    /// Comma-separated per-output weights for the overall validity.
    #[arg(long, global = true, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Simplified,
    Online,
}

#[derive(Clone, Copy, ValueEnum)]
enum Validator {
    Prob,
    Knn,
    Bishop,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a validator against training data and write its artifact.
    Fit {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, value_enum)]
        validator: Validator,
        /// Training predictions CSV; defaults to the ground-truth outputs,
        /// which equals what the builtin predictor returns on its own
        /// training rows.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream rows through a fitted validator, one JSON report per line.
    Validate {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Output JSON-lines path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a validity stream against predictions and ground truth.
    Report {
        #[arg(long)]
        validities: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Prefix for summary JSON and per-sample plot-data CSVs.
        #[arg(long = "out-prefix")]
        out_prefix: Option<String>,
    },
    /// Generate a seeded synthetic Gaussian-cluster dataset.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shuffle and split a dataset into train and test CSVs.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        fraction: f64,
        #[arg(long = "out-train")]
        out_train: PathBuf,
        #[arg(long = "out-test")]
        out_test: PathBuf,
    },
    /// Predict with the builtin 1-NN model and write predictions CSV.
    Predict {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::SchemaMismatch => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn require_schema(cli: &Cli) -> Result<Schema, Error> {
    let path = cli
        .schema
        .as_ref()
        .ok_or_else(|| Error::Schema("--schema is required for this command".into()))?;
    Schema::from_file(&path.display().to_string())
}

fn load_predictions(
    path: &Option<PathBuf>,
    ds: &modelguard::Dataset,
) -> Result<PredictionSet, Error> {
    match path {
        Some(p) => load_external(p, ds),
        None => Ok(PredictionSet {
            rows: ds.rows.iter().map(|(_, y)| y.clone()).collect(),
            provenance: modelguard::predictor::Provenance::Builtin,
        }),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Fit {
            train,
            validator,
            predictions,
            out,
        } => cmd_fit(&cli, train, *validator, predictions, out),
        Command::Validate {
            artifact,
            data,
            predictions,
            out,
        } => cmd_validate(&cli, artifact, data, predictions, out.as_ref()),
        Command::Report {
            validities,
            data,
            predictions,
            out_prefix,
        } => cmd_report(&cli, validities, data, predictions, out_prefix.as_deref()),
        Command::Synth { spec, out } => cmd_synth(&cli, spec, out),
        Command::Split {
            data,
            fraction,
            out_train,
            out_test,
        } => cmd_split(&cli, data, *fraction, out_train, out_test),
        Command::Predict { train, data, out } => cmd_predict(&cli, train, data, out),
    }
}

fn cmd_fit(
    cli: &Cli,
    train_path: &PathBuf,
    validator: Validator,
    predictions: &Option<PathBuf>,
    out: &PathBuf,
) -> Result<(), Error> {
    let schema = require_schema(cli)?;
    let train = ingest_csv(train_path, &schema)?;
    let quantizer = Quantizer::from_schema(&schema);
    let preds = load_predictions(predictions, &train)?;
    let artifact = match validator {
        Validator::Prob => {
            let config = BankConfig {
                bins: cli.bins,
                min_count: cli.min_count,
                mode: match cli.mode {
                    Some(Mode::Online) => QualityMode::Online,
                    _ => QualityMode::Simplified,
                },
                threshold: cli.threshold_validity,
                ..BankConfig::default()
            };
            let bank = ConditionalBank::fit(&train, &preds.rows, &quantizer, config)?;
            let json = bank.to_json()?;
            let occupied = bank.cells.iter().filter(|c| c.count > 0).count();
            let insufficient = bank
                .cells
                .iter()
                .filter(|c| c.count < bank.config.min_count)
                .count();
            print_fit_report(&json, train.len(), bank.cells.len(), occupied, insufficient);
            json
        }
        Validator::Knn => {
            let config = KnnConfig {
                k: cli.k,
                threshold: cli.threshold_validity,
                ..KnnConfig::default()
            };
            let index = KnnIndex::fit(&train, &preds.rows, &quantizer, config)?;
            let json = index.to_json()?;
            let cells = index.d_ref.iter().map(Vec::len).sum::<usize>();
            let insufficient = index
                .d_ref
                .iter()
                .flatten()
                .filter(|d| d.is_none())
                .count();
            print_fit_report(&json, train.len(), cells, cells - insufficient, insufficient);
            json
        }
        Validator::Bishop => {
            let bank = DensityBank::fit(&train, cli.bins, cli.threshold_validity)?;
            let json = bank.to_json()?;
            print_fit_report(&json, train.len(), bank.hists.len(), bank.hists.len(), 0);
            json
        }
    };
    std::fs::write(out, artifact)?;
    Ok(())
}

fn print_fit_report(json: &str, rows: usize, cells: usize, occupied: usize, insufficient: usize) {
    println!(
        "{}",
        serde_json::json!({
            "training_rows": rows,
            "cells": cells,
            "occupied_cells": occupied,
            "insufficient_cells": insufficient,
            "artifact_bytes": json.len(),
        })
    );
}

/// Streaming prediction reader aligned with the retained data rows.
struct PredictionReader {
    reader: csv::Reader<std::fs::File>,
    m: usize,
    row: usize,
}

impl PredictionReader {
    fn open(path: &PathBuf, m: usize) -> Result<Self, Error> {
        let mut reader = csv::Reader::from_path(path)?;
        let header = reader.headers()?.clone();
        for j in 0..m {
            if header.get(j).map(str::trim) != Some(format!("out_{j}").as_str()) {
                return Err(Error::Schema(format!(
                    "predictions header must be out_0..out_{}",
                    m - 1
                )));
            }
        }
        Ok(Self { reader, m, row: 0 })
    }

    fn next_row(&mut self) -> Result<Option<OutputVector>, Error> {
        let mut record = csv::StringRecord::new();
        if !self.reader.read_record(&mut record)? {
            return Ok(None);
        }
        let mut values = Vec::with_capacity(self.m);
        for j in 0..self.m {
            let raw = record
                .get(j)
                .ok_or_else(|| Error::Data(format!("prediction row {} too short", self.row)))?;
            let v: f64 = raw.trim().parse().map_err(|_| {
                Error::Data(format!("unparseable prediction '{raw}' at row {}", self.row))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite prediction at row {}",
                    self.row
                )));
            }
            values.push(v);
        }
        self.row += 1;
        Ok(Some(OutputVector(values)))
    }
}

enum Artifact {
    Prob(ConditionalBank),
    Knn(KnnIndex),
    Bishop(DensityBank),
}

fn load_artifact(path: &PathBuf) -> Result<Artifact, Error> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    match value.get("kind").and_then(|k| k.as_str()) {
        Some("conditional") => Ok(Artifact::Prob(ConditionalBank::from_json(&text)?)),
        Some("knn") => Ok(Artifact::Knn(KnnIndex::from_json(&text)?)),
        Some("unconditional") => Ok(Artifact::Bishop(DensityBank::from_json(&text)?)),
        other => Err(Error::Data(format!("unknown artifact kind {other:?}"))),
    }
}

fn cmd_validate(
    cli: &Cli,
    artifact_path: &PathBuf,
    data: &PathBuf,
    predictions: &PathBuf,
    out: Option<&PathBuf>,
) -> Result<(), Error> {
    let schema = require_schema(cli)?;
    let mut artifact = load_artifact(artifact_path)?;
    let expected_hash = match &artifact {
        Artifact::Prob(b) => b.schema_hash.clone(),
        Artifact::Knn(i) => i.schema_hash.clone(),
        Artifact::Bishop(b) => b.schema_hash.clone(),
    };
    if expected_hash != schema.hash() {
        return Err(Error::SchemaMismatch);
    }
    if let (Artifact::Prob(bank), Some(mode)) = (&mut artifact, cli.mode) {
        bank.config.mode = match mode {
            Mode::Simplified => QualityMode::Simplified,
            Mode::Online => QualityMode::Online,
        };
    }

    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    };
    let mut rows = RowReader::open(data, schema.clone())?;
    let mut preds = PredictionReader::open(predictions, schema.output_count())?;
    let weights = cli.weights.clone();
    if let Some(w) = &weights {
        if w.len() != schema.output_count() {
            return Err(Error::LengthMismatch {
                expected: schema.output_count(),
                got: w.len(),
            });
        }
    }

    // online mode accumulates the live distribution bank as it goes
    let mut net = match &artifact {
        Artifact::Prob(bank) if bank.config.mode == QualityMode::Online => {
            Some(ConditionalBank::empty_like(bank))
        }
        _ => None,
    };
    let quantizer = Quantizer::from_schema(&schema);

    for row in &mut rows {
        let (features, _truth) = row?;
        let y_hat = preds.next_row()?.ok_or_else(|| {
            Error::Data("predictions file has fewer rows than the data".into())
        })?;
        let line = match &artifact {
            Artifact::Prob(bank) => {
                if let Some(net) = net.as_mut() {
                    net.observe(&features, &y_hat, &quantizer)?;
                }
                let report = modelguard::bank::validity(
                    bank,
                    net.as_ref(),
                    &features,
                    &y_hat,
                    weights.as_deref(),
                )?;
                serde_json::to_string(&report)?
            }
            Artifact::Knn(index) => {
                let report = index.validity(&features, &y_hat)?;
                serde_json::to_string(&report)?
            }
            Artifact::Bishop(bank) => {
                let report = bank.validity(&features)?;
                // same line shape as the other validators
                serde_json::to_string(&serde_json::json!({
                    "outputs": [{
                        "status": "valid",
                        "validity": report.validity,
                        "accepted": report.accepted,
                        "masses": report.masses,
                    }],
                    "overall": report.validity,
                    "clamped": false,
                }))?
            }
        };
        writeln!(sink, "{line}")?;
    }
    if preds.next_row()?.is_some() {
        return Err(Error::Data(
            "predictions file has more rows than the data".into(),
        ));
    }
    sink.flush()?;
    Ok(())
}

/// Pulls the per-output validity values out of one JSON-lines record.
fn parse_validity_line(line: &str, m: usize) -> Result<Vec<Option<f64>>, Error> {
    let value: serde_json::Value = serde_json::from_str(line)?;
    let outputs = value
        .get("outputs")
        .and_then(|o| o.as_array())
        .ok_or_else(|| Error::Data("validity line has no outputs array".into()))?;
    let mut result = Vec::with_capacity(m);
    for j in 0..m.min(outputs.len()) {
        result.push(outputs[j].get("validity").and_then(|v| v.as_f64()));
    }
    while result.len() < m {
        result.push(None);
    }
    Ok(result)
}

fn cmd_report(
    cli: &Cli,
    validities: &PathBuf,
    data: &PathBuf,
    predictions: &PathBuf,
    out_prefix: Option<&str>,
) -> Result<(), Error> {
    let schema = require_schema(cli)?;
    let ds = ingest_csv(data, &schema)?;
    let preds = load_external(predictions, &ds)?;
    let file = std::fs::File::open(validities)?;
    let mut vals = Vec::with_capacity(ds.len());
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        vals.push(parse_validity_line(&line, schema.output_count())?);
    }
    if vals.len() != ds.len() {
        return Err(Error::LengthMismatch {
            expected: ds.len(),
            got: vals.len(),
        });
    }
    let truth: Vec<OutputVector> = ds.rows.iter().map(|(_, y)| y.clone()).collect();
    let summary = evaluate(
        &schema,
        &truth,
        &preds.rows,
        &vals,
        cli.threshold_validity,
        cli.threshold_error,
    )?;
    println!("{summary}");
    if let Some(prefix) = out_prefix {
        std::fs::write(
            format!("{prefix}summary.json"),
            serde_json::to_string_pretty(&summary)?,
        )?;
        for out in &summary.outputs {
            for (suffix, want_correct) in [("correct", true), ("incorrect", false)] {
                let mut w = BufWriter::new(std::fs::File::create(format!(
                    "{prefix}{suffix}_{}.csv",
                    out.name
                ))?);
                writeln!(w, "row,validity,error")?;
                for s in out.samples.iter().filter(|s| s.correct == want_correct) {
                    let v = s
                        .validity
                        .map(|v| v.to_string())
                        .unwrap_or_else(|| "".into());
                    writeln!(w, "{},{},{}", s.row, v, s.error)?;
                }
            }
        }
    }
    Ok(())
}

fn cmd_synth(cli: &Cli, spec_path: &PathBuf, out: &PathBuf) -> Result<(), Error> {
    let text = std::fs::read_to_string(spec_path)?;
    let spec = SynthSpec::from_json(&text)?;
    let ds = generate(&spec, cli.seed)?;
    let mut w = BufWriter::new(std::fs::File::create(out)?);
    write_csv(&ds, &mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_split(
    cli: &Cli,
    data: &PathBuf,
    fraction: f64,
    out_train: &PathBuf,
    out_test: &PathBuf,
) -> Result<(), Error> {
    let schema = require_schema(cli)?;
    let ds = ingest_csv(data, &schema)?;
    let (train, test) = split(
        &ds,
        SplitSpec {
            train_fraction: fraction,
            seed: cli.seed,
        },
    )?;
    for (part, path) in [(&train, out_train), (&test, out_test)] {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        write_csv(part, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_predict(cli: &Cli, train: &PathBuf, data: &PathBuf, out: &PathBuf) -> Result<(), Error> {
    let schema = require_schema(cli)?;
    let train_ds = ingest_csv(train, &schema)?;
    let test_ds = ingest_csv(data, &schema)?;
    let preds = fit_predict_builtin(&train_ds, &test_ds)?;
    let mut w = BufWriter::new(std::fs::File::create(out)?);
    save_csv(&preds, &mut w)?;
    w.flush()?;
    Ok(())
}
