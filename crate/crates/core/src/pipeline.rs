//! File formats shared across the pipeline stages: tile manifests, split
//! plans, training logs, prediction and feature tables, and corpus emission.
//!
//! All text formats are deterministic byte-for-byte given equal inputs, and
//! floats are written in Rust's shortest round-trip form so read-back is
//! bit-exact.

use crate::eval::{MetricsReport, SplitPlan, TileRecord};
use crate::nn::{EpochStats, PredictionRecord};
use crate::synth::SynthCorpus;
use crate::tiler::serialize_annotations_json;
use crate::tmb::TmbLabel;
use crate::types::{PatternClass, PATTERN_COUNT};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("{path}:{line}: {message}")]
    MalformedRow {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Malformed(String),
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::Io(path.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|e| PipelineError::Io(path.display().to_string(), e))
}

fn row_err(path: &Path, line: usize, message: impl Into<String>) -> PipelineError {
    PipelineError::MalformedRow {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Splits CSV text into rows, checking the exact header and skipping blanks.
fn csv_rows<'t>(
    text: &'t str,
    header: &str,
    path: &Path,
) -> Result<Vec<(usize, Vec<&'t str>)>, PipelineError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim_end() == header => {}
        _ => return Err(row_err(path, 1, format!("expected header {header:?}"))),
    }
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(row_err(
                path,
                i + 1,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        rows.push((i + 1, fields));
    }
    Ok(rows)
}

fn parse_field<T: std::str::FromStr>(
    field: &str,
    what: &str,
    path: &Path,
    line: usize,
) -> Result<T, PipelineError> {
    field
        .parse()
        .map_err(|_| row_err(path, line, format!("bad {what}: {field:?}")))
}

pub const MANIFEST_HEADER: &str = "slide_id,patient_id,x,y,size,label";

pub fn manifest_to_csv(records: &[TileRecord]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.slide_id,
            r.patient_id,
            r.x,
            r.y,
            r.size,
            r.label.name()
        )
        .unwrap();
    }
    out
}

pub fn manifest_from_csv(text: &str, path: &Path) -> Result<Vec<TileRecord>, PipelineError> {
    let mut records = Vec::new();
    for (line, f) in csv_rows(text, MANIFEST_HEADER, path)? {
        records.push(TileRecord {
            slide_id: f[0].to_string(),
            patient_id: f[1].to_string(),
            x: parse_field(f[2], "x", path, line)?,
            y: parse_field(f[3], "y", path, line)?,
            size: parse_field(f[4], "size", path, line)?,
            label: parse_field(f[5], "label", path, line)?,
        });
    }
    Ok(records)
}

pub fn write_manifest_csv(path: &Path, records: &[TileRecord]) -> Result<(), PipelineError> {
    write_text(path, &manifest_to_csv(records))
}

pub fn read_manifest_csv(path: &Path) -> Result<Vec<TileRecord>, PipelineError> {
    manifest_from_csv(&read_text(path)?, path)
}

pub fn write_split_plan(path: &Path, plan: &SplitPlan) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(plan)
        .map_err(|e| PipelineError::Malformed(e.to_string()))?;
    write_text(path, &text)
}

pub fn read_split_plan(path: &Path) -> Result<SplitPlan, PipelineError> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| PipelineError::Malformed(format!("{}: {e}", path.display())))
}

pub const TRAINING_LOG_HEADER: &str = "epoch,train_loss,val_loss,val_macro_f1";

pub fn training_log_csv(epochs: &[EpochStats]) -> String {
    let mut out = String::from(TRAINING_LOG_HEADER);
    out.push('\n');
    for e in epochs {
        writeln!(
            out,
            "{},{},{},{}",
            e.epoch, e.train_loss, e.val_loss, e.val_macro_f1
        )
        .unwrap();
    }
    out
}

pub const PREDICTIONS_HEADER: &str = "slide_id,x,y,p0,p1,p2,p3,p4,p5,predicted";

pub fn predictions_to_csv(records: &[PredictionRecord]) -> String {
    let mut out = String::from(PREDICTIONS_HEADER);
    out.push('\n');
    for r in records {
        write!(out, "{},{},{}", r.slide_id, r.x, r.y).unwrap();
        for p in &r.probabilities {
            write!(out, ",{p}").unwrap();
        }
        writeln!(out, ",{}", r.predicted.name()).unwrap();
    }
    out
}

pub fn predictions_from_csv(
    text: &str,
    path: &Path,
) -> Result<Vec<PredictionRecord>, PipelineError> {
    let mut records = Vec::new();
    for (line, f) in csv_rows(text, PREDICTIONS_HEADER, path)? {
        let mut probabilities = Vec::with_capacity(PATTERN_COUNT);
        for (k, field) in f[3..3 + PATTERN_COUNT].iter().enumerate() {
            probabilities.push(parse_field(field, &format!("p{k}"), path, line)?);
        }
        records.push(PredictionRecord {
            slide_id: f[0].to_string(),
            x: parse_field(f[1], "x", path, line)?,
            y: parse_field(f[2], "y", path, line)?,
            probabilities,
            predicted: parse_field(f[9], "predicted", path, line)?,
        });
    }
    Ok(records)
}

pub fn write_predictions_csv(
    path: &Path,
    records: &[PredictionRecord],
) -> Result<(), PipelineError> {
    write_text(path, &predictions_to_csv(records))
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRecord>, PipelineError> {
    predictions_from_csv(&read_text(path)?, path)
}

/// Per-slide pattern composition row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideFeatures {
    pub slide_id: String,
    pub patient_id: String,
    pub fractions: [f64; PATTERN_COUNT],
}

pub const FEATURES_HEADER: &str =
    "slide_id,patient_id,lepidic,acinar,papillary,micropapillary,solid,normal";

pub fn features_to_csv(rows: &[SlideFeatures]) -> String {
    let mut out = String::from(FEATURES_HEADER);
    out.push('\n');
    for r in rows {
        write!(out, "{},{}", r.slide_id, r.patient_id).unwrap();
        for v in &r.fractions {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn features_from_csv(text: &str, path: &Path) -> Result<Vec<SlideFeatures>, PipelineError> {
    let mut rows = Vec::new();
    for (line, f) in csv_rows(text, FEATURES_HEADER, path)? {
        let mut fractions = [0.0; PATTERN_COUNT];
        for (k, field) in f[2..2 + PATTERN_COUNT].iter().enumerate() {
            fractions[k] = parse_field(field, PatternClass::ALL[k].name(), path, line)?;
        }
        rows.push(SlideFeatures {
            slide_id: f[0].to_string(),
            patient_id: f[1].to_string(),
            fractions,
        });
    }
    Ok(rows)
}

pub fn write_features_csv(path: &Path, rows: &[SlideFeatures]) -> Result<(), PipelineError> {
    write_text(path, &features_to_csv(rows))
}

pub fn read_features_csv(path: &Path) -> Result<Vec<SlideFeatures>, PipelineError> {
    features_from_csv(&read_text(path)?, path)
}

/// Joins slide features with patient-level labels; every slide's patient must
/// be labeled.
pub fn join_features_with_labels(
    features: &[SlideFeatures],
    labels: &[(String, TmbLabel)],
) -> Result<Vec<([f64; PATTERN_COUNT], TmbLabel)>, PipelineError> {
    let table: std::collections::BTreeMap<&str, TmbLabel> = labels
        .iter()
        .map(|(id, label)| (id.as_str(), *label))
        .collect();
    features
        .iter()
        .map(|f| {
            table
                .get(f.patient_id.as_str())
                .map(|label| (f.fractions, *label))
                .ok_or_else(|| {
                    PipelineError::Malformed(format!(
                        "slide {} has unlabeled patient {}",
                        f.slide_id, f.patient_id
                    ))
                })
        })
        .collect()
}

/// Per-tile entropy row.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyRow {
    pub slide_id: String,
    pub x: u32,
    pub y: u32,
    pub bits_per_pixel: f64,
}

pub const ENTROPY_HEADER: &str = "slide_id,x,y,bits_per_pixel";

pub fn entropy_rows_to_csv(rows: &[EntropyRow]) -> String {
    let mut out = String::from(ENTROPY_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{},{}", r.slide_id, r.x, r.y, r.bits_per_pixel).unwrap();
    }
    out
}

/// Identity sidecar for CLOM files, which do not carry slide or patient ids.
#[derive(Debug, Clone, PartialEq)]
pub struct MapsManifestRow {
    pub slide_id: String,
    pub patient_id: String,
    pub path: String,
}

pub const MAPS_MANIFEST_HEADER: &str = "slide_id,patient_id,path";

pub fn maps_manifest_to_csv(rows: &[MapsManifestRow]) -> String {
    let mut out = String::from(MAPS_MANIFEST_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{}", r.slide_id, r.patient_id, r.path).unwrap();
    }
    out
}

pub fn maps_manifest_from_csv(
    text: &str,
    path: &Path,
) -> Result<Vec<MapsManifestRow>, PipelineError> {
    let rows = csv_rows(text, MAPS_MANIFEST_HEADER, path)?;
    Ok(rows
        .into_iter()
        .map(|(_, f)| MapsManifestRow {
            slide_id: f[0].to_string(),
            patient_id: f[1].to_string(),
            path: f[2].to_string(),
        })
        .collect())
}

pub fn write_maps_manifest(path: &Path, rows: &[MapsManifestRow]) -> Result<(), PipelineError> {
    write_text(path, &maps_manifest_to_csv(rows))
}

pub fn read_maps_manifest(path: &Path) -> Result<Vec<MapsManifestRow>, PipelineError> {
    maps_manifest_from_csv(&read_text(path)?, path)
}

/// Files written for one emitted corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPaths {
    pub nuclei: Vec<PathBuf>,
    pub annotations: Vec<PathBuf>,
    pub truth: PathBuf,
}

/// Writes a generated corpus under `dir`: one nuclei JSON and one annotation
/// JSON per slide, plus the ground-truth tile manifest.
pub fn write_corpus(dir: &Path, corpus: &SynthCorpus) -> Result<CorpusPaths, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::Io(dir.display().to_string(), e))?;
    let mut paths = CorpusPaths {
        nuclei: Vec::new(),
        annotations: Vec::new(),
        truth: dir.join("truth.csv"),
    };
    for (slide, annotations) in corpus.slides.iter().zip(&corpus.annotations) {
        let nuclei_path = dir.join(format!("{}.nuclei.json", slide.slide_id));
        write_text(&nuclei_path, &crate::ingest::serialize_nuclei_json(slide))?;
        paths.nuclei.push(nuclei_path);
        let ann_path = dir.join(format!("{}.annotations.json", slide.slide_id));
        write_text(&ann_path, &serialize_annotations_json(annotations))?;
        paths.annotations.push(ann_path);
    }
    write_manifest_csv(&paths.truth, &corpus.truth)?;
    Ok(paths)
}

/// Plain-text metrics table for standard output.
pub fn metrics_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    writeln!(out, "accuracy   {:.4}", report.accuracy).unwrap();
    writeln!(out, "macro F1   {:.4}", report.macro_f1).unwrap();
    writeln!(out, "macro AUC  {:.4}", report.macro_auc_roc).unwrap();
    writeln!(out, "\n{:<16} {:>8}", "class", "F1").unwrap();
    for class in PatternClass::ALL {
        let f1 = report.per_class_f1[class.index()];
        if report.f1_skipped.contains(&class) {
            writeln!(out, "{:<16} {:>8}", class.name(), "-").unwrap();
        } else {
            writeln!(out, "{:<16} {:>8.4}", class.name(), f1).unwrap();
        }
    }
    writeln!(out, "\nconfusion (row = truth, col = predicted)").unwrap();
    write!(out, "{:<16}", "").unwrap();
    for class in PatternClass::ALL {
        write!(out, " {:>6}", &class.name()[..class.name().len().min(6)]).unwrap();
    }
    out.push('\n');
    for class in PatternClass::ALL {
        write!(out, "{:<16}", class.name()).unwrap();
        for count in &report.confusion_matrix[class.index()] {
            write!(out, " {count:>6}").unwrap();
        }
        out.push('\n');
    }
    out
}
