//! Dataset splitting and metric computation.

use crate::nn::model::PredictionRecord;
use crate::types::{PatternClass, PATTERN_COUNT};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {needed} patients, found {found}")]
    InsufficientPatients { needed: usize, found: usize },
    #[error("stratified test sampling failed after {0} attempts")]
    StratificationFailed(usize),
    #[error("prediction and truth lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
}

/// One row of a labeled tile manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub slide_id: String,
    pub patient_id: String,
    pub x: u32,
    pub y: u32,
    pub size: u32,
    pub label: PatternClass,
}

impl TileRecord {
    /// Stable identifier used in split plans.
    pub fn tile_id(&self) -> String {
        format!("{}:{}:{}:{}", self.slide_id, self.x, self.y, self.size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    PatientLevel,
    TileLevel,
}

/// Assignment of tile ids to train/val/test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub seed: u64,
    pub test_patients: Vec<String>,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

const STRATIFICATION_ATTEMPTS: usize = 1000;

pub(crate) fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 step over the combined value
    let mut z = base
        .wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add(stream)
        .wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn classes_present(records: &[&TileRecord]) -> BTreeSet<usize> {
    records.iter().map(|r| r.label.index()).collect()
}

/// Splits a labeled manifest into train/val/test tile id lists.
///
/// Patient mode holds out whole patients: seeded attempts draw
/// `test_patient_count` patients until the test tiles cover every class the
/// manifest contains, then the remaining patients' tiles are shuffled and
/// split `1 - val_fraction` / `val_fraction`. Tile mode shuffles globally and
/// takes the same proportions at tile granularity (test share =
/// `test_patient_count / patient_count`). Identical inputs give identical
/// plans.
pub fn make_split(
    records: &[TileRecord],
    mode: SplitMode,
    test_patient_count: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<SplitPlan, EvalError> {
    assert!(
        (0.0..1.0).contains(&val_fraction),
        "val_fraction must be in [0, 1)"
    );
    assert!(test_patient_count > 0, "need at least one test patient");
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut patients: Vec<String> = records
        .iter()
        .map(|r| r.patient_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if patients.len() < test_patient_count + 1 {
        return Err(EvalError::InsufficientPatients {
            needed: test_patient_count + 1,
            found: patients.len(),
        });
    }
    let all_classes = classes_present(&records.iter().collect::<Vec<_>>());

    match mode {
        SplitMode::PatientLevel => {
            for attempt in 0..STRATIFICATION_ATTEMPTS {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, attempt as u64));
                patients.shuffle(&mut rng);
                let test_set: BTreeSet<&String> =
                    patients.iter().take(test_patient_count).collect();
                let test_records: Vec<&TileRecord> = records
                    .iter()
                    .filter(|r| test_set.contains(&r.patient_id))
                    .collect();
                if classes_present(&test_records) != all_classes {
                    continue;
                }
                let mut rest: Vec<&TileRecord> = records
                    .iter()
                    .filter(|r| !test_set.contains(&r.patient_id))
                    .collect();
                rest.shuffle(&mut rng);
                let val_count = (rest.len() as f64 * val_fraction).round() as usize;
                let (val, train) = rest.split_at(val_count.min(rest.len()));
                let mut test_patients: Vec<String> =
                    test_set.into_iter().cloned().collect();
                test_patients.sort();
                return Ok(SplitPlan {
                    mode,
                    seed,
                    test_patients,
                    train: train.iter().map(|r| r.tile_id()).collect(),
                    val: val.iter().map(|r| r.tile_id()).collect(),
                    test: test_records.iter().map(|r| r.tile_id()).collect(),
                });
            }
            Err(EvalError::StratificationFailed(STRATIFICATION_ATTEMPTS))
        }
        SplitMode::TileLevel => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
            let mut shuffled: Vec<&TileRecord> = records.iter().collect();
            shuffled.shuffle(&mut rng);
            let test_count = ((records.len() as f64) * (test_patient_count as f64)
                / (patients.len() as f64))
                .round() as usize;
            let test_count = test_count.min(records.len().saturating_sub(1));
            let (test, rest) = shuffled.split_at(test_count);
            let val_count = (rest.len() as f64 * val_fraction).round() as usize;
            let (val, train) = rest.split_at(val_count.min(rest.len()));
            Ok(SplitPlan {
                mode,
                seed,
                test_patients: Vec::new(),
                train: train.iter().map(|r| r.tile_id()).collect(),
                val: val.iter().map(|r| r.tile_id()).collect(),
                test: test.iter().map(|r| r.tile_id()).collect(),
            })
        }
    }
}

/// Metric bundle for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub macro_auc_roc: f64,
    /// Row = true class, column = predicted class.
    pub confusion_matrix: Vec<Vec<u64>>,
    /// Classes with no support, excluded from macro F1.
    pub f1_skipped: Vec<PatternClass>,
    /// Classes lacking positives or negatives, excluded from macro AUC.
    pub auc_skipped: Vec<PatternClass>,
}

/// Mann-Whitney rank AUC with midranks for ties.
///
/// `scores` are the positive-class scores; `positives` flags the true
/// positives. Returns None unless both classes are present.
pub fn rank_auc(scores: &[f64], positives: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positives.len());
    let n = scores.len();
    let n_pos = positives.iter().filter(|p| **p).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0usize;
    while i < n {
        let mut j = i;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // midrank of the tie group spanning sorted positions i..j (1-based)
        let mid = (i + 1 + j) as f64 / 2.0;
        for k in i..j {
            ranks[order[k]] = mid;
        }
        i = j;
    }
    let rank_sum: f64 = (0..n).filter(|&i| positives[i]).map(|i| ranks[i]).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Computes accuracy, per-class and macro F1, macro AUC, and the confusion
/// matrix from aligned predictions and truths.
pub fn compute_metrics(
    predictions: &[PredictionRecord],
    truths: &[PatternClass],
) -> Result<MetricsReport, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), truths.len()));
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let k = PATTERN_COUNT;
    let mut confusion = vec![vec![0u64; k]; k];
    for (pred, truth) in predictions.iter().zip(truths) {
        confusion[truth.index()][pred.predicted.index()] += 1;
    }
    let total: u64 = predictions.len() as u64;
    let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
    let accuracy = trace as f64 / total as f64;

    let mut per_class_f1 = vec![0.0f64; k];
    let mut f1_terms = Vec::new();
    let mut f1_skipped = Vec::new();
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let support: u64 = confusion[c].iter().sum();
        let fp: f64 = (0..k).filter(|&t| t != c).map(|t| confusion[t][c] as f64).sum();
        let fn_: f64 = (0..k).filter(|&p| p != c).map(|p| confusion[c][p] as f64).sum();
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        per_class_f1[c] = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if support > 0 {
            f1_terms.push(per_class_f1[c]);
        } else {
            f1_skipped.push(PatternClass::from_index(c).unwrap());
        }
    }
    let macro_f1 = f1_terms.iter().sum::<f64>() / f1_terms.len().max(1) as f64;

    let mut auc_terms = Vec::new();
    let mut auc_skipped = Vec::new();
    for c in 0..k {
        let scores: Vec<f64> = predictions.iter().map(|p| p.probabilities[c]).collect();
        let positives: Vec<bool> = truths.iter().map(|t| t.index() == c).collect();
        match rank_auc(&scores, &positives) {
            Some(auc) => auc_terms.push(auc),
            None => auc_skipped.push(PatternClass::from_index(c).unwrap()),
        }
    }
    let macro_auc_roc = auc_terms.iter().sum::<f64>() / auc_terms.len().max(1) as f64;

    Ok(MetricsReport {
        accuracy,
        macro_f1,
        per_class_f1,
        macro_auc_roc,
        confusion_matrix: confusion,
        f1_skipped,
        auc_skipped,
    })
}

/// Mean and sample standard deviation of repeated metric runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatSummary {
    pub repeats: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
    pub mean_macro_auc: f64,
    pub std_macro_auc: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn summarize_repeats(reports: &[MetricsReport]) -> Result<RepeatSummary, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let acc: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    let f1: Vec<f64> = reports.iter().map(|r| r.macro_f1).collect();
    let auc: Vec<f64> = reports.iter().map(|r| r.macro_auc_roc).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&acc);
    let (mean_macro_f1, std_macro_f1) = mean_std(&f1);
    let (mean_macro_auc, std_macro_auc) = mean_std(&auc);
    Ok(RepeatSummary {
        repeats: reports.len(),
        mean_accuracy,
        std_accuracy,
        mean_macro_f1,
        std_macro_f1,
        mean_macro_auc,
        std_macro_auc,
    })
}
