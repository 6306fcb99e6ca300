//! Scoring, confusion analysis, and the oracle-correction arithmetic.
//!
//! Conventions: precision, recall, and F1 use the 0/0 -> 0 rule; macro-F1
//! averages over all ten humanitarian classes; weighted-F1 weights by gold
//! support. A completion that failed to parse counts as wrong on both tasks
//! with the denominator unchanged. The confusion matrix (rows gold, columns
//! predicted) covers parsed predictions; per-class parse failures are
//! tracked alongside it so row sums plus failures reconstruct the supports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{EventType, HumanitarianLabel, ParseViolation};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold and prediction lists differ in length ({golds} vs {preds})")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("cannot score an empty instance")]
    EmptyInput,
    #[error("relabel `{sample_id}` is not a model error (model prediction equals gold)")]
    RelabelNotAnError { sample_id: String },
    #[error("accuracy delta must be positive")]
    ZeroDelta,
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {reason}")]
    Format {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

/// What the scorer consumes per sample: a parsed label pair or the parse
/// violation that replaced it.
pub type PredOutcome = Result<(HumanitarianLabel, EventType), ParseViolation>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationBreakdown {
    pub format: u64,
    pub repetition: u64,
    pub label: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy_h: f64,
    pub accuracy_e: f64,
    pub per_class: BTreeMap<HumanitarianLabel, ClassMetrics>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    /// Rows gold, columns predicted, both in canonical label order; parsed
    /// predictions only.
    pub confusion: [[u64; 10]; 10],
    /// Parse failures per gold class; row sums + these = supports.
    pub invalid_by_class: [u64; 10],
    pub parse_failures: u64,
    pub violations: ViolationBreakdown,
}

impl EvalReport {
    pub fn trace(&self) -> u64 {
        (0..10).map(|i| self.confusion[i][i]).sum()
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores dual-task predictions against gold labels.
pub fn score(
    golds: &[(HumanitarianLabel, EventType)],
    preds: &[PredOutcome],
) -> Result<EvalReport, EvalError> {
    if golds.len() != preds.len() {
        return Err(EvalError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    if golds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = golds.len();

    let mut confusion = [[0u64; 10]; 10];
    let mut invalid_by_class = [0u64; 10];
    let mut violations = ViolationBreakdown::default();
    let mut correct_h = 0u64;
    let mut correct_e = 0u64;

    for ((gold_h, gold_e), pred) in golds.iter().zip(preds) {
        match pred {
            Ok((pred_h, pred_e)) => {
                confusion[gold_h.index()][pred_h.index()] += 1;
                if pred_h == gold_h {
                    correct_h += 1;
                }
                if pred_e == gold_e {
                    correct_e += 1;
                }
            }
            Err(violation) => {
                invalid_by_class[gold_h.index()] += 1;
                match violation {
                    ParseViolation::Format { .. } => violations.format += 1,
                    ParseViolation::Repetition { .. } => violations.repetition += 1,
                    ParseViolation::Label { .. } => violations.label += 1,
                }
            }
        }
    }

    let mut per_class = BTreeMap::new();
    let mut macro_sum = 0.0;
    let mut weighted_sum = 0.0;
    for label in HumanitarianLabel::ALL {
        let i = label.index();
        let tp = confusion[i][i];
        let row_sum: u64 = confusion[i].iter().sum();
        let support = row_sum + invalid_by_class[i];
        let col_sum: u64 = (0..10).map(|g| confusion[g][i]).sum();
        let fp = col_sum - tp;
        let fn_ = support - tp;

        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        macro_sum += f1;
        weighted_sum += f1 * support as f64;
        per_class.insert(
            label,
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            },
        );
    }

    Ok(EvalReport {
        n,
        accuracy_h: correct_h as f64 / n as f64,
        accuracy_e: correct_e as f64 / n as f64,
        per_class,
        macro_f1: macro_sum / 10.0,
        weighted_f1: weighted_sum / n as f64,
        confusion,
        invalid_by_class,
        parse_failures: violations.format + violations.repetition + violations.label,
        violations,
    })
}

/// An off-diagonal confusion cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionPair {
    pub gold: HumanitarianLabel,
    pub predicted: HumanitarianLabel,
    pub count: u64,
    pub involves_focus: bool,
}

/// The `n` largest off-diagonal confusion cells, sorted by count descending
/// with ties in (gold, predicted) lexicographic order. `involves_focus` is
/// set when either side equals `focus`.
pub fn top_confusion_pairs(
    report: &EvalReport,
    n: usize,
    focus: Option<HumanitarianLabel>,
) -> Vec<ConfusionPair> {
    let mut pairs: Vec<ConfusionPair> = Vec::new();
    for gold in HumanitarianLabel::ALL {
        for predicted in HumanitarianLabel::ALL {
            if gold == predicted {
                continue;
            }
            let count = report.confusion[gold.index()][predicted.index()];
            if count == 0 {
                continue;
            }
            pairs.push(ConfusionPair {
                gold,
                predicted,
                count,
                involves_focus: focus.is_some_and(|f| gold == f || predicted == f),
            });
        }
    }
    pairs.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then(a.gold.cmp(&b.gold))
            .then(a.predicted.cmp(&b.predicted))
    });
    pairs.truncate(n);
    pairs
}

/// One oracle relabel of a model error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRelabel {
    pub sample_id: String,
    pub gold: HumanitarianLabel,
    pub model_pred: HumanitarianLabel,
    pub oracle_pred: HumanitarianLabel,
}

/// Per-pair correction arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCorrection {
    pub gold: HumanitarianLabel,
    pub predicted: HumanitarianLabel,
    /// Confusion-matrix count for this pair in the base report.
    pub frequency: u64,
    /// Fraction of this pair's relabels where the oracle recovered gold.
    pub oracle_accuracy: f64,
    /// `round(frequency * oracle_accuracy)`, half away from zero.
    pub corrected: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectionCeiling {
    /// Fraction of all relabels the oracle got right.
    pub oracle_accuracy_on_errors: f64,
    /// Sorted by oracle accuracy descending, then frequency descending.
    pub per_pair: Vec<PairCorrection>,
    pub total_corrected: u64,
    pub base_accuracy: f64,
    pub ceiling_accuracy: f64,
    pub delta: f64,
}

/// Projects the accuracy ceiling if an oracle fixed the errors it can fix.
/// Every relabel must describe a model error; pair frequencies come from the
/// base report's confusion matrix, and each pair contributes
/// `round(frequency x oracle accuracy)` corrections.
pub fn correction_ceiling(
    base_report: &EvalReport,
    relabels: &[OracleRelabel],
) -> Result<CorrectionCeiling, EvalError> {
    let mut groups: BTreeMap<(HumanitarianLabel, HumanitarianLabel), (u64, u64)> = BTreeMap::new();
    for relabel in relabels {
        if relabel.model_pred == relabel.gold {
            return Err(EvalError::RelabelNotAnError {
                sample_id: relabel.sample_id.clone(),
            });
        }
        let entry = groups
            .entry((relabel.gold, relabel.model_pred))
            .or_insert((0, 0));
        entry.0 += 1;
        if relabel.oracle_pred == relabel.gold {
            entry.1 += 1;
        }
    }

    let mut per_pair: Vec<PairCorrection> = groups
        .into_iter()
        .map(|((gold, predicted), (total, correct))| {
            let frequency = base_report.confusion[gold.index()][predicted.index()];
            let oracle_accuracy = correct as f64 / total as f64;
            let corrected = (frequency as f64 * oracle_accuracy).round() as u64;
            PairCorrection {
                gold,
                predicted,
                frequency,
                oracle_accuracy,
                corrected,
            }
        })
        .collect();
    per_pair.sort_by(|a, b| {
        b.oracle_accuracy
            .partial_cmp(&a.oracle_accuracy)
            .unwrap()
            .then(b.frequency.cmp(&a.frequency))
            .then(a.gold.cmp(&b.gold))
            .then(a.predicted.cmp(&b.predicted))
    });

    let total_corrected: u64 = per_pair.iter().map(|p| p.corrected).sum();
    let total_relabels: u64 = relabels.len() as u64;
    let correct_relabels: u64 = relabels.iter().filter(|r| r.oracle_pred == r.gold).count() as u64;

    // Integer trace keeps `base + delta` exact (100% oracle accuracy on all
    // error cells lands on 1.0 without float residue).
    let trace = base_report.trace();
    let n = base_report.n as f64;
    Ok(CorrectionCeiling {
        oracle_accuracy_on_errors: ratio(correct_relabels, total_relabels),
        per_pair,
        total_corrected,
        base_accuracy: base_report.accuracy_h,
        ceiling_accuracy: (trace + total_corrected) as f64 / n,
        delta: total_corrected as f64 / n,
    })
}

/// Cost of one accuracy percentage point: `total_cost / delta_points`.
pub fn cost_per_point(total_cost: f64, delta_accuracy_points: f64) -> Result<f64, EvalError> {
    if delta_accuracy_points <= 0.0 {
        return Err(EvalError::ZeroDelta);
    }
    Ok(total_cost / delta_accuracy_points)
}

/// Emits the confusion matrix as CSV: header row of predicted labels, one
/// row per gold label.
pub fn write_confusion_csv<W: Write>(report: &EvalReport, mut out: W) -> std::io::Result<()> {
    write!(out, "gold\\predicted")?;
    for label in HumanitarianLabel::ALL {
        write!(out, ",{label}")?;
    }
    writeln!(out)?;
    for gold in HumanitarianLabel::ALL {
        write!(out, "{gold}")?;
        for predicted in HumanitarianLabel::ALL {
            write!(
                out,
                ",{}",
                report.confusion[gold.index()][predicted.index()]
            )?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads oracle relabels from a JSONL file.
pub fn read_relabels_jsonl(path: &Path) -> Result<Vec<OracleRelabel>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.into(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Format {
                path: path.into(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}
