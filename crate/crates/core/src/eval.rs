//! Confusion-matrix metrics with high CL as the positive class, and the
//! model comparison table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{WindowedDataset, HIGH};
use crate::forest::ForestModel;
use crate::mlp::{MlpError, MlpModel};

pub const REPORT_CSV_HEADER: &str = "model,accuracy,precision,recall,f1";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("model expects {expected} inputs, test set has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Mlp(#[from] MlpError),
}

/// Which metrics hit a zero denominator and were reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degenerate {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_tag: String,
    pub dataset_tag: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: Degenerate,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

impl EvalReport {
    pub fn from_counts(
        model_tag: impl Into<String>,
        dataset_tag: impl Into<String>,
        tp: usize,
        fp: usize,
        fn_: usize,
        tn: usize,
    ) -> Result<Self, EvalError> {
        let total = tp + fp + fn_ + tn;
        if total == 0 {
            return Err(EvalError::EmptyTestSet);
        }
        let (tpf, fpf, fnf) = (tp as f64, fp as f64, fn_ as f64);
        let (precision, dp) = ratio(tpf, tpf + fpf);
        let (recall, dr) = ratio(tpf, tpf + fnf);
        let (f1, df) = ratio(2.0 * precision * recall, precision + recall);
        Ok(Self {
            model_tag: model_tag.into(),
            dataset_tag: dataset_tag.into(),
            tp,
            fp,
            fn_,
            tn,
            accuracy: (tp + tn) as f64 / total as f64,
            precision,
            recall,
            f1,
            degenerate: Degenerate {
                precision: dp,
                recall: dr,
                f1: df,
            },
        })
    }

    /// Counts predictions against truth; label 1 is positive.
    pub fn from_predictions(
        model_tag: impl Into<String>,
        dataset_tag: impl Into<String>,
        predicted: &[u8],
        truth: &[u8],
    ) -> Result<Self, EvalError> {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p == HIGH, t == HIGH) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        Self::from_counts(model_tag, dataset_tag, tp, fp, fn_, tn)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Classifier<'a> {
    /// High when probability >= threshold.
    Mlp { model: &'a MlpModel, threshold: f64 },
    Forest(&'a ForestModel),
}

impl Classifier<'_> {
    pub fn mlp(model: &MlpModel) -> Classifier<'_> {
        Classifier::Mlp { model, threshold: 0.5 }
    }

    fn input_dim(&self) -> usize {
        match self {
            Self::Mlp { model, .. } => model.input_dim(),
            Self::Forest(f) => f.width,
        }
    }

    pub fn predict(&self, data: &WindowedDataset) -> Result<Vec<u8>, EvalError> {
        if data.width() != self.input_dim() {
            return Err(EvalError::DimensionMismatch {
                expected: self.input_dim(),
                got: data.width(),
            });
        }
        Ok(match self {
            Self::Mlp { model, threshold } => model
                .predict_batch(data.inputs(), data.len())?
                .into_iter()
                .map(|p| (p >= *threshold) as u8)
                .collect(),
            Self::Forest(f) => data.rows().map(|r| f.predict(r)).collect(),
        })
    }
}

pub fn evaluate(
    classifier: Classifier<'_>,
    test: &WindowedDataset,
    model_tag: &str,
    dataset_tag: &str,
) -> Result<EvalReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let predicted = classifier.predict(test)?;
    EvalReport::from_predictions(model_tag, dataset_tag, &predicted, test.labels())
}

/// Two decimals, halves rounded up. The small bias absorbs binary
/// representation error so that 0.845 renders as 0.85.
pub fn round2(x: f64) -> String {
    let v = ((x * 100.0 + 0.5 + 1e-9).floor() / 100.0).max(0.0);
    format!("{v:.2}")
}

pub fn report_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.model_tag,
            round2(r.accuracy),
            round2(r.precision),
            round2(r.recall),
            round2(r.f1)
        );
    }
    out
}

pub fn report_text(reports: &[EvalReport]) -> String {
    let name_w = reports.iter().map(|r| r.model_tag.len()).max().unwrap_or(0).max(5);
    let mut out = format!(
        "{:<name_w$}  {:>8}  {:>9}  {:>6}  {:>4}\n",
        "Model", "Accuracy", "Precision", "Recall", "F1"
    );
    for r in reports {
        let _ = write!(
            out,
            "{:<name_w$}  {:>8}  {:>9}  {:>6}  {:>4}",
            r.model_tag,
            round2(r.accuracy),
            round2(r.precision),
            round2(r.recall),
            round2(r.f1)
        );
        if r.degenerate.any() {
            out.push_str("  (degenerate)");
        }
        out.push('\n');
    }
    out
}

/// Text and CSV renderings of the same rows.
pub fn report_table(reports: &[EvalReport]) -> (String, String) {
    (report_text(reports), report_csv(reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_metrics(tag: &str, a: f64, p: f64, r: f64, f: f64) -> EvalReport {
        EvalReport {
            model_tag: tag.into(),
            dataset_tag: "test".into(),
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 0,
            accuracy: a,
            precision: p,
            recall: r,
            f1: f,
            degenerate: Degenerate::default(),
        }
    }

    #[test]
    fn confusion_arithmetic() {
        let r = EvalReport::from_counts("MLP", "t", 84, 16, 6, 94).unwrap();
        assert_eq!(r.accuracy, 0.89);
        assert_eq!(r.precision, 0.84);
        assert!((r.recall - 84.0 / 90.0).abs() < 1e-12);
        let f1 = 2.0 * 0.84 * (84.0 / 90.0) / (0.84 + 84.0 / 90.0);
        assert!((r.f1 - f1).abs() < 1e-12);
        assert!((r.f1 - 0.8842).abs() < 1e-4);
        assert!(!r.degenerate.any());
    }

    #[test]
    fn perfect_and_all_positive() {
        let r = EvalReport::from_predictions("m", "d", &[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
        let r = EvalReport::from_predictions("m", "d", &[1, 1, 1, 1], &[1, 0, 1, 0]).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall), (0.5, 0.5, 1.0));
    }

    #[test]
    fn zero_denominators_flagged() {
        let r = EvalReport::from_counts("m", "d", 0, 0, 0, 5).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        assert!(r.degenerate.precision && r.degenerate.recall && r.degenerate.f1);
        assert!(matches!(EvalReport::from_counts("m", "d", 0, 0, 0, 0), Err(EvalError::EmptyTestSet)));
    }

    #[test]
    fn rounding_half_up() {
        assert_eq!(round2(0.8449), "0.84");
        assert_eq!(round2(0.845), "0.85");
        assert_eq!(round2(1.0), "1.00");
        assert_eq!(round2(0.0), "0.00");
        assert_eq!(round2(84.0 / 90.0), "0.93");
    }

    #[test]
    fn table_rows() {
        assert_eq!(report_csv(&[]), "model,accuracy,precision,recall,f1\n");
        let csv = report_csv(&[with_metrics("MLP", 0.84, 0.84, 0.94, 0.88)]);
        assert_eq!(csv.lines().nth(1), Some("MLP,0.84,0.84,0.94,0.88"));
        let (text, _) = report_table(&[with_metrics("RF", 0.72, 0.73, 0.90, 0.81)]);
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().contains("0.73"));
    }
}
