//! Confusion matrix, accuracy/precision/recall/F1, ROC curve and AUC, plus
//! their text and CSV exports.

use std::io::Write;

use crate::models::{Model, ModelError};
use crate::textprep::CleanDocument;
use crate::tokenizer::{encode_padded, TokenSequence, Vocabulary};
use crate::training::classify;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{labels} labels but {predictions} predictions")]
    LengthMismatch { labels: usize, predictions: usize },
    #[error("no examples to evaluate")]
    EmptyInput,
    #[error("confusion matrix is empty")]
    EmptyConfusion,
    #[error("ROC needs both classes among the labels")]
    SingleClassLabels,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Counts with label 1 (authentic) as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Rows are actual classes, columns predicted classes.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "actual\\predicted,fake(0),authentic(1)")?;
        writeln!(w, "fake(0),{},{}", self.tn, self.fp)?;
        writeln!(w, "authentic(1),{},{}", self.fn_, self.tp)
    }
}

pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<ConfusionMatrix, EvalError> {
    if labels.len() != predictions.len() {
        return Err(EvalError::LengthMismatch {
            labels: labels.len(),
            predictions: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut cm = ConfusionMatrix::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y == 1, p == 1) {
            (true, true) => cm.tp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fp += 1,
            (true, false) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// set when the corresponding denominator was zero and 0 was reported
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
    pub confusion: ConfusionMatrix,
    /// `None` when the evaluated labels contain a single class
    pub auc: Option<f64>,
    pub threshold: f64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Harmonic mean of precision and recall; `None` when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    (precision + recall > 0.0).then(|| 2.0 * precision * recall / (precision + recall))
}

pub fn metrics_from_confusion(
    cm: ConfusionMatrix,
    auc: Option<f64>,
    threshold: f64,
) -> Result<MetricsReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyConfusion);
    }
    let accuracy = (cm.tp + cm.tn) as f64 / total as f64;
    let (precision, precision_undefined) = ratio(cm.tp, cm.tp + cm.fp);
    let (recall, recall_undefined) = ratio(cm.tp, cm.tp + cm.fn_);
    let (f1, f1_undefined) = match f1_score(precision, recall) {
        Some(f) => (f, false),
        None => (0.0, true),
    };
    Ok(MetricsReport {
        accuracy,
        precision,
        recall,
        f1,
        precision_undefined,
        recall_undefined,
        f1_undefined,
        confusion: cm,
        auc,
        threshold,
    })
}

impl MetricsReport {
    /// `key = value` lines in a fixed order, reals at six decimals.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let cm = &self.confusion;
        writeln!(w, "threshold = {:.6}", self.threshold)?;
        writeln!(w, "accuracy = {:.6}", self.accuracy)?;
        writeln!(w, "precision = {:.6}", self.precision)?;
        writeln!(w, "recall = {:.6}", self.recall)?;
        writeln!(w, "f1 = {:.6}", self.f1)?;
        match self.auc {
            Some(a) => writeln!(w, "auc = {a:.6}")?,
            None => writeln!(w, "auc = undefined")?,
        }
        writeln!(w, "tp = {}", cm.tp)?;
        writeln!(w, "tn = {}", cm.tn)?;
        writeln!(w, "fp = {}", cm.fp)?;
        writeln!(w, "fn = {}", cm.fn_)?;
        writeln!(w, "total = {}", cm.total())?;
        writeln!(w, "precision_undefined = {}", self.precision_undefined)?;
        writeln!(w, "recall_undefined = {}", self.recall_undefined)?;
        writeln!(w, "f1_undefined = {}", self.f1_undefined)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// Points from (0,0) to (1,1), fpr and tpr non-decreasing.
#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// Exact threshold sweep. The first point uses threshold `+inf`, the last
/// `-inf`; in between there is one point per distinct score, descending,
/// counting an example positive when its score is at least the threshold.
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<RocCurve, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            labels: labels.len(),
            predictions: scores.len(),
        });
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClassLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: s,
        });
    }
    points.push(RocPoint {
        fpr: 1.0,
        tpr: 1.0,
        threshold: f64::NEG_INFINITY,
    });
    Ok(RocCurve { points })
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

impl RocCurve {
    /// CSV with header `fpr,tpr,threshold`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "fpr,tpr,threshold")?;
        for p in &self.points {
            writeln!(w, "{:.6},{:.6},{}", p.fpr, p.tpr, p.threshold)?;
        }
        Ok(())
    }
}

/// Anything that maps sequences to probabilities of the authentic class.
pub trait Scorer {
    fn score(&self, batch: &[TokenSequence]) -> Result<Vec<f64>, EvalError>;
    fn seq_len(&self) -> usize;
}

impl Scorer for Model<f32> {
    fn score(&self, batch: &[TokenSequence]) -> Result<Vec<f64>, EvalError> {
        Ok(self.predict(batch)?.into_iter().map(f64::from).collect())
    }

    fn seq_len(&self) -> usize {
        Model::seq_len(self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// `None` when the labels contain a single class
    pub roc: Option<RocCurve>,
    pub scores: Vec<f64>,
}

/// Encodes and scores the test documents, then assembles every report.
pub fn evaluate<S: Scorer + ?Sized>(
    model: &S,
    test_docs: &[CleanDocument],
    vocab: &Vocabulary,
    threshold: f64,
) -> Result<Evaluation, EvalError> {
    if test_docs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let seqs: Vec<TokenSequence> = test_docs
        .iter()
        .map(|d| encode_padded(&d.tokens, vocab, model.seq_len()))
        .collect();
    let scores = model.score(&seqs)?;
    let labels: Vec<u8> = test_docs.iter().map(|d| d.label).collect();
    let preds: Vec<u8> = scores.iter().map(|&p| classify(p, threshold)).collect();
    let cm = confusion(&labels, &preds)?;
    let roc = match roc_points(&scores, &labels) {
        Ok(r) => Some(r),
        Err(EvalError::SingleClassLabels) => None,
        Err(e) => return Err(e),
    };
    let report = metrics_from_confusion(cm, roc.as_ref().map(auc), threshold)?;
    Ok(Evaluation {
        report,
        roc,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[1, 1, 0], &[1, 1, 0]).unwrap();
        assert_eq!((cm.tp, cm.tn, cm.fp, cm.fn_), (2, 1, 0, 0));
        let cm = confusion(&[1, 0], &[0, 1]).unwrap();
        assert_eq!((cm.tp, cm.tn, cm.fp, cm.fn_), (0, 0, 1, 1));
        assert!(matches!(
            confusion(&[1], &[]),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(confusion(&[], &[]), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn hand_metrics() {
        let cm = ConfusionMatrix {
            tp: 3,
            fp: 1,
            fn_: 2,
            tn: 4,
        };
        let m = metrics_from_confusion(cm, None, 0.5).unwrap();
        assert!((m.accuracy - 0.7).abs() < 1e-12);
        assert!((m.precision - 0.75).abs() < 1e-12);
        assert!((m.recall - 0.6).abs() < 1e-12);
        assert!((m.f1 - 0.9 / 1.35).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_degenerate() {
        let m = metrics_from_confusion(
            ConfusionMatrix {
                tp: 9,
                ..Default::default()
            },
            Some(1.0),
            0.5,
        )
        .unwrap();
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.f1),
            (1.0, 1.0, 1.0, 1.0)
        );
        let m = metrics_from_confusion(
            ConfusionMatrix {
                tn: 4,
                ..Default::default()
            },
            None,
            0.5,
        )
        .unwrap();
        assert!(m.precision_undefined && m.recall_undefined && m.f1_undefined);
        assert_eq!(m.precision, 0.0);
        assert!(matches!(
            metrics_from_confusion(ConfusionMatrix::default(), None, 0.5),
            Err(EvalError::EmptyConfusion)
        ));
    }

    #[test]
    fn table_row_f1() {
        assert!((f1_score(0.9940, 0.9974).unwrap() - 0.9957).abs() < 5e-5);
        assert_eq!(f1_score(0.0, 0.0), None);
    }

    #[test]
    fn roc_separated_and_tied() {
        let c = roc_points(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert!(c.points.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(auc(&c), 1.0);
        let c = roc_points(&[0.5; 4], &[1, 0, 1, 0]).unwrap();
        assert_eq!(c.points.len(), 3);
        assert!(c.points.iter().all(|p| p.fpr == p.tpr));
        assert_eq!(auc(&c), 0.5);
        assert!(matches!(
            roc_points(&[0.1], &[1]),
            Err(EvalError::SingleClassLabels)
        ));
    }

    #[test]
    fn exports() {
        let cm = ConfusionMatrix {
            tp: 3,
            fp: 1,
            fn_: 2,
            tn: 4,
        };
        let mut buf = Vec::new();
        cm.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "actual\\predicted,fake(0),authentic(1)\nfake(0),4,1\nauthentic(1),2,3\n"
        );
        let mut buf = Vec::new();
        metrics_from_confusion(cm, Some(0.8), 0.5)
            .unwrap()
            .write_text(&mut buf)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("threshold = 0.500000\naccuracy = 0.700000\n"));
        assert!(text.contains("auc = 0.800000\n"));
    }
}
