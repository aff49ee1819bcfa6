use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Dataset, TrainError};
use crate::model::Model;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Classification metrics in percent. Values are kept at full precision;
/// [`EvalReport::rounded`] produces the one-decimal form written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub samples: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

impl EvalReport {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], names: &[String]) -> Result<Self, TrainError> {
        if truth.len() != predicted.len() {
            return Err(TrainError::Config("truth and predictions differ in length".into()));
        }
        if truth.is_empty() {
            return Err(TrainError::Empty("evaluation set"));
        }
        let c = names.len();
        let mut confusion = vec![vec![0usize; c]; c];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= c || p >= c {
                return Err(TrainError::Label(format!("label {} with {c} classes", t.max(p))));
            }
            confusion[t][p] += 1;
        }
        let classes: Vec<ClassMetrics> = (0..c)
            .map(|k| {
                let tp = confusion[k][k] as f64;
                let predicted_k: usize = (0..c).map(|t| confusion[t][k]).sum();
                let support: usize = confusion[k].iter().sum();
                let precision = if predicted_k == 0 {
                    0.0
                } else {
                    100.0 * tp / predicted_k as f64
                };
                let recall = if support == 0 { 0.0 } else { 100.0 * tp / support as f64 };
                ClassMetrics {
                    name: names[k].clone(),
                    precision,
                    recall,
                    f1: f1(precision, recall),
                    support,
                }
            })
            .collect();
        let mean = |f: fn(&ClassMetrics) -> f64| classes.iter().map(f).sum::<f64>() / c as f64;
        let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
        Ok(Self {
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            accuracy: 100.0 * correct as f64 / truth.len() as f64,
            samples: truth.len(),
            classes,
            confusion,
        })
    }

    pub fn rounded(&self) -> Self {
        let mut r = self.clone();
        for m in &mut r.classes {
            m.precision = round1(m.precision);
            m.recall = round1(m.recall);
            m.f1 = round1(m.f1);
        }
        r.macro_precision = round1(r.macro_precision);
        r.macro_recall = round1(r.macro_recall);
        r.macro_f1 = round1(r.macro_f1);
        r.accuracy = round1(r.accuracy);
        r
    }

    /// Pretty JSON of the rounded report.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rounded()).expect("report serializes")
    }

    /// Header of class names, then one row of counts per true class.
    pub fn confusion_csv(&self) -> String {
        let mut s = self
            .classes
            .iter()
            .map(|m| m.name.as_str())
            .collect::<Vec<_>>()
            .join(",");
        s.push('\n');
        for row in &self.confusion {
            let line: Vec<String> = row.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }
}

pub fn predict_labels(model: &Model, data: &Dataset) -> Result<Vec<usize>, TrainError> {
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in rows.chunks(64) {
        let logits = model.logits(&data.batch(chunk))?;
        let c = logits.shape()[1];
        out.extend(logits.data().chunks(c).map(argmax));
    }
    Ok(out)
}

pub fn evaluate(model: &Model, data: &Dataset) -> Result<EvalReport, TrainError> {
    let predicted = predict_labels(model, data)?;
    EvalReport::from_predictions(&data.labels, &predicted, &data.class_names)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn ties_pick_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn hand_computed_confusion() {
        // truth 0 0 1 1 2 2, predicted 0 1 1 1 2 0
        let r = EvalReport::from_predictions(&[0, 0, 1, 1, 2, 2], &[0, 1, 1, 1, 2, 0], &names(3)).unwrap();
        assert_eq!(r.confusion, vec![vec![1, 1, 0], vec![0, 2, 0], vec![1, 0, 1]]);
        assert!((r.accuracy - 400.0 / 6.0).abs() < 1e-12);
        assert!((r.classes[0].precision - 50.0).abs() < 1e-12);
        assert!((r.classes[1].precision - 200.0 / 3.0).abs() < 1e-12);
        assert!((r.classes[1].recall - 100.0).abs() < 1e-12);
        assert!((r.classes[1].f1 - 80.0).abs() < 1e-12);
        assert!((r.classes[2].f1 - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.confusion_csv(), "c0,c1,c2\n1,1,0\n0,2,0\n1,0,1\n");
        assert_eq!(r.rounded().accuracy, 66.7);
    }

    #[test]
    fn unpredicted_class_scores_zero() {
        let r = EvalReport::from_predictions(&[0, 1], &[0, 0], &names(2)).unwrap();
        assert_eq!(r.classes[1].precision, 0.0);
        assert_eq!(r.classes[1].f1, 0.0);
        assert_eq!(r.macro_f1, f1(50.0, 100.0) / 2.0);
    }

    #[test]
    fn json_uses_one_decimal() {
        let r = EvalReport::from_predictions(&[0, 1, 2], &[0, 1, 1], &names(3)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["accuracy"], 66.7);
        assert_eq!(v["classes"][1]["precision"], 50.0);
    }
}
