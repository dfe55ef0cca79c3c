//! Clean and corruption accuracy.
//!
//! Predictions are the argmax of the classifier outputs with ties going to
//! the lowest class index. Robust accuracy is the unweighted mean over
//! `(filter, severity)` entries of the suite.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CorruptedTestSuite, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::Classifier;

const EVAL_BATCH: usize = 256;

/// Accuracy of one corrupted copy of the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownEntry {
    pub filter: String,
    pub severity: u8,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub acc_clean: f64,
    pub acc_robust: f64,
    pub acc_avg: f64,
    pub breakdown: Vec<BreakdownEntry>,
}

impl MetricsRecord {
    pub fn new(acc_clean: f64, acc_robust: f64, breakdown: Vec<BreakdownEntry>) -> Self {
        MetricsRecord {
            acc_clean,
            acc_robust,
            acc_avg: (acc_clean + acc_robust) / 2.0,
            breakdown,
        }
    }
}

/// Number of correctly classified samples.
pub fn correct_count(clf: &Classifier, ds: &LabeledDataset) -> Result<usize> {
    let mut correct = 0;
    for (images, labels) in ds.images().chunks(EVAL_BATCH).zip(ds.labels().chunks(EVAL_BATCH)) {
        let preds = clf.logits(images)?.argmax_rows();
        correct += preds.iter().zip(labels).filter(|(&p, &y)| p == y as usize).count();
    }
    Ok(correct)
}

pub fn clean_accuracy(clf: &Classifier, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyDataset(format!("test set `{}`", test.name())));
    }
    Ok(correct_count(clf, test)? as f64 / test.len() as f64)
}

/// Macro-averaged accuracy over the suite entries, with the per-entry values.
pub fn robust_accuracy(clf: &Classifier, suite: &CorruptedTestSuite) -> Result<(f64, Vec<BreakdownEntry>)> {
    if suite.is_empty() {
        return Err(Error::EmptyDataset("corruption suite has no entries".into()));
    }
    let breakdown = suite
        .entries
        .iter()
        .map(|(spec, ds)| {
            Ok(BreakdownEntry {
                filter: spec.filter().name().to_string(),
                severity: spec.severity(),
                accuracy: clean_accuracy(clf, ds)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = breakdown.iter().map(|b| b.accuracy).sum::<f64>() / breakdown.len() as f64;
    Ok((mean, breakdown))
}

/// Clean accuracy on the suite's base set plus robust accuracy.
pub fn evaluate(clf: &Classifier, suite: &CorruptedTestSuite) -> Result<MetricsRecord> {
    let clean = clean_accuracy(clf, &suite.base)?;
    let (robust, breakdown) = robust_accuracy(clf, suite)?;
    Ok(MetricsRecord::new(clean, robust, breakdown))
}

/// Writes `filter,severity,accuracy` rows.
pub fn write_breakdown(path: &Path, breakdown: &[BreakdownEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for b in breakdown {
        w.serialize(b)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_corruption_suite, CorruptionSpec};
    use crate::image::{Image, Shape};
    use crate::model::{Architecture, ParameterVector};
    use std::sync::Arc;

    fn two_class_set() -> LabeledDataset {
        let shape = Shape::new(2, 2, 1);
        let images: Vec<Image> = (0..8).map(|i| Image::filled(shape, if i % 2 == 0 { 0.1 } else { 0.9 })).collect();
        let labels = (0..8).map(|i| (i % 2) as u16).collect();
        LabeledDataset::new("two", images, labels, 2).unwrap()
    }

    /// A linear model whose class-1 logit is `w·(mean pixel − 0.5)`.
    fn threshold_model(w: f64) -> Classifier {
        let arch = Arc::new(Architecture::mlp(Shape::new(2, 2, 1), &[], 2).unwrap());
        let mut values = vec![0.0; arch.num_params()];
        // dense weight [2][4], bias [2]
        for j in 0..4 {
            values[4 + j] = w / 4.0;
        }
        values[9] = -w / 2.0;
        Classifier::new(arch.clone(), ParameterVector::from_values(arch.layout().clone(), values).unwrap()).unwrap()
    }

    #[test]
    fn perfect_classifier() {
        assert_eq!(clean_accuracy(&threshold_model(10.0), &two_class_set()).unwrap(), 1.0);
    }

    #[test]
    fn zero_weights_predict_class_zero() {
        let arch = Arc::new(Architecture::mlp(Shape::new(2, 2, 1), &[], 2).unwrap());
        assert_eq!(clean_accuracy(&Classifier::zeros(arch), &two_class_set()).unwrap(), 0.5);
    }

    #[test]
    fn matches_per_sample_loop() {
        let ds = two_class_set();
        let clf = threshold_model(-3.0);
        let mut hits = 0;
        for (img, &y) in ds.images().iter().zip(ds.labels()) {
            let p = clf.predict_proba(std::slice::from_ref(img)).unwrap();
            hits += usize::from(p.argmax_rows()[0] == y as usize);
        }
        assert_eq!(clean_accuracy(&clf, &ds).unwrap(), hits as f64 / ds.len() as f64);
    }

    #[test]
    fn empty_inputs_rejected() {
        let empty = LabeledDataset::new("e", vec![], vec![], 2).unwrap();
        assert!(clean_accuracy(&threshold_model(1.0), &empty).is_err());
        let suite = CorruptedTestSuite::new(two_class_set(), vec![]).unwrap();
        assert!(robust_accuracy(&threshold_model(1.0), &suite).is_err());
    }

    #[test]
    fn identity_suite_equals_clean_accuracy() {
        let ds = two_class_set();
        let suite = build_corruption_suite(&ds, &[CorruptionSpec::identity()], 0).unwrap();
        let m = evaluate(&threshold_model(2.0), &suite).unwrap();
        assert_eq!(m.acc_robust, m.acc_clean);
        assert_eq!(m.acc_avg, (m.acc_clean + m.acc_robust) / 2.0);
    }

    #[test]
    fn macro_average_over_unequal_entries() {
        let ds = two_class_set();
        let small = ds.subset("small", &[0, 1]);
        let wrong = ds.subset("wrong", &[0, 2, 4, 6, 1, 3]);
        let flipped = wrong
            .with_images(
                "wrong",
                wrong.images().iter().map(|i| i.map_pixels(|v| 1.0 - v)).collect(),
            )
            .unwrap();
        let clf = threshold_model(10.0);
        let suite = CorruptedTestSuite {
            base: ds.clone(),
            entries: vec![(CorruptionSpec::identity(), small), (CorruptionSpec::identity(), flipped)],
        };
        let (rob, breakdown) = robust_accuracy(&clf, &suite).unwrap();
        assert_eq!(breakdown[0].accuracy, 1.0);
        assert_eq!(breakdown[1].accuracy, 0.0);
        assert_eq!(rob, 0.5);
        // the per-sample average would be 2 / 8
    }
}
