//! Downstream evaluation: fit the splitter's classifier on returned labels
//! and score it on held-out data.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::data::{Dataset, Matrix};
use crate::splitters::logistic::{SoftmaxRegression, Standardizer, TrainParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("training labels cover {0} class(es); at least two are needed")]
    Degenerate(usize),
    #[error("{features} training rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("training has {train} features, test has {test}")]
    DimensionMismatch { train: usize, test: usize },
    #[error("label {label} outside [0, {num_classes})")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("test dataset has no ground truth")]
    NoTestTruth,
}

/// Test accuracy of a softmax regression trained on `(features, labels)`.
pub fn train_eval(
    train_features: &Matrix,
    train_labels: &[usize],
    test: &Dataset,
    params: &TrainParams,
) -> Result<f64, EvalError> {
    if train_features.rows() != train_labels.len() {
        return Err(EvalError::LengthMismatch {
            features: train_features.rows(),
            labels: train_labels.len(),
        });
    }
    if train_features.cols() != test.dim() {
        return Err(EvalError::DimensionMismatch {
            train: train_features.cols(),
            test: test.dim(),
        });
    }
    let truth = test.truth.as_ref().ok_or(EvalError::NoTestTruth)?;
    if let Some(&label) = train_labels.iter().find(|&&l| l >= test.num_classes) {
        return Err(EvalError::LabelOutOfRange {
            label,
            num_classes: test.num_classes,
        });
    }
    let distinct: BTreeSet<usize> = train_labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(EvalError::Degenerate(distinct.len()));
    }

    let all: Vec<usize> = (0..train_features.rows()).collect();
    let scaler = Standardizer::fit(train_features, &all);
    let x = scaler.transform(train_features, &all);
    let model = SoftmaxRegression::fit(&x, train_labels, test.num_classes, params);

    let mut buf = Vec::with_capacity(test.dim());
    let mut correct = 0;
    for (row, &class) in test.features.iter_rows().zip(truth) {
        scaler.transform_into(row, &mut buf);
        correct += usize::from(model.predict(&buf) == class);
    }
    Ok(correct as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;

    #[test]
    fn perfect_labels_on_separable_blobs() {
        let train = gen_blobs(11, 300, 4, 3, 0.5).unwrap();
        let test = gen_blobs(11, 600, 4, 3, 0.5).unwrap();
        // same seed, same means; the test set is a superset draw
        let acc = train_eval(
            &train.features,
            train.truth.as_ref().unwrap(),
            &test,
            &TrainParams::default(),
        )
        .unwrap();
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    #[test]
    fn one_class_is_unavailable() {
        let test = gen_blobs(1, 20, 2, 2, 0.5).unwrap();
        let x = test.features.select(&[0, 2, 4]);
        let err = train_eval(&x, &[0, 0, 0], &test, &TrainParams::default()).unwrap_err();
        assert_eq!(err, EvalError::Degenerate(1));
    }

    #[test]
    fn shape_errors() {
        let test = gen_blobs(1, 20, 2, 2, 0.5).unwrap();
        let x = test.features.select(&[0, 1]);
        assert!(matches!(
            train_eval(&x, &[0], &test, &TrainParams::default()),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            train_eval(&x, &[0, 5], &test, &TrainParams::default()),
            Err(EvalError::LabelOutOfRange { label: 5, .. })
        ));
        let other = gen_blobs(1, 20, 3, 2, 0.5).unwrap();
        assert!(matches!(
            train_eval(&x, &[0, 1], &other, &TrainParams::default()),
            Err(EvalError::DimensionMismatch { .. })
        ));
    }
}
