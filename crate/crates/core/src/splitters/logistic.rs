//! Multinomial logistic regression trained by full-batch gradient descent.
//!
//! Shared by the supervised splitter and the downstream evaluation.

use serde::{Deserialize, Serialize};

use crate::data::Matrix;

/// Smallest standard deviation used when scaling a feature.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature centering and scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    /// Fit on the given rows of `features`.
    pub fn fit(features: &Matrix, rows: &[usize]) -> Self {
        let d = features.cols();
        let count = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for &i in rows {
            for (m, v) in mean.iter_mut().zip(features.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; d];
        for &i in rows {
            for ((s, v), m) in var.iter_mut().zip(features.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| (s / count).sqrt().max(STD_FLOOR))
            .collect();
        Self { mean, scale }
    }

    pub fn transform_into(&self, row: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            row.iter()
                .zip(self.mean.iter().zip(&self.scale))
                .map(|(v, (m, s))| (v - m) / s),
        );
    }

    pub fn transform(&self, features: &Matrix, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * features.cols());
        let mut buf = Vec::with_capacity(features.cols());
        for &i in rows {
            self.transform_into(features.row(i), &mut buf);
            data.extend_from_slice(&buf);
        }
        Matrix::new(rows.len(), features.cols(), data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub step: f64,
    pub l2: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            epochs: 200,
            step: 0.1,
            l2: 1e-3,
        }
    }
}

/// Softmax classifier with a bias per class. Weights start at zero, so
/// training is a deterministic function of its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxRegression {
    classes: usize,
    dim: usize,
    /// `classes x (dim + 1)`, bias last.
    weights: Vec<f64>,
}

impl SoftmaxRegression {
    /// Minimize mean cross-entropy plus `l2/2 * ||W||^2` (bias excluded).
    pub fn fit(features: &Matrix, labels: &[usize], classes: usize, params: &TrainParams) -> Self {
        assert_eq!(features.rows(), labels.len());
        let dim = features.cols();
        let width = dim + 1;
        let mut model = Self {
            classes,
            dim,
            weights: vec![0.0; classes * width],
        };
        let count = labels.len().max(1) as f64;
        let mut grad = vec![0.0; classes * width];
        let mut probs = vec![0.0; classes];
        for _ in 0..params.epochs {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (row, &label) in features.iter_rows().zip(labels) {
                model.probabilities_into(row, &mut probs);
                probs[label] -= 1.0;
                for (k, &err) in probs.iter().enumerate() {
                    let g = &mut grad[k * width..(k + 1) * width];
                    for (gj, xj) in g.iter_mut().zip(row) {
                        *gj += err * xj;
                    }
                    g[dim] += err;
                }
            }
            for k in 0..classes {
                for j in 0..width {
                    let idx = k * width + j;
                    let penalty = if j < dim { params.l2 * model.weights[idx] } else { 0.0 };
                    model.weights[idx] -= params.step * (grad[idx] / count + penalty);
                }
            }
        }
        model
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn logits_into(&self, row: &[f64], out: &mut [f64]) {
        let width = self.dim + 1;
        for (k, o) in out.iter_mut().enumerate() {
            let w = &self.weights[k * width..(k + 1) * width];
            *o = w[self.dim] + w[..self.dim].iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn probabilities_into(&self, row: &[f64], out: &mut [f64]) {
        self.logits_into(row, out);
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            total += *o;
        }
        out.iter_mut().for_each(|o| *o /= total);
    }

    /// Most probable class; ties go to the lowest index.
    pub fn predict(&self, row: &[f64]) -> usize {
        let mut logits = vec![0.0; self.classes];
        self.logits_into(row, &mut logits);
        let mut best = 0;
        for (k, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = k;
            }
        }
        best
    }
}
