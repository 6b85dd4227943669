//! Binary logistic regression trained by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use super::metrics::Confusion;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub iterations: usize,
    pub lr: f64,
    /// L2 penalty on the weights (not the bias).
    pub l2: f64,
    pub threshold: f64,
    /// Reweight classes so both contribute equally to the loss.
    pub balanced: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            lr: 0.1,
            l2: 1e-4,
            threshold: 0.5,
            balanced: true,
        }
    }
}

/// `p(x) = σ(w · (x − μ) / s + b)`, with the standardization `μ, s` fitted on
/// the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Classifier {
    /// All-zero weights and bias: every probability is 0.5.
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect()
    }

    fn logit_std(&self, xs: &[f64]) -> f64 {
        self.bias + xs.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit_std(&self.standardize(x)))
    }

    pub fn predict(&self, x: &[f64], threshold: f64) -> bool {
        self.probability(x) >= threshold
    }
}

/// Labeled feature rows.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<bool>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn push(&mut self, x: Vec<f64>, y: bool) {
        self.x.push(x);
        self.y.push(y);
    }
}

pub fn confusion(clf: &Classifier, data: &Dataset, threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (x, &y) in data.x.iter().zip(&data.y) {
        c.record(y, clf.predict(x, threshold));
    }
    c
}

fn log_loss(clf: &Classifier, rows: &[Vec<f64>], y: &[bool]) -> f64 {
    rows.iter()
        .zip(y)
        .map(|(x, &t)| {
            let z = clf.logit_std(x);
            // −log σ(z) for positives, −log σ(−z) for negatives
            let s = if t { -z } else { z };
            s.max(0.0) + (-s.abs()).exp().ln_1p()
        })
        .sum::<f64>()
        / rows.len().max(1) as f64
}

/// Fits on `train`, returning the iterate with the best validation F1
/// (ties broken by lower validation log-loss, then by the earlier iterate).
/// With an empty `val`, the final iterate is returned.
pub fn train_classifier(train: &Dataset, val: &Dataset, cfg: &ClassifierConfig) -> Result<Classifier> {
    let n_pos = train.y.iter().filter(|&&y| y).count();
    if n_pos == 0 || n_pos == train.len() {
        return Err(Error::SingleClass);
    }
    let dim = train.x[0].len();
    if train.x.iter().chain(&val.x).any(|r| r.len() != dim) {
        return Err(Error::Shape {
            op: "train_classifier",
            detail: "ragged feature rows".into(),
        });
    }
    let n = train.len() as f64;
    let mut clf = Classifier::zeros(dim);
    for j in 0..dim {
        let m = train.x.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = train.x.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
        clf.mean[j] = m;
        clf.scale[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
    }
    let xs: Vec<Vec<f64>> = train.x.iter().map(|r| clf.standardize(r)).collect();
    let val_std: Vec<Vec<f64>> = val.x.iter().map(|r| clf.standardize(r)).collect();
    let (w_pos, w_neg) = if cfg.balanced {
        (n / (2.0 * n_pos as f64), n / (2.0 * (train.len() - n_pos) as f64))
    } else {
        (1.0, 1.0)
    };

    let score = |c: &Classifier| -> (f64, f64) {
        let mut conf = Confusion::default();
        for (x, &y) in val_std.iter().zip(&val.y) {
            conf.record(y, sigmoid(c.logit_std(x)) >= cfg.threshold);
        }
        (conf.f1(), -log_loss(c, &val_std, &val.y))
    };
    let mut best = clf.clone();
    let mut best_score = score(&clf);

    let mut grad = vec![0.0; dim];
    for _ in 0..cfg.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (x, &y) in xs.iter().zip(&train.y) {
            let p = sigmoid(clf.logit_std(x));
            let (t, w) = if y { (1.0, w_pos) } else { (0.0, w_neg) };
            let r = w * (p - t) / n;
            grad_b += r;
            for (g, &v) in grad.iter_mut().zip(x) {
                *g += r * v;
            }
        }
        // proximal step for the L2 term keeps large penalties stable
        let shrink = 1.0 / (1.0 + cfg.lr * cfg.l2);
        for (w, g) in clf.weights.iter_mut().zip(&grad) {
            *w = (*w - cfg.lr * g) * shrink;
        }
        clf.bias -= cfg.lr * grad_b;
        if val.is_empty() {
            continue;
        }
        let s = score(&clf);
        if s.0 > best_score.0 || (s.0 == best_score.0 && s.1 > best_score.1) {
            best_score = s;
            best = clf.clone();
        }
    }
    Ok(if val.is_empty() { clf } else { best })
}
