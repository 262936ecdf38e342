//! Training losses over ranker scores.
//!
//! Each loss returns its batch-averaged value together with the gradient
//! with respect to every input score, which the trainer feeds back into the
//! tape as the seed of the backward pass.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rankers::sigmoid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// KL between label and score distributions per group.
    ListCls,
    /// Per-group mean squared error.
    ListReg,
    /// Binary cross-entropy on logistic probabilities.
    PointCls,
    /// Mean squared error per pair.
    PointReg,
}

impl LossKind {
    pub fn is_listwise(self) -> bool {
        matches!(self, LossKind::ListCls | LossKind::ListReg)
    }

    pub fn is_classification(self) -> bool {
        matches!(self, LossKind::ListCls | LossKind::PointCls)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// Number of groups (listwise) or pairs (pointwise) averaged over.
    pub batch_size: usize,
    /// ∂loss/∂score in input order; listwise batches are flattened group by group.
    pub grads: Vec<f64>,
    /// π_y per group (listwise classification).
    pub target_distributions: Option<Vec<Vec<f64>>>,
    /// π_s per group (listwise classification).
    pub score_distributions: Option<Vec<Vec<f64>>>,
    /// p per pair (pointwise classification).
    pub probabilities: Option<Vec<f64>>,
}

fn check_batch(scores_len: usize, labels_len: usize) -> Result<(), ObjectiveError> {
    if scores_len != labels_len {
        return Err(ObjectiveError::Contract(format!(
            "{scores_len} score rows but {labels_len} label rows"
        )));
    }
    if scores_len == 0 {
        return Err(ObjectiveError::Contract("empty batch".into()));
    }
    Ok(())
}

fn check_binary(labels: &[f64]) -> Result<(), ObjectiveError> {
    match labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        Some(y) => Err(ObjectiveError::Contract(format!("label {y} is not binary"))),
        None => Ok(()),
    }
}

fn log_softmax(s: &[f64]) -> Vec<f64> {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + s.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    s.iter().map(|x| x - lse).collect()
}

/// `(1/N) Σ_n KL(π_y ‖ π_s)` with `π_y = y / Σy` and `π_s = softmax(s)`.
/// Terms with `π_y = 0` contribute nothing.
pub fn list_cls_loss(scores: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<LossReport, ObjectiveError> {
    check_batch(scores.len(), labels.len())?;
    let n = scores.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::new();
    let mut targets = Vec::with_capacity(scores.len());
    let mut preds = Vec::with_capacity(scores.len());
    for (g, (s, y)) in scores.iter().zip(labels).enumerate() {
        if s.len() != y.len() || s.is_empty() {
            return Err(ObjectiveError::Contract(format!(
                "group {g}: {} scores vs {} labels",
                s.len(),
                y.len()
            )));
        }
        check_binary(y)?;
        let total: f64 = y.iter().sum();
        if total == 0.0 {
            return Err(ObjectiveError::Contract(format!(
                "group {g} has no positive label; the label distribution is undefined"
            )));
        }
        let pi_y: Vec<f64> = y.iter().map(|v| v / total).collect();
        let log_pi_s = log_softmax(s);
        let pi_s: Vec<f64> = log_pi_s.iter().map(|v| v.exp()).collect();
        let kl: f64 = pi_y
            .iter()
            .zip(&log_pi_s)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, lq)| p * (p.ln() - lq))
            .sum();
        loss += kl;
        grads.extend(pi_s.iter().zip(&pi_y).map(|(q, p)| (q - p) / n));
        targets.push(pi_y);
        preds.push(pi_s);
    }
    Ok(LossReport {
        loss: loss / n,
        batch_size: scores.len(),
        grads,
        target_distributions: Some(targets),
        score_distributions: Some(preds),
        probabilities: None,
    })
}

/// `(1/N) Σ_n (1/K) Σ_k (s_k − y_k)²`.
pub fn list_reg_loss(scores: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<LossReport, ObjectiveError> {
    check_batch(scores.len(), labels.len())?;
    let n = scores.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::new();
    for (g, (s, y)) in scores.iter().zip(labels).enumerate() {
        if s.len() != y.len() || s.is_empty() {
            return Err(ObjectiveError::Contract(format!(
                "group {g}: {} scores vs {} labels",
                s.len(),
                y.len()
            )));
        }
        let k = s.len() as f64;
        loss += s.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / k;
        grads.extend(s.iter().zip(y).map(|(a, b)| 2.0 * (a - b) / (n * k)));
    }
    Ok(LossReport {
        loss: loss / n,
        batch_size: scores.len(),
        grads,
        target_distributions: None,
        score_distributions: None,
        probabilities: None,
    })
}

/// Binary cross-entropy with `p = σ(s)`, evaluated as `softplus(s) − y·s`.
pub fn point_cls_loss(scores: &[f64], labels: &[f64]) -> Result<LossReport, ObjectiveError> {
    check_batch(scores.len(), labels.len())?;
    check_binary(labels)?;
    let n = scores.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(scores.len());
    let mut probs = Vec::with_capacity(scores.len());
    for (&s, &y) in scores.iter().zip(labels) {
        let softplus = s.max(0.0) + (-s.abs()).exp().ln_1p();
        loss += softplus - y * s;
        let p = sigmoid(s);
        grads.push((p - y) / n);
        probs.push(p);
    }
    Ok(LossReport {
        loss: loss / n,
        batch_size: scores.len(),
        grads,
        target_distributions: None,
        score_distributions: None,
        probabilities: Some(probs),
    })
}

/// `(1/N) Σ (s − y)²`.
pub fn point_reg_loss(scores: &[f64], labels: &[f64]) -> Result<LossReport, ObjectiveError> {
    check_batch(scores.len(), labels.len())?;
    let n = scores.len() as f64;
    let loss = scores.iter().zip(labels).map(|(s, y)| (s - y) * (s - y)).sum::<f64>() / n;
    let grads = scores.iter().zip(labels).map(|(s, y)| 2.0 * (s - y) / n).collect();
    Ok(LossReport {
        loss,
        batch_size: scores.len(),
        grads,
        target_distributions: None,
        score_distributions: None,
        probabilities: None,
    })
}
