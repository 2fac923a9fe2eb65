use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::model::HeadKind;

/// True when each of the last `patience` losses is strictly above the
/// minimum of the whole history.
pub fn early_stop_check(losses: &[f64], patience: usize) -> bool {
    if patience == 0 || losses.len() <= patience {
        return false;
    }
    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    losses[losses.len() - patience..].iter().all(|&l| l > min)
}

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

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyData);
    }
    if logits.nrows() != labels.len() {
        return Err(Error::BadShape("one logit row per label".into()));
    }
    let correct = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(&row.to_vec()) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// RMSE pooled over every output component of every row.
pub fn pooled_rmse(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::EmptyData);
    }
    if pred.dim() != target.dim() {
        return Err(Error::BadShape("prediction and target shapes differ".into()));
    }
    let sse: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Product of binary valence and arousal accuracies.
pub fn combined_binary_accuracy(acc_valence: f64, acc_arousal: f64) -> Result<f64> {
    for (what, v) in [("acc_valence", acc_valence), ("acc_arousal", acc_arousal)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange { what, value: v });
        }
    }
    Ok(acc_valence * acc_arousal)
}

/// Twice the chance accuracy for four classes; the RMSE bound is half the
/// expected RMSE of random guessing.
pub fn relevance_threshold(task: HeadKind) -> f64 {
    match task {
        HeadKind::Classify4 => 0.50,
        HeadKind::Regress2 => 1.6995,
    }
}

pub fn is_relevant(task: HeadKind, metric: f64) -> bool {
    match task {
        HeadKind::Classify4 => metric > relevance_threshold(task),
        HeadKind::Regress2 => metric < relevance_threshold(task),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselinePredictor {
    /// Independent uniform guesses on [1, 9].
    UniformContinuous,
}

/// Expected pooled RMSE of `predictor` against the given (valence, arousal)
/// labels.
pub fn baseline_random_rmse(labels: &[(f64, f64)], predictor: BaselinePredictor) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyData);
    }
    match predictor {
        BaselinePredictor::UniformContinuous => {
            let var = 64.0 / 12.0;
            let total: f64 = labels
                .iter()
                .flat_map(|&(v, a)| [v, a])
                .map(|y| var + (5.0 - y).powi(2))
                .sum();
            Ok((total / (2 * labels.len()) as f64).sqrt())
        }
    }
}
