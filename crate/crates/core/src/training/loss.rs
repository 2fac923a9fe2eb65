use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

/// `-log softmax(logits)[target]` with max subtraction.
pub fn cross_entropy(logits: ArrayView1<f64>, target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    log_sum - logits[target]
}

/// Gradient of [`cross_entropy`]: `softmax(logits) - onehot(target)`.
pub fn cross_entropy_grad(logits: ArrayView1<f64>, target: usize) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = logits.mapv(|v| (v - max).exp());
    let sum = p.sum();
    p /= sum;
    p[target] -= 1.0;
    p
}

/// Mean over components of the Huber penalty on `pred - target`.
pub fn huber(pred: ArrayView1<f64>, target: ArrayView1<f64>, delta: f64) -> f64 {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(p, t)| {
            let e = (p - t).abs();
            if e <= delta {
                0.5 * e * e
            } else {
                delta * (e - 0.5 * delta)
            }
        })
        .sum::<f64>()
        / n
}

pub fn huber_grad(pred: ArrayView1<f64>, target: ArrayView1<f64>, delta: f64) -> Array1<f64> {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(p, t)| (p - t).clamp(-delta, delta) / n)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Loss {
    CrossEntropy,
    Huber { delta: f64 },
}

/// Per-sample target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(usize),
    Pair([f64; 2]),
}

impl Loss {
    /// Loss and gradient with respect to the model output.
    pub fn eval(&self, output: ArrayView1<f64>, target: Target) -> (f64, Array1<f64>) {
        match (self, target) {
            (Loss::CrossEntropy, Target::Class(c)) => {
                (cross_entropy(output, c), cross_entropy_grad(output, c))
            }
            (Loss::Huber { delta }, Target::Pair(t)) => {
                let t = ndarray::arr1(&t);
                (huber(output, t.view(), *delta), huber_grad(output, t.view(), *delta))
            }
            (loss, target) => panic!("{loss:?} cannot score {target:?}"),
        }
    }
}
