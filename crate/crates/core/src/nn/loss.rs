use std::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Squared error, averaged over output components (plain `(y - t)^2`
    /// for scalar outputs).
    Mse,
    /// Negative log softmax probability of the true class.
    CrossEntropy,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::CrossEntropy => "cross-entropy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    /// Regression targets, `[M, outputs]`.
    Values(Tensor),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.batch(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self, range: Range<usize>) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(c[range].to_vec()),
            Targets::Values(v) => Targets::Values(v.rows(range)),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(indices.iter().map(|&i| c[i]).collect()),
            Targets::Values(v) => Targets::Values(v.select_rows(indices)),
        }
    }

    pub fn classes(&self) -> Option<&[usize]> {
        match self {
            Targets::Classes(c) => Some(c),
            Targets::Values(_) => None,
        }
    }
}

fn check(outputs: &Tensor, targets: &Targets, kind: LossKind) -> Result<()> {
    if outputs.batch() != targets.len() {
        return Err(Error::shape(format!("{} outputs for {} targets", outputs.batch(), targets.len())));
    }
    match (kind, targets) {
        (LossKind::Mse, Targets::Values(v)) => {
            if v.sample_len() != outputs.sample_len() {
                return Err(Error::shape(format!("targets {:?} vs outputs {:?}", v.shape(), outputs.shape())));
            }
        }
        (LossKind::CrossEntropy, Targets::Classes(c)) => {
            let classes = outputs.sample_len();
            if let Some((sample, &label)) = c.iter().enumerate().find(|(_, &l)| l >= classes) {
                return Err(Error::LabelOutOfRange { sample, label, classes });
            }
        }
        (LossKind::Mse, Targets::Classes(_)) => {
            return Err(Error::config("MSE loss needs regression targets"));
        }
        (LossKind::CrossEntropy, Targets::Values(_)) => {
            return Err(Error::config("cross-entropy loss needs class targets"));
        }
    }
    Ok(())
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-sample losses; no averaging over the batch.
pub fn compute_loss(outputs: &Tensor, targets: &Targets, kind: LossKind) -> Result<Vec<f64>> {
    check(outputs, targets, kind)?;
    let losses: Vec<f64> = match targets {
        Targets::Values(t) => (0..outputs.batch())
            .map(|i| {
                let (y, t) = (outputs.sample(i), t.sample(i));
                y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
            })
            .collect(),
        Targets::Classes(c) => (0..outputs.batch())
            .map(|i| {
                let z = outputs.sample(i);
                log_sum_exp(z) - z[c[i]]
            })
            .collect(),
    };
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(losses)
}

/// Gradient of each sample's own loss w.r.t. that sample's outputs.
pub(crate) fn loss_gradient(outputs: &Tensor, targets: &Targets, kind: LossKind) -> Result<Tensor> {
    check(outputs, targets, kind)?;
    let n = outputs.sample_len();
    let mut g = vec![0.0; outputs.len()];
    match targets {
        Targets::Values(t) => {
            for i in 0..outputs.batch() {
                let (y, tt) = (outputs.sample(i), t.sample(i));
                for k in 0..n {
                    g[i * n + k] = 2.0 * (y[k] - tt[k]) / n as f64;
                }
            }
        }
        Targets::Classes(c) => {
            for i in 0..outputs.batch() {
                let z = outputs.sample(i);
                let lse = log_sum_exp(z);
                for k in 0..n {
                    g[i * n + k] = (z[k] - lse).exp();
                }
                g[i * n + c[i]] -= 1.0;
            }
        }
    }
    Ok(Tensor::from_parts(outputs.shape().to_vec(), g))
}

/// Fraction of samples whose arg-max output equals the class label.
pub fn accuracy(outputs: &Tensor, labels: &[usize]) -> f64 {
    let correct = correct_mask(outputs, labels).iter().filter(|&&c| c).count();
    correct as f64 / labels.len().max(1) as f64
}

pub(crate) fn correct_mask(outputs: &Tensor, labels: &[usize]) -> Vec<bool> {
    labels.iter().enumerate().map(|(i, &l)| argmax(outputs.sample(i)) == l).collect()
}

/// First index of the maximum.
pub(crate) fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}
