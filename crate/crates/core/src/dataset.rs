use std::ops::Range;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::loss::{compute_loss, LossKind, Targets};
use crate::rng;
use crate::tensor::Tensor;

/// Inputs, targets and the loss they are scored with.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    targets: Targets,
    loss: LossKind,
    /// Optional per-sample loss weights; absent means all ones.
    weights: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(inputs: Tensor, targets: Targets, loss: LossKind) -> Result<Self> {
        if inputs.is_empty() || targets.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if inputs.batch() != targets.len() {
            return Err(Error::shape(format!("{} inputs but {} targets", inputs.batch(), targets.len())));
        }
        match (loss, &targets) {
            (LossKind::Mse, Targets::Values(_)) | (LossKind::CrossEntropy, Targets::Classes(_)) => {}
            _ => return Err(Error::config(format!("{} loss does not match target kind", loss.name()))),
        }
        Ok(Dataset { inputs, targets, loss, weights: None })
    }

    pub fn classification(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        Self::new(inputs, Targets::Classes(labels), LossKind::CrossEntropy)
    }

    pub fn regression(inputs: Tensor, targets: Tensor) -> Result<Self> {
        Self::new(inputs, Targets::Values(targets), LossKind::Mse)
    }

    /// Scales each sample's loss by the given weight.
    pub fn with_sample_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::shape(format!("{} weights for {} samples", weights.len(), self.len())));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.targets.classes()
    }

    /// Rejects class labels that the model's output cannot represent.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        if let Some(labels) = self.labels() {
            if let Some((sample, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
                return Err(Error::LabelOutOfRange { sample, label, classes });
            }
        }
        Ok(())
    }

    pub fn rows(&self, range: Range<usize>) -> Dataset {
        Dataset {
            inputs: self.inputs.rows(range.clone()),
            targets: self.targets.rows(range.clone()),
            loss: self.loss,
            weights: self.weights.as_ref().map(|w| w[range].to_vec()),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Dataset {
            inputs: self.inputs.select_rows(indices),
            targets: self.targets.select(indices),
            loss: self.loss,
            weights: self.weights.as_ref().map(|w| indices.iter().map(|&i| w[i]).collect()),
        })
    }

    /// First `n` samples (all of them if `n >= len`).
    pub fn take(&self, n: usize) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(self.rows(0..n.min(self.len())))
    }

    /// A seeded random subset of `n` distinct samples, in shuffled order.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::stream(seed, "dataset-sample", 0));
        idx.truncate(n.min(self.len()));
        self.select(&idx)
    }

    /// Splits into the first `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::config(format!("cannot split {} samples at {n}", self.len())));
        }
        Ok((self.rows(0..n), self.rows(n..self.len())))
    }

    /// Weighted per-sample losses for model outputs on samples `range`.
    pub(crate) fn losses(&self, outputs: &Tensor, range: Range<usize>) -> Result<Vec<f64>> {
        let mut l = compute_loss(outputs, &self.targets.rows(range.clone()), self.loss)?;
        if let Some(w) = &self.weights {
            for (li, wi) in l.iter_mut().zip(&w[range]) {
                *li *= wi;
            }
        }
        Ok(l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_mismatched_datasets_are_rejected() {
        let x = Tensor::zeros(&[2, 3]);
        assert!(matches!(Dataset::classification(x.clone(), vec![]), Err(Error::EmptyDataset)));
        assert!(Dataset::classification(x.clone(), vec![0]).is_err());
        assert!(Dataset::classification(x, vec![0, 1]).is_ok());
    }

    #[test]
    fn check_classes_flags_labels_beyond_output() {
        let d = Dataset::classification(Tensor::zeros(&[2, 3]), vec![1, 12]).unwrap();
        assert!(matches!(d.check_classes(10), Err(Error::LabelOutOfRange { label: 12, .. })));
        assert!(d.check_classes(13).is_ok());
    }
}
