//! The two-input, four-unit ReLU networks computing `max(x1, x2)`, whose
//! attributions are known in closed form.

use rand::Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, Layer, Model};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxVariant {
    /// `y = max(x1, x2)`; unit D has no outgoing weight.
    Exact,
    /// `y = max(x1, x2) - 0.1 (x1 + x2)`, routed through unit D.
    Biased,
}

/// Hidden units A, B, C, D (in that order) form site 0.
///
/// A = ReLU((x2 - x1) / 2), B = ReLU(x1 - x2), C = ReLU(x1 + x2),
/// D = ReLU(x1 + x2); the output is `A + B/2 + C/2 + d·D` with `d = 0` or
/// `-0.1`.
pub fn build_max_network(variant: MaxVariant) -> Model {
    let hidden = Dense::new(
        Tensor::new(vec![4, 2], vec![-0.5, 0.5, 1.0, -1.0, 1.0, 1.0, 1.0, 1.0]).unwrap(),
        Tensor::zeros(&[4]),
    )
    .unwrap();
    let d = match variant {
        MaxVariant::Exact => 0.0,
        MaxVariant::Biased => -0.1,
    };
    let out = Dense::new(Tensor::new(vec![1, 4], vec![1.0, 0.5, 0.5, d]).unwrap(), Tensor::zeros(&[1])).unwrap();
    Model::new(vec![2], vec![Layer::Dense(hidden), Layer::Activation(Activation::Relu), Layer::Dense(out)], &[1])
        .expect("the max network is well formed")
}

/// Grid step for sampled inputs. Inputs are multiples of 2^-28, so every
/// intermediate value of the exact max network is computed without
/// rounding and its loss on the max targets is exactly zero.
const GRID: f64 = 1.0 / (1u64 << 28) as f64;

/// `m` inputs with `x1, x2 ~ U[0, 10)` and targets `max(x1, x2)`, scored
/// with MSE.
pub fn sample_uniform_dataset(m: usize, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut r = rng::stream(seed, "uniform-inputs", 0);
    let steps = 10u64 << 28;
    let x: Vec<f64> = (0..2 * m).map(|_| r.random_range(0..steps) as f64 * GRID).collect();
    let y: Vec<f64> = x.chunks(2).map(|p| p[0].max(p[1])).collect();
    Dataset::regression(Tensor::new(vec![m, 2], x)?, Tensor::new(vec![m, 1], y)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(model: &Model, x1: f64, x2: f64) -> f64 {
        model.predict(&Tensor::new(vec![1, 2], vec![x1, x2]).unwrap()).unwrap().data()[0]
    }

    #[test]
    fn exact_network_computes_max() {
        let m = build_max_network(MaxVariant::Exact);
        assert_eq!(run(&m, 3.0, 7.0), 7.0);
        assert_eq!(run(&m, 7.0, 3.0), 7.0);
        assert_eq!(run(&m, 0.0, 0.0), 0.0);
    }

    #[test]
    fn biased_network_adds_offset() {
        let m = build_max_network(MaxVariant::Biased);
        assert!((run(&m, 3.0, 7.0) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn dataset_is_seeded_and_fits_exactly() {
        assert!(sample_uniform_dataset(0, 1).is_err());
        let a = sample_uniform_dataset(500, 3).unwrap();
        assert_eq!(a, sample_uniform_dataset(500, 3).unwrap());
        let m = build_max_network(MaxVariant::Exact);
        assert!(m.losses(&a).unwrap().iter().all(|&l| l == 0.0));
    }
}
