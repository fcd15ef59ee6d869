use rand::seq::SliceRandom;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::model::{Gradients, Model};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Halve the learning rate every this many epochs.
    pub lr_halving_epochs: Option<usize>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.01,
            momentum: 0.0,
            weight_decay: 0.0,
            epochs: 1,
            batch_size: 32,
            seed: 0,
            lr_halving_epochs: None,
        }
    }
}

/// Momentum buffers, one per trainable parameter. Slicing a model slices
/// these alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub(crate) momentum: Gradients,
}

impl SgdState {
    pub fn new(model: &Model) -> Self {
        SgdState { momentum: Gradients::zeros_like(model) }
    }

    pub fn buffers(&self) -> &Gradients {
        &self.momentum
    }
}

/// Trains a copy of `model`; returns it with the per-epoch mean training loss.
pub fn sgd_train(model: &Model, data: &Dataset, config: &SgdConfig) -> Result<(Model, Vec<f64>)> {
    let mut trained = model.clone();
    let mut state = SgdState::new(&trained);
    let history = sgd_train_in_place(&mut trained, data, config, &mut state)?;
    Ok((trained, history))
}

/// Trains `model` in place, continuing from `state`.
pub fn sgd_train_in_place(
    model: &mut Model,
    data: &Dataset,
    config: &SgdConfig,
    state: &mut SgdState,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    data.check_classes(model.output_len())?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        let lr = match config.lr_halving_epochs {
            Some(n) if n > 0 => config.lr * 0.5f64.powi((epoch / n) as i32),
            _ => config.lr,
        };
        order.sort_unstable();
        order.shuffle(&mut rng::stream(config.seed, "sgd-shuffle", epoch as u64));
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mb = data.select(batch)?;
            let (losses, grads) = model.backward_weights(&mb)?;
            total += losses.iter().sum::<f64>();
            step(model, &grads, state, lr, config);
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        history.push(mean);
    }
    Ok(history)
}

fn step(model: &mut Model, grads: &Gradients, state: &mut SgdState, lr: f64, config: &SgdConfig) {
    for ((layer, g), buf) in model.layers_mut().iter_mut().zip(&grads.layers).zip(&mut state.momentum.layers) {
        for ((p, g), b) in layer.params_mut().into_iter().zip(g).zip(buf) {
            for ((w, &gw), bw) in p.data_mut().iter_mut().zip(g.data()).zip(b.data_mut()) {
                let d = gw + config.weight_decay * *w;
                let d = if config.momentum != 0.0 {
                    *bw = config.momentum * *bw + d;
                    *bw
                } else {
                    d
                };
                *w -= lr * d;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::{Dense, Layer};
    use crate::tensor::Tensor;

    fn line_data() -> Dataset {
        let x: Vec<f64> = (0..100).map(|i| i as f64 / 50.0 - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        Dataset::regression(Tensor::new(vec![100, 1], x).unwrap(), Tensor::new(vec![100, 1], y).unwrap()).unwrap()
    }

    fn scalar_model(w: f64) -> Model {
        let d = Dense::new(Tensor::new(vec![1, 1], vec![w]).unwrap(), Tensor::zeros(&[1])).unwrap();
        Model::new(vec![1], vec![Layer::Dense(d)], &[]).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let m = scalar_model(0.3);
        let cfg = SgdConfig { lr: 0.0, epochs: 3, ..Default::default() };
        let (trained, hist) = sgd_train(&m, &line_data(), &cfg).unwrap();
        assert_eq!(trained, m);
        assert_eq!(hist.len(), 3);
    }

    #[test]
    fn linear_regression_converges() {
        let cfg = SgdConfig { lr: 0.01, epochs: 200, batch_size: 10, seed: 1, ..Default::default() };
        let (trained, hist) = sgd_train(&scalar_model(0.0), &line_data(), &cfg).unwrap();
        let final_mse = trained.evaluate(&line_data()).unwrap().loss;
        assert!(final_mse < 1e-3, "mse {final_mse}, history tail {:?}", &hist[hist.len() - 3..]);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = SgdConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 5,
            batch_size: 7,
            seed: 9,
            ..Default::default()
        };
        let a = sgd_train(&scalar_model(0.1), &line_data(), &cfg).unwrap();
        let b = sgd_train(&scalar_model(0.1), &line_data(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = SgdConfig { lr: 1e3, epochs: 50, batch_size: 100, ..Default::default() };
        let err = sgd_train(&scalar_model(1.0), &line_data(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. } | Error::NonFinite(_)), "{err}");
    }
}
