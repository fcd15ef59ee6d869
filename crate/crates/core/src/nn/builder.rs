use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::layer::{Activation, BatchNorm, Conv2d, Dense, Layer};
use crate::nn::model::Model;
use crate::rng;
use crate::tensor::Tensor;

/// Incrementally assembles a [`Model`], initializing dense and conv weights
/// with Kaiming-normal draws (fan-in mode) and zero biases.
///
/// ```
/// use shapprune::nn::ModelBuilder;
///
/// let model = ModelBuilder::new(&[4], 0)
///     .dense(8).relu().site()
///     .dense(2)
///     .build()
///     .unwrap();
/// assert_eq!(model.sites()[0].units, 8);
/// ```
pub struct ModelBuilder {
    input_shape: Vec<usize>,
    shape: Vec<usize>,
    layers: Vec<Layer>,
    sites: Vec<usize>,
    seed: u64,
    negative_slope: f64,
    error: Option<Error>,
}

impl ModelBuilder {
    pub fn new(input_shape: &[usize], seed: u64) -> Self {
        ModelBuilder {
            input_shape: input_shape.to_vec(),
            shape: input_shape.to_vec(),
            layers: Vec::new(),
            sites: Vec::new(),
            seed,
            negative_slope: 0.0,
            error: None,
        }
    }

    /// Slope used in the Kaiming gain `sqrt(2 / (1 + a^2))`.
    pub fn kaiming_slope(mut self, slope: f64) -> Self {
        self.negative_slope = slope;
        self
    }

    fn normal(&self, fan_in: usize, count: usize) -> Vec<f64> {
        let std = (2.0 / ((1.0 + self.negative_slope.powi(2)) * fan_in as f64)).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        let mut r = rng::stream(self.seed, "init", self.layers.len() as u64);
        (0..count).map(|_| dist.sample(&mut r)).collect()
    }

    pub fn push(mut self, layer: Layer) -> Self {
        if self.error.is_some() {
            return self;
        }
        match layer.output_shape(&self.shape) {
            Ok(s) => {
                self.shape = s;
                self.layers.push(layer);
            }
            Err(e) => self.error = Some(e),
        }
        self
    }

    pub fn dense(self, units: usize) -> Self {
        let fan_in: usize = self.shape.iter().product();
        let w = self.normal(fan_in, units * fan_in);
        let layer = Dense { weight: Tensor::from_parts(vec![units, fan_in], w), bias: Tensor::zeros(&[units]) };
        self.push(Layer::Dense(layer))
    }

    pub fn conv2d(self, out_channels: usize, kernel: usize) -> Self {
        self.conv2d_with(out_channels, kernel, 1, 0)
    }

    pub fn conv2d_with(self, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let in_channels = self.shape.first().copied().unwrap_or(1);
        let fan_in = in_channels * kernel * kernel;
        let w = self.normal(fan_in, out_channels * fan_in);
        let layer = Conv2d {
            weight: Tensor::from_parts(vec![out_channels, in_channels, kernel, kernel], w),
            bias: Tensor::zeros(&[out_channels]),
            stride: stride.max(1),
            padding,
        };
        self.push(Layer::Conv2d(layer))
    }

    pub fn batch_norm(self) -> Self {
        let c = self.shape.first().copied().unwrap_or(1);
        self.push(Layer::BatchNorm(BatchNorm::identity(c)))
    }

    pub fn activation(self, a: Activation) -> Self {
        self.push(Layer::Activation(a))
    }

    pub fn relu(self) -> Self {
        self.activation(Activation::Relu)
    }

    pub fn leaky_relu(self, slope: f64) -> Self {
        self.activation(Activation::LeakyRelu(slope))
    }

    pub fn max_pool(self, size: usize) -> Self {
        self.push(Layer::MaxPool2d { size })
    }

    pub fn dropout(self, rate: f64) -> Self {
        self.push(Layer::Dropout { rate })
    }

    pub fn flatten(self) -> Self {
        self.push(Layer::Flatten)
    }

    /// Marks the most recently added layer's output as a prunable site.
    pub fn site(mut self) -> Self {
        if let Some(last) = self.layers.len().checked_sub(1) {
            self.sites.push(last);
        }
        self
    }

    pub fn build(self) -> Result<Model> {
        if let Some(e) = self.error {
            return Err(e);
        }
        Model::new(self.input_shape, self.layers, &self.sites)
    }
}

/// `inputs -> [hidden, activation, site]* -> outputs` perceptron.
pub fn mlp(inputs: usize, hidden: &[usize], outputs: usize, activation: Activation, seed: u64) -> Result<Model> {
    let slope = match activation {
        Activation::LeakyRelu(s) => s,
        _ => 0.0,
    };
    let mut b = ModelBuilder::new(&[inputs], seed).kaiming_slope(slope);
    for &h in hidden {
        b = b.dense(h).activation(activation).site();
    }
    b.dense(outputs).build()
}

/// Two conv blocks (conv 3x3, batch norm, ReLU, 2x2 max-pool) and one hidden
/// dense block, with prunable sites after each block's ReLU.
pub fn small_cnn(
    input: [usize; 3],
    filters: (usize, usize),
    hidden: usize,
    classes: usize,
    seed: u64,
) -> Result<Model> {
    ModelBuilder::new(&input, seed)
        .conv2d(filters.0, 3)
        .batch_norm()
        .relu()
        .site()
        .max_pool(2)
        .conv2d(filters.1, 3)
        .batch_norm()
        .relu()
        .site()
        .max_pool(2)
        .flatten()
        .dense(hidden)
        .batch_norm()
        .relu()
        .site()
        .dense(classes)
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_reports_shape_errors() {
        let err = ModelBuilder::new(&[3], 0).conv2d(4, 3).build();
        assert!(err.is_err());
    }

    #[test]
    fn small_cnn_shapes() {
        let m = small_cnn([1, 28, 28], (32, 64), 128, 10, 1).unwrap();
        let units: Vec<usize> = m.sites().iter().map(|s| s.units).collect();
        assert_eq!(units, vec![32, 64, 128]);
        assert_eq!(m.output_len(), 10);
    }

    #[test]
    fn init_is_seeded() {
        let a = mlp(4, &[8], 2, Activation::Relu, 3).unwrap();
        let b = mlp(4, &[8], 2, Activation::Relu, 3).unwrap();
        let c = mlp(4, &[8], 2, Activation::Relu, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
