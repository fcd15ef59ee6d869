#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapprune::nn::{Activation, Layer, Model, ModelBuilder};
use shapprune::{Dataset, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random inputs in `[-1, 1)` with random labels below `classes`.
pub fn classification(rng: &mut ChaCha8Rng, shape: &[usize], m: usize, classes: usize) -> Dataset {
    let len: usize = shape.iter().product();
    let x: Vec<f64> = (0..m * len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut full = vec![m];
    full.extend_from_slice(shape);
    let labels = (0..m).map(|_| rng.random_range(0..classes)).collect();
    Dataset::classification(Tensor::new(full, x).unwrap(), labels).unwrap()
}

fn activation(rng: &mut ChaCha8Rng) -> Activation {
    if rng.random_bool(0.5) {
        Activation::Relu
    } else {
        Activation::LeakyRelu(0.1)
    }
}

/// A small MLP or CNN whose sites are followed only by zero-preserving
/// layers up to the next dense/conv layer. Batch-norm statistics are
/// randomised.
pub fn prunable_model(seed: u64) -> Model {
    let mut rng = rng(seed);
    let model = if rng.random_bool(0.5) {
        let mut b = ModelBuilder::new(&[rng.random_range(3..9)], seed);
        for _ in 0..rng.random_range(1..4) {
            b = b.dense(rng.random_range(2..12)).batch_norm().activation(activation(&mut rng)).site();
            if rng.random_bool(0.3) {
                b = b.dropout(0.25);
            }
        }
        b.dense(rng.random_range(2..5)).build().unwrap()
    } else {
        let mut b = ModelBuilder::new(&[rng.random_range(1..3), 8, 8], seed)
            .conv2d(rng.random_range(2..6), 3)
            .batch_norm()
            .activation(activation(&mut rng))
            .site();
        if rng.random_bool(0.5) {
            b = b.max_pool(2);
        }
        b = b.conv2d_with(rng.random_range(2..6), 3, 1, 1).relu().site();
        b.flatten().dense(rng.random_range(2..8)).relu().site().dense(3).build().unwrap()
    };
    randomise_bn(&model, &mut rng)
}

pub fn randomise_bn(model: &Model, rng: &mut ChaCha8Rng) -> Model {
    let mut layers = model.layers().to_vec();
    for layer in &mut layers {
        if let Layer::BatchNorm(bn) = layer {
            for t in [&mut bn.gamma, &mut bn.beta, &mut bn.running_mean] {
                t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
            }
            bn.running_var.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0));
        }
    }
    rebuild(model, layers)
}

/// `model` with its layers replaced, keeping the site positions.
pub fn rebuild(model: &Model, layers: Vec<Layer>) -> Model {
    let sites: Vec<usize> = model.sites().iter().map(|s| s.layer).collect();
    Model::new(model.input_shape().to_vec(), layers, &sites).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
