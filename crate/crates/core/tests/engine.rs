mod common;

use common::{classification, max_abs_diff, prunable_model, rebuild, rng};
use proptest::prelude::*;
use rand::Rng;
use shapprune::nn::{Activation, Dense, Layer, Model, ModelBuilder};
use shapprune::{Dataset, Tensor};

fn small_model(seed: u64) -> Model {
    let mut r = rng(seed);
    let acts = [Activation::Relu, Activation::LeakyRelu(0.2), Activation::Sigmoid, Activation::Softplus];
    let mut b = ModelBuilder::new(&[r.random_range(2..8)], seed);
    for _ in 0..r.random_range(1..3) {
        b = b.dense(r.random_range(2..16)).activation(acts[r.random_range(0..4)]).site();
    }
    b.dense(r.random_range(2..5)).build().unwrap()
}

/// The layers after site `site` as a model of their own.
fn tail(model: &Model, site: usize) -> Model {
    let s = model.sites()[site];
    let layers = model.layers()[s.layer + 1..].to_vec();
    Model::new(model.activation_shape(s.activation()).to_vec(), layers, &[]).unwrap()
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_from_without_mask_matches_forward(seed in any::<u64>()) {
        let model = prunable_model(seed);
        let data = classification(&mut rng(seed ^ 1), model.input_shape(), 7, model.output_len());
        let cache = model.forward(data.inputs()).unwrap();
        let losses = model.losses(&data).unwrap();
        prop_assert_eq!(losses.len(), data.len());
        for site in 0..model.sites().len() {
            let again = model.forward_from(site, &cache, &[], &data).unwrap();
            prop_assert_eq!(&again, &losses);
        }
    }

    #[test]
    fn site_gradient_matches_finite_differences(seed in any::<u64>()) {
        let model = small_model(seed);
        let mut r = rng(seed ^ 2);
        let data = classification(&mut r, model.input_shape(), 4, model.output_len());
        let site = r.random_range(0..model.sites().len());
        let grad = model.backward_to_site(&data, site).unwrap();
        let z = model.activations_at(data.inputs(), model.sites()[site].activation()).unwrap();
        let rest = tail(&model, site);
        let i = r.random_range(0..z.len());
        let s = i / z.sample_len();
        let loss = |d: f64| {
            let mut shifted = z.clone();
            shifted.data_mut()[i] += d;
            let ds = Dataset::new(shifted, data.targets().clone(), data.loss_kind()).unwrap();
            rest.losses(&ds).unwrap()[s]
        };
        let h = 1e-5;
        let numeric = (loss(h) - loss(-h)) / (2.0 * h);
        prop_assert!(relative(grad.data()[i], numeric) < 1e-4, "{} vs {numeric}", grad.data()[i]);
    }

    #[test]
    fn weight_gradient_matches_finite_differences(seed in any::<u64>()) {
        let model = small_model(seed);
        let mut r = rng(seed ^ 3);
        let data = classification(&mut r, model.input_shape(), 4, model.output_len());
        let (_, grads) = model.backward_weights(&data).unwrap();
        let affine: Vec<usize> = (0..model.layers().len()).filter(|&l| model.layers()[l].is_affine()).collect();
        let l = affine[r.random_range(0..affine.len())];
        let p = r.random_range(0..2);
        let i = r.random_range(0..grads.layers[l][p].len());
        let loss = |d: f64| {
            let mut layers = model.layers().to_vec();
            layers[l].params_mut()[p].data_mut()[i] += d;
            rebuild(&model, layers).evaluate(&data).unwrap().loss
        };
        let h = 1e-5;
        let numeric = (loss(h) - loss(-h)) / (2.0 * h);
        prop_assert!(relative(grads.layers[l][p].data()[i], numeric) < 1e-4);
    }

    #[test]
    fn nonnegative_relu_networks_are_monotone(seed in any::<u64>(), bump in 0.0f64..3.0) {
        let mut r = rng(seed);
        let model = ModelBuilder::new(&[3], seed).dense(6).relu().site().dense(4).relu().site().dense(1).build().unwrap();
        let layers = model
            .layers()
            .iter()
            .cloned()
            .map(|mut l| {
                for p in l.params_mut() {
                    p.data_mut().iter_mut().for_each(|v| *v = v.abs());
                }
                l
            })
            .collect();
        let model = rebuild(&model, layers);
        let x: Vec<f64> = (0..3).map(|_| r.random_range(0.0..5.0)).collect();
        let mut y = x.clone();
        y[r.random_range(0..3)] += bump;
        let out = |v: Vec<f64>| model.predict(&Tensor::new(vec![1, 3], v).unwrap()).unwrap().data()[0];
        prop_assert!(out(y) >= out(x.clone()));
    }
}

#[test]
fn max_network_c_path_is_monotone() {
    // Only unit C = ReLU(x1 + x2) feeds the output.
    let hidden = Dense::new(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap(), Tensor::zeros(&[1])).unwrap();
    let out = Dense::new(Tensor::new(vec![1, 1], vec![0.5]).unwrap(), Tensor::zeros(&[1])).unwrap();
    let model =
        Model::new(vec![2], vec![Layer::Dense(hidden), Layer::Activation(Activation::Relu), Layer::Dense(out)], &[1])
            .unwrap();
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
    for &a in &grid {
        let ys: Vec<f64> = grid
            .iter()
            .map(|&b| model.predict(&Tensor::new(vec![1, 2], vec![a, b]).unwrap()).unwrap().data()[0])
            .collect();
        assert!(ys.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let model = prunable_model(17);
    let data = classification(&mut rng(18), model.input_shape(), 70, model.output_len());
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| (model.predict(data.inputs()).unwrap(), model.backward_weights(&data).unwrap().1))
    };
    let (a, ga) = run(1);
    let (b, gb) = run(3);
    assert_eq!(a, b);
    assert_eq!(ga, gb);
    assert_eq!(max_abs_diff(a.data(), b.data()), 0.0);
}
