mod common;

use common::{classification, max_abs_diff, prunable_model, rng};
use proptest::prelude::*;
use rand::Rng;
use shapprune::attribution::{AttributionOptions, Metric, RankMode, ShapleyMode};
use shapprune::experiments::{auc, layerwise_robustness};
use shapprune::nn::{Layer, Model};
use shapprune::pruning::{mask_units, prune_pipeline, slice_units, PruneConfig, PrunePlan};

fn random_plan(model: &Model, seed: u64) -> PrunePlan {
    let mut r = rng(seed);
    let site = r.random_range(0..model.sites().len());
    let units = model.sites()[site].units;
    let mut removed: Vec<usize> = (0..units).filter(|_| r.random_bool(0.4)).collect();
    removed.truncate(units - 1);
    if removed.is_empty() {
        removed.push(r.random_range(0..units));
    }
    PrunePlan::new(model, site, &removed).unwrap()
}

/// Parameters that slicing must drop: incoming weights and biases of the
/// removed units, their BN entries (4 per unit) and their columns in the
/// next dense/conv layer.
fn expected_drop(model: &Model, plan: &PrunePlan) -> usize {
    let site = model.sites()[plan.site()];
    let k = plan.removed().len();
    let layers = model.layers();
    let owner = (0..=site.layer).rev().find(|&l| layers[l].is_affine()).unwrap();
    let next = (site.layer + 1..layers.len()).find(|&l| layers[l].is_affine()).unwrap();
    let incoming = layers[owner].parameter_count() / site.units;
    let bn: usize = (owner + 1..=site.layer).filter(|&l| matches!(layers[l], Layer::BatchNorm(_))).count() * 4;
    let outgoing = match &layers[next] {
        Layer::Dense(d) => d.out_units() * d.in_units() / site.units,
        Layer::Conv2d(c) => c.weight.len() / site.units,
        _ => unreachable!(),
    };
    k * (incoming + bn + outgoing)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masking_and_slicing_agree(seed in any::<u64>()) {
        let model = prunable_model(seed);
        let plan = random_plan(&model, seed ^ 5);
        let data = classification(&mut rng(seed ^ 6), model.input_shape(), 100, 2);
        let masked = mask_units(&model, &plan).unwrap().predict(data.inputs()).unwrap();
        let sliced_model = slice_units(&model, &plan, None).unwrap();
        let sliced = sliced_model.predict(data.inputs()).unwrap();
        prop_assert!(max_abs_diff(masked.data(), sliced.data()) <= 1e-12);
        prop_assert_eq!(model.parameter_count() - sliced_model.parameter_count(), expected_drop(&model, &plan));
        prop_assert_eq!(sliced_model.sites()[plan.site()].units, plan.kept().len());
    }

    #[test]
    fn masked_units_are_zero_at_the_site(seed in any::<u64>()) {
        let model = prunable_model(seed);
        let plan = random_plan(&model, seed ^ 7);
        let data = classification(&mut rng(seed ^ 8), model.input_shape(), 5, 2);
        let masked = mask_units(&model, &plan).unwrap();
        let site = masked.sites()[plan.site()];
        let z = masked.forward(data.inputs()).unwrap().get(site.activation()).clone();
        let per_unit = z.sample_len() / site.units;
        for s in 0..z.batch() {
            for &u in plan.removed() {
                prop_assert!(z.sample(s)[u * per_unit..(u + 1) * per_unit].iter().all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn slicing_refuses_to_empty_a_site() {
    let model = prunable_model(3);
    let units = model.sites()[0].units;
    let plan = PrunePlan::new(&model, 0, &(0..units).collect::<Vec<_>>()).unwrap();
    assert!(slice_units(&model, &plan, None).is_err());
}

#[test]
fn pipeline_is_deterministic() {
    let model = prunable_model(21);
    let mut r = rng(22);
    let attr = classification(&mut r, model.input_shape(), 40, model.output_len());
    let eval = classification(&mut r, model.input_shape(), 40, model.output_len());
    let options = AttributionOptions { shapley: ShapleyMode::Sampled { permutations: 3, seed: 4 }, seed: 4 };
    for metric in [Metric::Shapley, Metric::Random, Metric::Taylor] {
        let config = PruneConfig::outermost_first(&model, metric, RankMode::Mean, 0.4, options);
        let a = prune_pipeline(&model, &attr, &eval, &config, None).unwrap();
        let b = prune_pipeline(&model, &attr, &eval, &config, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.steps.len(), model.sites().len());
        let sites: Vec<usize> = a.1.steps.iter().map(|s| s.site).collect();
        assert!(sites.windows(2).all(|w| w[0] > w[1]), "outermost first: {sites:?}");
    }
}

#[test]
fn robustness_curves_are_anchored_and_auc_ignores_site_order() {
    let model = prunable_model(31);
    let mut r = rng(32);
    let attr = classification(&mut r, model.input_shape(), 30, model.output_len());
    let eval = classification(&mut r, model.input_shape(), 50, model.output_len());
    let options = AttributionOptions { shapley: ShapleyMode::Sampled { permutations: 2, seed: 1 }, seed: 1 };
    let baseline = model.evaluate(&eval).unwrap().loss;
    let mut curves = Vec::new();
    for site in 0..model.sites().len() {
        let c = layerwise_robustness(&model, &eval, &attr, Metric::Shapley, RankMode::Conservative, site, &options)
            .unwrap();
        assert_eq!(c.loss.len(), c.units() + 1);
        assert_eq!(c.loss[0], baseline);
        let all: Vec<usize> = (0..c.units()).collect();
        let masked = mask_units(&model, &PrunePlan::new(&model, site, &all).unwrap()).unwrap();
        let empty = masked.evaluate(&eval).unwrap().loss;
        assert!((c.loss[c.units()] - empty).abs() <= 1e-12 * empty.abs().max(1.0));
        curves.push(c);
    }
    let forward = auc(&curves, baseline).unwrap().total;
    curves.reverse();
    let backward = auc(&curves, baseline).unwrap().total;
    assert!((forward - backward).abs() <= 1e-12 * forward.abs().max(1.0));
}
