mod common;

use common::{classification, prunable_model, rng};
use proptest::prelude::*;
use shapprune::attribution::{attribute, rank, AttributionOptions, AttributionResult, Metric, RankMode, ShapleyMode};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metrics_return_one_finite_score_per_unit(seed in any::<u64>()) {
        let model = prunable_model(seed);
        let data = classification(&mut rng(seed ^ 9), model.input_shape(), 12, model.output_len());
        let options = AttributionOptions {
            shapley: ShapleyMode::Sampled { permutations: 2, seed },
            seed,
        };
        for site in 0..model.sites().len() {
            let units = model.sites()[site].units;
            for metric in Metric::ALL {
                let downstream = &model.layers()[model.sites()[site].activation()..];
                if metric == Metric::Lrp && downstream.iter().any(|l| l.name().starts_with("leaky")) {
                    prop_assert!(attribute(&model, site, &data, metric, &options).is_err());
                    continue;
                }
                let r = attribute(&model, site, &data, metric, &options).map_err(|e| TestCaseError::fail(format!("{metric}: {e}")))?;
                prop_assert_eq!(r.mean.len(), units);
                prop_assert!(r.mean.iter().chain(&r.std).all(|v| v.is_finite()));
                match metric {
                    Metric::Apoz => prop_assert!(r.mean.iter().all(|&v| (0.0..=1.0).contains(&v))),
                    Metric::Lrp | Metric::Taylor | Metric::Sensitivity | Metric::WeightNorm => {
                        prop_assert!(r.mean.iter().all(|&v| v >= 0.0));
                        if let Some(m) = &r.per_sample {
                            prop_assert!(m.values().iter().all(|&v| v >= 0.0));
                        }
                    }
                    _ => {}
                }
                let a = rank(&r, RankMode::Mean).unwrap();
                prop_assert_eq!(&a, &rank(&r, RankMode::Mean).unwrap());
                let mut sorted = a.order.clone();
                sorted.sort_unstable();
                prop_assert_eq!(sorted, (0..units).collect::<Vec<_>>());
            }
        }
    }
}

#[test]
fn ties_rank_by_ascending_unit() {
    let model = prunable_model(5);
    let mut r = shapprune::attribution::weight_norm(&model, 0).unwrap();
    let n = r.units();
    r.mean = (0..n).map(|u| (u % 2) as f64).collect();
    let order = rank(&r, RankMode::Mean).unwrap().order;
    let evens: Vec<usize> = (0..n).step_by(2).collect();
    let odds: Vec<usize> = (1..n).step_by(2).collect();
    assert_eq!(order, [evens, odds].concat());
}

#[test]
fn conservative_ranking_needs_per_sample_scores() {
    let model = prunable_model(6);
    let r: AttributionResult = shapprune::attribution::weight_norm(&model, 0).unwrap();
    assert!(rank(&r, RankMode::Conservative).is_err());
}
