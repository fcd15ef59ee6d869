use crate::attribution::{shapley_attribution, ShapleyMode};
use crate::dataset::Dataset;
use crate::error::Result;
use crate::nn::{Model, ModelBuilder};
use crate::pruning::{slice_units, PrunePlan};

/// Pruning freshly initialised networks by Shapley sign alone.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomInitConfig {
    pub hidden: Vec<usize>,
    pub negative_slope: f64,
    pub permutations: usize,
    /// Training samples the attributions are computed on.
    pub samples: usize,
    pub seeds: Vec<u64>,
}

impl Default for RandomInitConfig {
    fn default() -> Self {
        RandomInitConfig {
            hidden: vec![2048, 2048],
            negative_slope: 0.01,
            permutations: 5,
            samples: 10_000,
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomInitRun {
    pub seed: u64,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    /// Units per hidden layer before and after pruning.
    pub units_before: Vec<usize>,
    pub units_after: Vec<usize>,
}

/// Leaky-ReLU perceptron with Kaiming-normal weights and a site after every
/// hidden layer.
pub fn leaky_mlp(input_shape: &[usize], hidden: &[usize], classes: usize, slope: f64, seed: u64) -> Result<Model> {
    let mut b = ModelBuilder::new(input_shape, seed).kaiming_slope(slope).flatten();
    for &h in hidden {
        b = b.dense(h).leaky_relu(slope).site();
    }
    b.dense(classes).build()
}

/// For each seed: initialise, then, outermost layer first, estimate Shapley
/// values on a training subset and remove every unit whose mean is negative
/// (keeping at least the best one). Reports test accuracy before and after.
pub fn random_init_pruning(train: &Dataset, test: &Dataset, config: &RandomInitConfig) -> Result<Vec<RandomInitRun>> {
    let input_shape = train.inputs().shape()[1..].to_vec();
    let classes = train
        .labels()
        .map(|l| l.iter().max().map_or(1, |&m| m + 1))
        .unwrap_or(1)
        .max(test.labels().and_then(|l| l.iter().max().map(|&m| m + 1)).unwrap_or(1));
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let mut model = leaky_mlp(&input_shape, &config.hidden, classes, config.negative_slope, seed)?;
        let units_before: Vec<usize> = model.sites().iter().map(|s| s.units).collect();
        let accuracy_before = model.evaluate(test)?.accuracy.unwrap_or(0.0);
        let subset = train.sample(config.samples, seed)?;
        for site in (0..model.sites().len()).rev() {
            let sv = shapley_attribution(
                &model,
                site,
                &subset,
                ShapleyMode::Sampled { permutations: config.permutations, seed },
            )?;
            let mut negative: Vec<usize> = (0..sv.units()).filter(|&u| sv.mean[u] < 0.0).collect();
            if negative.len() == sv.units() {
                let best = (0..sv.units()).max_by(|&a, &b| sv.mean[a].total_cmp(&sv.mean[b])).unwrap();
                negative.retain(|&u| u != best);
            }
            let plan = PrunePlan::new(&model, site, &negative)?;
            model = slice_units(&model, &plan, None)?;
        }
        runs.push(RandomInitRun {
            seed,
            accuracy_before,
            accuracy_after: model.evaluate(test)?.accuracy.unwrap_or(0.0),
            units_before,
            units_after: model.sites().iter().map(|s| s.units).collect(),
        });
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn small_run_is_deterministic_and_keeps_units() {
        let x: Vec<f64> = (0..60 * 6).map(|i| ((i * 7919) % 97) as f64 / 97.0).collect();
        let labels = (0..60).map(|i| i % 3).collect();
        let data = Dataset::classification(Tensor::new(vec![60, 6], x).unwrap(), labels).unwrap();
        let cfg = RandomInitConfig { hidden: vec![8, 8], samples: 40, seeds: vec![1, 2], ..Default::default() };
        let a = random_init_pruning(&data, &data, &cfg).unwrap();
        assert_eq!(a, random_init_pruning(&data, &data, &cfg).unwrap());
        for run in &a {
            assert!(run.units_after.iter().all(|&u| u >= 1));
            assert!(run.units_after.iter().zip(&run.units_before).all(|(a, b)| a <= b));
        }
    }
}
