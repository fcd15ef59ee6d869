use crate::attribution::{AttributionOptions, Metric, RankMode, ShapleyMode};
use crate::dataset::Dataset;
use crate::error::Result;
use crate::nn::Model;
use crate::pruning::{prune_pipeline, FineTune, PruneConfig};

/// Inputs of [`finetune_comparison`].
#[derive(Debug, Clone)]
pub struct FinetuneComparison<'a> {
    pub attribution: &'a Dataset,
    pub eval: &'a Dataset,
    pub fine_tune: FineTune<'a>,
    pub metrics: Vec<Metric>,
    /// Used where the metric supports it; data-free metrics rank by mean.
    pub ranking: RankMode,
    pub ratio: f64,
    pub permutations: usize,
    pub seeds: Vec<u64>,
}

/// One pruning step of one (metric, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneRow {
    pub metric: Metric,
    pub seed: u64,
    pub step: usize,
    pub site: usize,
    pub loss_pruned: f64,
    pub loss_finetuned: f64,
    pub accuracy_pruned: Option<f64>,
    pub accuracy_finetuned: Option<f64>,
    pub epochs: usize,
}

/// Runs the outermost-first pruning pipeline with fine-tuning for every
/// metric and seed, recording each step's metrics right after slicing and
/// after fine-tuning.
pub fn finetune_comparison(model: &Model, cmp: &FinetuneComparison<'_>) -> Result<Vec<FinetuneRow>> {
    let mut rows = Vec::new();
    for &metric in &cmp.metrics {
        for &seed in &cmp.seeds {
            let ranking = if metric.is_data_free() { RankMode::Mean } else { cmp.ranking };
            let attribution =
                AttributionOptions { shapley: ShapleyMode::Sampled { permutations: cmp.permutations, seed }, seed };
            let config = PruneConfig::outermost_first(model, metric, ranking, cmp.ratio, attribution);
            let mut ft = cmp.fine_tune.clone();
            ft.sgd.seed = seed;
            let (_, log) = prune_pipeline(model, cmp.attribution, cmp.eval, &config, Some(&ft))?;
            for s in log.steps {
                let tuned = s.fine_tuned.unwrap_or(s.after);
                rows.push(FinetuneRow {
                    metric,
                    seed,
                    step: s.step,
                    site: s.site,
                    loss_pruned: s.after.loss,
                    loss_finetuned: tuned.loss,
                    accuracy_pruned: s.after.accuracy,
                    accuracy_finetuned: tuned.accuracy,
                    epochs: s.fine_tune_epochs,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ModelBuilder, SgdConfig};
    use crate::tensor::Tensor;

    fn toy_data() -> Dataset {
        let x: Vec<f64> = (0..40 * 5).map(|i| ((i * 31) % 17) as f64 / 17.0).collect();
        Dataset::classification(Tensor::new(vec![40, 5], x).unwrap(), (0..40).map(|i| i % 2).collect()).unwrap()
    }

    #[test]
    fn zero_epochs_change_nothing() {
        let model = ModelBuilder::new(&[5], 1).dense(8).relu().site().dense(2).build().unwrap();
        let data = toy_data();
        let cmp = FinetuneComparison {
            attribution: &data,
            eval: &data,
            fine_tune: FineTune { train: &data, validation: None, sgd: SgdConfig { epochs: 0, ..Default::default() } },
            metrics: vec![Metric::WeightNorm, Metric::Shapley],
            ranking: RankMode::Conservative,
            ratio: 0.25,
            permutations: 2,
            seeds: vec![3],
        };
        let rows = finetune_comparison(&model, &cmp).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert_eq!(r.accuracy_pruned, r.accuracy_finetuned);
        }
        assert_eq!(rows, finetune_comparison(&model, &cmp).unwrap());
    }
}
