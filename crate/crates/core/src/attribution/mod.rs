//! Per-unit attribution metrics at a prunable site, and rankings built on
//! them.
//!
//! Every metric returns one score per unit; higher means more useful, so
//! units are pruned in ascending order of score.

mod game;
mod heuristics;
mod lrp;
mod tail;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub(crate) use game::SiteEvaluator;
pub use game::{shapley_attribution, PruningGame, ShapleyMode};
pub use heuristics::{apoz, sensitivity, taylor, weight_norm};
pub use lrp::{lrp_alpha1beta0, lrp_relevance};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::rng;
use crate::shapley::AttributionMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    WeightNorm,
    Apoz,
    Sensitivity,
    Taylor,
    TaylorSigned,
    Lrp,
    Shapley,
    Random,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::WeightNorm,
        Metric::Apoz,
        Metric::Sensitivity,
        Metric::Taylor,
        Metric::TaylorSigned,
        Metric::Lrp,
        Metric::Shapley,
        Metric::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::WeightNorm => "weightnorm",
            Metric::Apoz => "apoz",
            Metric::Sensitivity => "sensitivity",
            Metric::Taylor => "taylor",
            Metric::TaylorSigned => "taylor-signed",
            Metric::Lrp => "lrp",
            Metric::Shapley => "sv",
            Metric::Random => "random",
        }
    }

    /// Metrics that look only at the weights (or at nothing).
    pub fn is_data_free(self) -> bool {
        matches!(self, Metric::WeightNorm | Metric::Random)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = Metric::ALL.iter().map(|m| m.name()).collect();
            Error::config(format!("unknown metric '{s}' (expected one of {})", names.join(", ")))
        })
    }
}

/// Scores of every unit at one site.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionResult {
    pub site: usize,
    pub metric: Metric,
    /// Per-sample scores, absent for data-free metrics.
    pub per_sample: Option<AttributionMatrix>,
    pub mean: Vec<f64>,
    /// Population standard deviation over samples; zeros when data-free.
    pub std: Vec<f64>,
    /// Whether scores can be negative.
    pub signed: bool,
}

impl AttributionResult {
    pub(crate) fn from_matrix(site: usize, metric: Metric, matrix: AttributionMatrix, signed: bool) -> Self {
        AttributionResult { site, metric, mean: matrix.mean(), std: matrix.std(), per_sample: Some(matrix), signed }
    }

    pub(crate) fn data_free(site: usize, metric: Metric, scores: Vec<f64>, signed: bool) -> Self {
        AttributionResult { site, metric, std: vec![0.0; scores.len()], mean: scores, per_sample: None, signed }
    }

    pub fn units(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RankMode {
    /// By mean score.
    Mean,
    /// By mean plus twice the standard deviation.
    Conservative,
}

impl RankMode {
    pub fn name(self) -> &'static str {
        match self {
            RankMode::Mean => "mean",
            RankMode::Conservative => "conservative",
        }
    }
}

impl FromStr for RankMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(RankMode::Mean),
            "conservative" => Ok(RankMode::Conservative),
            _ => Err(Error::config(format!("unknown ranking '{s}' (expected mean or conservative)"))),
        }
    }
}

/// Unit indices in pruning order (least useful first).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    pub order: Vec<usize>,
    pub mode: RankMode,
}

impl Ranking {
    /// Position of each unit in `order`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (p, &u) in self.order.iter().enumerate() {
            pos[u] = p;
        }
        pos
    }
}

/// Ascending stable sort of units by score; ties keep index order.
pub fn rank(result: &AttributionResult, mode: RankMode) -> Result<Ranking> {
    let scores: Vec<f64> = match mode {
        RankMode::Mean => result.mean.clone(),
        RankMode::Conservative => {
            if result.per_sample.is_none() {
                return Err(Error::config(format!(
                    "conservative ranking needs per-sample scores, which '{}' does not produce",
                    result.metric
                )));
            }
            result.mean.iter().zip(&result.std).map(|(m, s)| m + 2.0 * s).collect()
        }
    };
    Ok(Ranking { order: argsort(&scores), mode })
}

pub(crate) fn argsort(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    order
}

/// Uniform scores in `[0, 1)`, drawn independently for each site.
pub fn random_scores(model: &Model, site: usize, seed: u64) -> Result<AttributionResult> {
    let units = model.site(site)?.units;
    let mut r = rng::stream(seed, "random-metric", site as u64);
    let scores = (0..units).map(|_| r.random::<f64>()).collect();
    Ok(AttributionResult::data_free(site, Metric::Random, scores, false))
}

/// Settings shared by [`attribute`] across metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributionOptions {
    pub shapley: ShapleyMode,
    /// Seed for the random metric.
    pub seed: u64,
}

impl Default for AttributionOptions {
    fn default() -> Self {
        AttributionOptions { shapley: ShapleyMode::Sampled { permutations: 5, seed: 0 }, seed: 0 }
    }
}

/// Computes `metric` at site `site` (an index into `model.sites()`).
pub fn attribute(
    model: &Model,
    site: usize,
    data: &Dataset,
    metric: Metric,
    options: &AttributionOptions,
) -> Result<AttributionResult> {
    match metric {
        Metric::WeightNorm => weight_norm(model, site),
        Metric::Apoz => apoz(model, site, data),
        Metric::Sensitivity => sensitivity(model, site, data),
        Metric::Taylor => taylor(model, site, data, false),
        Metric::TaylorSigned => taylor(model, site, data, true),
        Metric::Lrp => lrp_alpha1beta0(model, site, data),
        Metric::Shapley => shapley_attribution(model, site, data, options.shapley),
        Metric::Random => random_scores(model, site, options.seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(mean: Vec<f64>, std: Vec<f64>, per_sample: bool) -> AttributionResult {
        let n = mean.len();
        AttributionResult {
            site: 0,
            metric: Metric::Shapley,
            per_sample: per_sample.then(|| AttributionMatrix::from_values(vec![0.0; n], 1, n).unwrap()),
            mean,
            std,
            signed: true,
        }
    }

    #[test]
    fn ranks_ascending() {
        let r = rank(&result(vec![3.0, 1.0, 2.0], vec![0.0; 3], false), RankMode::Mean).unwrap();
        assert_eq!(r.order, vec![1, 2, 0]);
        assert_eq!(r.positions(), vec![2, 0, 1]);
    }

    #[test]
    fn ties_keep_index_order() {
        let r = rank(&result(vec![1.0; 4], vec![0.0; 4], false), RankMode::Mean).unwrap();
        assert_eq!(r.order, vec![0, 1, 2, 3]);
    }

    #[test]
    fn conservative_penalises_spread() {
        let res = result(vec![-1.0, 0.0], vec![5.0, 0.0], true);
        assert_eq!(rank(&res, RankMode::Mean).unwrap().order, vec![0, 1]);
        assert_eq!(rank(&res, RankMode::Conservative).unwrap().order, vec![1, 0]);
    }

    #[test]
    fn conservative_needs_samples() {
        assert!(rank(&result(vec![1.0], vec![0.0], false), RankMode::Conservative).is_err());
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert!("saliency".parse::<Metric>().is_err());
    }
}
