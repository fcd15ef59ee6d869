use crate::attribution::{argsort, shapley_attribution, ShapleyMode};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::Model;

/// Summary of one unit's per-sample Shapley values.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitDistribution {
    pub unit: usize,
    pub mean: f64,
    pub std: f64,
    /// `mean + 2 std`.
    pub conservative: f64,
    /// 5%, 25%, 50%, 75% and 95% quantiles.
    pub quantiles: [f64; 5],
    /// Fraction of samples with a non-zero attribution.
    pub nonzero: f64,
}

pub const QUANTILE_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-unit distribution of sampled Shapley values at `site`, sorted by
/// ascending mean.
pub fn sv_distribution(
    model: &Model,
    site: usize,
    data: &Dataset,
    permutations: usize,
    seed: u64,
) -> Result<Vec<UnitDistribution>> {
    let r = shapley_attribution(model, site, data, ShapleyMode::Sampled { permutations, seed })?;
    let matrix = r.per_sample.as_ref().ok_or_else(|| Error::config("Shapley attribution lacks per-sample values"))?;
    Ok(argsort(&r.mean)
        .into_iter()
        .map(|u| {
            let mut col = matrix.column(u);
            let nonzero = col.iter().filter(|&&v| v != 0.0).count() as f64 / col.len() as f64;
            col.sort_by(f64::total_cmp);
            UnitDistribution {
                unit: u,
                mean: r.mean[u],
                std: r.std[u],
                conservative: r.mean[u] + 2.0 * r.std[u],
                quantiles: QUANTILE_LEVELS.map(|q| quantile(&col, q)),
                nonzero,
            }
        })
        .collect())
}
