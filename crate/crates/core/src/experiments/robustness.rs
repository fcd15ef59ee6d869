use crate::attribution::{attribute, rank, AttributionOptions, Metric, RankMode, SiteEvaluator};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::loss::correct_mask;
use crate::nn::{Model, EVAL_CHUNK};

/// Loss and accuracy as the units of one site are masked one by one in
/// ranking order. Entry `t` is the state after `t` removals.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessCurve {
    pub site: usize,
    pub metric: Metric,
    pub ranking: RankMode,
    /// Units in the order they were removed.
    pub order: Vec<usize>,
    pub loss: Vec<f64>,
    pub accuracy: Option<Vec<f64>>,
}

impl RobustnessCurve {
    pub fn units(&self) -> usize {
        self.order.len()
    }

    pub fn baseline_loss(&self) -> f64 {
        self.loss[0]
    }
}

/// Ranks the units of `site` with `metric` on `attribution_data`, then
/// masks them cumulatively and evaluates `eval_data` after each removal.
/// The model itself is not modified.
pub fn layerwise_robustness(
    model: &Model,
    eval_data: &Dataset,
    attribution_data: &Dataset,
    metric: Metric,
    ranking: RankMode,
    site: usize,
    options: &AttributionOptions,
) -> Result<RobustnessCurve> {
    let attr = attribute(model, site, attribution_data, metric, options)?;
    let order = rank(&attr, ranking)?.order;
    let (loss, accuracy) = removal_curve(model, site, eval_data, &order)?;
    Ok(RobustnessCurve { site, metric, ranking, order, loss, accuracy })
}

/// Mean loss (and accuracy for classification) after each prefix of `order`
/// is masked at `site`.
pub fn removal_curve(
    model: &Model,
    site: usize,
    data: &Dataset,
    order: &[usize],
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let eval = SiteEvaluator::new(model, site, data)?;
    let steps = order.len() + 1;
    let mut loss = vec![0.0; steps];
    let mut correct = vec![0usize; steps];
    let labels = data.labels();
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let range = start..(start + EVAL_CHUNK).min(data.len());
        eval.removal_outputs(order, range, true, |t, sub, out| {
            loss[t] += data.losses(out, sub.clone())?.iter().sum::<f64>();
            if let Some(l) = labels {
                correct[t] += correct_mask(out, &l[sub]).iter().filter(|&&c| c).count();
            }
            Ok(())
        })?;
    }
    let m = data.len() as f64;
    let loss = loss.into_iter().map(|l| l / m).collect();
    let accuracy = labels.map(|_| correct.into_iter().map(|c| c as f64 / m).collect());
    Ok((loss, accuracy))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucReport {
    /// `(site, Σ_t (L_t - L))` per curve.
    pub per_site: Vec<(usize, f64)>,
    pub units: usize,
    /// Sum of the site contributions divided by the total unit count.
    pub total: f64,
}

/// Area between each curve and the unpruned loss, summed over sites and
/// normalised by the number of prunable units.
pub fn auc(curves: &[RobustnessCurve], baseline_loss: f64) -> Result<AucReport> {
    let units: usize = curves.iter().map(RobustnessCurve::units).sum();
    if units == 0 {
        return Err(Error::config("AUC needs at least one unit"));
    }
    let per_site: Vec<(usize, f64)> =
        curves.iter().map(|c| (c.site, c.loss[1..].iter().map(|l| l - baseline_loss).sum())).collect();
    let total = per_site.iter().map(|(_, a)| a).sum::<f64>() / units as f64;
    Ok(AucReport { per_site, units, total })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(site: usize, loss: Vec<f64>) -> RobustnessCurve {
        RobustnessCurve {
            site,
            metric: Metric::Random,
            ranking: RankMode::Mean,
            order: (0..loss.len() - 1).collect(),
            loss,
            accuracy: None,
        }
    }

    #[test]
    fn flat_curve_has_zero_area() {
        let r = auc(&[curve(0, vec![1.5; 4])], 1.5).unwrap();
        assert_eq!(r.total, 0.0);
    }

    #[test]
    fn two_unit_example() {
        let r = auc(&[curve(0, vec![1.0, 2.0, 4.0])], 1.0).unwrap();
        assert_eq!(r.total, 2.0);
    }

    #[test]
    fn site_order_does_not_matter() {
        let a = curve(0, vec![1.0, 2.0, 3.5]);
        let b = curve(1, vec![1.0, 1.25, 1.5, 9.0]);
        let x = auc(&[a.clone(), b.clone()], 1.0).unwrap().total;
        let y = auc(&[b, a], 1.0).unwrap().total;
        assert_eq!(x, y);
    }
}
