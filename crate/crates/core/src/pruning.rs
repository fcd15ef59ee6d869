//! Removing units: masking (zeroing in place) and slicing (physically
//! shrinking every tensor that depends on the unit), plus the iterative
//! layer-by-layer pruning pipeline.

use crate::attribution::{attribute, rank, AttributionOptions, Metric, RankMode};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{sgd_train_in_place, Evaluation, Layer, Model, SgdConfig, SgdState};
use crate::rng;
use crate::tensor::Tensor;

/// Units to remove at one site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrunePlan {
    site: usize,
    removed: Vec<usize>,
    total: usize,
}

impl PrunePlan {
    /// Validates `removed` against the site's unit count; order is ignored.
    pub fn new(model: &Model, site: usize, removed: &[usize]) -> Result<Self> {
        let total = model.site(site)?.units;
        let mut removed = removed.to_vec();
        removed.sort_unstable();
        if let Some(&u) = removed.iter().find(|&&u| u >= total) {
            return Err(Error::UnitOutOfRange { index: u, units: total });
        }
        if removed.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("a unit is listed twice in the prune plan"));
        }
        Ok(PrunePlan { site, removed, total })
    }

    pub fn site(&self) -> usize {
        self.site
    }

    /// Removed unit indices, ascending.
    pub fn removed(&self) -> &[usize] {
        &self.removed
    }

    pub fn kept(&self) -> Vec<usize> {
        (0..self.total).filter(|u| self.removed.binary_search(u).is_err()).collect()
    }

    /// Fraction of units kept.
    pub fn keep_ratio(&self) -> f64 {
        (self.total - self.removed.len()) as f64 / self.total as f64
    }
}

fn check_plan(model: &Model, plan: &PrunePlan) -> Result<()> {
    let units = model.site(plan.site)?.units;
    if units != plan.total {
        return Err(Error::config(format!("plan was made for {} units but the site has {units}", plan.total)));
    }
    Ok(())
}

/// Returns a copy of `model` whose forward pass zeroes the planned units.
pub fn mask_units(model: &Model, plan: &PrunePlan) -> Result<Model> {
    check_plan(model, plan)?;
    let layer = model.site(plan.site)?.layer;
    let mut masked = model.clone();
    let mask = masked.masks_mut().entry(layer).or_default();
    mask.extend_from_slice(&plan.removed);
    mask.sort_unstable();
    mask.dedup();
    Ok(masked)
}

/// Copies the entries of `t`, viewed as `[outer, dim, inner]`, whose middle
/// index is in `keep`.
fn take_along(t: &Tensor, shape: Vec<usize>, outer: usize, dim: usize, inner: usize, keep: &[usize]) -> Tensor {
    debug_assert_eq!(t.len(), outer * dim * inner);
    let mut data = Vec::with_capacity(outer * keep.len() * inner);
    for o in 0..outer {
        for &k in keep {
            let start = (o * dim + k) * inner;
            data.extend_from_slice(&t.data()[start..start + inner]);
        }
    }
    Tensor::from_parts(shape, data)
}

/// Keeps entries `keep` along the leading axis.
fn take_rows(t: &Tensor, keep: &[usize]) -> Tensor {
    let mut shape = t.shape().to_vec();
    let inner = t.len() / shape[0];
    let dim = shape[0];
    shape[0] = keep.len();
    take_along(t, shape, 1, dim, inner, keep)
}

/// Physically removes the planned units: the owning layer's weights and
/// biases, intervening batch-norm parameters and statistics, the matching
/// inputs of the next dense/conv layer, and the same slices of any momentum
/// buffers in `state`. Dropout rates between the site and the next layer are
/// scaled by the keep ratio.
pub fn slice_units(model: &Model, plan: &PrunePlan, state: Option<&mut SgdState>) -> Result<Model> {
    check_plan(model, plan)?;
    let site = model.site(plan.site)?;
    let keep = plan.kept();
    if keep.is_empty() {
        return Err(Error::config("cannot remove every unit of a site; at least one must remain"));
    }
    if plan.removed.is_empty() {
        return Ok(model.clone());
    }
    let owner = model.site_affine(site);
    let next = model.next_affine(site);
    let units = site.units;
    let block = model.activation_shape(next).iter().product::<usize>() / units;
    let ratio = plan.keep_ratio();

    for k in site.layer + 1..next {
        match &model.layers()[k] {
            Layer::Activation(_)
            | Layer::MaxPool2d { .. }
            | Layer::Dropout { .. }
            | Layer::Flatten
            | Layer::BatchNorm(_) => {}
            other => return Err(Error::UnsupportedLayer { context: "slicing", layer: other.name() }),
        }
    }

    let slice_leading = |t: &Tensor| take_rows(t, &keep);
    let slice_inputs = |layer: &Layer, t: &Tensor, is_weight: bool| -> Tensor {
        if !is_weight {
            return t.clone();
        }
        match layer {
            Layer::Dense(d) => {
                take_along(t, vec![d.out_units(), keep.len() * block], d.out_units(), units, block, &keep)
            }
            Layer::Conv2d(c) => {
                let s = c.weight.shape();
                take_along(t, vec![s[0], keep.len(), s[2], s[3]], s[0], units, s[2] * s[3], &keep)
            }
            _ => unreachable!("next_affine returns a dense/conv layer"),
        }
    };

    let (input_shape, mut layers, mut sites, mut masks) = model.clone().into_parts();

    let mut buffers = state.map(|s| &mut s.momentum.layers);
    for k in owner..=next {
        let original = model.layers()[k].clone();
        let in_channel_range = k < next;
        match &mut layers[k] {
            Layer::Dense(d) if k == owner => {
                d.weight = slice_leading(&d.weight);
                d.bias = slice_leading(&d.bias);
            }
            Layer::Conv2d(c) if k == owner => {
                c.weight = slice_leading(&c.weight);
                c.bias = slice_leading(&c.bias);
            }
            Layer::BatchNorm(b) if in_channel_range => {
                b.gamma = slice_leading(&b.gamma);
                b.beta = slice_leading(&b.beta);
                b.running_mean = slice_leading(&b.running_mean);
                b.running_var = slice_leading(&b.running_var);
            }
            Layer::Dropout { rate } if in_channel_range => *rate *= ratio,
            Layer::Dense(d) if k == next => d.weight = slice_inputs(&original, &d.weight, true),
            Layer::Conv2d(c) if k == next => c.weight = slice_inputs(&original, &c.weight, true),
            _ => {}
        }
        if let Some(bufs) = buffers.as_deref_mut() {
            for (pi, buf) in bufs[k].iter_mut().enumerate() {
                *buf = if k == next {
                    slice_inputs(&original, buf, pi == 0)
                } else if k == owner || matches!(original, Layer::BatchNorm(_)) {
                    slice_leading(buf)
                } else {
                    buf.clone()
                };
            }
        }
    }

    for s in sites.iter_mut() {
        if s.layer == site.layer {
            s.units = keep.len();
        }
    }
    if let Some(mask) = masks.remove(&site.layer) {
        let remapped: Vec<usize> = keep.iter().enumerate().filter(|(_, u)| mask.contains(u)).map(|(i, _)| i).collect();
        if !remapped.is_empty() {
            masks.insert(site.layer, remapped);
        }
    }
    Model::from_parts(input_shape, layers, sites, masks)
}

/// Optional SGD after each pruning step.
#[derive(Debug, Clone)]
pub struct FineTune<'a> {
    pub train: &'a Dataset,
    /// When set, the epoch with the lowest validation loss (after at least
    /// one epoch) is kept.
    pub validation: Option<&'a Dataset>,
    /// `epochs` is the maximum number of epochs per step.
    pub sgd: SgdConfig,
}

/// Trains `model` for up to `ft.sgd.epochs` epochs; returns the number of
/// epochs whose weights were kept.
pub fn fine_tune(model: &mut Model, ft: &FineTune<'_>, state: &mut SgdState, seed_tag: &str) -> Result<usize> {
    if ft.sgd.epochs == 0 {
        return Ok(0);
    }
    let mut best: Option<(f64, Model, usize)> = None;
    for epoch in 0..ft.sgd.epochs {
        let cfg = SgdConfig {
            epochs: 1,
            seed: rng::sub_seed(ft.sgd.seed, &format!("{seed_tag}/epoch-{epoch}")),
            lr_halving_epochs: None,
            lr: match ft.sgd.lr_halving_epochs {
                Some(n) if n > 0 => ft.sgd.lr * 0.5f64.powi((epoch / n) as i32),
                _ => ft.sgd.lr,
            },
            ..ft.sgd.clone()
        };
        sgd_train_in_place(model, ft.train, &cfg, state)?;
        if let Some(val) = ft.validation {
            let loss = model.evaluate(val)?.loss;
            if best.as_ref().is_none_or(|(b, _, _)| loss < *b) {
                best = Some((loss, model.clone(), epoch + 1));
            }
        }
    }
    Ok(match best {
        Some((_, m, epochs)) => {
            *model = m;
            epochs
        }
        None => ft.sgd.epochs,
    })
}

/// Settings for [`prune_pipeline`].
#[derive(Debug, Clone)]
pub struct PruneConfig {
    pub metric: Metric,
    pub ranking: RankMode,
    /// Fraction of each site's units to remove, in `(0, 1)`.
    pub ratio: f64,
    /// Site indices in processing order, usually outermost first.
    pub order: Vec<usize>,
    pub attribution: AttributionOptions,
}

impl PruneConfig {
    /// Outermost-first order over every site of `model`.
    pub fn outermost_first(
        model: &Model,
        metric: Metric,
        ranking: RankMode,
        ratio: f64,
        attribution: AttributionOptions,
    ) -> Self {
        PruneConfig { metric, ranking, ratio, order: (0..model.sites().len()).rev().collect(), attribution }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneStep {
    /// 1-based step number.
    pub step: usize,
    pub site: usize,
    pub metric: Metric,
    /// Removed unit indices, in the numbering before the step.
    pub removed: Vec<usize>,
    pub before: Evaluation,
    /// Right after slicing.
    pub after: Evaluation,
    /// After fine-tuning, when configured.
    pub fine_tuned: Option<Evaluation>,
    pub fine_tune_epochs: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PruneLog {
    pub steps: Vec<PruneStep>,
}

/// Number of units removed from a site of `units` at `ratio`: rounded down,
/// always leaving at least one.
pub fn removal_count(units: usize, ratio: f64) -> usize {
    ((ratio * units as f64).floor() as usize).min(units.saturating_sub(1))
}

/// Prunes each site in `config.order`: attributes on `attribution_data`,
/// ranks, slices the lowest-ranked units, optionally fine-tunes, and logs
/// metrics on `eval_data`.
pub fn prune_pipeline(
    model: &Model,
    attribution_data: &Dataset,
    eval_data: &Dataset,
    config: &PruneConfig,
    fine: Option<&FineTune<'_>>,
) -> Result<(Model, PruneLog)> {
    if !(config.ratio > 0.0 && config.ratio < 1.0) {
        return Err(Error::config(format!("prune ratio {} is not in (0, 1)", config.ratio)));
    }
    let mut model = model.clone();
    let mut state = SgdState::new(&model);
    let mut log = PruneLog::default();
    for (i, &site) in config.order.iter().enumerate() {
        let units = model.site(site)?.units;
        let before = model.evaluate(eval_data)?;
        let k = removal_count(units, config.ratio);
        let mut removed = Vec::new();
        if k > 0 {
            let attr = attribute(&model, site, attribution_data, config.metric, &config.attribution)?;
            let ranking = rank(&attr, config.ranking)?;
            removed = ranking.order[..k].to_vec();
            removed.sort_unstable();
            let plan = PrunePlan::new(&model, site, &removed)?;
            model = slice_units(&model, &plan, Some(&mut state))?;
        }
        let after = if k > 0 { model.evaluate(eval_data)? } else { before };
        let (fine_tuned, fine_tune_epochs) = match fine {
            Some(ft) => {
                let epochs = fine_tune(&mut model, ft, &mut state, &format!("step-{}", i + 1))?;
                (Some(model.evaluate(eval_data)?), epochs)
            }
            None => (None, 0),
        };
        log.steps.push(PruneStep {
            step: i + 1,
            site,
            metric: config.metric,
            removed,
            before,
            after,
            fine_tuned,
            fine_tune_epochs,
        });
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense, ModelBuilder};

    fn mlp_4_4_2() -> Model {
        ModelBuilder::new(&[4], 7).dense(4).relu().site().dense(2).build().unwrap()
    }

    fn inputs(m: usize, len: usize) -> Tensor {
        Tensor::new(vec![m, len], (0..m * len).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap()
    }

    #[test]
    fn plan_validation() {
        let m = mlp_4_4_2();
        assert!(PrunePlan::new(&m, 0, &[4]).is_err());
        assert!(PrunePlan::new(&m, 0, &[1, 1]).is_err());
        assert!(PrunePlan::new(&m, 1, &[0]).is_err());
        let p = PrunePlan::new(&m, 0, &[3, 0]).unwrap();
        assert_eq!(p.removed(), &[0, 3]);
        assert_eq!(p.kept(), vec![1, 2]);
        assert_eq!(p.keep_ratio(), 0.5);
    }

    #[test]
    fn sliced_shapes_and_outputs_match_mask() {
        let m = mlp_4_4_2();
        let plan = PrunePlan::new(&m, 0, &[1, 2]).unwrap();
        let sliced = slice_units(&m, &plan, None).unwrap();
        let masked = mask_units(&m, &plan).unwrap();
        let Layer::Dense(d0) = &sliced.layers()[0] else { panic!() };
        let Layer::Dense(d1) = &sliced.layers()[2] else { panic!() };
        assert_eq!(d0.weight.shape(), &[2, 4]);
        assert_eq!(d1.weight.shape(), &[2, 2]);
        let x = inputs(10, 4);
        let a = sliced.predict(&x).unwrap();
        let b = masked.predict(&x).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_rate_follows_keep_ratio() {
        let m = ModelBuilder::new(&[3], 1).dense(4).relu().site().dropout(0.5).dense(2).build().unwrap();
        let sliced = slice_units(&m, &PrunePlan::new(&m, 0, &[0, 3]).unwrap(), None).unwrap();
        assert_eq!(sliced.layers()[2], Layer::Dropout { rate: 0.25 });
    }

    #[test]
    fn sigmoid_breaks_mask_slice_equivalence() {
        let m =
            ModelBuilder::new(&[3], 2).dense(4).relu().site().activation(Activation::Sigmoid).dense(2).build().unwrap();
        let plan = PrunePlan::new(&m, 0, &[1]).unwrap();
        let x = inputs(5, 3);
        let a = slice_units(&m, &plan, None).unwrap().predict(&x).unwrap();
        let b = mask_units(&m, &plan).unwrap().predict(&x).unwrap();
        let diff = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-6);
    }

    #[test]
    fn cannot_remove_everything() {
        let m = mlp_4_4_2();
        assert!(slice_units(&m, &PrunePlan::new(&m, 0, &[0, 1, 2, 3]).unwrap(), None).is_err());
    }

    #[test]
    fn masks_are_renumbered_after_slicing() {
        let m = mlp_4_4_2();
        let masked = mask_units(&m, &PrunePlan::new(&m, 0, &[3]).unwrap()).unwrap();
        let sliced = slice_units(&masked, &PrunePlan::new(&masked, 0, &[0]).unwrap(), None).unwrap();
        assert_eq!(sliced.masks().get(&1), Some(&vec![2]));
    }

    #[test]
    fn momentum_buffers_are_sliced_with_parameters() {
        let m = ModelBuilder::new(&[1, 6, 6], 3)
            .conv2d(3, 3)
            .batch_norm()
            .relu()
            .site()
            .max_pool(2)
            .flatten()
            .dense(2)
            .build()
            .unwrap();
        let mut state = SgdState::new(&m);
        let sliced = slice_units(&m, &PrunePlan::new(&m, 0, &[1]).unwrap(), Some(&mut state)).unwrap();
        let fresh = SgdState::new(&sliced);
        for (a, b) in state.buffers().layers.iter().zip(&fresh.buffers().layers) {
            let sa: Vec<_> = a.iter().map(|t| t.shape().to_vec()).collect();
            let sb: Vec<_> = b.iter().map(|t| t.shape().to_vec()).collect();
            assert_eq!(sa, sb);
        }
        assert_eq!(sliced.parameter_count(), m.parameter_count() - (9 + 1) - 4 - 2 * 4);
    }

    #[test]
    fn removal_count_rounds_down_and_keeps_one() {
        assert_eq!(removal_count(4, 0.25), 1);
        assert_eq!(removal_count(3, 0.25), 0);
        assert_eq!(removal_count(2, 0.99), 1);
        assert_eq!(removal_count(1, 0.9), 0);
    }

    #[test]
    fn pipeline_with_tiny_ratio_is_a_no_op() {
        let m = mlp_4_4_2();
        let d = Dataset::classification(inputs(6, 4), vec![0, 1, 0, 1, 1, 0]).unwrap();
        let cfg = PruneConfig::outermost_first(&m, Metric::Apoz, RankMode::Mean, 0.1, AttributionOptions::default());
        let (pruned, log) = prune_pipeline(&m, &d, &d, &cfg, None).unwrap();
        assert_eq!(pruned, m);
        assert_eq!(log.steps.len(), 1);
        assert!(log.steps[0].removed.is_empty());
    }

    #[test]
    fn slicing_a_dense_head_site_keeps_outputs() {
        // A site directly on a dense layer with no activation.
        let d = |o, i, w: Vec<f64>| {
            Layer::Dense(Dense::new(Tensor::new(vec![o, i], w).unwrap(), Tensor::zeros(&[o])).unwrap())
        };
        let m = Model::new(vec![2], vec![d(2, 2, vec![1.0, 0.0, 0.0, 1.0]), d(1, 2, vec![1.0, 1.0])], &[0]).unwrap();
        let sliced = slice_units(&m, &PrunePlan::new(&m, 0, &[0]).unwrap(), None).unwrap();
        let x = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        assert_eq!(sliced.predict(&x).unwrap().data(), &[4.0]);
    }
}
