use std::ops::Range;

use super::tail::activation_dense;
use super::{AttributionResult, Metric};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Activation, ConvGeometry, Layer, Model, Site, EVAL_CHUNK};
use crate::shapley::{exact_shapley, sampled_shapley, Coalition, Game};
use crate::tensor::{axpy, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapleyMode {
    /// Enumerate every coalition (at most 20 units).
    Exact,
    Sampled {
        permutations: usize,
        seed: u64,
    },
}

/// Shapley values of the units at `site`, with the per-sample loss as the
/// game value. Signed: harmful units get negative scores.
pub fn shapley_attribution(model: &Model, site: usize, data: &Dataset, mode: ShapleyMode) -> Result<AttributionResult> {
    let game = PruningGame::new(model, site, data)?;
    let matrix = match mode {
        ShapleyMode::Exact => exact_shapley(&game)?,
        ShapleyMode::Sampled { permutations, seed } => sampled_shapley(&game, permutations, seed)?,
    };
    if matrix.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Shapley values".into()));
    }
    Ok(AttributionResult::from_matrix(site, Metric::Shapley, matrix, true))
}

/// Evaluates the network with subsets of a site's units zeroed, re-running
/// only the layers after the site.
pub(crate) struct SiteEvaluator<'a> {
    model: &'a Model,
    site: Site,
    data: &'a Dataset,
    mode: Mode,
}

// One evaluator per site and call; boxing the large variant buys nothing.
#[allow(clippy::large_enum_variant)]
enum Mode {
    /// Cached site activation; the whole tail is re-run per evaluation.
    Direct { z: Tensor },
    /// The layers between the site and the next dense/conv layer act per
    /// channel and keep zeros at zero, so removing a unit only subtracts its
    /// contribution from that layer's cached pre-activation.
    Incremental {
        next: usize,
        /// Input of the next dense/conv layer.
        u: Tensor,
        /// Its output, before any mask.
        pre: Tensor,
        /// Values of `u` per unit and sample.
        block: usize,
        update: Update,
        fused: Option<FusedTail>,
    },
}

/// A tail made of at most one activation (plus dropouts) and the output
/// dense layer, evaluated by [`activation_dense`].
struct FusedTail {
    activation: Option<Activation>,
    dense: usize,
}

impl FusedTail {
    fn detect(model: &Model, next: usize) -> Option<Self> {
        let layers = model.layers();
        let last = layers.len() - 1;
        if last <= next || !matches!(layers[last], Layer::Dense(_)) || model.masks().range(next..).next().is_some() {
            return None;
        }
        let mut activation = None;
        for l in &layers[next + 1..last] {
            match l {
                Layer::Dropout { .. } => {}
                Layer::Activation(a) if activation.is_none() => activation = Some(*a),
                _ => return None,
            }
        }
        Some(FusedTail { activation, dense: last })
    }
}

enum Update {
    /// Transposed dense weight, `[in, out]`.
    Dense {
        wt: Vec<f64>,
        out: usize,
    },
    Conv {
        geometry: ConvGeometry,
        weight: Tensor,
    },
}

impl<'a> SiteEvaluator<'a> {
    pub fn new(model: &'a Model, site_index: usize, data: &'a Dataset) -> Result<Self> {
        let site = model.site(site_index)?;
        data.check_classes(model.output_len())?;
        let next = model.next_affine(site);
        let separable = model.layers()[site.layer + 1..next].iter().all(|l| match l {
            Layer::Activation(a) => a.preserves_zero(),
            Layer::MaxPool2d { .. } | Layer::Dropout { .. } | Layer::Flatten => true,
            _ => false,
        }) && !model.masks().range(site.layer + 1..next).any(|(_, m)| !m.is_empty());

        let mode = if separable {
            let u = model.activations_at(data.inputs(), next)?;
            let mut parts = Vec::with_capacity(u.batch().div_ceil(EVAL_CHUNK));
            for start in (0..u.batch()).step_by(EVAL_CHUNK) {
                parts.push(model.layers()[next].forward(&u.rows(start..(start + EVAL_CHUNK).min(u.batch()))));
            }
            let pre = Tensor::concat_rows(&parts)?;
            let block = u.sample_len() / site.units;
            let update = match &model.layers()[next] {
                Layer::Dense(d) => {
                    let (o, i) = (d.out_units(), d.in_units());
                    let mut wt = vec![0.0; o * i];
                    for r in 0..o {
                        for c in 0..i {
                            wt[c * o + r] = d.weight.data()[r * i + c];
                        }
                    }
                    Update::Dense { wt, out: o }
                }
                Layer::Conv2d(c) => {
                    let shape = model.activation_shape(next);
                    Update::Conv {
                        geometry: c.geometry(shape[1], shape[2]).expect("validated conv geometry"),
                        weight: c.weight.clone(),
                    }
                }
                _ => unreachable!("next_affine returns a dense/conv layer"),
            };
            Mode::Incremental { fused: FusedTail::detect(model, next), next, u, pre, block, update }
        } else {
            Mode::Direct { z: model.activations_at(data.inputs(), site.activation())? }
        };
        Ok(SiteEvaluator { model, site, data, mode })
    }

    pub fn units(&self) -> usize {
        self.site.units
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    fn tail(&self, mut x: Tensor, next: usize) -> Tensor {
        if let Some(mask) = self.model.masks().get(&next) {
            x.zero_channels(mask);
        }
        self.model.run(x, next + 1, self.model.layers().len())
    }

    /// Network outputs on samples `range` with the `absent` units zeroed.
    pub fn outputs(&self, absent: &[usize], range: Range<usize>) -> Tensor {
        match &self.mode {
            Mode::Direct { z } => {
                let mut x = z.rows(range);
                x.zero_channels(absent);
                self.model.run(x, self.site.layer + 1, self.model.layers().len())
            }
            Mode::Incremental { next, u, pre, block, .. } => {
                if absent.is_empty() {
                    return self.tail(pre.rows(range), *next);
                }
                let mut x = u.rows(range);
                let n = x.sample_len();
                for sample in x.data_mut().chunks_mut(n) {
                    for &c in absent {
                        sample[c * block..(c + 1) * block].fill(0.0);
                    }
                }
                self.tail(self.model.layers()[*next].forward(&x), *next)
            }
        }
    }

    /// Walks `order`, removing one unit per step, and calls
    /// `visit(t, samples, out)` with the outputs on `samples` after the first
    /// `t` removals. `samples` partitions `range` and may be visited in
    /// blocks. With `endpoints` unset the unpruned state and the all-removed
    /// state are skipped.
    pub fn removal_outputs(
        &self,
        order: &[usize],
        range: Range<usize>,
        endpoints: bool,
        mut visit: impl FnMut(usize, Range<usize>, &Tensor) -> Result<()>,
    ) -> Result<()> {
        if let Some(&u) = order.iter().find(|&&u| u >= self.site.units) {
            return Err(Error::UnitOutOfRange { index: u, units: self.site.units });
        }
        let n = self.site.units;
        let complete = order.len() == n;
        if endpoints {
            visit(0, range.clone(), &self.outputs(&[], range.clone()))?;
        }
        let inner = if complete { order.len() - 1 } else { order.len() };
        match &self.mode {
            Mode::Direct { z } => {
                let mut x = z.rows(range.clone());
                for (t, &p) in order[..inner].iter().enumerate() {
                    x.zero_channels(&[p]);
                    let out = self.model.run(x.clone(), self.site.layer + 1, self.model.layers().len());
                    visit(t + 1, range.clone(), &out)?;
                }
            }
            Mode::Incremental { next, u, pre, block, update, fused } => {
                // Small sample blocks keep the running pre-activations in
                // cache across the whole removal sequence.
                let mut scratch = Vec::new();
                for start in range.clone().step_by(REMOVAL_BLOCK) {
                    let sub = start..(start + REMOVAL_BLOCK).min(range.end);
                    let mut cur = pre.rows(sub.clone());
                    let (ul, pl) = (u.sample_len(), cur.sample_len());
                    for (t, &p) in order[..inner].iter().enumerate() {
                        for (i, s) in sub.clone().enumerate() {
                            let us = &u.data()[s * ul + p * block..s * ul + (p + 1) * block];
                            let cs = &mut cur.data_mut()[i * pl..(i + 1) * pl];
                            match update {
                                Update::Dense { wt, out } => {
                                    for (k, &coef) in us.iter().enumerate() {
                                        if coef != 0.0 {
                                            let col = (p * block + k) * out;
                                            axpy(-coef, &wt[col..col + out], cs);
                                        }
                                    }
                                }
                                Update::Conv { geometry, weight } => {
                                    if us.iter().any(|&v| v != 0.0) {
                                        geometry.accumulate_channel(us, weight, p, -1.0, cs);
                                    }
                                }
                            }
                        }
                        match fused {
                            Some(f) => {
                                let Layer::Dense(d) = &self.model.layers()[f.dense] else { unreachable!() };
                                let mut out = Tensor::zeros(&[sub.len(), d.out_units()]);
                                activation_dense(cur.data(), f.activation, d, out.data_mut(), &mut scratch);
                                visit(t + 1, sub.clone(), &out)?;
                            }
                            None => visit(t + 1, sub.clone(), &self.tail(cur.clone(), *next))?,
                        }
                    }
                }
            }
        }
        if complete && endpoints {
            let all: Vec<usize> = (0..n).collect();
            visit(n, range.clone(), &self.outputs(&all, range))?;
        }
        Ok(())
    }
}

/// Samples per block on the incremental removal path.
const REMOVAL_BLOCK: usize = 32;

/// The cooperative game over a site's units: a coalition keeps its units,
/// every other unit is zeroed, and the value is each sample's loss.
pub struct PruningGame<'a> {
    eval: SiteEvaluator<'a>,
    baseline: Vec<f64>,
    empty: Vec<f64>,
}

impl<'a> PruningGame<'a> {
    pub fn new(model: &'a Model, site: usize, data: &'a Dataset) -> Result<Self> {
        let eval = SiteEvaluator::new(model, site, data)?;
        let n = eval.units();
        let all: Vec<usize> = (0..n).collect();
        let mut baseline = Vec::with_capacity(data.len());
        let mut empty = Vec::with_capacity(data.len());
        for start in (0..data.len()).step_by(EVAL_CHUNK) {
            let r = start..(start + EVAL_CHUNK).min(data.len());
            baseline.extend(data.losses(&eval.outputs(&[], r.clone()), r.clone())?);
            empty.extend(data.losses(&eval.outputs(&all, r.clone()), r)?);
        }
        if baseline.iter().chain(&empty).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pruning game losses".into()));
        }
        Ok(PruningGame { eval, baseline, empty })
    }

    /// Per-sample loss with every unit kept.
    pub fn baseline(&self) -> &[f64] {
        &self.baseline
    }

    /// Per-sample loss with every unit removed.
    pub fn empty_loss(&self) -> &[f64] {
        &self.empty
    }
}

impl Game for PruningGame<'_> {
    fn players(&self) -> usize {
        self.eval.units()
    }

    fn samples(&self) -> usize {
        self.baseline.len()
    }

    fn value(&self, coalition: &Coalition, samples: Range<usize>) -> Result<Vec<f64>> {
        if coalition.players() != self.players() {
            return Err(Error::shape("coalition size does not match the site"));
        }
        let absent = coalition.absent();
        if absent.is_empty() {
            return Ok(self.baseline[samples].to_vec());
        }
        if absent.len() == self.players() {
            return Ok(self.empty[samples].to_vec());
        }
        let data = self.eval.data();
        let mut v = Vec::with_capacity(samples.len());
        for start in samples.clone().step_by(EVAL_CHUNK) {
            let r = start..(start + EVAL_CHUNK).min(samples.end);
            v.extend(data.losses(&self.eval.outputs(&absent, r.clone()), r)?);
        }
        Ok(v)
    }

    fn removal_path(&self, order: &[usize], samples: Range<usize>) -> Result<Vec<f64>> {
        let len = samples.len();
        let mut rows = vec![0.0; (order.len() + 1) * len];
        rows[..len].copy_from_slice(&self.baseline[samples.clone()]);
        let data = self.eval.data();
        self.eval.removal_outputs(order, samples.clone(), false, |t, sub, out| {
            let at = t * len + (sub.start - samples.start);
            rows[at..at + sub.len()].copy_from_slice(&data.losses(out, sub)?);
            Ok(())
        })?;
        if order.len() == self.players() {
            rows[order.len() * len..].copy_from_slice(&self.empty[samples]);
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, ModelBuilder};
    use crate::shapley::Game;

    fn small_data(inputs: &[usize], m: usize, classes: usize) -> Dataset {
        let len: usize = inputs.iter().product();
        let x: Vec<f64> = (0..m * len).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let mut shape = vec![m];
        shape.extend_from_slice(inputs);
        Dataset::classification(Tensor::new(shape, x).unwrap(), (0..m).map(|i| i % classes).collect()).unwrap()
    }

    /// Removal paths must agree with direct evaluation of each coalition.
    fn check_path(model: &Model, site: usize, data: &Dataset) {
        let game = PruningGame::new(model, site, data).unwrap();
        let n = game.players();
        let order: Vec<usize> = (0..n).rev().collect();
        let path = game.removal_path(&order, 0..data.len()).unwrap();
        let mut c = Coalition::full(n);
        for t in 0..=n {
            if t > 0 {
                c.remove(order[t - 1]);
            }
            let direct = game.value(&c, 0..data.len()).unwrap();
            for (a, b) in path[t * data.len()..(t + 1) * data.len()].iter().zip(&direct) {
                assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "step {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn incremental_dense_path_matches_direct() {
        let model = ModelBuilder::new(&[6], 3)
            .dense(5)
            .leaky_relu(0.1)
            .site()
            .dropout(0.2)
            .dense(4)
            .relu()
            .site()
            .dense(3)
            .build()
            .unwrap();
        let data = small_data(&[6], 19, 3);
        check_path(&model, 0, &data);
        check_path(&model, 1, &data);
    }

    #[test]
    fn incremental_conv_paths_match_direct() {
        let model = ModelBuilder::new(&[2, 8, 8], 5)
            .conv2d(3, 3)
            .batch_norm()
            .relu()
            .site()
            .max_pool(2)
            .conv2d(4, 2)
            .relu()
            .site()
            .flatten()
            .dense(3)
            .build()
            .unwrap();
        let data = small_data(&[2, 8, 8], 7, 3);
        check_path(&model, 0, &data);
        check_path(&model, 1, &data);
    }

    #[test]
    fn non_separable_tail_uses_direct_mode() {
        let model =
            ModelBuilder::new(&[3], 1).dense(4).relu().site().activation(Activation::Sigmoid).dense(2).build().unwrap();
        let data = small_data(&[3], 5, 2);
        let eval = SiteEvaluator::new(&model, 0, &data).unwrap();
        assert!(matches!(eval.mode, Mode::Direct { .. }));
        check_path(&model, 0, &data);
    }

    #[test]
    fn forward_from_agrees_with_game_value() {
        let model = ModelBuilder::new(&[4], 2).dense(5).relu().site().dense(2).build().unwrap();
        let data = small_data(&[4], 9, 2);
        let game = PruningGame::new(&model, 0, &data).unwrap();
        let cache = model.forward(data.inputs()).unwrap();
        let direct = model.forward_from(0, &cache, &[1, 3], &data).unwrap();
        let via_game = game.value(&Coalition::from_members(&[0, 2, 4], 5), 0..9).unwrap();
        for (a, b) in direct.iter().zip(&via_game) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
