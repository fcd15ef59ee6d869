use super::{AttributionResult, Metric};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, Model, EVAL_CHUNK};
use crate::shapley::AttributionMatrix;
use crate::tensor::Tensor;

/// ℓ1 norm of each unit's incoming weights (bias excluded).
pub fn weight_norm(model: &Model, site: usize) -> Result<AttributionResult> {
    let s = model.site(site)?;
    let weight = match &model.layers()[model.site_affine(s)] {
        Layer::Dense(d) => &d.weight,
        Layer::Conv2d(c) => &c.weight,
        other => return Err(Error::UnsupportedLayer { context: "weight norm", layer: other.name() }),
    };
    let per_unit = weight.len() / weight.shape()[0];
    let scores = weight.data().chunks(per_unit).map(|w| w.iter().map(|v| v.abs()).sum()).collect();
    Ok(AttributionResult::data_free(site, Metric::WeightNorm, scores, false))
}

/// One minus the fraction of zero outputs of each unit, over samples and
/// spatial positions.
pub fn apoz(model: &Model, site: usize, data: &Dataset) -> Result<AttributionResult> {
    let s = model.site(site)?;
    // A leaky unit is "off" when negative; otherwise test for exact zero.
    let leaky = matches!(model.layers()[s.layer], Layer::Activation(Activation::LeakyRelu(_)));
    let active = move |v: f64| if leaky { v > 0.0 } else { v != 0.0 };
    let mut values = Vec::with_capacity(data.len() * s.units);
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let z = model.activations_at(&data.inputs().rows(start..end), s.activation())?;
        per_unit(&z, |zs| zs.iter().filter(|&&v| active(v)).count() as f64 / zs.len() as f64, &mut values);
    }
    finish(site, Metric::Apoz, values, data.len(), s.units, false)
}

/// Per-sample ℓ1 norm of the loss gradient over each unit's elements.
pub fn sensitivity(model: &Model, site: usize, data: &Dataset) -> Result<AttributionResult> {
    let s = model.site(site)?;
    let mut values = Vec::with_capacity(data.len() * s.units);
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let (_, g) = model.activation_and_gradient(&data.rows(start..end), s.activation())?;
        per_unit(&g, |gs| gs.iter().map(|v| v.abs()).sum(), &mut values);
    }
    finish(site, Metric::Sensitivity, values, data.len(), s.units, false)
}

/// First-order estimate of the loss change from removing each unit:
/// `⟨∂L/∂z_i, z_i⟩` averaged over the unit's spatial positions, with the
/// absolute value taken per sample unless `signed`.
pub fn taylor(model: &Model, site: usize, data: &Dataset, signed: bool) -> Result<AttributionResult> {
    let s = model.site(site)?;
    let mut values = Vec::with_capacity(data.len() * s.units);
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let (z, g) = model.activation_and_gradient(&data.rows(start..end), s.activation())?;
        let spatial = z.channel_layout().1;
        for (zs, gs) in z.data().chunks(spatial).zip(g.data().chunks(spatial)) {
            let t = zs.iter().zip(gs).map(|(a, b)| a * b).sum::<f64>() / spatial as f64;
            values.push(if signed { t } else { t.abs() });
        }
    }
    let metric = if signed { Metric::TaylorSigned } else { Metric::Taylor };
    finish(site, metric, values, data.len(), s.units, signed)
}

/// Reduces each unit's block of every sample to one value, appending them
/// sample-major.
pub(super) fn per_unit(t: &Tensor, f: impl Fn(&[f64]) -> f64, out: &mut Vec<f64>) {
    let spatial = t.channel_layout().1;
    out.extend(t.data().chunks(spatial).map(f));
}

pub(super) fn finish(
    site: usize,
    metric: Metric,
    values: Vec<f64>,
    samples: usize,
    units: usize,
    signed: bool,
) -> Result<AttributionResult> {
    if samples == 0 {
        return Err(Error::EmptyDataset);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{metric} scores")));
    }
    let matrix = AttributionMatrix::from_values(values, samples, units)?;
    Ok(AttributionResult::from_matrix(site, metric, matrix, signed))
}
