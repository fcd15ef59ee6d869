use super::heuristics::{finish, per_unit};
use super::{AttributionResult, Metric};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::loss::Targets;
use crate::nn::{maxpool_winners, Activation, Layer, Model, EVAL_CHUNK};
use crate::tensor::Tensor;

/// LRP-α1β0 relevance of each unit, summed over its spatial positions and
/// averaged over the dataset.
pub fn lrp_alpha1beta0(model: &Model, site: usize, data: &Dataset) -> Result<AttributionResult> {
    let s = model.site(site)?;
    let mut values = Vec::with_capacity(data.len() * s.units);
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let r = lrp_relevance(model, &data.rows(start..end), s.activation())?;
        per_unit(&r, |rs| rs.iter().sum(), &mut values);
    }
    finish(site, Metric::Lrp, values, data.len(), s.units, false)
}

/// Per-sample LRP-α1β0 relevance at activation `index` (0 = input).
///
/// Relevance starts at the network output for regression and at the
/// true-class logit for classification, clamped at zero, and flows back only
/// through positive contributions. Batch norm directly after a dense/conv
/// layer is folded into it.
pub fn lrp_relevance(model: &Model, data: &Dataset, index: usize) -> Result<Tensor> {
    let layers = model.layers();
    if index > layers.len() {
        return Err(Error::shape(format!("activation {index} does not exist")));
    }
    for layer in &layers[index..] {
        if let Layer::Activation(a @ (Activation::LeakyRelu(_) | Activation::Sigmoid | Activation::Softplus)) = layer {
            return Err(Error::UnsupportedLayer { context: "LRP", layer: a.name() });
        }
    }
    let cache = model.forward(data.inputs())?;
    let mut r = seed(cache.output(), data.targets());
    let mut k = layers.len();
    while k > index {
        k -= 1;
        r = match &layers[k] {
            Layer::Activation(_) | Layer::Dropout { .. } => r,
            Layer::Flatten => r.reshape(cache.get(k).shape().to_vec())?,
            Layer::MaxPool2d { size } => {
                let x = cache.get(k);
                let shape = &x.shape()[1..];
                let mut out = vec![0.0; x.len()];
                let (il, ol) = (x.sample_len(), r.sample_len());
                for s in 0..x.batch() {
                    let rs = &r.data()[s * ol..(s + 1) * ol];
                    let dst = &mut out[s * il..(s + 1) * il];
                    maxpool_winners(*size, shape, x.sample(s), |o, i| dst[i] += rs[o]);
                }
                Tensor::new(x.shape().to_vec(), out)?
            }
            Layer::BatchNorm(bn) => {
                let (scale, _) = bn.affine();
                if k > index && layers[k - 1].is_affine() {
                    k -= 1;
                    positive_rule(&layers[k], Some(&scale), cache.get(k), &r)?
                } else {
                    // A lone batch norm is a diagonal affine map.
                    let x = cache.get(k);
                    let (c, sp) = x.channel_layout();
                    let mut out = r.data().to_vec();
                    for (i, v) in out.iter_mut().enumerate() {
                        let ch = i / sp % c;
                        if x.data()[i] * scale[ch] <= 0.0 {
                            *v = 0.0;
                        }
                    }
                    Tensor::new(x.shape().to_vec(), out)?
                }
            }
            affine => positive_rule(affine, None, cache.get(k), &r)?,
        };
    }
    Ok(r)
}

fn seed(output: &Tensor, targets: &Targets) -> Tensor {
    match targets {
        Targets::Classes(labels) => {
            let n = output.sample_len();
            let mut r = vec![0.0; output.len()];
            for (s, &y) in labels.iter().enumerate() {
                r[s * n + y] = output.data()[s * n + y].max(0.0);
            }
            Tensor::from_parts(output.shape().to_vec(), r)
        }
        Targets::Values(_) => output.map(|v| v.max(0.0)),
    }
}

/// α1β0 rule for a dense/conv layer with input `a`: each output's relevance
/// is split over the inputs in proportion to their positive contributions
/// `(a_i w_ij)⁺`. `scale` multiplies each output unit's weights (folded BN).
fn positive_rule(layer: &Layer, scale: Option<&[f64]>, a: &Tensor, r: &Tensor) -> Result<Tensor> {
    let split = |keep: fn(f64) -> bool| -> Layer {
        let mut l = layer.clone();
        let (w, b) = match &mut l {
            Layer::Dense(d) => (&mut d.weight, &mut d.bias),
            Layer::Conv2d(c) => (&mut c.weight, &mut c.bias),
            _ => unreachable!("only affine layers reach the positive rule"),
        };
        let per_unit = w.len() / w.shape()[0];
        for (u, row) in w.data_mut().chunks_mut(per_unit).enumerate() {
            let sc = scale.map_or(1.0, |s| s[u]);
            for v in row {
                let x = *v * sc;
                *v = if keep(x) { x } else { 0.0 };
            }
        }
        b.data_mut().fill(0.0);
        l
    };
    match layer {
        Layer::Dense(_) | Layer::Conv2d(_) => {}
        other => return Err(Error::UnsupportedLayer { context: "LRP", layer: other.name() }),
    }
    let pos_w = split(|x| x > 0.0);
    let a_pos = a.map(|v| v.max(0.0));
    let has_neg = a.data().iter().any(|&v| v < 0.0);

    let mut z = pos_w.forward(&a_pos);
    let neg = if has_neg {
        let neg_w = split(|x| x < 0.0);
        let a_neg = a.map(|v| v.min(0.0));
        for (zi, v) in z.data_mut().iter_mut().zip(neg_w.forward(&a_neg).data()) {
            *zi += v;
        }
        Some((neg_w, a_neg))
    } else {
        None
    };
    let ratio: Vec<f64> =
        z.data().iter().zip(r.data()).map(|(&zj, &rj)| if zj > 0.0 { rj / zj } else { 0.0 }).collect();
    let ratio = Tensor::from_parts(z.shape().to_vec(), ratio);

    let c = pos_w.backward(&a_pos, &ratio, None);
    let mut out: Vec<f64> = a_pos.data().iter().zip(c.data()).map(|(x, c)| x * c).collect();
    if let Some((neg_w, a_neg)) = neg {
        let c = neg_w.backward(&a_neg, &ratio, None);
        for ((o, x), c) in out.iter_mut().zip(a_neg.data()).zip(c.data()) {
            *o += x * c;
        }
    }
    Tensor::new(a.shape().to_vec(), out)
}
