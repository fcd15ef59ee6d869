use std::collections::BTreeMap;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::layer::Layer;
use crate::nn::loss::{accuracy, loss_gradient};
use crate::tensor::Tensor;

/// Samples per chunk when a whole dataset is pushed through the network.
pub(crate) const EVAL_CHUNK: usize = 256;

/// A point in the network where units can be attributed, masked and removed.
///
/// `layer` is the index of the layer whose output holds the units; by
/// construction it sits after any batch norm and activation that follow the
/// owning dense/conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Site {
    pub layer: usize,
    pub units: usize,
}

impl Site {
    /// Index of the site's activation in an [`ActivationCache`].
    pub fn activation(&self) -> usize {
        self.layer + 1
    }
}

/// Every intermediate activation of one forward pass; entry 0 is the input
/// and entry `k + 1` is the output of layer `k`.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    activations: Vec<Tensor>,
}

impl ActivationCache {
    pub fn get(&self, index: usize) -> &Tensor {
        &self.activations[index]
    }

    pub fn len(&self) -> usize {
        self.activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activations.is_empty()
    }

    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("cache holds at least the input")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

/// Parameter gradients, laid out like `Layer::params` for every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<Tensor>>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Gradients {
            layers: model
                .layers()
                .iter()
                .map(|l| l.params().iter().map(|p| Tensor::zeros(p.shape())).collect())
                .collect(),
        }
    }
}

/// Input shape, layers, sites and masks of a model taken apart.
pub(crate) type ModelParts = (Vec<usize>, Vec<Layer>, Vec<Site>, BTreeMap<usize, Vec<usize>>);

/// An ordered chain of layers with its prunable sites and active unit masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    sites: Vec<Site>,
    masks: BTreeMap<usize, Vec<usize>>,
    shapes: Vec<Vec<usize>>,
}

impl Model {
    /// Builds and validates a model. `site_layers` lists the layers whose
    /// outputs are prunable.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, site_layers: &[usize]) -> Result<Self> {
        let shapes = Self::infer_shapes(&input_shape, &layers)?;
        let mut sites = Vec::with_capacity(site_layers.len());
        for &layer in site_layers {
            let shape = shapes
                .get(layer + 1)
                .ok_or_else(|| Error::InvalidModel(format!("site layer {layer} does not exist")))?;
            sites.push(Site { layer, units: shape[0] });
        }
        Self::from_parts(input_shape, layers, sites, BTreeMap::new())
    }

    pub(crate) fn from_parts(
        input_shape: Vec<usize>,
        layers: Vec<Layer>,
        sites: Vec<Site>,
        masks: BTreeMap<usize, Vec<usize>>,
    ) -> Result<Self> {
        let shapes = Self::infer_shapes(&input_shape, &layers)?;
        let model = Model { input_shape, layers, sites, masks, shapes };
        model.validate_sites()?;
        Ok(model)
    }

    fn infer_shapes(input_shape: &[usize], layers: &[Layer]) -> Result<Vec<Vec<usize>>> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidModel(format!("bad input shape {input_shape:?}")));
        }
        let mut shapes = vec![input_shape.to_vec()];
        for (i, layer) in layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|e| Error::InvalidModel(format!("layer {i}: {e}")))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    fn validate_sites(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidModel(msg));
        let mut prev: Option<usize> = None;
        for site in &self.sites {
            let l = site.layer;
            if l >= self.layers.len() {
                return invalid(format!("site layer {l} does not exist"));
            }
            if prev.is_some_and(|p| p >= l) {
                return invalid("sites must be listed in increasing layer order".into());
            }
            prev = Some(l);
            if self.shapes[l + 1][0] != site.units {
                return invalid(format!(
                    "site at layer {l} declares {} units, activation has {}",
                    site.units,
                    self.shapes[l + 1][0]
                ));
            }
            let mut k = l;
            loop {
                match &self.layers[k] {
                    Layer::Dense(_) | Layer::Conv2d(_) => break,
                    Layer::BatchNorm(_) | Layer::Activation(_) if k > 0 => k -= 1,
                    other => {
                        return invalid(format!(
                            "site at layer {l} is not preceded by a dense/conv layer (found {})",
                            other.name()
                        ))
                    }
                }
            }
            // Units are masked after their batch norm and nonlinearity. A site
            // that is already an activation may feed further activations.
            if let Some(next) = self.layers.get(l + 1) {
                let site_is_activation = matches!(self.layers[l], Layer::Activation(_));
                if matches!(next, Layer::BatchNorm(_)) || (matches!(next, Layer::Activation(_)) && !site_is_activation)
                {
                    return invalid(format!(
                        "site at layer {l} must follow the batch norm and activation of its layer, but {} comes next",
                        next.name()
                    ));
                }
            }
            if !self.layers[l + 1..].iter().any(Layer::is_affine) {
                return invalid(format!("site at layer {l} has no dense/conv layer downstream"));
            }
        }
        for (&layer, units) in &self.masks {
            let site = self
                .sites
                .iter()
                .find(|s| s.layer == layer)
                .ok_or_else(|| Error::InvalidModel(format!("mask on non-site layer {layer}")))?;
            if let Some(&u) = units.iter().find(|&&u| u >= site.units) {
                return Err(Error::UnitOutOfRange { index: u, units: site.units });
            }
        }
        Ok(())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub(crate) fn into_parts(self) -> ModelParts {
        (self.input_shape, self.layers, self.sites, self.masks)
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site(&self, index: usize) -> Result<Site> {
        self.sites.get(index).copied().ok_or(Error::SiteOutOfRange { index, count: self.sites.len() })
    }

    /// Units currently masked at each site layer.
    pub fn masks(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.masks
    }

    pub(crate) fn masks_mut(&mut self) -> &mut BTreeMap<usize, Vec<usize>> {
        &mut self.masks
    }

    /// Per-sample shape of activation `index` (0 = input).
    pub fn activation_shape(&self, index: usize) -> &[usize] {
        &self.shapes[index]
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().unwrap().iter().product()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    /// Layer index of the dense/conv layer that owns the site's units.
    pub(crate) fn site_affine(&self, site: Site) -> usize {
        (0..=site.layer).rev().find(|&k| self.layers[k].is_affine()).expect("validated site has an owning affine layer")
    }

    /// Layer index of the first dense/conv layer after the site.
    pub(crate) fn next_affine(&self, site: Site) -> usize {
        (site.layer + 1..self.layers.len())
            .find(|&k| self.layers[k].is_affine())
            .expect("validated site has a downstream affine layer")
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        if batch.shape()[1..] != self.input_shape[..] {
            return Err(Error::shape(format!(
                "batch {:?} does not match model input {:?}",
                batch.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    /// Runs layers `from..to` (by layer index) on `x`, applying unit masks.
    pub(crate) fn run(&self, mut x: Tensor, from: usize, to: usize) -> Tensor {
        for k in from..to {
            x = self.layers[k].forward_owned(x);
            if let Some(mask) = self.masks.get(&k) {
                x.zero_channels(mask);
            }
        }
        x
    }

    /// Full forward pass keeping every activation.
    pub fn forward(&self, batch: &Tensor) -> Result<ActivationCache> {
        self.check_input(batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.clone());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(activations.last().unwrap());
            if let Some(mask) = self.masks.get(&k) {
                y.zero_channels(mask);
            }
            if !y.is_finite() {
                return Err(Error::NonFinite(format!("layer {k} ({})", layer.name())));
            }
            activations.push(y);
        }
        Ok(ActivationCache { activations })
    }

    /// Network outputs, computed in chunks without keeping activations.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        self.activations_at(batch, self.layers.len())
    }

    /// Activation `index` for every sample of `batch`, computed in chunks.
    pub fn activations_at(&self, batch: &Tensor, index: usize) -> Result<Tensor> {
        self.check_input(batch)?;
        let m = batch.batch();
        let mut parts = Vec::with_capacity(m.div_ceil(EVAL_CHUNK));
        for start in (0..m).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(m);
            parts.push(self.run(batch.rows(start..end), 0, index));
        }
        let out = Tensor::concat_rows(&parts)?;
        if !out.is_finite() {
            return Err(Error::NonFinite(format!("activation {index}")));
        }
        Ok(out)
    }

    /// Per-sample (weighted) losses on a dataset.
    pub fn losses(&self, data: &Dataset) -> Result<Vec<f64>> {
        let out = self.predict(data.inputs())?;
        data.losses(&out, 0..data.len())
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<Evaluation> {
        let out = self.predict(data.inputs())?;
        let losses = data.losses(&out, 0..data.len())?;
        Ok(Evaluation {
            loss: losses.iter().sum::<f64>() / losses.len() as f64,
            accuracy: data.labels().map(|l| accuracy(&out, l)),
        })
    }

    /// Per-sample losses after zeroing `mask` units of site `site_index`,
    /// re-evaluating only the layers after the site from cached activations.
    pub fn forward_from(
        &self,
        site_index: usize,
        cache: &ActivationCache,
        mask: &[usize],
        data: &Dataset,
    ) -> Result<Vec<f64>> {
        let site = self.site(site_index)?;
        if let Some(&u) = mask.iter().find(|&&u| u >= site.units) {
            return Err(Error::UnitOutOfRange { index: u, units: site.units });
        }
        if cache.len() != self.layers.len() + 1 {
            return Err(Error::shape("activation cache does not belong to this model"));
        }
        let mut z = cache.get(site.activation()).clone();
        if z.batch() != data.len() {
            return Err(Error::shape(format!("cache holds {} samples, dataset {}", z.batch(), data.len())));
        }
        z.zero_channels(mask);
        let out = self.run(z, site.layer + 1, self.layers.len());
        if !out.is_finite() {
            return Err(Error::NonFinite("forward_from output".into()));
        }
        data.losses(&out, 0..data.len())
    }

    fn backprop(
        &self,
        cache: &ActivationCache,
        grad_output: Tensor,
        stop: usize,
        mut grads: Option<&mut Gradients>,
    ) -> Tensor {
        let mut g = grad_output;
        for k in (stop..self.layers.len()).rev() {
            if let Some(mask) = self.masks.get(&k) {
                g.zero_channels(mask);
            }
            let pg = grads.as_deref_mut().map(|gr| gr.layers[k].as_mut_slice());
            g = self.layers[k].backward(cache.get(k), &g, pg);
        }
        g
    }

    /// Gradient of each sample's loss w.r.t. that sample's activation
    /// `index` (0 = input), per sample.
    pub fn backward_to_activation(&self, data: &Dataset, index: usize) -> Result<Tensor> {
        if index > self.layers.len() {
            return Err(Error::shape(format!("activation {index} does not exist")));
        }
        let m = data.len();
        let mut parts = Vec::new();
        for start in (0..m).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(m);
            let cache = self.forward(&data.inputs().rows(start..end))?;
            let mut g = loss_gradient(cache.output(), &data.targets().rows(start..end), data.loss_kind())?;
            if let Some(w) = data.weights() {
                scale_rows(&mut g, &w[start..end]);
            }
            parts.push(self.backprop(&cache, g, index, None));
        }
        Tensor::concat_rows(&parts)
    }

    /// Activation `index` and the per-sample loss gradient w.r.t. it, for a
    /// dataset small enough to hold one activation cache.
    pub(crate) fn activation_and_gradient(&self, data: &Dataset, index: usize) -> Result<(Tensor, Tensor)> {
        let cache = self.forward(data.inputs())?;
        let mut g = loss_gradient(cache.output(), data.targets(), data.loss_kind())?;
        if let Some(w) = data.weights() {
            scale_rows(&mut g, w);
        }
        let grad = self.backprop(&cache, g, index, None);
        Ok((cache.get(index).clone(), grad))
    }

    /// Gradient of each sample's loss w.r.t. the site activation.
    pub fn backward_to_site(&self, data: &Dataset, site_index: usize) -> Result<Tensor> {
        let site = self.site(site_index)?;
        self.backward_to_activation(data, site.activation())
    }

    /// Per-sample losses and the gradient of their mean w.r.t. every
    /// trainable parameter. Batch norm uses its running statistics.
    pub fn backward_weights(&self, data: &Dataset) -> Result<(Vec<f64>, Gradients)> {
        let m = data.len();
        let mut grads = Gradients::zeros_like(self);
        let mut losses = Vec::with_capacity(m);
        for start in (0..m).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(m);
            let cache = self.forward(&data.inputs().rows(start..end))?;
            losses.extend(data.losses(cache.output(), start..end)?);
            let mut g = loss_gradient(cache.output(), &data.targets().rows(start..end), data.loss_kind())?;
            let scale: Vec<f64> = match data.weights() {
                Some(w) => w[start..end].iter().map(|wi| wi / m as f64).collect(),
                None => vec![1.0 / m as f64; end - start],
            };
            scale_rows(&mut g, &scale);
            self.backprop(&cache, g, 0, Some(&mut grads));
        }
        Ok((losses, grads))
    }
}

fn scale_rows(t: &mut Tensor, scale: &[f64]) {
    let n = t.sample_len();
    for (row, s) in t.data_mut().chunks_mut(n).zip(scale) {
        for v in row {
            *v *= s;
        }
    }
}
