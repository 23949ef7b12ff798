use std::collections::BTreeMap;

use rand::Rng as _;

use super::layer::{axpy, conv_backward, conv_forward, dot, ConvGeom, LayerSpec};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// A layer together with its trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

/// Ordered feed-forward layer graph with its weights.
///
/// Serves as victim, suspect and one-class encoder. The last layer's flat output
/// is the logit vector (or the latent embedding for encoders).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    output_dim: usize,
    /// Free-form audit trail (architecture name, training accuracy, attack config).
    pub metadata: BTreeMap<String, String>,
}

/// Per-layer parameter gradients, laid out like the model's parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weight: Vec<Vec<f32>>,
    pub bias: Vec<Vec<f32>>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        let weight = model
            .layers
            .iter()
            .map(|l| l.weight.as_ref().map_or(Vec::new(), |w| vec![0.0; w.len()]))
            .collect();
        let bias = model
            .layers
            .iter()
            .map(|l| l.bias.as_ref().map_or(Vec::new(), |b| vec![0.0; b.len()]))
            .collect();
        Gradients { weight, bias }
    }

    pub fn clear(&mut self) {
        for g in self.weight.iter_mut().chain(self.bias.iter_mut()) {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Saved activations of one forward pass, consumed by [`Model::backward`].
pub struct Trace {
    /// `acts[i]` is the input of layer `i`; the last entry is the model output.
    acts: Vec<Vec<f32>>,
    shapes: Vec<Vec<usize>>,
    pool_argmax: Vec<Vec<u32>>,
}

impl Trace {
    pub fn output(&self) -> &[f32] {
        self.acts.last().expect("trace always holds the input")
    }
}

fn conv_geom(spec: &LayerSpec, in_shape: &[usize], out_shape: &[usize]) -> ConvGeom {
    let LayerSpec::Conv2d {
        kernel,
        stride,
        padding,
        ..
    } = *spec
    else {
        unreachable!("conv geometry requested for {spec:?}")
    };
    ConvGeom {
        h: in_shape[0],
        w: in_shape[1],
        cin: in_shape[2],
        oh: out_shape[0],
        ow: out_shape[1],
        cout: out_shape[2],
        k: kernel,
        stride,
        pad: padding,
    }
}

/// Numerically stable softmax, accumulated in double precision.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&z| f64::from(z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / sum) as f32).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy of softmax(logits) against `label`, and its gradient w.r.t. the logits.
pub fn cross_entropy_grad(logits: &[f32], label: usize) -> (f64, Vec<f32>) {
    let mut p = softmax(logits);
    let loss = -f64::from(p[label].max(f32::MIN_POSITIVE)).ln();
    p[label] -= 1.0;
    (loss, p)
}

impl Model {
    /// Builds a model with freshly initialized weights.
    ///
    /// Weights are drawn uniformly from `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`;
    /// biases start at zero.
    pub fn new(specs: Vec<LayerSpec>, input_shape: Vec<usize>, seed: u64) -> Result<Self> {
        let mut rng = seed::rng(seed);
        let layers = specs
            .into_iter()
            .map(|spec| {
                let weight = spec.weight_shape().map(|shape| {
                    let (fan_in, fan_out) = spec.fans().unwrap_or((1, 1));
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                    let n: usize = shape.iter().product();
                    let data = (0..n).map(|_| rng.gen_range(-a..=a)).collect();
                    Tensor::new(shape, data).expect("sized from shape")
                });
                let bias = spec.bias_len().map(|n| Tensor::zeros(vec![n]));
                Layer { spec, weight, bias }
            })
            .collect();
        Model::from_layers(layers, input_shape, BTreeMap::new())
    }

    /// Assembles a model from explicit layers, checking shape compatibility.
    pub fn from_layers(
        layers: Vec<Layer>,
        input_shape: Vec<usize>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("model needs at least one layer"));
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::shape(format!("invalid input shape {input_shape:?}")));
        }
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer
                .spec
                .output_shape(&shape)
                .map_err(|e| Error::shape(format!("layer {i}: {e}")))?;
            let want_w = layer.spec.weight_shape();
            let got_w = layer.weight.as_ref().map(|w| w.shape().to_vec());
            if want_w != got_w {
                return Err(Error::shape(format!(
                    "layer {i}: weight shape {got_w:?}, expected {want_w:?}"
                )));
            }
            let want_b = layer.spec.bias_len();
            let got_b = layer.bias.as_ref().map(|b| b.len());
            if want_b != got_b {
                return Err(Error::shape(format!(
                    "layer {i}: bias length {got_b:?}, expected {want_b:?}"
                )));
            }
        }
        if shape.len() != 1 {
            return Err(Error::shape(format!(
                "final layer must produce a flat vector, got {shape:?}"
            )));
        }
        Ok(Model {
            layers,
            input_shape,
            output_dim: shape[0],
            metadata,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Number of logits (or latent dimensions for an encoder).
    pub fn num_classes(&self) -> usize {
        self.output_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_ref().map_or(0, Tensor::len) + l.bias.as_ref().map_or(0, Tensor::len))
            .sum()
    }

    /// Number of weight entries, excluding biases.
    pub fn weight_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_ref().map_or(0, Tensor::len))
            .sum()
    }

    pub fn params_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.as_ref().is_none_or(Tensor::is_finite) && l.bias.as_ref().is_none_or(Tensor::is_finite)
        })
    }

    /// Shapes of every activation, from the input to the output.
    pub fn activation_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer
                .spec
                .output_shape(shapes.last().unwrap())
                .expect("validated at construction");
            shapes.push(next);
        }
        shapes
    }

    fn check_ready(&self) -> Result<()> {
        if self.params_finite() {
            Ok(())
        } else {
            Err(Error::Numeric("model contains non-finite weights".into()))
        }
    }

    /// Splits `input` into samples, accepting either the exact input shape or a
    /// leading batch dimension.
    fn batch_count(&self, input: &Tensor) -> Result<Option<usize>> {
        let shape = input.shape();
        if shape == self.input_shape.as_slice() {
            return Ok(None);
        }
        if shape.len() == self.input_shape.len() + 1 && shape[1..] == self.input_shape[..] {
            return Ok(Some(shape[0]));
        }
        Err(Error::shape(format!(
            "model expects input {:?}, got {:?}",
            self.input_shape, shape
        )))
    }

    /// Logits for one sample or a batch (`[B, ...input_shape]` → `[B, classes]`).
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_ready()?;
        match self.batch_count(input)? {
            None => Ok(Tensor::from_vec(self.forward_flat(input.data()))),
            Some(b) => {
                let n = self.input_len();
                let mut out = Vec::with_capacity(b * self.output_dim);
                for sample in input.data().chunks_exact(n) {
                    out.extend(self.forward_flat(sample));
                }
                Tensor::new(vec![b, self.output_dim], out)
            }
        }
    }

    /// Argmax of the logits, lowest index on ties.
    pub fn predict(&self, image: &Tensor) -> Result<usize> {
        self.check_ready()?;
        if self.batch_count(image)?.is_some() {
            return Err(Error::shape("predict takes a single sample"));
        }
        Ok(argmax(&self.forward_flat(image.data())))
    }

    /// Gradient of the cross-entropy loss at `label` with respect to every input element.
    pub fn input_gradient(&self, input: &Tensor, label: usize) -> Result<Tensor> {
        self.check_ready()?;
        if label >= self.output_dim {
            return Err(Error::Label {
                label,
                num_classes: self.output_dim,
            });
        }
        if self.batch_count(input)?.is_some() {
            return Err(Error::shape("input_gradient takes a single sample"));
        }
        let trace = self.trace(input.data());
        let (_, grad_logits) = cross_entropy_grad(trace.output(), label);
        let grad = self.backward(&trace, &grad_logits, None);
        Tensor::new(input.shape().to_vec(), grad)
    }

    /// Unchecked single-sample forward pass.
    pub(crate) fn forward_flat(&self, input: &[f32]) -> Vec<f32> {
        let mut x = input.to_vec();
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            let out_shape = layer.spec.output_shape(&shape).expect("validated");
            x = self.layer_forward(layer, &x, &shape, &out_shape, None);
            shape = out_shape;
        }
        x
    }

    /// Forward pass that keeps activations for a later backward pass.
    pub fn trace(&self, input: &[f32]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut pool_argmax = Vec::with_capacity(self.layers.len());
        acts.push(input.to_vec());
        shapes.push(self.input_shape.clone());
        for layer in &self.layers {
            let in_shape = shapes.last().unwrap();
            let out_shape = layer.spec.output_shape(in_shape).expect("validated");
            let mut idx = Vec::new();
            let y = self.layer_forward(layer, acts.last().unwrap(), in_shape, &out_shape, Some(&mut idx));
            acts.push(y);
            shapes.push(out_shape);
            pool_argmax.push(idx);
        }
        Trace {
            acts,
            shapes,
            pool_argmax,
        }
    }

    fn layer_forward(
        &self,
        layer: &Layer,
        x: &[f32],
        in_shape: &[usize],
        out_shape: &[usize],
        argmax_out: Option<&mut Vec<u32>>,
    ) -> Vec<f32> {
        match layer.spec {
            LayerSpec::Linear { out_features, .. } => {
                let w = layer.weight.as_ref().unwrap().data();
                let n = x.len();
                (0..out_features)
                    .map(|o| {
                        let b = layer.bias.as_ref().map_or(0.0, |b| b.data()[o]);
                        b + dot(&w[o * n..(o + 1) * n], x)
                    })
                    .collect()
            }
            LayerSpec::Conv2d { .. } => {
                let g = conv_geom(&layer.spec, in_shape, out_shape);
                conv_forward(
                    &g,
                    x,
                    layer.weight.as_ref().unwrap().data(),
                    layer.bias.as_ref().map(Tensor::data),
                )
            }
            LayerSpec::Relu => x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            LayerSpec::LeakyRelu { slope } => {
                x.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect()
            }
            LayerSpec::MaxPool { size } => {
                let (w, c) = (in_shape[1], in_shape[2]);
                let (oh, ow) = (out_shape[0], out_shape[1]);
                let mut out = vec![0.0f32; oh * ow * c];
                let mut idx = vec![0u32; out.len()];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let mut best = usize::MAX;
                            let mut best_v = f32::NEG_INFINITY;
                            for dy in 0..size {
                                for dx in 0..size {
                                    let i = ((oy * size + dy) * w + ox * size + dx) * c + ch;
                                    if best == usize::MAX || x[i] > best_v {
                                        best = i;
                                        best_v = x[i];
                                    }
                                }
                            }
                            let o = (oy * ow + ox) * c + ch;
                            out[o] = best_v;
                            idx[o] = best as u32;
                        }
                    }
                }
                if let Some(slot) = argmax_out {
                    *slot = idx;
                }
                out
            }
            LayerSpec::Flatten => x.to_vec(),
        }
    }

    /// Back-propagates `grad_output` through a trace. Returns the input gradient and,
    /// when `grads` is given, accumulates parameter gradients into it.
    pub fn backward(&self, trace: &Trace, grad_output: &[f32], mut grads: Option<&mut Gradients>) -> Vec<f32> {
        let mut g = grad_output.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.acts[i];
            let (in_shape, out_shape) = (&trace.shapes[i], &trace.shapes[i + 1]);
            g = match layer.spec {
                LayerSpec::Linear { .. } => {
                    let w = layer.weight.as_ref().unwrap().data();
                    let n = x.len();
                    let mut gx = vec![0.0f32; n];
                    for (o, &go) in g.iter().enumerate() {
                        if go == 0.0 {
                            continue;
                        }
                        axpy(go, &w[o * n..(o + 1) * n], &mut gx);
                    }
                    if let Some(gr) = grads.as_deref_mut() {
                        let gw = &mut gr.weight[i];
                        for (o, &go) in g.iter().enumerate() {
                            if go != 0.0 {
                                axpy(go, x, &mut gw[o * n..(o + 1) * n]);
                            }
                        }
                        if layer.bias.is_some() {
                            axpy(1.0, &g, &mut gr.bias[i]);
                        }
                    }
                    gx
                }
                LayerSpec::Conv2d { .. } => {
                    let geom = conv_geom(&layer.spec, in_shape, out_shape);
                    let w = layer.weight.as_ref().unwrap().data();
                    match grads.as_deref_mut() {
                        Some(gr) => {
                            let (gw, gb) = (&mut gr.weight[i], &mut gr.bias[i]);
                            let gb = layer.bias.is_some().then_some(gb.as_mut_slice());
                            conv_backward(&geom, x, w, &g, Some(gw.as_mut_slice()), gb)
                        }
                        None => conv_backward(&geom, x, w, &g, None, None),
                    }
                }
                LayerSpec::Relu => x
                    .iter()
                    .zip(&g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect(),
                LayerSpec::LeakyRelu { slope } => x
                    .iter()
                    .zip(&g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { slope * gv })
                    .collect(),
                LayerSpec::MaxPool { .. } => {
                    let mut gx = vec![0.0f32; x.len()];
                    for (&src, &gv) in trace.pool_argmax[i].iter().zip(&g) {
                        gx[src as usize] += gv;
                    }
                    gx
                }
                LayerSpec::Flatten => g,
            };
        }
        g
    }

    /// Applies `param -= lr * (grad * scale + weight_decay * param)` to every trainable layer.
    ///
    /// Weight decay touches weights only, never biases.
    pub(crate) fn sgd_step(&mut self, grads: &Gradients, lr: f32, scale: f32, weight_decay: f32, trainable: &[bool]) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if !trainable[i] {
                continue;
            }
            if let Some(w) = layer.weight.as_mut() {
                for (p, &gv) in w.data_mut().iter_mut().zip(&grads.weight[i]) {
                    *p -= lr * (gv * scale + weight_decay * *p);
                }
            }
            if let Some(b) = layer.bias.as_mut() {
                for (p, &gv) in b.data_mut().iter_mut().zip(&grads.bias[i]) {
                    *p -= lr * gv * scale;
                }
            }
        }
    }

    /// Index of the last layer with weights (the classifier head).
    pub fn output_layer_index(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| l.spec.has_weights())
    }

    /// Replaces the output linear layer with one producing `classes` outputs.
    ///
    /// When `keep_rows` is set, the first `min(old, classes)` rows keep their trained values
    /// and only the new rows are freshly initialized.
    pub fn with_output_classes(&self, classes: usize, keep_rows: bool, seed: u64) -> Result<Model> {
        let head = self
            .output_layer_index()
            .ok_or_else(|| Error::shape("model has no trainable output layer"))?;
        if head + 1 != self.layers.len() {
            return Err(Error::shape("output layer must be the final layer"));
        }
        let LayerSpec::Linear {
            in_features,
            out_features,
            bias,
        } = self.layers[head].spec
        else {
            return Err(Error::shape("output layer must be linear"));
        };
        let new_spec = LayerSpec::Linear {
            in_features,
            out_features: classes,
            bias,
        };
        let fresh = Model::new(vec![new_spec], vec![in_features], seed)?;
        let mut fresh_layer = fresh.layers.into_iter().next().unwrap();
        if keep_rows {
            let old = &self.layers[head];
            let kept = out_features.min(classes);
            let w = fresh_layer.weight.as_mut().unwrap().data_mut();
            w[..kept * in_features].copy_from_slice(&old.weight.as_ref().unwrap().data()[..kept * in_features]);
            if let (Some(nb), Some(ob)) = (fresh_layer.bias.as_mut(), old.bias.as_ref()) {
                nb.data_mut()[..kept].copy_from_slice(&ob.data()[..kept]);
            }
        }
        let mut layers = self.layers.clone();
        layers[head] = fresh_layer;
        Model::from_layers(layers, self.input_shape.clone(), self.metadata.clone())
    }

    /// Flat iterator over all weight values (biases excluded), in layer order.
    pub fn weights(&self) -> impl Iterator<Item = f32> + '_ {
        self.layers
            .iter()
            .filter_map(|l| l.weight.as_ref())
            .flat_map(|w| w.data().iter().copied())
    }
}
