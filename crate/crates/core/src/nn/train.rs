use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{argmax, cross_entropy_grad, Gradients, Model};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Plain mini-batch SGD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub weight_decay: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::argument(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::argument("batch size must be positive"));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::argument("weight decay must be >= 0"));
        }
        Ok(())
    }
}

/// Extra knobs used by the fine-tuning attacks.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Per-layer trainable flags; `None` trains every layer.
    pub trainable: Option<Vec<bool>>,
    /// Keep weights that are exactly zero at the start pinned to zero (pruning masks).
    pub keep_zeros: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Training-set accuracy after the final epoch.
    pub accuracy: f64,
    pub epoch_losses: Vec<f64>,
}

/// Runs SGD over `inputs` with a caller-supplied per-sample loss.
///
/// `loss(i, output)` returns the loss of sample `i` and its gradient w.r.t. the model output.
/// Returns the mean loss of every epoch.
pub(crate) fn fit<L>(
    model: &mut Model,
    inputs: &[Tensor],
    config: &TrainConfig,
    options: &TrainOptions,
    mut loss: L,
) -> Result<Vec<f64>>
where
    L: FnMut(usize, &[f32]) -> (f64, Vec<f32>),
{
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::data("cannot train on an empty set"));
    }
    let layer_count = model.layers().len();
    let trainable = match &options.trainable {
        Some(flags) if flags.len() != layer_count => {
            return Err(Error::argument(format!(
                "trainable mask has {} entries for {layer_count} layers",
                flags.len()
            )))
        }
        Some(flags) => flags.clone(),
        None => vec![true; layer_count],
    };
    let zero_masks: Option<Vec<Vec<usize>>> = options.keep_zeros.then(|| {
        model
            .layers()
            .iter()
            .map(|l| {
                l.weight.as_ref().map_or(Vec::new(), |w| {
                    w.data().iter().enumerate().filter(|(_, v)| **v == 0.0).map(|(i, _)| i).collect()
                })
            })
            .collect()
    });

    let mut rng = seed::rng(config.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut grads = Gradients::zeros_like(model);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            grads.clear();
            for &i in batch {
                let trace = model.trace(inputs[i].data());
                let (l, g) = loss(i, trace.output());
                total += l;
                model.backward(&trace, &g, Some(&mut grads));
            }
            let scale = 1.0 / batch.len() as f32;
            model.sgd_step(&grads, config.learning_rate, scale, config.weight_decay, &trainable);
            if let Some(masks) = &zero_masks {
                for (layer, mask) in model.layers_mut().iter_mut().zip(masks) {
                    if let Some(w) = layer.weight.as_mut() {
                        let data = w.data_mut();
                        for &i in mask {
                            data[i] = 0.0;
                        }
                    }
                }
            }
        }
        let mean = total / inputs.len() as f64;
        if !mean.is_finite() || !model.params_finite() {
            return Err(Error::Divergence { epoch });
        }
        epoch_losses.push(mean);
    }
    Ok(epoch_losses)
}

fn check_dataset(model: &Model, dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::data(format!("dataset `{}` is empty", dataset.name)));
    }
    if dataset.num_classes != model.num_classes() {
        return Err(Error::data(format!(
            "dataset has {} classes, model outputs {}",
            dataset.num_classes,
            model.num_classes()
        )));
    }
    if dataset.image_shape() != model.input_shape() {
        return Err(Error::shape(format!(
            "dataset images {:?} do not match model input {:?}",
            dataset.image_shape(),
            model.input_shape()
        )));
    }
    Ok(())
}

/// Fraction of `dataset` that `model` labels correctly.
pub fn accuracy(model: &Model, dataset: &Dataset) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    let correct = dataset
        .images
        .iter()
        .zip(&dataset.labels)
        .filter(|(x, &y)| argmax(&model.forward_flat(x.data())) == y)
        .count();
    correct as f64 / dataset.len() as f64
}

/// Trains a copy of `model` with cross-entropy and returns it with its training accuracy.
pub fn train(model: &Model, dataset: &Dataset, config: &TrainConfig) -> Result<(Model, f64)> {
    let (trained, report) = train_with(model, dataset, config, &TrainOptions::default())?;
    Ok((trained, report.accuracy))
}

pub fn train_with(
    model: &Model,
    dataset: &Dataset,
    config: &TrainConfig,
    options: &TrainOptions,
) -> Result<(Model, TrainReport)> {
    check_dataset(model, dataset)?;
    let mut trained = model.clone();
    let labels = &dataset.labels;
    let epoch_losses = fit(&mut trained, &dataset.images, config, options, |i, out| {
        cross_entropy_grad(out, labels[i])
    })?;
    let accuracy = accuracy(&trained, dataset);
    trained
        .metadata
        .insert("train_accuracy".into(), format!("{accuracy:.6}"));
    Ok((trained, TrainReport { accuracy, epoch_losses }))
}
