//! One-class meta-classifier over fingerprint spectra.
//!
//! A bias-free encoder maps each spectrum to a latent vector; the anomaly score is the
//! squared distance to a fixed centre. Training shrinks the hypersphere around the
//! protected dataset's fingerprints and a validation quantile sets the decision threshold.

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::nn::{self, LayerSpec, Model, TrainConfig, TrainOptions};
use crate::seed;
use crate::spectrum::{generate_spectra, SpectrumImage, SpectrumOptions};
use crate::tensor::Tensor;

/// Smallest magnitude a centre coordinate may take.
pub const CENTER_GUARD: f32 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvddConfig {
    pub latent_dim: usize,
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f32,
    pub seed: u64,
    /// Fraction of validation scores left above the threshold.
    pub quantile: f64,
}

impl Default for SvddConfig {
    fn default() -> Self {
        SvddConfig {
            latent_dim: 32,
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 32,
            weight_decay: 1e-4,
            seed: 0,
            quantile: 0.04,
        }
    }
}

impl SvddConfig {
    pub fn validate(&self) -> Result<()> {
        validate_quantile(self.quantile)?;
        if self.latent_dim == 0 || self.batch_size == 0 {
            return Err(Error::argument("latent_dim and batch_size must be positive"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::argument("SVDD learning rate must be positive"));
        }
        Ok(())
    }
}

fn validate_quantile(q: f64) -> Result<()> {
    if q > 0.0 && q < 0.5 {
        Ok(())
    } else {
        Err(Error::argument(format!("quantile {q} outside (0, 0.5)")))
    }
}

/// Encoder layout: two stride-2 3x3 convolutions (8 and 16 channels) with
/// leaky-ReLU(0.1), then a linear map to the latent space. No layer has a bias.
pub fn encoder_layers(height: usize, width: usize, latent_dim: usize) -> Vec<LayerSpec> {
    let conv = |cin, cout| LayerSpec::Conv2d {
        in_channels: cin,
        out_channels: cout,
        kernel: 3,
        stride: 2,
        padding: 1,
        bias: false,
    };
    let down = |n: usize| (n + 2 - 3) / 2 + 1;
    let (h2, w2) = (down(down(height)), down(down(width)));
    vec![
        conv(1, 8),
        LayerSpec::LeakyRelu { slope: 0.1 },
        conv(8, 16),
        LayerSpec::LeakyRelu { slope: 0.1 },
        LayerSpec::Flatten,
        LayerSpec::Linear {
            in_features: 16 * h2 * w2,
            out_features: latent_dim,
            bias: false,
        },
    ]
}

pub fn build_encoder(height: usize, width: usize, latent_dim: usize, seed: u64) -> Result<Model> {
    if height < 2 || width < 2 {
        return Err(Error::shape("spectra must be at least 2x2"));
    }
    Model::new(encoder_layers(height, width, latent_dim), vec![height, width, 1], seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaClassifier {
    encoder: Model,
    center: Vec<f32>,
    threshold: Option<f64>,
}

impl MetaClassifier {
    pub fn new(encoder: Model, center: Vec<f32>, threshold: Option<f64>) -> Result<Self> {
        if encoder.layers().iter().any(|l| l.spec.has_bias() || l.bias.is_some()) {
            return Err(Error::argument("meta encoder layers must be bias-free"));
        }
        if center.len() != encoder.num_classes() {
            return Err(Error::shape(format!(
                "centre has {} coordinates, encoder emits {}",
                center.len(),
                encoder.num_classes()
            )));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric("centre must be finite".into()));
        }
        if let Some(t) = threshold {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::argument(format!("threshold {t} must be finite and >= 0")));
            }
        }
        Ok(MetaClassifier {
            encoder,
            center,
            threshold,
        })
    }

    pub fn encoder(&self) -> &Model {
        &self.encoder
    }

    pub fn center(&self) -> &[f32] {
        &self.center
    }

    pub fn latent_dim(&self) -> usize {
        self.center.len()
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    /// Spectrum size the encoder accepts.
    pub fn input_size(&self) -> (usize, usize) {
        let s = self.encoder.input_shape();
        (s[0], s[1])
    }

    pub fn embed(&self, spectrum: &SpectrumImage) -> Result<Vec<f32>> {
        Ok(self.encoder.forward(&spectrum.to_tensor())?.into_data())
    }

    /// Squared distance of the embedding to the centre; lower means closer to the protected data.
    pub fn score(&self, spectrum: &SpectrumImage) -> Result<f64> {
        Ok(sq_dist(&self.embed(spectrum)?, &self.center))
    }

    pub fn scores(&self, spectra: &[SpectrumImage]) -> Result<Vec<f64>> {
        spectra.iter().map(|s| self.score(s)).collect()
    }

    /// Sets the threshold from validation spectra (see [`threshold_from_scores`]).
    pub fn calibrate(&mut self, val_spectra: &[SpectrumImage], quantile: f64) -> Result<f64> {
        let tau = calibrate_threshold(self, val_spectra, quantile)?;
        self.threshold = Some(tau);
        Ok(tau)
    }

    pub fn with_threshold(mut self, tau: f64) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::argument(format!("threshold {tau} must be finite and >= 0")));
        }
        self.threshold = Some(tau);
        Ok(self)
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &c)| {
            let d = f64::from(x) - f64::from(c);
            d * d
        })
        .sum()
}

/// Mean encoder output over `spectra`, with coordinates of magnitude below
/// [`CENTER_GUARD`] pushed out to `±CENTER_GUARD`.
pub fn init_center(encoder: &Model, spectra: &[SpectrumImage]) -> Result<Vec<f32>> {
    if spectra.is_empty() {
        return Err(Error::data("cannot place a centre without spectra"));
    }
    let mut sum = vec![0.0f64; encoder.num_classes()];
    for s in spectra {
        let z = encoder.forward(&s.to_tensor())?;
        for (acc, &v) in sum.iter_mut().zip(z.data()) {
            *acc += f64::from(v);
        }
    }
    Ok(sum
        .iter()
        .map(|&t| {
            let c = (t / spectra.len() as f64) as f32;
            if c.abs() < CENTER_GUARD {
                if c < 0.0 {
                    -CENTER_GUARD
                } else {
                    CENTER_GUARD
                }
            } else {
                c
            }
        })
        .collect())
}

/// Loss trajectory of one SVDD training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvddReport {
    /// Mean training score of the freshly initialized encoder.
    pub initial_mean_score: f64,
    pub final_mean_score: f64,
    pub epoch_losses: Vec<f64>,
}

/// Trains the hypersphere encoder by SGD on `mean ||phi(x) - c||^2 + (lambda / 2) ||W||^2`
/// with the centre held fixed. The result is not yet calibrated.
pub fn train_svdd(spectra: &[SpectrumImage], config: &SvddConfig) -> Result<(MetaClassifier, SvddReport)> {
    config.validate()?;
    if spectra.len() < config.batch_size {
        return Err(Error::data(format!(
            "{} spectra is fewer than one batch of {}",
            spectra.len(),
            config.batch_size
        )));
    }
    let (h, w) = (spectra[0].height(), spectra[0].width());
    if spectra.iter().any(|s| (s.height(), s.width()) != (h, w)) {
        return Err(Error::shape("training spectra differ in size"));
    }
    let mut encoder = build_encoder(h, w, config.latent_dim, seed::derive(config.seed, "encoder", 0))?;
    let center = init_center(&encoder, spectra)?;
    let inputs: Vec<Tensor> = spectra.iter().map(SpectrumImage::to_tensor).collect();
    let mean_score = |enc: &Model| -> f64 {
        inputs.iter().map(|x| sq_dist(&enc.forward_flat(x.data()), &center)).sum::<f64>() / inputs.len() as f64
    };
    let initial_mean_score = mean_score(&encoder);
    let train_cfg = TrainConfig {
        learning_rate: config.learning_rate,
        epochs: config.epochs,
        batch_size: config.batch_size,
        seed: seed::derive(config.seed, "svdd-shuffle", 0),
        weight_decay: config.weight_decay,
    };
    let epoch_losses = nn::fit(&mut encoder, &inputs, &train_cfg, &TrainOptions::default(), |_, out| {
        let grad: Vec<f32> = out.iter().zip(&center).map(|(&z, &c)| 2.0 * (z - c)).collect();
        (sq_dist(out, &center), grad)
    })?;
    let final_mean_score = mean_score(&encoder);
    let meta = MetaClassifier::new(encoder, center, None)?;
    Ok((
        meta,
        SvddReport {
            initial_mean_score,
            final_mean_score,
            epoch_losses,
        },
    ))
}

/// Threshold from validation scores: sort descending and take index `floor(q * m)`,
/// leaving about a fraction `q` of the scores strictly above it.
pub fn threshold_from_scores(scores: &[f64], quantile: f64) -> Result<f64> {
    validate_quantile(quantile)?;
    let m = scores.len();
    let needed = (1.0 / quantile - 1e-9).ceil() as usize;
    if m < needed {
        return Err(Error::data(format!(
            "{m} validation scores are too few for quantile {quantile} (need {needed})"
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite validation score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[data::fraction_of(m, quantile)])
}

pub fn calibrate_threshold(meta: &MetaClassifier, val_spectra: &[SpectrumImage], quantile: f64) -> Result<f64> {
    threshold_from_scores(&meta.scores(val_spectra)?, quantile)
}

/// Everything produced while building a meta-classifier.
#[derive(Debug, Clone)]
pub struct MetaBuild {
    pub meta: MetaClassifier,
    /// Seeds reserved for verifying suspects.
    pub test: Dataset,
    pub train_spectra: Vec<SpectrumImage>,
    pub val_spectra: Vec<SpectrumImage>,
    pub val_scores: Vec<f64>,
    pub svdd: SvddReport,
    /// FGSM success ratio of each victim on the train split.
    pub victim_success: Vec<f64>,
    /// Wall-clock seconds spent generating spectra, and seeds attempted.
    pub fingerprint_seconds: f64,
    pub fingerprint_attempts: usize,
    pub svdd_seconds: f64,
}

fn victim_name(model: &Model, index: usize) -> String {
    let arch = model.metadata.get("arch").map_or("model", String::as_str);
    format!("victim #{index} ({arch})")
}

/// Split the subset, fingerprint every victim on the train and validation parts,
/// train the encoder on the union of train spectra and calibrate on the union of
/// validation spectra.
pub fn build_meta(
    subset: &Dataset,
    victims: &[Model],
    split_counts: (usize, usize, usize),
    options: &SpectrumOptions,
    config: &SvddConfig,
) -> Result<MetaBuild> {
    config.validate()?;
    if victims.is_empty() {
        return Err(Error::Build("no victim models".into()));
    }
    let (train, val, test) = data::split(subset, split_counts, seed::derive(config.seed, "split", 0))?;
    let mut train_spectra = Vec::new();
    let mut val_spectra = Vec::new();
    let mut victim_success = Vec::new();
    let clock = std::time::Instant::now();
    for (k, victim) in victims.iter().enumerate() {
        let wrap = |e: Error| match e {
            Error::EmptyFingerprint { attempted } => Error::Build(format!(
                "{} produced no successful adversarial sample out of {attempted}",
                victim_name(victim, k)
            )),
            other => other,
        };
        let t = generate_spectra(victim, &train.images, options).map_err(wrap)?;
        let v = generate_spectra(victim, &val.images, options).map_err(wrap)?;
        victim_success.push(t.success_ratio());
        train_spectra.extend(t.spectra);
        val_spectra.extend(v.spectra);
    }
    let fingerprint_seconds = clock.elapsed().as_secs_f64();
    let clock = std::time::Instant::now();
    let (mut meta, svdd) = train_svdd(&train_spectra, config)?;
    let svdd_seconds = clock.elapsed().as_secs_f64();
    let val_scores = meta.scores(&val_spectra)?;
    let tau = threshold_from_scores(&val_scores, config.quantile)?;
    meta.threshold = Some(tau);
    Ok(MetaBuild {
        meta,
        test,
        train_spectra,
        val_spectra,
        val_scores,
        svdd,
        victim_success,
        fingerprint_seconds,
        fingerprint_attempts: victims.len() * (train.len() + val.len()),
        svdd_seconds,
    })
}
