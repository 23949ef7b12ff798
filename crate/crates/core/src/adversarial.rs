//! One-step gradient attacks and the success-filtered perturbation extraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::{ImageTensor, Tensor};

/// Attack strength, `0 < eps < 1` in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f32", into = "f32")]
pub struct Epsilon(f32);

impl Epsilon {
    pub fn new(value: f32) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(Epsilon(value))
        } else {
            Err(Error::argument(format!("epsilon {value} outside (0, 1)")))
        }
    }

    pub fn value(self) -> f32 {
        self.0
    }
}

impl Default for Epsilon {
    fn default() -> Self {
        Epsilon(0.03)
    }
}

impl TryFrom<f32> for Epsilon {
    type Error = Error;

    fn try_from(v: f32) -> Result<Self> {
        Epsilon::new(v)
    }
}

impl From<Epsilon> for f32 {
    fn from(e: Epsilon) -> f32 {
        e.0
    }
}

/// Step direction of the attack.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FgsmMode {
    /// `eps * sgn(grad)`: the L∞ formulation.
    #[default]
    Sign,
    /// `eps * grad / ||grad||_2`.
    L2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvResult {
    pub original: ImageTensor,
    pub adversarial: ImageTensor,
    /// `adversarial - original`; may be negative.
    pub perturbation: ImageTensor,
    pub original_label: usize,
    pub adversarial_label: usize,
    pub success: bool,
}

fn sgn(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Runs one FGSM step against `label` and clamps the result to `[0, 1]`.
///
/// `success` compares the model's predictions before and after the step.
pub fn fgsm(model: &Model, image: &ImageTensor, label: usize, eps: Epsilon, mode: FgsmMode) -> Result<AdvResult> {
    if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::argument("FGSM seed pixels must lie in [0, 1]"));
    }
    let grad = model.input_gradient(image, label)?;
    if !grad.is_finite() {
        return Err(Error::Numeric("non-finite input gradient".into()));
    }
    let e = eps.value();
    let step: Vec<f32> = match mode {
        FgsmMode::Sign => grad.data().iter().map(|&g| e * sgn(g)).collect(),
        FgsmMode::L2 => {
            let norm = grad.data().iter().map(|&g| f64::from(g) * f64::from(g)).sum::<f64>().sqrt();
            if norm > 0.0 {
                grad.data().iter().map(|&g| (f64::from(e) * f64::from(g) / norm) as f32).collect()
            } else {
                vec![0.0; grad.len()]
            }
        }
    };
    let adv_data: Vec<f32> = image
        .data()
        .iter()
        .zip(&step)
        .map(|(&x, &s)| (x + s).clamp(0.0, 1.0))
        .collect();
    let pert_data: Vec<f32> = adv_data.iter().zip(image.data()).map(|(&a, &x)| a - x).collect();
    let adversarial = Tensor::new(image.shape().to_vec(), adv_data)?;
    let perturbation = Tensor::new(image.shape().to_vec(), pert_data)?;
    let original_label = model.predict(image)?;
    let adversarial_label = model.predict(&adversarial)?;
    Ok(AdvResult {
        original: image.clone(),
        adversarial,
        perturbation,
        original_label,
        adversarial_label,
        success: original_label != adversarial_label,
    })
}

/// Label used for the attack: the model's own prediction on the seed.
pub fn relabel(model: &Model, image: &ImageTensor) -> Result<usize> {
    model.predict(image)
}

/// Kept perturbations together with the bookkeeping of the success filter.
#[derive(Debug, Clone)]
pub struct PerturbationSet {
    pub perturbations: Vec<ImageTensor>,
    /// Index into the seed list of every kept perturbation.
    pub kept: Vec<usize>,
    pub attempted: usize,
}

impl PerturbationSet {
    pub fn success_ratio(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.kept.len() as f64 / self.attempted as f64
        }
    }
}

/// Relabel, attack and keep the perturbation of every seed whose prediction flips.
pub fn generate_perturbations(
    model: &Model,
    seeds: &[ImageTensor],
    eps: Epsilon,
    mode: FgsmMode,
) -> Result<PerturbationSet> {
    if seeds.is_empty() {
        return Err(Error::argument("no seed images"));
    }
    let mut set = PerturbationSet {
        perturbations: Vec::new(),
        kept: Vec::new(),
        attempted: seeds.len(),
    };
    for (i, seed) in seeds.iter().enumerate() {
        let label = relabel(model, seed)?;
        let adv = fgsm(model, seed, label, eps, mode)?;
        if adv.success {
            set.perturbations.push(adv.perturbation);
            set.kept.push(i);
        }
    }
    if set.kept.is_empty() {
        return Err(Error::EmptyFingerprint {
            attempted: seeds.len(),
        });
    }
    Ok(set)
}
