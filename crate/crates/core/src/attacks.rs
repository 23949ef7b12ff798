//! Simulated data-theft attacks that turn a stolen dataset or model into a suspect.

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::nn::{self, Model, TrainConfig, TrainOptions};
use crate::seed;
use crate::zoo::{build_arch, ArchName};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaaMode {
    /// Train a fresh model on the merged dataset.
    Scratch,
    /// Extend a stolen model's output layer and fine-tune it on the merged dataset.
    Pretrained,
}

/// One attack run. `train` carries the optimizer settings and the run's seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackConfig {
    /// Retrain the stolen dataset on another architecture.
    Maa { arch: ArchName, train: TrainConfig },
    /// Add extra classes to the stolen dataset.
    Daa {
        mode: DaaMode,
        arch: ArchName,
        train: TrainConfig,
    },
    /// Retrain the victim architecture on a class-balanced fraction of the data.
    Mra {
        fraction: f64,
        arch: ArchName,
        train: TrainConfig,
    },
    /// Replace the output layer and fine-tune on another dataset.
    Tla {
        train: TrainConfig,
        #[serde(default)]
        freeze_features: bool,
    },
    /// Fine-tune the stolen model on a small subset of the stolen data.
    Mfa { subset_size: usize, train: TrainConfig },
    /// Global magnitude pruning followed by masked fine-tuning.
    Mpa { prune_fraction: f64, train: TrainConfig },
}

/// What a correct detector should say about the resulting suspect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expectation {
    Stolen,
    Benign,
    /// Too little stolen knowledge survives for detection to be expected.
    ExpectedUndetectable,
}

impl AttackConfig {
    pub fn label(&self) -> String {
        match self {
            AttackConfig::Maa { arch, .. } => format!("maa-{arch}"),
            AttackConfig::Daa { mode, arch, .. } => match mode {
                DaaMode::Scratch => format!("daa-scratch-{arch}"),
                DaaMode::Pretrained => "daa-pretrained".into(),
            },
            AttackConfig::Mra { fraction, arch, .. } => format!("mra-{arch}-{:.0}pct", fraction * 100.0),
            AttackConfig::Tla { freeze_features, .. } => {
                if *freeze_features {
                    "tla-frozen".into()
                } else {
                    "tla".into()
                }
            }
            AttackConfig::Mfa { subset_size, .. } => format!("mfa-{subset_size}"),
            AttackConfig::Mpa { prune_fraction, .. } => format!("mpa-{:.0}pct", prune_fraction * 100.0),
        }
    }

    pub fn train_config(&self) -> &TrainConfig {
        match self {
            AttackConfig::Maa { train, .. }
            | AttackConfig::Daa { train, .. }
            | AttackConfig::Mra { train, .. }
            | AttackConfig::Tla { train, .. }
            | AttackConfig::Mfa { train, .. }
            | AttackConfig::Mpa { train, .. } => train,
        }
    }

    /// Retraining on a tenth of the data or less is not expected to carry a detectable fingerprint.
    pub fn expectation(&self) -> Expectation {
        match self {
            AttackConfig::Mra { fraction, .. } if *fraction <= 0.1 + 1e-9 => Expectation::ExpectedUndetectable,
            _ => Expectation::Stolen,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        match self {
            AttackConfig::Mra { fraction, .. } if !(*fraction > 0.0 && *fraction <= 1.0) => {
                Err(Error::argument(format!("MRA fraction {fraction} outside (0, 1]")))
            }
            AttackConfig::Mpa { prune_fraction, .. } if !(*prune_fraction > 0.0 && *prune_fraction < 1.0) => {
                Err(Error::argument(format!("prune fraction {prune_fraction} outside (0, 1)")))
            }
            AttackConfig::Mfa { subset_size: 0, .. } => Err(Error::argument("MFA subset must be non-empty")),
            _ => Ok(()),
        }
    }
}

fn stamp(mut model: Model, config: &AttackConfig) -> Result<Model> {
    model.metadata.insert("attack".into(), serde_json::to_string(config)?);
    Ok(model)
}

fn fresh_train(arch: ArchName, dataset: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    let init = seed::derive(cfg.seed, "attack-init", 0);
    let model = build_arch(arch, dataset.image_shape(), dataset.num_classes, init)?;
    Ok(nn::train(&model, dataset, cfg)?.0)
}

pub fn attack_maa(dataset: &Dataset, arch: ArchName, cfg: &TrainConfig) -> Result<Model> {
    let config = AttackConfig::Maa {
        arch,
        train: cfg.clone(),
    };
    stamp(fresh_train(arch, dataset, cfg)?, &config)
}

/// `source` is required for [`DaaMode::Pretrained`] and ignored otherwise.
pub fn attack_daa(
    dataset: &Dataset,
    extra: &Dataset,
    mode: DaaMode,
    arch: ArchName,
    source: Option<&Model>,
    cfg: &TrainConfig,
) -> Result<Model> {
    let merged = data::augment_merge(dataset, extra, seed::derive(cfg.seed, "daa-merge", 0))?;
    let config = AttackConfig::Daa {
        mode,
        arch,
        train: cfg.clone(),
    };
    let model = match mode {
        DaaMode::Scratch => fresh_train(arch, &merged, cfg)?,
        DaaMode::Pretrained => {
            let source = source.ok_or_else(|| Error::argument("pretrained DAA needs a stolen model"))?;
            let extended = source.with_output_classes(merged.num_classes, true, seed::derive(cfg.seed, "daa-head", 0))?;
            nn::train(&extended, &merged, cfg)?.0
        }
    };
    stamp(model, &config)
}

pub fn attack_mra(dataset: &Dataset, fraction: f64, arch: ArchName, cfg: &TrainConfig) -> Result<Model> {
    let config = AttackConfig::Mra {
        fraction,
        arch,
        train: cfg.clone(),
    };
    config.validate()?;
    let reduced = data::subsample(dataset, fraction, seed::derive(cfg.seed, "mra-subsample", 0))?;
    stamp(fresh_train(arch, &reduced, cfg)?, &config)
}

pub fn attack_tla(model: &Model, target: &Dataset, cfg: &TrainConfig, freeze_features: bool) -> Result<Model> {
    let config = AttackConfig::Tla {
        train: cfg.clone(),
        freeze_features,
    };
    let replaced = model.with_output_classes(target.num_classes, false, seed::derive(cfg.seed, "tla-head", 0))?;
    let head = replaced.output_layer_index().expect("replaced head exists");
    let options = TrainOptions {
        trainable: freeze_features.then(|| (0..replaced.layers().len()).map(|i| i == head).collect()),
        keep_zeros: false,
    };
    let (trained, _) = nn::train_with(&replaced, target, cfg, &options)?;
    stamp(trained, &config)
}

pub fn attack_mfa(model: &Model, subset: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    let config = AttackConfig::Mfa {
        subset_size: subset.len(),
        train: cfg.clone(),
    };
    stamp(nn::train(model, subset, cfg)?.0, &config)
}

/// Zeroes the `ceil(fraction * |W|)` smallest-magnitude weights over the whole model
/// (biases excluded); ties go to the earliest weight.
pub fn prune_global(model: &Model, fraction: f64) -> Result<Model> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::argument(format!("prune fraction {fraction} outside (0, 1)")));
    }
    let total = model.weight_count();
    let k = ((fraction * total as f64) - 1e-9).ceil() as usize;
    let mut order: Vec<(f32, usize)> = model.weights().map(f32::abs).zip(0..).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut mask = vec![false; total];
    for &(_, i) in &order[..k] {
        mask[i] = true;
    }
    let mut pruned = model.clone();
    let mut offset = 0;
    for layer in pruned.layers_mut() {
        if let Some(w) = layer.weight.as_mut() {
            for (v, &m) in w.data_mut().iter_mut().zip(&mask[offset..]) {
                if m {
                    *v = 0.0;
                }
            }
            offset += w.len();
        }
    }
    Ok(pruned)
}

/// Prunes, then fine-tunes on `fine_tune` with the pruned weights held at zero.
pub fn attack_mpa(model: &Model, prune_fraction: f64, fine_tune: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    let config = AttackConfig::Mpa {
        prune_fraction,
        train: cfg.clone(),
    };
    let pruned = prune_global(model, prune_fraction)?;
    let options = TrainOptions {
        trainable: None,
        keep_zeros: true,
    };
    let (trained, _) = nn::train_with(&pruned, fine_tune, cfg, &options)?;
    stamp(trained, &config)
}

/// Data and models an attack may draw on.
pub struct AttackInputs<'a> {
    /// The stolen dataset.
    pub dataset: &'a Dataset,
    /// The stolen model (TLA, MFA, MPA, pretrained DAA).
    pub victim: &'a Model,
    /// Extra classes for DAA.
    pub extra: Option<&'a Dataset>,
    /// Transfer target for TLA.
    pub target: Option<&'a Dataset>,
}

pub fn run_attack(config: &AttackConfig, inputs: &AttackInputs<'_>) -> Result<Model> {
    config.validate()?;
    match config {
        AttackConfig::Maa { arch, train } => attack_maa(inputs.dataset, *arch, train),
        AttackConfig::Daa { mode, arch, train } => {
            let extra = inputs.extra.ok_or_else(|| Error::argument("DAA needs an extra dataset"))?;
            attack_daa(inputs.dataset, extra, *mode, *arch, Some(inputs.victim), train)
        }
        AttackConfig::Mra { fraction, arch, train } => attack_mra(inputs.dataset, *fraction, *arch, train),
        AttackConfig::Tla { train, freeze_features } => {
            let target = inputs.target.ok_or_else(|| Error::argument("TLA needs a target dataset"))?;
            attack_tla(inputs.victim, target, train, *freeze_features)
        }
        AttackConfig::Mfa { subset_size, train } => {
            let (subset, _, _) = data::split(
                inputs.dataset,
                (*subset_size, 0, 0),
                seed::derive(train.seed, "mfa-subset", 0),
            )?;
            attack_mfa(inputs.victim, &subset, train)
        }
        AttackConfig::Mpa { prune_fraction, train } => attack_mpa(inputs.victim, *prune_fraction, inputs.dataset, train),
    }
}
