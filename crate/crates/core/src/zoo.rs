//! Small architecture family for victim and suspect models.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, LayerSpec, Model, TrainConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchName {
    /// Two hidden linear layers.
    Mlp2,
    /// Two conv blocks and a linear head.
    CnnS,
    /// Three conv blocks and two linear layers.
    CnnD,
}

impl ArchName {
    pub const ALL: [ArchName; 3] = [ArchName::Mlp2, ArchName::CnnS, ArchName::CnnD];

    pub fn as_str(&self) -> &'static str {
        match self {
            ArchName::Mlp2 => "mlp2",
            ArchName::CnnS => "cnn_s",
            ArchName::CnnD => "cnn_d",
        }
    }

    /// Layer template for an `[H, W, C]` input.
    pub fn layers(&self, input_shape: &[usize], num_classes: usize) -> Result<Vec<LayerSpec>> {
        let [h, w, c] = *input_shape else {
            return Err(Error::shape(format!("architectures take [H, W, C] inputs, got {input_shape:?}")));
        };
        if num_classes == 0 {
            return Err(Error::argument("num_classes must be positive"));
        }
        let pool = LayerSpec::MaxPool { size: 2 };
        Ok(match self {
            ArchName::Mlp2 => vec![
                LayerSpec::Flatten,
                LayerSpec::linear(h * w * c, 64),
                LayerSpec::Relu,
                LayerSpec::linear(64, 32),
                LayerSpec::Relu,
                LayerSpec::linear(32, num_classes),
            ],
            ArchName::CnnS => vec![
                LayerSpec::conv(c, 8, 3),
                LayerSpec::Relu,
                pool,
                LayerSpec::conv(8, 16, 3),
                LayerSpec::Relu,
                pool,
                LayerSpec::Flatten,
                LayerSpec::linear(16 * (h / 4) * (w / 4), num_classes),
            ],
            ArchName::CnnD => vec![
                LayerSpec::conv(c, 8, 3),
                LayerSpec::Relu,
                pool,
                LayerSpec::conv(8, 16, 3),
                LayerSpec::Relu,
                pool,
                LayerSpec::conv(16, 16, 3),
                LayerSpec::Relu,
                pool,
                LayerSpec::Flatten,
                LayerSpec::linear(16 * (h / 8) * (w / 8), 32),
                LayerSpec::Relu,
                LayerSpec::linear(32, num_classes),
            ],
        })
    }
}

impl std::fmt::Display for ArchName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ArchName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp2" => Ok(ArchName::Mlp2),
            "cnn_s" => Ok(ArchName::CnnS),
            "cnn_d" => Ok(ArchName::CnnD),
            other => Err(Error::argument(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Untrained model of the named architecture.
pub fn build_arch(name: ArchName, input_shape: &[usize], num_classes: usize, seed: u64) -> Result<Model> {
    let mut model = Model::new(name.layers(input_shape, num_classes)?, input_shape.to_vec(), seed)?;
    model.metadata.insert("arch".into(), name.as_str().into());
    model.metadata.insert("init_seed".into(), seed.to_string());
    Ok(model)
}

/// Trains one model per architecture on `dataset`.
///
/// Each model's init and shuffle seeds derive from `(config.seed, arch, position)`.
pub fn train_victims(dataset: &Dataset, archs: &[ArchName], config: &TrainConfig) -> Result<Vec<Model>> {
    if archs.is_empty() {
        return Err(Error::argument("need at least one victim architecture"));
    }
    archs
        .iter()
        .enumerate()
        .map(|(i, &arch)| {
            let init = seed::derive(config.seed, arch.as_str(), i as u64);
            let model = build_arch(arch, dataset.image_shape(), dataset.num_classes, init)?;
            let cfg = TrainConfig {
                seed: seed::derive(config.seed, "shuffle", i as u64),
                ..config.clone()
            };
            let (mut trained, _) = nn::train(&model, dataset, &cfg)?;
            trained.metadata.insert("dataset".into(), dataset.name.clone());
            Ok(trained)
        })
        .collect()
}
