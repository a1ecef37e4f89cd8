//! Named configurations.

use crate::datagen::GenParams;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Toy,
    Paper,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "toy" => Some(Self::Toy),
            "paper" => Some(Self::Paper),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Toy => "toy",
            Self::Paper => "paper",
        }
    }

    pub fn model(self) -> ModelConfig {
        match self {
            Self::Toy => toy_model(),
            Self::Paper => paper_model(),
        }
    }

    pub fn train(self) -> TrainConfig {
        match self {
            Self::Toy => toy_train(),
            Self::Paper => TrainConfig::default(),
        }
    }

    pub fn gen(self) -> GenParams {
        match self {
            Self::Toy => toy_gen(),
            Self::Paper => GenParams { count: 312, height: 256, width: 256, ..GenParams::default() },
        }
    }
}

/// Widths 4/8/16/32 on 64×64 images. The bottleneck is 4×4, so the
/// pyramid dilations are scaled down to 1/2/3/4.
pub fn toy_model() -> ModelConfig {
    let mut c = ModelConfig::with_base_width(4, 4, (64, 64));
    c.aspp_dilations = vec![1, 2, 3, 4];
    c
}

/// Widths 64/128/256/512 on 256×256 images, dilations 1/6/12/18.
pub fn paper_model() -> ModelConfig {
    ModelConfig::with_base_width(64, 4, (256, 256))
}

/// Two stages of widths 2/4 on 8×8 inputs, small enough for exhaustive
/// finite differences.
pub fn gradcheck_model() -> ModelConfig {
    let mut c = ModelConfig::with_base_width(2, 2, (8, 8));
    c.aspp_dilations = vec![1, 2, 3, 4];
    c
}

pub fn toy_train() -> TrainConfig {
    TrainConfig { epochs: 300, ..TrainConfig::default() }
}

/// 32 train / 12 test samples of 64×64.
pub fn toy_gen() -> GenParams {
    GenParams { count: 44, train_count: Some(32), ..GenParams::default() }
}
