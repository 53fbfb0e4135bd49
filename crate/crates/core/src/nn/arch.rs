//! Named architectures used by the benchmark.

use std::fmt;
use std::str::FromStr;

use super::layers::LayerSpec;
use super::model::{Model, ParamMap};
use crate::datasets::DatasetKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// conv 3×3×12 → ReLU → pool → dense 10 → softmax; 20,410 parameters.
    MnistCnn,
    /// Two conv blocks (96, 192 filters) and a dense classifier for 32×32×3 input.
    CifarSmallNet,
}

impl Architecture {
    pub const ALL: [Architecture; 2] = [Architecture::MnistCnn, Architecture::CifarSmallNet];

    pub fn id(self) -> &'static str {
        match self {
            Architecture::MnistCnn => "mnist-cnn",
            Architecture::CifarSmallNet => "cifar-smallnet",
        }
    }

    pub fn dataset(self) -> DatasetKind {
        match self {
            Architecture::MnistCnn => DatasetKind::Mnist,
            Architecture::CifarSmallNet => DatasetKind::Cifar10,
        }
    }

    pub fn input_shape(self) -> Vec<usize> {
        match self {
            Architecture::MnistCnn => vec![28, 28, 1],
            Architecture::CifarSmallNet => vec![32, 32, 3],
        }
    }

    pub fn layers(self) -> Vec<LayerSpec> {
        use LayerSpec::*;
        match self {
            Architecture::MnistCnn => vec![
                Conv2d {
                    in_channels: 1,
                    out_channels: 12,
                    kernel: 3,
                },
                Relu,
                MaxPool2x2,
                Flatten,
                Dense {
                    inputs: 13 * 13 * 12,
                    outputs: 10,
                },
                Softmax,
            ],
            Architecture::CifarSmallNet => vec![
                Conv2d {
                    in_channels: 3,
                    out_channels: 96,
                    kernel: 3,
                },
                Relu,
                MaxPool2x2,
                Conv2d {
                    in_channels: 96,
                    out_channels: 192,
                    kernel: 3,
                },
                Relu,
                MaxPool2x2,
                Flatten,
                Dense {
                    inputs: 6 * 6 * 192,
                    outputs: 10,
                },
                Softmax,
            ],
        }
    }

    /// Freshly initialized model.
    pub fn build(self, seed: u64) -> Result<Model> {
        Model::new(self.id(), self.input_shape(), self.layers(), seed)
    }

    /// Wraps an existing parameter set, e.g. one read back from an archive.
    pub fn with_params(self, params: ParamMap) -> Result<Model> {
        let mut model = Model {
            arch: self.id().to_string(),
            input_shape: self.input_shape(),
            layers: self.layers(),
            params: ParamMap::new(),
            seed: 0,
            epochs: 0,
        };
        super::model::check_params(&model.layers, &params)?;
        model.params = params;
        Ok(model)
    }

    /// Finds the architecture whose parameter shapes match `params`.
    pub fn identify(params: &ParamMap) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| super::model::check_params(&a.layers(), params).is_ok())
            .ok_or_else(|| {
                Error::UnknownArch("parameter shapes match no known architecture".into())
            })
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| Error::UnknownArch(s.to_string()))
    }
}
