//! Stage-based GCN and CNN architectures built from a config.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GcnError, Result};
use crate::gabor::{build_bank, GaborParams, DEFAULT_SIGMA};
use crate::gof::{modulation_gain, scale_for_layer, GofLayer};
use crate::network::{ConvLayer, FeatureShape, Layer, LinearLayer, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gcn,
    Cnn,
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}

fn default_fc_hidden() -> usize {
    128
}

fn default_dropout() -> f64 {
    0.5
}

fn default_gain_init() -> bool {
    true
}

fn default_orientations() -> usize {
    4
}

fn default_scales() -> usize {
    4
}

fn default_kernel() -> usize {
    3
}

/// Stages of (conv, ReLU, 2x2 max-pool), then FC, ReLU, dropout, and a linear
/// classifier. Convolutions are zero-padded to keep the spatial size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Learned filters per stage (GoFs for `gcn`, output channels for `cnn`).
    pub widths: Vec<usize>,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_orientations")]
    pub orientations: usize,
    #[serde(default = "default_scales")]
    pub scales: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Width of the hidden FC layer; 0 removes it.
    #[serde(default = "default_fc_hidden")]
    pub fc_hidden: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Multiply initial learned filters by the reciprocal RMS of their Gabor
    /// kernels so modulated filters start at the plain fan-based magnitude,
    /// and let the optimizer step in that unit.
    #[serde(default = "default_gain_init")]
    pub gabor_gain_init: bool,
}

impl ModelConfig {
    pub fn gcn(widths: Vec<usize>, orientations: usize, scales: usize) -> Self {
        ModelConfig {
            kind: ModelKind::Gcn,
            widths,
            kernel: default_kernel(),
            orientations,
            scales,
            sigma: DEFAULT_SIGMA,
            fc_hidden: default_fc_hidden(),
            dropout: default_dropout(),
            gabor_gain_init: default_gain_init(),
        }
    }

    pub fn gabor_params(&self) -> GaborParams {
        GaborParams {
            num_orientations: self.orientations,
            num_scales: self.scales,
            kernel_size: self.kernel,
            sigma: self.sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(GcnError::Config("model widths must be non-empty and positive".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(GcnError::Config(format!("kernel size {} must be odd", self.kernel)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GcnError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.kind == ModelKind::Gcn {
            self.gabor_params().validate()?;
        }
        Ok(())
    }

    /// Plain CNN whose conv trunk stores about as many weights as this GCN:
    /// widths scaled by `round(sqrt(U))`.
    pub fn matched_cnn(&self) -> ModelConfig {
        let factor = (self.orientations as f64).sqrt().round().max(1.0) as usize;
        self.as_cnn(factor)
    }

    /// Plain CNN with the same channel counts as this GCN's feature maps, so
    /// its conv trunk stores exactly U times as many weights.
    pub fn equivalent_cnn(&self) -> ModelConfig {
        self.as_cnn(self.orientations)
    }

    fn as_cnn(&self, factor: usize) -> ModelConfig {
        match self.kind {
            ModelKind::Cnn => self.clone(),
            ModelKind::Gcn => ModelConfig {
                kind: ModelKind::Cnn,
                widths: self.widths.iter().map(|w| w * factor).collect(),
                ..self.clone()
            },
        }
    }

    /// Builds a freshly initialized network for `input`-shaped samples.
    pub fn build(&self, input: FeatureShape, num_classes: usize, rng: &mut impl Rng) -> Result<Network> {
        self.validate()?;
        let pad = self.kernel / 2;
        let mut layers = Vec::new();
        let mut channels = input.channels;
        let mut groups = input.orient_groups.unwrap_or(1);
        let (mut h, mut w) = (input.height, input.width);
        let stages = self.widths.len();
        for (stage, &width) in self.widths.iter().enumerate() {
            match self.kind {
                ModelKind::Gcn => {
                    let bank = build_bank(self.gabor_params())?;
                    let scale = scale_for_layer(stage, stages, self.scales);
                    let gain = modulation_gain(&bank, scale);
                    let mut layer = GofLayer::new(channels, groups, width, bank, scale, pad, 1, rng)?;
                    if self.gabor_gain_init {
                        layer.learned_mut().data_mut().iter_mut().for_each(|w| *w *= gain);
                        layer.set_update_unit(gain)?;
                    }
                    channels = layer.out_channels();
                    groups = self.orientations;
                    layers.push(Layer::Gof(layer));
                }
                ModelKind::Cnn => {
                    layers.push(Layer::Conv(ConvLayer::new(channels, width, self.kernel, pad, 1, rng)?));
                    channels = width;
                }
            }
            layers.push(Layer::Relu);
            if h < 2 || w < 2 {
                return Err(GcnError::Config(format!(
                    "{stages} pooling stages do not fit a {}x{} input",
                    input.height, input.width
                )));
            }
            layers.push(Layer::MaxPool2);
            h /= 2;
            w /= 2;
        }
        let mut features = channels * h * w;
        if self.fc_hidden > 0 {
            layers.push(Layer::Linear(LinearLayer::new(features, self.fc_hidden, rng)));
            layers.push(Layer::Relu);
            features = self.fc_hidden;
        }
        if self.dropout > 0.0 {
            layers.push(Layer::Dropout(self.dropout));
        }
        layers.push(Layer::Linear(LinearLayer::new(features, num_classes, rng)));
        Network::new(layers, input, num_classes)
    }
}
