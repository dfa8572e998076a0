//! Declarative network description, read from TOML.
//!
//! ```toml
//! name = "two-conv"
//! input = [3, 8, 8]          # channels, height, width
//! gate_classifier = false     # gate the final linear layer too
//!
//! [[layer]]
//! id = "conv1"
//! kind = "conv"               # conv | depthwise_conv | linear | batchnorm | activation | avgpool | add
//! filters = 8
//! kernel = 3                  # or [kh, kw]
//! padding = 1
//!
//! [[layer]]
//! kind = "batchnorm"          # inputs default to the previous layer
//!
//! [[layer]]
//! kind = "activation"
//! function = "relu"
//! ```
//!
//! Omitted `id`s become `l<index>`. `inputs` names earlier layers or `"input"`.
//! `avgpool` without `window` pools globally.

use serde::{Deserialize, Serialize};

use crate::autodiff::Activation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    DepthwiseConv,
    Linear,
    Batchnorm,
    Activation,
    Avgpool,
    Add,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::DepthwiseConv => "depthwise_conv",
            LayerKind::Linear => "linear",
            LayerKind::Batchnorm => "batchnorm",
            LayerKind::Activation => "activation",
            LayerKind::Avgpool => "avgpool",
            LayerKind::Add => "add",
        }
    }

    /// Layers that own a weight tensor with output filters.
    pub fn is_weighted(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::DepthwiseConv | LayerKind::Linear)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    Sigmoid,
}

impl From<ActivationKind> for Activation {
    fn from(k: ActivationKind) -> Self {
        match k {
            ActivationKind::Relu => Activation::Relu,
            ActivationKind::Sigmoid => Activation::Sigmoid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelSize {
    Square(usize),
    Rect([usize; 2]),
}

impl KernelSize {
    pub fn dims(self) -> (usize, usize) {
        match self {
            KernelSize::Square(k) => (k, k),
            KernelSize::Rect([h, w]) => (h, w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gated: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<ActivationKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
}

impl LayerConfig {
    pub fn new(kind: LayerKind) -> Self {
        LayerConfig {
            id: None,
            kind,
            filters: None,
            kernel: None,
            stride: None,
            padding: None,
            inputs: None,
            gated: None,
            bias: None,
            function: None,
            window: None,
        }
    }
}

fn default_name() -> String {
    "net".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// `[channels, height, width]` of one input sample.
    pub input: [usize; 3],
    #[serde(default)]
    pub gate_classifier: bool,
    #[serde(rename = "layer", default)]
    pub layers: Vec<LayerConfig>,
}

impl NetworkConfig {
    pub fn new(name: &str, input: [usize; 3]) -> Self {
        NetworkConfig {
            name: name.into(),
            input,
            gate_classifier: false,
            layers: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    fn push(mut self, id: &str, mut layer: LayerConfig) -> Self {
        if !id.is_empty() {
            layer.id = Some(id.into());
        }
        self.layers.push(layer);
        self
    }

    pub fn conv(self, id: &str, filters: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let mut l = LayerConfig::new(LayerKind::Conv);
        l.filters = Some(filters);
        l.kernel = Some(KernelSize::Square(kernel));
        l.stride = Some(stride);
        l.padding = Some(padding);
        self.push(id, l)
    }

    pub fn depthwise(self, id: &str, kernel: usize, stride: usize, padding: usize) -> Self {
        let mut l = LayerConfig::new(LayerKind::DepthwiseConv);
        l.kernel = Some(KernelSize::Square(kernel));
        l.stride = Some(stride);
        l.padding = Some(padding);
        self.push(id, l)
    }

    pub fn linear(self, id: &str, features: usize) -> Self {
        let mut l = LayerConfig::new(LayerKind::Linear);
        l.filters = Some(features);
        self.push(id, l)
    }

    pub fn batchnorm(self, id: &str) -> Self {
        self.push(id, LayerConfig::new(LayerKind::Batchnorm))
    }

    pub fn relu(self, id: &str) -> Self {
        let mut l = LayerConfig::new(LayerKind::Activation);
        l.function = Some(ActivationKind::Relu);
        self.push(id, l)
    }

    pub fn avgpool(self, id: &str, window: usize) -> Self {
        let mut l = LayerConfig::new(LayerKind::Avgpool);
        l.window = Some(window);
        self.push(id, l)
    }

    pub fn global_pool(self, id: &str) -> Self {
        self.push(id, LayerConfig::new(LayerKind::Avgpool))
    }

    pub fn add(self, id: &str, a: &str, b: &str) -> Self {
        let mut l = LayerConfig::new(LayerKind::Add);
        l.inputs = Some(vec![a.into(), b.into()]);
        self.push(id, l)
    }

    /// Overrides the inputs of the most recently pushed layer.
    pub fn from(mut self, inputs: &[&str]) -> Self {
        if let Some(l) = self.layers.last_mut() {
            l.inputs = Some(inputs.iter().map(|s| s.to_string()).collect());
        }
        self
    }

    /// Overrides the gating flag of the most recently pushed layer.
    pub fn gated(mut self, gated: bool) -> Self {
        if let Some(l) = self.layers.last_mut() {
            l.gated = Some(gated);
        }
        self
    }
}

/// Small reference architectures used by examples, tests and the CLI.
pub mod presets {
    use super::NetworkConfig;

    /// conv-bn-relu twice, global pool, linear classifier.
    pub fn two_conv(classes: usize) -> NetworkConfig {
        NetworkConfig::new("two-conv", [3, 8, 8])
            .conv("conv1", 8, 3, 1, 1)
            .batchnorm("bn1")
            .relu("relu1")
            .conv("conv2", 8, 3, 1, 1)
            .batchnorm("bn2")
            .relu("relu2")
            .global_pool("pool")
            .linear("fc", classes)
    }

    /// Stem conv followed by one basic residual block.
    pub fn residual(classes: usize) -> NetworkConfig {
        NetworkConfig::new("residual", [3, 8, 8])
            .conv("stem", 8, 3, 1, 1)
            .batchnorm("stem_bn")
            .relu("stem_relu")
            .conv("block_a", 8, 3, 1, 1)
            .batchnorm("block_a_bn")
            .relu("block_a_relu")
            .conv("block_b", 8, 3, 1, 1)
            .batchnorm("block_b_bn")
            .add("sum", "stem_relu", "block_b_bn")
            .relu("sum_relu")
            .global_pool("pool")
            .linear("fc", classes)
    }

    /// Inverted residual: expand 1x1, depthwise 3x3, project 1x1, skip add.
    pub fn inverted_residual(classes: usize) -> NetworkConfig {
        NetworkConfig::new("inverted-residual", [3, 8, 8])
            .conv("stem", 8, 3, 1, 1)
            .batchnorm("stem_bn")
            .relu("stem_relu")
            .conv("expand", 16, 1, 1, 0)
            .batchnorm("expand_bn")
            .relu("expand_relu")
            .depthwise("dw", 3, 1, 1)
            .batchnorm("dw_bn")
            .relu("dw_relu")
            .conv("project", 8, 1, 1, 0)
            .batchnorm("project_bn")
            .add("sum", "stem_relu", "project_bn")
            .global_pool("pool")
            .linear("fc", classes)
    }

    /// Six 3x3 conv layers in three pairs with 2x2 pooling between pairs.
    pub fn vgg6(classes: usize, input_hw: usize, widths: [usize; 6]) -> NetworkConfig {
        let mut cfg = NetworkConfig::new("vgg6", [3, input_hw, input_hw]);
        for (i, &w) in widths.iter().enumerate() {
            let n = i + 1;
            cfg = cfg
                .conv(&format!("conv{n}"), w, 3, 1, 1)
                .batchnorm(&format!("bn{n}"))
                .relu(&format!("relu{n}"));
            if n % 2 == 0 && n < 6 {
                cfg = cfg.avgpool(&format!("pool{n}"), 2);
            }
        }
        cfg.global_pool("gap").linear("fc", classes)
    }

    /// Chain of 1x1 convolutions with no normalization, for FLOPs checks.
    pub fn pointwise_chain(input_channels: usize, widths: &[usize], hw: usize) -> NetworkConfig {
        let mut cfg = NetworkConfig::new("pointwise-chain", [input_channels, hw, hw]);
        for (i, &w) in widths.iter().enumerate() {
            cfg = cfg.conv(&format!("pw{}", i + 1), w, 1, 1, 0);
        }
        cfg.global_pool("gap").linear("fc", 2)
    }
}
