//! Declarative architecture descriptions and the two reference
//! classifiers: a scaled AlexNet-style net and a small inception net.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::conv::conv_output_extent;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("layer {layer} ({kind}): {detail}")]
    Chain {
        layer: usize,
        kind: &'static str,
        detail: String,
    },
    #[error("network head emits {got} but must emit exactly {expected} class logits")]
    Head { expected: usize, got: String },
    #[error("invalid spec: {0}")]
    Invalid(String),
}

/// Channel widths of the four parallel inception branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionBlockSpec {
    /// 1x1 convolution branch.
    pub conv1: usize,
    /// 1x1 reduction feeding the 3x3 convolution.
    pub reduce3: usize,
    pub conv3: usize,
    /// 1x1 reduction feeding the 5x5 convolution.
    pub reduce5: usize,
    pub conv5: usize,
    /// 1x1 projection after the 3x3 max pool.
    pub pool_proj: usize,
}

impl InceptionBlockSpec {
    pub fn output_channels(&self) -> usize {
        self.conv1 + self.conv3 + self.conv5 + self.pool_proj
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    Lrn {
        depth_radius: usize,
        k: f64,
        alpha: f64,
        beta: f64,
    },
    Dense {
        out_features: usize,
    },
    Dropout {
        rate: f64,
    },
    GlobalAvgPool,
    Inception(InceptionBlockSpec),
}

impl LayerSpec {
    fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::Relu => "relu",
            LayerSpec::Lrn { .. } => "lrn",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::Inception(_) => "inception",
        }
    }

    /// AlexNet-style LRN with the canonical constants.
    pub fn lrn_default() -> Self {
        LayerSpec::Lrn {
            depth_radius: 2,
            k: 2.0,
            alpha: 1e-4,
            beta: 0.75,
        }
    }
}

/// Activation dimensions while chaining a spec: spatial `[C, H, W]` before
/// the head, flat feature vectors after pooling/flattening.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainDims {
    Chw([usize; 3]),
    Flat(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub name: String,
    /// Input shape as `[C, H, W]` (batch axis excluded).
    pub input: [usize; 3],
    /// Number of class logits the head must emit.
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    /// Chains layer shapes from the input and returns each layer's output
    /// dims. Fails on any inconsistency, including a head that does not
    /// emit exactly `classes` logits.
    pub fn validate(&self) -> Result<Vec<ChainDims>, SpecError> {
        if self.input.contains(&0) {
            return Err(SpecError::Invalid(format!(
                "input shape {:?} has a zero extent",
                self.input
            )));
        }
        if self.classes < 2 {
            return Err(SpecError::Invalid(format!(
                "a classifier needs at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.layers.is_empty() {
            return Err(SpecError::Invalid("spec has no layers".into()));
        }

        let mut dims = ChainDims::Chw(self.input);
        let mut trace = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            dims = chain_layer(layer, dims).map_err(|detail| SpecError::Chain {
                layer: i,
                kind: layer.kind(),
                detail,
            })?;
            trace.push(dims);
        }
        match dims {
            ChainDims::Flat(d) if d == self.classes => Ok(trace),
            other => Err(SpecError::Head {
                expected: self.classes,
                got: format!("{other:?}"),
            }),
        }
    }
}

fn require_chw(dims: ChainDims) -> Result<[usize; 3], String> {
    match dims {
        ChainDims::Chw(chw) => Ok(chw),
        ChainDims::Flat(d) => Err(format!("needs a spatial [C, H, W] input, got flat [{d}]")),
    }
}

fn windowed(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<(usize, usize), String> {
    match (
        conv_output_extent(h, k, stride, pad),
        conv_output_extent(w, k, stride, pad),
    ) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(format!(
            "{k}x{k} window (stride {stride}, pad {pad}) does not fit {h}x{w}"
        )),
    }
}

fn chain_layer(layer: &LayerSpec, dims: ChainDims) -> Result<ChainDims, String> {
    match layer {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
            pad,
        } => {
            let [_, h, w] = require_chw(dims)?;
            if *out_channels == 0 || *kernel == 0 || *stride == 0 {
                return Err("channels, kernel and stride must be >= 1".into());
            }
            let (oh, ow) = windowed(h, w, *kernel, *stride, *pad)?;
            Ok(ChainDims::Chw([*out_channels, oh, ow]))
        }
        LayerSpec::MaxPool { window, stride, pad } => {
            let [c, h, w] = require_chw(dims)?;
            if *window == 0 || *stride == 0 {
                return Err("window and stride must be >= 1".into());
            }
            if pad >= window {
                return Err(format!("pad {pad} must be smaller than window {window}"));
            }
            let (oh, ow) = windowed(h, w, *window, *stride, *pad)?;
            Ok(ChainDims::Chw([c, oh, ow]))
        }
        LayerSpec::Relu => Ok(dims),
        LayerSpec::Lrn {
            k, alpha, beta, ..
        } => {
            require_chw(dims)?;
            if *k <= 0.0 || *alpha < 0.0 || *beta <= 0.0 {
                return Err(format!("bad constants k={k} alpha={alpha} beta={beta}"));
            }
            Ok(dims)
        }
        LayerSpec::Dense { out_features } => {
            if *out_features == 0 {
                return Err("out_features must be >= 1".into());
            }
            let d = match dims {
                ChainDims::Chw([c, h, w]) => c * h * w,
                ChainDims::Flat(d) => d,
            };
            if d == 0 {
                return Err("dense layer has no input features".into());
            }
            Ok(ChainDims::Flat(*out_features))
        }
        LayerSpec::Dropout { rate } => {
            if !(0.0..1.0).contains(rate) {
                return Err(format!("dropout rate must be in [0, 1), got {rate}"));
            }
            Ok(dims)
        }
        LayerSpec::GlobalAvgPool => {
            let [c, _, _] = require_chw(dims)?;
            Ok(ChainDims::Flat(c))
        }
        LayerSpec::Inception(block) => {
            let [_, h, w] = require_chw(dims)?;
            for (name, width) in [
                ("conv1", block.conv1),
                ("reduce3", block.reduce3),
                ("conv3", block.conv3),
                ("reduce5", block.reduce5),
                ("conv5", block.conv5),
                ("pool_proj", block.pool_proj),
            ] {
                if width == 0 {
                    return Err(format!("inception branch {name} has zero channels"));
                }
            }
            // Every branch is same-padded, so H and W are preserved.
            windowed(h, w, 3, 1, 1)?;
            windowed(h, w, 5, 1, 2)?;
            Ok(ChainDims::Chw([block.output_channels(), h, w]))
        }
    }
}

/// Desk-scale AlexNet-style classifier for 64x64 grayscale frames.
/// Keeps the 5-conv / interleaved-pool / fully-connected skeleton.
pub fn build_mini_alexnet() -> NetSpec {
    NetSpec {
        name: "mini-alexnet".into(),
        input: [1, 64, 64],
        classes: 2,
        layers: vec![
            LayerSpec::Conv { out_channels: 16, kernel: 5, stride: 1, pad: 2 },
            LayerSpec::Relu,
            LayerSpec::lrn_default(),
            LayerSpec::MaxPool { window: 2, stride: 2, pad: 0 },
            LayerSpec::Conv { out_channels: 32, kernel: 5, stride: 1, pad: 2 },
            LayerSpec::Relu,
            LayerSpec::lrn_default(),
            LayerSpec::MaxPool { window: 2, stride: 2, pad: 0 },
            LayerSpec::Conv { out_channels: 64, kernel: 3, stride: 1, pad: 1 },
            LayerSpec::Relu,
            LayerSpec::Conv { out_channels: 64, kernel: 3, stride: 1, pad: 1 },
            LayerSpec::Relu,
            LayerSpec::Conv { out_channels: 32, kernel: 3, stride: 1, pad: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { window: 2, stride: 2, pad: 0 },
            LayerSpec::Dense { out_features: 256 },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::Dense { out_features: 2 },
        ],
    }
}

/// Canonical AlexNet topology with a 2-class head, for 256x256 grayscale
/// input. Provided for fidelity; too slow for the desk-scale experiments.
pub fn build_full_alexnet() -> NetSpec {
    NetSpec {
        name: "full-alexnet".into(),
        input: [1, 256, 256],
        classes: 2,
        layers: vec![
            LayerSpec::Conv { out_channels: 96, kernel: 11, stride: 4, pad: 2 },
            LayerSpec::Relu,
            LayerSpec::lrn_default(),
            LayerSpec::MaxPool { window: 3, stride: 2, pad: 0 },
            LayerSpec::Conv { out_channels: 256, kernel: 5, stride: 1, pad: 2 },
            LayerSpec::Relu,
            LayerSpec::lrn_default(),
            LayerSpec::MaxPool { window: 3, stride: 2, pad: 0 },
            LayerSpec::Conv { out_channels: 384, kernel: 3, stride: 1, pad: 1 },
            LayerSpec::Relu,
            LayerSpec::Conv { out_channels: 384, kernel: 3, stride: 1, pad: 1 },
            LayerSpec::Relu,
            LayerSpec::Conv { out_channels: 256, kernel: 3, stride: 1, pad: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { window: 3, stride: 2, pad: 0 },
            LayerSpec::Dense { out_features: 4096 },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::Dense { out_features: 4096 },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::Dense { out_features: 2 },
        ],
    }
}

/// Small inception-style classifier: a convolutional stem followed by two
/// inception blocks and global average pooling.
pub fn build_mini_inception_net() -> NetSpec {
    NetSpec {
        name: "mini-inception".into(),
        input: [1, 64, 64],
        classes: 2,
        layers: vec![
            LayerSpec::Conv { out_channels: 16, kernel: 5, stride: 1, pad: 2 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { window: 2, stride: 2, pad: 0 },
            LayerSpec::Inception(InceptionBlockSpec {
                conv1: 8,
                reduce3: 8,
                conv3: 16,
                reduce5: 4,
                conv5: 4,
                pool_proj: 4,
            }),
            LayerSpec::MaxPool { window: 2, stride: 2, pad: 0 },
            LayerSpec::Inception(InceptionBlockSpec {
                conv1: 16,
                reduce3: 16,
                conv3: 32,
                reduce5: 8,
                conv5: 8,
                pool_proj: 8,
            }),
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { out_features: 2 },
        ],
    }
}
