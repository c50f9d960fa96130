//! Network descriptions and the preset architectures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

fn default_eps() -> f64 {
    BN_EPSILON
}

fn default_momentum() -> f64 {
    BN_MOMENTUM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layer {
    /// Fully connected layer. The incoming activation is flattened.
    Linear { input: usize, output: usize },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
    },
    MaxPool2d {
        kernel: usize,
        padding: usize,
        stride: usize,
    },
    Relu,
    /// Per-feature (1D input) or per-channel (3D input) normalization.
    BatchNorm {
        features: usize,
        #[serde(default = "default_eps")]
        epsilon: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    /// Inverted dropout.
    Dropout { p: f64 },
    /// Must be the last layer.
    Softmax,
}

impl Layer {
    pub fn batch_norm(features: usize) -> Self {
        Layer::BatchNorm {
            features,
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    fn conv3(in_channels: usize, out_channels: usize) -> Self {
        Layer::Conv2d {
            in_channels,
            out_channels,
            kernel: 3,
            padding: 1,
            stride: 1,
        }
    }

    fn pool2() -> Self {
        Layer::MaxPool2d {
            kernel: 2,
            padding: 0,
            stride: 2,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            Layer::Linear { .. } | Layer::Conv2d { .. } | Layer::BatchNorm { .. }
        )
    }
}

/// Ordered layer list plus the per-sample input shape.
///
/// Layers with index `< latter_from` belong to the former section, the rest
/// to the latter section (used by partial resetting).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub latter_from: usize,
}

impl NetworkSpec {
    /// Fully connected net: two hidden layers of `hidden` units.
    ///
    /// With `batch_norm`, normalization sits before each hidden activation
    /// and never on the output layer. Only the output layer is "latter".
    pub fn fcn(input_shape: Vec<usize>, hidden: usize, classes: usize, batch_norm: bool) -> Self {
        let input: usize = input_shape.iter().product();
        let mut layers = Vec::new();
        for fan_in in [input, hidden] {
            layers.push(Layer::Linear {
                input: fan_in,
                output: hidden,
            });
            if batch_norm {
                layers.push(Layer::batch_norm(hidden));
            }
            layers.push(Layer::Relu);
        }
        let latter_from = layers.len();
        layers.push(Layer::Linear {
            input: hidden,
            output: classes,
        });
        layers.push(Layer::Softmax);
        Self {
            input_shape,
            layers,
            latter_from,
        }
    }

    /// The small CNN: two 8-channel 3×3 convolutions, 2×2 max-pool,
    /// dropout 0.2 and a linear classifier on 3×32×32 inputs.
    pub fn small_cnn(classes: usize, batch_norm: bool) -> Self {
        let mut layers = Vec::new();
        for (i, o) in [(3, 8), (8, 8)] {
            layers.push(Layer::conv3(i, o));
            if batch_norm {
                layers.push(Layer::batch_norm(o));
            }
            layers.push(Layer::Relu);
        }
        layers.push(Layer::pool2());
        layers.push(Layer::Dropout { p: 0.2 });
        let latter_from = layers.len();
        layers.push(Layer::Linear {
            input: 8 * 16 * 16,
            output: classes,
        });
        layers.push(Layer::Softmax);
        Self {
            input_shape: vec![3, 32, 32],
            layers,
            latter_from,
        }
    }

    /// The vanilla CNN used for the ciFAIR-scale experiments.
    ///
    /// The table this follows marks batch norm on the first max-pool row;
    /// that is reproduced as written, so a `BatchNorm(64)` follows the first
    /// pooling layer. Convolutions, pools and dropout form the former
    /// section, the three linear layers the latter.
    pub fn vcnn(classes: usize) -> Self {
        let bn = Layer::batch_norm;
        let layers = vec![
            Layer::conv3(3, 32),
            bn(32),
            Layer::Relu,
            Layer::conv3(32, 64),
            bn(64),
            Layer::Relu,
            Layer::pool2(),
            bn(64),
            Layer::conv3(64, 128),
            bn(128),
            Layer::Relu,
            Layer::conv3(128, 128),
            bn(128),
            Layer::Relu,
            Layer::pool2(),
            Layer::conv3(128, 256),
            bn(256),
            Layer::Relu,
            Layer::conv3(256, 256),
            bn(256),
            Layer::Relu,
            Layer::pool2(),
            Layer::Dropout { p: 0.2 },
            Layer::Linear {
                input: 256 * 4 * 4,
                output: 1024,
            },
            bn(1024),
            Layer::Relu,
            Layer::Linear {
                input: 1024,
                output: 512,
            },
            bn(512),
            Layer::Relu,
            Layer::Linear {
                input: 512,
                output: classes,
            },
            Layer::Softmax,
        ];
        Self {
            input_shape: vec![3, 32, 32],
            layers,
            latter_from: 23,
        }
    }

    /// Checks layer compatibility and returns the per-sample output shape of
    /// every layer.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::dim("input shape must be nonempty and positive"));
        }
        match self.layers.last() {
            Some(Layer::Softmax) => {}
            _ => return Err(Error::Config("last layer must be softmax".into())),
        }
        if self.latter_from > self.layers.len() {
            return Err(Error::Config("section boundary past the last layer".into()));
        }
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| Error::dim(format!("layer {i} ({layer:?}): {msg}"));
            shape = match *layer {
                Layer::Linear { input, output } => {
                    let n: usize = shape.iter().product();
                    if n != input || output == 0 {
                        return Err(bad(format!("expects {input} inputs, got {n}")));
                    }
                    vec![output]
                }
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    padding,
                    stride,
                } => {
                    if shape.len() != 3 || shape[0] != in_channels {
                        return Err(bad(format!("expects ({in_channels}, H, W), got {shape:?}")));
                    }
                    if kernel == 0 || stride == 0 || out_channels == 0 {
                        return Err(bad("zero kernel, stride or channels".into()));
                    }
                    let (h, w) = (shape[1] + 2 * padding, shape[2] + 2 * padding);
                    if h < kernel || w < kernel {
                        return Err(bad("kernel larger than padded input".into()));
                    }
                    vec![
                        out_channels,
                        (h - kernel) / stride + 1,
                        (w - kernel) / stride + 1,
                    ]
                }
                Layer::MaxPool2d {
                    kernel,
                    padding,
                    stride,
                } => {
                    if shape.len() != 3 {
                        return Err(bad(format!("expects (C, H, W), got {shape:?}")));
                    }
                    if kernel == 0 || stride == 0 || 2 * padding > kernel {
                        return Err(bad("invalid pooling geometry".into()));
                    }
                    let (h, w) = (shape[1] + 2 * padding, shape[2] + 2 * padding);
                    if h < kernel || w < kernel {
                        return Err(bad("kernel larger than padded input".into()));
                    }
                    vec![shape[0], (h - kernel) / stride + 1, (w - kernel) / stride + 1]
                }
                Layer::BatchNorm {
                    features,
                    epsilon,
                    momentum,
                } => {
                    if shape[0] != features || !(shape.len() == 1 || shape.len() == 3) {
                        return Err(bad(format!("expects {features} features, got {shape:?}")));
                    }
                    if epsilon <= 0.0 || !(0.0..=1.0).contains(&momentum) {
                        return Err(bad("epsilon must be > 0, momentum in [0, 1]".into()));
                    }
                    shape
                }
                Layer::Dropout { p } => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(bad("dropout p must lie in [0, 1)".into()));
                    }
                    shape
                }
                Layer::Relu => shape,
                Layer::Softmax => {
                    if i + 1 != self.layers.len() || shape.len() != 1 {
                        return Err(bad("softmax must be last and act on a vector".into()));
                    }
                    shape
                }
            };
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn num_classes(&self) -> Result<usize> {
        Ok(self.infer_shapes()?.last().map(|s| s[0]).unwrap_or(0))
    }
}
