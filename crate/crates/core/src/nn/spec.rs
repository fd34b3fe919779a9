use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Four linear layers: `in→w→w→w→classes`, ReLU between them.
    Mlp,
    /// Three blocks of `(Conv3x3-BN-ReLU)×2 + MaxPool2`, channels `c, 2c, 4c`,
    /// then `Linear(flat, 256)-ReLU-Linear(256, classes)`.
    Cnn,
}

/// Architecture description. `width` is the hidden width for MLPs and the
/// base channel count for CNNs.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub width: usize,
    pub input_shape: Vec<usize>,
    pub classes: usize,
}

pub const MNIST_FEATURES: usize = 28 * 28;
pub const CIFAR_SHAPE: [usize; 3] = [3, 32, 32];
pub const CNN_HIDDEN: usize = 256;

/// Role of a parameter slice inside the flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamRole {
    Weight,
    Bias,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    KaimingUniform { fan_in: usize },
    XavierUniform { fan_in: usize, fan_out: usize },
    Zero,
}

/// One named tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSlice {
    pub name: String,
    pub layer: usize,
    pub role: ParamRole,
    pub range: Range<usize>,
    pub shape: Vec<usize>,
    pub init: InitScheme,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Layer {
    Linear { inp: usize, out: usize, weight: Range<usize>, bias: Range<usize> },
    Conv { cin: usize, cout: usize, h: usize, w: usize, weight: Range<usize>, bias: Range<usize> },
    BatchNorm { channels: usize, plane: usize, slot: usize },
    Relu { len: usize },
    MaxPool { channels: usize, h: usize, w: usize },
}

impl Layer {
    pub(crate) fn in_len(&self) -> usize {
        match *self {
            Layer::Linear { inp, .. } => inp,
            Layer::Conv { cin, h, w, .. } => cin * h * w,
            Layer::BatchNorm { channels, plane, .. } => channels * plane,
            Layer::Relu { len } => len,
            Layer::MaxPool { channels, h, w } => channels * h * w,
        }
    }

    pub(crate) fn out_len(&self) -> usize {
        match *self {
            Layer::Linear { out, .. } => out,
            Layer::Conv { cout, h, w, .. } => cout * h * w,
            Layer::BatchNorm { channels, plane, .. } => channels * plane,
            Layer::Relu { len } => len,
            Layer::MaxPool { channels, h, w } => channels * (h / 2) * (w / 2),
        }
    }
}

/// Resolved layer sequence and parameter offsets for a [`ModelSpec`].
#[derive(Clone, Debug)]
pub struct Layout {
    pub(crate) layers: Vec<Layer>,
    pub params: Vec<ParamSlice>,
    pub bn_channels: Vec<usize>,
    pub param_count: usize,
}

impl ModelSpec {
    pub fn mlp(width: usize) -> Self {
        Self::mlp_with_input(MNIST_FEATURES, width)
    }

    pub fn mlp_with_input(input_dim: usize, width: usize) -> Self {
        Self { kind: ModelKind::Mlp, width, input_shape: vec![input_dim], classes: 10 }
    }

    pub fn cnn(channels: usize) -> Self {
        Self { kind: ModelKind::Cnn, width: channels, input_shape: CIFAR_SHAPE.to_vec(), classes: 10 }
    }

    /// CNN over `[c, h, w]` images; `h` and `w` must be divisible by 8.
    pub fn cnn_with_input(shape: [usize; 3], channels: usize) -> Self {
        Self { kind: ModelKind::Cnn, width: channels, input_shape: shape.to_vec(), classes: 10 }
    }

    pub fn with_classes(mut self, classes: usize) -> Self {
        self.classes = classes;
        self
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidSpec(msg));
        if self.width == 0 {
            return bad("width must be positive".into());
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        match self.kind {
            ModelKind::Mlp => {
                if self.input_shape.len() != 1 || self.input_shape[0] == 0 {
                    return bad(format!("mlp input must be a flat vector, got {:?}", self.input_shape));
                }
            }
            ModelKind::Cnn => match self.input_shape[..] {
                [c, h, w] if c > 0 && h > 0 && w > 0 && h % 8 == 0 && w % 8 == 0 => {}
                _ => {
                    return bad(format!(
                        "cnn input must be [c, h, w] with h, w divisible by 8, got {:?}",
                        self.input_shape
                    ))
                }
            },
        }
        Ok(())
    }

    /// Closed-form trainable parameter count (BatchNorm has no affine terms).
    pub fn param_count(&self) -> usize {
        let w = self.width;
        let k = self.classes;
        match self.kind {
            ModelKind::Mlp => {
                let d = self.input_shape[0];
                (d * w + w) + 2 * (w * w + w) + (w * k + k)
            }
            ModelKind::Cnn => {
                let (cin, h, wd) = (self.input_shape[0], self.input_shape[1], self.input_shape[2]);
                let conv = |a: usize, b: usize| a * b * 9 + b;
                let convs = conv(cin, w)
                    + conv(w, w)
                    + conv(w, 2 * w)
                    + conv(2 * w, 2 * w)
                    + conv(2 * w, 4 * w)
                    + conv(4 * w, 4 * w);
                let flat = 4 * w * (h / 8) * (wd / 8);
                convs + (flat * CNN_HIDDEN + CNN_HIDDEN) + (CNN_HIDDEN * k + k)
            }
        }
    }

    pub fn layout(&self) -> Result<Layout, ModelError> {
        self.validate()?;
        let mut b = LayoutBuilder::default();
        match self.kind {
            ModelKind::Mlp => {
                let d = self.input_shape[0];
                let w = self.width;
                b.linear("fc1", d, w);
                b.layers.push(Layer::Relu { len: w });
                b.linear("fc2", w, w);
                b.layers.push(Layer::Relu { len: w });
                b.linear("fc3", w, w);
                b.layers.push(Layer::Relu { len: w });
                b.linear("fc4", w, self.classes);
            }
            ModelKind::Cnn => {
                let (mut c, mut h, mut w) = (self.input_shape[0], self.input_shape[1], self.input_shape[2]);
                let mut block_out = self.width;
                for block in 1..=3 {
                    for conv in 1..=2 {
                        let name = format!("block{block}.conv{conv}");
                        b.conv(&name, c, block_out, h, w);
                        b.batch_norm(block_out, h * w);
                        b.layers.push(Layer::Relu { len: block_out * h * w });
                        c = block_out;
                    }
                    b.layers.push(Layer::MaxPool { channels: c, h, w });
                    h /= 2;
                    w /= 2;
                    block_out *= 2;
                }
                let flat = c * h * w;
                b.linear("fc1", flat, CNN_HIDDEN);
                b.layers.push(Layer::Relu { len: CNN_HIDDEN });
                b.linear("fc2", CNN_HIDDEN, self.classes);
            }
        }
        debug_assert_eq!(b.offset, self.param_count());
        Ok(Layout { layers: b.layers, params: b.params, bn_channels: b.bn_channels, param_count: b.offset })
    }
}

#[derive(Default)]
struct LayoutBuilder {
    layers: Vec<Layer>,
    params: Vec<ParamSlice>,
    bn_channels: Vec<usize>,
    offset: usize,
}

impl LayoutBuilder {
    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.offset..self.offset + n;
        self.offset += n;
        r
    }

    fn linear(&mut self, name: &str, inp: usize, out: usize) {
        let layer = self.layers.len();
        let weight = self.take(inp * out);
        let bias = self.take(out);
        self.params.push(ParamSlice {
            name: format!("{name}.weight"),
            layer,
            role: ParamRole::Weight,
            range: weight.clone(),
            shape: vec![out, inp],
            init: InitScheme::KaimingUniform { fan_in: inp },
        });
        self.params.push(ParamSlice {
            name: format!("{name}.bias"),
            layer,
            role: ParamRole::Bias,
            range: bias.clone(),
            shape: vec![out],
            init: InitScheme::Zero,
        });
        self.layers.push(Layer::Linear { inp, out, weight, bias });
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, h: usize, w: usize) {
        let layer = self.layers.len();
        let weight = self.take(cout * cin * 9);
        let bias = self.take(cout);
        self.params.push(ParamSlice {
            name: format!("{name}.weight"),
            layer,
            role: ParamRole::Weight,
            range: weight.clone(),
            shape: vec![cout, cin, 3, 3],
            init: InitScheme::XavierUniform { fan_in: cin * 9, fan_out: cout * 9 },
        });
        self.params.push(ParamSlice {
            name: format!("{name}.bias"),
            layer,
            role: ParamRole::Bias,
            range: bias.clone(),
            shape: vec![cout],
            init: InitScheme::Zero,
        });
        self.layers.push(Layer::Conv { cin, cout, h, w, weight, bias });
    }

    fn batch_norm(&mut self, channels: usize, plane: usize) {
        let slot = self.bn_channels.len();
        self.bn_channels.push(channels);
        self.layers.push(Layer::BatchNorm { channels, plane, slot });
    }
}
