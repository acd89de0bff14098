use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Shape;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// 3×3 convolution, stride 1, zero padding 1.
    Conv3x3 { out: usize },
    Relu,
    /// 2×2 max pooling, stride 2; a trailing odd row or column is dropped.
    MaxPool2,
    Affine { out: usize },
}

/// Input shape plus an ordered layer list. Spatial layers run on the image;
/// the first affine layer flattens it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

/// Preset selector used by experiment configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    /// Two conv blocks (16 and 32 channels) then affine 256 → 256 → d.
    Conv,
    /// Affine 256 → 256 → d directly on pixels.
    Affine,
}

impl Architecture {
    pub fn preset(kind: ArchKind, input: Shape, embed_dim: usize) -> Self {
        match kind {
            ArchKind::Conv => Self::conv(input, &[16, 32], &[256, 256], embed_dim),
            ArchKind::Affine => Self::affine(input, &[256, 256], embed_dim),
        }
    }

    /// Conv blocks (conv → relu → pool) followed by a ReLU MLP ending in a
    /// linear `embed_dim` layer.
    pub fn conv(input: Shape, channels: &[usize], hidden: &[usize], embed_dim: usize) -> Self {
        let mut layers = Vec::new();
        for &c in channels {
            layers.extend([LayerSpec::Conv3x3 { out: c }, LayerSpec::Relu, LayerSpec::MaxPool2]);
        }
        for &h in hidden {
            layers.extend([LayerSpec::Affine { out: h }, LayerSpec::Relu]);
        }
        layers.push(LayerSpec::Affine { out: embed_dim });
        Architecture { input, layers }
    }

    pub fn affine(input: Shape, hidden: &[usize], embed_dim: usize) -> Self {
        Self::conv(input, &[], hidden, embed_dim)
    }

    pub fn descriptor(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "input={}", self.input)?;
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv3x3 { out } => write!(f, ";conv3x3:{out}")?,
                LayerSpec::Relu => write!(f, ";relu")?,
                LayerSpec::MaxPool2 => write!(f, ";maxpool2")?,
                LayerSpec::Affine { out } => write!(f, ";affine:{out}")?,
            }
        }
        Ok(())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |what: &str| Error::Format(format!("architecture descriptor: {what} in '{s}'"));
        let mut parts = s.split(';');
        let input = parts
            .next()
            .and_then(|p| p.strip_prefix("input="))
            .ok_or_else(|| bad("missing input"))?;
        let dims: Vec<usize> = input
            .split('x')
            .map(|d| d.parse().map_err(|_| bad("bad input shape")))
            .collect::<Result<_>>()?;
        let [h, w, c] = dims[..] else {
            return Err(bad("input shape needs three extents"));
        };
        let width = |p: &str, prefix: &str| -> Result<usize> {
            p[prefix.len()..].parse().map_err(|_| bad("bad width"))
        };
        let layers = parts
            .map(|p| match p {
                "relu" => Ok(LayerSpec::Relu),
                "maxpool2" => Ok(LayerSpec::MaxPool2),
                _ if p.starts_with("conv3x3:") => Ok(LayerSpec::Conv3x3 { out: width(p, "conv3x3:")? }),
                _ if p.starts_with("affine:") => Ok(LayerSpec::Affine { out: width(p, "affine:")? }),
                _ => Err(bad(&format!("unknown layer '{p}'"))),
            })
            .collect::<Result<_>>()?;
        Ok(Architecture {
            input: Shape::new(h, w, c),
            layers,
        })
    }
}

/// A layer resolved against its input size, with parameter offsets into the
/// flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Layer {
    Conv {
        input: Shape,
        out: usize,
        weight: usize,
        bias: usize,
    },
    Relu {
        len: usize,
    },
    MaxPool {
        input: Shape,
    },
    Affine {
        inputs: usize,
        out: usize,
        weight: usize,
        bias: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Extent {
    Image(Shape),
    Flat(usize),
}

impl Extent {
    fn len(self) -> usize {
        match self {
            Extent::Image(s) => s.len(),
            Extent::Flat(n) => n,
        }
    }
}

impl Layer {
    pub(crate) fn out_len(&self) -> usize {
        match *self {
            Layer::Conv { input, out, .. } => input.height * input.width * out,
            Layer::Relu { len } => len,
            Layer::MaxPool { input } => (input.height / 2) * (input.width / 2) * input.channels,
            Layer::Affine { out, .. } => out,
        }
    }

    /// Fan-in and parameter range `(weight_start, weight_len, bias_len)`.
    pub(crate) fn weights(&self) -> Option<(usize, usize, usize, usize)> {
        match *self {
            Layer::Conv { input, out, weight, .. } => {
                let fan_in = 9 * input.channels;
                Some((fan_in, weight, fan_in * out, out))
            }
            Layer::Affine { inputs, out, weight, .. } => Some((inputs, weight, inputs * out, out)),
            _ => None,
        }
    }
}

/// Resolve layer sizes; returns the layers and the total parameter count.
pub(crate) fn resolve(arch: &Architecture) -> Result<(Vec<Layer>, usize)> {
    if arch.input.is_empty() {
        return Err(Error::Validation(format!("input shape {} is empty", arch.input)));
    }
    let mut extent = Extent::Image(arch.input);
    let mut offset = 0;
    let mut layers = Vec::with_capacity(arch.layers.len());
    for (i, spec) in arch.layers.iter().enumerate() {
        let layer = match (*spec, extent) {
            (LayerSpec::Conv3x3 { out }, Extent::Image(input)) if out > 0 => {
                let weight = offset;
                offset += 9 * input.channels * out;
                let bias = offset;
                offset += out;
                extent = Extent::Image(Shape::new(input.height, input.width, out));
                Layer::Conv { input, out, weight, bias }
            }
            (LayerSpec::MaxPool2, Extent::Image(input)) if input.height >= 2 && input.width >= 2 => {
                extent = Extent::Image(Shape::new(input.height / 2, input.width / 2, input.channels));
                Layer::MaxPool { input }
            }
            (LayerSpec::Relu, e) => Layer::Relu { len: e.len() },
            (LayerSpec::Affine { out }, e) if out > 0 => {
                let inputs = e.len();
                let weight = offset;
                offset += inputs * out;
                let bias = offset;
                offset += out;
                extent = Extent::Flat(out);
                Layer::Affine { inputs, out, weight, bias }
            }
            _ => {
                return Err(Error::Validation(format!(
                    "layer {i} ({spec:?}) cannot follow an input of extent {extent:?}"
                )))
            }
        };
        layers.push(layer);
    }
    match layers.last() {
        Some(Layer::Affine { .. }) => Ok((layers, offset)),
        _ => Err(Error::Validation("the last layer must be affine".into())),
    }
}
