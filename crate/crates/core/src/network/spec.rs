use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A layer of the convolutional trunk. Every conv is followed by a ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureLayer {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClassifierLayer {
    Dropout { p: f64 },
    Linear { in_features: usize, out_features: usize, relu: bool },
}

/// Channels × height × width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

/// Layer plan of the CNN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    pub input_channels: usize,
    pub input_side: usize,
    pub features: Vec<FeatureLayer>,
    pub classifier: Vec<ClassifierLayer>,
}

/// Where a layer's parameters live in the flat parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

fn conv_out(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    (stride > 0 && kernel > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

impl NetworkSpec {
    /// Single-stream AlexNet: five convs, three pools, three fully connected layers.
    pub fn alexnet(num_classes: usize) -> Self {
        use FeatureLayer::*;
        let conv = |out_channels, kernel, stride, padding| Conv { out_channels, kernel, stride, padding };
        let pool = MaxPool { kernel: 3, stride: 2 };
        Self {
            name: "alexnet".into(),
            input_channels: 3,
            input_side: 224,
            features: vec![
                conv(64, 11, 4, 2),
                pool.clone(),
                conv(192, 5, 1, 2),
                pool.clone(),
                conv(384, 3, 1, 1),
                conv(256, 3, 1, 1),
                conv(256, 3, 1, 1),
                pool,
            ],
            classifier: vec![
                ClassifierLayer::Dropout { p: 0.5 },
                ClassifierLayer::Linear { in_features: 9216, out_features: 4096, relu: true },
                ClassifierLayer::Dropout { p: 0.5 },
                ClassifierLayer::Linear { in_features: 4096, out_features: 4096, relu: true },
                ClassifierLayer::Linear { in_features: 4096, out_features: num_classes, relu: false },
            ],
        }
    }

    /// Desk-scale network for tests and quick experiments: two conv stages,
    /// one hidden linear layer, 96 px input. Not an AlexNet.
    pub fn tiny(num_classes: usize) -> Self {
        use FeatureLayer::*;
        Self {
            name: "tiny".into(),
            input_channels: 3,
            input_side: 96,
            features: vec![
                Conv { out_channels: 16, kernel: 5, stride: 2, padding: 2 },
                MaxPool { kernel: 3, stride: 2 },
                Conv { out_channels: 32, kernel: 3, stride: 1, padding: 1 },
                MaxPool { kernel: 3, stride: 2 },
            ],
            classifier: vec![
                ClassifierLayer::Dropout { p: 0.5 },
                ClassifierLayer::Linear { in_features: 32 * 11 * 11, out_features: 64, relu: true },
                ClassifierLayer::Linear { in_features: 64, out_features: num_classes, relu: false },
            ],
        }
    }

    pub fn by_name(name: &str, num_classes: usize) -> Result<Self> {
        match name {
            "alexnet" => Ok(Self::alexnet(num_classes)),
            "tiny" => Ok(Self::tiny(num_classes)),
            other => Err(Error::param("network", format!("unknown network `{other}` (alexnet, tiny)"))),
        }
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new(self.input_channels, self.input_side, self.input_side)
    }

    pub fn input_len(&self) -> usize {
        self.input_shape().len()
    }

    pub fn num_classes(&self) -> usize {
        match self.classifier.last() {
            Some(ClassifierLayer::Linear { out_features, .. }) => *out_features,
            _ => 0,
        }
    }

    /// Output shape after each feature layer, checking the arithmetic.
    pub fn feature_shapes(&self) -> Result<Vec<Shape>> {
        let mut cur = self.input_shape();
        if cur.is_empty() {
            return Err(Error::param("input", "input shape has a zero dimension"));
        }
        let mut out = Vec::with_capacity(self.features.len());
        for (i, layer) in self.features.iter().enumerate() {
            cur = match *layer {
                FeatureLayer::Conv { out_channels, kernel, stride, padding } => {
                    let h = conv_out(cur.h, kernel, stride, padding);
                    let w = conv_out(cur.w, kernel, stride, padding);
                    match (h, w) {
                        (Some(h), Some(w)) if out_channels > 0 => Shape::new(out_channels, h, w),
                        _ => return Err(Error::param("features", format!("layer {i}: conv does not fit {cur}"))),
                    }
                }
                FeatureLayer::MaxPool { kernel, stride } => {
                    match (conv_out(cur.h, kernel, stride, 0), conv_out(cur.w, kernel, stride, 0)) {
                        (Some(h), Some(w)) => Shape::new(cur.c, h, w),
                        _ => return Err(Error::param("features", format!("layer {i}: pool does not fit {cur}"))),
                    }
                }
            };
            out.push(cur);
        }
        Ok(out)
    }

    pub fn flat_features(&self) -> Result<usize> {
        Ok(self.feature_shapes()?.last().copied().unwrap_or(self.input_shape()).len())
    }

    /// Checks layer arithmetic end to end.
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.input_side == 0 {
            return Err(Error::param("input", "input dimensions must be positive"));
        }
        let mut width = self.flat_features()?;
        for (i, layer) in self.classifier.iter().enumerate() {
            match *layer {
                ClassifierLayer::Dropout { p } => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(Error::param("classifier", format!("layer {i}: dropout p={p} outside [0,1)")));
                    }
                }
                ClassifierLayer::Linear { in_features, out_features, .. } => {
                    if in_features != width {
                        return Err(Error::param(
                            "classifier",
                            format!("layer {i}: linear expects {in_features} inputs but receives {width}"),
                        ));
                    }
                    if out_features == 0 {
                        return Err(Error::param("classifier", format!("layer {i}: zero outputs")));
                    }
                    width = out_features;
                }
            }
        }
        match self.classifier.last() {
            Some(ClassifierLayer::Linear { relu: false, out_features, .. }) if *out_features >= 2 => Ok(()),
            _ => Err(Error::param(
                "classifier",
                "must end in a linear layer without ReLU producing at least 2 classes",
            )),
        }
    }

    /// Parameter tensors in storage order, named like the torchvision modules
    /// (`features.0.weight`, `classifier.6.bias`, ...).
    pub fn param_slots(&self) -> Result<Vec<ParamSlot>> {
        let shapes = self.feature_shapes()?;
        let mut slots = Vec::new();
        let mut module = 0;
        let mut in_c = self.input_channels;
        for (layer, shape) in self.features.iter().zip(&shapes) {
            match *layer {
                FeatureLayer::Conv { out_channels, kernel, .. } => {
                    let fan_in = in_c * kernel * kernel;
                    slots.push(ParamSlot {
                        name: format!("features.{module}.weight"),
                        shape: vec![out_channels, in_c, kernel, kernel],
                        fan_in,
                    });
                    slots.push(ParamSlot {
                        name: format!("features.{module}.bias"),
                        shape: vec![out_channels],
                        fan_in,
                    });
                    module += 2;
                }
                FeatureLayer::MaxPool { .. } => module += 1,
            }
            in_c = shape.c;
        }
        let mut module = 0;
        for layer in &self.classifier {
            match *layer {
                ClassifierLayer::Dropout { .. } => module += 1,
                ClassifierLayer::Linear { in_features, out_features, relu } => {
                    slots.push(ParamSlot {
                        name: format!("classifier.{module}.weight"),
                        shape: vec![out_features, in_features],
                        fan_in: in_features,
                    });
                    slots.push(ParamSlot {
                        name: format!("classifier.{module}.bias"),
                        shape: vec![out_features],
                        fan_in: in_features,
                    });
                    module += if relu { 2 } else { 1 };
                }
            }
        }
        Ok(slots)
    }

    /// Canonical one-line description of the layer plan; hashed into the digest.
    pub fn canonical(&self) -> String {
        let mut s = format!("tss-net/1;input={}x{}x{}", self.input_channels, self.input_side, self.input_side);
        for l in &self.features {
            match l {
                FeatureLayer::Conv { out_channels, kernel, stride, padding } => {
                    let _ = write!(s, ";conv({out_channels},{kernel},{stride},{padding})");
                }
                FeatureLayer::MaxPool { kernel, stride } => {
                    let _ = write!(s, ";maxpool({kernel},{stride})");
                }
            }
        }
        for l in &self.classifier {
            match l {
                ClassifierLayer::Dropout { p } => {
                    let _ = write!(s, ";dropout({p})");
                }
                ClassifierLayer::Linear { in_features, out_features, relu } => {
                    let _ = write!(s, ";linear({in_features},{out_features}{})", if *relu { ",relu" } else { "" });
                }
            }
        }
        s
    }

    /// Hex SHA-256 of [`Self::canonical`].
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copy of this plan with the final linear layer resized.
    pub fn with_num_classes(&self, num_classes: usize) -> Self {
        let mut s = self.clone();
        if let Some(ClassifierLayer::Linear { out_features, .. }) = s.classifier.last_mut() {
            *out_features = num_classes;
        }
        s
    }
}
