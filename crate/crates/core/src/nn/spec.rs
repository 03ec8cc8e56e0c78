//! Declarative network description and the shape chain through it.

use serde::{Deserialize, Serialize};

use crate::lstm_pool::{ModulationActivation, PoolSharingMode};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Avg,
    Lstm,
}

/// One entry of a [`NetworkSpec`]. Serialized with a `"type"` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        pad: usize,
    },
    Activation {
        function: ModulationActivation,
    },
    Pool {
        kind: PoolKind,
        k: usize,
        stride: usize,
        /// Ignored unless `kind` is `lstm`.
        #[serde(default = "default_sharing")]
        sharing: PoolSharingMode,
        /// ψ of the pooling unit. Defaults to the nearest activation layer.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        psi: Option<ModulationActivation>,
    },
    Fc {
        out_units: usize,
    },
    Dropout {
        rate: f64,
    },
    BatchNorm,
    SoftmaxXent {
        classes: usize,
    },
}

fn one() -> usize {
    1
}

fn default_sharing() -> PoolSharingMode {
    PoolSharingMode::PerLayer
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::Pool { kind: PoolKind::Max, .. } => "max_pool",
            LayerSpec::Pool { kind: PoolKind::Avg, .. } => "avg_pool",
            LayerSpec::Pool { kind: PoolKind::Lstm, .. } => "lstm_pool",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::BatchNorm => "batch_norm",
            LayerSpec::SoftmaxXent { .. } => "softmax_xent",
        }
    }
}

/// Shape of one sample between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleShape {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl SampleShape {
    pub fn numel(self) -> usize {
        match self {
            SampleShape::Map { c, h, w } => c * h * w,
            SampleShape::Flat(n) => n,
        }
    }

    pub fn dims(self) -> Vec<usize> {
        match self {
            SampleShape::Map { c, h, w } => vec![c, h, w],
            SampleShape::Flat(n) => vec![n],
        }
    }

    fn channels(self) -> usize {
        match self {
            SampleShape::Map { c, .. } => c,
            SampleShape::Flat(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Per-sample input shape `[C, H, W]`.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

/// Pooling choice used by the presets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoolChoice {
    Max,
    Avg,
    Lstm {
        sharing: PoolSharingMode,
        psi: Option<ModulationActivation>,
    },
}

impl PoolChoice {
    fn layer(self, k: usize) -> LayerSpec {
        let (kind, sharing, psi) = match self {
            PoolChoice::Max => (PoolKind::Max, PoolSharingMode::PerLayer, None),
            PoolChoice::Avg => (PoolKind::Avg, PoolSharingMode::PerLayer, None),
            PoolChoice::Lstm { sharing, psi } => (PoolKind::Lstm, sharing, psi),
        };
        LayerSpec::Pool {
            kind,
            k,
            stride: k,
            sharing,
            psi,
        }
    }
}

fn conv_block(layers: &mut Vec<LayerSpec>, n: usize, act: ModulationActivation) {
    layers.push(LayerSpec::Conv2d {
        out_channels: n,
        kernel: 3,
        stride: 1,
        pad: 1,
    });
    layers.push(LayerSpec::BatchNorm);
    layers.push(LayerSpec::Activation { function: act });
}

fn fc_block(layers: &mut Vec<LayerSpec>, n: usize, act: ModulationActivation, rate: f64) {
    layers.push(LayerSpec::Fc { out_units: n });
    layers.push(LayerSpec::Activation { function: act });
    layers.push(LayerSpec::Dropout { rate });
}

impl NetworkSpec {
    /// Conv_N for 32×32 RGB input: two stacks of two 3×3 convolutions with
    /// 4×4 and 8×8 pooling, two FC layers of N units and a 10-way classifier.
    pub fn conv_n(n: usize, pool: PoolChoice) -> Self {
        let act = ModulationActivation::LeakyRelu { alpha: 0.3 };
        let mut layers = Vec::new();
        for k in [4, 8] {
            conv_block(&mut layers, n, act);
            conv_block(&mut layers, n, act);
            layers.push(pool.layer(k));
        }
        fc_block(&mut layers, n, act, 0.5);
        fc_block(&mut layers, n, act, 0.5);
        layers.push(LayerSpec::Fc { out_units: 10 });
        layers.push(LayerSpec::SoftmaxXent { classes: 10 });
        NetworkSpec {
            input: [3, 32, 32],
            layers,
        }
    }

    /// VGG16 layout with every width scaled by `multiplier` (at least one unit).
    pub fn vgg16(multiplier: f64, classes: usize, pool: PoolChoice) -> Self {
        let act = ModulationActivation::LeakyRelu { alpha: 0.1 };
        let width = |n: usize| ((n as f64 * multiplier).round() as usize).max(1);
        let mut layers = Vec::new();
        for (n, reps) in [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)] {
            for _ in 0..reps {
                conv_block(&mut layers, width(n), act);
            }
            layers.push(pool.layer(2));
            layers.push(LayerSpec::Dropout { rate: 0.3 });
        }
        fc_block(&mut layers, width(512), act, 0.5);
        fc_block(&mut layers, width(512), act, 0.5);
        layers.push(LayerSpec::Fc { out_units: classes });
        layers.push(LayerSpec::SoftmaxXent { classes });
        NetworkSpec {
            input: [3, 32, 32],
            layers,
        }
    }

    /// A single learnable pooling unit over one `k×k` region.
    pub fn single_unit(k: usize, psi: ModulationActivation) -> Self {
        NetworkSpec {
            input: [1, k, k],
            layers: vec![LayerSpec::Pool {
                kind: PoolKind::Lstm,
                k,
                stride: k,
                sharing: PoolSharingMode::PerLayer,
                psi: Some(psi),
            }],
        }
    }

    /// Copy with every pooling layer replaced by `pool`, keeping region sizes.
    pub fn with_pooling(&self, pool: PoolChoice) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Pool { k, stride, .. } => {
                    let mut p = pool.layer(*k);
                    if let LayerSpec::Pool { stride: s, .. } = &mut p {
                        *s = *stride;
                    }
                    p
                }
                other => other.clone(),
            })
            .collect();
        NetworkSpec {
            input: self.input,
            layers,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, NnError> {
        Ok(serde_json::from_str(s)?)
    }

    /// ψ for the pooling layer at `index`: explicit, else the closest
    /// preceding activation, else the closest following one, else ReLU.
    pub fn pool_psi(&self, index: usize) -> ModulationActivation {
        if let Some(LayerSpec::Pool { psi: Some(p), .. }) = self.layers.get(index) {
            return *p;
        }
        let act = |l: &LayerSpec| match l {
            LayerSpec::Activation { function } => Some(*function),
            _ => None,
        };
        self.layers[..index]
            .iter()
            .rev()
            .find_map(act)
            .or_else(|| self.layers[index + 1..].iter().find_map(act))
            .unwrap_or(ModulationActivation::Relu)
    }

    /// Per-sample shape after every layer; validates the whole chain.
    pub fn shapes(&self) -> Result<Vec<SampleShape>, NnError> {
        let [c, h, w] = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(chain(0, "input", format!("empty input shape {:?}", self.input)));
        }
        let mut cur = SampleShape::Map { c, h, w };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let name = layer.name();
            if matches!(layer, LayerSpec::SoftmaxXent { .. }) && i + 1 != self.layers.len() {
                return Err(chain(i, name, "softmax_xent must be the last layer".into()));
            }
            cur = match (*layer).clone() {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                } => {
                    let SampleShape::Map { h, w, .. } = cur else {
                        return Err(chain(i, name, "input is not a feature map".into()));
                    };
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(chain(i, name, "zero channels, kernel or stride".into()));
                    }
                    if h + 2 * pad < kernel || w + 2 * pad < kernel {
                        return Err(chain(i, name, format!("kernel {kernel} larger than padded {h}x{w}")));
                    }
                    SampleShape::Map {
                        c: out_channels,
                        h: (h + 2 * pad - kernel) / stride + 1,
                        w: (w + 2 * pad - kernel) / stride + 1,
                    }
                }
                LayerSpec::Pool { k, stride, .. } => {
                    let SampleShape::Map { c, h, w } = cur else {
                        return Err(chain(i, name, "input is not a feature map".into()));
                    };
                    let tiles = |n: usize| k > 0 && stride > 0 && n >= k && (n - k) % stride == 0;
                    if !tiles(h) || !tiles(w) {
                        return Err(chain(
                            i,
                            name,
                            format!("{h}x{w} is not tiled by k={k} stride={stride}"),
                        ));
                    }
                    SampleShape::Map {
                        c,
                        h: (h - k) / stride + 1,
                        w: (w - k) / stride + 1,
                    }
                }
                LayerSpec::Fc { out_units } => {
                    if out_units == 0 {
                        return Err(chain(i, name, "zero output units".into()));
                    }
                    SampleShape::Flat(out_units)
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(chain(i, name, format!("rate {rate} outside [0, 1)")));
                    }
                    cur
                }
                LayerSpec::SoftmaxXent { classes } => {
                    if cur.numel() != classes {
                        return Err(chain(
                            i,
                            name,
                            format!("{} inputs for {classes} classes", cur.numel()),
                        ));
                    }
                    SampleShape::Flat(classes)
                }
                LayerSpec::Activation { .. } => cur,
                LayerSpec::BatchNorm => {
                    if cur.channels() == 0 {
                        return Err(chain(i, name, "no channels".into()));
                    }
                    cur
                }
            };
            out.push(cur);
        }
        Ok(out)
    }
}

fn chain(index: usize, layer: &'static str, msg: String) -> NnError {
    NnError::ShapeChain { index, layer, msg }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_n_chains_to_ten_classes() {
        let s = NetworkSpec::conv_n(8, PoolChoice::Max).shapes().unwrap();
        assert_eq!(*s.last().unwrap(), SampleShape::Flat(10));
        assert_eq!(s[6], SampleShape::Map { c: 8, h: 8, w: 8 });
        assert_eq!(s[13], SampleShape::Map { c: 8, h: 1, w: 1 });
    }

    #[test]
    fn vgg16_chains() {
        let s = NetworkSpec::vgg16(0.125, 100, PoolChoice::Max).shapes().unwrap();
        assert_eq!(*s.last().unwrap(), SampleShape::Flat(100));
    }

    #[test]
    fn broken_chain_names_the_layer() {
        let mut spec = NetworkSpec::conv_n(8, PoolChoice::Max);
        spec.layers[6] = LayerSpec::Pool {
            kind: PoolKind::Max,
            k: 5,
            stride: 5,
            sharing: PoolSharingMode::PerLayer,
            psi: None,
        };
        match spec.shapes() {
            Err(NnError::ShapeChain { index: 6, layer, .. }) => assert_eq!(layer, "max_pool"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_round_trip() {
        let spec = NetworkSpec::conv_n(
            16,
            PoolChoice::Lstm {
                sharing: PoolSharingMode::GlobalShared,
                psi: None,
            },
        );
        let back = NetworkSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
        assert!(spec.to_json().contains("\"kind\": \"lstm\""));
    }

    #[test]
    fn psi_follows_surrounding_activation() {
        let spec = NetworkSpec::conv_n(
            8,
            PoolChoice::Lstm {
                sharing: PoolSharingMode::PerLayer,
                psi: None,
            },
        );
        assert_eq!(spec.pool_psi(6), ModulationActivation::LeakyRelu { alpha: 0.3 });
        let unit = NetworkSpec::single_unit(3, ModulationActivation::Relu);
        assert_eq!(unit.pool_psi(0), ModulationActivation::Relu);
    }
}
