//! Layered convolutional classifier and the MiniVGG architecture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Model, Outputs};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    /// 3x3 convolution, stride 1, zero "same" padding.
    Conv { in_channels: usize, out_channels: usize },
    Relu,
    /// 2x2 max pool, stride 2.
    MaxPool,
    Dense { inputs: usize, outputs: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub spec: LayerSpec,
    /// `[weight, bias]` for conv and dense layers, empty otherwise.
    pub params: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    height: usize,
    width: usize,
    num_classes: usize,
    layers: Vec<Layer>,
    frozen: bool,
}

/// Activation shape flowing between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Flow {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Flow {
    fn len(self) -> usize {
        match self {
            Flow::Map { c, h, w } => c * h * w,
            Flow::Flat(n) => n,
        }
    }
}

impl Network {
    /// Assemble a network from layer specs with He-uniform weights and zero biases.
    pub fn new(
        height: usize,
        width: usize,
        num_classes: usize,
        specs: Vec<(String, LayerSpec)>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .into_iter()
            .map(|(name, spec)| {
                let params = match spec {
                    LayerSpec::Conv { in_channels, out_channels } => {
                        let limit = (6.0 / (in_channels * 9) as f32).sqrt();
                        let w = (0..out_channels * in_channels * 9)
                            .map(|_| rng.gen_range(-limit..limit))
                            .collect();
                        vec![
                            Tensor::new(vec![out_channels, in_channels, 3, 3], w)?,
                            Tensor::zeros(&[out_channels]),
                        ]
                    }
                    LayerSpec::Dense { inputs, outputs } => {
                        let limit = (6.0 / inputs as f32).sqrt();
                        let w = (0..outputs * inputs).map(|_| rng.gen_range(-limit..limit)).collect();
                        vec![Tensor::new(vec![outputs, inputs], w)?, Tensor::zeros(&[outputs])]
                    }
                    LayerSpec::Relu | LayerSpec::MaxPool => vec![],
                };
                Ok(Layer { name, spec, params })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Self {
            height,
            width,
            num_classes,
            layers,
            frozen: false,
        };
        net.validate()?;
        Ok(net)
    }

    pub(crate) fn from_layers(height: usize, width: usize, num_classes: usize, layers: Vec<Layer>) -> Result<Self> {
        let net = Self {
            height,
            width,
            num_classes,
            layers,
            frozen: false,
        };
        net.validate()?;
        Ok(net)
    }

    /// Check that layer shapes chain from the input to `num_classes` logits.
    fn validate(&self) -> Result<()> {
        let mut flow = Flow::Map {
            c: 1,
            h: self.height,
            w: self.width,
        };
        for layer in &self.layers {
            flow = match (&layer.spec, flow) {
                (LayerSpec::Conv { in_channels, out_channels }, Flow::Map { c, h, w }) if *in_channels == c => {
                    Flow::Map { c: *out_channels, h, w }
                }
                (LayerSpec::Relu, f) => f,
                (LayerSpec::MaxPool, Flow::Map { c, h, w }) if h % 2 == 0 && w % 2 == 0 => Flow::Map {
                    c,
                    h: h / 2,
                    w: w / 2,
                },
                (LayerSpec::Dense { inputs, outputs }, f) if *inputs == f.len() => Flow::Flat(*outputs),
                (spec, f) => {
                    return Err(Error::dim(format!(
                        "layer '{}' ({spec:?}) cannot accept activation {f:?}",
                        layer.name
                    )))
                }
            };
            let expected: Vec<Vec<usize>> = match &layer.spec {
                LayerSpec::Conv { in_channels, out_channels } => {
                    vec![vec![*out_channels, *in_channels, 3, 3], vec![*out_channels]]
                }
                LayerSpec::Dense { inputs, outputs } => vec![vec![*outputs, *inputs], vec![*outputs]],
                _ => vec![],
            };
            let actual: Vec<Vec<usize>> = layer.params.iter().map(|p| p.shape().to_vec()).collect();
            if actual != expected {
                return Err(Error::dim(format!(
                    "layer '{}' parameters {actual:?}, expected {expected:?}",
                    layer.name
                )));
            }
        }
        if flow != Flow::Flat(self.num_classes) {
            return Err(Error::dim(format!(
                "network ends in {flow:?}, expected {} logits",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn parameters(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    /// Mutable parameter access; refused while the network is frozen.
    pub fn parameters_mut(&mut self) -> Result<Vec<&mut Tensor>> {
        if self.frozen {
            return Err(Error::State("network is frozen; weights are read-only".into()));
        }
        Ok(self.layers.iter_mut().flat_map(|l| l.params.iter_mut()).collect())
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().map(Tensor::numel).sum()
    }

    /// SHA-256 over the little-endian bytes of every weight in declaration order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in self.parameters() {
            for v in p.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    pub fn has_conv(&self) -> bool {
        self.layers.iter().any(|l| matches!(l.spec, LayerSpec::Conv { .. }))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Model for Network {
    fn input_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn record(&self, tape: &mut Tape, input: Var) -> Result<Outputs> {
        let train = !self.frozen;
        let last_conv = self
            .layers
            .iter()
            .rposition(|l| matches!(l.spec, LayerSpec::Conv { .. }));
        let mut x = input;
        let mut layers = Vec::with_capacity(self.layers.len() + 1);
        let mut params = Vec::new();
        let mut feature_map = None;
        for (i, layer) in self.layers.iter().enumerate() {
            tape.set_layer(layer.name.as_str());
            x = match layer.spec {
                LayerSpec::Conv { .. } => {
                    let w = tape.leaf(layer.params[0].clone(), train);
                    let b = tape.leaf(layer.params[1].clone(), train);
                    params.extend([w, b]);
                    tape.conv2d(x, w, b)?
                }
                LayerSpec::Dense { .. } => {
                    let w = tape.leaf(layer.params[0].clone(), train);
                    let b = tape.leaf(layer.params[1].clone(), train);
                    params.extend([w, b]);
                    tape.dense(x, w, b)?
                }
                LayerSpec::Relu => tape.relu(x)?,
                LayerSpec::MaxPool => tape.maxpool2(x)?,
            };
            layers.push((layer.name.clone(), x));
            // The feature map is the last conv output after its activation, if one follows.
            if let Some(lc) = last_conv {
                let follows_relu = matches!(self.layers.get(lc + 1).map(|l| &l.spec), Some(LayerSpec::Relu));
                if i == lc + usize::from(follows_relu) {
                    feature_map = Some(x);
                }
            }
        }
        let logits = x;
        tape.set_layer("softmax");
        let probabilities = tape.softmax(logits)?;
        layers.push(("softmax".into(), probabilities));
        Ok(Outputs {
            logits,
            probabilities,
            feature_map,
            layers,
            params,
        })
    }
}

/// MiniVGG: two conv blocks (8 and 16 filters) followed by dense 64 and the class head.
pub fn build_minivgg(h: usize, w: usize, num_classes: usize, seed: u64) -> Result<Network> {
    if h < 16 || w < 16 || h % 4 != 0 || w % 4 != 0 {
        return Err(Error::dim(format!(
            "MiniVGG needs h, w >= 16 and divisible by 4, got {h}x{w}"
        )));
    }
    if num_classes < 2 {
        return Err(Error::dim("MiniVGG needs at least two classes"));
    }
    let flat = 16 * (h / 4) * (w / 4);
    let specs = vec![
        ("conv1_1".to_string(), LayerSpec::Conv { in_channels: 1, out_channels: 8 }),
        ("relu1_1".to_string(), LayerSpec::Relu),
        ("conv1_2".to_string(), LayerSpec::Conv { in_channels: 8, out_channels: 8 }),
        ("relu1_2".to_string(), LayerSpec::Relu),
        ("pool1".to_string(), LayerSpec::MaxPool),
        ("conv2_1".to_string(), LayerSpec::Conv { in_channels: 8, out_channels: 16 }),
        ("relu2_1".to_string(), LayerSpec::Relu),
        ("conv2_2".to_string(), LayerSpec::Conv { in_channels: 16, out_channels: 16 }),
        ("relu2_2".to_string(), LayerSpec::Relu),
        ("pool2".to_string(), LayerSpec::MaxPool),
        ("fc1".to_string(), LayerSpec::Dense { inputs: flat, outputs: 64 }),
        ("relu_fc1".to_string(), LayerSpec::Relu),
        ("fc2".to_string(), LayerSpec::Dense { inputs: 64, outputs: num_classes }),
    ];
    Network::new(h, w, num_classes, specs, seed)
}
