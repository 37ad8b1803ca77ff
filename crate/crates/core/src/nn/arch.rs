use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::PoolGeometry;
use crate::error::{Error, Result};
use crate::interval::{Activation, ConvGeometry};

/// Input extent as channels x height x width. Flat inputs use `1 x 1 x d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn flat(len: usize) -> Self {
        Self {
            channels: 1,
            height: 1,
            width: len,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for InputShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.channels == 1 && self.height == 1 {
            write!(f, "{}", self.width)
        } else {
            write!(f, "{}x{}x{}", self.channels, self.height, self.width)
        }
    }
}

impl FromStr for InputShape {
    type Err = Error;

    /// Accepts `784` or `3x32x32`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Architecture(format!("bad input shape `{s}`")))?;
        match parts[..] {
            [d] => Ok(Self::flat(d)),
            [c, h, w] => Ok(Self {
                channels: c,
                height: h,
                width: w,
            }),
            _ => Err(Error::Architecture(format!("bad input shape `{s}`"))),
        }
    }
}

/// One hidden layer of the trunk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Layer {
    Dense {
        units: usize,
    },
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Activation {
        function: Activation,
    },
    MaxPool {
        size: usize,
    },
    AvgPool {
        size: usize,
    },
    Flatten,
    /// Accepted by the parser so that descriptors can name it; always rejected
    /// by validation because its statistics cannot be bounded over a box.
    BatchNorm,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Dense { units } => write!(f, "dense:{units}"),
            Layer::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => write!(f, "conv:{out_channels}:{kernel}:{stride}:{padding}"),
            Layer::Activation { function } => write!(f, "{}", activation_name(*function)),
            Layer::MaxPool { size } => write!(f, "maxpool:{size}"),
            Layer::AvgPool { size } => write!(f, "avgpool:{size}"),
            Layer::Flatten => write!(f, "flatten"),
            Layer::BatchNorm => write!(f, "batchnorm"),
        }
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Tanh => "tanh",
        Activation::Sigmoid => "sigmoid",
    }
}

impl FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Architecture(format!("bad layer `{s}`"));
        let mut parts = s.trim().split(':');
        let kind = parts.next().unwrap_or_default();
        let nums: Vec<usize> = parts
            .map(|p| p.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let layer = match (kind, nums.as_slice()) {
            ("dense", [units]) => Layer::Dense { units: *units },
            ("conv", [out_channels, kernel, rest @ ..]) if rest.len() <= 2 => Layer::Conv {
                out_channels: *out_channels,
                kernel: *kernel,
                stride: rest.first().copied().unwrap_or(1),
                padding: rest.get(1).copied().unwrap_or(0),
            },
            ("relu", []) => Layer::Activation {
                function: Activation::Relu,
            },
            ("tanh", []) => Layer::Activation {
                function: Activation::Tanh,
            },
            ("sigmoid", []) => Layer::Activation {
                function: Activation::Sigmoid,
            },
            ("maxpool", [size]) => Layer::MaxPool { size: *size },
            ("avgpool", [size]) => Layer::AvgPool { size: *size },
            ("flatten", []) => Layer::Flatten,
            ("batchnorm", []) => Layer::BatchNorm,
            _ => return Err(bad()),
        };
        Ok(layer)
    }
}

/// Parses a comma-separated layer list such as `dense:400,relu,dense:400,relu`.
pub fn parse_layers(s: &str) -> Result<Vec<Layer>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(str::parse).collect()
}

pub fn format_layers(layers: &[Layer]) -> String {
    layers.iter().map(Layer::to_string).collect::<Vec<_>>().join(",")
}

/// How the classifier output is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heads {
    /// One intervalized output layer shared by every task.
    Shared,
    /// One plain output layer per task, selected by task id.
    PerTask(usize),
}

/// Continual-learning protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    IncrementalTask,
    IncrementalDomain,
    IncrementalClass,
}

impl Scenario {
    pub fn heads(self, n_tasks: usize) -> Heads {
        match self {
            Scenario::IncrementalTask => Heads::PerTask(n_tasks),
            _ => Heads::Shared,
        }
    }

    /// Output width for a stream with the given split.
    pub fn outputs(self, n_tasks: usize, classes_per_task: usize) -> usize {
        match self {
            Scenario::IncrementalTask | Scenario::IncrementalDomain => classes_per_task,
            Scenario::IncrementalClass => n_tasks * classes_per_task,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::IncrementalTask => "task",
            Scenario::IncrementalDomain => "domain",
            Scenario::IncrementalClass => "class",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "task" | "it" | "incremental_task" => Ok(Scenario::IncrementalTask),
            "domain" | "id" | "incremental_domain" => Ok(Scenario::IncrementalDomain),
            "class" | "ic" | "incremental_class" => Ok(Scenario::IncrementalClass),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Full network description: input, hidden trunk, output width and heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: InputShape,
    pub layers: Vec<Layer>,
    pub outputs: usize,
    pub heads: Heads,
}

impl Architecture {
    /// ReLU MLP with the given hidden widths.
    pub fn mlp(inputs: usize, hidden: &[usize], outputs: usize, heads: Heads) -> Self {
        let layers = hidden
            .iter()
            .flat_map(|&units| {
                [
                    Layer::Dense { units },
                    Layer::Activation {
                        function: Activation::Relu,
                    },
                ]
            })
            .collect();
        Self {
            input: InputShape::flat(inputs),
            layers,
            outputs,
            heads,
        }
    }

    /// The 784-400-400 ReLU MLP used for the MNIST-scale runs.
    pub fn mnist_mlp(outputs: usize, heads: Heads) -> Self {
        Self::mlp(784, &[400, 400], outputs, heads)
    }

    /// Checks that the layer chain is well formed and compiles it.
    pub fn plan(&self) -> Result<Plan> {
        let arch_err = |m: String| Err(Error::Architecture(m));
        if self.input.is_empty() {
            return arch_err("input shape has zero extent".into());
        }
        if self.outputs == 0 {
            return arch_err("zero outputs".into());
        }
        if self.heads == Heads::PerTask(0) {
            return arch_err("per-task heads need at least one task".into());
        }
        let (mut c, mut h, mut w) = (self.input.channels, self.input.height, self.input.width);
        let mut stages = Vec::new();
        let mut shapes = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Dense { units } => {
                    if units == 0 {
                        return arch_err(format!("layer {i}: dense layer with zero units"));
                    }
                    let inputs = c * h * w;
                    stages.push(Stage::Dense {
                        tensor: shapes.len(),
                        inputs,
                        units,
                    });
                    shapes.push((units, inputs));
                    shapes.push((1, units));
                    (c, h, w) = (1, 1, units);
                }
                Layer::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let geom = ConvGeometry {
                        in_channels: c,
                        in_height: h,
                        in_width: w,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    };
                    if let Err(e) = geom.validate() {
                        return arch_err(format!("layer {i}: {e}"));
                    }
                    stages.push(Stage::Conv {
                        tensor: shapes.len(),
                        geom,
                    });
                    shapes.push((out_channels, geom.patch_len()));
                    shapes.push((1, out_channels));
                    (c, h, w) = (out_channels, geom.out_height(), geom.out_width());
                }
                Layer::Activation { function } => stages.push(Stage::Activation(function)),
                Layer::MaxPool { size } | Layer::AvgPool { size } => {
                    if size == 0 || h < size || w < size {
                        return arch_err(format!("layer {i}: pool size {size} does not fit {h}x{w}"));
                    }
                    let geom = PoolGeometry {
                        channels: c,
                        in_height: h,
                        in_width: w,
                        size,
                    };
                    stages.push(if matches!(layer, Layer::MaxPool { .. }) {
                        Stage::MaxPool(geom)
                    } else {
                        Stage::AvgPool(geom)
                    });
                    (h, w) = (geom.out_height(), geom.out_width());
                }
                Layer::Flatten => (c, h, w) = (1, 1, c * h * w),
                Layer::BatchNorm => {
                    return arch_err(format!("layer {i}: batch normalization cannot be intervalized"));
                }
            }
        }
        let features = c * h * w;
        let shared_head = match self.heads {
            Heads::Shared => {
                let tensor = shapes.len();
                shapes.push((self.outputs, features));
                shapes.push((1, self.outputs));
                stages.push(Stage::Dense {
                    tensor,
                    inputs: features,
                    units: self.outputs,
                });
                true
            }
            Heads::PerTask(_) => false,
        };
        Ok(Plan {
            stages,
            shapes,
            features,
            shared_head,
        })
    }
}

/// One executable step of a compiled architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stage {
    /// Intervalized dense layer whose weight is box tensor `tensor` and bias
    /// `tensor + 1`.
    Dense {
        tensor: usize,
        inputs: usize,
        units: usize,
    },
    Conv {
        tensor: usize,
        geom: ConvGeometry,
    },
    Activation(Activation),
    MaxPool(PoolGeometry),
    AvgPool(PoolGeometry),
}

/// Compiled architecture: stages plus the shape of every box tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub stages: Vec<Stage>,
    /// `(rows, cols)` of each intervalized tensor, weights then biases.
    pub shapes: Vec<(usize, usize)>,
    /// Width of the trunk output that feeds a per-task head.
    pub features: usize,
    pub shared_head: bool,
}

impl Plan {
    pub fn parameter_count(&self) -> usize {
        self.shapes.iter().map(|(r, c)| r * c).sum()
    }
}
