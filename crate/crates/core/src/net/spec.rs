use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::act::ChebPoly;
use crate::conv::FilterTensor;
use crate::dense::{fold_bn, AffineParams, LinearWeights};
use crate::emu::NoiseModel;
use crate::fixture;
use crate::{Error, Result};

/// JSON network description. Fixture paths are relative to the spec file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    #[serde(default)]
    pub name: String,
    pub shard_size: usize,
    pub top_level: u32,
    pub input: InputShape,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub bootstrap: BootstrapPolicy,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub thresholds: Thresholds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub side: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        filter: PathBuf,
        #[serde(default)]
        batch_norm: Option<BatchNormSpec>,
        #[serde(default = "one")]
        stride: usize,
    },
    Gelu {
        bound: f64,
        degree: usize,
        poly: PathBuf,
    },
    Pool,
    Linear {
        weights: PathBuf,
    },
    PoolLinear {
        weights: PathBuf,
    },
}

fn one() -> usize {
    1
}

/// Per-channel affine map applied after a convolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormSpec {
    pub scale: Vec<f64>,
    pub bias: Vec<f64>,
}

/// When to bootstrap. With no explicit `schedule`, every shard is
/// bootstrapped right before a layer whose depth exceeds the remaining level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapPolicy {
    pub enabled: bool,
    /// Level restored by a bootstrap; defaults to the top level.
    pub target_level: Option<u32>,
    /// Explicit layer indices to bootstrap before.
    pub schedule: Option<Vec<usize>>,
}

impl Default for BootstrapPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            target_level: None,
            schedule: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Largest allowed `|emulated - oracle|` over the logits. Defaults to
    /// 1e-6 when noise is off and to no limit otherwise.
    pub max_logit_residual: Option<f64>,
}

/// A layer with its weights loaded (batch norm already folded).
#[derive(Clone, Debug)]
pub enum Layer {
    Conv {
        kernel: FilterTensor<f64>,
        bias: Vec<f64>,
        stride: usize,
    },
    Gelu {
        poly: ChebPoly<f64>,
    },
    Pool,
    Linear(LinearWeights<f64>),
    PoolLinear(LinearWeights<f64>),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::Gelu { .. } => "gelu",
            Layer::Pool => "pool",
            Layer::Linear(_) => "linear",
            Layer::PoolLinear(_) => "pool_linear",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Shape {
    Image { c: usize, m: usize },
    Features(usize),
}

#[derive(Clone, Debug)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

impl Network {
    /// Reads a spec and every fixture it names.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Fixture {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let spec: NetworkSpec = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_spec(spec, base)
    }

    pub fn from_spec(spec: NetworkSpec, base: &Path) -> Result<Self> {
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| load_layer(i, l, base))
            .collect::<Result<Vec<_>>>()?;
        let net = Self { spec, layers };
        net.shapes()?;
        Ok(net)
    }

    /// Output shape of every layer, checking that the chain is consistent.
    pub(crate) fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shape = Shape::Image {
            c: self.spec.input.channels,
            m: self.spec.input.side,
        };
        let bad = |i: usize, msg: String| Err(Error::Invalid(format!("layer {i}: {msg}")));
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match (layer, shape) {
                (Layer::Conv { kernel, stride, .. }, Shape::Image { c, m }) => {
                    if kernel.in_channels() != c {
                        return bad(i, format!("filter takes {} channels, got {c}", kernel.in_channels()));
                    }
                    if *stride != 1 && *stride != 2 {
                        return bad(i, format!("stride {stride}"));
                    }
                    Shape::Image {
                        c: kernel.out_channels(),
                        m: m / stride,
                    }
                }
                (Layer::Gelu { .. }, s) => s,
                (Layer::Pool, Shape::Image { c, m }) if m >= 2 => Shape::Image { c, m: m / 2 },
                (Layer::Linear(w), Shape::Image { c, m }) if w.in_features() == c * m * m => {
                    Shape::Features(w.out_features())
                }
                (Layer::Linear(w), Shape::Features(n)) if w.in_features() == n => Shape::Features(w.out_features()),
                (Layer::PoolLinear(w), Shape::Image { c, .. }) if w.in_features() == c => {
                    Shape::Features(w.out_features())
                }
                (layer, s) => return bad(i, format!("{} cannot follow {s:?}", layer.kind())),
            };
            out.push(shape);
        }
        Ok(out)
    }

    pub fn noise(&self) -> NoiseModel {
        self.spec.noise
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.spec.noise = noise;
        self
    }

    pub fn with_schedule(mut self, schedule: Option<Vec<usize>>) -> Self {
        self.spec.bootstrap.schedule = schedule;
        self
    }

    pub fn target_level(&self) -> u32 {
        self.spec.bootstrap.target_level.unwrap_or(self.spec.top_level)
    }

    pub fn logit_threshold(&self) -> Option<f64> {
        match self.spec.thresholds.max_logit_residual {
            Some(t) => Some(t),
            None if !self.spec.noise.enabled => Some(1e-6),
            None => None,
        }
    }
}

fn load_layer(index: usize, spec: &LayerSpec, base: &Path) -> Result<Layer> {
    let at = |p: &Path| base.join(p);
    Ok(match spec {
        LayerSpec::Conv {
            filter,
            batch_norm,
            stride,
        } => {
            let (k, bias) = fixture::read_filter::<f64>(at(filter))?;
            let (kernel, bias) = match batch_norm {
                Some(bn) => fold_bn(&k, bias.as_deref(), &AffineParams::new(bn.scale.clone(), bn.bias.clone())?)?,
                None => {
                    let b = bias.unwrap_or_else(|| vec![0.0; k.out_channels()]);
                    (k, b)
                }
            };
            if bias.len() != kernel.out_channels() {
                return Err(Error::Invalid(format!("layer {index}: bias length mismatch")));
            }
            Layer::Conv {
                kernel,
                bias,
                stride: *stride,
            }
        }
        LayerSpec::Gelu { bound, degree, poly } => {
            let p = fixture::read_poly::<f64>(at(poly))?;
            if (p.bound() - bound).abs() > 1e-12 * bound.abs().max(1.0) || p.degree() != *degree {
                return Err(Error::Invalid(format!(
                    "layer {index}: gelu declares bound {bound} degree {degree}, fixture {} has bound {} degree {}",
                    poly.display(),
                    p.bound(),
                    p.degree()
                )));
            }
            Layer::Gelu { poly: p }
        }
        LayerSpec::Pool => Layer::Pool,
        LayerSpec::Linear { weights } => Layer::Linear(fixture::read_linear(at(weights))?),
        LayerSpec::PoolLinear { weights } => Layer::PoolLinear(fixture::read_linear(at(weights))?),
    })
}
