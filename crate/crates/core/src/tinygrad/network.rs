//! Feed-forward models: optional 1-D convolutions over the scan block,
//! followed by dense layers over the flattened features and the extra inputs.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, IpLayer, Var};
use super::params::ParamSet;
use super::tensor::{Scalar, Tensor};
use super::GradError;

type Result<T> = std::result::Result<T, GradError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    #[serde(rename = "Model_0")]
    Model0,
    #[serde(rename = "Model_1")]
    Model1,
    #[serde(rename = "Model_2")]
    Model2,
    #[serde(rename = "Model_3")]
    Model3,
    #[serde(rename = "custom")]
    Custom,
}

impl ModelId {
    pub fn name(self) -> &'static str {
        match self {
            ModelId::Model0 => "Model_0",
            ModelId::Model1 => "Model_1",
            ModelId::Model2 => "Model_2",
            ModelId::Model3 => "Model_3",
            ModelId::Custom => "custom",
        }
    }

    /// Number of consecutive scans the model consumes.
    pub fn default_stack(self) -> usize {
        if self == ModelId::Model2 {
            3
        } else {
            1
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelId {
    type Err = GradError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['_', '-'], "");
        Ok(match norm.as_str() {
            "model0" => ModelId::Model0,
            "model1" => ModelId::Model1,
            "model2" => ModelId::Model2,
            "model3" => ModelId::Model3,
            "custom" => ModelId::Custom,
            _ => return Err(GradError::InvalidSpec(format!("unknown model {s}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
}

impl Activation {
    fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::LeakyRelu { slope } => g.leaky_relu(x, T::lit(slope)),
            Activation::Tanh => g.tanh(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
    },
    Dense {
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
    },
}

/// Column layout of one input row: `stack` scans of `scan_len` pooled
/// distances (most recent last), then `extra` scalar features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputLayout {
    pub scan_len: usize,
    pub stack: usize,
    pub extra: usize,
}

impl InputLayout {
    pub fn scan_width(&self) -> usize {
        self.scan_len * self.stack
    }

    pub fn width(&self) -> usize {
        self.scan_width() + self.extra
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub model_id: ModelId,
    pub input: InputLayout,
    pub layers: Vec<LayerSpec>,
    /// Applied after every hidden dense layer in train mode.
    pub dropout_rate: f64,
}

fn dense_stack(widths: &[usize], act: Activation, out: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for w in widths.windows(2) {
        layers.push(LayerSpec::Dense {
            fan_in: w[0],
            fan_out: w[1],
            activation: act,
        });
    }
    layers.push(LayerSpec::Dense {
        fan_in: *widths.last().unwrap(),
        fan_out: out,
        activation: Activation::Identity,
    });
    layers
}

impl NetworkSpec {
    /// Default architecture for `id`. `Custom` is not available here; use
    /// [`mlp`](Self::mlp) or build the layer list directly.
    pub fn model(id: ModelId, input: InputLayout, out: usize) -> Result<Self> {
        let lrelu = Activation::LeakyRelu { slope: 0.01 };
        let (layers, dropout_rate) = match id {
            ModelId::Model0 => (dense_stack(&[input.width(), 256, 256], Activation::Relu, out), 0.0),
            ModelId::Model1 => (dense_stack(&[input.width(), 512, 512, 512], Activation::Relu, out), 0.0),
            ModelId::Model3 => (dense_stack(&[input.width(), 256, 256, 256, 256], lrelu, out), 0.1),
            ModelId::Model2 => {
                let l1 = conv_len(input.scan_len, 5, 2).ok_or_else(|| {
                    GradError::InvalidSpec(format!("scan of {} too short for Model_2", input.scan_len))
                })?;
                let l2 = conv_len(l1, 3, 2).ok_or_else(|| {
                    GradError::InvalidSpec(format!("scan of {} too short for Model_2", input.scan_len))
                })?;
                let mut layers = vec![
                    LayerSpec::Conv1d {
                        in_channels: input.stack,
                        out_channels: 32,
                        kernel: 5,
                        stride: 2,
                        activation: Activation::Relu,
                    },
                    LayerSpec::Conv1d {
                        in_channels: 32,
                        out_channels: 32,
                        kernel: 3,
                        stride: 2,
                        activation: Activation::Relu,
                    },
                ];
                layers.extend(dense_stack(&[32 * l2 + input.extra, 256], Activation::Relu, out));
                (layers, 0.0)
            }
            ModelId::Custom => {
                return Err(GradError::InvalidSpec(
                    "custom models need an explicit layer list".into(),
                ));
            }
        };
        let spec = Self {
            model_id: id,
            input,
            layers,
            dropout_rate,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Plain multilayer perceptron with the given hidden widths.
    pub fn mlp(
        input: InputLayout,
        hidden: &[usize],
        activation: Activation,
        dropout_rate: f64,
        out: usize,
    ) -> Result<Self> {
        let mut widths = vec![input.width()];
        widths.extend_from_slice(hidden);
        let spec = Self {
            model_id: ModelId::Custom,
            input,
            layers: dense_stack(&widths, activation, out),
            dropout_rate,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn output_dim(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Dense { fan_out, .. }) => *fan_out,
            _ => 0,
        }
    }

    /// Checks that layer shapes chain from the input layout to a dense output.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GradError::InvalidSpec(msg));
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.input.stack == 0 || self.input.scan_len == 0 && self.input.extra == 0 {
            return bad("empty input layout".into());
        }
        let mut channels = self.input.stack;
        let mut length = self.input.scan_len;
        let mut flat: Option<usize> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    ..
                } => {
                    if flat.is_some() {
                        return bad(format!("layer {i}: convolution after a dense layer"));
                    }
                    if in_channels != channels || out_channels == 0 || kernel == 0 || stride == 0 {
                        return bad(format!("layer {i}: convolution expects {channels} input channels"));
                    }
                    length = match conv_len(length, kernel, stride) {
                        Some(l) => l,
                        None => return bad(format!("layer {i}: length {length} shorter than kernel {kernel}")),
                    };
                    channels = out_channels;
                }
                LayerSpec::Dense { fan_in, fan_out, .. } => {
                    let expected = flat.unwrap_or(channels * length + self.input.extra);
                    if fan_in != expected || fan_out == 0 {
                        return bad(format!("layer {i}: dense fan-in {fan_in}, expected {expected}"));
                    }
                    flat = Some(fan_out);
                }
            }
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { .. }) => Ok(()),
            _ => bad("network must end in a dense layer".into()),
        }
    }

    /// Fresh parameters, uniform in `±1/sqrt(fan_in)`.
    pub fn init_params<T: Scalar>(&self, rng: &mut dyn RngCore) -> ParamSet<T> {
        let mut ps = ParamSet::new();
        let mut uniform = |shape: Vec<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::from_f64(shape, &data)
        };
        let (mut conv_i, mut dense_i) = (0, 0);
        for layer in &self.layers {
            match *layer {
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let fan = in_channels * kernel;
                    ps.add(
                        format!("conv{conv_i}.w"),
                        uniform(vec![out_channels, in_channels, kernel], fan),
                    );
                    ps.add(format!("conv{conv_i}.b"), uniform(vec![out_channels], fan));
                    conv_i += 1;
                }
                LayerSpec::Dense { fan_in, fan_out, .. } => {
                    ps.add(format!("dense{dense_i}.w"), uniform(vec![fan_in, fan_out], fan_in));
                    ps.add(format!("dense{dense_i}.b"), uniform(vec![fan_out], fan_in));
                    dense_i += 1;
                }
            }
        }
        ps
    }

    /// Forward pass over `x: [B, input.width()]` using parameters bound in
    /// [`init_params`](Self::init_params) order. Dropout is drawn from `rng`
    /// only when `train` is set.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &[Var],
        x: Var,
        train: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.input.width() {
            return Err(GradError::Shape {
                op: "forward",
                detail: format!("input {shape:?}, expected [B, {}]", self.input.width()),
            });
        }
        if params.len() != 2 * self.layers.len() {
            return Err(GradError::Shape {
                op: "forward",
                detail: format!("{} parameter tensors for {} layers", params.len(), self.layers.len()),
            });
        }
        let batch = shape[0];
        let sw = self.input.scan_width();
        let has_conv = matches!(self.layers.first(), Some(LayerSpec::Conv1d { .. }));
        let mut h = if has_conv {
            let scans = g.slice_cols(x, 0, sw)?;
            g.reshape(scans, vec![batch, self.input.stack, self.input.scan_len])?
        } else {
            x
        };
        let n_hidden = self.layers.len() - 1;
        let mut flattened = !has_conv;
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b) = (params[2 * i], params[2 * i + 1]);
            match *layer {
                LayerSpec::Conv1d { stride, activation, .. } => {
                    let y = g.conv1d(h, w, b, stride)?;
                    h = activation.apply(g, y);
                }
                LayerSpec::Dense { activation, .. } => {
                    if !flattened {
                        let feat_len = g.value(h).cols();
                        let feats = g.reshape(h, vec![batch, feat_len])?;
                        h = if self.input.extra > 0 {
                            let extra = g.slice_cols(x, sw, sw + self.input.extra)?;
                            g.concat_cols(&[feats, extra])?
                        } else {
                            feats
                        };
                        flattened = true;
                    }
                    let z = g.matmul(h, w)?;
                    let z = g.add_bias(z, b)?;
                    h = activation.apply(g, z);
                    if train && i < n_hidden && self.dropout_rate > 0.0 {
                        h = g.dropout(h, self.dropout_rate, rng)?;
                    }
                }
            }
        }
        Ok(h)
    }
}

fn conv_len(l: usize, k: usize, stride: usize) -> Option<usize> {
    (l >= k && stride > 0).then(|| (l - k) / stride + 1)
}

/// Applies the IP layer to the scan block of `x` and passes the extra
/// columns through unchanged.
pub fn preprocess_input<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    layout: &InputLayout,
    zeta: Option<Var>,
    layer: &Arc<IpLayer>,
) -> Result<Var> {
    let sw = layout.scan_width();
    let scans = g.slice_cols(x, 0, sw)?;
    let mapped = g.ip_transform(scans, zeta, Arc::clone(layer))?;
    if layout.extra == 0 {
        return Ok(mapped);
    }
    let extra = g.slice_cols(x, sw, sw + layout.extra)?;
    g.concat_cols(&[mapped, extra])
}

/// A spec together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network<T> {
    pub spec: NetworkSpec,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Network<T> {
    pub fn new(spec: NetworkSpec, rng: &mut dyn RngCore) -> Self {
        let params = spec.init_params(rng);
        Self { spec, params }
    }

    /// Evaluation-mode forward on plain rows, without gradients.
    pub fn predict(&self, rows: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let x = g.constant(rows.clone());
        let mut unused = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let y = self.spec.forward(&mut g, &vars, x, false, &mut unused)?;
        Ok(g.value(y).clone())
    }
}
