//! Minimal CNN engine: layer graph, float master weights with exact
//! reverse-mode gradients, and an 8-bit quantized execution path whose
//! memory banks can carry surgical noise.

mod eval;
mod float;
mod kernels;
mod quantized;

pub use eval::{evaluate, Dataset, EvalResult, NoiseScope};
pub use float::{
    batch_param_gradients, cross_entropy, forward_float, gradients, grad_input, grad_params,
    softmax, Gradients,
};
pub use quantized::{Bank, NoisePlan, NoiseSeed, QuantNet, QuantSchemes};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// 1x1 convolution on the skip branch of a residual block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Projection {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv2d {
        out_ch: usize,
        in_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    Fc {
        inputs: usize,
        outputs: usize,
    },
    /// Folded batch norm: per-channel scale and shift.
    Affine {
        channels: usize,
    },
    ResidualBegin,
    ResidualAdd {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        projection: Option<Projection>,
    },
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::AvgPool { .. } => "avgpool",
            Layer::Fc { .. } => "fc",
            Layer::Affine { .. } => "affine",
            Layer::ResidualBegin => "residual_begin",
            Layer::ResidualAdd { .. } => "residual_add",
        }
    }

    /// Whether the layer keeps a weight tensor in a parameter memory bank.
    pub fn has_parameter_mb(&self) -> bool {
        matches!(
            self,
            Layer::Conv2d { .. }
                | Layer::Fc { .. }
                | Layer::ResidualAdd {
                    projection: Some(_)
                }
        )
    }

    pub fn is_residual_shortcut(&self) -> bool {
        matches!(self, Layer::ResidualAdd { projection: Some(_) })
    }

    /// Expected (weight, bias) shapes.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            Layer::Conv2d {
                out_ch,
                in_ch,
                kernel,
                ..
            } => Some((vec![out_ch, in_ch, kernel, kernel], vec![out_ch])),
            Layer::Fc { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            Layer::Affine { channels } => Some((vec![channels], vec![channels])),
            Layer::ResidualAdd {
                projection: Some(p),
            } => Some((vec![p.out_ch, p.in_ch, 1, 1], vec![p.out_ch])),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDef {
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub classes: usize,
}

fn conv_out(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl NetworkDef {
    /// Output shape of every layer, validating the whole graph.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut cur = self.input_shape.clone();
        if cur.is_empty() || cur.contains(&0) {
            return Err(Error::shape(format!("bad input shape {cur:?}")));
        }
        let mut skips: Vec<Vec<usize>> = Vec::new();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |why: String| Error::layer(i, why);
            cur = match *layer {
                Layer::Conv2d {
                    out_ch,
                    in_ch,
                    kernel,
                    stride,
                    pad,
                } => {
                    if cur.len() != 3 || cur[0] != in_ch {
                        return Err(bad(format!("conv expects [{in_ch}, H, W], got {cur:?}")));
                    }
                    let h = conv_out(cur[1], kernel, stride, pad);
                    let w = conv_out(cur[2], kernel, stride, pad);
                    match (h, w) {
                        (Some(h), Some(w)) if out_ch > 0 => vec![out_ch, h, w],
                        _ => return Err(bad(format!("conv geometry invalid for {cur:?}"))),
                    }
                }
                Layer::Relu => cur,
                Layer::MaxPool { kernel, stride } | Layer::AvgPool { kernel, stride } => {
                    if cur.len() != 3 {
                        return Err(bad(format!("pooling expects [C, H, W], got {cur:?}")));
                    }
                    match (conv_out(cur[1], kernel, stride, 0), conv_out(cur[2], kernel, stride, 0)) {
                        (Some(h), Some(w)) => vec![cur[0], h, w],
                        _ => return Err(bad(format!("pool window too large for {cur:?}"))),
                    }
                }
                Layer::Fc { inputs, outputs } => {
                    let n: usize = cur.iter().product();
                    if n != inputs || outputs == 0 {
                        return Err(bad(format!("fc expects {inputs} inputs, got {cur:?}")));
                    }
                    vec![outputs]
                }
                Layer::Affine { channels } => {
                    if cur[0] != channels {
                        return Err(bad(format!("affine expects {channels} channels, got {cur:?}")));
                    }
                    cur
                }
                Layer::ResidualBegin => {
                    skips.push(cur.clone());
                    cur
                }
                Layer::ResidualAdd { projection } => {
                    let skip = skips
                        .pop()
                        .ok_or_else(|| bad("residual_add without residual_begin".into()))?;
                    let skip = match projection {
                        None => skip,
                        Some(p) => {
                            if skip.len() != 3 || skip[0] != p.in_ch {
                                return Err(bad(format!(
                                    "projection expects [{}, H, W], got {skip:?}",
                                    p.in_ch
                                )));
                            }
                            match (conv_out(skip[1], 1, p.stride, 0), conv_out(skip[2], 1, p.stride, 0)) {
                                (Some(h), Some(w)) => vec![p.out_ch, h, w],
                                _ => return Err(bad("projection stride invalid".into())),
                            }
                        }
                    };
                    if skip != cur {
                        return Err(bad(format!("residual operands {skip:?} and {cur:?} differ")));
                    }
                    cur
                }
            };
            out.push(cur.clone());
        }
        if !skips.is_empty() {
            return Err(Error::shape("unclosed residual_begin".to_string()));
        }
        let last = out.last().unwrap_or(&self.input_shape);
        if !self.layers.is_empty() && last.iter().product::<usize>() != self.classes {
            return Err(Error::shape(format!(
                "network emits {last:?} but declares {} classes",
                self.classes
            )));
        }
        Ok(out)
    }

    /// Layers whose output is stored in an activation memory bank: every
    /// layer but the last (logits are read out directly) and the
    /// residual_begin markers (which only tap the previous bank).
    pub fn has_activation_mb(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() && !matches!(self.layers[layer], Layer::ResidualBegin)
    }

    pub fn activation_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&l| self.has_activation_mb(l))
            .collect()
    }

    pub fn weight_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&l| self.layers[l].has_parameter_mb())
            .collect()
    }

    /// Short label such as `3(P)` for pooling or `7(S)` for a residual add.
    pub fn layer_label(&self, layer: usize) -> String {
        match self.layers[layer] {
            Layer::MaxPool { .. } | Layer::AvgPool { .. } => format!("{layer}(P)"),
            Layer::ResidualAdd { .. } => format!("{layer}(S)"),
            _ => layer.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams {
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

/// Float master weights, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<LayerParams>,
}

impl Params {
    /// Zero-filled parameters with the right shapes for `net`.
    pub fn zeros(net: &NetworkDef) -> Self {
        Params {
            layers: net
                .layers
                .iter()
                .map(|l| match l.param_shapes() {
                    Some((w, b)) => LayerParams {
                        weight: Some(Tensor::zeros(&w)),
                        bias: Some(Tensor::zeros(&b)),
                    },
                    None => LayerParams::default(),
                })
                .collect(),
        }
    }

    pub fn validate(&self, net: &NetworkDef) -> Result<()> {
        if self.layers.len() != net.layers.len() {
            return Err(Error::shape(format!(
                "{} parameter entries for {} layers",
                self.layers.len(),
                net.layers.len()
            )));
        }
        for (i, (layer, p)) in net.layers.iter().zip(&self.layers).enumerate() {
            match (layer.param_shapes(), &p.weight, &p.bias) {
                (None, None, None) => {}
                (Some((ws, bs)), Some(w), Some(b)) => {
                    if w.shape != ws || b.shape != bs {
                        return Err(Error::layer(
                            i,
                            format!(
                                "parameters {:?}/{:?} do not match expected {ws:?}/{bs:?}",
                                w.shape, b.shape
                            ),
                        ));
                    }
                    if w.data.iter().chain(&b.data).any(|v| !v.is_finite()) {
                        return Err(Error::layer(i, "non-finite parameter"));
                    }
                }
                _ => return Err(Error::layer(i, "parameter presence does not match layer kind")),
            }
        }
        Ok(())
    }

    pub fn weight(&self, layer: usize) -> Option<&Tensor> {
        self.layers.get(layer).and_then(|p| p.weight.as_ref())
    }
}
