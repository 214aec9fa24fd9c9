//! Float forward pass and exact reverse-mode gradients. This path never sees
//! quantization or noise; both attack recipes take their gradients here.

use rayon::prelude::*;

use super::kernels::{self, ConvGeom, PoolGeom};
use super::{Dataset, Layer, LayerParams, NetworkDef, Params, Tensor};
use crate::error::{Error, Result};

pub(crate) struct Skip {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

pub(crate) struct LayerOut {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
    pub argmax: Option<Vec<usize>>,
    /// Skip operand consumed by a residual_add.
    pub skip: Option<Skip>,
}

fn conv_geom(shape: &[usize], out_ch: usize, kernel: usize, stride: usize, pad: usize) -> ConvGeom {
    ConvGeom {
        in_ch: shape[0],
        in_h: shape[1],
        in_w: shape[2],
        out_ch,
        kernel,
        stride,
        pad,
    }
}

fn pool_geom(shape: &[usize], kernel: usize, stride: usize) -> PoolGeom {
    PoolGeom {
        ch: shape[0],
        in_h: shape[1],
        in_w: shape[2],
        kernel,
        stride,
    }
}

/// Executes one layer. Shapes are assumed validated by `NetworkDef::shapes`.
pub(crate) fn layer_forward(
    layer: &Layer,
    w: Option<&[f64]>,
    b: Option<&[f64]>,
    x: &[f64],
    shape: &[usize],
    skips: &mut Vec<Skip>,
) -> LayerOut {
    let plain = |data: Vec<f64>, shape: Vec<usize>| LayerOut {
        data,
        shape,
        argmax: None,
        skip: None,
    };
    match *layer {
        Layer::Conv2d {
            out_ch,
            kernel,
            stride,
            pad,
            ..
        } => {
            let g = conv_geom(shape, out_ch, kernel, stride, pad);
            let out = kernels::conv2d(x, w.unwrap(), b.unwrap(), &g);
            plain(out, vec![out_ch, g.out_h(), g.out_w()])
        }
        Layer::Relu => plain(kernels::relu(x), shape.to_vec()),
        Layer::MaxPool { kernel, stride } => {
            let g = pool_geom(shape, kernel, stride);
            let (out, arg) = kernels::maxpool(x, &g);
            LayerOut {
                data: out,
                shape: vec![g.ch, g.out_h(), g.out_w()],
                argmax: Some(arg),
                skip: None,
            }
        }
        Layer::AvgPool { kernel, stride } => {
            let g = pool_geom(shape, kernel, stride);
            plain(kernels::avgpool(x, &g), vec![g.ch, g.out_h(), g.out_w()])
        }
        Layer::Fc { outputs, .. } => plain(kernels::fc(x, w.unwrap(), b.unwrap()), vec![outputs]),
        Layer::Affine { channels } => {
            let plane = x.len() / channels;
            plain(
                kernels::affine(x, w.unwrap(), b.unwrap(), plane),
                shape.to_vec(),
            )
        }
        Layer::ResidualBegin => {
            skips.push(Skip {
                data: x.to_vec(),
                shape: shape.to_vec(),
            });
            plain(x.to_vec(), shape.to_vec())
        }
        Layer::ResidualAdd { projection } => {
            let skip = skips.pop().expect("validated residual nesting");
            let branch = match projection {
                None => skip.data.clone(),
                Some(p) => {
                    let g = conv_geom(&skip.shape, p.out_ch, 1, p.stride, 0);
                    kernels::conv2d(&skip.data, w.unwrap(), b.unwrap(), &g)
                }
            };
            let out = x.iter().zip(&branch).map(|(a, b)| a + b).collect();
            LayerOut {
                data: out,
                shape: shape.to_vec(),
                argmax: None,
                skip: Some(skip),
            }
        }
    }
}

struct Step {
    input: Vec<f64>,
    in_shape: Vec<usize>,
    argmax: Option<Vec<usize>>,
    skip: Option<Skip>,
}

struct Trace {
    steps: Vec<Step>,
    output: Vec<f64>,
}

fn check_input(net: &NetworkDef, x: &Tensor) -> Result<()> {
    if x.shape != net.input_shape {
        return Err(Error::shape(format!(
            "input {:?} does not match network input {:?}",
            x.shape, net.input_shape
        )));
    }
    Ok(())
}

fn param_slices(p: &LayerParams) -> (Option<&[f64]>, Option<&[f64]>) {
    (
        p.weight.as_ref().map(|t| t.data.as_slice()),
        p.bias.as_ref().map(|t| t.data.as_slice()),
    )
}

fn trace(net: &NetworkDef, params: &Params, x: &Tensor) -> Result<Trace> {
    check_input(net, x)?;
    let mut cur = x.data.clone();
    let mut shape = x.shape.clone();
    let mut skips = Vec::new();
    let mut steps = Vec::with_capacity(net.layers.len());
    for (layer, p) in net.layers.iter().zip(&params.layers) {
        let (w, b) = param_slices(p);
        let out = layer_forward(layer, w, b, &cur, &shape, &mut skips);
        steps.push(Step {
            input: std::mem::replace(&mut cur, out.data),
            in_shape: std::mem::replace(&mut shape, out.shape),
            argmax: out.argmax,
            skip: out.skip,
        });
    }
    Ok(Trace { steps, output: cur })
}

/// Float logits (no quantization, no noise).
pub fn forward_float(net: &NetworkDef, params: &Params, x: &Tensor) -> Result<Tensor> {
    let t = trace(net, params, x)?;
    let shape = if net.layers.is_empty() {
        x.shape.clone()
    } else {
        vec![t.output.len()]
    };
    Tensor::new(shape, t.output)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-log softmax(logits)[label]`, computed with a stable log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::Invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    Ok((lse - logits[label]).max(0.0))
}

fn backward(net: &NetworkDef, params: &Params, trace: Trace, gout: Vec<f64>) -> (Vec<f64>, Params) {
    let mut grads: Vec<LayerParams> = vec![LayerParams::default(); net.layers.len()];
    let mut g = gout;
    let mut pending: Vec<Vec<f64>> = Vec::new();
    for (i, step) in trace.steps.into_iter().enumerate().rev() {
        let layer = &net.layers[i];
        let p = &params.layers[i];
        let shape = &step.in_shape;
        g = match *layer {
            Layer::Conv2d {
                out_ch,
                kernel,
                stride,
                pad,
                ..
            } => {
                let geom = conv_geom(shape, out_ch, kernel, stride, pad);
                let w = p.weight.as_ref().unwrap();
                let (gx, gw, gb) = kernels::conv2d_backward(&step.input, &w.data, &g, &geom);
                grads[i] = layer_grads(p, gw, gb);
                gx
            }
            Layer::Relu => kernels::relu_backward(&step.input, &g),
            Layer::MaxPool { .. } => {
                kernels::maxpool_backward(&g, step.argmax.as_ref().unwrap(), step.input.len())
            }
            Layer::AvgPool { kernel, stride } => {
                kernels::avgpool_backward(&g, &pool_geom(shape, kernel, stride))
            }
            Layer::Fc { .. } => {
                let w = p.weight.as_ref().unwrap();
                let (gx, gw, gb) = kernels::fc_backward(&step.input, &w.data, &g);
                grads[i] = layer_grads(p, gw, gb);
                gx
            }
            Layer::Affine { channels } => {
                let w = p.weight.as_ref().unwrap();
                let plane = step.input.len() / channels;
                let (gx, gs, gt) = kernels::affine_backward(&step.input, &w.data, &g, plane);
                grads[i] = layer_grads(p, gs, gt);
                gx
            }
            Layer::ResidualBegin => {
                let skip = pending.pop().expect("balanced residual");
                g.iter().zip(&skip).map(|(a, b)| a + b).collect()
            }
            Layer::ResidualAdd { projection } => {
                let skip = step.skip.as_ref().unwrap();
                let gskip = match projection {
                    None => g.clone(),
                    Some(pr) => {
                        let geom = conv_geom(&skip.shape, pr.out_ch, 1, pr.stride, 0);
                        let w = p.weight.as_ref().unwrap();
                        let (gx, gw, gb) = kernels::conv2d_backward(&skip.data, &w.data, &g, &geom);
                        grads[i] = layer_grads(p, gw, gb);
                        gx
                    }
                };
                pending.push(gskip);
                g
            }
        };
    }
    (g, Params { layers: grads })
}

fn layer_grads(p: &LayerParams, gw: Vec<f64>, gb: Vec<f64>) -> LayerParams {
    LayerParams {
        weight: Some(Tensor {
            shape: p.weight.as_ref().unwrap().shape.clone(),
            data: gw,
        }),
        bias: Some(Tensor {
            shape: p.bias.as_ref().unwrap().shape.clone(),
            data: gb,
        }),
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub logits: Vec<f64>,
    pub input: Tensor,
    pub params: Params,
}

/// Loss and gradients w.r.t. the input and every parameter for one example.
pub fn gradients(net: &NetworkDef, params: &Params, x: &Tensor, label: usize) -> Result<Gradients> {
    let t = trace(net, params, x)?;
    let logits = t.output.clone();
    let loss = cross_entropy(&logits, label)?;
    let mut d = softmax(&logits);
    d[label] -= 1.0;
    let (gx, gp) = backward(net, params, t, d);
    Ok(Gradients {
        loss,
        logits,
        input: Tensor {
            shape: x.shape.clone(),
            data: gx,
        },
        params: gp,
    })
}

pub fn grad_input(net: &NetworkDef, params: &Params, x: &Tensor, label: usize) -> Result<Tensor> {
    Ok(gradients(net, params, x, label)?.input)
}

pub fn grad_params(net: &NetworkDef, params: &Params, x: &Tensor, label: usize) -> Result<Params> {
    Ok(gradients(net, params, x, label)?.params)
}

fn add_into(acc: &mut Params, g: &Params) {
    for (a, b) in acc.layers.iter_mut().zip(&g.layers) {
        for (ta, tb) in [(&mut a.weight, &b.weight), (&mut a.bias, &b.bias)] {
            if let (Some(ta), Some(tb)) = (ta.as_mut(), tb.as_ref()) {
                for (x, y) in ta.data.iter_mut().zip(&tb.data) {
                    *x += y;
                }
            }
        }
    }
}

/// Sum of per-example parameter gradients over `indices`, reduced in index
/// order.
pub fn batch_param_gradients(
    net: &NetworkDef,
    params: &Params,
    data: &Dataset,
    indices: &[usize],
) -> Result<Params> {
    let per: Vec<Params> = indices
        .par_iter()
        .map(|&i| {
            let (x, t) = data.example(i)?;
            grad_params(net, params, &x, t)
        })
        .collect::<Result<_>>()?;
    let mut acc = Params::zeros(net);
    for g in &per {
        add_into(&mut acc, g);
    }
    Ok(acc)
}
