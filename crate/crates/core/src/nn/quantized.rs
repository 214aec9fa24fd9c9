//! 8-bit execution path. Each layer's output is quantized into its
//! activation memory bank before the next layer reads it; weights are read
//! from their parameter bank as 8-bit codes. A [`NoisePlan`] selects banks
//! whose 6T cells flip during the run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::float::{layer_forward, Skip};
use super::{Dataset, NetworkDef, Params, Tensor};
use crate::error::{Error, Result};
use crate::faultmodel::{BitErrorModel, HybridConfig};
use crate::quant::{self, QuantScheme, QuantTensor, Signedness};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bank {
    Activation,
    Parameter,
}

impl Bank {
    fn id(self) -> u64 {
        match self {
            Bank::Activation => 1,
            Bank::Parameter => 2,
        }
    }
}

/// Which memory banks are noisy, and with which hybrid configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoisePlan {
    entries: BTreeMap<(usize, Bank), HybridConfig>,
}

impl NoisePlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with(mut self, layer: usize, bank: Bank, config: HybridConfig) -> Self {
        self.entries.insert((layer, bank), config);
        self
    }

    pub fn activations<I: IntoIterator<Item = (usize, HybridConfig)>>(items: I) -> Self {
        let mut plan = Self::none();
        for (l, c) in items {
            plan.entries.insert((l, Bank::Activation), c);
        }
        plan
    }

    pub fn get(&self, layer: usize, bank: Bank) -> Option<&HybridConfig> {
        self.entries.get(&(layer, bank))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, Bank, &HybridConfig)> {
        self.entries.iter().map(|(&(l, b), c)| (l, b, c))
    }

    pub fn validate(&self, net: &NetworkDef) -> Result<()> {
        for &(l, bank) in self.entries.keys() {
            if l >= net.layers.len() {
                return Err(Error::layer(l, "noise plan names a layer past the end"));
            }
            let ok = match bank {
                Bank::Activation => net.has_activation_mb(l),
                Bank::Parameter => net.layers[l].has_parameter_mb(),
            };
            if !ok {
                return Err(Error::layer(
                    l,
                    format!("{} layer has no {bank:?} memory bank", net.layers[l].name()),
                ));
            }
        }
        Ok(())
    }
}

/// Noise stream selector for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSeed {
    pub base: u64,
    /// Example index, or 0 when one mask is shared by the whole run.
    pub example: u64,
}

impl NoiseSeed {
    pub fn new(base: u64, example: u64) -> Self {
        NoiseSeed { base, example }
    }

    fn bank(&self, layer: usize, bank: Bank) -> u64 {
        rng::derive_seed(self.base, &[self.example, layer as u64, bank.id()])
    }
}

/// Quantizer for the input, each activation bank and each weight tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantSchemes {
    pub input: QuantScheme,
    pub activations: Vec<Option<QuantScheme>>,
    pub weights: Vec<Option<QuantScheme>>,
}

/// Pixel grid for 8-bit images in [0, 1].
pub const INPUT_SCALE: f64 = 1.0 / 255.0;

impl QuantSchemes {
    /// Max-abs calibration: weights per tensor (signed), activations per
    /// bank from the float outputs on `calib` (unsigned when never negative).
    pub fn calibrate(net: &NetworkDef, params: &Params, calib: &Dataset) -> Result<Self> {
        params.validate(net)?;
        let n = net.layers.len();
        let mut lo = vec![0.0f64; n];
        let mut hi = vec![0.0f64; n];
        for i in 0..calib.len() {
            let (x, _) = calib.example(i)?;
            let acts = float_activations(net, params, &x)?;
            for (l, a) in acts.iter().enumerate() {
                for &v in a {
                    lo[l] = lo[l].min(v);
                    hi[l] = hi[l].max(v);
                }
            }
        }
        let activations = (0..n)
            .map(|l| {
                net.has_activation_mb(l).then(|| {
                    let sign = if lo[l] >= 0.0 {
                        Signedness::Unsigned
                    } else {
                        Signedness::Signed
                    };
                    QuantScheme::max_abs(sign, &[lo[l], hi[l]])
                })
            })
            .collect();
        let weights = net
            .layers
            .iter()
            .zip(&params.layers)
            .map(|(layer, p)| {
                layer.has_parameter_mb().then(|| {
                    QuantScheme::max_abs(Signedness::Signed, &p.weight.as_ref().unwrap().data)
                })
            })
            .collect();
        Ok(QuantSchemes {
            input: QuantScheme::new(Signedness::Unsigned, INPUT_SCALE)?,
            activations,
            weights,
        })
    }

    pub fn validate(&self, net: &NetworkDef) -> Result<()> {
        let n = net.layers.len();
        if self.activations.len() != n || self.weights.len() != n {
            return Err(Error::shape(format!(
                "quantization schemes cover {}/{} layers, network has {n}",
                self.activations.len(),
                self.weights.len()
            )));
        }
        for l in 0..n {
            if self.activations[l].is_some() != net.has_activation_mb(l) {
                return Err(Error::layer(l, "activation scheme presence mismatch"));
            }
            if self.weights[l].is_some() != net.layers[l].has_parameter_mb() {
                return Err(Error::layer(l, "weight scheme presence mismatch"));
            }
        }
        Ok(())
    }
}

fn float_activations(net: &NetworkDef, params: &Params, x: &Tensor) -> Result<Vec<Vec<f64>>> {
    let mut cur = x.data.clone();
    let mut shape = x.shape.clone();
    let mut skips = Vec::new();
    let mut acts = Vec::with_capacity(net.layers.len());
    for (layer, p) in net.layers.iter().zip(&params.layers) {
        let out = layer_forward(
            layer,
            p.weight.as_ref().map(|t| t.data.as_slice()),
            p.bias.as_ref().map(|t| t.data.as_slice()),
            &cur,
            &shape,
            &mut skips,
        );
        cur = out.data;
        shape = out.shape;
        acts.push(cur.clone());
    }
    Ok(acts)
}

#[derive(Debug, Clone)]
struct LayerWeights {
    codes: Option<QuantTensor>,
    /// Dequantized weights, or the float scale for affine layers.
    dense: Option<Vec<f64>>,
    bias: Option<Vec<f64>>,
}

/// A network prepared for 8-bit inference.
#[derive(Debug, Clone)]
pub struct QuantNet {
    net: NetworkDef,
    schemes: QuantSchemes,
    layers: Vec<LayerWeights>,
}

impl QuantNet {
    pub fn new(net: &NetworkDef, params: &Params, schemes: &QuantSchemes) -> Result<Self> {
        net.shapes()?;
        params.validate(net)?;
        schemes.validate(net)?;
        let layers = net
            .layers
            .iter()
            .zip(&params.layers)
            .enumerate()
            .map(|(l, (_, p))| {
                let bias = p.bias.as_ref().map(|b| b.data.clone());
                if let Some(scheme) = schemes.weights[l] {
                    let w = p.weight.as_ref().unwrap();
                    let codes = quant::quantize(&w.data, &w.shape, scheme)?;
                    Ok(LayerWeights {
                        dense: Some(quant::dequantize(&codes)),
                        codes: Some(codes),
                        bias,
                    })
                } else {
                    // affine parameters stay in accumulator precision
                    Ok(LayerWeights {
                        codes: None,
                        dense: p.weight.as_ref().map(|w| w.data.clone()),
                        bias,
                    })
                }
            })
            .collect::<Result<_>>()?;
        Ok(QuantNet {
            net: net.clone(),
            schemes: schemes.clone(),
            layers,
        })
    }

    pub fn net(&self) -> &NetworkDef {
        &self.net
    }

    pub fn schemes(&self) -> &QuantSchemes {
        &self.schemes
    }

    pub fn weight_codes(&self, layer: usize) -> Option<&QuantTensor> {
        self.layers.get(layer).and_then(|l| l.codes.as_ref())
    }

    /// Replaces the stored codes of one weight tensor (same length).
    pub fn set_weight_codes(&mut self, layer: usize, codes: Vec<u8>) -> Result<()> {
        let lw = self
            .layers
            .get_mut(layer)
            .ok_or_else(|| Error::layer(layer, "no such layer"))?;
        let qt = lw
            .codes
            .as_mut()
            .ok_or_else(|| Error::layer(layer, "layer has no parameter bank"))?;
        if qt.codes.len() != codes.len() {
            return Err(Error::shape(format!(
                "{} codes for a tensor of {}",
                codes.len(),
                qt.codes.len()
            )));
        }
        qt.codes = codes;
        lw.dense = Some(quant::dequantize(qt));
        Ok(())
    }

    /// Weights as the engine reads them (dequantized codes, or overrides).
    pub fn weights(&self, layer: usize) -> Option<&[f64]> {
        self.layers.get(layer).and_then(|l| l.dense.as_deref())
    }

    /// Overrides the values read from a parameter bank without touching its
    /// codes. Used for perturbations that are not representable as flips.
    pub fn set_weights(&mut self, layer: usize, values: Vec<f64>) -> Result<()> {
        let lw = self
            .layers
            .get_mut(layer)
            .ok_or_else(|| Error::layer(layer, "no such layer"))?;
        let n = lw
            .codes
            .as_ref()
            .ok_or_else(|| Error::layer(layer, "layer has no parameter bank"))?
            .codes
            .len();
        if n != values.len() {
            return Err(Error::shape(format!("{} values for a tensor of {n}", values.len())));
        }
        lw.dense = Some(values);
        Ok(())
    }

    pub fn forward(
        &self,
        x: &Tensor,
        plan: &NoisePlan,
        model: &BitErrorModel,
        seed: NoiseSeed,
    ) -> Result<Tensor> {
        let (logits, _) = self.run(x, plan, model, seed, false)?;
        Ok(logits)
    }

    /// Dequantized contents of every activation bank (plus the logits as the
    /// last entry).
    pub fn forward_activations(
        &self,
        x: &Tensor,
        plan: &NoisePlan,
        model: &BitErrorModel,
        seed: NoiseSeed,
    ) -> Result<Vec<Vec<f64>>> {
        let (_, acts) = self.run(x, plan, model, seed, true)?;
        Ok(acts)
    }

    fn run(
        &self,
        x: &Tensor,
        plan: &NoisePlan,
        model: &BitErrorModel,
        seed: NoiseSeed,
        record: bool,
    ) -> Result<(Tensor, Vec<Vec<f64>>)> {
        if x.shape != self.net.input_shape {
            return Err(Error::shape(format!(
                "input {:?} does not match network input {:?}",
                x.shape, self.net.input_shape
            )));
        }
        plan.validate(&self.net)?;
        let input = quant::quantize(&x.data, &x.shape, self.schemes.input)?;
        let mut cur = quant::dequantize(&input);
        let mut shape = x.shape.clone();
        let mut skips: Vec<Skip> = Vec::new();
        let mut acts = Vec::new();
        if self.net.layers.is_empty() {
            // no layers: the logits are the stored input as read back
            return Ok((Tensor::new(shape, cur)?, acts));
        }
        for (l, layer) in self.net.layers.iter().enumerate() {
            let lw = &self.layers[l];
            let noisy_w;
            let w = match (plan.get(l, Bank::Parameter), &lw.codes) {
                (Some(cfg), Some(codes)) => {
                    let mut c = codes.clone();
                    quant::inject_codes(&mut c.codes, cfg, model, seed.bank(l, Bank::Parameter))?;
                    noisy_w = quant::dequantize(&c);
                    Some(noisy_w.as_slice())
                }
                _ => lw.dense.as_deref(),
            };
            let out = layer_forward(layer, w, lw.bias.as_deref(), &cur, &shape, &mut skips);
            shape = out.shape;
            cur = out.data;
            if let Some(scheme) = self.schemes.activations[l] {
                let mut codes: Vec<u8> = cur.iter().map(|&v| scheme.quantize_value(v)).collect();
                if let Some(cfg) = plan.get(l, Bank::Activation) {
                    quant::inject_codes(&mut codes, cfg, model, seed.bank(l, Bank::Activation))?;
                }
                cur = codes.iter().map(|&c| scheme.dequantize_code(c)).collect();
            }
            if record {
                acts.push(cur.clone());
            }
        }
        let logits = Tensor::new(vec![cur.len()], cur)?;
        Ok((logits, acts))
    }
}
