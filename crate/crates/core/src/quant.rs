//! 8-bit fixed-point tensors and bit-exact surgical noise injection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faultmodel::{self, BitErrorModel, HybridConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signedness {
    /// Two's complement, codes clipped symmetrically to [-127, 127].
    Signed,
    /// Codes in [0, 255].
    Unsigned,
}

impl Signedness {
    /// Integer value denoted by a stored byte.
    pub fn code_value(self, code: u8) -> i32 {
        match self {
            Signedness::Signed => i32::from(code as i8),
            Signedness::Unsigned => i32::from(code),
        }
    }

    fn code_bounds(self) -> (i32, i32) {
        match self {
            Signedness::Signed => (-127, 127),
            Signedness::Unsigned => (0, 255),
        }
    }

    fn max_level(self) -> f64 {
        f64::from(self.code_bounds().1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantScheme {
    pub signedness: Signedness,
    pub scale: f64,
}

impl QuantScheme {
    pub fn new(signedness: Signedness, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Invalid(format!("quantizer scale {scale} must be positive")));
        }
        Ok(QuantScheme { signedness, scale })
    }

    /// Per-tensor max-abs calibration. An all-zero tensor gets scale 1.
    pub fn max_abs(signedness: Signedness, values: &[f64]) -> Self {
        let m = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let scale = if m > 0.0 { m / signedness.max_level() } else { 1.0 };
        QuantScheme { signedness, scale }
    }

    /// Real-valued interval covered by the code range.
    pub fn clip_range(&self) -> (f64, f64) {
        let (lo, hi) = self.signedness.code_bounds();
        (f64::from(lo) * self.scale, f64::from(hi) * self.scale)
    }

    pub fn quantize_value(&self, x: f64) -> u8 {
        let (lo, hi) = self.signedness.code_bounds();
        let level = if x.is_nan() {
            0.0
        } else {
            (x / self.scale).round_ties_even()
        };
        let level = level.clamp(f64::from(lo), f64::from(hi)) as i32;
        match self.signedness {
            Signedness::Signed => level as i8 as u8,
            Signedness::Unsigned => level as u8,
        }
    }

    pub fn dequantize_code(&self, code: u8) -> f64 {
        f64::from(self.signedness.code_value(code)) * self.scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub shape: Vec<usize>,
    pub codes: Vec<u8>,
    pub scheme: QuantScheme,
}

impl QuantTensor {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

pub fn quantize(values: &[f64], shape: &[usize], scheme: QuantScheme) -> Result<QuantTensor> {
    let n: usize = shape.iter().product();
    if n != values.len() {
        return Err(Error::shape(format!(
            "shape {shape:?} holds {n} values, got {}",
            values.len()
        )));
    }
    Ok(QuantTensor {
        shape: shape.to_vec(),
        codes: values.iter().map(|&v| scheme.quantize_value(v)).collect(),
        scheme,
    })
}

pub fn dequantize(qt: &QuantTensor) -> Vec<f64> {
    qt.codes
        .iter()
        .map(|&c| qt.scheme.dequantize_code(c))
        .collect()
}

/// Applies the flip masks of [`faultmodel::sample_masks`] for `seed`; bits
/// above the 6T region are never touched.
pub fn inject(
    qt: &QuantTensor,
    config: &HybridConfig,
    model: &BitErrorModel,
    seed: u64,
) -> Result<QuantTensor> {
    let masks = faultmodel::sample_masks(qt.len(), config, model, seed)?;
    Ok(apply_masks(qt, &masks))
}

pub fn apply_masks(qt: &QuantTensor, masks: &[u8]) -> QuantTensor {
    debug_assert_eq!(qt.codes.len(), masks.len());
    QuantTensor {
        shape: qt.shape.clone(),
        codes: qt.codes.iter().zip(masks).map(|(c, m)| c ^ m).collect(),
        scheme: qt.scheme,
    }
}

/// In-place variant used on the inference hot path.
pub(crate) fn inject_codes(
    codes: &mut [u8],
    config: &HybridConfig,
    model: &BitErrorModel,
    seed: u64,
) -> Result<()> {
    let masks = faultmodel::sample_masks(codes.len(), config, model, seed)?;
    for (c, m) in codes.iter_mut().zip(masks) {
        *c ^= m;
    }
    Ok(())
}
