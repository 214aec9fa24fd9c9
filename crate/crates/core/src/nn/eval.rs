use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::float::softmax;
use super::{NoisePlan, NoiseSeed, QuantNet, Tensor};
use crate::error::{Error, Result};
use crate::faultmodel::BitErrorModel;

/// Labelled images stored contiguously as `[N, C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sample_shape: Vec<usize>,
    pixels: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(sample_shape: Vec<usize>, pixels: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if per == 0 || pixels.len() != per * labels.len() {
            return Err(Error::shape(format!(
                "{} pixel values for {} examples of shape {sample_shape:?}",
                pixels.len(),
                labels.len()
            )));
        }
        Ok(Dataset {
            sample_shape,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let per = self.pixels.len() / self.labels.len();
        &self.pixels[i * per..(i + 1) * per]
    }

    pub fn example(&self, i: usize) -> Result<(Tensor, usize)> {
        if i >= self.len() {
            return Err(Error::Invalid(format!("example {i} out of {}", self.len())));
        }
        Ok((
            Tensor {
                shape: self.sample_shape.clone(),
                data: self.image(i).to_vec(),
            },
            self.labels[i],
        ))
    }

    /// The first `n` examples (all of them if `n` exceeds the size).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let per: usize = self.sample_shape.iter().product();
        Dataset {
            sample_shape: self.sample_shape.clone(),
            pixels: self.pixels[..n * per].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Same labels, new pixel values.
    pub fn with_pixels(&self, pixels: Vec<f64>) -> Result<Dataset> {
        Dataset::new(self.sample_shape.clone(), pixels, self.labels.clone())
    }
}

/// Whether noise masks are redrawn for every image or frozen for the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScope {
    #[default]
    Image,
    Run,
}

impl std::str::FromStr for NoiseScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(NoiseScope::Image),
            "run" => Ok(NoiseScope::Run),
            other => Err(Error::Invalid(format!("unknown noise scope {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Percent of argmax-correct predictions.
    pub accuracy: f64,
    /// Mean of the top softmax probability, percent.
    pub mean_confidence: f64,
    pub correct: usize,
    pub total: usize,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(
    qnet: &QuantNet,
    data: &Dataset,
    plan: &NoisePlan,
    model: &BitErrorModel,
    seed: u64,
    scope: NoiseScope,
) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty dataset".into()));
    }
    plan.validate(qnet.net())?;
    let per: Vec<(bool, f64)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (x, label) = data.example(i)?;
            let example = match scope {
                NoiseScope::Image => i as u64,
                NoiseScope::Run => 0,
            };
            let logits = qnet.forward(&x, plan, model, NoiseSeed::new(seed, example))?;
            let probs = softmax(&logits.data);
            let top = argmax(&logits.data);
            Ok((top == label, probs[top]))
        })
        .collect::<Result<_>>()?;
    let correct = per.iter().filter(|(ok, _)| *ok).count();
    let conf: f64 = per.iter().map(|(_, c)| c).sum();
    let total = per.len();
    Ok(EvalResult {
        accuracy: 100.0 * correct as f64 / total as f64,
        mean_confidence: 100.0 * conf / total as f64,
        correct,
        total,
    })
}
