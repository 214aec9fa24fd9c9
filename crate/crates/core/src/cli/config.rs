//! Experiment configuration (TOML).
//!
//! Relative paths are resolved against the directory holding the config
//! file. The resolved form is what reports embed and hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::faultmodel::{self, BitErrorModel, UNIT_SCALE};
use crate::hwcost::CellCostModel;
use crate::nn::NoiseScope;
use crate::weight_attack::AttackMode;

fn default_v_dd() -> f64 {
    0.68
}

fn default_epsilons() -> Vec<f64> {
    vec![0.05]
}

fn default_mus() -> Vec<f64> {
    vec![0.01, 0.02, 0.04, 0.06, 0.1]
}

fn default_eval_subset() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub max_subset: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection { max_subset: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    /// Noise resamples per section during selection.
    pub resamples: usize,
    /// Examples (from the head of the dataset) used for the gradient sign.
    pub batch: usize,
    /// Layer to attack; defaults to the second attackable layer.
    pub layer: Option<usize>,
    pub mode: AttackMode,
    pub fractions: Vec<f64>,
    pub exclude_shortcuts: bool,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            resamples: 64,
            batch: 128,
            layer: None,
            mode: AttackMode::Ideal,
            fractions: vec![0.25, 0.5, 0.75, 1.0],
            exclude_shortcuts: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CharacterizeSection {
    pub voltages: Vec<f64>,
    pub n6: Vec<u8>,
    /// Random words sampled per grid point for the empirical column.
    pub words: usize,
}

impl Default for CharacterizeSection {
    fn default() -> Self {
        CharacterizeSection {
            voltages: vec![0.65, 0.68, 0.72],
            n6: (1..=7).collect(),
            words: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub model: PathBuf,
    pub images: PathBuf,
    pub labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ber_table: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_targets: Option<PathBuf>,
    #[serde(default = "default_v_dd")]
    pub v_dd: f64,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_mus")]
    pub mus: Vec<f64>,
    #[serde(default = "default_eval_subset")]
    pub eval_subset: usize,
    #[serde(default)]
    pub noise_scope: NoiseScope,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub characterize: CharacterizeSection,
    #[serde(default)]
    pub cost: CellCostModel,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut c: ExperimentConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        for p in c.paths_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if let Ok(abs) = std::fs::canonicalize(&*p) {
                *p = abs;
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        let mut v = vec![&mut self.model, &mut self.images, &mut self.labels];
        v.extend(self.ber_table.as_mut());
        v.extend(self.calibration_targets.as_mut());
        v
    }

    pub fn input_paths(&self) -> Vec<&Path> {
        let mut v = vec![self.model.as_path(), self.images.as_path(), self.labels.as_path()];
        v.extend(self.ber_table.as_deref());
        v.extend(self.calibration_targets.as_deref());
        v
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(config_err("seeds must list at least one seed"));
        }
        for p in self.input_paths() {
            if !p.is_file() {
                return Err(config_err(format!("referenced file {} does not exist", p.display())));
            }
        }
        if self.ber_table.is_some() && self.calibration_targets.is_some() {
            return Err(config_err("give either ber_table or calibration_targets, not both"));
        }
        if self.epsilons.is_empty() || self.mus.is_empty() {
            return Err(config_err("epsilons and mus must be non-empty"));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(0.0..=0.3).contains(*e)) {
            return Err(config_err(format!("epsilon {e} outside [0, 0.3]")));
        }
        if let Some(m) = self.mus.iter().find(|m| !(**m >= 0.0 && m.is_finite())) {
            return Err(config_err(format!("mu {m} must be non-negative")));
        }
        if !(self.v_dd > 0.0 && self.v_dd.is_finite()) {
            return Err(config_err(format!("v_dd {} must be positive", self.v_dd)));
        }
        if self.eval_subset == 0 {
            return Err(config_err("eval_subset must be positive"));
        }
        if self.search.max_subset == 0 {
            return Err(config_err("search.max_subset must be positive"));
        }
        let a = &self.attack;
        if a.resamples == 0 || a.batch == 0 {
            return Err(config_err("attack.resamples and attack.batch must be positive"));
        }
        if a.fractions.is_empty() || a.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(config_err("attack.fractions must be non-empty and within (0, 1]"));
        }
        let ch = &self.characterize;
        if ch.voltages.is_empty() || ch.n6.is_empty() || ch.words == 0 {
            return Err(config_err("characterize needs voltages, n6 values and a positive word count"));
        }
        if let Some(n) = ch.n6.iter().find(|n| **n > 8) {
            return Err(config_err(format!("characterize.n6 value {n} exceeds 8")));
        }
        self.cost.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(())
    }

    /// Canonical JSON of the resolved configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// BER table from the file, from a fit to the calibration targets, or the
    /// built-in reference table.
    pub fn bit_error_model(&self) -> Result<BitErrorModel> {
        if let Some(p) = &self.ber_table {
            return BitErrorModel::load(p);
        }
        if let Some(p) = &self.calibration_targets {
            let fit = faultmodel::calibrate(&faultmodel::load_targets(p)?, UNIT_SCALE)?;
            return Ok(fit.model);
        }
        Ok(BitErrorModel::reference().clone())
    }

    pub fn calibration_targets(&self) -> Result<Vec<faultmodel::CalibrationTarget>> {
        match &self.calibration_targets {
            Some(p) => faultmodel::load_targets(p),
            None => Ok(faultmodel::reference_anchors()),
        }
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
