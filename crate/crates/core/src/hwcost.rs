//! Dynamic access energy and cell area of activation memories built from
//! 6T, 8T or hybrid words.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faultmodel::WORD_BITS;
use crate::robustness::ConfigRow;

/// Cell-level cost constants. Energy per access scales with `(V / v_nominal)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellCostModel {
    /// Energy of one 6T bit access at `v_nominal`.
    pub e6_nominal: f64,
    /// 8T / 6T access energy at equal voltage.
    pub k8: f64,
    pub area6: f64,
    pub area_ratio_8t: f64,
    pub v_nominal: f64,
    pub v_scaled: f64,
}

impl Default for CellCostModel {
    fn default() -> Self {
        let v_nominal: f64 = 0.9;
        let v_scaled: f64 = 0.68;
        CellCostModel {
            e6_nominal: 1.0,
            // an all-8T bank at 0.68 V costs 0.6455 of an all-6T bank at 0.9 V
            k8: 0.6455 / (v_scaled / v_nominal).powi(2),
            area6: 1.0,
            area_ratio_8t: 1.3,
            v_nominal,
            v_scaled,
        }
    }
}

impl CellCostModel {
    pub fn validate(&self) -> Result<()> {
        let all = [self.e6_nominal, self.k8, self.area6, self.area_ratio_8t, self.v_nominal, self.v_scaled];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Invalid("cost constants must be positive".into()));
        }
        if self.area_ratio_8t <= 1.0 {
            return Err(Error::Invalid(format!(
                "8T area ratio {} must exceed 1",
                self.area_ratio_8t
            )));
        }
        Ok(())
    }

    fn voltage_factor(&self, v: f64) -> f64 {
        (v / self.v_nominal).powi(2)
    }

    /// Energy of one word access with `n8` 8T bits on a rail at `v`.
    pub fn word_energy(&self, n8: u8, v: f64) -> f64 {
        let n6 = f64::from(WORD_BITS - n8);
        self.e6_nominal * self.voltage_factor(v) * (f64::from(n8) * self.k8 + n6)
    }

    pub fn word_area(&self, n8: u8) -> f64 {
        let n6 = f64::from(WORD_BITS - n8);
        self.area6 * (f64::from(n8) * self.area_ratio_8t + n6)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    EnergyEfficient,
    AreaEfficient,
}

impl std::str::FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "energy" | "energy_efficient" => Ok(Paradigm::EnergyEfficient),
            "area" | "area_efficient" => Ok(Paradigm::AreaEfficient),
            other => Err(Error::Invalid(format!("unknown paradigm {other:?}"))),
        }
    }
}

/// Cell composition and rail of one layer's memory bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerMemory {
    pub layer: usize,
    pub n8: u8,
    pub v_dd: f64,
    pub noisy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryDesign {
    pub paradigm: Option<Paradigm>,
    pub layers: Vec<LayerMemory>,
}

impl MemoryDesign {
    /// Every bank built from one cell type on one rail.
    pub fn homogeneous(layers: &[usize], n8: u8, v_dd: f64) -> Self {
        MemoryDesign {
            paradigm: None,
            layers: layers
                .iter()
                .map(|&layer| LayerMemory { layer, n8, v_dd, noisy: false })
                .collect(),
        }
    }

    /// Distinct supply voltages, ascending.
    pub fn rails(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.layers.iter().map(|l| l.v_dd).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    pub fn energy(&self, cost: &CellCostModel, words: &[usize]) -> Result<f64> {
        self.check(words)?;
        Ok(self
            .layers
            .iter()
            .zip(words)
            .map(|(l, &n)| n as f64 * cost.word_energy(l.n8, l.v_dd))
            .sum())
    }

    pub fn area(&self, cost: &CellCostModel, words: &[usize]) -> Result<f64> {
        self.check(words)?;
        Ok(self
            .layers
            .iter()
            .zip(words)
            .map(|(l, &n)| n as f64 * cost.word_area(l.n8))
            .sum())
    }

    fn check(&self, words: &[usize]) -> Result<()> {
        if words.len() != self.layers.len() {
            return Err(Error::shape(format!(
                "{} layer sizes for a design of {} layers",
                words.len(),
                self.layers.len()
            )));
        }
        Ok(())
    }
}

fn percent_diff(a: f64, b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::Invalid("reference design has zero cost".into()));
    }
    Ok(100.0 * (a - b) / b)
}

/// Signed percent by which design `a` uses more energy than `b`.
pub fn energy_compare(a: &MemoryDesign, b: &MemoryDesign, cost: &CellCostModel, words: &[usize]) -> Result<f64> {
    percent_diff(a.energy(cost, words)?, b.energy(cost, words)?)
}

/// Signed percent by which design `a` occupies more area than `b`.
pub fn area_compare(a: &MemoryDesign, b: &MemoryDesign, cost: &CellCostModel, words: &[usize]) -> Result<f64> {
    percent_diff(a.area(cost, words)?, b.area(cost, words)?)
}

/// Noisy layers take their hybrid configuration; the others are 8T on the
/// scaled rail (energy) or 6T on the nominal rail (area).
pub fn paradigm_config(row: &ConfigRow, paradigm: Paradigm, cost: &CellCostModel) -> MemoryDesign {
    let layers = row
        .layers
        .iter()
        .zip(&row.cells)
        .map(|(&layer, cell)| match (cell, paradigm) {
            (Some(c), _) => LayerMemory { layer, n8: c.n8(), v_dd: c.v_dd(), noisy: true },
            (None, Paradigm::EnergyEfficient) => LayerMemory { layer, n8: WORD_BITS, v_dd: cost.v_scaled, noisy: false },
            (None, Paradigm::AreaEfficient) => LayerMemory { layer, n8: 0, v_dd: cost.v_nominal, noisy: false },
        })
        .collect();
    MemoryDesign { paradigm: Some(paradigm), layers }
}
