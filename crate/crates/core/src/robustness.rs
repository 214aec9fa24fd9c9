//! Layer-wise robustness search: scan each activation bank with surgical
//! noise under an FGSM attack, label layers by the adversarial-accuracy
//! gain, then combine the helpful layers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attacks;
use crate::error::{Error, Result};
use crate::faultmodel::{BitErrorModel, HybridConfig, WORD_BITS};
use crate::nn::{evaluate, Dataset, EvalResult, NetworkDef, NoisePlan, NoiseScope, Params, QuantNet};

/// Improvement (points) above which a layer is strong.
pub const STRONG_GAIN: f64 = 10.0;
/// Improvement (points) above which a layer is at least moderate.
pub const MODERATE_GAIN: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Strong,
    Moderate,
    Weak,
}

impl Label {
    pub fn from_gain(gain: f64) -> Label {
        if gain > STRONG_GAIN {
            Label::Strong
        } else if gain > MODERATE_GAIN {
            Label::Moderate
        } else {
            Label::Weak
        }
    }

    pub fn is_candidate(self) -> bool {
        self != Label::Weak
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigTrial {
    pub config: HybridConfig,
    pub adv_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScanResult {
    pub layer: usize,
    pub best_config: HybridConfig,
    pub best_adv_acc: f64,
    pub baseline_adv_acc: f64,
    pub label: Label,
    /// Every configuration tried, in scan order (n6 = 1..=7).
    pub trials: Vec<ConfigTrial>,
}

impl LayerScanResult {
    pub fn gain(&self) -> f64 {
        self.best_adv_acc - self.baseline_adv_acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationTrial {
    pub layers: Vec<usize>,
    pub adv_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BestConfigStore {
    pub epsilon: f64,
    pub v_dd: f64,
    pub baseline_clean_acc: f64,
    pub baseline_adv_acc: f64,
    pub scans: BTreeMap<usize, LayerScanResult>,
    pub chosen: Vec<(usize, HybridConfig)>,
    pub combined_adv_acc: f64,
    pub clean_acc: f64,
    /// Baseline clean accuracy minus clean accuracy with the chosen noise.
    pub deviation: f64,
    pub combinations: Vec<CombinationTrial>,
}

impl BestConfigStore {
    pub fn candidates(&self) -> Vec<usize> {
        self.scans
            .values()
            .filter(|s| s.label.is_candidate())
            .map(|s| s.layer)
            .collect()
    }

    pub fn plan(&self) -> NoisePlan {
        NoisePlan::activations(self.chosen.iter().copied())
    }
}

/// Clean and FGSM-perturbed evaluation sets plus the fixed noise policy
/// shared by every candidate evaluation.
pub struct SearchContext<'a> {
    qnet: &'a QuantNet,
    model: &'a BitErrorModel,
    clean: Dataset,
    adv: Dataset,
    epsilon: f64,
    seed: u64,
    scope: NoiseScope,
    baseline_clean: EvalResult,
    baseline_adv: EvalResult,
}

impl<'a> SearchContext<'a> {
    /// Adversarial examples are crafted once on the float, noise-free model.
    pub fn new(
        qnet: &'a QuantNet,
        params: &Params,
        data: &Dataset,
        epsilon: f64,
        model: &'a BitErrorModel,
        seed: u64,
        scope: NoiseScope,
    ) -> Result<Self> {
        attacks::AttackSpec::new(epsilon, 0.0, attacks::AttackMode::Fgsm)?;
        let adv = attacks::fgsm_dataset(qnet.net(), params, data, epsilon)?;
        let none = NoisePlan::none();
        let baseline_clean = evaluate(qnet, data, &none, model, seed, scope)?;
        let baseline_adv = evaluate(qnet, &adv, &none, model, seed, scope)?;
        Ok(SearchContext {
            qnet,
            model,
            clean: data.clone(),
            adv,
            epsilon,
            seed,
            scope,
            baseline_clean,
            baseline_adv,
        })
    }

    pub fn net(&self) -> &NetworkDef {
        self.qnet.net()
    }

    pub fn baseline_clean(&self) -> EvalResult {
        self.baseline_clean
    }

    pub fn baseline_adv(&self) -> EvalResult {
        self.baseline_adv
    }

    pub fn adversarial(&self) -> &Dataset {
        &self.adv
    }

    fn adv_acc(&self, plan: &NoisePlan) -> Result<f64> {
        Ok(evaluate(self.qnet, &self.adv, plan, self.model, self.seed, self.scope)?.accuracy)
    }

    /// Tries n6 = 1..=7 on the activation bank of `layer`; ties keep the
    /// configuration with more 8T bits.
    pub fn scan_layer(&self, layer: usize, v_dd: f64) -> Result<LayerScanResult> {
        if layer >= self.net().layers.len() || !self.net().has_activation_mb(layer) {
            return Err(Error::layer(layer, "no activation memory bank to scan"));
        }
        let mut trials = Vec::with_capacity(WORD_BITS as usize - 1);
        for n6 in 1..WORD_BITS {
            let config = HybridConfig::with_n6(n6, v_dd)?;
            let plan = NoisePlan::activations([(layer, config)]);
            trials.push(ConfigTrial {
                config,
                adv_acc: self.adv_acc(&plan)?,
            });
        }
        let mut best = trials[0];
        for t in &trials[1..] {
            if t.adv_acc > best.adv_acc {
                best = *t;
            }
        }
        let baseline = self.baseline_adv.accuracy;
        Ok(LayerScanResult {
            layer,
            best_config: best.config,
            best_adv_acc: best.adv_acc,
            baseline_adv_acc: baseline,
            label: Label::from_gain(best.adv_acc - baseline),
            trials,
        })
    }

    pub fn scan_all(&self, v_dd: f64) -> Result<BestConfigStore> {
        let mut scans = BTreeMap::new();
        for layer in self.net().activation_layers() {
            let r = self.scan_layer(layer, v_dd)?;
            log::info!(
                "layer {layer}: best {} adv {:.2}% ({:+.2}) {:?}",
                r.best_config,
                r.best_adv_acc,
                r.gain(),
                r.label
            );
            scans.insert(layer, r);
        }
        Ok(BestConfigStore {
            epsilon: self.epsilon,
            v_dd,
            baseline_clean_acc: self.baseline_clean.accuracy,
            baseline_adv_acc: self.baseline_adv.accuracy,
            scans,
            combined_adv_acc: self.baseline_adv.accuracy,
            clean_acc: self.baseline_clean.accuracy,
            ..Default::default()
        })
    }

    /// Exhaustive search over subsets of the strong and moderate layers, by
    /// size then lexicographic order; the first best subset is kept.
    pub fn combine(&self, mut store: BestConfigStore, max_subset: usize) -> Result<BestConfigStore> {
        if max_subset == 0 {
            return Err(Error::Invalid("max_subset must be at least 1".into()));
        }
        let candidates = store.candidates();
        store.chosen.clear();
        store.combinations.clear();
        store.combined_adv_acc = self.baseline_adv.accuracy;
        store.clean_acc = self.baseline_clean.accuracy;
        store.deviation = 0.0;
        if candidates.is_empty() {
            log::warn!("no strong or moderate layers; keeping the homogeneous baseline");
            return Ok(store);
        }
        let mut best: Option<CombinationTrial> = None;
        for subset in subsets(&candidates, max_subset) {
            let plan = NoisePlan::activations(subset.iter().map(|l| (*l, store.scans[l].best_config)));
            let trial = CombinationTrial {
                adv_acc: self.adv_acc(&plan)?,
                layers: subset,
            };
            if best.as_ref().is_none_or(|b| trial.adv_acc > b.adv_acc) {
                best = Some(trial.clone());
            }
            store.combinations.push(trial);
        }
        let best = best.expect("at least one subset");
        store.chosen = best
            .layers
            .iter()
            .map(|l| (*l, store.scans[l].best_config))
            .collect();
        store.combined_adv_acc = best.adv_acc;
        let clean = evaluate(self.qnet, &self.clean, &store.plan(), self.model, self.seed, self.scope)?;
        store.clean_acc = clean.accuracy;
        store.deviation = self.baseline_clean.accuracy - clean.accuracy;
        Ok(store)
    }
}

/// Non-empty subsets of `items` with at most `max` elements, ordered by size
/// and then lexicographically by position.
pub fn subsets(items: &[usize], max: usize) -> Vec<Vec<usize>> {
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for k in 1..=max.min(items.len()) {
        rec(items, k, 0, &mut Vec::new(), &mut out);
    }
    out
}

/// One row of the layer-wise configuration table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRow {
    pub model: String,
    pub epsilon: f64,
    pub layers: Vec<usize>,
    pub labels: Vec<String>,
    /// Hybrid configuration per listed layer, `None` for homogeneous.
    pub cells: Vec<Option<HybridConfig>>,
    pub v_dd: f64,
    pub clean_acc: f64,
    pub deviation: f64,
}

impl ConfigRow {
    pub fn cell_text(&self, i: usize) -> String {
        match &self.cells[i] {
            Some(c) => format!("{}/{}", c.n8(), c.n6()),
            None => "H".to_string(),
        }
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["model".to_string(), "epsilon".to_string()];
        cols.extend(self.labels.iter().map(|l| format!("layer_{l}")));
        cols.extend(["v_dd", "clean_acc", "deviation"].map(String::from));
        cols.join(",")
    }

    pub fn csv_line(&self) -> String {
        let mut cols = vec![self.model.clone(), format!("{}", self.epsilon)];
        cols.extend((0..self.cells.len()).map(|i| self.cell_text(i)));
        cols.push(format!("{}", self.v_dd));
        cols.push(format!("{:.2}", self.clean_acc));
        cols.push(format!("{:.2}", self.deviation));
        cols.join(",")
    }

    /// Rows of a table written by [`ConfigRow::csv_header`] /
    /// [`ConfigRow::csv_line`]; `#` lines are skipped.
    pub fn parse_csv(text: &str, net: &NetworkDef) -> Result<Vec<ConfigRow>> {
        let bad = |msg: String| Error::Config(format!("config table: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("missing header".into()))?.split(',').collect();
        let n = header.len();
        if n < 5 || header[..2] != ["model", "epsilon"] || header[n - 3..] != ["v_dd", "clean_acc", "deviation"] {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let by_label: BTreeMap<String, usize> = net
            .activation_layers()
            .into_iter()
            .map(|l| (net.layer_label(l), l))
            .collect();
        let mut layers = Vec::new();
        let mut labels = Vec::new();
        for col in &header[2..n - 3] {
            let label = col.strip_prefix("layer_").ok_or_else(|| bad(format!("column {col:?}")))?;
            let l = by_label
                .get(label)
                .ok_or_else(|| bad(format!("layer {label} has no activation bank in this network")))?;
            layers.push(*l);
            labels.push(label.to_string());
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("not a number: {s:?}")));
        lines
            .map(|line| {
                let cols: Vec<&str> = line.split(',').collect();
                if cols.len() != n {
                    return Err(bad(format!("row has {} columns, header {n}", cols.len())));
                }
                let v_dd = num(cols[n - 3])?;
                let cells = cols[2..n - 3]
                    .iter()
                    .map(|c| match c.trim() {
                        "H" => Ok(None),
                        r => HybridConfig::parse_ratio(r, v_dd).map(Some).map_err(|e| bad(e.to_string())),
                    })
                    .collect::<Result<_>>()?;
                Ok(ConfigRow {
                    model: cols[0].to_string(),
                    epsilon: num(cols[1])?,
                    layers: layers.clone(),
                    labels: labels.clone(),
                    cells,
                    v_dd,
                    clean_acc: num(cols[n - 2])?,
                    deviation: num(cols[n - 1])?,
                })
            })
            .collect()
    }

    /// Compact form such as `{1:3/5, 2(P):2/6}`.
    pub fn summary(&self) -> String {
        let parts: Vec<String> = (0..self.cells.len())
            .filter(|&i| self.cells[i].is_some())
            .map(|i| format!("{}:{}", self.labels[i], self.cell_text(i)))
            .collect();
        format!("{{{}}}", parts.join(", "))
    }
}

/// Every activation layer of `net`, chosen ones with their ratio, the rest H.
pub fn emit_config_table(store: &BestConfigStore, net: &NetworkDef, model: &str) -> ConfigRow {
    let layers = net.activation_layers();
    let chosen: BTreeMap<usize, HybridConfig> = store.chosen.iter().copied().collect();
    ConfigRow {
        model: model.to_string(),
        epsilon: store.epsilon,
        labels: layers.iter().map(|&l| net.layer_label(l)).collect(),
        cells: layers.iter().map(|l| chosen.get(l).copied()).collect(),
        layers,
        v_dd: store.v_dd,
        clean_acc: store.clean_acc,
        deviation: store.deviation,
    }
}
