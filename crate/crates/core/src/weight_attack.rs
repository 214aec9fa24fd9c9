//! Surgical weight attack: pick the weight section whose sampled hardware
//! noise direction best agrees with the loss gradient, then perturb only
//! that section.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{self, sign};
use crate::error::{Error, Result};
use crate::faultmodel::{self, reference_anchors, BitErrorModel, CalibrationTarget, HybridConfig, UNIT_SCALE};
use crate::nn::{self, evaluate, Dataset, EvalResult, NetworkDef, NoisePlan, NoiseScope, Params, QuantNet};
use crate::quant::Signedness;
use crate::rng;

/// Slice `index` of a weight tensor along its first (output) dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionRef {
    pub layer: usize,
    pub index: usize,
    pub shape: Vec<usize>,
}

impl SectionRef {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        let n = self.len();
        self.index * n..(self.index + 1) * n
    }
}

/// Number of sections and the shape of each for a weight layer.
pub fn sections_of(net: &NetworkDef, layer: usize) -> Result<(usize, Vec<usize>)> {
    let l = net
        .layers
        .get(layer)
        .ok_or_else(|| Error::layer(layer, "no such layer"))?;
    let (w, _) = l
        .param_shapes()
        .filter(|_| l.has_parameter_mb())
        .ok_or_else(|| Error::layer(layer, format!("{} layer has no weights", l.name())))?;
    Ok((w[0], w[1..].to_vec()))
}

/// Weight layers that may be attacked; residual shortcut projections are
/// skipped when `exclude_shortcuts` is set.
pub fn attackable_layers(net: &NetworkDef, exclude_shortcuts: bool) -> Vec<usize> {
    net.weight_layers()
        .into_iter()
        .filter(|&l| !(exclude_shortcuts && net.layers[l].is_residual_shortcut()))
        .collect()
}

fn match_counts(direction: &[f64], grad_sign: &[f64]) -> (usize, usize) {
    let mut hits = 0;
    let mut nonzero = 0;
    for (&d, &g) in direction.iter().zip(grad_sign) {
        if d != 0.0 {
            nonzero += 1;
            if d == g {
                hits += 1;
            }
        }
    }
    (hits, nonzero)
}

fn percent(hits: usize, nonzero: usize) -> f64 {
    if nonzero == 0 {
        0.0
    } else {
        100.0 * hits as f64 / nonzero as f64
    }
}

/// Percent of nonzero entries of `direction` that equal `grad_sign`.
pub fn match_fraction(direction: &[f64], grad_sign: &[f64]) -> Result<f64> {
    if direction.len() != grad_sign.len() {
        return Err(Error::shape(format!(
            "direction has {} entries, gradient sign {}",
            direction.len(),
            grad_sign.len()
        )));
    }
    let (hits, nonzero) = match_counts(direction, grad_sign);
    if nonzero == 0 {
        log::warn!("noise direction is all zero; match is 0%");
    }
    Ok(percent(hits, nonzero))
}

/// Summed parameter gradient of `layer` over the whole batch.
pub fn weight_grad(net: &NetworkDef, params: &Params, layer: usize, batch: &Dataset) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut g = nn::batch_param_gradients(net, params, batch, &idx)?;
    g.layers[layer]
        .weight
        .take()
        .map(|t| t.data)
        .ok_or_else(|| Error::layer(layer, "layer has no weights"))
}

pub fn weight_grad_sign(net: &NetworkDef, params: &Params, layer: usize, batch: &Dataset) -> Result<Vec<f64>> {
    Ok(weight_grad(net, params, layer, batch)?.into_iter().map(sign).collect())
}

/// Gradient magnitude on the words where the noise agrees with the gradient.
fn matched_mass(direction: &[f64], grad: &[f64]) -> f64 {
    direction
        .iter()
        .zip(grad)
        .filter(|(&d, &g)| d != 0.0 && d == sign(g))
        .map(|(_, g)| g.abs())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectOptions {
    /// Noise resamples scored per section.
    pub resamples: usize,
    pub exclude_shortcuts: bool,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions {
            resamples: 64,
            exclude_shortcuts: true,
        }
    }
}

/// Outcome of [`select_section`]; the mask is frozen for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub section: SectionRef,
    pub config: HybridConfig,
    pub resample: usize,
    pub noise_seed: u64,
    pub match_percent: f64,
    pub flipped: usize,
    /// Batch-gradient magnitude summed over the matching flipped words.
    pub gradient_mass: f64,
    pub masks: Vec<u8>,
    pub direction: Vec<f64>,
    pub grad_sign: Vec<f64>,
}

fn section_noise(
    codes: &[u8],
    scale: f64,
    config: &HybridConfig,
    model: &BitErrorModel,
    seed: u64,
) -> Result<(Vec<u8>, Vec<f64>)> {
    let masks = faultmodel::sample_masks(codes.len(), config, model, seed)?;
    let deltas = faultmodel::mask_deltas(codes, &masks, Signedness::Signed, scale);
    Ok((masks, attacks::noise_direction(&deltas)))
}

/// Scores every (section, resample) pair and returns the best one. Ranking
/// is by match percent, then by gradient mass on the matching flips, then by
/// number of flipped words, then by lowest (section, resample).
#[allow(clippy::too_many_arguments)]
pub fn select_section(
    qnet: &QuantNet,
    params: &Params,
    layer: usize,
    config: &HybridConfig,
    model: &BitErrorModel,
    batch: &Dataset,
    opts: &SelectOptions,
    seed: u64,
) -> Result<Selection> {
    let net = qnet.net();
    let (count, shape) = sections_of(net, layer)?;
    if opts.exclude_shortcuts && net.layers[layer].is_residual_shortcut() {
        return Err(Error::layer(layer, "residual shortcut layers are not attacked"));
    }
    if opts.resamples == 0 {
        return Err(Error::Invalid("at least one noise resample is required".into()));
    }
    let qt = qnet
        .weight_codes(layer)
        .ok_or_else(|| Error::layer(layer, "layer has no parameter bank"))?;
    let grad = weight_grad(net, params, layer, batch)?;
    let grad_sign: Vec<f64> = grad.iter().map(|&g| sign(g)).collect();
    let r = opts.resamples;
    let scores: Vec<(usize, usize, f64)> = (0..count * r)
        .into_par_iter()
        .map(|k| {
            let sec = SectionRef { layer, index: k / r, shape: shape.clone() };
            let s = rng::derive_seed(seed, &[layer as u64, sec.index as u64, (k % r) as u64]);
            let (_, dir) = section_noise(&qt.codes[sec.range()], qt.scheme.scale, config, model, s)?;
            let (hits, nz) = match_counts(&dir, &grad_sign[sec.range()]);
            Ok((hits, nz, matched_mass(&dir, &grad[sec.range()])))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (k, &(hits, nz, mass)) in scores.iter().enumerate() {
        let (bh, bn, bm) = scores[best];
        // hits/nz > bh/bn, compared exactly
        let better = hits * bn > bh * nz || (nz > 0 && bn == 0);
        let tie = hits * bn == bh * nz && (nz > 0) == (bn > 0);
        if better || (tie && (mass > bm || (mass == bm && nz > bn))) {
            best = k;
        }
    }
    let section = SectionRef { layer, index: best / r, shape };
    let resample = best % r;
    let noise_seed = rng::derive_seed(seed, &[layer as u64, section.index as u64, resample as u64]);
    let (masks, direction) = section_noise(&qt.codes[section.range()], qt.scheme.scale, config, model, noise_seed)?;
    let gradient_mass = matched_mass(&direction, &grad[section.range()]);
    let grad_sign = grad_sign[section.range()].to_vec();
    let (hits, nonzero) = match_counts(&direction, &grad_sign);
    Ok(Selection {
        section,
        config: *config,
        resample,
        noise_seed,
        match_percent: percent(hits, nonzero),
        flipped: nonzero,
        gradient_mass,
        masks,
        direction,
        grad_sign,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    /// `W + mu * D` with `mu` in full-scale units.
    Ideal,
    /// Replays the frozen flip masks into the stored codes.
    Sampled,
}

impl std::str::FromStr for AttackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(AttackMode::Ideal),
            "sampled" => Ok(AttackMode::Sampled),
            other => Err(Error::Invalid(format!("unknown attack mode {other:?}"))),
        }
    }
}

/// Where the ideal-mode direction comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Direction {
    /// Sign of the frozen hardware noise.
    Noise,
    /// Sign of the loss gradient on every element.
    Gradient,
    /// Uniform random signs on every element.
    Random { seed: u64 },
}

impl Direction {
    fn vector(&self, sel: &Selection) -> Vec<f64> {
        match *self {
            Direction::Noise => sel.direction.clone(),
            Direction::Gradient => sel.grad_sign.clone(),
            Direction::Random { seed } => {
                let mut r = rng::stream(seed, &[sel.section.layer as u64, sel.section.index as u64]);
                (0..sel.section.len())
                    .map(|_| if r.gen_bool(0.5) { 1.0 } else { -1.0 })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionAttackReport {
    pub section: SectionRef,
    pub match_percent: f64,
    pub mu: f64,
    pub config: HybridConfig,
    pub config_name: String,
    pub mode: AttackMode,
    pub direction: Direction,
    pub pre: EvalResult,
    pub post: EvalResult,
    /// Fraction of the section attacked, when smaller than the whole.
    pub subsection_fraction: Option<f64>,
    pub attacked_elements: usize,
}

impl SectionAttackReport {
    pub fn accuracy_drop(&self) -> f64 {
        self.pre.accuracy - self.post.accuracy
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSettings {
    pub mu: f64,
    pub mode: AttackMode,
    pub direction: Direction,
}

/// Copy of `qnet` with the first `elements` words of the selected section
/// perturbed.
pub fn perturbed_network(qnet: &QuantNet, sel: &Selection, how: &AttackSettings, elements: usize) -> Result<QuantNet> {
    let layer = sel.section.layer;
    let range = sel.section.range();
    let elements = elements.min(range.len());
    let mut out = qnet.clone();
    match how.mode {
        AttackMode::Sampled => {
            if how.direction != Direction::Noise {
                return Err(Error::Invalid("sampled attacks replay the noise direction only".into()));
            }
            let mut codes = qnet.weight_codes(layer).expect("selected layer has codes").codes.clone();
            for (c, m) in codes[range.clone()].iter_mut().zip(&sel.masks).take(elements) {
                *c ^= m;
            }
            out.set_weight_codes(layer, codes)?;
        }
        AttackMode::Ideal => {
            if !(how.mu >= 0.0 && how.mu.is_finite()) {
                return Err(Error::Invalid(format!("mu {} must be non-negative", how.mu)));
            }
            let scale = qnet.weight_codes(layer).expect("selected layer has codes").scheme.scale;
            let step = how.mu * scale / UNIT_SCALE;
            let mut w = qnet.weights(layer).expect("selected layer has weights").to_vec();
            let dir = how.direction.vector(sel);
            let section = attacks::weight_attack_sni(&w[range.clone()][..elements], step, &dir[..elements])?;
            w[range.start..range.start + elements].copy_from_slice(&section);
            out.set_weights(layer, w)?;
        }
    }
    Ok(out)
}

fn elements_for(fraction: f64, len: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Invalid(format!("subsection fraction {fraction} outside (0, 1]")));
    }
    Ok(((fraction * len as f64 - 1e-9).ceil() as usize).clamp(1, len))
}

fn clean_eval(qnet: &QuantNet, data: &Dataset) -> Result<EvalResult> {
    evaluate(qnet, data, &NoisePlan::none(), BitErrorModel::reference(), 0, NoiseScope::Image)
}

fn report(
    qnet: &QuantNet,
    sel: &Selection,
    how: &AttackSettings,
    data: &Dataset,
    fraction: Option<f64>,
    pre: EvalResult,
) -> Result<SectionAttackReport> {
    let elements = match fraction {
        Some(f) => elements_for(f, sel.section.len())?,
        None => sel.section.len(),
    };
    let attacked = perturbed_network(qnet, sel, how, elements)?;
    Ok(SectionAttackReport {
        section: sel.section.clone(),
        match_percent: sel.match_percent,
        mu: how.mu,
        config: sel.config,
        config_name: sel.config.to_string(),
        mode: how.mode,
        direction: how.direction,
        pre,
        post: clean_eval(&attacked, data)?,
        subsection_fraction: fraction,
        attacked_elements: elements,
    })
}

/// Perturbs the selected section and measures accuracy before and after.
pub fn attack_section(qnet: &QuantNet, sel: &Selection, how: &AttackSettings, data: &Dataset) -> Result<SectionAttackReport> {
    let pre = clean_eval(qnet, data)?;
    report(qnet, sel, how, data, None, pre)
}

/// Attacks the first `ceil(f * len)` words of the section for each `f`.
pub fn subsection_sweep(
    qnet: &QuantNet,
    sel: &Selection,
    fractions: &[f64],
    how: &AttackSettings,
    data: &Dataset,
) -> Result<Vec<SectionAttackReport>> {
    for &f in fractions {
        elements_for(f, sel.section.len())?;
    }
    let pre = clean_eval(qnet, data)?;
    fractions
        .iter()
        .map(|&f| report(qnet, sel, how, data, Some(f), pre))
        .collect()
}

/// Hybrid configuration paired with `mu` in `targets`.
pub fn config_for_mu(mu: f64, targets: &[CalibrationTarget]) -> Result<HybridConfig> {
    targets
        .iter()
        .find(|t| (t.mu - mu).abs() <= 1e-9 * mu.abs().max(1e-12))
        .map(|t| t.config)
        .ok_or_else(|| {
            let known: Vec<String> = targets.iter().map(|t| t.mu.to_string()).collect();
            Error::Invalid(format!("no configuration paired with mu {mu}; known: {}", known.join(", ")))
        })
}

/// Default pairing of attack magnitudes and configurations.
pub fn default_config_for_mu(mu: f64) -> Result<HybridConfig> {
    config_for_mu(mu, &reference_anchors())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCell {
    pub layer: usize,
    pub label: String,
    pub mu: f64,
    pub config: Option<HybridConfig>,
    pub match_percent: Option<f64>,
    pub accuracy: f64,
    pub mean_confidence: f64,
}

/// Accuracy after a noise-direction attack for every attackable layer and
/// every `mu`; `mu = 0` reports the clean model.
#[allow(clippy::too_many_arguments)]
pub fn layer_sensitivity_report(
    qnet: &QuantNet,
    params: &Params,
    mus: &[f64],
    targets: &[CalibrationTarget],
    model: &BitErrorModel,
    batch: &Dataset,
    data: &Dataset,
    opts: &SelectOptions,
    seed: u64,
) -> Result<Vec<SensitivityCell>> {
    let net = qnet.net();
    let clean = clean_eval(qnet, data)?;
    let mut cells = Vec::new();
    for layer in attackable_layers(net, opts.exclude_shortcuts) {
        for &mu in mus {
            let mut cell = SensitivityCell {
                layer,
                label: net.layer_label(layer),
                mu,
                config: None,
                match_percent: None,
                accuracy: clean.accuracy,
                mean_confidence: clean.mean_confidence,
            };
            if mu > 0.0 {
                let config = config_for_mu(mu, targets)?;
                let sel = select_section(qnet, params, layer, &config, model, batch, opts, seed)?;
                let how = AttackSettings { mu, mode: AttackMode::Ideal, direction: Direction::Noise };
                let r = report(qnet, &sel, &how, data, None, clean)?;
                cell.config = Some(config);
                cell.match_percent = Some(sel.match_percent);
                cell.accuracy = r.post.accuracy;
                cell.mean_confidence = r.post.mean_confidence;
            }
            cells.push(cell);
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, QuantSchemes};
    use proptest::prelude::{any, prop_assert, proptest};

    #[test]
    fn match_fraction_examples() {
        let g = [1.0, -1.0, 1.0, -1.0];
        assert_eq!(match_fraction(&g, &g).unwrap(), 100.0);
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        assert_eq!(match_fraction(&neg, &g).unwrap(), 0.0);
        assert_eq!(match_fraction(&[1.0, 1.0, 0.0, 0.0], &g).unwrap(), 50.0);
        assert_eq!(match_fraction(&[0.0; 4], &g).unwrap(), 0.0);
        assert!(match_fraction(&[1.0], &g).is_err());
    }

    #[test]
    fn subsection_sizes() {
        assert_eq!(elements_for(1.0, 54).unwrap(), 54);
        assert_eq!(elements_for(0.25, 54).unwrap(), 14);
        assert_eq!(elements_for(0.75, 4).unwrap(), 3);
        assert_eq!(elements_for(1e-6, 4).unwrap(), 1);
        assert!(elements_for(0.0, 4).is_err());
        assert!(elements_for(1.5, 4).is_err());
    }

    #[test]
    fn mu_pairing() {
        assert_eq!(default_config_for_mu(0.01).unwrap().to_string(), "3-5 @ 0.68V");
        assert_eq!(default_config_for_mu(0.1).unwrap().ratio(), "2-6");
        assert!(default_config_for_mu(0.03).is_err());
    }

    pub(crate) fn fixture() -> (QuantNet, Params, Dataset) {
        let net = NetworkDef {
            input_shape: vec![1, 4, 4],
            layers: vec![
                Layer::Conv2d { out_ch: 3, in_ch: 1, kernel: 3, stride: 1, pad: 1 },
                Layer::Relu,
                Layer::AvgPool { kernel: 4, stride: 4 },
                Layer::Fc { inputs: 3, outputs: 2 },
            ],
            classes: 2,
        };
        let mut p = Params::zeros(&net);
        let mut r = rng::stream(5, &[]);
        for lp in &mut p.layers {
            if let Some(w) = lp.weight.as_mut() {
                for v in &mut w.data {
                    *v = r.gen_range(-1.0..1.0);
                }
            }
        }
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for i in 0..24 {
            for _ in 0..16 {
                pixels.push(r.gen_range(0.0..1.0));
            }
            labels.push(i % 2);
        }
        let data = Dataset::new(vec![1, 4, 4], pixels, labels).unwrap();
        let s = QuantSchemes::calibrate(&net, &p, &data).unwrap();
        (QuantNet::new(&net, &p, &s).unwrap(), p, data)
    }

    #[test]
    fn selection_is_reproducible_and_consistent() {
        let (q, p, data) = fixture();
        let model = BitErrorModel::constant(0.3).unwrap();
        let cfg = HybridConfig::new(2, 0.68).unwrap();
        let opts = SelectOptions { resamples: 8, exclude_shortcuts: true };
        let a = select_section(&q, &p, 0, &cfg, &model, &data, &opts, 3).unwrap();
        let b = select_section(&q, &p, 0, &cfg, &model, &data, &opts, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.section.shape, vec![1, 3, 3]);
        assert_eq!(match_fraction(&a.direction, &a.grad_sign).unwrap(), a.match_percent);
        assert!(select_section(&q, &p, 1, &cfg, &model, &data, &opts, 3).is_err());
    }

    #[test]
    fn ties_on_match_go_to_larger_gradient_mass() {
        let (q, p, data) = fixture();
        let model = BitErrorModel::constant(0.05).unwrap();
        let cfg = HybridConfig::new(4, 0.68).unwrap();
        let opts = SelectOptions { resamples: 32, exclude_shortcuts: true };
        let sel = select_section(&q, &p, 0, &cfg, &model, &data, &opts, 9).unwrap();
        let grad = weight_grad(q.net(), &p, 0, &data).unwrap();
        let qt = q.weight_codes(0).unwrap();
        for i in 0..3 {
            for r in 0..opts.resamples {
                let sec = SectionRef { layer: 0, index: i, shape: sel.section.shape.clone() };
                let s = rng::derive_seed(9, &[0, i as u64, r as u64]);
                let (_, dir) = section_noise(&qt.codes[sec.range()], qt.scheme.scale, &cfg, &model, s).unwrap();
                let (hits, nz) = match_counts(&dir, &sign_of(&grad[sec.range()]));
                let pct = percent(hits, nz);
                assert!(pct <= sel.match_percent);
                if pct == sel.match_percent && nz > 0 {
                    assert!(matched_mass(&dir, &grad[sec.range()]) <= sel.gradient_mass);
                }
            }
        }
        assert!(sel.gradient_mass > 0.0);
    }

    fn sign_of(g: &[f64]) -> Vec<f64> {
        g.iter().map(|&v| sign(v)).collect()
    }

    #[test]
    fn single_section_single_resample() {
        let net = NetworkDef {
            input_shape: vec![4],
            layers: vec![Layer::Fc { inputs: 4, outputs: 1 }, Layer::Relu, Layer::Fc { inputs: 1, outputs: 2 }],
            classes: 2,
        };
        let mut p = Params::zeros(&net);
        p.layers[0].weight.as_mut().unwrap().data = vec![0.5, -0.25, 0.75, 0.1];
        p.layers[2].weight.as_mut().unwrap().data = vec![1.0, -1.0];
        let data = Dataset::new(vec![4], vec![0.2, 0.4, 0.6, 0.8], vec![1]).unwrap();
        let s = QuantSchemes::calibrate(&net, &p, &data).unwrap();
        let q = QuantNet::new(&net, &p, &s).unwrap();
        let model = BitErrorModel::constant(0.5).unwrap();
        let cfg = HybridConfig::new(0, 0.68).unwrap();
        let opts = SelectOptions { resamples: 1, exclude_shortcuts: true };
        let sel = select_section(&q, &p, 0, &cfg, &model, &data, &opts, 1).unwrap();
        assert_eq!(sel.section.index, 0);
        assert_eq!(sel.resample, 0);
        let expect = match_fraction(&sel.direction, &sel.grad_sign).unwrap();
        assert_eq!(sel.match_percent, expect);
    }

    #[test]
    fn many_resamples_reach_full_match_on_small_sections() {
        // each resample matches all 4 words with probability about 1/16; the
        // largest weight is negative since +127 can only move down
        let net = NetworkDef {
            input_shape: vec![4],
            layers: vec![Layer::Fc { inputs: 4, outputs: 1 }, Layer::Relu, Layer::Fc { inputs: 1, outputs: 2 }],
            classes: 2,
        };
        let mut p = Params::zeros(&net);
        p.layers[0].weight.as_mut().unwrap().data = vec![0.5, -0.25, -0.75, 0.1];
        p.layers[2].weight.as_mut().unwrap().data = vec![1.0, -1.0];
        let data = Dataset::new(vec![4], vec![0.8, 0.1, 0.1, 0.6], vec![1]).unwrap();
        let s = QuantSchemes::calibrate(&net, &p, &data).unwrap();
        let q = QuantNet::new(&net, &p, &s).unwrap();
        let model = BitErrorModel::constant(0.5).unwrap();
        let cfg = HybridConfig::new(0, 0.68).unwrap();
        let opts = SelectOptions { resamples: 256, exclude_shortcuts: true };
        let sel = select_section(&q, &p, 0, &cfg, &model, &data, &opts, 2).unwrap();
        assert_eq!(sel.match_percent, 100.0);
        assert_eq!(sel.flipped, 4);
    }

    #[test]
    fn attacks_touch_only_the_section() {
        let (q, p, data) = fixture();
        let model = BitErrorModel::constant(0.3).unwrap();
        let cfg = HybridConfig::new(2, 0.68).unwrap();
        let opts = SelectOptions { resamples: 4, exclude_shortcuts: true };
        let sel = select_section(&q, &p, 0, &cfg, &model, &data, &opts, 8).unwrap();
        for how in [
            AttackSettings { mu: 0.1, mode: AttackMode::Ideal, direction: Direction::Noise },
            AttackSettings { mu: 0.1, mode: AttackMode::Ideal, direction: Direction::Gradient },
            AttackSettings { mu: 0.1, mode: AttackMode::Ideal, direction: Direction::Random { seed: 4 } },
            AttackSettings { mu: 0.1, mode: AttackMode::Sampled, direction: Direction::Noise },
        ] {
            let a = perturbed_network(&q, &sel, &how, sel.section.len()).unwrap();
            for l in q.net().weight_layers() {
                let before = q.weights(l).unwrap();
                let after = a.weights(l).unwrap();
                for (k, (x, y)) in before.iter().zip(after).enumerate() {
                    if l != 0 || !sel.section.range().contains(&k) {
                        assert_eq!(x.to_bits(), y.to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn zero_mu_keeps_accuracy_and_full_fraction_matches() {
        let (q, p, data) = fixture();
        let model = BitErrorModel::constant(0.3).unwrap();
        let cfg = HybridConfig::new(2, 0.68).unwrap();
        let sel = select_section(&q, &p, 0, &cfg, &model, &data, &SelectOptions::default(), 8).unwrap();
        let zero = AttackSettings { mu: 0.0, mode: AttackMode::Ideal, direction: Direction::Noise };
        let r = attack_section(&q, &sel, &zero, &data).unwrap();
        assert_eq!(r.pre, r.post);
        let how = AttackSettings { mu: 0.1, mode: AttackMode::Ideal, direction: Direction::Noise };
        let whole = attack_section(&q, &sel, &how, &data).unwrap();
        let sweep = subsection_sweep(&q, &sel, &[0.5, 1.0], &how, &data).unwrap();
        assert_eq!(sweep[1].post, whole.post);
        assert!(subsection_sweep(&q, &sel, &[0.0], &how, &data).is_err());
    }

    #[test]
    fn ideal_equals_sampled_for_uniform_noise() {
        // one 6T bit flipping everywhere gives |N| = one code step = mu
        let (q, p, data) = fixture();
        let model = BitErrorModel::constant(1.0).unwrap();
        let cfg = HybridConfig::new(7, 0.68).unwrap();
        let sel = select_section(&q, &p, 0, &cfg, &model, &data, &SelectOptions::default(), 1).unwrap();
        let ideal = AttackSettings { mu: UNIT_SCALE, mode: AttackMode::Ideal, direction: Direction::Noise };
        let sampled = AttackSettings { mode: AttackMode::Sampled, ..ideal };
        let a = perturbed_network(&q, &sel, &ideal, sel.section.len()).unwrap();
        let b = perturbed_network(&q, &sel, &sampled, sel.section.len()).unwrap();
        for (x, y) in a.weights(0).unwrap().iter().zip(b.weights(0).unwrap()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn sensitivity_grid_shape() {
        let (q, p, data) = fixture();
        let model = BitErrorModel::constant(0.05).unwrap();
        let mus = [0.0, 0.01, 0.1];
        let opts = SelectOptions { resamples: 2, exclude_shortcuts: true };
        let cells = layer_sensitivity_report(&q, &p, &mus, &reference_anchors(), &model, &data, &data, &opts, 1).unwrap();
        assert_eq!(cells.len(), 2 * mus.len());
        let clean = clean_eval(&q, &data).unwrap().accuracy;
        for c in cells.iter().filter(|c| c.mu == 0.0) {
            assert_eq!(c.accuracy, clean);
        }
    }

    proptest! {
        #[test]
        fn match_is_a_percentage(d in proptest::collection::vec(-1i8..=1, 1..40), seed in any::<u64>()) {
            let d: Vec<f64> = d.into_iter().map(f64::from).collect();
            let g: Vec<f64> = (0..d.len()).map(|i| if (seed >> (i % 64)) & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let m = match_fraction(&d, &g).unwrap();
            prop_assert!((0.0..=100.0).contains(&m));
        }
    }
}
