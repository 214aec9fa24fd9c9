//! Bit-error model for hybrid 8T-6T SRAM words.
//!
//! A stored 8-bit word keeps its `n8` most significant bits in 8T cells,
//! which never flip at the supported voltages, and its `n6` least significant
//! bits in 6T cells. Each 6T bit flips independently per read with the
//! probability given by the [`BitErrorModel`] at the word's supply voltage.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::Signedness;
use crate::rng;

/// Value of one code step for weights normalised to [-1, 1).
pub const UNIT_SCALE: f64 = 1.0 / 128.0;

/// Word width of every memory bank.
pub const WORD_BITS: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExtrapolationMode {
    #[default]
    Clamp,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub v_dd: f64,
    pub p_flip: f64,
}

/// Per-bit 6T flip probability as a function of supply voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct BitErrorModel {
    points: Vec<BerPoint>,
    extrapolation_mode: ExtrapolationMode,
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    #[serde(default)]
    extrapolation_mode: ExtrapolationMode,
    points: Vec<BerPoint>,
}

impl TryFrom<RawModel> for BitErrorModel {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        BitErrorModel::new(raw.points, raw.extrapolation_mode)
    }
}

impl From<BitErrorModel> for RawModel {
    fn from(m: BitErrorModel) -> Self {
        RawModel {
            extrapolation_mode: m.extrapolation_mode,
            points: m.points,
        }
    }
}

impl BitErrorModel {
    /// Validates and builds a table. Points must be strictly increasing in
    /// voltage with non-increasing flip probability.
    pub fn new(points: Vec<BerPoint>, extrapolation_mode: ExtrapolationMode) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Invalid("BER table has no points".into()));
        }
        for p in &points {
            if !(0.0..=1.0).contains(&p.p_flip) || !p.v_dd.is_finite() {
                return Err(Error::Invalid(format!(
                    "BER point ({} V, {}) out of range",
                    p.v_dd, p.p_flip
                )));
            }
        }
        for w in points.windows(2) {
            if w[1].v_dd <= w[0].v_dd {
                return Err(Error::Invalid(format!(
                    "BER table voltages must be strictly increasing ({} then {})",
                    w[0].v_dd, w[1].v_dd
                )));
            }
            if w[1].p_flip > w[0].p_flip {
                return Err(Error::Invalid(format!(
                    "BER must not increase with voltage ({} V: {}, {} V: {})",
                    w[0].v_dd, w[0].p_flip, w[1].v_dd, w[1].p_flip
                )));
            }
        }
        Ok(BitErrorModel {
            points,
            extrapolation_mode,
        })
    }

    /// A voltage-independent table, mostly useful in tests.
    pub fn constant(p_flip: f64) -> Result<Self> {
        Self::new(
            vec![BerPoint { v_dd: 0.0, p_flip }, BerPoint { v_dd: 10.0, p_flip }],
            ExtrapolationMode::Clamp,
        )
    }

    /// The default table: fitted to [`reference_anchors`] at [`UNIT_SCALE`].
    pub fn reference() -> &'static BitErrorModel {
        static MODEL: std::sync::OnceLock<BitErrorModel> = std::sync::OnceLock::new();
        MODEL.get_or_init(|| {
            calibrate(&reference_anchors(), UNIT_SCALE)
                .expect("reference anchors are feasible")
                .model
        })
    }

    pub fn points(&self) -> &[BerPoint] {
        &self.points
    }

    pub fn extrapolation_mode(&self) -> ExtrapolationMode {
        self.extrapolation_mode
    }

    /// Flip probability at `v_dd`, log-linear between tabulated points.
    pub fn ber_at(&self, v_dd: f64) -> Result<f64> {
        let first = self.points[0];
        let last = self.points[self.points.len() - 1];
        if v_dd < first.v_dd || v_dd > last.v_dd {
            return match self.extrapolation_mode {
                ExtrapolationMode::Clamp if v_dd < first.v_dd => Ok(first.p_flip),
                ExtrapolationMode::Clamp => Ok(last.p_flip),
                ExtrapolationMode::Error => Err(Error::Range {
                    v_dd,
                    min: first.v_dd,
                    max: last.v_dd,
                }),
            };
        }
        if let Some(p) = self.points.iter().find(|p| p.v_dd == v_dd) {
            return Ok(p.p_flip);
        }
        let hi = self.points.partition_point(|p| p.v_dd < v_dd);
        let (a, b) = (self.points[hi - 1], self.points[hi]);
        let t = (v_dd - a.v_dd) / (b.v_dd - a.v_dd);
        if a.p_flip == 0.0 || b.p_flip == 0.0 {
            // log of zero is undefined; fall back to linear
            return Ok(a.p_flip + t * (b.p_flip - a.p_flip));
        }
        let ln = a.p_flip.ln() + t * (b.p_flip.ln() - a.p_flip.ln());
        Ok(ln.exp())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("BER table serialises")
    }
}

/// Hybrid word layout plus supply voltage. Notation `"n8-n6"`, e.g. `"3-5"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig", into = "RawConfig")]
pub struct HybridConfig {
    n8: u8,
    v_dd: f64,
}

#[derive(Serialize, Deserialize)]
struct RawConfig {
    n8: u8,
    n6: u8,
    v_dd: f64,
}

impl TryFrom<RawConfig> for HybridConfig {
    type Error = Error;

    fn try_from(raw: RawConfig) -> Result<Self> {
        if u16::from(raw.n8) + u16::from(raw.n6) != u16::from(WORD_BITS) {
            return Err(Error::Invalid(format!(
                "n8 + n6 must be {WORD_BITS}, got {} + {}",
                raw.n8, raw.n6
            )));
        }
        HybridConfig::new(raw.n8, raw.v_dd)
    }
}

impl From<HybridConfig> for RawConfig {
    fn from(c: HybridConfig) -> Self {
        RawConfig {
            n8: c.n8,
            n6: c.n6(),
            v_dd: c.v_dd,
        }
    }
}

impl HybridConfig {
    pub fn new(n8: u8, v_dd: f64) -> Result<Self> {
        if n8 > WORD_BITS {
            return Err(Error::Invalid(format!("n8 = {n8} exceeds word width")));
        }
        if !(v_dd.is_finite() && v_dd > 0.0) {
            return Err(Error::Invalid(format!("v_dd = {v_dd} must be positive")));
        }
        Ok(HybridConfig { n8, v_dd })
    }

    pub fn with_n6(n6: u8, v_dd: f64) -> Result<Self> {
        if n6 > WORD_BITS {
            return Err(Error::Invalid(format!("n6 = {n6} exceeds word width")));
        }
        Self::new(WORD_BITS - n6, v_dd)
    }

    /// Parses `"n8-n6"` (also accepts `"n8/n6"`).
    pub fn parse_ratio(ratio: &str, v_dd: f64) -> Result<Self> {
        let (a, b) = ratio
            .split_once(['-', '/'])
            .ok_or_else(|| Error::Invalid(format!("bad 8T-6T ratio {ratio:?}")))?;
        let n8: u8 = a
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("bad 8T-6T ratio {ratio:?}")))?;
        let n6: u8 = b
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("bad 8T-6T ratio {ratio:?}")))?;
        HybridConfig::try_from(RawConfig { n8, n6, v_dd })
    }

    pub fn n8(&self) -> u8 {
        self.n8
    }

    pub fn n6(&self) -> u8 {
        WORD_BITS - self.n8
    }

    pub fn v_dd(&self) -> f64 {
        self.v_dd
    }

    /// Bits of the word held in 6T cells.
    pub fn lsb_mask(&self) -> u8 {
        ((1u16 << self.n6()) - 1) as u8
    }

    pub fn ratio(&self) -> String {
        format!("{}-{}", self.n8, self.n6())
    }
}

impl fmt::Display for HybridConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} @ {}V", self.ratio(), self.v_dd)
    }
}

/// Sum over flip masks grouped by popcount: `coeffs[k]` is the total of the
/// mean |delta| (over stored patterns, in LSB units) of every mask with k bits.
fn popcount_coefficients(n6: u8) -> Vec<f64> {
    let n = u32::from(n6);
    let words = 1u32 << n;
    let mut coeffs = vec![0.0; n as usize + 1];
    for mask in 0..words {
        let mut total = 0i64;
        for stored in 0..words {
            let mut delta = 0i64;
            for b in 0..n {
                if mask >> b & 1 == 1 {
                    let w = 1i64 << b;
                    delta += if stored >> b & 1 == 1 { -w } else { w };
                }
            }
            total += delta.abs();
        }
        coeffs[mask.count_ones() as usize] += total as f64 / f64::from(words);
    }
    coeffs
}

fn mu_from_coefficients(coeffs: &[f64], p: f64, scale: f64) -> f64 {
    let n = coeffs.len() as i32 - 1;
    let mut acc = 0.0;
    for (k, c) in coeffs.iter().enumerate() {
        let k = k as i32;
        acc += c * p.powi(k) * (1.0 - p).powi(n - k);
    }
    acc * scale
}

/// Exact E|N| for `n6` error-prone bits flipping with probability `p`,
/// stored bits uniform.
pub fn expected_mu_at(n6: u8, p: f64, scale: f64) -> f64 {
    if n6 == 0 {
        return 0.0;
    }
    mu_from_coefficients(&popcount_coefficients(n6), p, scale)
}

/// Average surgical-noise magnitude of `config` under `model`.
pub fn expected_mu(config: &HybridConfig, model: &BitErrorModel, scale: f64) -> Result<f64> {
    if !(scale > 0.0) {
        return Err(Error::Invalid(format!("scale {scale} must be positive")));
    }
    let p = model.ber_at(config.v_dd())?;
    Ok(expected_mu_at(config.n6(), p, scale))
}

/// Draws one flip mask per word, confined to the 6T bits of `config`.
pub fn sample_masks(
    len: usize,
    config: &HybridConfig,
    model: &BitErrorModel,
    seed: u64,
) -> Result<Vec<u8>> {
    let p = model.ber_at(config.v_dd())?;
    let n6 = config.n6();
    if n6 == 0 || p == 0.0 {
        return Ok(vec![0; len]);
    }
    let mut rng = rng::stream(seed, &[]);
    let masks = (0..len)
        .map(|_| {
            let mut m = 0u8;
            for b in 0..n6 {
                if rng.gen_bool(p) {
                    m |= 1 << b;
                }
            }
            m
        })
        .collect();
    Ok(masks)
}

/// Sampled noise for a run of stored words.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSample {
    pub deltas: Vec<f64>,
    pub masks: Vec<u8>,
    pub seed: u64,
    pub config: HybridConfig,
}

impl NoiseSample {
    pub fn mean_abs(&self) -> f64 {
        if self.deltas.is_empty() {
            return 0.0;
        }
        self.deltas.iter().map(|d| d.abs()).sum::<f64>() / self.deltas.len() as f64
    }
}

/// Value change of each word when its stored code is XOR-ed with `mask`.
pub fn mask_deltas(codes: &[u8], masks: &[u8], signedness: Signedness, scale: f64) -> Vec<f64> {
    codes
        .iter()
        .zip(masks)
        .map(|(&c, &m)| {
            let before = signedness.code_value(c);
            let after = signedness.code_value(c ^ m);
            f64::from(after - before) * scale
        })
        .collect()
}

pub fn sample_noise(
    codes: &[u8],
    signedness: Signedness,
    scale: f64,
    config: &HybridConfig,
    model: &BitErrorModel,
    seed: u64,
) -> Result<NoiseSample> {
    let masks = sample_masks(codes.len(), config, model, seed)?;
    Ok(NoiseSample {
        deltas: mask_deltas(codes, &masks, signedness, scale),
        masks,
        seed,
        config: *config,
    })
}

/// One `(mu, config)` anchor for [`calibrate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub mu: f64,
    pub config: HybridConfig,
}

impl CalibrationTarget {
    pub fn new(mu: f64, ratio: &str, v_dd: f64) -> Result<Self> {
        Ok(CalibrationTarget {
            mu,
            config: HybridConfig::parse_ratio(ratio, v_dd)?,
        })
    }
}

/// μ / configuration pairs used for the attack experiments; they anchor the
/// default BER table.
pub fn reference_anchors() -> Vec<CalibrationTarget> {
    [
        (0.01, "3-5", 0.68),
        (0.02, "1-7", 0.72),
        (0.04, "1-7", 0.69),
        (0.06, "2-6", 0.65),
        (0.1, "2-6", 0.65),
    ]
    .into_iter()
    .map(|(mu, r, v)| CalibrationTarget::new(mu, r, v).expect("valid anchor"))
    .collect()
}

/// Reads targets from CSV with header `mu,config,v_dd` (config as `n8-n6`).
pub fn load_targets(path: &Path) -> Result<Vec<CalibrationTarget>> {
    let text = std::fs::read_to_string(path)?;
    parse_targets(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_targets(text: &str) -> Result<Vec<CalibrationTarget>> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty calibration targets".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["mu", "config", "v_dd"] {
        return Err(Error::Config(format!(
            "calibration header must be `mu,config,v_dd`, got `{header}`"
        )));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::Config(format!("calibration row {}: `{line}`", i + 1));
        if f.len() != 3 {
            return Err(bad());
        }
        let mu: f64 = f[0].parse().map_err(|_| bad())?;
        let v_dd: f64 = f[2].trim_end_matches(['V', 'v']).parse().map_err(|_| bad())?;
        out.push(CalibrationTarget::new(mu, f[1], v_dd).map_err(|_| bad())?);
    }
    if out.is_empty() {
        return Err(Error::Config("no calibration rows".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetFit {
    pub target: CalibrationTarget,
    pub fitted_mu: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub model: BitErrorModel,
    pub fits: Vec<TargetFit>,
}

impl Calibration {
    pub fn worst_relative_error(&self) -> f64 {
        self.fits
            .iter()
            .map(|f| f.relative_error)
            .fold(0.0, f64::max)
    }

    /// Targets whose fitted μ misses by more than `tolerance` (relative).
    pub fn misses(&self, tolerance: f64) -> Vec<&TargetFit> {
        self.fits
            .iter()
            .filter(|f| f.relative_error > tolerance)
            .collect()
    }
}

fn bisect_increasing(mut f: impl FnMut(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Fits one flip probability per distinct voltage so that `expected_mu`
/// reproduces the targets. Several targets at one voltage are fitted jointly
/// so that the geometric mean of achieved/target ratios is one.
pub fn calibrate(targets: &[CalibrationTarget], scale: f64) -> Result<Calibration> {
    if !(scale > 0.0) {
        return Err(Error::Invalid(format!("scale {scale} must be positive")));
    }
    // voltages keyed in microvolts so equal readings group together
    let mut groups: BTreeMap<i64, Vec<CalibrationTarget>> = BTreeMap::new();
    for t in targets {
        if !(t.mu >= 0.0 && t.mu.is_finite()) {
            return Err(Error::Calibration(format!("target mu {} is invalid", t.mu)));
        }
        let key = (t.config.v_dd() * 1e6).round() as i64;
        groups.entry(key).or_default().push(*t);
    }
    if groups.len() < 2 {
        return Err(Error::Calibration(
            "need at least two distinct supply voltages".into(),
        ));
    }

    let mut points = Vec::with_capacity(groups.len());
    for group in groups.values() {
        let v_dd = group[0].config.v_dd();
        let mut terms = Vec::new();
        for t in group {
            let n6 = t.config.n6();
            if t.mu == 0.0 {
                continue;
            }
            if n6 == 0 {
                return Err(Error::Calibration(format!(
                    "mu {} is unreachable with an all-8T word",
                    t.mu
                )));
            }
            let coeffs = popcount_coefficients(n6);
            let max = mu_from_coefficients(&coeffs, 1.0, scale);
            if t.mu > max {
                return Err(Error::Calibration(format!(
                    "mu {} exceeds the maximum {max} reachable by {}",
                    t.mu, t.config
                )));
            }
            terms.push((coeffs, t.mu));
        }
        let p_flip = if terms.is_empty() {
            0.0
        } else if terms.len() < group.len() {
            return Err(Error::Calibration(format!(
                "targets at {v_dd} V mix zero and non-zero mu"
            )));
        } else {
            bisect_increasing(|p| {
                terms
                    .iter()
                    .map(|(c, mu)| (mu_from_coefficients(c, p, scale) / mu).ln())
                    .sum()
            })
        };
        points.push(BerPoint { v_dd, p_flip });
    }

    for w in points.windows(2) {
        if w[1].p_flip > w[0].p_flip {
            return Err(Error::Calibration(format!(
                "fitted BER rises with voltage ({} V: {:.4e}, {} V: {:.4e})",
                w[0].v_dd, w[0].p_flip, w[1].v_dd, w[1].p_flip
            )));
        }
    }
    let model = BitErrorModel::new(points, ExtrapolationMode::Clamp)?;

    let mut fits = Vec::with_capacity(targets.len());
    for t in targets {
        let fitted_mu = expected_mu(&t.config, &model, scale)?;
        let relative_error = if t.mu == 0.0 {
            fitted_mu
        } else {
            (fitted_mu - t.mu).abs() / t.mu
        };
        if relative_error > 0.10 {
            log::warn!(
                "calibration target mu={} at {} fitted to {:.4} ({:.1}% off)",
                t.mu,
                t.config,
                fitted_mu,
                100.0 * relative_error
            );
        }
        fits.push(TargetFit {
            target: *t,
            fitted_mu,
            relative_error,
        });
    }
    Ok(Calibration { model, fits })
}

impl FromStr for ExtrapolationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clamp" => Ok(ExtrapolationMode::Clamp),
            "error" => Ok(ExtrapolationMode::Error),
            other => Err(Error::Invalid(format!("unknown extrapolation mode {other:?}"))),
        }
    }
}
