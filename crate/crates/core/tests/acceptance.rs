//! Acceptance suite. Prints one PASS/FAIL line per criterion. Criteria in
//! `KNOWN_INFEASIBLE` still print FAIL but do not fail the run; the run
//! fails on any other FAIL, or if a known-infeasible criterion passes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use htsim::attacks::{self, sign};
use htsim::cli::commands::{AttackArgs, DirectionArg, SearchArgs, SweepArgs, TableArgs};
use htsim::cli::config::ExperimentConfig;
use htsim::cli::format::{load_dataset, load_model, Model};
use htsim::cli::{replay, run_and_write};
use htsim::faultmodel::{
    expected_mu, expected_mu_at, mask_deltas, reference_anchors, sample_masks, BitErrorModel, HybridConfig,
    UNIT_SCALE,
};
use htsim::hwcost::{area_compare, energy_compare, CellCostModel, MemoryDesign};
use htsim::nn::{
    cross_entropy, evaluate, forward_float, gradients, Dataset, Layer, NetworkDef, NoisePlan, NoiseScope, Params,
    Projection, Tensor,
};
use htsim::quant::Signedness;
use htsim::robustness::{emit_config_table, Label, SearchContext};
use htsim::weight_attack::{
    attack_section, attackable_layers, default_config_for_mu, perturbed_network, select_section, AttackMode,
    AttackSettings, Direction, SelectOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;

/// Criteria that cannot pass as stated, with the reason.
const KNOWN_INFEASIBLE: &[(&str, &str)] = &[
    (
        "analytic_noise_oracle",
        "at p <= 1e-2 the sampling error of a 10^6-word mean is itself 1-3%",
    ),
    (
        "reference_pairing_calibration",
        "mu 0.06 and mu 0.1 are paired with the same configuration",
    ),
];

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

fn desk() -> (Model, Dataset) {
    let a = assets();
    let m = load_model(&a.join("desk_vgg.htm")).expect("shipped model loads");
    let d = load_dataset(&a.join("desk_test.images.htsr"), &a.join("desk_test.labels.htsr")).expect("shipped data loads");
    (m, d.head(1000))
}

fn clean(q: &htsim::nn::QuantNet, d: &Dataset) -> htsim::nn::EvalResult {
    evaluate(q, d, &NoisePlan::none(), BitErrorModel::reference(), 0, NoiseScope::Image).unwrap()
}

fn analytic_noise_oracle() -> Outcome {
    const WORDS: usize = 1_000_000;
    let mut worst: f64 = 0.0;
    let mut misses = Vec::new();
    for n6 in 0..=8u8 {
        for (pi, p) in [1e-3, 1e-2, 1e-1, 0.5].into_iter().enumerate() {
            let model = BitErrorModel::constant(p).unwrap();
            let cfg = HybridConfig::with_n6(n6, 0.68).unwrap();
            let mut r = ChaCha8Rng::seed_from_u64(1000 + 10 * n6 as u64 + pi as u64);
            let codes: Vec<u8> = (0..WORDS).map(|_| r.gen()).collect();
            let masks = sample_masks(WORDS, &cfg, &model, 7 + 10 * n6 as u64 + pi as u64).unwrap();
            let d = mask_deltas(&codes, &masks, Signedness::Signed, UNIT_SCALE);
            let mean = d.iter().map(|v| v.abs()).sum::<f64>() / WORDS as f64;
            let var = d.iter().map(|v| (v.abs() - mean).powi(2)).sum::<f64>() / (WORDS - 1) as f64;
            let exact = expected_mu_at(n6, p, UNIT_SCALE);
            let (rel, se) = if exact == 0.0 {
                (if mean == 0.0 { 0.0 } else { f64::INFINITY }, 0.0)
            } else {
                ((mean - exact).abs() / exact, (var / WORDS as f64).sqrt() / exact)
            };
            worst = worst.max(rel);
            if rel >= 0.01 {
                misses.push(format!("n6={n6} p={p}: {:.2}% (sampling s.e. {:.2}%)", 100.0 * rel, 100.0 * se));
            }
        }
    }
    if misses.is_empty() {
        Ok(format!("36 cells, worst relative error {:.3}%", 100.0 * worst))
    } else {
        Err(format!(
            "{} of 36 cells off by >= 1% at 10^6 words; sampling error alone exceeds 1% at small p: {}",
            misses.len(),
            misses.join("; ")
        ))
    }
}

fn noise_trend_monotonicity() -> Outcome {
    let model = BitErrorModel::reference();
    let mut checked = 0;
    let volts: Vec<f64> = (0..=40).map(|i| 0.62 + 0.0025 * i as f64).collect();
    for &v in &volts {
        let mus: Vec<f64> = (0..=8)
            .map(|n8| expected_mu(&HybridConfig::new(n8, v).unwrap(), model, UNIT_SCALE).unwrap())
            .collect();
        for w in mus.windows(2) {
            checked += 1;
            if !(w[1] < w[0]) {
                return Err(format!("mu not strictly decreasing in n8 at {v} V: {mus:?}"));
            }
        }
    }
    for n6 in 1..=8u8 {
        for w in volts.windows(2) {
            let hi = expected_mu(&HybridConfig::with_n6(n6, w[1]).unwrap(), model, UNIT_SCALE).unwrap();
            let lo = expected_mu(&HybridConfig::with_n6(n6, w[0]).unwrap(), model, UNIT_SCALE).unwrap();
            checked += 1;
            if lo < hi {
                return Err(format!("n6={n6}: mu {lo} at {} V below {hi} at {} V", w[0], w[1]));
            }
        }
    }
    Ok(format!("{checked} orderings hold"))
}

fn reference_pairing_calibration() -> Outcome {
    let model = BitErrorModel::reference();
    let mut lines = Vec::new();
    let mut ok = true;
    for t in reference_anchors() {
        let mu = expected_mu(&t.config, model, UNIT_SCALE).unwrap();
        let rel = (mu - t.mu).abs() / t.mu;
        ok &= rel < 0.10;
        lines.push(format!("{} {} -> {:.4} ({:+.1}%)", t.mu, t.config, mu, 100.0 * (mu - t.mu) / t.mu));
    }
    let text = lines.join("; ");
    if ok {
        Ok(text)
    } else {
        Err(format!("{text}; 0.06 and 0.1 share one configuration so one table cannot fit both"))
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_params(net: &NetworkDef, r: &mut ChaCha8Rng) -> Params {
    let mut p = Params::zeros(net);
    for lp in &mut p.layers {
        for t in [&mut lp.weight, &mut lp.bias].into_iter().flatten() {
            for v in &mut t.data {
                *v = r.gen_range(-0.8..0.8);
            }
        }
    }
    p
}

/// Inputs spaced at least 0.01 apart and away from zero, so no pooling
/// window or rectifier kink lies within the finite-difference step.
fn spaced_input(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| 0.05 + 0.01 * i as f64).collect();
    for i in (1..n).rev() {
        vals.swap(i, r.gen_range(0..=i));
    }
    for v in &mut vals {
        if r.gen_bool(0.5) {
            *v = -*v;
        }
    }
    Tensor::new(shape.to_vec(), vals).unwrap()
}

fn loss(net: &NetworkDef, p: &Params, x: &Tensor, label: usize) -> f64 {
    cross_entropy(&forward_float(net, p, x).unwrap().data, label).unwrap()
}

/// `flat` is the element count of the last case layer's output, which feeds
/// a three-class head.
fn fd_case(input: Vec<usize>, mut layers: Vec<Layer>, flat: usize, param_layers: &[usize], seed: u64) -> f64 {
    const H: f64 = 1e-3;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    layers.push(Layer::Fc { inputs: flat, outputs: 3 });
    let net = NetworkDef { input_shape: input.clone(), layers, classes: 3 };
    let p = random_params(&net, &mut r);
    let x = spaced_input(&input, &mut r);
    let label = r.gen_range(0..3);
    let g = gradients(&net, &p, &x, label).unwrap();
    let mut worst: f64 = 0.0;
    let coords = 10;
    for _ in 0..coords {
        let k = r.gen_range(0..x.data.len());
        let (mut a, mut b) = (x.clone(), x.clone());
        a.data[k] += H;
        b.data[k] -= H;
        let fd = (loss(&net, &p, &a, label) - loss(&net, &p, &b, label)) / (2.0 * H);
        worst = worst.max(rel_err(fd, g.input.data[k]));
    }
    for &l in param_layers {
        for _ in 0..coords {
            let use_bias = p.layers[l].bias.is_some() && r.gen_bool(0.3);
            let len = if use_bias {
                p.layers[l].bias.as_ref().unwrap().data.len()
            } else {
                p.layers[l].weight.as_ref().unwrap().data.len()
            };
            let k = r.gen_range(0..len);
            let bump = |d: f64| {
                let mut q = p.clone();
                let t = if use_bias { q.layers[l].bias.as_mut() } else { q.layers[l].weight.as_mut() };
                t.unwrap().data[k] += d;
                loss(&net, &q, &x, label)
            };
            let fd = (bump(H) - bump(-H)) / (2.0 * H);
            let an = if use_bias { &g.params.layers[l].bias } else { &g.params.layers[l].weight };
            worst = worst.max(rel_err(fd, an.as_ref().unwrap().data[k]));
        }
    }
    worst
}

fn gradient_finite_difference() -> Outcome {
    let conv = |i, o, k, s, p| Layer::Conv2d { out_ch: o, in_ch: i, kernel: k, stride: s, pad: p };
    let cases: Vec<(&str, Vec<usize>, Vec<Layer>, usize, Vec<usize>)> = vec![
        ("conv2d", vec![2, 5, 5], vec![conv(2, 3, 3, 1, 1)], 75, vec![0]),
        ("conv2d_strided", vec![2, 6, 6], vec![conv(2, 3, 3, 2, 0)], 12, vec![0]),
        ("relu", vec![12], vec![Layer::Relu], 12, vec![]),
        ("max_pool", vec![2, 4, 4], vec![Layer::MaxPool { kernel: 2, stride: 2 }], 8, vec![]),
        ("avg_pool", vec![2, 4, 4], vec![Layer::AvgPool { kernel: 2, stride: 2 }], 8, vec![]),
        ("fc", vec![7], vec![Layer::Fc { inputs: 7, outputs: 5 }], 5, vec![0]),
        ("affine", vec![3, 2, 2], vec![Layer::Affine { channels: 3 }], 12, vec![0]),
        (
            "residual_identity",
            vec![2, 4, 4],
            vec![Layer::ResidualBegin, conv(2, 2, 3, 1, 1), Layer::ResidualAdd { projection: None }],
            32,
            vec![1],
        ),
        (
            "residual_projection",
            vec![2, 4, 4],
            vec![
                Layer::ResidualBegin,
                conv(2, 4, 3, 2, 1),
                Layer::ResidualAdd { projection: Some(Projection { in_ch: 2, out_ch: 4, stride: 2 }) },
            ],
            16,
            vec![1, 2],
        ),
    ];
    let mut parts = Vec::new();
    let mut fail = false;
    for (i, (name, input, layers, flat, pl)) in cases.into_iter().enumerate() {
        let w = fd_case(input, layers, flat, &pl, 40 + i as u64);
        fail |= !(w < 1e-4);
        parts.push(format!("{name} {w:.1e}"));
    }
    let text = format!("worst relative error per layer type: {}", parts.join(", "));
    if fail {
        Err(text)
    } else {
        Ok(text)
    }
}

fn fgsm_contract() -> Outcome {
    let (m, d) = desk();
    let q = m.quantized().unwrap();
    let zero = attacks::fgsm_dataset(&m.net, &m.params, &d, 0.0).unwrap();
    if zero != d {
        return Err("epsilon 0 changed the inputs".into());
    }
    let mut acc = Vec::new();
    for eps in [0.05, 0.3] {
        let adv = attacks::fgsm_dataset(&m.net, &m.params, &d, eps).unwrap();
        for i in 0..d.len() {
            for (a, b) in adv.image(i).iter().zip(d.image(i)) {
                if (a - b).abs() > eps + 1e-12 || !(0.0..=1.0).contains(a) {
                    return Err(format!("example {i}: perturbation {} exceeds {eps}", (a - b).abs()));
                }
            }
        }
        acc.push(clean(&q, &adv).accuracy);
    }
    let text = format!(
        "clean {:.1}%, adversarial {:.1}% at 0.05, {:.1}% at 0.3 over {} examples",
        clean(&q, &d).accuracy,
        acc[0],
        acc[1],
        d.len()
    );
    if acc[1] <= acc[0] {
        Ok(text)
    } else {
        Err(text)
    }
}

fn ideal_sni_equivalence() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(77);
    let mut n = 0;
    for _ in 0..2000 {
        let len = r.gen_range(1..64);
        let w: Vec<f64> = (0..len).map(|_| r.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..len)
            .map(|_| if r.gen_bool(0.1) { 0.0 } else { r.gen_range(-5.0..5.0) })
            .collect();
        let eps = r.gen_range(0.0..0.3);
        let d: Vec<f64> = g.iter().map(|&v| sign(v)).collect();
        let a = attacks::weight_attack_sni(&w, eps, &d).unwrap();
        let b = attacks::weight_attack_ideal(&w, &g, eps).unwrap();
        if a.iter().zip(&b).any(|(x, y)| x.to_bits() != y.to_bits()) {
            return Err(format!("mismatch for eps {eps}"));
        }
        n += len;
    }
    Ok(format!("{n} elements bit-identical over 2000 trials"))
}

fn attack_locality() -> Outcome {
    let (m, d) = desk();
    let q = m.quantized().unwrap();
    let batch = d.head(128);
    let mut checked = 0usize;
    for layer in attackable_layers(&m.net, true) {
        let cfg = default_config_for_mu(0.1).unwrap();
        let sel = select_section(&q, &m.params, layer, &cfg, BitErrorModel::reference(), &batch, &SelectOptions::default(), 3)
            .unwrap();
        let range = sel.section.range();
        for how in [
            AttackSettings { mu: 0.1, mode: AttackMode::Ideal, direction: Direction::Noise },
            AttackSettings { mu: 0.1, mode: AttackMode::Ideal, direction: Direction::Gradient },
            AttackSettings { mu: 0.1, mode: AttackMode::Sampled, direction: Direction::Noise },
        ] {
            let a = perturbed_network(&q, &sel, &how, sel.section.len()).unwrap();
            let mut changed = 0;
            for l in m.net.weight_layers() {
                let (wb, wa) = (q.weights(l).unwrap(), a.weights(l).unwrap());
                let (cb, ca) = (&q.weight_codes(l).unwrap().codes, &a.weight_codes(l).unwrap().codes);
                for k in 0..wb.len() {
                    let inside = l == layer && range.contains(&k);
                    if !inside && (wb[k].to_bits() != wa[k].to_bits() || cb[k] != ca[k]) {
                        return Err(format!("layer {l} weight {k} changed by an attack on layer {layer}"));
                    }
                    changed += usize::from(inside && wb[k] != wa[k]);
                    checked += 1;
                }
            }
            if changed == 0 {
                return Err(format!("{how:?} on layer {layer} changed nothing"));
            }
        }
    }
    Ok(format!("{checked} weight reads compared; only the chosen sections moved"))
}

fn adversarial_dominance() -> Outcome {
    let (m, d) = desk();
    let q = m.quantized().unwrap();
    let batch = d.head(128);
    let layer = attackable_layers(&m.net, true)[1];
    let mu = 0.1;
    let cfg = default_config_for_mu(mu).unwrap();
    let base = clean(&q, &d).accuracy;
    let (mut ga, mut ra) = (0.0, 0.0);
    let seeds = [1u64, 2, 3, 4, 5];
    for &s in &seeds {
        let sel = select_section(&q, &m.params, layer, &cfg, BitErrorModel::reference(), &batch, &SelectOptions::default(), s)
            .unwrap();
        let g = attack_section(&q, &sel, &AttackSettings { mu, mode: AttackMode::Ideal, direction: Direction::Gradient }, &d)
            .unwrap();
        let r = attack_section(&q, &sel, &AttackSettings { mu, mode: AttackMode::Ideal, direction: Direction::Random { seed: s } }, &d)
            .unwrap();
        ga += g.post.accuracy;
        ra += r.post.accuracy;
    }
    let n = seeds.len() as f64;
    let (ga, ra) = (ga / n, ra / n);
    let margin = ra - ga;
    let text = format!(
        "layer {layer}, mu {mu}: clean {base:.1}%, gradient-aligned {ga:.1}% (drop {:.1}), random-sign {ra:.1}% (drop {:.1}), margin {margin:.1} points",
        base - ga,
        base - ra
    );
    if margin >= 5.0 {
        Ok(text)
    } else {
        Err(text)
    }
}

fn section_match_target() -> Outcome {
    let (m, d) = desk();
    let q = m.quantized().unwrap();
    let batch = d.head(128);
    let cfg = default_config_for_mu(0.01).unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for layer in attackable_layers(&m.net, true) {
        let sel = select_section(&q, &m.params, layer, &cfg, BitErrorModel::reference(), &batch, &SelectOptions::default(), 1)
            .unwrap();
        ok &= sel.match_percent >= 99.0;
        parts.push(format!(
            "layer {layer}: {:.1}% ({} of {} words flipped)",
            sel.match_percent,
            sel.flipped,
            sel.section.len()
        ));
    }
    let text = format!("{cfg}, R = 64: {}", parts.join("; "));
    if ok {
        Ok(text)
    } else {
        Err(text)
    }
}

fn search_determinism_and_labels() -> Outcome {
    let (m, d) = desk();
    let q = m.quantized().unwrap();
    let model = BitErrorModel::reference();
    let run = || {
        let ctx = SearchContext::new(&q, &m.params, &d, 0.05, model, 1, NoiseScope::Image).unwrap();
        let store = ctx.combine(ctx.scan_all(0.68).unwrap(), 4).unwrap();
        let row = emit_config_table(&store, &m.net, &m.name);
        (ctx.baseline_adv().accuracy, store, row)
    };
    let (base_a, a, row_a) = run();
    let (_, b, row_b) = run();
    let ja = serde_json::to_string(&a).unwrap();
    if ja != serde_json::to_string(&b).unwrap() || row_a.csv_line() != row_b.csv_line() {
        return Err("two identical runs produced different stores".into());
    }
    let adv = attacks::fgsm_dataset(&m.net, &m.params, &d, 0.05).unwrap();
    let direct = evaluate(&q, &adv, &NoisePlan::none(), model, 1, NoiseScope::Image).unwrap().accuracy;
    if direct != base_a {
        return Err(format!("baseline {base_a} differs from direct evaluation {direct}"));
    }
    for s in a.scans.values() {
        let gain = s.best_adv_acc - s.baseline_adv_acc;
        let expect = if gain > 10.0 {
            Label::Strong
        } else if gain > 5.0 {
            Label::Moderate
        } else {
            Label::Weak
        };
        if s.label != expect || s.trials.len() != 7 || s.baseline_adv_acc != base_a {
            return Err(format!("layer {} labelled {:?} with gain {gain}", s.layer, s.label));
        }
    }
    for (l, _) in &a.chosen {
        if !a.scans[l].label.is_candidate() {
            return Err(format!("weak layer {l} chosen"));
        }
    }
    let labels: Vec<String> = a.scans.values().map(|s| format!("{}:{:?}", s.layer, s.label)).collect();
    Ok(format!(
        "{} bytes identical; labels {}; chosen {} adv {:.1}% vs {:.1}%, clean {:.1}% (deviation {:.2})",
        ja.len(),
        labels.join(" "),
        row_a.summary(),
        a.combined_adv_acc,
        base_a,
        a.clean_acc,
        a.deviation
    ))
}

fn cost_model_headlines() -> Outcome {
    let (m, _) = desk();
    let c = CellCostModel::default();
    let layers = m.net.activation_layers();
    let shapes = m.net.shapes().unwrap();
    let words: Vec<usize> = layers.iter().map(|&l| shapes[l].iter().product()).collect();
    let all8 = MemoryDesign::homogeneous(&layers, 8, c.v_scaled);
    let all6 = MemoryDesign::homogeneous(&layers, 0, c.v_nominal);
    let e = energy_compare(&all8, &all6, &c, &words).unwrap();
    let a = area_compare(&all8, &all6, &c, &words).unwrap();
    let text = format!("energy {e:+.4}%, area {a:+.4}%");
    if (e + 35.45).abs() <= 0.001 * 35.45 && (a - 30.0).abs() <= 0.001 * 30.0 {
        Ok(text)
    } else {
        Err(text)
    }
}

fn report_replay() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let a = assets().canonicalize().unwrap();
    let text = format!(
        "seeds = [11, 12]\nmodel = {:?}\nimages = {:?}\nlabels = {:?}\nber_table = {:?}\neval_subset = 200\n\
         [attack]\nbatch = 64\n[characterize]\nwords = 20000\n",
        a.join("desk_vgg.htm"),
        a.join("desk_test.images.htsr"),
        a.join("desk_test.labels.htsr"),
        a.join("ber_default.toml"),
    );
    let config = ExperimentConfig::parse(&text, dir.path()).map_err(|e| e.to_string())?;
    let out = dir.path().join("out");
    let val = |v: serde_json::Value| v;
    let mut reports = Vec::new();
    let mut run = |name: &str, args: serde_json::Value, extra: &[&Path]| -> std::result::Result<(), String> {
        let p = run_and_write(name, args, extra, &config, &out).map_err(|e| format!("{name}: {e}"))?;
        reports.push(p);
        Ok(())
    };
    run("characterize", val(serde_json::json!({})), &[])?;
    run("calibrate", val(serde_json::json!({})), &[])?;
    run("search", serde_json::to_value(SearchArgs::default()).unwrap(), &[])?;
    let table = TableArgs { table: Some(out.join("search_table.csv")), row: 0 }.resolve().unwrap();
    let tpath = table.table.clone().unwrap();
    run("attack", serde_json::to_value(AttackArgs { mu: Some(0.01), layer: None, mode: None, direction: DirectionArg::Noise }).unwrap(), &[])?;
    run("sweep", serde_json::to_value(SweepArgs::default()).unwrap(), &[])?;
    run("cost", serde_json::to_value(&table).unwrap(), &[&tpath])?;
    run("infer", serde_json::to_value(&table).unwrap(), &[&tpath])?;
    for p in &reports {
        let diffs = replay(p).map_err(|e| format!("{}: {e}", p.display()))?;
        if !diffs.is_empty() {
            return Err(diffs.join("; "));
        }
    }
    let csv = out.join("characterize.csv");
    let mut tampered = std::fs::read_to_string(&csv).unwrap();
    tampered.push_str("0,0,0,0,0,0\n");
    std::fs::write(&csv, tampered).unwrap();
    let diffs = replay(&out.join("characterize.json")).map_err(|e| e.to_string())?;
    if diffs.is_empty() {
        return Err("replay did not notice a modified CSV".into());
    }
    Ok(format!("{} reports replayed byte-identically; a tampered CSV is detected", reports.len()))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("analytic_noise_oracle", analytic_noise_oracle),
        ("noise_trend_monotonicity", noise_trend_monotonicity),
        ("reference_pairing_calibration", reference_pairing_calibration),
        ("gradient_finite_difference", gradient_finite_difference),
        ("fgsm_contract", fgsm_contract),
        ("ideal_sni_equivalence", ideal_sni_equivalence),
        ("attack_locality", attack_locality),
        ("adversarial_dominance", adversarial_dominance),
        ("section_match_target", section_match_target),
        ("search_determinism_and_labels", search_determinism_and_labels),
        ("cost_model_headlines", cost_model_headlines),
        ("report_replay", report_replay),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = Vec::new();
    let mut known = Vec::new();
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let t = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        let reason = KNOWN_INFEASIBLE.iter().find(|(n, _)| *n == name).map(|(_, r)| *r);
        match (r, reason) {
            (Ok(detail), None) => println!("PASS {name} ({secs:.1}s): {detail}"),
            (Ok(detail), Some(_)) => {
                println!("PASS {name} ({secs:.1}s): {detail}");
                unexpected.push(format!("{name} passed but is listed as infeasible"));
            }
            (Err(detail), None) => {
                println!("FAIL {name} ({secs:.1}s): {detail}");
                unexpected.push(name.to_string());
            }
            (Err(detail), Some(why)) => {
                println!("FAIL {name} ({secs:.1}s): {detail}");
                known.push(format!("{name} ({why})"));
            }
        }
    }
    if !known.is_empty() {
        println!("{} criteria fail for known reasons: {}", known.len(), known.join("; "));
    }
    if !unexpected.is_empty() {
        println!("unexpected results: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
