//! Subcommand drivers. Each returns a [`CommandOutput`]; writing and the
//! envelope are handled by the caller so that replay can compare bodies.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::ExperimentConfig;
use super::format::{load_dataset, load_model, Model};
use super::report::{csv_preamble, CommandOutput};
use crate::error::{Error, Result};
use crate::faultmodel::{self, BitErrorModel, HybridConfig, UNIT_SCALE};
use crate::hwcost::{self, MemoryDesign, Paradigm};
use crate::nn::{evaluate, Dataset, NoisePlan};
use crate::quant::Signedness;
use crate::robustness::{emit_config_table, ConfigRow, SearchContext};
use crate::weight_attack::{
    self, attackable_layers, AttackMode, AttackSettings, Direction, SelectOptions, SensitivityCell,
};
use crate::{attacks, rng};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct SearchArgs {
    /// Run only this FGSM strength instead of every configured epsilon.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DirectionArg {
    Noise,
    Gradient,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct AttackArgs {
    /// Attack magnitude; must be paired with a configuration in the
    /// calibration targets. Defaults to the first configured mu.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Weight layer to attack.
    #[arg(long)]
    pub layer: Option<usize>,
    /// `ideal` (W + mu * D) or `sampled` (replay the frozen flip masks).
    #[arg(long)]
    pub mode: Option<AttackMode>,
    /// Direction used by ideal attacks.
    #[arg(long, value_enum, default_value = "noise")]
    pub direction: DirectionArg,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub layer: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct TableArgs {
    /// Config table CSV written by `search`; all layers homogeneous if absent.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Row of the table to use.
    #[arg(long, default_value_t = 0)]
    pub row: usize,
}

impl TableArgs {
    /// Makes the table path absolute so the arguments replay from anywhere.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(t) = &self.table {
            let abs = std::fs::canonicalize(t)
                .map_err(|e| Error::Config(format!("table {}: {e}", t.display())))?;
            self.table = Some(abs);
        }
        Ok(self)
    }

    pub fn inputs(&self) -> Vec<&Path> {
        self.table.iter().map(PathBuf::as_path).collect()
    }
}

struct Loaded {
    model: Model,
    data: Dataset,
    ber: BitErrorModel,
}

fn load(config: &ExperimentConfig) -> Result<Loaded> {
    let model = load_model(&config.model)?;
    let data = load_dataset(&config.images, &config.labels)?;
    if data.sample_shape() != model.net.input_shape.as_slice() {
        return Err(Error::Config(format!(
            "dataset samples {:?} do not fit model input {:?}",
            data.sample_shape(),
            model.net.input_shape
        )));
    }
    if config.eval_subset > data.len() {
        log::warn!("eval_subset {} exceeds the {} available examples", config.eval_subset, data.len());
    }
    let data = data.head(config.eval_subset);
    Ok(Loaded {
        model,
        data,
        ber: config.bit_error_model()?,
    })
}

fn seed0(config: &ExperimentConfig) -> u64 {
    config.seeds[0]
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report bodies serialize")
}

fn csv(command: &str, config: &ExperimentConfig, header: &str, rows: &[String]) -> String {
    let mut s = csv_preamble(command, config);
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    s
}

/// Analytic and sampled mean |N| over the configured n6 x voltage grid.
pub fn characterize(config: &ExperimentConfig) -> Result<CommandOutput> {
    let ber = config.bit_error_model()?;
    let seed = seed0(config);
    let ch = &config.characterize;
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (vi, &v) in ch.voltages.iter().enumerate() {
        for &n6 in &ch.n6 {
            let cfg = HybridConfig::with_n6(n6, v)?;
            let p = ber.ber_at(v)?;
            let expected = faultmodel::expected_mu(&cfg, &ber, UNIT_SCALE)?;
            let mut r = rng::stream(seed, &[u64::from(n6), vi as u64, 0]);
            let codes: Vec<u8> = (0..ch.words).map(|_| r.gen()).collect();
            let masks = faultmodel::sample_masks(ch.words, &cfg, &ber, rng::derive_seed(seed, &[u64::from(n6), vi as u64, 1]))?;
            let deltas = faultmodel::mask_deltas(&codes, &masks, Signedness::Unsigned, UNIT_SCALE);
            let empirical = deltas.iter().map(|d| d.abs()).sum::<f64>() / ch.words as f64;
            lines.push(format!("{},{n6},{v},{p},{expected},{empirical}", cfg.n8()));
            rows.push(json!({
                "n8": cfg.n8(), "n6": n6, "v_dd": v, "p_flip": p,
                "expected_mu": expected, "empirical_mu": empirical,
            }));
        }
    }
    Ok(CommandOutput {
        body: json!({ "ber_table": to_value(&ber), "words": ch.words, "rows": rows }),
        files: vec![(
            "characterize.csv".into(),
            csv("characterize", config, "n8,n6,v_dd,p_flip,expected_mu,empirical_mu", &lines),
        )],
    })
}

/// Fits a BER table to the calibration targets.
pub fn calibrate(config: &ExperimentConfig) -> Result<CommandOutput> {
    let targets = config.calibration_targets()?;
    let cal = faultmodel::calibrate(&targets, UNIT_SCALE)?;
    let lines: Vec<String> = cal
        .fits
        .iter()
        .map(|f| {
            format!(
                "{},{},{},{},{}",
                f.target.mu,
                f.target.config.ratio(),
                f.target.config.v_dd(),
                f.fitted_mu,
                f.relative_error
            )
        })
        .collect();
    let misses: Vec<f64> = cal.misses(0.1).iter().map(|f| f.target.mu).collect();
    Ok(CommandOutput {
        body: json!({
            "table": to_value(&cal.model),
            "fits": to_value(&cal.fits),
            "worst_relative_error": cal.worst_relative_error(),
            "missed_at_10_percent": misses,
        }),
        files: vec![
            ("ber_table.toml".into(), cal.model.to_toml()),
            (
                "calibration.csv".into(),
                csv("calibrate", config, "mu,config,v_dd,fitted_mu,relative_error", &lines),
            ),
        ],
    })
}

/// Layer scan plus combination search for every requested epsilon.
pub fn search(config: &ExperimentConfig, args: &SearchArgs) -> Result<CommandOutput> {
    let l = load(config)?;
    let q = l.model.quantized()?;
    let eps_list = match args.epsilon {
        Some(e) => vec![e],
        None => config.epsilons.clone(),
    };
    let seed = seed0(config);
    let mut runs = Vec::new();
    let mut table = Vec::new();
    let mut scan = Vec::new();
    let mut header = String::new();
    for &eps in &eps_list {
        let ctx = SearchContext::new(&q, &l.model.params, &l.data, eps, &l.ber, seed, config.noise_scope)?;
        let store = ctx.scan_all(config.v_dd)?;
        let store = ctx.combine(store, config.search.max_subset)?;
        let row = emit_config_table(&store, &l.model.net, &l.model.name);
        log::info!("epsilon {eps}: {} adv {:.2}% clean {:.2}%", row.summary(), store.combined_adv_acc, store.clean_acc);
        header = row.csv_header();
        table.push(row.csv_line());
        for s in store.scans.values() {
            for t in &s.trials {
                scan.push(format!(
                    "{eps},{},{},{},{},{},{},{},{:?},{}",
                    s.layer,
                    l.model.net.layer_label(s.layer),
                    t.config.n8(),
                    t.config.n6(),
                    t.config.v_dd(),
                    t.adv_acc,
                    s.baseline_adv_acc,
                    s.label,
                    u8::from(t.config == s.best_config)
                ));
            }
        }
        runs.push(json!({ "epsilon": eps, "store": to_value(&store), "row": to_value(&row) }));
    }
    Ok(CommandOutput {
        body: json!({ "model": l.model.name, "v_dd": config.v_dd, "runs": runs }),
        files: vec![
            ("search_table.csv".into(), csv("search", config, &header, &table)),
            (
                "search_scan.csv".into(),
                csv(
                    "search",
                    config,
                    "epsilon,layer,layer_label,n8,n6,v_dd,adv_acc,baseline_adv_acc,label,best",
                    &scan,
                ),
            ),
        ],
    })
}

fn attack_layer(model: &Model, config: &ExperimentConfig, arg: Option<usize>) -> Result<usize> {
    let layers = attackable_layers(&model.net, config.attack.exclude_shortcuts);
    let layer = match arg.or(config.attack.layer) {
        Some(l) => l,
        None => *layers
            .get(1)
            .or(layers.first())
            .ok_or_else(|| Error::Config("model has no attackable layer".into()))?,
    };
    if !layers.contains(&layer) {
        return Err(Error::Config(format!("layer {layer} is not attackable; choose one of {layers:?}")));
    }
    Ok(layer)
}

fn attack_mu(config: &ExperimentConfig, arg: Option<f64>) -> Result<(f64, HybridConfig)> {
    let mu = arg.unwrap_or(config.mus[0]);
    let targets = config.calibration_targets()?;
    let cfg = weight_attack::config_for_mu(mu, &targets).map_err(|e| Error::Config(e.to_string()))?;
    Ok((mu, cfg))
}

fn options(config: &ExperimentConfig) -> SelectOptions {
    SelectOptions {
        resamples: config.attack.resamples,
        exclude_shortcuts: config.attack.exclude_shortcuts,
    }
}

/// Selects the best-matching section and attacks it once.
pub fn attack(config: &ExperimentConfig, args: &AttackArgs) -> Result<CommandOutput> {
    let l = load(config)?;
    let q = l.model.quantized()?;
    let layer = attack_layer(&l.model, config, args.layer)?;
    let (mu, cfg) = attack_mu(config, args.mu)?;
    let seed = seed0(config);
    let batch = l.data.head(config.attack.batch);
    let sel = weight_attack::select_section(&q, &l.model.params, layer, &cfg, &l.ber, &batch, &options(config), seed)?;
    let direction = match args.direction {
        DirectionArg::Noise => Direction::Noise,
        DirectionArg::Gradient => Direction::Gradient,
        DirectionArg::Random => Direction::Random { seed },
    };
    let how = AttackSettings {
        mu,
        mode: args.mode.unwrap_or(config.attack.mode),
        direction,
    };
    let report = weight_attack::attack_section(&q, &sel, &how, &l.data)?;
    log::info!(
        "layer {layer} section {} ({}): {:.2}% -> {:.2}%",
        sel.section.index,
        report.config_name,
        report.pre.accuracy,
        report.post.accuracy
    );
    Ok(CommandOutput {
        body: json!({
            "model": l.model.name,
            "selection": to_value(&sel),
            "report": to_value(&report),
        }),
        files: vec![],
    })
}

/// Sub-section sweep over every seed plus the per-layer sensitivity grid.
pub fn sweep(config: &ExperimentConfig, args: &SweepArgs) -> Result<CommandOutput> {
    let l = load(config)?;
    let q = l.model.quantized()?;
    let layer = attack_layer(&l.model, config, args.layer)?;
    let (mu, cfg) = attack_mu(config, args.mu)?;
    let batch = l.data.head(config.attack.batch);
    let fractions = &config.attack.fractions;
    let how = AttackSettings { mu, mode: config.attack.mode, direction: Direction::Noise };
    let mut lines = Vec::new();
    let mut per_seed = Vec::new();
    let mut sums = vec![(0.0, 0.0); fractions.len()];
    for &seed in &config.seeds {
        let sel = weight_attack::select_section(&q, &l.model.params, layer, &cfg, &l.ber, &batch, &options(config), seed)?;
        let reports = weight_attack::subsection_sweep(&q, &sel, fractions, &how, &l.data)?;
        for (k, r) in reports.iter().enumerate() {
            lines.push(format!(
                "{seed},{},{},{},{}",
                fractions[k], r.attacked_elements, r.post.accuracy, r.post.mean_confidence
            ));
            sums[k].0 += r.post.accuracy;
            sums[k].1 += r.post.mean_confidence;
        }
        per_seed.push(json!({ "seed": seed, "section": to_value(&sel.section), "reports": to_value(&reports) }));
    }
    let n = config.seeds.len() as f64;
    let mean: Vec<serde_json::Value> = fractions
        .iter()
        .zip(&sums)
        .map(|(f, (a, c))| {
            lines.push(format!("mean,{f},,{},{}", a / n, c / n));
            json!({ "fraction": f, "accuracy": a / n, "mean_confidence": c / n })
        })
        .collect();
    let mut mus = vec![0.0];
    mus.extend(config.mus.iter().copied().filter(|m| *m > 0.0));
    let cells = weight_attack::layer_sensitivity_report(
        &q,
        &l.model.params,
        &mus,
        &config.calibration_targets()?,
        &l.ber,
        &batch,
        &l.data,
        &options(config),
        seed0(config),
    )?;
    let sens: Vec<String> = cells.iter().map(sensitivity_line).collect();
    Ok(CommandOutput {
        body: json!({
            "model": l.model.name,
            "layer": layer,
            "mu": mu,
            "config": cfg.to_string(),
            "per_seed": per_seed,
            "mean": mean,
            "sensitivity": to_value(&cells),
        }),
        files: vec![
            (
                "sweep.csv".into(),
                csv("sweep", config, "seed,fraction,elements,accuracy,mean_confidence", &lines),
            ),
            (
                "sensitivity.csv".into(),
                csv(
                    "sweep",
                    config,
                    "layer,layer_label,mu,config,match_percent,accuracy,mean_confidence",
                    &sens,
                ),
            ),
        ],
    })
}

fn sensitivity_line(c: &SensitivityCell) -> String {
    let cfg = c.config.map(|c| format!("{}@{}", c.ratio(), c.v_dd())).unwrap_or_default();
    let m = c.match_percent.map(|m| m.to_string()).unwrap_or_default();
    format!("{},{},{},{cfg},{m},{},{}", c.layer, c.label, c.mu, c.accuracy, c.mean_confidence)
}

fn table_row(model: &Model, config: &ExperimentConfig, args: &TableArgs) -> Result<ConfigRow> {
    let Some(path) = &args.table else {
        let layers = model.net.activation_layers();
        return Ok(ConfigRow {
            model: model.name.clone(),
            epsilon: 0.0,
            labels: layers.iter().map(|&l| model.net.layer_label(l)).collect(),
            cells: vec![None; layers.len()],
            layers,
            v_dd: config.v_dd,
            clean_acc: model.reference_accuracy.unwrap_or(f64::NAN),
            deviation: 0.0,
        });
    };
    let text = std::fs::read_to_string(path)?;
    let rows = ConfigRow::parse_csv(&text, &model.net)?;
    rows.get(args.row)
        .cloned()
        .ok_or_else(|| Error::Config(format!("table has {} rows, row {} requested", rows.len(), args.row)))
}

/// Energy and area of both design paradigms for one config-table row.
pub fn cost(config: &ExperimentConfig, args: &TableArgs) -> Result<CommandOutput> {
    let model = load_model(&config.model)?;
    let row = table_row(&model, config, args)?;
    let shapes = model.net.shapes()?;
    let words: Vec<usize> = row.layers.iter().map(|&l| shapes[l].iter().product()).collect();
    let c = &config.cost;
    let designs = [
        ("all_6t_nominal", MemoryDesign::homogeneous(&row.layers, 0, c.v_nominal)),
        ("all_8t_scaled", MemoryDesign::homogeneous(&row.layers, 8, c.v_scaled)),
        ("energy_efficient", hwcost::paradigm_config(&row, Paradigm::EnergyEfficient, c)),
        ("area_efficient", hwcost::paradigm_config(&row, Paradigm::AreaEfficient, c)),
    ];
    let base = &designs[0].1;
    let mut lines = Vec::new();
    let mut out = Vec::new();
    for (name, d) in &designs {
        let e = d.energy(c, &words)?;
        let a = d.area(c, &words)?;
        let de = hwcost::energy_compare(d, base, c, &words)?;
        let da = hwcost::area_compare(d, base, c, &words)?;
        lines.push(format!("{name},{e},{a},{de},{da}"));
        out.push(json!({
            "design": name, "layout": to_value(d), "rails": d.rails(),
            "energy": e, "area": a, "energy_vs_6t_nominal_pct": de, "area_vs_6t_nominal_pct": da,
        }));
    }
    let ee = &designs[2].1;
    let ae = &designs[3].1;
    Ok(CommandOutput {
        body: json!({
            "model": model.name,
            "row": to_value(&row),
            "layer_words": words,
            "cost_model": to_value(c),
            "designs": out,
            "energy_efficient_vs_area_efficient": {
                "energy_pct": hwcost::energy_compare(ee, ae, c, &words)?,
                "area_pct": hwcost::area_compare(ee, ae, c, &words)?,
            },
        }),
        files: vec![(
            "cost.csv".into(),
            csv(
                "cost",
                config,
                "design,energy,area,energy_vs_6t_nominal_pct,area_vs_6t_nominal_pct",
                &lines,
            ),
        )],
    })
}

/// Clean and FGSM accuracy, without noise and with a table row's noise.
pub fn infer(config: &ExperimentConfig, args: &TableArgs) -> Result<CommandOutput> {
    let l = load(config)?;
    let q = l.model.quantized()?;
    let mut plans = vec![("none", NoisePlan::none())];
    if args.table.is_some() {
        let row = table_row(&l.model, config, args)?;
        let plan = NoisePlan::activations(row.layers.iter().zip(&row.cells).filter_map(|(&l, c)| c.map(|c| (l, c))));
        plans.push(("table", plan));
    }
    let seed = seed0(config);
    let mut eps = vec![0.0];
    eps.extend(config.epsilons.iter().copied().filter(|e| *e > 0.0));
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for &e in &eps {
        let data = attacks::fgsm_dataset(&l.model.net, &l.model.params, &l.data, e)?;
        for (name, plan) in &plans {
            let r = evaluate(&q, &data, plan, &l.ber, seed, config.noise_scope)?;
            lines.push(format!("{e},{name},{},{}", r.accuracy, r.mean_confidence));
            rows.push(json!({ "epsilon": e, "noise": name, "result": to_value(&r) }));
        }
    }
    Ok(CommandOutput {
        body: json!({
            "model": l.model.name,
            "reference_accuracy": l.model.reference_accuracy,
            "examples": l.data.len(),
            "rows": rows,
        }),
        files: vec![(
            "infer.csv".into(),
            csv("infer", config, "epsilon,noise,accuracy,mean_confidence", &lines),
        )],
    })
}
