//! File formats, experiment configuration and the subcommand drivers.

pub mod commands;
pub mod config;
pub mod format;
pub mod report;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use commands::{AttackArgs, SearchArgs, SweepArgs, TableArgs};
use config::ExperimentConfig;
use report::{CommandOutput, Envelope};

const CSV_HELP: &str = "\
Every CSV starts with a `# htsim <command> config_hash=<sha256> seeds=<a;b;..>` line.

characterize.csv  n8,n6,v_dd,p_flip,expected_mu,empirical_mu
calibration.csv   mu,config,v_dd,fitted_mu,relative_error
search_table.csv  model,epsilon,layer_<label>...,v_dd,clean_acc,deviation
                  (a layer cell is n8/n6 or H for homogeneous; labels mark
                  pooling as (P) and residual adds as (S))
search_scan.csv   epsilon,layer,layer_label,n8,n6,v_dd,adv_acc,baseline_adv_acc,label,best
sweep.csv         seed,fraction,elements,accuracy,mean_confidence (seed `mean` averages)
sensitivity.csv   layer,layer_label,mu,config,match_percent,accuracy,mean_confidence
cost.csv          design,energy,area,energy_vs_6t_nominal_pct,area_vs_6t_nominal_pct
infer.csv         epsilon,noise,accuracy,mean_confidence

Accuracies and confidences are percentages. Exit codes: 0 ok, 2 config error,
3 format error, 4 runtime error. HTSIM_THREADS caps the worker threads.";

#[derive(Debug, Parser)]
#[command(name = "htsim", version, about = "Hybrid 8T-6T SRAM surgical-noise simulator", after_long_help = CSV_HELP)]
pub struct Cli {
    /// Experiment config (TOML).
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for reports.
    #[arg(long, short, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mean surgical noise over the n6 x voltage grid (characterize.csv).
    Characterize,
    /// Fit a BER table to the calibration targets (ber_table.toml, calibration.csv).
    Calibrate,
    /// Layer scan and combination search under FGSM (search_table.csv, search_scan.csv).
    Search(SearchArgs),
    /// Select a weight section and attack it (attack.json).
    Attack(AttackArgs),
    /// Sub-section sweep and per-layer sensitivity (sweep.csv, sensitivity.csv).
    Sweep(SweepArgs),
    /// Energy and area of the two design paradigms (cost.csv).
    Cost(TableArgs),
    /// Clean and adversarial accuracy (infer.csv).
    Infer(TableArgs),
    /// Re-run a report from its embedded config and compare the outputs.
    Replay {
        /// Report JSON written by another subcommand.
        report: PathBuf,
    },
}

fn args_value<T: serde::Serialize>(a: &T) -> serde_json::Value {
    serde_json::to_value(a).expect("arguments serialize")
}

/// Runs `command` with its serialised arguments.
pub fn execute(command: &str, args: &serde_json::Value, config: &ExperimentConfig) -> Result<CommandOutput> {
    let parse = |e: serde_json::Error| Error::Config(format!("arguments for {command}: {e}"));
    match command {
        "characterize" => commands::characterize(config),
        "calibrate" => commands::calibrate(config),
        "search" => commands::search(config, &serde_json::from_value(args.clone()).map_err(parse)?),
        "attack" => commands::attack(config, &serde_json::from_value(args.clone()).map_err(parse)?),
        "sweep" => commands::sweep(config, &serde_json::from_value(args.clone()).map_err(parse)?),
        "cost" => commands::cost(config, &serde_json::from_value(args.clone()).map_err(parse)?),
        "infer" => commands::infer(config, &serde_json::from_value(args.clone()).map_err(parse)?),
        other => Err(Error::Config(format!("unknown command {other:?}"))),
    }
}

/// Runs a subcommand and writes its report; returns the report path.
pub fn run_and_write(
    command: &str,
    args: serde_json::Value,
    extra_inputs: &[&Path],
    config: &ExperimentConfig,
    out: &Path,
) -> Result<PathBuf> {
    let output = execute(command, &args, config)?;
    let env = report::envelope(command, args, config, extra_inputs, &output)?;
    report::write_report(out, &env, &output)
}

/// Differences between a report on disk and a fresh run of it.
pub fn replay(path: &Path) -> Result<Vec<String>> {
    let env: Envelope = report::read_envelope(path)?;
    report::verify_provenance(&env)?;
    let fresh = execute(&env.command, &env.args, &env.config)?;
    let mut diffs = Vec::new();
    if report::body_text(&fresh.body) != report::body_text(&env.body) {
        diffs.push(format!("{}: body differs", path.display()));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let names: Vec<&String> = fresh.files.iter().map(|(n, _)| n).collect();
    if names != env.outputs.iter().collect::<Vec<_>>() {
        diffs.push(format!("output files {names:?} differ from {:?}", env.outputs));
    }
    for (name, text) in &fresh.files {
        match std::fs::read_to_string(dir.join(name)) {
            Ok(old) if old == *text => {}
            Ok(_) => diffs.push(format!("{name} differs")),
            Err(e) => diffs.push(format!("{name}: {e}")),
        }
    }
    Ok(diffs)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Format { .. } => 3,
        _ => 4,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Command::Replay { report } = &cli.command {
        let diffs = replay(report)?;
        if diffs.is_empty() {
            println!("replay of {} is byte-identical", report.display());
            return Ok(());
        }
        for d in &diffs {
            eprintln!("{d}");
        }
        return Err(Error::Invalid(format!("{} output(s) differ on replay", diffs.len())));
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let config = ExperimentConfig::load(path)?;
    let (name, args, extra): (&str, serde_json::Value, Vec<PathBuf>) = match cli.command {
        Command::Characterize => ("characterize", serde_json::json!({}), vec![]),
        Command::Calibrate => ("calibrate", serde_json::json!({}), vec![]),
        Command::Search(a) => ("search", args_value(&a), vec![]),
        Command::Attack(a) => ("attack", args_value(&a), vec![]),
        Command::Sweep(a) => ("sweep", args_value(&a), vec![]),
        Command::Cost(a) => {
            let a = a.resolve()?;
            let extra = a.inputs().iter().map(|p| p.to_path_buf()).collect();
            ("cost", args_value(&a), extra)
        }
        Command::Infer(a) => {
            let a = a.resolve()?;
            let extra = a.inputs().iter().map(|p| p.to_path_buf()).collect();
            ("infer", args_value(&a), extra)
        }
        Command::Replay { .. } => unreachable!("handled above"),
    };
    let extra: Vec<&Path> = extra.iter().map(PathBuf::as_path).collect();
    let written = run_and_write(name, args, &extra, &config, &cli.out)?;
    println!("{}", written.display());
    Ok(())
}

/// Entry point of the `htsim` binary; returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = std::env::var("HTSIM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
