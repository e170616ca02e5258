//! Batch experiment front-end.
//!
//! `saflbench run` executes one configured simulation and writes three
//! artifacts into the output directory: `<name>.metrics.csv` (one row per
//! aggregation), `<name>.summary.json` (convergence, oscillation, and
//! resource totals), and `<name>.config.toml` (the canonical config echo the
//! digest is taken over). `partition` writes just the client split,
//! `compare` runs a labelled set of configs side by side, and `report`
//! re-summarizes an existing metrics CSV.
//!
//! Exit codes: 0 when every requested artifact was written, 2 for
//! configuration errors, 1 for I/O failures.

use clap::{Args, Parser, Subcommand};
use saflbench::config::{load_compare, verify_shared, RunConfig};
use saflbench::data::train_test_split;
use saflbench::error::{Error, Result};
use saflbench::exec::with_thread_cap;
use saflbench::partition::{partition, save_partition};
use saflbench::presets;
use saflbench::report;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "saflbench",
    about = "Deterministic simulator for synchronous and semi-asynchronous federated learning",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the client partition for a config and print a per-client table.
    Partition(CommonArgs),
    /// Execute one run: metrics CSV, summary JSON, canonical config echo.
    Run(CommonArgs),
    /// Execute a labelled set of runs and emit a comparison table.
    Compare(CommonArgs),
    /// Re-summarize an existing metrics CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run config TOML (for `compare`: a spec listing [[member]] entries).
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in scenario name (`gap-demo`).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,

    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Override [seeds].run_seed before anything runs.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,

    /// Artifact base name (default: config file stem or preset name).
    #[arg(long, value_name = "NAME")]
    name: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Metrics CSV produced by `run`.
    #[arg(long, value_name = "PATH")]
    csv: PathBuf,

    /// Run config supplying the target accuracy and oscillation thresholds.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in scenario name (`gap-demo`).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,

    /// Optional directory to write `<name>.summary.json` into.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Artifact base name (default: CSV file stem).
    #[arg(long, value_name = "NAME")]
    name: Option<String>,
}

fn main() {
    let cli = Cli::parse();
    match with_thread_cap(|| dispatch(cli)) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(if e.is_config_error() { 2 } else { 1 });
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Partition(args) => cmd_partition(&args),
        Command::Run(args) => cmd_run(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::Report(args) => cmd_report(&args),
    }
}

/// Resolve `--config`/`--preset` into (artifact name, config).
fn resolve_run_config(args: &CommonArgs) -> Result<(String, RunConfig)> {
    let (name, mut cfg) = match (&args.config, &args.preset) {
        (Some(path), None) => (file_stem(path), RunConfig::load(path)?),
        (None, Some(preset)) => match presets::run_preset(preset) {
            Some(cfg) => (preset.clone(), cfg?),
            None => return Err(Error::invalid_args(format!("unknown preset `{preset}`"))),
        },
        _ => return Err(Error::invalid_args("pass exactly one of --config or --preset")),
    };
    if let Some(seed) = args.seed {
        cfg.seeds.run_seed = seed;
    }
    Ok((args.name.clone().unwrap_or(name), cfg))
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string())
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn cmd_partition(args: &CommonArgs) -> Result<()> {
    let (name, cfg) = resolve_run_config(args)?;
    cfg.validate()?;
    let full = cfg.load_full_dataset()?;
    let (train, _test) = train_test_split(&full, cfg.data.test_fraction, cfg.seeds.data_seed)?;
    let shards = partition(&train, &cfg.partition_spec()?, cfg.seeds.data_seed)?;
    ensure_out(&args.out)?;
    let path = args.out.join(format!("{name}.partition.txt"));
    save_partition(&shards, &path)?;

    println!("client  rows  labels");
    for shard in &shards {
        let labels: BTreeSet<usize> = shard.indices.iter().map(|&i| train.labels[i]).collect();
        println!("{:>6}  {:>4}  {:>6}", shard.client_id, shard.len(), labels.len());
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn run_one(name: &str, cfg: &RunConfig, out: &Path) -> Result<report::RunSummary> {
    let plan = cfg.build_plan()?;
    let log = plan.run()?;
    ensure_out(out)?;
    let csv_path = out.join(format!("{name}.metrics.csv"));
    report::write_csv(&log, &csv_path)?;
    let summary = report::build_summary(
        &log,
        cfg.metrics.target_accuracy,
        &cfg.metrics.oscillation_thresholds,
        Some(cfg.plan_memory_proxy(&plan)),
    );
    report::write_summary(&summary, &out.join(format!("{name}.summary.json")))?;
    std::fs::write(out.join(format!("{name}.config.toml")), cfg.canonical_toml()?)?;
    Ok(summary)
}

fn cmd_run(args: &CommonArgs) -> Result<()> {
    let (name, cfg) = resolve_run_config(args)?;
    let summary = run_one(&name, &cfg, &args.out)?;
    println!(
        "{name}: {} rounds, final accuracy {:.4}, best {:.4}, digest {}",
        summary.rounds,
        summary.totals.final_accuracy,
        summary.totals.best_accuracy,
        &summary.config_digest[..12]
    );
    println!("wrote {}", args.out.join(format!("{name}.metrics.csv")).display());
    println!("wrote {}", args.out.join(format!("{name}.summary.json")).display());
    println!("wrote {}", args.out.join(format!("{name}.config.toml")).display());
    Ok(())
}

fn resolve_compare_members(args: &CommonArgs) -> Result<Vec<(String, RunConfig)>> {
    let mut members = match (&args.config, &args.preset) {
        (Some(path), None) => load_compare(path)?,
        (None, Some(preset)) => match presets::compare_preset(preset) {
            Some(members) => members?,
            None => return Err(Error::invalid_args(format!("unknown preset `{preset}`"))),
        },
        _ => return Err(Error::invalid_args("pass exactly one of --config or --preset")),
    };
    if let Some(seed) = args.seed {
        for (_, cfg) in &mut members {
            cfg.seeds.run_seed = seed;
        }
    }
    for (label, _) in &members {
        let clean = !label.is_empty()
            && label
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
        if !clean {
            return Err(Error::CompareMismatch(format!(
                "label `{label}` is not usable as a file name"
            )));
        }
    }
    verify_shared(&members)?;
    Ok(members)
}

fn cmd_compare(args: &CommonArgs) -> Result<()> {
    let members = resolve_compare_members(args)?;
    let mut rows = Vec::with_capacity(members.len());
    for (label, cfg) in &members {
        let summary = run_one(label, cfg, &args.out)?;
        rows.push(report::CompareRow {
            label: label.clone(),
            summary,
        });
    }
    let csv = report::compare_csv(&rows)?;
    std::fs::write(args.out.join("compare.csv"), csv)?;
    let text = report::compare_text(&rows)?;
    std::fs::write(args.out.join("compare.txt"), &text)?;
    print!("{text}");
    println!("wrote {}", args.out.join("compare.csv").display());
    println!("wrote {}", args.out.join("compare.txt").display());
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let cfg = match (&args.config, &args.preset) {
        (Some(path), None) => RunConfig::load(path)?,
        (None, Some(preset)) => match presets::run_preset(preset) {
            Some(cfg) => cfg?,
            None => return Err(Error::invalid_args(format!("unknown preset `{preset}`"))),
        },
        _ => return Err(Error::invalid_args("pass exactly one of --config or --preset")),
    };
    cfg.validate()?;
    let mut log = report::read_csv(&args.csv)?;
    // The CSV carries neither the digest nor the model size; the config does.
    log.config_digest = cfg.digest()?;
    log.total_params = cfg.resolved_parameter_count()?;
    let summary = report::build_summary(
        &log,
        cfg.metrics.target_accuracy,
        &cfg.metrics.oscillation_thresholds,
        None,
    );
    let json = serde_json::to_string_pretty(&summary).expect("summary serialization is infallible");
    println!("{json}");
    if let Some(out) = &args.out {
        let name = args.name.clone().unwrap_or_else(|| file_stem(&args.csv));
        ensure_out(out)?;
        let path = out.join(format!("{name}.summary.json"));
        report::write_summary(&summary, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
