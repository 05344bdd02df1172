//! Command-line front end for the federated-learning simulator: dataset
//! generation, experiment execution, and report merging.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime error. Errors print
//! one machine-parseable line to stderr: `fedsim: error[<tag>]: <message>`
//! where `<tag>` is `validation` or `runtime`.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use fedsim_core::data::{read_csv_file, write_csv_file};
use fedsim_core::federation::RoundCheckpoint;
use fedsim_core::metrics::{megabytes, reports_to_csv};
use fedsim_core::models::{mlp_to_bytes, model_to_bytes};
use fedsim_core::{
    dirichlet_partition, make_proxy, make_synthetic, run_experiment, Dataset, ExperimentConfig,
    Method, MethodOutcome, RunArtifacts,
};

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Deterministic federated-learning simulator",
    long_about = "Runs five training regimes (centralized, standalone, parameter averaging, \
                  proxy-logit distillation, data-free generator distillation) over non-iid \
                  client shards of synthetic data, with byte-exact communication accounting \
                  and per-class AUC evaluation. Every output is reproducible from the seed."
)]
struct Cli {
    /// Experiment configuration file (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for all generated artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test/proxy CSVs plus a manifest of the resolved config.
    Gen,
    /// Run every configured method; write per-round CSVs, ledger CSVs and a
    /// JSON summary, then print a final table of mAUC and bytes per method.
    Run,
    /// Merge one or more run summaries into a comparison table (text + CSV).
    Report {
        /// Paths to summary.json files from previous runs.
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
    },
}

/// Marker for errors that indicate bad input rather than a failed run.
#[derive(Debug)]
struct Validation(String);

impl fmt::Display for Validation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Validation {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Validation(msg.into()))
}

/// Input problems exit 1, everything else exits 2.
fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    let is_validation = err.chain().any(|cause| {
        cause.downcast_ref::<Validation>().is_some()
            || matches!(
                cause.downcast_ref::<fedsim_core::Error>(),
                Some(
                    fedsim_core::Error::InvalidArgument(_)
                        | fedsim_core::Error::NotADistribution(_)
                        | fedsim_core::Error::Parse(_)
                )
            )
    });
    if is_validation {
        ("validation", 1)
    } else {
        ("runtime", 2)
    }
}

/// True when the failure is just a closed stdout (e.g. piping into `head`).
fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause
            .downcast_ref::<io::Error>()
            .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        // The consumer stopped reading; truncated output is not our error.
        Err(err) if is_broken_pipe(&err) => ExitCode::SUCCESS,
        Err(err) => {
            let (tag, code) = classify(&err);
            eprintln!("fedsim: error[{tag}]: {err:#}");
            ExitCode::from(code)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen => {
            let (config, seed) = load_config(cli)?;
            cmd_gen(&config, seed, &cli.out)
        }
        Command::Run => {
            let (config, seed) = load_config(cli)?;
            cmd_run(&config, seed, &cli.out)
        }
        Command::Report { summaries } => cmd_report(summaries, &cli.out),
    }
}

/// Parse + validate the config and resolve the effective seed.
fn load_config(cli: &Cli) -> Result<(ExperimentConfig, u64)> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.experiment.seed = seed;
    }
    config.validate()?;
    let seed = config.experiment.seed;
    Ok((config, seed))
}

/// Write the resolved config next to the artifacts it produced.
fn write_manifest(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let manifest = config.to_toml_string()?;
    fs::write(out.join("manifest.toml"), manifest).context("writing manifest.toml")?;
    Ok(())
}

/// The three datasets of one experiment, derived from a single seed: the
/// train set on the seed itself, the test set on seed+1, and the proxy set
/// on the seed's dedicated proxy stream.
fn build_datasets(config: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let d = &config.data;
    let mode = config.experiment.task_mode;
    let train = make_synthetic(
        d.num_classes,
        d.feature_dim,
        d.train_examples,
        d.class_separation,
        mode,
        seed,
    )?;
    let test = make_synthetic(
        d.num_classes,
        d.feature_dim,
        d.test_examples,
        d.class_separation,
        mode,
        seed + 1,
    )?;
    let proxy_examples = d.proxy_examples.max(1);
    let proxy = make_proxy(
        d.num_classes,
        d.feature_dim,
        proxy_examples,
        d.class_separation,
        mode,
        seed,
    )?;
    Ok((train, test, proxy))
}

fn cmd_gen(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (train, test, proxy) = build_datasets(config, seed)?;
    write_csv_file(&train, &out.join("train.csv"))?;
    write_csv_file(&test, &out.join("test.csv"))?;
    write_csv_file(&proxy, &out.join("proxy.csv"))?;
    write_manifest(config, out)?;
    writeln!(
        io::stdout(),
        "generated {} train, {} test, {} proxy examples under {}",
        train.len(),
        test.len(),
        proxy.len(),
        out.display()
    )?;
    Ok(())
}

/// One run's complete, self-describing summary document.
#[derive(Debug, Serialize, Deserialize)]
struct RunSummary {
    seed: u64,
    config: ExperimentConfig,
    methods: Vec<MethodOutcome>,
}

/// Load datasets from a prior `gen` if present, otherwise generate in memory.
fn load_or_build_datasets(
    config: &ExperimentConfig,
    seed: u64,
    out: &Path,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (train_p, test_p, proxy_p) = (
        out.join("train.csv"),
        out.join("test.csv"),
        out.join("proxy.csv"),
    );
    if train_p.exists() && test_p.exists() && proxy_p.exists() {
        let mode = config.experiment.task_mode;
        let train = read_csv_file(&train_p, mode)?;
        let test = read_csv_file(&test_p, mode)?;
        let proxy = read_csv_file(&proxy_p, mode)?;
        Ok((train, test, proxy))
    } else {
        build_datasets(config, seed)
    }
}

fn write_checkpoints(method: Method, artifacts: &RunArtifacts, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for cp in &artifacts.checkpoints {
        let RoundCheckpoint {
            round,
            model,
            predictor,
            generator,
        } = cp;
        let stem = format!("{}_round{round:02}", method.as_str());
        if let Some(m) = model {
            fs::write(dir.join(format!("{stem}_model.bin")), model_to_bytes(m))?;
        }
        if let Some(p) = predictor {
            fs::write(dir.join(format!("{stem}_predictor.bin")), mlp_to_bytes(p))?;
        }
        if let Some(g) = generator {
            fs::write(dir.join(format!("{stem}_generator.bin")), mlp_to_bytes(&g.net))?;
        }
    }
    Ok(())
}

fn cmd_run(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let methods = config.methods()?;
    let (train, test, proxy) = load_or_build_datasets(config, seed, out)?;

    let partitions = dirichlet_partition(&train, &config.partition_spec(seed))?;
    let exp = config.experiment_for(seed);

    let mut outcomes = Vec::with_capacity(methods.len());
    for method in methods {
        let proxy_arg = (method == Method::FedKD).then_some(&proxy);
        let artifacts = run_experiment(method, &partitions, &test, proxy_arg, &exp)
            .with_context(|| format!("running {method}"))?;

        if config.output.per_round_csv {
            let csv = reports_to_csv(&artifacts.outcome.rounds);
            fs::write(out.join(format!("{method}_rounds.csv")), csv)?;
        }
        if config.output.ledger_csv {
            fs::write(
                out.join(format!("{method}_ledger.csv")),
                artifacts.ledger.to_csv(),
            )?;
        }
        if config.output.checkpoints {
            write_checkpoints(method, &artifacts, &out.join("checkpoints"))?;
        }
        outcomes.push(artifacts.outcome);
    }

    let summary = RunSummary {
        seed,
        config: config.clone(),
        methods: outcomes,
    };
    let json = serde_json::to_string_pretty(&summary).context("serializing summary")?;
    fs::write(out.join("summary.json"), &json)?;
    write_manifest(config, out)?;

    print_final_table(&summary.methods)?;
    writeln!(io::stdout(), "\nartifacts written under {}", out.display())?;
    Ok(())
}

fn print_final_table(outcomes: &[MethodOutcome]) -> io::Result<()> {
    let mut stdout = io::stdout().lock();
    writeln!(
        stdout,
        "{:<12} {:>10} {:>10} {:>9} {:>16} {:>12}",
        "method", "final mAUC", "best mAUC", "conv rnd", "bytes to conv", "total MB"
    )?;
    for o in outcomes {
        writeln!(
            stdout,
            "{:<12} {:>10.4} {:>10.4} {:>9} {:>16} {:>12.6}",
            o.method,
            o.final_mauc,
            o.best_mauc,
            o.convergence_round,
            o.bytes_to_convergence_up + o.bytes_to_convergence_down,
            o.totals.megabytes_total,
        )?;
    }
    Ok(())
}

/// Canonical presentation order for methods in merged reports.
fn method_order(name: &str) -> usize {
    Method::ALL
        .iter()
        .position(|m| m.as_str() == name)
        .unwrap_or(Method::ALL.len())
}

fn cmd_report(paths: &[PathBuf], out: &Path) -> Result<()> {
    let mut merged: Vec<MethodOutcome> = Vec::new();
    for path in paths {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading summary {}", path.display()))?;
        let summary: RunSummary = serde_json::from_str(&text)
            .map_err(|e| invalid(format!("malformed summary {}: {e}", path.display())))?;
        for outcome in summary.methods {
            // later files win on method collisions
            merged.retain(|o| o.method != outcome.method);
            merged.push(outcome);
        }
    }
    if merged.is_empty() {
        return Err(invalid("no method outcomes found in the given summaries"));
    }
    merged.sort_by_key(|o| method_order(&o.method));

    let table = render_comparison(&merged)?;
    write!(io::stdout(), "{table}")?;

    fs::create_dir_all(out)?;
    let csv = comparison_csv(&merged)?;
    fs::write(out.join("report.csv"), csv)?;
    writeln!(
        io::stdout(),
        "\nmerged CSV written to {}",
        out.join("report.csv").display()
    )?;
    Ok(())
}

fn last_round(o: &MethodOutcome) -> Result<&fedsim_core::RoundReport> {
    o.rounds
        .last()
        .ok_or_else(|| invalid(format!("summary for {} has no rounds", o.method)))
}

/// Aligned text table: one row per class (AUC [ci_low, ci_high]), then mAUC
/// and bandwidth rows; one column per method.
fn render_comparison(outcomes: &[MethodOutcome]) -> Result<String> {
    use std::fmt::Write as _;

    let mut classes: Vec<usize> = Vec::new();
    for o in outcomes {
        for &c in &last_round(o)?.auc.classes {
            if !classes.contains(&c) {
                classes.push(c);
            }
        }
    }
    classes.sort_unstable();

    const CELL: usize = 24;
    let mut out = String::new();
    write!(out, "{:<10}", "class")?;
    for o in outcomes {
        write!(out, " {:>CELL$}", o.method)?;
    }
    out.push('\n');

    for &class in &classes {
        write!(out, "{class:<10}")?;
        for o in outcomes {
            let report = &last_round(o)?.auc;
            let cell = match report.classes.iter().position(|&c| c == class) {
                Some(i) => format!(
                    "{:.4} [{:.4}, {:.4}]",
                    report.auc[i], report.ci_low[i], report.ci_high[i]
                ),
                None => "-".to_string(),
            };
            write!(out, " {cell:>CELL$}")?;
        }
        out.push('\n');
    }

    write!(out, "{:<10}", "mAUC")?;
    for o in outcomes {
        write!(out, " {:>CELL$.4}", o.final_mauc)?;
    }
    out.push('\n');

    write!(out, "{:<10}", "MB total")?;
    for o in outcomes {
        write!(out, " {:>CELL$.6}", megabytes(o.totals.bytes_total))?;
    }
    out.push('\n');
    Ok(out)
}

fn comparison_csv(outcomes: &[MethodOutcome]) -> Result<String> {
    use std::fmt::Write as _;

    let mut out =
        String::from("method,class,auc,ci_low,ci_high,final_mauc,bytes_total,megabytes_total\n");
    for o in outcomes {
        let report = &last_round(o)?.auc;
        for (i, &class) in report.classes.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                o.method,
                class,
                report.auc[i],
                report.ci_low[i],
                report.ci_high[i],
                o.final_mauc,
                o.totals.bytes_total,
                megabytes(o.totals.bytes_total),
            );
        }
    }
    Ok(out)
}
