use std::path::{Path, PathBuf};
use std::process::ExitCode;

use airsgd::config::{apply_override, RunConfig};
use airsgd::experiment::{power_report, run, run_matrix, write_metrics_csv};
use airsgd::verify::run_suite;
use airsgd::Error;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "airsgd", version, about = "Over-the-air distributed SGD simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write a metrics CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a config field, e.g. `--set K=40` or `--set optimizer.learning_rate=0.01`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Directory for `metrics.csv`; defaults to the config's `metrics_path`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train over the cartesian product of swept values, one CSV per cell.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `KEY=V1,V2,...`; repeat for more axes.
        #[arg(long = "sweep", value_name = "KEY=V1,V2,...")]
        axes: Vec<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo checks of the channel statistics.
    VerifyStats {
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print a config template.
    Template {
        #[arg(value_enum)]
        name: TemplateName,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TemplateName {
    Minimal,
    PaperScale,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::NumericAbort { .. } | Error::NonFinite(_) => 3,
        _ => 1,
    }
}

fn parse_axis(spec: &str) -> Result<(String, Vec<Value>), Error> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("sweep '{spec}' is not KEY=V1,V2,...")))?;
    let values = values
        .split(',')
        .map(|raw| {
            let mut probe = serde_json::json!({});
            apply_override(&mut probe, "v", raw.trim())?;
            Ok(probe["v"].take())
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok((key.trim().to_string(), values))
}

fn cmd_run(config: &Path, overrides: &[String], out: Option<PathBuf>) -> Result<(), Error> {
    let cfg = RunConfig::load(config, overrides)?;
    let output = run(&cfg)?;
    let path = match (out, &cfg.metrics_path) {
        (Some(dir), _) => dir.join("metrics.csv"),
        (None, Some(p)) => p.clone(),
        (None, None) => PathBuf::from("metrics.csv"),
    };
    write_metrics_csv(&path, &cfg, overrides, &output.records)?;
    println!("final accuracy: {:.4}", output.final_accuracy());
    let power = power_report(&output.power);
    if !power.is_empty() {
        let mean = power.iter().sum::<f64>() / power.len() as f64;
        println!("average transmit power (device mean): {mean:.6}");
    }
    println!("metrics: {}", path.display());
    Ok(())
}

fn cmd_sweep(config: &Path, axes: &[String], overrides: &[String], out: &Path) -> Result<(), Error> {
    let base = RunConfig::load(config, overrides)?;
    let sweep = axes.iter().map(|a| parse_axis(a)).collect::<Result<Vec<_>, _>>()?;
    for p in run_matrix(&base, &sweep, out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_verify(trials: usize, seed: u64) -> Result<bool, Error> {
    let report = run_suite(trials, seed)?;
    println!("{report}");
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            overrides,
            out,
        } => cmd_run(&config, &overrides, out).map(|_| true),
        Command::Sweep {
            config,
            axes,
            overrides,
            out,
        } => cmd_sweep(&config, &axes, &overrides, &out).map(|_| true),
        Command::VerifyStats { trials, seed } => cmd_verify(trials, seed),
        Command::Template { name } => {
            let cfg = match name {
                TemplateName::Minimal => RunConfig::minimal(),
                TemplateName::PaperScale => RunConfig::paper_scale(),
            };
            println!("{}", cfg.to_json_pretty());
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("statistical check failed");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
