use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use thiserror::Error;

use solarvlc::config::parse_value;
use solarvlc::sim::{summary_json, write_trace_csv};
use solarvlc::{render_report, report_rows, run_simulation, sweep, SimConfig, SimError};

#[derive(Parser, Debug)]
#[command(
    name = "solarvlc",
    version,
    about = "Batteryless solar VLC receiver simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one scenario and write trace.csv and summary.json.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Record every step instead of decimating away from events.
        #[arg(long)]
        full_trace: bool,
    },
    /// Simulate once per value of one config key.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Dotted config key, e.g. channel.noise_sigma.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Simulate and print the per-state energy table.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Check config invariants without simulating.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config; the built-in default when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// KEY=VALUE, applied after the file in the order given.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Noise and offset seed (channel.seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::ConfigInvalid(_) | SimError::UnknownParameter(_) | SimError::Config(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn load(common: &Common) -> Result<SimConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => SimConfig::load(path).map_err(|e| CliError::Config(e.to_string()))?,
        None => SimConfig::default(),
    };
    for assignment in &common.overrides {
        cfg = cfg
            .with_override_str(assignment)
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    if let Some(seed) = common.seed {
        cfg.channel.seed = seed;
    }
    Ok(cfg)
}

fn checked(common: &Common) -> Result<SimConfig, CliError> {
    let cfg = load(common)?;
    let violations = cfg.validate();
    if violations.is_empty() {
        Ok(cfg)
    } else {
        let lines: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        Err(CliError::Config(lines.join("\n")))
    }
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn run(common: &Common, out: &Path, full_trace: bool) -> Result<(), CliError> {
    let mut cfg = checked(common)?;
    cfg.full_trace |= full_trace;
    prepare_out(out)?;
    let result = run_simulation(&cfg)?;

    let trace_path = out.join("trace.csv");
    let file = fs::File::create(&trace_path).map_err(|e| io_err(&trace_path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_trace_csv(&result.trace, &mut w)?;
    w.flush().map_err(|e| io_err(&trace_path, e))?;
    write_file(
        &out.join("summary.json"),
        &(summary_json(&result.metrics) + "\n"),
    )?;
    log::info!(
        "{} records, {}/{} frames decoded",
        result.trace.len(),
        result.metrics.frames_decoded,
        result.metrics.frames_sent
    );
    Ok(())
}

fn run_sweep(common: &Common, out: &Path, param: &str, values: &[String]) -> Result<(), CliError> {
    let cfg = checked(common)?;
    let values: Vec<Value> = values.iter().map(|v| parse_value(v.trim())).collect();
    for v in &values {
        let c = cfg
            .with_override(param, v.clone())
            .map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(first) = c.validate().first() {
            return Err(CliError::Config(format!("{param}={v}: {first}")));
        }
    }
    prepare_out(out)?;
    let results = sweep(&cfg, param, &values)?;

    let mut runs = Vec::with_capacity(results.len());
    for (i, (value, metrics)) in results.iter().enumerate() {
        let name = format!("summary_{i:03}.json");
        write_file(&out.join(&name), &(summary_json(metrics) + "\n"))?;
        runs.push(json!({ "value": value, "summary": name, "metrics": metrics }));
    }
    let combined = json!({ "parameter": param, "runs": runs });
    let text = serde_json::to_string_pretty(&combined).expect("sweep serializes");
    write_file(&out.join("sweep.json"), &(text + "\n"))
}

fn report(common: &Common) -> Result<(), CliError> {
    let cfg = checked(common)?;
    let result = run_simulation(&cfg)?;
    print!("{}", render_report(&report_rows(&result.metrics)));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Bad arguments count as a config error; --help and --version succeed.
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match &cli.command {
        Command::Run {
            common,
            out,
            full_trace,
        } => run(common, out, *full_trace),
        Command::Sweep {
            common,
            out,
            param,
            values,
        } => run_sweep(common, out, param, values),
        Command::Report { common } => report(common),
        Command::Validate { common } => checked(common).map(|_| ()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
