use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use federl_cli::config::ExperimentConfig;
use federl_cli::corrupt::{cmd_corrupt, parse_specs};
use federl_cli::generate::{cmd_generate, GenerateOptions};
use federl_cli::report::cmd_report;
use federl_cli::run::{cmd_run, Overrides};
use federl_cli::{exit_code, EXIT_BUDGET, EXIT_OK};
use federl_core::data::synth::SynthKind;
use federl_core::fed::Method;

#[derive(Parser)]
#[command(name = "federl", version, about = "Desk-scale federated learning with server-side robustification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured methods and write result tables.
    Run(RunArgs),
    /// Materialize corrupted copies of a labeled dataset.
    Corrupt(CorruptArgs),
    /// Print seed-averaged tables from a results directory.
    Report {
        /// Results directory written by `run`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the procedural datasets and an experiment config.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Results directory (overrides `output` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    /// Run this method only (cleanfl, robustfl, federl).
    #[arg(long)]
    method: Option<Method>,
    /// FedERL: run DART only after the final round.
    #[arg(long)]
    one_shot: bool,
    /// FedERL robustification period.
    #[arg(long)]
    trob: Option<usize>,
    /// Per-client time cap (s).
    #[arg(long)]
    budget_time: Option<f64>,
    /// Per-client energy cap (J).
    #[arg(long)]
    budget_energy: Option<f64>,
}

#[derive(Args)]
struct CorruptArgs {
    /// Labeled dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    filters: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [1u8, 3, 5])]
    severities: Vec<u8>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2400)]
    train: usize,
    #[arg(long, default_value_t = 500)]
    test: usize,
    #[arg(long, default_value_t = 2400)]
    proxy: usize,
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "ood_shapes")]
    proxy_kind: SynthKind,
    #[arg(long, default_value = "textures")]
    proxy_alt_kind: SynthKind,
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run(a) => {
            let mut cfg = ExperimentConfig::load(&a.config)?;
            Overrides {
                out: a.out,
                seed: a.seed,
                method: a.method,
                one_shot: a.one_shot,
                t_rob: a.trob,
                budget_time: a.budget_time,
                budget_energy: a.budget_energy,
            }
            .apply(&mut cfg);
            cfg.validate()?;
            let report = cmd_run(&cfg)?;
            println!("wrote {} files to {}", report.files.len(), report.out_dir.display());
            if !report.starved.is_empty() {
                eprintln!("budget covers no round for: {}", report.starved.join(", "));
                return Ok(EXIT_BUDGET);
            }
        }
        Command::Corrupt(a) => {
            let specs = parse_specs(&a.filters, &a.severities)?;
            let r = cmd_corrupt(&a.dataset, &specs, a.seed)?;
            println!("{} written, {} reused", r.written.len(), r.reused.len());
        }
        Command::Report { out } => print!("{}", cmd_report(&out)?),
        Command::Generate(a) => {
            let opts = GenerateOptions {
                train: a.train,
                test: a.test,
                proxy: a.proxy,
                size: a.size,
                channels: a.channels,
                seed: a.seed,
                proxy_kind: a.proxy_kind,
                proxy_alt_kind: a.proxy_alt_kind,
            };
            println!("{}", cmd_generate(&a.out, &opts)?.display());
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
