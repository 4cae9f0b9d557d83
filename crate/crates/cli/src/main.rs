use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use phagocyte_cli::config::{ConfigError, ExperimentConfig, Preset, TraceRef};
use phagocyte_cli::{expand, parse_config, plan};

/// Runs worm-containment and external-attack experiments.
#[derive(Parser, Debug)]
#[command(name = "phagocyte", version)]
struct Args {
    /// JSON config; keys left out take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Trace preset (trace1..trace6) or trace file.
    #[arg(long)]
    trace: Option<String>,
    /// Share of the full trace to simulate, in (0, 1].
    #[arg(long)]
    scale: Option<f64>,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the run matrix and exit.
    #[arg(long)]
    dry_run: bool,
    /// Print the effective config as JSON and exit.
    #[arg(long)]
    print_config: bool,
}

const CONFIG_ERROR: u8 = 2;

fn resolve(args: &Args) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &args.config {
        Some(path) => parse_config(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok())?;
    if let Some(p) = args.preset {
        cfg.preset = Some(p);
    }
    if let Some(t) = &args.trace {
        cfg.trace = Some(TraceRef::try_from(t.clone()).map_err(|message| ConfigError::Invalid {
            path: "trace".into(),
            message,
        })?);
    }
    if let Some(s) = args.scale {
        cfg.scale_factor = s;
    }
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match resolve(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    if args.print_config {
        println!("{}", cfg.to_json());
        return ExitCode::SUCCESS;
    }
    if args.dry_run {
        let cells = expand(&cfg);
        for c in &cells {
            println!("{c}");
        }
        print!("{}", plan::describe_axes(&cells));
        return ExitCode::SUCCESS;
    }
    match phagocyte_cli::run(&cfg) {
        Ok(report) if report.failures() == 0 => {
            eprintln!("{} runs written to {}", report.results.len(), report.output_dir.display());
            ExitCode::SUCCESS
        }
        Ok(report) => {
            eprintln!(
                "{} of {} runs failed; results of the rest are in {}",
                report.failures(),
                report.results.len(),
                report.output_dir.display()
            );
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error writing results: {e}");
            ExitCode::FAILURE
        }
    }
}
