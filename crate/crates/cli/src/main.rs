use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nrfmpc_cli::commands::{cmd_design, cmd_report, cmd_simulate, cmd_verify, parse_seeds, CliError, Outcome};
use nrfmpc_cli::config::RunConfig;

/// Two-layer distributed control: offline design, simulation and trace checks.
#[derive(Parser)]
#[command(name = "nrfmpc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON); the platoon benchmark when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Design artifact file.
    #[arg(long)]
    artifacts: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the offline pipeline and write the artifact file and report.
    Design(Common),
    /// Simulate the closed loop for one or more seeds.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Inclusive range `a..b`.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Check traces against the constraint sets.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Solve-time statistics across traces.
    Report {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::platoon_default(),
    };
    if let Some(o) = &common.out {
        if common.artifacts.is_none() {
            cfg.artifacts = o.join("artifacts.json");
        }
        cfg.out_dir = o.clone();
    }
    if let Some(a) = &common.artifacts {
        cfg.artifacts = a.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Design(common) => Ok(cmd_design(&load(&common)?)?.1),
        Command::Simulate { common, seed, seeds, steps } => {
            let mut cfg = load(&common)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(s) = seeds {
                cfg.seeds = parse_seeds(&s)?;
            }
            if let Some(n) = steps {
                cfg.steps = n;
            }
            cfg.validate()?;
            Ok(cmd_simulate(&cfg)?.1)
        }
        Command::Verify { common, traces } => Ok(cmd_verify(&load(&common)?, &traces)?.1),
        Command::Report { out, traces } => Ok(cmd_report(&traces, out.as_deref())?.1),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = std::env::var("NRFMPC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli) {
        Ok(out) => {
            for l in &out.lines {
                println!("{l}");
            }
            ExitCode::from(if out.passed { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_string(), "exit_code": e.exit_code() }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
