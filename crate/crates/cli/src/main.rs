use std::path::PathBuf;
use std::process::ExitCode;

use bidlab_cli::config::RunConfig;
use bidlab_cli::{CliError, Experiment};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bidlab",
    version,
    about = "Monotone bid parameterizations and market validity experiments",
    after_help = "Run outputs go under $BIDLAB_OUTPUT_ROOT when it is set.\nExit status: 0 ok, 1 configuration error, 2 runtime failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config and the output root.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Worker threads for independent jobs.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Rebuild summaries from a run directory.
    Report { dir: PathBuf },
    /// Necessary-condition diagnostics for all four mappings.
    NcCheck {
        /// Optional config; its experiment must be nc-check.
        config: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check the enumerated benchmark against re-enumeration and brute force.
    OracleAudit {
        config: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn load(path: Option<PathBuf>, want: Option<Experiment>) -> Result<RunConfig, CliError> {
    let cfg = match path {
        Some(p) => RunConfig::load(&p)?,
        None => {
            let exp = want.expect("subcommands without a config name their experiment");
            RunConfig::parse(&format!("{{\"experiment\": \"{exp}\"}}"), exp.name())?
        }
    };
    if let Some(w) = want {
        if cfg.experiment != w {
            return Err(CliError::Config(format!(
                "this subcommand runs {w}; the config selects {}",
                cfg.experiment
            )));
        }
    }
    Ok(cfg)
}

fn run(
    path: Option<PathBuf>,
    want: Option<Experiment>,
    output: Option<PathBuf>,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let mut cfg = load(path, want)?;
    if let Some(o) = output {
        cfg.output_dir = o;
    }
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        cfg.threads = t;
    }
    eprintln!("bidlab: {} -> {}", cfg.experiment, cfg.output_dir.display());
    bidlab_cli::run(&cfg)?;
    eprintln!("bidlab: done");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            output,
            threads,
        } => run(Some(config), None, output, threads),
        Command::NcCheck {
            config,
            output,
            threads,
        } => run(config, Some(Experiment::NcCheck), output, threads),
        Command::OracleAudit {
            config,
            output,
            threads,
        } => run(config, Some(Experiment::OracleAudit), output, threads),
        Command::Report { dir } => {
            let out = bidlab_cli::report(&dir)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!(
                "bidlab: {} summary rows, {} exploitability tables",
                out.rows.len(),
                out.exploitability.len()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bidlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
