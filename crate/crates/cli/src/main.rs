use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use paramstudy::prompt::parse_prompt_with_nominals;
use paramstudy::study::render_spec;
use paramstudy::workflow::{self, RunOptions, WorkflowError, WORKSPACE_ENV};

#[derive(Parser)]
#[command(name = "paramstudy", version, about = "Parameter studies with active-subspace analysis")]
struct Cli {
    /// Override the sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the oversampling factor (2 to 10).
    #[arg(long, global = true)]
    theta: Option<f64>,
    /// Root directory for study directories.
    #[arg(long, global = true, env = WORKSPACE_ENV)]
    workspace: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the study and evaluate every case, resuming earlier work.
    Run {
        spec: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Fit surrogates and write the analysis bundle.
    Analyze { study_dir: PathBuf },
    /// Solve the study goal on the fitted surrogate and validate it.
    Optimize { study_dir: PathBuf },
    /// Re-render report.txt from stored artifacts.
    Report { study_dir: PathBuf },
    /// Derive a study file from a prompt and print it.
    Parse {
        prompt: String,
        /// Nominal value for a parameter without a stated range, as NAME=VALUE.
        #[arg(long = "nominal", value_parser = parse_nominal)]
        nominals: Vec<(String, f64)>,
    },
}

fn parse_nominal(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    let value = value.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((name.trim().to_string(), value))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> Result<(), WorkflowError> {
    match cli.command {
        Command::Run { spec, workers } => {
            let opts = RunOptions { workers, seed: cli.seed, theta: cli.theta, workspace: cli.workspace, stop_after: None };
            let summary = workflow::cmd_run(&spec, &opts)?;
            println!(
                "{}: {} ok of {} ({} executed, {} reused)",
                summary.study_dir.display(),
                summary.dataset.n_ok(),
                summary.dataset.records.len(),
                summary.executed,
                summary.reused
            );
        }
        Command::Analyze { study_dir } => {
            workflow::cmd_analyze(&study_dir)?;
            print!("{}", std::fs::read_to_string(study_dir.join(workflow::REPORT_FILE)).unwrap_or_default());
        }
        Command::Optimize { study_dir } => {
            workflow::cmd_optimize(&study_dir)?;
            print!("{}", std::fs::read_to_string(study_dir.join(workflow::REPORT_FILE)).unwrap_or_default());
        }
        Command::Report { study_dir } => print!("{}", workflow::cmd_report(&study_dir)?),
        Command::Parse { prompt, nominals } => {
            let nominals: BTreeMap<String, f64> = nominals.into_iter().collect();
            let spec = parse_prompt_with_nominals(&prompt, &nominals)
                .map_err(|e| WorkflowError::Usage(e.to_string()))?;
            print!("{}", render_spec(&spec));
        }
    }
    Ok(())
}
