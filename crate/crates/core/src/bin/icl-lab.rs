use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use icl_lab::bounds::{bound_table, theorem2_bound, BoundInputs};
use icl_lab::harness::{self, ExperimentConfig, RunSummary};

#[derive(Parser)]
#[command(name = "icl-lab", version, about = "Synthetic ICL pre-training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat `key = value` config file (a BoundInputs file for `bound`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides `seeds` from the config.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write corpora and topics to `<out>/data`.
    Gen,
    /// Train every run; trajectories and checkpoints.
    Train,
    /// Evaluate checkpoints from `train` into metrics.csv.
    Eval,
    /// Evaluate both bound forms from a BoundInputs file.
    Bound,
    /// Generate, train and evaluate the grid.
    Sweep,
    /// Random-transition pre-training with a structured control.
    Failure,
    /// Prior-model initialization against random initialization.
    PriorInit,
    /// Linear dynamical system experiment.
    Lds,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Bound => "bound",
            Command::Sweep => "sweep",
            Command::Failure => "failure",
            Command::PriorInit => "prior-init",
            Command::Lds => "lds",
        }
    }
}

fn bound(cli: &Cli) -> icl_lab::Result<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| icl_lab::LabError::Config("`bound` needs --config <BoundInputs file>".into()))?;
    let inputs = BoundInputs::parse(&fs::read_to_string(path)?)?;
    let mut csv = String::from("term,value\n");
    for (name, value) in bound_table(&theorem2_bound(&inputs)?) {
        csv.push_str(&format!("{name},{value}\n"));
    }
    print!("{csv}");
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("bounds.csv"), csv)?;
    }
    Ok(())
}

fn experiment(cli: &Cli) -> icl_lab::Result<RunSummary> {
    let name = cli.command.name();
    let base = ExperimentConfig::defaults_for(name);
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p, base)?,
        None => base,
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(seeds) = &cli.seeds {
        cfg.seeds = seeds.clone();
    }
    cfg.validate()?;
    let summary = match cli.command {
        Command::Gen => harness::generate_only(&cfg)?,
        Command::Train => harness::train_only(&cfg)?,
        Command::Eval => harness::evaluate_only(&cfg)?,
        Command::Sweep => harness::run_sweep(&cfg)?,
        Command::Failure => harness::run_failure_case(&cfg)?,
        Command::PriorInit => harness::run_prior_init(&cfg)?,
        Command::Lds => harness::run_lds(&cfg)?,
        Command::Bound => unreachable!(),
    };
    harness::write_manifest(name, &cfg)?;
    Ok(summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Bound = cli.command {
        return match bound(&cli) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        };
    }
    match experiment(&cli) {
        Ok(s) => {
            println!(
                "{}: {} runs, {} skipped, {} rows written, {} error rows",
                s.table.display(),
                s.runs,
                s.skipped,
                s.rows_written,
                s.error_rows
            );
            ExitCode::from(s.error_rows.min(255) as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
