//! `dgrm`: run experiments, check oracle bounds and validate reward machines.
//!
//! Exit codes: 0 ok, 1 a check failed, 2 bad usage or input.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use dgrm::experiment::{resolve_out_dir, run_experiment, verify_bounds, ExperimentError, ExperimentSpec, RunOptions};
use dgrm::metrics::write_atomic;
use dgrm::reward_machine::RewardMachine;

#[derive(Parser)]
#[command(name = "dgrm", version, about = "Decentralized actor-critic learning with reward machines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (kappa, seed) cell of a spec and write metrics.
    Run {
        #[arg(long)]
        spec: PathBuf,
        /// Output directory; falls back to the spec's out_dir, then DGRM_OUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Keep finished cells and continue unfinished ones from checkpoints.
        #[arg(long)]
        resume: bool,
        /// Recompute the summary from the written CSVs and compare.
        #[arg(long)]
        audit: bool,
    },
    /// Check the decay, truncation and gradient bounds with the exact oracle.
    VerifyBounds {
        #[arg(long)]
        spec: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reward machine tools.
    Rm {
        #[command(subcommand)]
        command: RmCommand,
    },
}

#[derive(Subcommand)]
enum RmCommand {
    /// Parse a machine file and print validation diagnostics.
    Check { file: PathBuf },
}

enum Failure {
    Check(anyhow::Error),
    Usage(anyhow::Error),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_usage() {
            Failure::Usage(e.into())
        } else {
            Failure::Check(e.into())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            spec,
            out,
            workers,
            resume,
            audit,
        } => {
            let spec = ExperimentSpec::load(&spec)?;
            let opts = RunOptions {
                out_dir: resolve_out_dir(out, &spec)?,
                workers,
                resume,
                audit,
            };
            let report = run_experiment(&spec, &opts)?;
            for k in &report.summary.kappas {
                println!("kappa={} mean={:.4} std={:.4} seeds={}", k.kappa, k.mean, k.std, k.seeds.len());
            }
            println!(
                "{} cells ({} reused) written to {}",
                report.cells,
                report.reused,
                opts.out_dir.display()
            );
            if audit {
                println!("audit ok");
            }
            if let Some(b) = report.bounds {
                println!("bound violations: {}", b.violations);
                if b.violations > 0 {
                    return Err(ExperimentError::BoundViolation(b.violations).into());
                }
            }
            Ok(())
        }
        Command::VerifyBounds { spec, out } => {
            let spec = ExperimentSpec::load(&spec)?;
            let outcome = verify_bounds(&spec)?;
            for p in &outcome.policies {
                for e in &p.report.entries {
                    println!(
                        "policy={} agent={} kappa={} decay_margin={:.3e} truncation_margin={:.3e} gradient_margin={:.3e}",
                        p.policy_seed, e.agent, e.kappa, e.decay_margin, e.truncation_margin, e.gradient_margin
                    );
                }
            }
            if let Some(path) = out {
                let text = serde_json::to_string_pretty(&outcome).expect("report serializes");
                write_atomic(&path, text.as_bytes())
                    .with_context(|| format!("writing {}", path.display()))
                    .map_err(Failure::Check)?;
            }
            println!("violations: {}", outcome.violations);
            if outcome.violations > 0 {
                return Err(ExperimentError::BoundViolation(outcome.violations).into());
            }
            Ok(())
        }
        Command::Rm {
            command: RmCommand::Check { file },
        } => {
            let text = std::fs::read_to_string(&file)
                .with_context(|| format!("reading {}", file.display()))
                .map_err(Failure::Usage)?;
            let rm = RewardMachine::parse(&text)
                .with_context(|| format!("parsing {}", file.display()))
                .map_err(Failure::Check)?;
            let diags = rm.validate();
            for d in &diags {
                println!("{d}");
            }
            if diags.is_empty() {
                println!(
                    "{}: ok ({} states, {} transitions)",
                    file.display(),
                    rm.num_states(),
                    rm.transitions().count()
                );
                Ok(())
            } else {
                Err(Failure::Check(anyhow::anyhow!("{} diagnostics", diags.len())))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
