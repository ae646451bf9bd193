use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use offline_vcg::error::Result;
use offline_vcg::harness::{self, RunConfig};

#[derive(Parser)]
#[command(name = "offline-vcg", version, about = "Offline VCG mechanism experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Master seed; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Exact VCG and a brute-force desiderata check.
    Exact(RunArgs),
    /// Learn from offline data over the configured sweep.
    Learn(RunArgs),
    /// Merge report sidecars (`*.json`) and recompute aggregates.
    SweepReport {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "sweep")]
        name: String,
    },
    /// Run invariant suites.
    Check {
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

enum Outcome {
    Ok,
    InvariantFailed,
}

fn load(args: &RunArgs, seed: Option<u64>) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let dir = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok((cfg, dir))
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Exact(args) => {
            let (cfg, dir) = load(&args, cli.seed)?;
            let report = harness::cmd_exact(&cfg)?;
            for p in report.write(&dir, &cfg.output.name)? {
                println!("wrote {}", p.display());
            }
            let d = &report.desiderata;
            println!(
                "welfare gap {:e}, min utility {:e}, max gain {:e}",
                d.welfare_gap, d.min_agent_utility, d.max_truthfulness_gain
            );
            Ok(if report.passed() { Outcome::Ok } else { Outcome::InvariantFailed })
        }
        Command::Learn(args) => {
            let (cfg, dir) = load(&args, cli.seed)?;
            let (report, timings) = harness::cmd_learn(&cfg)?;
            for p in report.write(&dir, &cfg.output.name)? {
                println!("wrote {}", p.display());
            }
            timings.write(&dir, &cfg.output.name)?;
            let violations: usize = report.rows.iter().filter_map(|r| r.bound_violations).sum();
            println!("{} rows, {violations} bound violations", report.rows.len());
            Ok(if violations == 0 { Outcome::Ok } else { Outcome::InvariantFailed })
        }
        Command::SweepReport { reports, out, name } => {
            let merged = harness::cmd_sweep_report(&reports)?;
            for p in harness::write_sweep(&merged, &out, &name)? {
                println!("wrote {}", p.display());
            }
            Ok(Outcome::Ok)
        }
        Command::Check { suite } => {
            let report = harness::cmd_check(&suite, cli.seed.unwrap_or(0))?;
            for s in &report.suites {
                println!("{}", s.line());
            }
            Ok(if report.passed() { Outcome::Ok } else { Outcome::InvariantFailed })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::InvariantFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
