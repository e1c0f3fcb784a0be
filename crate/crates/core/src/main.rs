use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wball::config::ExperimentConfig;
use wball::experiment::{
    collect_rows, format_report, run_bounds, run_experiment, run_oracle_check, run_simulate, write_report, TABLE_FILE,
};
use wball::Error;

#[derive(Parser)]
#[command(name = "wball", version, about = "Benchmark-relative portfolio optimisation in a Wasserstein ball")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate benchmark wealth and the SDF; writes paths.csv.
    Simulate(RunArgs),
    /// Full pipeline: simulate, estimate, optimise.
    Optimize(RunArgs),
    /// Radius from a tolerance pair, with the extremal quantile functions.
    Bounds(RunArgs),
    /// Compare the estimated ξ with its closed form (lognormal model only).
    OracleCheck(RunArgs),
    /// Aggregate summaries into one table.
    Report {
        /// Summary files, or directories holding them.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    paths: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        ExperimentConfig::load(&self.config)?.with_overrides(self.seed, self.grid, self.paths)
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Simulate(a) => {
            let s = run_simulate(&a.load()?, &a.out)?;
            println!("simulated {} paths ({} steps, seed {})", s.n_paths, s.n_steps, s.seed);
            for (i, (m, se)) in s.martingale.iter().enumerate() {
                println!("asset {i}: E[sdf S_T / S_0] = {m:.5} ± {se:.5}");
            }
        }
        Command::Optimize(a) => {
            let s = run_experiment(&a.load()?, &a.out)?;
            if let Some(b) = &s.benchmark {
                println!(
                    "benchmark: TVaR_0.1 {:.2}  UTE_0.9 {:.2}  TVaR&E {:.2}  IS {:.2}",
                    b.tvar, b.ute, b.tvar_e, b.inverse_s
                );
            }
            print!("{}", format_report(std::slice::from_ref(&s.row)));
            if let Some(d) = &s.diagnostics {
                println!(
                    "eps {:.6}  d2 {:.6}  cost {:.6} (x0 {})  lambda1 {:.4e}  lambda2 {:.4e}",
                    d.eps, d.wasserstein, d.cost, d.x0, d.lambda1, d.lambda2
                );
            }
        }
        Command::Bounds(a) => {
            let r = run_bounds(&a.load()?, &a.out)?;
            println!("eps = {:.6}", r.eps);
            println!("mean in [{:.6}, {:.6}] (benchmark {:.6})", r.mean_lower, r.mean_upper, r.mean);
            println!("std  in [{:.6}, {:.6}] (benchmark {:.6})", r.std_lower, r.std_upper, r.std);
        }
        Command::OracleCheck(a) => {
            let r = run_oracle_check(&a.load()?, &a.out)?;
            let verdict = if r.pass { "PASS" } else { "FAIL" };
            println!(
                "{verdict}: {} sup relative error {:.4} at u = {:.4} (tolerance {})",
                r.copula, r.sup_rel_err, r.worst_u, r.tolerance
            );
            if !r.pass {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Report { inputs, out } => {
            let rows = collect_rows(&inputs)?;
            std::fs::create_dir_all(&out)?;
            write_report(&rows, &out.join(TABLE_FILE))?;
            print!("{}", format_report(&rows));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
