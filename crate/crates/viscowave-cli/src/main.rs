//! Command line driver: single runs, convergence studies, invariant checks.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use viscowave::driver::{self, ConvergenceConfig, RunConfig};
use viscowave::verify;

#[derive(Parser)]
#[command(
    name = "viscowave",
    about = "Viscoelastic scalar wave solver: internal-variable Crank-Nicolson schemes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonFlags {
    /// Worker threads for parallel refinement levels (0: all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Override the output directory from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a single run described by a JSON config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: CommonFlags,
        /// Write a VTK series of the displacement field.
        #[arg(long)]
        vtk: bool,
    },
    /// Execute a convergence study described by a JSON config.
    Convergence {
        config: PathBuf,
        #[command(flatten)]
        common: CommonFlags,
        /// Run the fixed-mesh mode at the full-scale mesh (1/512) instead of
        /// the desk-scale default (1/128).
        #[arg(long)]
        full_scale: bool,
    },
    /// Run the invariant suites: element matrices, quadrature exactness,
    /// manufactured-data consistency, energy identities, oracle equivalence.
    Verify,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, common, vtk } => {
            let mut config = RunConfig::from_file(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            if let Some(dir) = common.output_dir {
                config.output.output_dir = Some(dir);
            }
            if vtk {
                config.output.vtk = true;
            }
            let execute = || -> Result<()> {
                let outcome = driver::run(&config)?;
                println!(
                    "errors: energy {:.4E}  velocity L2 {:.4E}  displacement L2 {:.4E}",
                    outcome.errors.energy,
                    outcome.errors.velocity_l2,
                    outcome.errors.displacement_l2
                );
                println!(
                    "energy identity residual: {:.3e}",
                    outcome.energy_identity_residual
                );
                if let Some(path) = &outcome.energy_csv {
                    println!("energy diagnostics: {}", path.display());
                }
                if !outcome.vtk_files.is_empty() {
                    println!("vtk snapshots: {}", outcome.vtk_files.len());
                }
                Ok(())
            };
            if common.workers > 0 {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(common.workers)
                    .build()?
                    .install(execute)
            } else {
                execute()
            }
        }
        Command::Convergence {
            config,
            common,
            full_scale,
        } => {
            let mut config = ConvergenceConfig::from_file(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            if let Some(dir) = common.output_dir {
                config.output_dir = Some(dir);
            }
            if common.workers > 0 {
                config.workers = common.workers;
            }
            if full_scale {
                config.full_scale = true;
            }
            let reports = driver::convergence(&config)?;
            for report in &reports {
                println!("{}", report.to_csv());
            }
            Ok(())
        }
        Command::Verify => {
            let checks = verify::verify_all()?;
            let mut failed = 0usize;
            for check in &checks {
                let tag = if check.passed { "PASS" } else { "FAIL" };
                println!("[{tag}] {}: {}", check.name, check.detail);
                if !check.passed {
                    failed += 1;
                }
            }
            if failed > 0 {
                bail!("{failed} of {} checks failed", checks.len());
            }
            println!("all {} checks passed", checks.len());
            Ok(())
        }
    }
}
