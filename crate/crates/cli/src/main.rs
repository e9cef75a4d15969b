use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpehho::report::float;
use gpehho::{run_convergence, run_lowerbound, run_mesh_info, run_solve, CliError, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "gpehho", version, about = "HHO ground states, convergence and lower-bound studies for the Gross-Pitaevskii problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ground state on the finest configured level.
    Solve(Common),
    /// Error table against a finer reference solution.
    Convergence(Common),
    /// Guaranteed lower energy bounds of the modified scheme.
    LowerBound(Common),
    /// Mesh statistics per level.
    MeshInfo(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed, overrides the config and the potential seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the finest mesh as plain-text node and cell lists.
    #[arg(long)]
    dump_mesh: bool,
}

fn load(c: &Common) -> Result<(ExperimentConfig, RunOptions), CliError> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    let out = c.out.clone().unwrap_or_else(|| cfg.base_dir.join(&cfg.output_dir));
    Ok((cfg, RunOptions { out, dump_mesh: c.dump_mesh }))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(c) => {
            let (cfg, opts) = load(&c)?;
            let s = run_solve(&cfg, &opts)?;
            println!("level {} dofs {} E {} lambda {} iterations {}", s.level, s.dofs, float(s.energy), float(s.lambda), s.iterations);
            if let Some(cert) = &s.certificate {
                println!("sigma {} slack {} valid {}", float(cert.certificate.sigma), float(cert.certificate.slack), cert.certificate.valid);
            }
        }
        Command::Convergence(c) => {
            let (cfg, opts) = load(&c)?;
            let r = run_convergence(&cfg, &opts)?;
            print!("{}", gpehho::study::convergence_csv(&r.rows).as_str());
        }
        Command::LowerBound(c) => {
            let (cfg, opts) = load(&c)?;
            let r = run_lowerbound(&cfg, &opts)?;
            print!("{}", gpehho::study::bounds_csv(&r.rows).as_str());
        }
        Command::MeshInfo(c) => {
            let (cfg, opts) = load(&c)?;
            for m in run_mesh_info(&cfg, &opts)? {
                println!("level {} h {} cells {} faces {} dofs {}", m.level, m.h, m.cells, m.faces, m.dofs);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
