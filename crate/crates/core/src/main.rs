use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spindot::config::ExperimentConfig;
use spindot::experiment::{self, MEASUREMENTS_FILE};
use spindot::{Error, Result};

#[derive(Parser)]
#[command(name = "spindot", version, about = "Diffuse optical tomography by spin-Hamiltonian annealing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed used by this subcommand.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of independent annealing chains.
    #[arg(long)]
    chains: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Forward-simulate the phantom and write measurements.csv and manifest.toml.
    Simulate(Common),
    /// Reconstruct by simulated annealing.
    ReconstructSa {
        #[command(flatten)]
        common: Common,
        /// Measurement CSV; defaults to <out>/measurements.csv.
        #[arg(long)]
        measurements: Option<PathBuf>,
        /// Also write K, J and h to <out>/model.bin.
        #[arg(long)]
        dump_model: bool,
    },
    /// Reconstruct by truncated SVD at each configured rank.
    ReconstructSvd {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        measurements: Option<PathBuf>,
    },
    /// Write the diagnostics report.
    Diagnose(Common),
    /// Re-render a map CSV as a 16-bit PGM.
    Render {
        #[command(flatten)]
        common: Common,
        /// Map CSV to render.
        #[arg(long)]
        input: PathBuf,
        /// Output PGM; defaults to the input path with a .pgm extension.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

enum SeedTarget {
    Measurement,
    Annealing,
    Diagnostics,
    None,
}

fn resolve(common: &Common, target: SeedTarget) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(c) = common.chains {
        cfg.annealing.chains = c;
    }
    if let Some(s) = common.seed {
        match target {
            SeedTarget::Measurement => cfg.measurement.seed = s,
            SeedTarget::Annealing => cfg.annealing.seed = s,
            SeedTarget::Diagnostics => cfg.diagnostics.seed = s,
            SeedTarget::None => {}
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(common) => {
            let cfg = resolve(&common, SeedTarget::Measurement)?;
            let set = experiment::run_simulate(&cfg)?;
            println!(
                "wrote {} pairs to {}",
                set.len(),
                cfg.output_dir.join(MEASUREMENTS_FILE).display()
            );
        }
        Command::ReconstructSa {
            common,
            measurements,
            dump_model,
        } => {
            let cfg = resolve(&common, SeedTarget::Annealing)?;
            let input = measurements.unwrap_or_else(|| cfg.output_dir.join(MEASUREMENTS_FILE));
            let rec = experiment::run_reconstruct_sa(&cfg, &input, dump_model)?;
            println!(
                "best H {:e}, psi {:e}, chain {}, {:.1} s",
                rec.result.best_energy, rec.psi, rec.result.chain, rec.runtime_s
            );
        }
        Command::ReconstructSvd {
            common,
            measurements,
        } => {
            let cfg = resolve(&common, SeedTarget::None)?;
            let input = measurements.unwrap_or_else(|| cfg.output_dir.join(MEASUREMENTS_FILE));
            for m in experiment::run_reconstruct_svd(&cfg, &input)? {
                println!(
                    "rank {} (effective {}): range [{:e}, {:e}]",
                    m.rank, m.effective_k, m.min, m.max
                );
            }
        }
        Command::Diagnose(common) => {
            let cfg = resolve(&common, SeedTarget::Diagnostics)?;
            print!("{}", experiment::run_diagnostics(&cfg)?.to_text());
        }
        Command::Render {
            common,
            input,
            output,
        } => {
            let cfg = resolve(&common, SeedTarget::None)?;
            let output = output.unwrap_or_else(|| input.with_extension("pgm"));
            let r = experiment::render(&cfg, &input, &output)?;
            println!("wrote {} ({} clamped cells)", output.display(), r.clamped);
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config_error() {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
