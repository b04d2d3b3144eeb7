use std::path::PathBuf;
use std::process::ExitCode;

use chainspec::pipeline::{cmd_embed, cmd_evaluate, cmd_fit, cmd_generate, RunConfig};
use clap::{Parser, Subcommand};

const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;

#[derive(Parser)]
#[command(version, about = "Reconstruct flexible atomic chains from noisy tomographic projections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for data generation and batch shuffling.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "CHAINSPEC_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write it to disk.
    Generate(Common),
    /// Build the similarity graph and compute the spectral basis.
    Embed(Common),
    /// Fit the spectral coefficients by stochastic gradient descent.
    Fit(Common),
    /// Score predicted test curves against the ground truth.
    Evaluate(Common),
}

fn run(cli: Cli) -> chainspec::Result<()> {
    let common = match &cli.command {
        Command::Generate(c) | Command::Embed(c) | Command::Fit(c) | Command::Evaluate(c) => c,
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    let cfg = RunConfig::load(&common.config)?.with_overrides(common.out.clone(), common.seed);
    match cli.command {
        Command::Generate(_) => {
            let s = cmd_generate(&cfg)?;
            println!("wrote {} particles to {}", s.manifest.particles, s.dir.display());
            println!("train {} test {}", s.manifest.particles - s.manifest.test_count(), s.manifest.test_count());
            println!("snr {:.6}", s.snr);
            println!(
                "bond length mean {:.6} variance {:.6} min {:.6} max {:.6}",
                s.spacing.mean, s.spacing.variance, s.spacing.min, s.spacing.max
            );
        }
        Command::Embed(_) => {
            let s = cmd_embed(&cfg)?;
            println!("wrote basis to {}", s.dir.display());
            let shown: Vec<String> = s.eigenvalues.iter().map(|v| format!("{v:.6}")).collect();
            println!("eigenvalues {}", shown.join(" "));
        }
        Command::Fit(_) => {
            let s = cmd_fit(&cfg)?;
            println!("wrote fit to {}", s.dir.display());
            for r in &s.history.rows {
                let err = match (r.max_error, r.avg_error) {
                    (Some(m), Some(a)) => format!(" max_error {m:.4} avg_error {a:.4}"),
                    _ => String::new(),
                };
                println!("epoch {} train_loss {:.6e}{err}", r.epoch, r.train_loss);
            }
        }
        Command::Evaluate(_) => {
            let s = cmd_evaluate(&cfg)?;
            let r = &s.report;
            println!("wrote report to {}", s.dir.display());
            println!(
                "predicted max_error {:.6} avg_error {:.6}",
                r.prediction.max_error, r.prediction.avg_error
            );
            println!(
                "baseline  max_error {:.6} avg_error {:.6}",
                r.baseline.max_error, r.baseline.avg_error
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { EXIT_IO } else { EXIT_VALIDATION })
        }
    }
}
