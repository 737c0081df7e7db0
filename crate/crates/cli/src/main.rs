use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hjmx_cli::runner::{self, RunError};
use hjmx_cli::{config, selfcheck};
use hjmx_core::{MarketCurves, QuoteSet};

/// Multi-curve HJM simulation and XVA experiments.
///
/// Set HJMX_WORKERS to fix the number of worker threads; results do not
/// depend on it.
#[derive(Parser)]
#[command(name = "hjmx", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write results/<name>/.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        paths: Option<usize>,
        /// Output root; overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite at reduced path counts.
    Selfcheck { config: PathBuf },
    /// Bootstrap curves from a quote CSV and print the pillar tables.
    Bootstrap { quotes: PathBuf },
}

fn fail(e: RunError) -> ExitCode {
    eprintln!("hjmx: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            paths,
            out,
        } => {
            let mut cfg = match config::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(e.into()),
            };
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            if let Some(n) = paths {
                cfg.run.n_paths = n;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let exp = match runner::Experiment::build(cfg) {
                Ok(e) => e,
                Err(e) => return fail(e),
            };
            match runner::run(&exp) {
                Ok(a) => {
                    for f in &a.files {
                        println!("wrote {}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Selfcheck { config } => {
            let cfg = match config::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(e.into()),
            };
            let report = selfcheck::selfcheck(cfg);
            for c in &report.checks {
                println!("{}", c.line());
            }
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::Bootstrap { quotes } => match bootstrap(&quotes) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(e),
        },
    }
}

fn bootstrap(path: &PathBuf) -> Result<(), RunError> {
    let quotes = QuoteSet::from_csv_path(path)
        .map_err(|e| RunError::Config(config::ConfigError::new("quotes", e.to_string())))?;
    let curves = MarketCurves::bootstrap(&quotes)?;
    println!("# discount curve");
    println!("maturity,discount,zero_rate");
    for (t, p) in curves.discount.pillars() {
        let z = if t > 0.0 { -p.ln() / t } else { 0.0 };
        println!("{t:.6},{p:.12},{z:.10}");
    }
    for f in &curves.forwards {
        println!("# forward curve tenor {}", f.tenor());
        println!("maturity,forward");
        for (t, v) in f.pillars() {
            println!("{t:.6},{v:.10}");
        }
    }
    Ok(())
}
