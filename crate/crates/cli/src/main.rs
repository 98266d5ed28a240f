use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nullspde_cli::config::has_errors;
use nullspde_cli::{load, run, RunError};

#[derive(Parser)]
#[command(name = "nullspde", version, about = "Null-control experiments for stochastic heat equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Overrides `out_dir` from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Overrides `seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for independent samples and sweep points.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Validate { config } => {
            let loaded = load(&config);
            for d in &loaded.diagnostics {
                println!("{d}");
            }
            if has_errors(&loaded.diagnostics) {
                2
            } else {
                0
            }
        }
        Command::Run {
            config,
            out_dir,
            seed,
            workers,
        } => {
            let loaded = load(&config);
            for d in &loaded.diagnostics {
                eprintln!("{d}");
            }
            match loaded.config {
                Some(mut c) if !has_errors(&loaded.diagnostics) => {
                    if let Some(dir) = out_dir {
                        c.out_dir = dir;
                    }
                    if let Some(s) = seed {
                        c.seed = s;
                    }
                    if let Some(w) = workers {
                        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
                            eprintln!("error: cannot start {w} workers: {e}");
                            return ExitCode::from(2);
                        }
                    }
                    match run(&c) {
                        Ok(summary) => {
                            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
                            if !summary.converged {
                                eprintln!("warning: not every solve converged");
                            }
                            summary.exit_code()
                        }
                        Err(e) => {
                            if let RunError::Validation(diags) = &e {
                                for d in diags {
                                    eprintln!("{d}");
                                }
                            }
                            eprintln!("error: {e}");
                            e.exit_code()
                        }
                    }
                }
                _ => 2,
            }
        }
    };
    ExitCode::from(code as u8)
}
