use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kaleido::harness::config::parse_seed_list;
use kaleido::harness::{self, selftest, Arch, RunConfig, RunOptions};

#[derive(Parser)]
#[command(name = "kaleido", version, about = "Masked partial parameter sharing for cooperative MARL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write the run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overwrite an existing run directory.
        #[arg(long)]
        force: bool,
        /// Comma-separated seeds; overrides KALEIDO_SEED and the config.
        #[arg(long)]
        seeds: Option<String>,
        /// Seeds trained concurrently.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Summarize finished run directories per scheme.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the CSV table here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Count forward FLOPs of a layer stack described in an `[arch]` file.
    Flops {
        #[arg(long)]
        arch: PathBuf,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run {
            config,
            force,
            seeds,
            workers,
        } => {
            let mut cfg = RunConfig::parse_file(&config)?;
            if let Some(s) = seeds {
                cfg.seeds = parse_seed_list(&s)?;
            } else if let Ok(s) = std::env::var("KALEIDO_SEED") {
                cfg.seeds = parse_seed_list(&s)?;
            }
            let mut opts = RunOptions {
                force,
                ..RunOptions::default()
            };
            if let Some(w) = workers {
                opts.workers = w;
            }
            let summary = harness::run_experiment(&cfg, opts)?;
            for (seed, ret) in &summary.final_returns {
                match ret {
                    Some(r) => println!("seed {seed}: final eval return {r:.4}"),
                    None => println!("seed {seed}: no evaluation"),
                }
            }
            println!("{} rows written to {}", summary.rows, summary.out_dir.display());
        }
        Command::Compare { dirs, csv } => {
            let report = harness::compare(&dirs)?;
            for w in report.warnings() {
                eprintln!("warning: {w}");
            }
            print!("{}", report.to_text());
            let table = report.to_csv()?;
            match csv {
                Some(path) => std::fs::write(&path, table)?,
                None => print!("\n{table}"),
            }
        }
        Command::Flops { arch } => {
            let text = std::fs::read_to_string(&arch)?;
            let arch = Arch::parse(&text)?;
            let f = arch.flops()?;
            for (l, (n, w)) in f.per_layer.iter().zip(arch.layers.windows(2)).enumerate() {
                println!("fc{l} {}x{}: {n}", w[0], w[1]);
            }
            if let Some((i, h)) = arch.gru {
                println!("gru {i}x{h}: {}", f.gru);
            }
            println!("total: {}", f.total);
        }
        Command::Selftest => {
            let checks = selftest::run_all();
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
            }
            if failed > 0 {
                return Err(format!("{failed} check(s) failed").into());
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
            ExitCode::FAILURE
        }
    }
}
