use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use dmmv_amp::harness::output::{se_trajectory_file, write_se_overlay_csv};
use dmmv_amp::harness::{plot, run_experiment, se_overlay, write_outputs, ExperimentConfig};
use dmmv_amp::se::write_se_csv;
use dmmv_amp::{Error, Result};

/// Grant-free random access simulations with DMMV-AMP and baselines.
#[derive(Debug, Parser)]
#[command(name = "dmmv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured sweep and write results.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; falls back to `output.dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also compute the state-evolution NMSE prediction per G.
        #[arg(long)]
        se: bool,
    },
    /// Run only the state-evolution prediction for every configured G.
    Se {
        #[arg(long)]
        config: PathBuf,
        /// Write se.csv and per-G trajectories here instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render Pe-vs-G and NMSE-vs-G SVG charts from a results directory.
    EmitPlot {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn output_dir(cli_out: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf> {
    cli_out
        .or_else(|| cfg.output.dir.clone())
        .ok_or_else(|| Error::InvalidConfig("no output directory: pass --out or set output.dir".into()))
}

fn report(paths: &[PathBuf]) -> Result<()> {
    let files: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    println!("{}", json!({ "status": "ok", "files": files }));
    Ok(())
}

fn run_se_only(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let points = se_overlay(&cfg)?;
    match out {
        Some(dir) => {
            std::fs::create_dir_all(&dir)?;
            let mut written = vec![dir.join("se.csv")];
            write_se_overlay_csv(io::BufWriter::new(std::fs::File::create(&written[0])?), &points)?;
            for p in &points {
                let path = dir.join(se_trajectory_file(p.g));
                write_se_csv(io::BufWriter::new(std::fs::File::create(&path)?), &p.trajectory)?;
                written.push(path);
            }
            report(&written)
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_se_overlay_csv(&mut lock, &points)?;
            lock.flush()?;
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, trials, seed, se } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(n) = trials {
                cfg.n_trials = n;
            }
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            cfg.se_enabled |= se;
            let dir = output_dir(out, &cfg)?;
            let result = run_experiment(&cfg)?;
            let written = write_outputs(&result, &dir)?;
            if !result.failures.is_empty() {
                eprintln!("{} trial runs failed; see summary.json", result.failures.len());
            }
            report(&written)
        }
        Command::Se { config, out } => run_se_only(&config, out),
        Command::EmitPlot { input } => report(&plot::emit_plots(&input)?),
    }
}

fn error_json(kind: &str, message: &str) -> String {
    json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_json("usage", e.to_string().trim_end()));
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
