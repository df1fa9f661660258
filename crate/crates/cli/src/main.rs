use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nsd_cli::report::{self, load_report, Samples, TRACE_FILE};
use nsd_cli::scenarios::check_samples;
use nsd_cli::{out_root, run_dir_name, run_experiment, ExperimentConfig, HarnessError, Mode};

#[derive(Parser)]
#[command(name = "nsd", version, about = "Constrained diffusion sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML (or JSON) config.
    Run {
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the mode: nsd, unconstrained or post_only.
        #[arg(long)]
        mode: Option<Mode>,
        /// Output root; defaults to $NSD_OUT_DIR, then ./runs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute violation percentages of a samples file.
    Check {
        samples: PathBuf,
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the per-step violation trace of a run as CSV.
    Trace {
        run_dir: PathBuf,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path, seed: Option<u64>, mode: Option<Mode>) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = mode {
        cfg.mode = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(config: &Path, seed: Option<u64>, mode: Option<Mode>, out: Option<&Path>) -> Result<ExitCode, HarnessError> {
    let cfg = load_config(config, seed, mode)?;
    let dir = out_root(out).join(run_dir_name(&cfg));
    let output = run_experiment(&cfg)?;
    output.write(&dir)?;
    let r = &output.report;
    println!("run dir: {}", dir.display());
    println!("emitted {} of {} samples", r.n_emitted, r.n_samples);
    for (name, pct) in &r.violations {
        println!("violation {name}: {pct:.2}%");
    }
    if let Some(f) = &r.fidelity {
        println!("{}: {:.6}", f.metric, f.value);
    }
    if r.failed_chains > 0 {
        eprintln!("{} chains exhausted their retries", r.failed_chains);
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn check(samples: &Path, config: &Path, seed: Option<u64>) -> Result<ExitCode, HarnessError> {
    let cfg = load_config(config, seed, None)?;
    let violations = check_samples(&cfg, &Samples::load(samples)?)?;
    for (name, pct) in &violations {
        println!("{name},{pct}");
    }
    Ok(ExitCode::SUCCESS)
}

fn trace(run_dir: &Path, out: Option<&Path>) -> Result<ExitCode, HarnessError> {
    let r = load_report(run_dir)?;
    let name = r.trace_file.unwrap_or_else(|| TRACE_FILE.to_string());
    let path = run_dir.join(name);
    let csv = fs::read_to_string(&path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    match out {
        Some(p) => report::write_atomic(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, seed, mode, out } => run(config, *seed, *mode, out.as_deref()),
        Command::Check { samples, config, seed } => check(samples, config, *seed),
        Command::Trace { run_dir, out } => trace(run_dir, out.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
