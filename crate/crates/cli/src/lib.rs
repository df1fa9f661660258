//! Config-driven experiment harness: runs a scenario, computes metrics and
//! writes a report, a violation trace and the samples to a run directory.

pub mod config;
pub mod error;
pub mod metrics;
pub mod report;
pub mod scenarios;

use std::path::{Path, PathBuf};
use std::time::Instant;

use nsd_core::sampler_continuous::ViolationTrace;

pub use config::{ExperimentConfig, Mode, Scenario};
pub use error::HarnessError;
pub use report::{ReportFormat, RunReport, Samples};

/// Environment variable overriding the default output root.
pub const OUT_DIR_ENV: &str = "NSD_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "runs";

/// A finished run, not yet written to disk.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub samples: Samples,
    pub trace: Option<ViolationTrace>,
    pub wall_time_secs: f64,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let start = Instant::now();
    let run = scenarios::run_scenario(cfg)?;
    let report = RunReport {
        scenario: cfg.scenario.as_str().to_string(),
        mode: cfg.mode.as_str().to_string(),
        seed: cfg.seed,
        n_samples: run.requested,
        n_emitted: run.samples.len(),
        constraints: run.constraints,
        violations: run.violations,
        fidelity: run.fidelity,
        metrics: run.metrics,
        retries: run.retries,
        failed_chains: run.failed_chains,
        trace_file: run.trace.as_ref().map(|_| report::TRACE_FILE.to_string()),
        samples_file: run.samples.file_name().to_string(),
    };
    Ok(RunOutput {
        report,
        samples: run.samples,
        trace: run.trace,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

impl RunOutput {
    /// Writes report, metrics, trace, samples and timing into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        let mut written = report::emit_report(&self.report, dir, ReportFormat::Both)?;
        if let Some(trace) = &self.trace {
            written.push(report::write_trace(trace, dir)?);
        }
        let samples = dir.join(self.samples.file_name());
        report::write_atomic(&samples, self.samples.to_text().as_bytes())?;
        written.push(samples);
        let timing = dir.join(report::TIMING_FILE);
        let body = serde_json::json!({ "wall_time_secs": self.wall_time_secs });
        report::write_atomic(&timing, format!("{body}\n").as_bytes())?;
        written.push(timing);
        Ok(written)
    }
}

/// Output root: the explicit flag, then `NSD_OUT_DIR`, then `runs`.
pub fn out_root(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Run directory name, e.g. `gmm_halfspace-nsd-seed7`.
pub fn run_dir_name(cfg: &ExperimentConfig) -> String {
    format!("{}-{}-seed{}", cfg.scenario, cfg.mode.as_str(), cfg.seed)
}
