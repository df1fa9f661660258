//! Run reports and on-disk artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nsd_core::sampler_continuous::ViolationTrace;
use nsd_core::sampler_discrete::table::SequenceFile;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const TIMING_FILE: &str = "timing.json";
pub const VECTOR_SAMPLES_FILE: &str = "samples.csv";
pub const TOKEN_SAMPLES_FILE: &str = "samples.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    /// `sliced_wasserstein` or `unigram_tv`.
    pub metric: String,
    pub value: f64,
}

/// Everything a run reports except wall time, which lives in its own file
/// so that reports of repeated runs compare byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub mode: String,
    pub seed: u64,
    /// Chains requested in total (per-map or per-target counts multiplied out).
    pub n_samples: usize,
    /// Samples actually produced (failed chains emit nothing).
    pub n_emitted: usize,
    pub constraints: Vec<String>,
    /// Percent of emitted samples violating each constraint.
    pub violations: BTreeMap<String, f64>,
    pub fidelity: Option<Fidelity>,
    pub metrics: BTreeMap<String, f64>,
    pub retries: usize,
    pub failed_chains: usize,
    pub trace_file: Option<String>,
    pub samples_file: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    Vectors(Vec<Vec<f64>>),
    Tokens(Vec<Vec<usize>>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Self::Vectors(v) => v.len(),
            Self::Tokens(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn file_name(&self) -> &'static str {
        match self {
            Self::Vectors(_) => VECTOR_SAMPLES_FILE,
            Self::Tokens(_) => TOKEN_SAMPLES_FILE,
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            Self::Vectors(rows) => vectors_to_csv(rows),
            Self::Tokens(seqs) => SequenceFile::new(Vec::new(), seqs.clone()).to_text(),
        }
    }

    /// Reads a samples file; the format follows the extension.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        if path.extension().is_some_and(|e| e == "csv") {
            parse_vectors_csv(&text)
                .map(Self::Vectors)
                .map_err(|m| HarnessError::Io(format!("{}: {m}", path.display())))
        } else {
            Ok(Self::Tokens(SequenceFile::parse(&text)?.sequences))
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

pub fn vectors_to_csv(rows: &[Vec<f64>]) -> String {
    let dim = rows.first().map_or(0, Vec::len);
    let mut out = (0..dim).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

pub fn parse_vectors_csv(text: &str) -> Result<Vec<Vec<f64>>, String> {
    text.lines()
        .skip(1)
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2)))
                .collect()
        })
        .collect()
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| io_error(&tmp, e))?;
    f.write_all(contents).map_err(|e| io_error(&tmp, e))?;
    f.sync_all().map_err(|e| io_error(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

pub fn report_json(report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// Flat `key,value` rows: violations, fidelity, metrics, retry counts.
pub fn metrics_csv(report: &RunReport) -> String {
    let mut out = String::from("key,value\n");
    for (k, v) in &report.violations {
        out.push_str(&format!("violation.{k},{v}\n"));
    }
    if let Some(f) = &report.fidelity {
        out.push_str(&format!("fidelity.{},{}\n", f.metric, f.value));
    }
    for (k, v) in &report.metrics {
        out.push_str(&format!("metric.{k},{v}\n"));
    }
    out.push_str(&format!("retries,{}\nfailed_chains,{}\n", report.retries, report.failed_chains));
    out
}

/// Writes the report into `dir` and returns the written paths.
pub fn emit_report(report: &RunReport, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = Vec::new();
    if matches!(format, ReportFormat::Json | ReportFormat::Both) {
        let p = dir.join(REPORT_FILE);
        write_atomic(&p, report_json(report).as_bytes())?;
        written.push(p);
    }
    if matches!(format, ReportFormat::Csv | ReportFormat::Both) {
        let p = dir.join(METRICS_FILE);
        write_atomic(&p, metrics_csv(report).as_bytes())?;
        written.push(p);
    }
    Ok(written)
}

pub fn load_report(dir: &Path) -> Result<RunReport, HarnessError> {
    let p = dir.join(REPORT_FILE);
    let text = fs::read_to_string(&p).map_err(|e| io_error(&p, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))
}

pub fn write_trace(trace: &ViolationTrace, dir: &Path) -> Result<PathBuf, HarnessError> {
    let p = dir.join(TRACE_FILE);
    write_atomic(&p, trace.to_csv().as_bytes())?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> RunReport {
        RunReport {
            scenario: "gmm_halfspace".into(),
            mode: "nsd".into(),
            seed: 3,
            n_samples: 2,
            n_emitted: 2,
            constraints: vec!["halfspace".into()],
            violations: BTreeMap::from([("halfspace".into(), 0.0)]),
            fidelity: Some(Fidelity {
                metric: "sliced_wasserstein".into(),
                value: 0.1234567890123,
            }),
            metrics: BTreeMap::from([("b".into(), 2.0), ("a".into(), 1.0)]),
            retries: 0,
            failed_chains: 0,
            trace_file: Some(TRACE_FILE.into()),
            samples_file: VECTOR_SAMPLES_FILE.into(),
        }
    }

    #[test]
    fn json_round_trip_and_stable_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample_report();
        emit_report(&r, dir.path(), ReportFormat::Both).unwrap();
        let first = fs::read(dir.path().join(REPORT_FILE)).unwrap();
        assert_eq!(load_report(dir.path()).unwrap(), r);
        emit_report(&r, dir.path(), ReportFormat::Both).unwrap();
        assert_eq!(fs::read(dir.path().join(REPORT_FILE)).unwrap(), first);
        let csv = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert!(csv.find("metric.a").unwrap() < csv.find("metric.b").unwrap());
    }

    #[test]
    fn trace_columns() {
        let dir = tempfile::tempdir().unwrap();
        let trace = ViolationTrace::from_chains(2, &[vec![0.5, 0.0]]);
        let p = write_trace(&trace, dir.path()).unwrap();
        let text = fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,mean_residual,max_residual");
    }

    #[test]
    fn vectors_round_trip() {
        let rows = vec![vec![0.1, -2.5e-17], vec![1.0 / 3.0, 7.0]];
        assert_eq!(parse_vectors_csv(&vectors_to_csv(&rows)).unwrap(), rows);
    }
}
