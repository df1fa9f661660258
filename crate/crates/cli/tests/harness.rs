//! End-to-end runs through the library and the `nsd` binary on small configs.

use std::fs;
use std::path::Path;
use std::process::Command;

use nsd_cli::report::{load_report, Samples, REPORT_FILE, TRACE_FILE};
use nsd_cli::scenarios::check_samples;
use nsd_cli::{run_dir_name, run_experiment, ExperimentConfig, HarnessError, Mode};

const SMALL_GMM: &str = r#"
scenario = "gmm_halfspace"
n_samples = 60
seed = 11

[schedule]
kind = "cosine"
steps = 40

[gmm_halfspace]
means = [[-1.5, -0.5], [1.5, 1.0]]
weights = [0.5, 0.5]
variance = 0.25
normal = [1.0, 0.0]
offset = 0.5
"#;

const SMALL_SEQUENCE: &str = r#"
scenario = "sequence_patterns"
n_samples = 40
seed = 4

[sequence]
vocab = 8
length = 6
novelty = true
"#;

fn small(text: &str, mode: Mode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(text).unwrap();
    cfg.mode = mode;
    cfg
}

fn nsd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nsd"))
}

#[test]
fn invalid_configs_name_the_field() {
    let cases = [
        (SMALL_GMM.replace("n_samples = 60", "n_samples = 0"), "n_samples"),
        (
            SMALL_GMM.replace("weights = [0.5, 0.5]", "weights = [1.0]"),
            "gmm_halfspace.weights",
        ),
        (SMALL_GMM.replace("variance = 0.25", "variance = -1.0"), "gmm_halfspace.variance"),
    ];
    for (text, field) in cases {
        match ExperimentConfig::parse(&text) {
            Err(HarnessError::Config { field: f, .. }) => assert_eq!(f, field),
            other => panic!("{field}: {other:?}"),
        }
    }
    let unknown = format!("{SMALL_GMM}\nbogus = 1\n");
    assert!(matches!(ExperimentConfig::parse(&unknown), Err(HarnessError::Config { .. })));
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, SMALL_GMM.replace("n_samples = 60", "n_samples = 0")).unwrap();
    let out = nsd().arg("run").arg(&bad).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_samples"));

    let missing = nsd().arg("run").arg(tmp.path().join("absent.toml")).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));

    let usage = nsd().arg("frobnicate").output().unwrap();
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn binary_run_check_and_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("gmm.toml");
    fs::write(&cfg_path, SMALL_GMM).unwrap();
    let out = nsd().arg("run").arg(&cfg_path).arg("--out").arg(tmp.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let dir = tmp.path().join(run_dir_name(&small(SMALL_GMM, Mode::Nsd)));
    for f in [REPORT_FILE, TRACE_FILE, "metrics.csv", "samples.csv", "timing.json"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let report = load_report(&dir).unwrap();

    let check = nsd().arg("check").arg(dir.join("samples.csv")).arg(&cfg_path).output().unwrap();
    assert!(check.status.success());
    let printed: Vec<(String, f64)> = String::from_utf8(check.stdout)
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once(',').unwrap();
            (k.to_string(), v.parse().unwrap())
        })
        .collect();
    let expected: Vec<(String, f64)> = report.violations.into_iter().collect();
    assert_eq!(printed, expected);

    let trace = nsd().arg("trace").arg(&dir).output().unwrap();
    assert!(trace.status.success());
    assert_eq!(
        String::from_utf8(trace.stdout).unwrap(),
        fs::read_to_string(dir.join(TRACE_FILE)).unwrap()
    );
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let cfg = small(SMALL_GMM, Mode::Nsd);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&cfg).unwrap().write(a.path()).unwrap();
    run_experiment(&cfg).unwrap().write(b.path()).unwrap();
    for f in [REPORT_FILE, "metrics.csv", "samples.csv", TRACE_FILE] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn report_round_trips_through_disk() {
    let out = run_experiment(&small(SMALL_SEQUENCE, Mode::Nsd)).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    out.write(tmp.path()).unwrap();
    assert_eq!(load_report(tmp.path()).unwrap(), out.report);
    let samples = Samples::load(&tmp.path().join(out.samples.file_name())).unwrap();
    assert_eq!(samples, out.samples);
}

fn rechecked(cfg: &ExperimentConfig, dir: &Path) -> Vec<(String, f64)> {
    let out = run_experiment(cfg).unwrap();
    out.write(dir).unwrap();
    let samples = Samples::load(&dir.join(out.samples.file_name())).unwrap();
    let again = check_samples(cfg, &samples).unwrap();
    assert_eq!(again, out.report.violations, "{}", cfg.scenario.as_str());
    again.into_iter().collect()
}

#[test]
fn check_samples_agrees_with_the_run() {
    for (text, mode) in [
        (SMALL_GMM, Mode::Nsd),
        (SMALL_GMM, Mode::Unconstrained),
        (SMALL_SEQUENCE, Mode::Nsd),
        (SMALL_SEQUENCE, Mode::Unconstrained),
    ] {
        let tmp = tempfile::tempdir().unwrap();
        rechecked(&small(text, mode), tmp.path());
    }
}

#[test]
fn post_only_certifies_where_unconstrained_does_not() {
    let tmp = tempfile::tempdir().unwrap();
    let free = rechecked(&small(SMALL_GMM, Mode::Unconstrained), &tmp.path().join("free"));
    let post = rechecked(&small(SMALL_GMM, Mode::PostOnly), &tmp.path().join("post"));
    assert!(free.iter().any(|(_, v)| *v > 0.0), "{free:?}");
    assert!(post.iter().all(|(_, v)| *v == 0.0), "{post:?}");
}
