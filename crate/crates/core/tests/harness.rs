use std::fs;
use std::path::Path;

use sectorcount::harness::{
    emit_plotdata, run_suite, Check, CurveConfig, ExperimentConfig, HarnessError, Suite,
};

fn circle_only(suite: Suite) -> ExperimentConfig {
    ExperimentConfig {
        suite,
        curves: vec![CurveConfig::Circle { radius: 1.0 }],
        ..ExperimentConfig::default()
    }
}

#[test]
fn geometry_suite_on_circle() {
    let result = run_suite(&circle_only(Suite::Geometry)).unwrap();
    assert_eq!(result.checks.len(), 2);
    assert!(result.passed(), "{}", result.summary_text());
    assert!(result.checks.iter().all(|c| c.runtime_s < 10.0));
}

#[test]
fn mom_bound_holds_after_calibration() {
    let mut cfg = circle_only(Suite::Mom);
    cfg.scales = vec![2];
    cfg.feasibility.samples = 10_000;
    let result = run_suite(&cfg).unwrap();
    let check = result.check(Check::MomBoundedness).unwrap();
    assert!(check.values_ok);
    assert_eq!(check.value("circle:1.bound_violations"), Some(0.0));
    assert!(result.check(Check::FeasibilityOracle).unwrap().values_ok);
}

#[test]
fn invalid_scale_is_a_config_error() {
    let cfg = ExperimentConfig::from_toml_str("suite = \"all\"\nscales = [1]\n").unwrap();
    match run_suite(&cfg) {
        Err(e @ HarnessError::Config { .. }) => {
            assert!(e.is_config());
            assert!(e.to_string().contains("scales[0]"), "{e}");
        }
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn full_config_file_parses() {
    let text = r#"
suite = "cons"
M = 10
scales = [2, 3]
seed = 7

[[curves]]
family = "circle"
radius = 1

[[curves]]
family = "radial_series"
r0 = 1.0
terms = [[3, 0.05, 0.0]]

[cons]
gaps = [1, 2]
n = 4
"#;
    let cfg = ExperimentConfig::from_toml_str(text).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.suite, Suite::Cons);
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.curves[1].to_string(), "radial_series:1;3,0.05,0");
    assert_eq!(cfg.cons.n, 4);
    assert_eq!(cfg.mom, ExperimentConfig::default().mom);
}

fn read_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "timings.csv" {
                let name = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((name, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn plot_data_is_byte_stable() {
    let mut cfg = circle_only(Suite::Measure);
    cfg.samples = 100_000;
    cfg.measure.omegas = vec![0.2, 0.1];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cfg.output = Some(a.path().to_path_buf());
    run_suite(&cfg).unwrap();
    cfg.output = None;
    let again = run_suite(&cfg).unwrap();
    emit_plotdata(&again, b.path()).unwrap();

    let scan = fs::read_to_string(a.path().join("0_circle/measure_scan.csv")).unwrap();
    assert!(scan.starts_with("omega1,ratio,stderr\n"));
    assert_eq!(scan.lines().count(), 3);
    assert!(a.path().join("timings.csv").exists());
    let left = read_outputs(a.path());
    assert_eq!(left.len(), 3);
    assert_eq!(left, read_outputs(b.path()));
}

#[test]
fn mom_sweep_file_header() {
    let mut cfg = circle_only(Suite::Mom);
    cfg.scales = vec![2, 3];
    cfg.mom.phases = 2;
    cfg.feasibility.instances = 5;
    cfg.feasibility.samples = 1_000;
    let dir = tempfile::tempdir().unwrap();
    cfg.output = Some(dir.path().to_path_buf());
    run_suite(&cfg).unwrap();
    let sweep = fs::read_to_string(dir.path().join("0_circle/mom_sweep.csv")).unwrap();
    assert!(sweep.starts_with("delta_over_l,count,bound\n"));
    assert_eq!(sweep.lines().count(), 5);
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("criterion,check,status,key,value\n"));
    assert!(summary.contains("mom_exponent"));
}
