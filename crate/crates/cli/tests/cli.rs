use std::fs;
use std::process::{Command, Output};

fn sectorcount(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sectorcount"))
        .args(args)
        .env_remove("SECTORCOUNT_WORKERS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn geometry_suite_passes() {
    let out = sectorcount(&["geometry", "--seed", "3"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("geometry_invariants"));
    assert!(text.contains("jacobian_identity"));
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "scales = [0]\n").unwrap();
    let out = sectorcount(&["geometry", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scales[0]"));

    fs::write(&path, "no_such_key = 1\n").unwrap();
    let out = sectorcount(&["geometry", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_worker_count_exits_with_two() {
    let out = Command::new(env!("CARGO_BIN_EXE_sectorcount"))
        .args(["geometry"])
        .env("SECTORCOUNT_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn suite_writes_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "curves = [{ family = \"circle\", radius = 1.0 }]\n[sectorization]\nscales = [2, 3]\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = sectorcount(&[
        "sectorization",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("criterion,check,status,key,value"));
    assert!(out_dir.join("timings.csv").exists());
}

#[test]
fn curve_dump_is_consistent() {
    let out = sectorcount(&["curve", "dump", "--curve", "ellipse:2,1"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("phi,x,y,kappa,psi,arclen,antipodal_phi"));
    let mut prev_arclen = -1.0;
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v.len(), 7);
        // x²/4 + y² = 1 on the 2,1 ellipse
        assert!((v[1] * v[1] / 4.0 + v[2] * v[2] - 1.0).abs() < 1e-9);
        assert!(v[3] > 0.0);
        assert!(v[5] > prev_arclen);
        prev_arclen = v[5];
    }
}

#[test]
fn sectorize_covers_the_curve() {
    let out = sectorcount(&["sectorize", "--curve", "circle:1", "--M", "10", "--j", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    let total: f64 = rows.iter().map(|r| r[2] - r[12]).sum();
    assert!(
        (total - std::f64::consts::TAU).abs() < 1e-9,
        "covered {total}"
    );
}

#[test]
fn parallelogram_dump_on_circle() {
    let out = sectorcount(&[
        "parallelogram",
        "--curve",
        "circle:1",
        "--q-samples",
        "50",
        "--seed",
        "2",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 51);
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let r = f[0].parse::<f64>().unwrap().hypot(f[1].parse().unwrap());
        let expected = if r < 2.0 { "2" } else { "0" };
        assert_eq!(f[2], expected, "{line}");
    }
}

#[test]
fn count_outputs_are_deterministic() {
    let args = [
        "count-mom",
        "--curve",
        "circle:1",
        "--j",
        "3",
        "--n",
        "2",
        "--delta",
        "1,2",
        "--p",
        "0.3",
    ];
    let a = stdout(&sectorcount(&args));
    let b = stdout(&sectorcount(&args));
    let strip = |s: &str| -> Vec<String> {
        s.lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(
        a.lines().next(),
        Some("sweep_value,exact_count,bound_value,runtime_ms")
    );
    assert_eq!(a.lines().count(), 3);

    let cons = sectorcount(&[
        "count-cons",
        "--curve",
        "circle:1",
        "--i",
        "2",
        "--j",
        "3,4",
        "--constant",
        "2",
    ]);
    assert!(cons.status.success());
    let text = stdout(&cons);
    let gaps: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(gaps, ["1", "2"]);
}

#[test]
fn cons_rejects_coarse_fine_scale() {
    let out = sectorcount(&["count-cons", "--curve", "circle:1", "--i", "3", "--j", "3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_curve_is_a_usage_error() {
    let out = sectorcount(&["curve", "dump", "--curve", "triangle:1"]);
    assert_eq!(out.status.code(), Some(2));
}
