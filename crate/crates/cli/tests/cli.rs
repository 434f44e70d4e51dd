use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_laser-coherence"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tmp(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("laser-coherence-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

/// Drops the comment header and parses the JSON payload.
fn payload(text: &str) -> serde_json::Value {
    let (first, rest) = text.split_once('\n').unwrap();
    assert!(first.starts_with("# laser-coherence "), "{first}");
    serde_json::from_str(rest).unwrap()
}

#[test]
fn sweep_fit_writes_exponent() {
    let path = tmp("fit.json");
    let out = run(&["sweep", "--dims", "100,150,200,250,300", "--fit", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = payload(&std::fs::read_to_string(&path).unwrap());
    let e = v["exponent"].as_f64().unwrap();
    assert!((3.95..=4.05).contains(&e), "{e}");
    for key in ["coefficient", "rms_log_residual", "window"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn bounds_prints_both_limits() {
    let out = run(&["bounds", "--mu", "10", "--out", tmp("bounds.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let line = String::from_utf8(out.stdout).unwrap();
    let h: f64 = line.split("heisenberg=").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!((h - 29748.0).abs() <= 10.0, "{line}");
    assert!(line.contains("sql=1600"), "{line}");
}

#[test]
fn validation_and_usage_errors_exit_one() {
    assert_eq!(run(&["coherence", "--dim", "1"]).status.code(), Some(1));
    let out = run(&["coherence", "--dim", "3", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(run(&["discrete", "--dim", "3", "--gamma", "0.6"]).status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_two() {
    let out = run(&["control", "--dims", "24", "--which", "gain", "--precision", "double"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn outputs_are_deterministic_and_headed() {
    let a = run(&["control", "--dims", "3,8,14"]);
    let b = run(&["control", "--dims", "3,8,14"]);
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("# laser-coherence ") && header.contains("\"dims\":[3,8,14]"));
    assert_eq!(lines.next().unwrap(), "dim,which,residual,precision");
    assert_eq!(lines.count(), 6);
}

#[test]
fn flux_only_changes_time_units() {
    let one = payload(&String::from_utf8(run(&["coherence", "--dim", "10"]).stdout).unwrap());
    let two = payload(&String::from_utf8(run(&["coherence", "--dim", "10", "--flux", "2"]).stdout).unwrap());
    let (c1, c2) = (one["coherence"].as_f64().unwrap(), two["coherence"].as_f64().unwrap());
    assert!(((c1 - c2) / c1).abs() < 1e-10);
    let (l1, l2) = (one["linewidth"].as_f64().unwrap(), two["linewidth"].as_f64().unwrap());
    assert!((l2 / l1 - 2.0).abs() < 1e-9);
}

#[test]
fn g1_csv_schema() {
    let out = run(&["g1", "--dim", "20", "--points", "11"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().nth(1).unwrap(), "s,g1_model,g1_ideal,delta");
    assert_eq!(text.lines().count(), 13);
}

#[test]
fn discrete_and_g2max_json_keys() {
    let v = payload(&String::from_utf8(run(&["discrete", "--dim", "5", "--gamma", "0.05"]).stdout).unwrap());
    for key in ["dim", "gamma", "isometry_residual", "fixed_point_residual", "liouvillian_residual", "discrete_coherence"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let v = payload(&String::from_utf8(run(&["discrete", "--dim", "5", "--dt", "0.01"]).stdout).unwrap());
    assert!((v["gamma"].as_f64().unwrap() - 0.1).abs() < 1e-15);
    assert!(v["channel_distance"].as_f64().unwrap() > 0.0);
    let v = payload(&String::from_utf8(run(&["g2max", "--dim", "12", "--grid", "5"]).stdout).unwrap());
    for key in ["dim", "tau", "argmax", "delta", "corner_delta"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["argmax"].as_array().unwrap().len(), 4);
}
