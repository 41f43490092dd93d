use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gelfand(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gelfand"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const ECCENTRIC: &str = "\
[domain.outer]
cos_coeffs_x = [0.0, 4.0]
sin_coeffs_x = [0.0, 0.0]
cos_coeffs_y = [0.0, 0.0]
sin_coeffs_y = [0.0, 4.0]

[domain.inner]
cos_coeffs_x = [0.8, 1.0]
sin_coeffs_x = [0.0, 0.0]
cos_coeffs_y = [0.0, 0.0]
sin_coeffs_y = [0.0, 1.0]
";

#[test]
fn printed_defaults_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let printed = gelfand(&["print-defaults"], dir.path());
    assert!(printed.status.success());
    let cfg = dir.path().join("defaults.toml");
    fs::write(&cfg, &printed.stdout).unwrap();
    let again = gelfand(&["print-defaults", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(printed.stdout, again.stdout);
    let run = gelfand(&["gamma", "--config", cfg.to_str().unwrap()], &dir.path().join("run"));
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
}

#[test]
fn config_errors_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let large = gelfand(&["match", "--lambda", "0.2"], dir.path());
    assert_eq!(large.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&large.stderr).contains("0.2"));

    let odd = dir.path().join("odd.toml");
    fs::write(&odd, "[nodes]\ngamma = 127\n").unwrap();
    let out = gelfand(&["gamma", "--config", odd.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nodes.gamma"));

    let short_sweep = gelfand(&["sweep", "--lambda", "1e-3", "--lambda", "1e-4"], dir.path());
    assert_eq!(short_sweep.status.code(), Some(2));

    let ecc = dir.path().join("ecc.toml");
    fs::write(&ecc, ECCENTRIC).unwrap();
    let radial = gelfand(&["radial-check", "--config", ecc.to_str().unwrap()], dir.path());
    assert_eq!(radial.status.code(), Some(2));
}

#[test]
fn annulus_interface_is_the_geometric_mean_circle() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gelfand(&["gamma"], dir.path()).status.success());
    let text = fs::read_to_string(dir.path().join("gamma.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("s,x,y,k"));
    let mut rows = 0;
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!((v[1].hypot(v[2]) - 2.0).abs() < 1e-9 && (v[3] - 0.5).abs() < 1e-8, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 128);
    let report = json(&dir.path().join("gamma.json"));
    assert!((report["modulus"].as_f64().unwrap() - 4.0).abs() < 1e-9);
}

#[test]
fn eccentric_interface_passes_the_reflection_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ecc.toml");
    fs::write(&cfg, ECCENTRIC).unwrap();
    assert!(gelfand(&["gamma", "--config", cfg.to_str().unwrap()], dir.path()).status.success());
    let report = json(&dir.path().join("gamma.json"));
    assert!(report["reflection"]["dirichlet_defect"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn match_reports_gamma1_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(gelfand(&["match", "--lambda", "1e-3"], out).status.success());
    }
    let report = json(&a.join("match.json"));
    let gamma1 = report[0]["gamma1"]["value"].as_f64().unwrap();
    assert!((gamma1 - 20.554).abs() < 1e-3, "{gamma1}");
    for name in ["match.json", "fields.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn assemble_writes_a_parseable_contour_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = gelfand(&["assemble", "--svg"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("u_ap_0.svg")).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    let paths = doc.descendants().filter(|n| n.has_tag_name("path")).count();
    // both boundaries, the interface, and at least one contour level
    assert!(paths >= 4, "{paths}");
    let grid = fs::read_to_string(dir.path().join("u_ap.csv")).unwrap();
    assert!(grid.lines().skip(1).all(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap().is_finite()));
}

#[test]
fn residual_report_carries_zone_sups_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = gelfand(&["residual", "--lambda", "1e-6"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("residual.json"));
    let run = &report[0];
    for zone in ["tube", "band", "outer"] {
        assert!(run["report"][zone]["sup"].as_f64().unwrap() > 0.0, "{zone}");
    }
    for flag in ["paths_agree", "boundary_vanishes", "corrections_reduce_tube_residual"] {
        assert_eq!(run["flags"][flag], serde_json::Value::Bool(true), "{flag}");
    }
}

#[test]
fn radial_check_tabulates_the_gap() {
    let dir = tempfile::tempdir().unwrap();
    let out = gelfand(&["radial-check", "--lambda", "1e-3", "--lambda", "1e-6"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("radial.json"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[1]["relative_gap"].as_f64().unwrap() < rows[0]["relative_gap"].as_f64().unwrap());
    assert_eq!(fs::read_to_string(dir.path().join("radial.csv")).unwrap().lines().count(), 3);
}

#[test]
fn violated_bounds_exit_with_status_one_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tight.toml");
    fs::write(&cfg, "[residual]\npath_tolerance = 0.0\n").unwrap();
    let out = gelfand(&["residual", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let report = json(&dir.path().join("residual.json"));
    assert_eq!(report[0]["flags"]["paths_agree"], serde_json::Value::Bool(false));
}
