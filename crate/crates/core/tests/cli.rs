use meshwalk::cli::presets::{preset, PRESETS};
use meshwalk::cli::RunConfig;
use std::path::Path;
use std::process::{Command, Output};

fn meshwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshwalk"))
        .args(args)
        .env("MESHWALK_OUT", std::env::temp_dir().join("meshwalk-cli-tests"))
        .output()
        .expect("binary runs")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn every_preset_round_trips_through_toml() {
    for (name, _) in PRESETS {
        let cfg = preset(name).unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg, "{name}");
    }
}

#[test]
fn verify_passes_with_exit_code_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = meshwalk(&["verify", "--out", dir.path().to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(!stdout.contains("FAIL"));
    assert!(dir.path().join("verify.csv").exists());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn missing_or_invalid_configuration_exits_with_one() {
    assert_eq!(meshwalk(&["bands"]).status.code(), Some(1));
    assert_eq!(meshwalk(&["bands", "--preset", "no-such-preset"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = preset("fig2a").unwrap().to_toml().replace("[run]", "[run]\nstepz = 3");
    std::fs::write(&cfg, text).unwrap();
    let out = meshwalk(&["evolve", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));
}

#[test]
fn dfs_reports_the_decoherence_free_momentum() {
    let dir = tempfile::tempdir().unwrap();
    let out = meshwalk(&["dfs", "--preset", "fig3a", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("dfs.json")).unwrap()).unwrap();
    let m = &report["momenta"][0];
    assert!((m["k"].as_f64().unwrap() - std::f64::consts::PI).abs() < 1e-12);
    assert!(m["residual"].as_f64().unwrap() < 1e-12);
}

#[test]
fn rerun_from_manifest_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = meshwalk(&[
        "evolve", "--preset", "fig2b", "--steps", "20", "--realizations", "40", "--seed", "7",
        "--out", a.path().to_str().unwrap(),
    ]);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let manifest = a.path().join("manifest.json");
    let second = meshwalk(&[
        "evolve", "--config", manifest.to_str().unwrap(), "--threads", "2", "--out", b.path().to_str().unwrap(),
    ]);
    assert_eq!(second.status.code(), Some(0), "{}", String::from_utf8_lossy(&second.stderr));
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(fa.len() > 3);
    assert_eq!(fa.iter().map(|f| &f.0).collect::<Vec<_>>(), fb.iter().map(|f| &f.0).collect::<Vec<_>>());
    for ((name, x), (_, y)) in fa.iter().zip(&fb) {
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn edge_command_writes_return_probability() {
    let dir = tempfile::tempdir().unwrap();
    let out = meshwalk(&["edge", "--preset", "fig4", "--steps", "60", "--realizations", "50", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("return_probability.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let header = rows.headers().unwrap().clone();
    let col = header.iter().position(|h| h.contains("strobo") && h.contains("master")).expect("master column");
    let first: f64 = rows.records().next().unwrap().unwrap()[col].parse().unwrap();
    assert!((first - 1.0).abs() < 1e-12);
}
