use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lrcvt_core::grid::{Dims, VoxelGrid};
use lrcvt_core::volume::write_volume;
use serde_json::Value;

fn lrcvt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrcvt")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = lrcvt(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesizes and tessellates a horseshoe; returns (volume, tessellation, trace csv).
fn horseshoe(dir: &Path, extra: &[&str]) -> (PathBuf, PathBuf, String) {
    let vol = dir.join("h.json");
    let tess = dir.join("h.tess.json");
    let synth = ok(&["synth", "--kind", "horseshoe", "--dims", "64,64,1", "--seed", "0", "-o", s(&vol)]);
    let iso: Value = serde_json::from_str(&synth).unwrap();
    let iso: Vec<String> = iso["suggested_iso"].as_array().unwrap().iter().map(|v| v.to_string()).collect();
    let iso = iso.join(",");
    let mut args = vec!["tessellate", "--volume", s(&vol), "--iso", &iso, "--alpha", "40", "--seed", "0", "-o", s(&tess)];
    args.extend_from_slice(extra);
    let csv = ok(&args);
    (vol, tess, csv)
}

#[test]
fn tessellate_prints_trace_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (_, tess, csv) = horseshoe(dir.path(), &[]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("update,mean_ds"));
    let trace: Vec<f64> = lines
        .enumerate()
        .map(|(i, l)| {
            let (u, d) = l.split_once(',').unwrap();
            assert_eq!(u.parse::<usize>().unwrap(), i + 1);
            d.parse().unwrap()
        })
        .collect();
    assert!(!trace.is_empty());
    let rises = trace.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises <= 2, "{trace:?}");
    assert!(trace.last().unwrap() < &0.25 && trace[0] > *trace.last().unwrap(), "{trace:?}");
    let file: Value = serde_json::from_str(&std::fs::read_to_string(tess).unwrap()).unwrap();
    assert_eq!(file["trace"].as_array().unwrap().len(), trace.len());
}

#[test]
fn export_inspect_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (vol, tess, _) = horseshoe(dir.path(), &[]);
    let layout = dir.path().join("h.lrcvt");
    let common = ["--volume", s(&vol), "--tessellation", s(&tess)];
    let summary: Value = serde_json::from_str(&ok(&[&["export"][..], &common, &["--x", "f", "--y", "w", "-o", s(&layout)]].concat())).unwrap();
    assert!(summary["bytes"].as_u64().unwrap() > 0);
    assert!(layout.with_extension("lrcvt.json").exists());

    let info: Value = serde_json::from_str(&ok(&["inspect", s(&layout)])).unwrap();
    let comps = info["components"].as_array().unwrap();
    assert!(!comps.is_empty());
    let loaded: Value = serde_json::from_str(&ok(&["load", s(&layout), "--component", "0"])).unwrap();
    assert_eq!(loaded["records"], comps[0]["voxel_count"]);
    let csv = ok(&["load", s(&layout), "--component", "0", "--csv"]);
    assert_eq!(csv.lines().next(), Some("x,y,z,f,w,q"));
    assert_eq!(csv.lines().count() as u64, comps[0]["voxel_count"].as_u64().unwrap() + 1);

    let agg: Value = serde_json::from_str(&ok(&[&["aggregate"][..], &common, &["--x", "f", "--y", "w"]].concat())).unwrap();
    assert_eq!(agg["components"].as_array().unwrap().len(), comps.len());

    let out = lrcvt(&["load", s(&layout), "--component", "9999"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validate_convex_box_against_euclidean() {
    let dir = tempfile::tempdir().unwrap();
    let dims = Dims::new(20, 14, 6);
    let values = (0..dims.len()).map(|v| if dims.coords(v)[0] < 18 { 1.0 } else { 3.0 }).collect();
    let grid = VoxelGrid::new(dims, [1.0; 3]).unwrap().with_field("f", values).unwrap();
    let vol = dir.path().join("box.json");
    write_volume(&grid, &vol).unwrap();
    let tess = dir.path().join("box.tess.json");
    ok(&["tessellate", "--volume", s(&vol), "--iso", "0.5,1.5", "--alpha", "25", "--seed", "3", "-o", s(&tess)]);
    let report: Value = serde_json::from_str(&ok(&["validate", "--volume", s(&vol), "--tessellation", s(&tess), "--against", "euclidean"])).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["report"]["agreement"], 1.0);
}

#[test]
fn validate_horseshoe_against_dijkstra() {
    let dir = tempfile::tempdir().unwrap();
    let (vol, tess, _) = horseshoe(dir.path(), &[]);
    let out = ok(&["validate", "--volume", s(&vol), "--tessellation", s(&tess), "--against", "dijkstra"]);
    let report: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["passed"], true);
    // An impossible agreement bar fails with exit 1.
    let out = lrcvt(&["validate", "--volume", s(&vol), "--tessellation", s(&tess), "--against", "dijkstra", "--min-agreement", "1.01"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_and_data_errors() {
    assert_eq!(lrcvt(&["synth", "--kind", "horseshoe", "--bogus"]).status.code(), Some(2));
    assert_eq!(lrcvt(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(lrcvt(&["synth", "--kind", "horseshoe", "--dims", "1,2", "-o", "x.json"]).status.code(), Some(2));
    let out = lrcvt(&["inspect", "/definitely/missing.lrcvt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let vol = dir.path().join("h.json");
    ok(&["synth", "--kind", "horseshoe", "--dims", "48,48,1", "-o", s(&vol)]);
    let cfg = dir.path().join("cfg.json");
    let tess = dir.path().join("t.json");
    let config = serde_json::json!({ "volume": vol, "iso": [0.5, 1.5], "alpha": 12, "max_updates": 3, "output": tess });
    std::fs::write(&cfg, config.to_string()).unwrap();
    ok(&["tessellate", "--config", s(&cfg)]);
    let file: Value = serde_json::from_str(&std::fs::read_to_string(&tess).unwrap()).unwrap();
    assert_eq!(file["params"]["seeding"]["alpha"], 12.0);
    assert!(file["trace"].as_array().unwrap().len() <= 3);
    std::fs::write(&cfg, r#"{"nonsense_flag": 1}"#).unwrap();
    assert_eq!(lrcvt(&["tessellate", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let vol = dir.path().join("h.json");
    let iso = "0.5,1.5";
    ok(&["synth", "--kind", "horseshoe", "--dims", "64,64,1", "-o", s(&vol)]);
    let mut files = Vec::new();
    for threads in ["1", "3"] {
        let tess = dir.path().join(format!("t{threads}.json"));
        let layout = dir.path().join(format!("l{threads}.lrcvt"));
        let proj = dir.path().join(format!("p{threads}.json"));
        let trace = ok(&["--threads", threads, "tessellate", "--volume", s(&vol), "--iso", iso, "--alpha", "30", "-o", s(&tess)]);
        let common = ["--volume", s(&vol), "--tessellation", s(&tess)];
        ok(&[&["--threads", threads, "export"][..], &common, &["--x", "f", "--y", "w", "-o", s(&layout)]].concat());
        ok(&[&["--threads", threads, "project"][..], &common, &["--level", "region", "-o", s(&proj)]].concat());
        files.push([trace.into_bytes(), std::fs::read(&tess).unwrap(), std::fs::read(&layout).unwrap(), std::fs::read(&proj).unwrap()]);
    }
    assert!(files[0] == files[1]);
    let proj: Value = serde_json::from_slice(&files[0][3]).unwrap();
    assert_eq!(proj["method"], "mds");
    assert!(!proj["items"].as_array().unwrap().is_empty());
}
