mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::fixture;

fn ezquant(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ezquant"))
        .args(args)
        .env_remove("EZQUANT_WORKERS")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_and_usage_codes() {
    assert_eq!(ezquant(&["--help"]).status.code(), Some(0));
    assert_eq!(ezquant(&["--version"]).status.code(), Some(0));
    assert_eq!(ezquant(&["quantize", "--bogus"]).status.code(), Some(64));
    assert_eq!(ezquant(&[]).status.code(), Some(64));
    assert_eq!(
        ezquant(&["inspect", "--in", "/no/such/dir/x.ezqt"])
            .status
            .code(),
        Some(66)
    );
}

#[test]
fn golden_quantize_reproduces_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("q");
    let o = ezquant(&[
        "quantize",
        "--manifest",
        p(&fixture("golden/input/manifest.json")),
        "--out",
        p(&out),
        "--sigma",
        "1",
        "--workers",
        "1",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(
        std::fs::read(out.join("0000_w.ezqt")).unwrap(),
        std::fs::read(fixture("golden/expected/0000_w.ezqt")).unwrap()
    );
    let read = |p: &Path| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
    };
    assert_eq!(
        read(&out.join("quantized_manifest.json")),
        read(&fixture("golden/expected/quantized_manifest.json"))
    );
}

#[test]
fn inspect_json_on_golden_fixture() {
    let o = ezquant(&["inspect", "--in", p(&fixture("golden/expected")), "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["version"], 1);
    let t = &v["tensors"][0];
    assert_eq!(t["name"], "w");
    assert_eq!(t["rows"], 1);
    assert_eq!(t["cols"], 2);
    assert_eq!(t["kind"], "quantized");
    assert_eq!(t["outlier_count"], 2);
    assert_eq!(t["outlier_fraction"], 1.0);
    assert_eq!(t["rtn_error"], 0.0);
    assert_eq!(t["final_error"], 0.0);
    assert_eq!(v["totals"]["tensors"], 1);
    assert!(v["groupings"].is_array());

    let o = ezquant(&[
        "inspect",
        "--in",
        p(&fixture("golden/expected/0000_w.ezqt")),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("0000_w"));
}

#[test]
fn missing_tensor_gives_partial_exit() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    let o = ezquant(&[
        "synth",
        "--out",
        p(&src),
        "--tensors",
        "3",
        "--rows",
        "16",
        "--cols",
        "8",
    ]);
    assert_eq!(o.status.code(), Some(0));
    std::fs::remove_file(src.join("t001.f32")).unwrap();
    let out = dir.path().join("q");
    let o = ezquant(&[
        "quantize",
        "--manifest",
        p(&src.join("manifest.json")),
        "--out",
        p(&out),
        "--steps",
        "10",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("quantized_manifest.json").exists());
    assert!(out.join("0000_h.0.attn.qkv.weight.ezqt").exists());
}

#[test]
fn quantize_dequantize_inspect_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    let q = dir.path().join("q");
    let d = dir.path().join("d");
    assert!(ezquant(&[
        "synth",
        "--out",
        p(&src),
        "--tensors",
        "4",
        "--rows",
        "32",
        "--cols",
        "16",
        "--bias-every",
        "4"
    ])
    .status
    .success());
    let o = ezquant(&[
        "quantize",
        "--manifest",
        p(&src.join("manifest.json")),
        "--out",
        p(&q),
        "--mode",
        "outliers-only",
        "--workers",
        "2",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(ezquant(&["dequantize", "--in", p(&q), "--out", p(&d)])
        .status
        .success());
    assert!(d.join("manifest.json").exists());
    let o = ezquant(&["inspect", "--in", p(&q), "--group", r"^h\.(\d+)"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("by role:"), "{text}");
    assert!(text.contains("passthrough"));
    let o = ezquant(&[
        "quantize",
        "--manifest",
        p(&src.join("manifest.json")),
        "--out",
        p(&q),
        "--bits",
        "12",
    ]);
    assert_eq!(o.status.code(), Some(64));
}

#[test]
fn gradcheck_and_bench_commands() {
    let o = ezquant(&["gradcheck", "--trials", "100", "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("100/100"));
    let o = ezquant(&[
        "bench",
        "--rows",
        "64",
        "--cols",
        "64",
        "--ratios",
        "0,0.01,0.1",
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["results"].as_array().unwrap().len(), 3);
    assert_eq!(
        ezquant(&["bench", "--rows", "4", "--cols", "4", "--ratios", "2"])
            .status
            .code(),
        Some(64)
    );
}

#[test]
fn sweep_command() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ezquant(&[
        "synth",
        "--out",
        p(dir.path()),
        "--tensors",
        "1",
        "--rows",
        "400",
        "--cols",
        "250",
        "--outlier-fraction",
        "0"
    ])
    .status
    .success());
    let o = ezquant(&[
        "sweep",
        "--manifest",
        p(&dir.path().join("manifest.json")),
        "--sigma-list",
        "1,2,4",
        "--steps",
        "0",
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let f1 = v[0]["outlier_fraction"].as_f64().unwrap();
    let f2 = v[1]["outlier_fraction"].as_f64().unwrap();
    assert!((f1 - 0.3173).abs() / 0.3173 < 0.15, "{f1}");
    assert!((f2 - 0.0455).abs() / 0.0455 < 0.15, "{f2}");
}
